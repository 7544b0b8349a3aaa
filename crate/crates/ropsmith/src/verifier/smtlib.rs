//! SMT-LIB v2 emission and the external-solver process oracle.
//!
//! One QF_ABV script per claim: a declare-const for every symbolic variable,
//! an assert per SSA formula, the negated postcondition, then check-sat.
//! Models are pulled back with get-value and replayed concretely before a
//! refutation is reported.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use super::{Capability, Counterexample, SatOracle, SatResult, SymExec};
use crate::regs::Reg;
use crate::sym::{Node, Sort, TermId};

fn sort_sexpr(sort: Sort) -> String {
    match sort {
        Sort::Bool => "Bool".into(),
        Sort::Bv(w) => format!("(_ BitVec {w})"),
        Sort::Array => "(Array (_ BitVec 64) (_ BitVec 8))".into(),
    }
}

/// Render the full checking script for (formulas ∧ query).
pub fn render_script(sym: &SymExec, query: TermId, get_values: bool) -> String {
    let mut out = String::new();
    if get_values {
        out.push_str("(set-option :produce-models true)\n");
    }
    out.push_str("(set-logic QF_ABV)\n");
    for var in sym.arena.vars() {
        out.push_str(&format!("(declare-const {} {})\n", var.name, sort_sexpr(var.sort)));
    }
    for (var_idx, def) in &sym.formulas {
        let name = &sym.arena.var_info(*var_idx).name;
        out.push_str(&format!("(assert (= {} {}))\n", name, sym.arena.smt2(*def)));
    }
    out.push_str(&format!("(assert {})\n", sym.arena.smt2(query)));
    out.push_str("(check-sat)\n");
    if get_values {
        for r in Reg::ALL {
            let name = &sym.arena.var_info(sym.reg_vars[r.index()]).name;
            out.push_str(&format!("(get-value ({name}))\n"));
        }
        if let Some(cfv) = sym.cf_var {
            let name = &sym.arena.var_info(cfv).name;
            out.push_str(&format!("(get-value ({name}))\n"));
        }
        for idx in select_indices(sym, query) {
            // the address itself, then the byte stored there
            out.push_str(&format!("(get-value ({}))\n", sym.arena.smt2(idx)));
            out.push_str(&format!("(get-value ((select M {})))\n", sym.arena.smt2(idx)));
        }
    }
    out
}

/// All distinct select-index terms reachable from the formulas and the query.
/// Their model values pin down every byte the gadget can read.
pub(super) fn select_indices(sym: &SymExec, query: TermId) -> Vec<TermId> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<TermId> = sym.formulas.iter().map(|(_, t)| *t).collect();
    stack.push(query);
    let mut visited = BTreeSet::new();
    while let Some(t) = stack.pop() {
        if !visited.insert(t) {
            continue;
        }
        match sym.arena.node(t) {
            Node::Select { arr, idx } => {
                seen.insert(idx);
                stack.push(arr);
                stack.push(idx);
            }
            Node::Store { arr, idx, val } => {
                // stored positions matter too: a select may hit them
                seen.insert(idx);
                stack.push(arr);
                stack.push(idx);
                stack.push(val);
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::And(a, b)
            | Node::Or(a, b)
            | Node::Xor(a, b)
            | Node::Shl(a, b)
            | Node::Lshr(a, b)
            | Node::Ashr(a, b)
            | Node::Concat(a, b)
            | Node::Eq(a, b)
            | Node::BoolAnd(a, b)
            | Node::BoolOr(a, b) => {
                stack.push(a);
                stack.push(b);
            }
            Node::Neg(a) | Node::Not(a) | Node::Extract { arg: a, .. } => stack.push(a),
            Node::Ite { cond, then, otherwise } => {
                stack.push(cond);
                stack.push(then);
                stack.push(otherwise);
            }
            Node::Const { .. } | Node::BoolConst(_) | Node::Var(_) => {}
        }
    }
    seen.into_iter().collect()
}

/// Parse an SMT-LIB bitvector or boolean literal.
fn parse_value(tok: &str) -> Option<u64> {
    if let Some(hex) = tok.strip_prefix("#x") {
        return u64::from_str_radix(hex, 16).ok();
    }
    if let Some(bits) = tok.strip_prefix("#b") {
        return u64::from_str_radix(bits, 2).ok();
    }
    if let Some(rest) = tok.strip_prefix("bv") {
        return rest.parse().ok();
    }
    match tok {
        "true" => Some(1),
        "false" => Some(0),
        _ => None,
    }
}

/// Extract the value atoms from a sequence of get-value responses, in order.
/// Each response has the shape `((<term> <value>))`; the value is the last
/// atom of the group.
fn parse_get_values(text: &str, expected: usize) -> Option<Vec<u64>> {
    let mut values = Vec::new();
    let mut depth = 0usize;
    let mut group = String::new();
    for ch in text.chars() {
        if ch == '(' {
            depth += 1;
        }
        if depth > 0 {
            group.push(ch);
        }
        if ch == ')' {
            depth = depth.saturating_sub(1);
            if depth == 0 && !group.is_empty() {
                let cleaned = group.replace(['(', ')'], " ");
                let last = cleaned.split_whitespace().last()?.to_string();
                if let Some(v) = parse_value(&last) {
                    values.push(v);
                }
                group.clear();
            }
        }
    }
    if values.len() >= expected {
        values.truncate(expected);
        Some(values)
    } else {
        None
    }
}

/// Oracle backed by an external SMT solver process speaking SMT-LIB v2 on
/// stdin/stdout (z3 -in, cvc5 --lang=smt2, etc.). A fresh process serves each
/// check, so no session state leaks between claims.
pub struct SmtProcessOracle {
    pub path: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl SmtProcessOracle {
    pub fn new(path: impl Into<String>) -> SmtProcessOracle {
        let path = path.into();
        let args = if path.ends_with("z3") || path.contains("z3") {
            vec!["-smt2".into(), "-in".into()]
        } else {
            Vec::new()
        };
        SmtProcessOracle {
            path,
            args,
            timeout: Duration::from_secs(10),
        }
    }

    fn run_script(&self, script: &str) -> Result<String, String> {
        let mut child = Command::new(&self.path)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("failed to spawn solver {}: {e}", self.path))?;

        child
            .stdin
            .take()
            .ok_or("no stdin")?
            .write_all(script.as_bytes())
            .map_err(|e| format!("failed to write script: {e}"))?;

        let mut stdout = child.stdout.take().ok_or("no stdout")?;
        let (tx, rx) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout.read_to_string(&mut buf);
            let _ = tx.send(buf);
        });

        let out = match rx.recv_timeout(self.timeout) {
            Ok(buf) => buf,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                let _ = reader.join();
                return Err(format!("solver timed out after {:?}", self.timeout));
            }
        };
        let _ = child.wait();
        let _ = reader.join();
        Ok(out)
    }
}

impl SatOracle for SmtProcessOracle {
    fn capability(&self) -> Capability {
        Capability::CanProve
    }

    fn check(&mut self, sym: &SymExec, query: TermId) -> SatResult {
        let script = render_script(sym, query, true);
        let output = match self.run_script(&script) {
            Ok(o) => o,
            Err(e) => return SatResult::Unknown(format!("oracle failure: {e}")),
        };
        let verdict = output
            .lines()
            .map(str::trim)
            .find(|l| matches!(*l, "sat" | "unsat" | "unknown"));
        match verdict {
            Some("unsat") => SatResult::Unsat,
            Some("sat") => {
                let tail = match output.find("sat") {
                    Some(i) => &output[i + 3..],
                    None => "",
                };
                let selects = select_indices(sym, query);
                let expected = 16 + sym.cf_var.map(|_| 1).unwrap_or(0) + 2 * selects.len();
                let Some(values) = parse_get_values(tail, expected) else {
                    return SatResult::Unknown("could not parse solver model".into());
                };
                let mut regs = [0u64; 16];
                for r in Reg::ALL {
                    regs[r.index()] = values[r.index()];
                }
                let mut pos = 16;
                let cf = if sym.cf_var.is_some() {
                    pos += 1;
                    values[pos - 1] == 1
                } else {
                    false
                };
                // (address, byte) pairs evaluated by the solver under its
                // own model, so derived-variable indices are handled too.
                let mut mem = HashMap::new();
                for i in 0..selects.len() {
                    let addr = values[pos + 2 * i];
                    let byte = values[pos + 2 * i + 1] as u8;
                    mem.insert(addr, byte);
                }
                SatResult::Sat(Counterexample {
                    regs,
                    cf,
                    mem,
                    mem_seed: 0x5EED_FA11,
                })
            }
            other => SatResult::Unknown(format!("solver answered: {}", other.unwrap_or("<nothing>"))),
        }
    }
}
