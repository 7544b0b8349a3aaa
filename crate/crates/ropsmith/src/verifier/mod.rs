//! Formal checking of typed claims: a claim's postcondition B is encoded over
//! the gadget's SSA formulas and the oracle is asked for satisfiability of
//! its negation. Unsat proves the claim for all inputs; a model is a
//! counterexample, which is always replayed concretely before we trust it.

mod smtlib;
mod symexec;

use std::collections::HashMap;

pub use smtlib::{render_script, SmtProcessOracle};
pub use symexec::{symexec_gadget, symexec_seq, SymExec, SymExecError, SymState};

use crate::binfront::{OpWidth, StopKind};
use crate::gadgetscan::Gadget;
use crate::regs::{Flag, Reg, NUM_REGS};
use crate::semantics::{
    claim_holds, interpret, splitmix64, ArithSrc, GadgetClass, MachineState, PivotKind, RunObs,
    TypedClaim,
};
use crate::sym::TermId;

/// What a backend is able to conclude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    /// Decides satisfiability: unsat answers prove claims.
    CanProve,
    /// Only ever finds models (or gives up); unsat is out of reach.
    RefuteOnly,
}

/// A concrete initial state falsifying a claim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub regs: [u64; NUM_REGS],
    pub cf: bool,
    /// Explicit memory bytes; everything else draws from `mem_seed`.
    pub mem: HashMap<u64, u8>,
    pub mem_seed: u64,
}

#[derive(Debug, Clone)]
pub enum SatResult {
    Unsat,
    Sat(Counterexample),
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClaimVerdict {
    Verified,
    Refuted(Counterexample),
    Unknown(String),
}

pub trait SatOracle {
    fn capability(&self) -> Capability;
    /// Satisfiability of (gadget formulas ∧ query), where `query` is the
    /// negated postcondition.
    fn check(&mut self, sym: &SymExec, query: TermId) -> SatResult;

    /// Check several queries over the same formulas. Sampling backends
    /// amortize the shared evaluation; the default is a sequential loop.
    fn check_batch(&mut self, sym: &SymExec, queries: &[TermId]) -> Vec<SatResult> {
        queries.iter().map(|q| self.check(sym, *q)).collect()
    }
}

fn alu_term(
    sym: &mut SymExec,
    op: crate::semantics::AluOp,
    a: TermId,
    b: TermId,
    w: OpWidth,
) -> TermId {
    use crate::semantics::AluOp::*;
    let ar = &mut sym.arena;
    match op {
        Add => ar.add(a, b),
        Sub => ar.sub(a, b),
        And => ar.bvand(a, b),
        Or => ar.bvor(a, b),
        Xor => ar.bvxor(a, b),
        Shl | Shr | Sar => {
            let mask = ar.bv(w.bits(), (w.bits() - 1) as u64);
            let cnt = ar.bvand(b, mask);
            match op {
                Shl => ar.shl(a, cnt),
                Shr => ar.lshr(a, cnt),
                Sar => ar.ashr(a, cnt),
                _ => unreachable!(),
            }
        }
    }
}

fn reg_at_width(sym: &mut SymExec, state_regs: &[TermId; NUM_REGS], r: Reg, w: OpWidth) -> TermId {
    let full = state_regs[r.index()];
    match w {
        OpWidth::W64 => full,
        OpWidth::W32 => sym.arena.extract(31, 0, full),
    }
}

/// Build the postcondition B a claim asserts over initial and final states.
pub fn claim_postcondition(sym: &mut SymExec, class: &GadgetClass, width: OpWidth) -> TermId {
    let init_regs = sym.init.regs;
    let fin_regs = sym.fin.regs;
    let init_mem = sym.init.mem;
    let fin_mem = sym.fin.mem;
    let w = width;

    let mem_at = |sym: &mut SymExec, mem: TermId, areg: Reg, disp: i64, w: OpWidth| {
        let base = init_regs[areg.index()];
        let d = sym.arena.bv(64, disp as u64);
        let addr = sym.arena.add(base, d);
        sym.arena.select_le(mem, addr, w.bytes())
    };

    match class {
        GadgetClass::LoadConst { reg, offset } => {
            let rsp0 = init_regs[Reg::Rsp.index()];
            let off = sym.arena.bv(64, *offset);
            let addr = sym.arena.add(rsp0, off);
            let slot = sym.arena.select_le(init_mem, addr, 8);
            let fin = fin_regs[reg.index()];
            sym.arena.eq(fin, slot)
        }
        GadgetClass::MovImm { reg, value } => {
            let c = sym.arena.bv(64, *value & w.mask());
            let fin = fin_regs[reg.index()];
            sym.arena.eq(fin, c)
        }
        GadgetClass::MoveReg { dst, src } => {
            let s = reg_at_width(sym, &init_regs, *src, w);
            let s64 = sym.arena.zext_to_64(s);
            let fin = fin_regs[dst.index()];
            sym.arena.eq(fin, s64)
        }
        GadgetClass::Arithmetic { dst, src1, op, src2 } => {
            let a = reg_at_width(sym, &init_regs, *src1, w);
            let b = match src2 {
                ArithSrc::Reg(r) => reg_at_width(sym, &init_regs, *r, w),
                ArithSrc::Imm(v) => sym.arena.bv(w.bits(), *v),
            };
            let expr = alu_term(sym, *op, a, b, w);
            let e64 = sym.arena.zext_to_64(expr);
            let fin = fin_regs[dst.index()];
            sym.arena.eq(fin, e64)
        }
        GadgetClass::LoadMem { dst, addr_reg, disp } => {
            let loaded = mem_at(sym, init_mem, *addr_reg, *disp, w);
            let l64 = sym.arena.zext_to_64(loaded);
            let fin = fin_regs[dst.index()];
            sym.arena.eq(fin, l64)
        }
        GadgetClass::StoreMem { addr_reg, disp, src } => {
            let stored = mem_at(sym, fin_mem, *addr_reg, *disp, w);
            let s = reg_at_width(sym, &init_regs, *src, w);
            sym.arena.eq(stored, s)
        }
        GadgetClass::StoreConst { addr_reg, disp, value } => {
            let stored = mem_at(sym, fin_mem, *addr_reg, *disp, w);
            let c = sym.arena.bv(w.bits(), *value);
            sym.arena.eq(stored, c)
        }
        GadgetClass::ArithmeticLoad { dst, op, addr_reg, disp } => {
            let a = reg_at_width(sym, &init_regs, *dst, w);
            let loaded = mem_at(sym, init_mem, *addr_reg, *disp, w);
            let expr = alu_term(sym, *op, a, loaded, w);
            let e64 = sym.arena.zext_to_64(expr);
            let fin = fin_regs[dst.index()];
            sym.arena.eq(fin, e64)
        }
        GadgetClass::ArithmeticStore { addr_reg, disp, op, src } => {
            let before = mem_at(sym, init_mem, *addr_reg, *disp, w);
            let s = reg_at_width(sym, &init_regs, *src, w);
            let expr = alu_term(sym, *op, before, s, w);
            let after = mem_at(sym, fin_mem, *addr_reg, *disp, w);
            sym.arena.eq(after, expr)
        }
        GadgetClass::Syscall => sym.arena.bool_const(true),
        GadgetClass::StackPivot { kind } => {
            let fin = fin_regs[Reg::Rsp.index()];
            match kind {
                PivotKind::RegPlusConst(r, c) => {
                    let base = init_regs[r.index()];
                    let c = sym.arena.bv(64, *c as u64);
                    let expr = sym.arena.add(base, c);
                    sym.arena.eq(fin, expr)
                }
                PivotKind::SlotPlusConst(off, c) => {
                    let rsp0 = init_regs[Reg::Rsp.index()];
                    let off = sym.arena.bv(64, *off);
                    let addr = sym.arena.add(rsp0, off);
                    let slot = sym.arena.select_le(init_mem, addr, 8);
                    let c = sym.arena.bv(64, *c as u64);
                    let expr = sym.arena.add(slot, c);
                    sym.arena.eq(fin, expr)
                }
            }
        }
        GadgetClass::NoOp => {
            let mut parts = Vec::new();
            for r in Reg::ALL {
                if r == Reg::Rsp {
                    continue;
                }
                let e = sym.arena.eq(fin_regs[r.index()], init_regs[r.index()]);
                parts.push(e);
            }
            if fin_mem != init_mem {
                let e = sym.arena.eq(fin_mem, init_mem);
                parts.push(e);
            }
            sym.arena.conj(&parts)
        }
    }
}

/// Built-in refute-only oracle: evaluates the formulas under random
/// assignments plus the two boundary states. Register samples mix full-range
/// randoms with boundary-flavored values (0, -1, small magnitudes) so that
/// conditional behavior near zero is exercised.
pub struct BuiltinOracle {
    pub samples: usize,
    pub seed: u64,
}

impl Default for BuiltinOracle {
    fn default() -> Self {
        BuiltinOracle {
            samples: 4096,
            seed: 0x05A7_0001,
        }
    }
}

enum SamplePlan {
    Mixed(u64),
    AllZero,
    AllOnes,
}

impl BuiltinOracle {
    fn sample_regs(&self, plan: &SamplePlan) -> ([u64; NUM_REGS], bool, u64) {
        match plan {
            SamplePlan::AllZero => ([0; NUM_REGS], false, splitmix64(self.seed ^ 0xB0D0)),
            SamplePlan::AllOnes => ([u64::MAX; NUM_REGS], true, splitmix64(self.seed ^ 0xB0D1)),
            SamplePlan::Mixed(i) => {
                let mut regs = [0u64; NUM_REGS];
                let base = splitmix64(self.seed.wrapping_add(i.wrapping_mul(0x9E37)));
                for (k, slot) in regs.iter_mut().enumerate() {
                    let sel = splitmix64(base ^ (k as u64) << 8);
                    *slot = match sel & 7 {
                        0 => 0,
                        1 => u64::MAX,
                        2 => (sel >> 8) & 0x3F,
                        3 => ((sel >> 8) & 0x3F).wrapping_neg(),
                        _ => splitmix64(sel),
                    };
                }
                let cf = splitmix64(base ^ 0xCF) & 1 == 1;
                (regs, cf, splitmix64(base ^ 0x4D45))
            }
        }
    }
}

impl SatOracle for BuiltinOracle {
    fn capability(&self) -> Capability {
        Capability::RefuteOnly
    }

    fn check(&mut self, sym: &SymExec, query: TermId) -> SatResult {
        self.check_batch(sym, &[query]).pop().expect("one result")
    }

    /// One evaluation pass per sample covers every query: the shared SSA
    /// definitions dominate the cost and are computed once.
    fn check_batch(&mut self, sym: &SymExec, queries: &[TermId]) -> Vec<SatResult> {
        let mut results: Vec<Option<SatResult>> = vec![None; queries.len()];
        let mut open = queries.len();
        let mut plans: Vec<SamplePlan> = vec![SamplePlan::AllZero, SamplePlan::AllOnes];
        plans.extend((0..self.samples as u64).map(SamplePlan::Mixed));
        let defs: HashMap<u32, TermId> = sym.formulas.iter().copied().collect();
        for plan in &plans {
            if open == 0 {
                break;
            }
            let (regs, cf, mem_seed) = self.sample_regs(plan);
            let mem_fn = move |_var: u32, addr: u64| crate::semantics::mem_draw_for(mem_seed, addr);
            let mut free = crate::sym::FreeVars::new(&mem_fn);
            for r in Reg::ALL {
                free.bv.insert(sym.reg_vars[r.index()], regs[r.index()]);
            }
            if let Some(cfv) = sym.cf_var {
                free.bools.insert(cfv, cf);
            }
            let values = crate::sym::eval_all(&sym.arena, &defs, &free);
            for (i, q) in queries.iter().enumerate() {
                if results[i].is_some() {
                    continue;
                }
                if values[q.0 as usize].as_ref().map(|v| v.as_bool()).unwrap_or(false) {
                    results[i] = Some(SatResult::Sat(Counterexample {
                        regs,
                        cf,
                        mem: HashMap::new(),
                        mem_seed,
                    }));
                    open -= 1;
                }
            }
        }
        results
            .into_iter()
            .map(|r| r.unwrap_or_else(|| SatResult::Unknown("refute-only oracle exhausted its samples".into())))
            .collect()
    }
}

/// Replay a counterexample through the concrete interpreter and report the
/// observed run.
pub fn replay(g: &Gadget, cex: &Counterexample) -> RunObs {
    let mut st = MachineState::with_seed(cex.mem_seed);
    for r in Reg::ALL {
        st.set_reg(r, cex.regs[r.index()]);
    }
    st.set_flag(Flag::Cf, cex.cf);
    for (addr, byte) in &cex.mem {
        // plant solver-chosen bytes without marking them as program stores
        st.plant_byte(*addr, *byte);
    }
    let init_regs = st.snapshot_regs();
    let init_flags = st.snapshot_flags();
    let mut fin = interpret(&g.instrs, st).expect("gadget must interpret");
    RunObs {
        seed: cex.mem_seed,
        init_regs,
        init_flags,
        final_regs: fin.snapshot_regs(),
        final_rip: fin.rip(),
        reads: fin.reads_log.clone(),
        writes: fin.writes_log.clone(),
        stores: fin.stores().clone(),
        terminator: g.terminator(),
        m0_overrides: cex.mem.clone(),
    }
}

/// Check one claim against one gadget with the given oracle.
pub fn check_claim(g: &Gadget, claim: &TypedClaim, oracle: &mut dyn SatOracle) -> ClaimVerdict {
    // Syscall claims are structural: the terminator either is or is not a
    // syscall; there is nothing to solve.
    if claim.class == GadgetClass::Syscall {
        return if g.terminator() == StopKind::Syscall {
            ClaimVerdict::Verified
        } else {
            ClaimVerdict::Refuted(Counterexample {
                regs: [0; NUM_REGS],
                cf: false,
                mem: HashMap::new(),
                mem_seed: 0,
            })
        };
    }

    let mut sym = match symexec_gadget(g) {
        Ok(s) => s,
        Err(e) => return ClaimVerdict::Unknown(format!("symbolic execution failed: {e}")),
    };
    let post = claim_postcondition(&mut sym, &claim.class, claim.width);
    let query = sym.arena.not(post);

    match oracle.check(&sym, query) {
        SatResult::Unsat => {
            if oracle.capability() == Capability::CanProve {
                ClaimVerdict::Verified
            } else {
                ClaimVerdict::Unknown("refute-only oracle cannot prove".into())
            }
        }
        SatResult::Sat(cex) => {
            let obs = replay(g, &cex);
            if claim_holds(&claim.class, claim.width, &obs) {
                ClaimVerdict::Unknown(
                    "model failed concrete replay; treating the claim as undecided".into(),
                )
            } else {
                ClaimVerdict::Refuted(cex)
            }
        }
        SatResult::Unknown(why) => ClaimVerdict::Unknown(why),
    }
}

/// Verify all claims of a gadget, updating their status in place. The
/// gadget is symbolically executed once; all postconditions are checked in
/// one oracle batch.
pub fn verify_claims(g: &Gadget, claims: &mut [TypedClaim], oracle: &mut dyn SatOracle) {
    use crate::semantics::Verification;
    if claims.is_empty() {
        return;
    }
    let Ok(mut sym) = symexec_gadget(g) else {
        return;
    };
    let mut queries = Vec::new();
    let mut query_of_claim: Vec<Option<usize>> = Vec::new();
    for claim in claims.iter() {
        if claim.class == GadgetClass::Syscall {
            query_of_claim.push(None);
            continue;
        }
        let post = claim_postcondition(&mut sym, &claim.class, claim.width);
        queries.push(sym.arena.not(post));
        query_of_claim.push(Some(queries.len() - 1));
    }
    let results = oracle.check_batch(&sym, &queries);
    let can_prove = oracle.capability() == Capability::CanProve;
    for (claim, qi) in claims.iter_mut().zip(query_of_claim) {
        claim.verified = match qi {
            None => {
                // structural: the terminator either is a syscall or is not
                if g.terminator() == StopKind::Syscall {
                    Verification::Verified
                } else {
                    Verification::Refuted
                }
            }
            Some(qi) => match &results[qi] {
                SatResult::Unsat if can_prove => Verification::Verified,
                SatResult::Unsat => Verification::Unchecked,
                SatResult::Sat(cex) => {
                    // trust no model without a concrete replay
                    let obs = replay(g, cex);
                    if claim_holds(&claim.class, claim.width, &obs) {
                        Verification::Unchecked
                    } else {
                        Verification::Refuted
                    }
                }
                SatResult::Unknown(_) => Verification::Unchecked,
            },
        };
    }
}
