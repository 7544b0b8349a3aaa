//! Gadget summaries: compact pre/postcondition specifications.
//!
//! The summary is the gadget's symbolic forward pass with all assignments
//! advanced into final expressions: every register's final value as a term
//! over initial registers, stack slots, and loaded memory, plus the list of
//! memory writes and the dereference ranges that must be readable or
//! writable before the gadget can run.

use std::collections::HashMap;

use thiserror::Error;

use crate::binfront::{MemRef, Mnemonic, Operand};
use crate::gadgetscan::Gadget;
use crate::regs::{Reg, NUM_REGS};
use crate::sym::{Arena, Node, TermId};
use crate::verifier::{symexec_gadget, SymExec, SymExecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SummaryError {
    #[error("unsupported instruction")]
    UnsupportedInstr,
}

impl From<SymExecError> for SummaryError {
    fn from(_: SymExecError) -> SummaryError {
        SummaryError::UnsupportedInstr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

/// A dereference the gadget performs through a register: the range
/// [reg + disp, reg + disp + width) must be mapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Precondition {
    pub reg: Reg,
    pub disp: i64,
    pub width: u64,
    pub access: Access,
}

/// Final machine state as expressions over the initial one.
#[derive(Debug, Clone)]
pub struct GadgetSummary {
    pub arena: Arena,
    /// Final value of every register, fully advanced.
    pub post: [TermId; NUM_REGS],
    pub final_rip: TermId,
    /// (address expression, value expression) per 8-or-4-byte store.
    pub mem_writes: Vec<(TermId, TermId)>,
    /// Final memory array term (store chain over the initial array).
    pub final_mem: TermId,
    pub preconds: Vec<Precondition>,
    /// Variable indices of the initial registers and memory, for composition.
    pub reg_vars: [u32; NUM_REGS],
    pub mem_var: u32,
    pub cf_var: Option<u32>,
}

/// Advance all SSA definitions so each final register is one closed
/// expression over the initial state.
fn advance(sym: &SymExec) -> (Arena, HashMap<u32, TermId>) {
    let mut arena = sym.arena.clone();
    let mut resolved: HashMap<u32, TermId> = HashMap::new();
    for (var_idx, def) in &sym.formulas {
        let advanced = arena.substitute(*def, &resolved);
        resolved.insert(*var_idx, advanced);
    }
    (arena, resolved)
}

pub fn summarize(g: &Gadget) -> Result<GadgetSummary, SummaryError> {
    let sym = symexec_gadget(g)?;
    let (mut arena, resolved) = advance(&sym);

    let deref = |t: TermId, map: &HashMap<u32, TermId>, arena: &mut Arena| -> TermId {
        if let Node::Var(i) = arena.node(t) {
            if let Some(r) = map.get(&i) {
                return *r;
            }
        }
        arena.substitute(t, map)
    };

    let mut post = [TermId(0); NUM_REGS];
    for r in Reg::ALL {
        post[r.index()] = deref(sym.fin.regs[r.index()], &resolved, &mut arena);
    }
    let final_rip = deref(sym.fin.rip, &resolved, &mut arena);
    let final_mem = deref(sym.fin.mem, &resolved, &mut arena);

    // Collect the store chain as (address, value-byte) pairs grouped back
    // into word writes where adjacent.
    let mem_writes = collect_writes(&arena, final_mem);

    let preconds = collect_preconds(g);

    Ok(GadgetSummary {
        arena,
        post,
        final_rip,
        mem_writes,
        final_mem,
        preconds,
        reg_vars: sym.reg_vars,
        mem_var: sym.mem_var,
        cf_var: sym.cf_var,
    })
}

/// Walk a store chain down to the base array, returning (index, byte value)
/// pairs oldest-first.
fn collect_writes(arena: &Arena, mut mem: TermId) -> Vec<(TermId, TermId)> {
    let mut writes = Vec::new();
    while let Node::Store { arr, idx, val } = arena.node(mem) {
        writes.push((idx, val));
        mem = arr;
    }
    writes.reverse();
    writes
}

/// Dereference preconditions straight off the instruction operands; stack
/// accesses through rsp are frame mechanics, not preconditions.
fn collect_preconds(g: &Gadget) -> Vec<Precondition> {
    let mut out = Vec::new();
    let mut note = |m: &MemRef, width: u64, access: Access| {
        if m.base == Reg::Rsp {
            return;
        }
        out.push(Precondition {
            reg: m.base,
            disp: m.disp,
            width,
            access,
        });
    };
    for instr in g.instrs.iter() {
        let w = instr.width.bytes();
        match instr.mnemonic {
            Mnemonic::Lea | Mnemonic::Nop => continue,
            Mnemonic::Jmp | Mnemonic::Call => {
                if let Some(Operand::Mem(m)) = instr.operands.first() {
                    note(m, 8, Access::Read);
                }
            }
            Mnemonic::Leave => note(
                &MemRef { base: Reg::Rbp, index: None, disp: 0 },
                8,
                Access::Read,
            ),
            Mnemonic::Mov => {
                if let Some(Operand::Mem(m)) = instr.operands.first() {
                    note(m, w, Access::Write);
                }
                if let Some(Operand::Mem(m)) = instr.operands.get(1) {
                    note(m, w, Access::Read);
                }
            }
            _ => {
                // read-modify-write for arithmetic on memory destinations
                if let Some(Operand::Mem(m)) = instr.operands.first() {
                    note(m, w, Access::Read);
                    note(m, w, Access::Write);
                }
                if let Some(Operand::Mem(m)) = instr.operands.get(1) {
                    note(m, w, Access::Read);
                }
            }
        }
    }
    out
}
