//! Summary composition: execute a gadget sequence symbolically at the chain
//! level and decide which registers the stack controls.
//!
//! A register is controlled when its final expression is exactly one free
//! stack-slot word that no other register shares and no gadget consumed for
//! its own next-address load.

use std::collections::HashMap;

use crate::regs::{Reg, RegSet, NUM_REGS};
use crate::semantics::NextSource;
use crate::sym::{Arena, Node, Sort, TermId};

use super::{ChainError, CompileCtx};

/// Where each controlled register's word lives, as a byte offset from the
/// chain base (the stack address right after the hijacked return).
#[derive(Debug, Clone, Default)]
pub struct ControlledRegs {
    pub set: RegSet,
    pub slots: Vec<(Reg, u64)>,
}

impl ControlledRegs {
    pub fn slot_of(&self, r: Reg) -> Option<u64> {
        self.slots.iter().find(|(reg, _)| *reg == r).map(|(_, o)| *o)
    }
}

/// `term` as base-variable-plus-constant, if it has that shape.
fn affine(arena: &Arena, term: TermId) -> Option<(Option<u32>, u64)> {
    match arena.node(term) {
        Node::Const { bits: 64, value } => Some((None, value)),
        Node::Var(i) => Some((Some(i), 0)),
        Node::Add(a, b) => {
            let (va, ca) = affine(arena, a)?;
            let (vb, cb) = affine(arena, b)?;
            match (va, vb) {
                (Some(v), None) => Some((Some(v), ca.wrapping_add(cb))),
                (None, Some(v)) => Some((Some(v), ca.wrapping_add(cb))),
                (None, None) => Some((None, ca.wrapping_add(cb))),
                _ => None,
            }
        }
        Node::Sub(a, b) => {
            let (va, ca) = affine(arena, a)?;
            let (None, cb) = affine(arena, b)? else {
                return None;
            };
            Some((va, ca.wrapping_sub(cb)))
        }
        _ => None,
    }
}

/// Recognize an 8-byte little-endian load of a pristine stack word:
/// concat(select(A, base+c+7), ..., select(A, base+c)) where every store
/// between A and the chain's initial memory provably misses [c, c+8).
fn stack_slot_of(
    arena: &Arena,
    term: TermId,
    rsp0_var: u32,
    mem0_var: u32,
) -> Option<u64> {
    // unravel the concat chain, most significant byte first
    let mut bytes = Vec::new();
    let mut cur = term;
    loop {
        match arena.node(cur) {
            Node::Concat(hi, lo) => {
                bytes.push(hi);
                cur = lo;
            }
            _ => {
                bytes.push(cur);
                break;
            }
        }
    }
    if bytes.len() != 8 {
        return None;
    }
    bytes.reverse(); // now least significant (lowest address) first

    let mut base_off = None;
    let mut array = None;
    for (i, byte) in bytes.iter().enumerate() {
        let Node::Select { arr, idx } = arena.node(*byte) else {
            return None;
        };
        let (Some(var), off) = affine(arena, idx)? else {
            return None;
        };
        if var != rsp0_var {
            return None;
        }
        let this_base = off.wrapping_sub(i as u64);
        if *base_off.get_or_insert(this_base) != this_base {
            return None;
        }
        if *array.get_or_insert(arr) != arr {
            return None;
        }
    }
    let off = base_off?;
    if off % 8 != 0 || off >= 1 << 20 {
        return None;
    }

    // look through stores that provably miss the slot
    let mut arr = array?;
    loop {
        match arena.node(arr) {
            Node::Store { arr: inner, idx, .. } => {
                let (var, store_off) = affine(arena, idx)?;
                match var {
                    Some(v) if v == rsp0_var => {
                        // overlapping byte ranges make the slot dirty
                        if store_off.wrapping_add(1) > off && store_off < off.wrapping_add(8) {
                            return None;
                        }
                    }
                    _ => return None, // unknown aliasing
                }
                arr = inner;
            }
            Node::Var(i) if i == mem0_var => return Some(off),
            _ => return None,
        }
    }
}

/// Chain-level symbolic state.
pub struct ChainState {
    pub arena: Arena,
    pub regs: [TermId; NUM_REGS],
    pub reg0_vars: [u32; NUM_REGS],
    pub mem: TermId,
    pub mem0_var: u32,
    /// Byte offset rsp has advanced from the chain base.
    pub stack_off: i64,
    /// Slot offsets consumed as next-gadget addresses.
    pub consumed: Vec<u64>,
    fresh: u32,
}

impl ChainState {
    pub fn new() -> ChainState {
        let mut arena = Arena::new();
        let mut regs = [TermId(0); NUM_REGS];
        let mut reg0_vars = [0u32; NUM_REGS];
        for r in Reg::ALL {
            reg0_vars[r.index()] = arena.vars().len() as u32;
            regs[r.index()] = arena.fresh_var(format!("c0_{}", r.name()), Sort::Bv(64));
        }
        let mem0_var = arena.vars().len() as u32;
        let mem = arena.fresh_var("CM", Sort::Array);
        ChainState {
            arena,
            regs,
            reg0_vars,
            mem,
            mem0_var,
            stack_off: 0,
            consumed: Vec::new(),
            fresh: 0,
        }
    }

    /// Append one gadget: import its summary over the current state.
    pub fn apply(&mut self, ctx: &CompileCtx, gadget_idx: usize) -> Result<(), ChainError> {
        let g = &ctx.gadgets[gadget_idx];
        let next_off = match g.frame.next {
            NextSource::StackOffset(o) => o,
            _ => return Err(ChainError::NonComposable(format!("{} at {:#x}", g.text, g.va))),
        };
        self.consumed.push(self.stack_off as u64 + next_off);

        let summary = &g.summary;
        let mut var_map: HashMap<u32, TermId> = HashMap::new();
        for r in Reg::ALL {
            var_map.insert(summary.reg_vars[r.index()], self.regs[r.index()]);
        }
        var_map.insert(summary.mem_var, self.mem);
        if let Some(cfv) = summary.cf_var {
            // carry flags are opaque across gadget boundaries
            let name = format!("cf_in{}", self.fresh);
            self.fresh += 1;
            let t = self.arena.fresh_var(name, Sort::Bool);
            var_map.insert(cfv, t);
        }

        let mut memo = HashMap::new();
        let mut new_regs = [TermId(0); NUM_REGS];
        for r in Reg::ALL {
            new_regs[r.index()] =
                self.arena
                    .import(&summary.arena, summary.post[r.index()], &var_map, &mut memo);
        }
        let new_mem = self
            .arena
            .import(&summary.arena, summary.final_mem, &var_map, &mut memo);

        self.regs = new_regs;
        self.mem = new_mem;
        self.stack_off += g.frame.frame_size;
        Ok(())
    }

    /// Abstract per-register state for worklist deduplication: two chains
    /// with the same signature extend identically as far as slot control is
    /// concerned. Classes: non-slot (-1), free slot (canonical id, sharing
    /// preserved), rsp-affine value (offset relative to the current stack
    /// position).
    pub fn signature(&self) -> Vec<i64> {
        let rsp0 = self.reg0_vars[Reg::Rsp.index()];
        let mut canonical: Vec<u64> = Vec::new();
        let mut sig = Vec::with_capacity(NUM_REGS);
        for r in Reg::ALL {
            if r == Reg::Rsp {
                continue;
            }
            let term = self.regs[r.index()];
            if let Some(off) = stack_slot_of(&self.arena, term, rsp0, self.mem0_var) {
                if self.consumed.contains(&off) {
                    sig.push(-1);
                } else {
                    let id = match canonical.iter().position(|o| *o == off) {
                        Some(i) => i,
                        None => {
                            canonical.push(off);
                            canonical.len() - 1
                        }
                    };
                    sig.push(id as i64);
                }
                continue;
            }
            if let Some((Some(var), c)) = affine(&self.arena, term) {
                if var == rsp0 {
                    // stack-pointer-derived value: future loads through it
                    // could reach slots, so the relative offset matters
                    sig.push(1_000_000 + (c as i64 - self.stack_off));
                    continue;
                }
            }
            sig.push(-1);
        }
        sig
    }

    pub fn controlled(&self) -> ControlledRegs {
        let mut slots: Vec<(Reg, u64)> = Vec::new();
        for r in Reg::ALL {
            if r == Reg::Rsp {
                continue;
            }
            if let Some(off) = stack_slot_of(
                &self.arena,
                self.regs[r.index()],
                self.reg0_vars[Reg::Rsp.index()],
                self.mem0_var,
            ) {
                if !self.consumed.contains(&off) {
                    slots.push((r, off));
                }
            }
        }
        // a slot feeding two registers controls neither independently
        let mut out = ControlledRegs::default();
        for (r, off) in &slots {
            let shared = slots.iter().any(|(r2, o2)| r2 != r && o2 == off);
            if !shared {
                out.set.insert(*r);
                out.slots.push((*r, *off));
            }
        }
        out
    }
}

/// Compose the gadget sequence and report the controlled register set with
/// the slot offsets that feed each register.
pub fn controlled_of(ctx: &CompileCtx, gadget_seq: &[usize]) -> Result<ControlledRegs, ChainError> {
    let mut st = ChainState::new();
    for &g in gadget_seq {
        st.apply(ctx, g)?;
    }
    Ok(st.controlled())
}
