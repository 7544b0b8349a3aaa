//! Restricted-symbol handling.
//!
//! Values the delivery channel forbids (null bytes in a strcpy overflow, for
//! instance) can never appear in the stack image, neither as gadget
//! addresses nor as operand words. The synthesizer walks a small state
//! machine over the value's class and rebuilds forbidden values in-register:
//! zeros by self-xor, small numbers by inc/dec repetition, clean values by a
//! plain pop, and dirty values as a two-operand combination of clean ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaincomp::{
    shortest_setreg_chains, ChainError, ChainStep, CompileCtx, SearchLimits, SlotValue,
};
use crate::regs::{Reg, RegSet};
use crate::semantics::{splitmix64, AluOp, ArithSrc, GadgetClass};

/// Classification states of the sanitizing FSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FsmState {
    /// zero
    Z,
    /// small number (within inc/dec reach)
    SI,
    /// no restricted bytes
    GC,
    /// contains restricted bytes
    BC,
    /// final: value materialized
    T,
}

/// FSM edges, numbered like the transition list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    /// 1: an instruction directly initializing the value (mov-imm gadget)
    DirectImm = 1,
    /// 2: pop gadget loads a clean value from the stack
    Pop = 2,
    /// 3: xor/sub of a register with itself makes zero
    ZeroSelf = 3,
    /// 4: inc/dec repetition between zero and a small number
    IncDec = 4,
    /// 5: build from clean material with shifts
    ShiftBuild = 5,
    /// 6: two-operand arithmetic split a op b
    Split = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SynthesisError {
    #[error("no FSM transition from {state:?} for value {value:#x}")]
    NoTransitionAvailable { state: FsmState, value: u64 },
    #[error("no restricted-byte-free operand split for {value:#x}")]
    SplitNotFound { value: u64 },
}

/// Classify a value: zero, small, clean, or restricted.
pub fn classify_value(v: u64, bad: &[u8], si_threshold: u64) -> FsmState {
    if v == 0 {
        return FsmState::Z;
    }
    let magnitude = (v as i64).unsigned_abs();
    if magnitude <= si_threshold {
        return FsmState::SI;
    }
    if v.to_le_bytes().iter().any(|b| bad.contains(b)) {
        FsmState::BC
    } else {
        FsmState::GC
    }
}

#[derive(Debug, Clone)]
pub struct SynthOpts {
    /// Largest |value| reached by inc/dec repetition.
    pub si_threshold: u64,
    /// Randomized operand-split attempts per arithmetic op.
    pub split_tries: usize,
    pub seed: u64,
    pub limits: SearchLimits,
}

impl Default for SynthOpts {
    fn default() -> Self {
        SynthOpts {
            si_threshold: 64,
            split_tries: 10_000,
            seed: 0xD1CE_0001,
            limits: SearchLimits::default(),
        }
    }
}

/// A synthesized sub-chain leaving `v` in the destination register.
#[derive(Debug, Clone)]
pub struct SynthChain {
    pub steps: Vec<ChainStep>,
    /// Registers trampled beyond the destination.
    pub clobbers: RegSet,
    pub transitions: Vec<Transition>,
}

/// Load a clean value through the shortest covering chain for one register.
fn loader(
    ctx: &CompileCtx,
    dst: Reg,
    value: u64,
    limits: SearchLimits,
) -> Result<(Vec<ChainStep>, RegSet), ChainError> {
    let targets = RegSet::single(dst);
    let search = shortest_setreg_chains(ctx, targets, limits)?;
    let cover = search.best_cover(targets).ok_or(ChainError::Unsatisfiable(targets))?;
    let global = cover.controlled.slot_of(dst).expect("cover controls dst");

    let mut steps = Vec::new();
    let mut clobbers = RegSet::EMPTY;
    let mut base = 0u64;
    for &g in &cover.gadgets {
        let fs = ctx.gadgets[g].frame.frame_size.max(0) as u64;
        let mut bindings = BTreeMap::new();
        if global >= base && global < base + fs {
            bindings.insert(global - base, SlotValue::labeled(value, dst.name()));
        }
        clobbers = clobbers.union(ctx.gadgets[g].writes);
        steps.push(ctx.step_of(g, bindings));
        base += fs;
    }
    clobbers.remove(dst);
    Ok((steps, clobbers))
}

/// Zero a register via a self-cancelling arithmetic gadget; falls back to
/// zeroing a helper and moving it over.
fn zero_route(
    ctx: &CompileCtx,
    dst: Reg,
    limits: SearchLimits,
) -> Option<(Vec<ChainStep>, RegSet)> {
    let self_zero = |r: Reg| {
        ctx.with_class(|c| {
            matches!(
                c,
                GadgetClass::Arithmetic { dst: d, src1: s1, op: AluOp::Xor | AluOp::Sub, src2: ArithSrc::Reg(s2) }
                    if *d == r && *s1 == r && *s2 == r
            )
        })
        .first()
        .map(|(gi, _)| *gi)
    };
    if let Some(gi) = self_zero(dst) {
        return Some((
            vec![ctx.step_of(gi, BTreeMap::new())],
            ctx.gadgets[gi].writes.difference(RegSet::single(dst)),
        ));
    }
    // zero a helper, then move it into place
    for helper in Reg::ALL {
        if helper == dst || helper == Reg::Rsp {
            continue;
        }
        let Some(zi) = self_zero(helper) else {
            continue;
        };
        let Ok(path) = crate::chaincomp::find_move_path(ctx, helper, dst, limits.max_len) else {
            continue;
        };
        if path.gadgets.is_empty() {
            continue;
        }
        let mut steps = vec![ctx.step_of(zi, BTreeMap::new())];
        let mut clobbers = ctx.gadgets[zi].writes;
        for g in path.gadgets {
            clobbers = clobbers.union(ctx.gadgets[g].writes);
            steps.push(ctx.step_of(g, BTreeMap::new()));
        }
        clobbers.remove(dst);
        return Some((steps, clobbers));
    }
    None
}

fn arith_gadget(ctx: &CompileCtx, dst: Reg, op: AluOp, src: Reg) -> Option<usize> {
    ctx.with_class(|c| {
        matches!(
            c,
            GadgetClass::Arithmetic { dst: d, src1: s1, op: o, src2: ArithSrc::Reg(s2) }
                if *d == dst && *s1 == dst && *o == op && *s2 == src
        )
    })
    .first()
    .map(|(gi, _)| *gi)
}

fn imm_step_gadget(ctx: &CompileCtx, dst: Reg, op: AluOp, imm: u64) -> Option<usize> {
    ctx.with_class(|c| {
        matches!(
            c,
            GadgetClass::Arithmetic { dst: d, src1: s1, op: o, src2: ArithSrc::Imm(v) }
                if *d == dst && *s1 == dst && *o == op && *v == imm
        )
    })
    .first()
    .map(|(gi, _)| *gi)
}

fn clean(b: u8, bad: &[u8]) -> bool {
    !bad.contains(&b)
}

/// Deterministic randomized split v = b op c with both operands clean.
/// Byte-wise construction makes b clean by choice; c is checked.
fn split_random(v: u64, op: AluOp, bad: &[u8], tries: usize, seed: u64) -> Option<(u64, u64)> {
    let allowed: Vec<u8> = (0u8..=255).filter(|b| clean(*b, bad)).collect();
    if allowed.is_empty() {
        return None;
    }
    for t in 0..tries as u64 {
        let mut b = 0u64;
        for i in 0..8 {
            let r = splitmix64(seed ^ (t << 8) ^ i);
            b |= (allowed[(r % allowed.len() as u64) as usize] as u64) << (8 * i);
        }
        let c = match op {
            AluOp::Add => v.wrapping_sub(b),
            AluOp::Sub => b.wrapping_sub(v),
            AluOp::Xor => v ^ b,
            _ => continue,
        };
        if c.to_le_bytes().iter().all(|x| clean(*x, bad)) {
            // orient so that dst gets b and the helper gets c, with
            // b op c == v in dst = dst op src form
            let (bb, cc) = match op {
                AluOp::Sub => (b, c), // b - c = v
                _ => (b, c),
            };
            return Some((bb, cc));
        }
    }
    None
}

/// Exhaustive byte-carry search for additive splits; succeeds whenever any
/// clean (b, c) with b + c = v exists.
fn split_add_carry_exact(v: u64, bad: &[u8], seed: u64) -> Option<(u64, u64)> {
    let vb = v.to_le_bytes();
    // reachable[i] = set of carry-in values achievable at byte i
    let mut choice: [[Option<(u8, u8, u8)>; 2]; 8] = [[None; 2]; 8];
    let mut reachable_in: [[bool; 2]; 9] = [[false; 2]; 9];
    reachable_in[0][0] = true;
    for i in 0..8 {
        for cin in 0..2u8 {
            if !reachable_in[i][cin as usize] {
                continue;
            }
            // seeded start point varies the chosen split across calls
            let start = (splitmix64(seed ^ (i as u64) << 1 ^ cin as u64) & 0xFF) as u16;
            for probe in 0..256u16 {
                let b = ((start + probe) % 256) as u8;
                if !clean(b, bad) {
                    continue;
                }
                for cout in 0..2u16 {
                    let total = vb[i] as i32 + 256 * cout as i32 - cin as i32 - b as i32;
                    if !(0..=255).contains(&total) {
                        continue;
                    }
                    let c = total as u8;
                    if !clean(c, bad) {
                        continue;
                    }
                    if choice[i][cin as usize].is_none() {
                        choice[i][cin as usize] = Some((b, c, cout as u8));
                        reachable_in[i + 1][cout as usize] = true;
                    }
                }
                if choice[i][cin as usize].is_some() {
                    break;
                }
            }
        }
    }
    // walk forward taking recorded choices; the final carry is discarded by
    // 64-bit wraparound
    let mut b = 0u64;
    let mut c = 0u64;
    let mut cin = 0u8;
    for (i, per_byte) in choice.iter().enumerate() {
        let (bb, cc, cout) = per_byte[cin as usize]?;
        b |= (bb as u64) << (8 * i);
        c |= (cc as u64) << (8 * i);
        cin = cout;
    }
    debug_assert_eq!(b.wrapping_add(c), v);
    Some((b, c))
}

/// Append the steps that load `helper` with `c` and then fold it into `dst`,
/// checking clobber ordering both ways.
fn split_chain(
    ctx: &CompileCtx,
    dst: Reg,
    helper: Reg,
    b: u64,
    c: u64,
    arith: usize,
    limits: SearchLimits,
) -> Result<(Vec<ChainStep>, RegSet), ChainError> {
    let (dst_steps, dst_clob) = loader(ctx, dst, b, limits)?;
    let (helper_steps, helper_clob) = loader(ctx, helper, c, limits)?;
    let arith_writes = ctx.gadgets[arith].writes;

    // prefer loading dst then helper; swap if the helper loader tramples dst
    let orders = [
        (&dst_steps, &helper_steps, helper_clob.contains(dst)),
        (&helper_steps, &dst_steps, dst_clob.contains(helper)),
    ];
    for (first, second, conflict) in orders {
        if conflict {
            continue;
        }
        let mut steps: Vec<ChainStep> = Vec::new();
        steps.extend(first.iter().cloned());
        steps.extend(second.iter().cloned());
        steps.push(ctx.step_of(arith, BTreeMap::new()));
        let clobbers = dst_clob
            .union(helper_clob)
            .union(arith_writes)
            .union(RegSet::single(helper))
            .difference(RegSet::single(dst));
        return Ok((steps, clobbers));
    }
    Err(ChainError::SchedulingConflict(format!(
        "operand loaders for {dst} and {helper} clobber each other"
    )))
}

/// Materialize `v` in `dst` without any restricted byte reaching the stack.
pub fn synthesize_load(
    ctx: &CompileCtx,
    dst: Reg,
    v: u64,
    bad: &[u8],
    opts: &SynthOpts,
) -> Result<SynthChain, SynthesisError> {
    let state = classify_value(v, bad, opts.si_threshold);
    let fail = || SynthesisError::NoTransitionAvailable { state, value: v };

    match state {
        FsmState::T => unreachable!("T is never a classification result"),
        FsmState::Z => {
            let (steps, clobbers) = zero_route(ctx, dst, opts.limits).ok_or_else(fail)?;
            Ok(SynthChain { steps, clobbers, transitions: vec![Transition::ZeroSelf] })
        }
        FsmState::SI => {
            // transition 1: a gadget whose immediate already equals v
            if let Some((steps, clobbers)) = direct_imm_route(ctx, dst, v, opts.limits) {
                return Ok(SynthChain { steps, clobbers, transitions: vec![Transition::DirectImm] });
            }
            // transition 4: zero, then step to the value
            let (mut steps, mut clobbers) = zero_route(ctx, dst, opts.limits).ok_or_else(fail)?;
            let signed = v as i64;
            let (op, count) = if signed >= 0 {
                (AluOp::Add, signed as u64)
            } else {
                (AluOp::Sub, signed.unsigned_abs())
            };
            let stepper = imm_step_gadget(ctx, dst, op, 1).ok_or_else(fail)?;
            for _ in 0..count {
                steps.push(ctx.step_of(stepper, BTreeMap::new()));
            }
            clobbers = clobbers
                .union(ctx.gadgets[stepper].writes)
                .difference(RegSet::single(dst));
            Ok(SynthChain {
                steps,
                clobbers,
                transitions: vec![Transition::ZeroSelf, Transition::IncDec],
            })
        }
        FsmState::GC => {
            let (steps, clobbers) = loader(ctx, dst, v, opts.limits).map_err(|_| fail())?;
            Ok(SynthChain { steps, clobbers, transitions: vec![Transition::Pop] })
        }
        FsmState::BC => {
            // transition 6: dst = b op c with both operands clean
            for op in [AluOp::Add, AluOp::Xor, AluOp::Sub] {
                for helper in Reg::ALL {
                    if helper == dst || helper == Reg::Rsp {
                        continue;
                    }
                    let Some(arith) = arith_gadget(ctx, dst, op, helper) else {
                        continue;
                    };
                    let split = split_random(v, op, bad, opts.split_tries, opts.seed)
                        .or_else(|| match op {
                            AluOp::Add => split_add_carry_exact(v, bad, opts.seed),
                            _ => None,
                        });
                    let Some((b, c)) = split else {
                        continue;
                    };
                    if let Ok((steps, clobbers)) =
                        split_chain(ctx, dst, helper, b, c, arith, opts.limits)
                    {
                        return Ok(SynthChain {
                            steps,
                            clobbers,
                            transitions: vec![Transition::Split],
                        });
                    }
                }
            }
            // transition 5: clean material shifted into place
            if let Some(result) = shift_route(ctx, dst, v, bad, opts.limits) {
                return Ok(result);
            }
            Err(SynthesisError::SplitNotFound { value: v })
        }
    }
}

fn direct_imm_route(
    ctx: &CompileCtx,
    dst: Reg,
    v: u64,
    limits: SearchLimits,
) -> Option<(Vec<ChainStep>, RegSet)> {
    for r in Reg::ALL {
        if r == Reg::Rsp {
            continue;
        }
        let hits = ctx.with_class(|c| matches!(c, GadgetClass::MovImm { reg, value } if *reg == r && *value == v));
        let Some((gi, _)) = hits.first() else {
            continue;
        };
        let mut steps = vec![ctx.step_of(*gi, BTreeMap::new())];
        let mut clobbers = ctx.gadgets[*gi].writes;
        if r != dst {
            let Ok(path) = crate::chaincomp::find_move_path(ctx, r, dst, limits.max_len) else {
                continue;
            };
            for g in path.gadgets {
                clobbers = clobbers.union(ctx.gadgets[g].writes);
                steps.push(ctx.step_of(g, BTreeMap::new()));
            }
        }
        clobbers.remove(dst);
        return Some((steps, clobbers));
    }
    None
}

/// v = g << s with g clean and a matching shift gadget.
fn shift_route(
    ctx: &CompileCtx,
    dst: Reg,
    v: u64,
    bad: &[u8],
    limits: SearchLimits,
) -> Option<SynthChain> {
    let shifts = ctx.with_class(|c| {
        matches!(
            c,
            GadgetClass::Arithmetic { dst: d, src1: s1, op: AluOp::Shl, src2: ArithSrc::Imm(_) }
                if *d == dst && *s1 == dst
        )
    });
    for (gi, class) in shifts {
        let GadgetClass::Arithmetic { src2: ArithSrc::Imm(s), .. } = class else {
            continue;
        };
        if s == 0 || s >= 64 || v.trailing_zeros() < s as u32 {
            continue;
        }
        // The top `s` bits of the pre-shift value fall off the end, so they
        // are free; fill them bytewise with clean material.
        let mut g = v >> s;
        if s % 8 == 0 {
            let Some(fill) = (0u8..=255).find(|b| *b != 0 && !bad.contains(b)) else {
                continue;
            };
            for byte in (8 - s / 8)..8 {
                g |= (fill as u64) << (8 * byte);
            }
        }
        if g == 0 || g.to_le_bytes().iter().any(|b| bad.contains(b)) {
            continue;
        }
        debug_assert_eq!(g.wrapping_shl(s as u32), v);
        let Ok((mut steps, mut clobbers)) = loader(ctx, dst, g, limits) else {
            continue;
        };
        steps.push(ctx.step_of(gi, BTreeMap::new()));
        clobbers = clobbers
            .union(ctx.gadgets[gi].writes)
            .difference(RegSet::single(dst));
        return Some(SynthChain {
            steps,
            clobbers,
            transitions: vec![Transition::Pop, Transition::ShiftBuild],
        });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_per_fsm() {
        let bad = [0x00u8];
        assert_eq!(classify_value(0, &bad, 64), FsmState::Z);
        assert_eq!(classify_value(3, &bad, 64), FsmState::SI);
        assert_eq!(classify_value((-5i64) as u64, &bad, 64), FsmState::SI);
        assert_eq!(classify_value(0x0000000000411000, &bad, 64), FsmState::BC);
        assert_eq!(classify_value(0x4141414141414141, &bad, 64), FsmState::GC);
        // classification depends only on (zero, magnitude, byte set)
        assert_eq!(classify_value(65, &bad, 64), FsmState::BC); // 0x41 then zeros
        assert_eq!(classify_value(65, &[0x0a], 64), FsmState::GC);
    }

    #[test]
    fn additive_split_always_found_for_null_bad() {
        let bad = [0x00u8, 0x0a];
        for v in [0u64, 1, 0x0a, 0x3b, 0x0000000000411000, u64::MAX, 0x0a0a0a0a0a0a0a0a] {
            let (b, c) = split_add_carry_exact(v, &bad, 7).expect("split exists");
            assert_eq!(b.wrapping_add(c), v);
            assert!(b.to_le_bytes().iter().all(|x| !bad.contains(x)));
            assert!(c.to_le_bytes().iter().all(|x| !bad.contains(x)));
        }
    }

    #[test]
    fn random_split_xor() {
        let bad = [0x00u8];
        let v = 0x0000_0101u64;
        if let Some((b, c)) = split_random(v, AluOp::Xor, &bad, 1000, 3) {
            assert_eq!(b ^ c, v);
        }
    }
}
