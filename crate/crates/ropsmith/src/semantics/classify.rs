//! Gadget classification into parameterized semantic types.
//!
//! The gadget is interpreted under a run schedule (two random seeds plus the
//! all-zero and all-minus-one boundary states). Candidate claims are read off
//! the first run as final/initial value relations, then every candidate must
//! hold in all remaining runs. Surviving claims still carry `Unchecked`
//! status; the verifier upgrades or refutes them.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{draw_mem, interpret, MachineState, MemAccess};
use crate::binfront::{OpWidth, StopKind};
use crate::gadgetscan::Gadget;
use crate::regs::{Flag, Reg, RegSet, NUM_FLAGS, NUM_REGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Sar,
}

impl AluOp {
    pub const BINARY: [AluOp; 5] = [AluOp::Add, AluOp::Sub, AluOp::And, AluOp::Or, AluOp::Xor];

    pub fn symbol(self) -> &'static str {
        match self {
            AluOp::Add => "+",
            AluOp::Sub => "-",
            AluOp::And => "&",
            AluOp::Or => "|",
            AluOp::Xor => "^",
            AluOp::Shl => "<<",
            AluOp::Shr => ">>",
            AluOp::Sar => ">>s",
        }
    }

    pub fn apply(self, a: u64, b: u64, w: OpWidth) -> u64 {
        let m = w.mask();
        let (a, b) = (a & m, b & m);
        let r = match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a.wrapping_shl((b as u32) & (w.bits() - 1)),
            AluOp::Shr => a.wrapping_shr((b as u32) & (w.bits() - 1)),
            AluOp::Sar => match w {
                OpWidth::W64 => ((a as i64) >> ((b as u32) & 63)) as u64,
                OpWidth::W32 => (((a as u32) as i32) >> ((b as u32) & 31)) as u32 as u64,
            },
        };
        r & m
    }
}

impl fmt::Display for AluOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Second operand of an arithmetic claim: a register or an immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithSrc {
    Reg(Reg),
    Imm(u64),
}

/// Expression forms a stack pivot can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotKind {
    /// rsp' = reg + constant
    RegPlusConst(Reg, i64),
    /// rsp' = frame slot at byte offset + constant
    SlotPlusConst(u64, i64),
}

/// A gadget's semantic type with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GadgetClass {
    /// reg <- frame slot at byte offset (the attacker-placed "constant")
    LoadConst { reg: Reg, offset: u64 },
    /// reg <- fixed immediate baked into the gadget
    MovImm { reg: Reg, value: u64 },
    /// dst <- src
    MoveReg { dst: Reg, src: Reg },
    /// dst <- src1 op src2
    Arithmetic { dst: Reg, src1: Reg, op: AluOp, src2: ArithSrc },
    /// dst <- M[addr_reg + disp]
    LoadMem { dst: Reg, addr_reg: Reg, disp: i64 },
    /// M[addr_reg + disp] <- src
    StoreMem { addr_reg: Reg, disp: i64, src: Reg },
    /// M[addr_reg + disp] <- fixed immediate
    StoreConst { addr_reg: Reg, disp: i64, value: u64 },
    /// dst <- dst op M[addr_reg + disp]
    ArithmeticLoad { dst: Reg, op: AluOp, addr_reg: Reg, disp: i64 },
    /// M[addr_reg + disp] <- M[addr_reg + disp] op src
    ArithmeticStore { addr_reg: Reg, disp: i64, op: AluOp, src: Reg },
    Syscall,
    StackPivot { kind: PivotKind },
    NoOp,
}

impl GadgetClass {
    /// Registers this class names as outputs (they never count as clobbers).
    pub fn outputs(&self) -> RegSet {
        match self {
            GadgetClass::LoadConst { reg, .. } | GadgetClass::MovImm { reg, .. } => {
                RegSet::single(*reg)
            }
            GadgetClass::MoveReg { dst, .. }
            | GadgetClass::Arithmetic { dst, .. }
            | GadgetClass::LoadMem { dst, .. }
            | GadgetClass::ArithmeticLoad { dst, .. } => RegSet::single(*dst),
            _ => RegSet::EMPTY,
        }
    }

    /// Stable tag naming the semantic group (catalog grouping key).
    pub fn kind_name(&self) -> &'static str {
        match self {
            GadgetClass::LoadConst { .. } => "load_const",
            GadgetClass::MovImm { .. } => "mov_imm",
            GadgetClass::MoveReg { .. } => "move_reg",
            GadgetClass::Arithmetic { .. } => "arithmetic",
            GadgetClass::LoadMem { .. } => "load_mem",
            GadgetClass::StoreMem { .. } => "store_mem",
            GadgetClass::StoreConst { .. } => "store_const",
            GadgetClass::ArithmeticLoad { .. } => "arithmetic_load",
            GadgetClass::ArithmeticStore { .. } => "arithmetic_store",
            GadgetClass::Syscall => "syscall",
            GadgetClass::StackPivot { .. } => "stack_pivot",
            GadgetClass::NoOp => "no_op",
        }
    }
}

fn disp_str(disp: i64) -> String {
    if disp > 0 {
        format!("+{disp:#x}")
    } else if disp < 0 {
        format!("-{:#x}", disp.wrapping_neg())
    } else {
        String::new()
    }
}

/// Render with width-appropriate register names, catalog style: `rbx <- rax`.
pub fn describe(class: &GadgetClass, width: OpWidth) -> String {
    let n = |r: Reg| match width {
        OpWidth::W32 => r.name32(),
        OpWidth::W64 => r.name(),
    };
    match class {
        GadgetClass::LoadConst { reg, offset } => format!("{} <- [rsp+{offset:#x}]", n(*reg)),
        GadgetClass::MovImm { reg, value } => format!("{} <- {value:#x}", n(*reg)),
        GadgetClass::MoveReg { dst, src } => format!("{} <- {}", n(*dst), n(*src)),
        GadgetClass::Arithmetic { dst, src1, op, src2 } => match src2 {
            ArithSrc::Reg(r) => format!("{} <- {} {op} {}", n(*dst), n(*src1), n(*r)),
            ArithSrc::Imm(v) => format!("{} <- {} {op} {v:#x}", n(*dst), n(*src1)),
        },
        GadgetClass::LoadMem { dst, addr_reg, disp } => {
            format!("{} <- [{}{}]", n(*dst), addr_reg, disp_str(*disp))
        }
        GadgetClass::StoreMem { addr_reg, disp, src } => {
            format!("[{}{}] <- {}", addr_reg, disp_str(*disp), n(*src))
        }
        GadgetClass::StoreConst { addr_reg, disp, value } => {
            format!("[{}{}] <- {value:#x}", addr_reg, disp_str(*disp))
        }
        GadgetClass::ArithmeticLoad { dst, op, addr_reg, disp } => {
            format!("{} <- {} {op} [{}{}]", n(*dst), n(*dst), addr_reg, disp_str(*disp))
        }
        GadgetClass::ArithmeticStore { addr_reg, disp, op, src } => {
            let m = format!("[{}{}]", addr_reg, disp_str(*disp));
            format!("{m} <- {m} {op} {}", n(*src))
        }
        GadgetClass::Syscall => "syscall".to_string(),
        GadgetClass::StackPivot { kind } => match kind {
            PivotKind::RegPlusConst(r, c) => format!("rsp <- {r}{}", disp_str(*c)),
            PivotKind::SlotPlusConst(off, c) => {
                format!("rsp <- [rsp+{off:#x}]{}", disp_str(*c))
            }
        },
        GadgetClass::NoOp => "no-op".to_string(),
    }
}

/// Verification status of a claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Unchecked,
    Verified,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedClaim {
    pub class: GadgetClass,
    pub width: OpWidth,
    /// Registers changed by the gadget beyond the claim's outputs (rsp and
    /// rip excluded; those belong to the frame).
    pub clobbers: RegSet,
    pub verified: Verification,
}

impl TypedClaim {
    pub fn describe(&self) -> String {
        describe(&self.class, self.width)
    }
}

/// Everything observed about one interpretation run of a gadget.
#[derive(Debug, Clone)]
pub struct RunObs {
    pub seed: u64,
    pub init_regs: [u64; NUM_REGS],
    pub init_flags: [bool; NUM_FLAGS],
    pub final_regs: [u64; NUM_REGS],
    pub final_rip: u64,
    pub reads: Vec<MemAccess>,
    pub writes: Vec<MemAccess>,
    pub stores: HashMap<u64, u8>,
    pub terminator: StopKind,
    /// Pre-run memory bytes planted explicitly (counterexample replays);
    /// everywhere else initial memory is the seed draw.
    pub m0_overrides: HashMap<u64, u8>,
}

impl RunObs {
    pub fn init(&self, r: Reg) -> u64 {
        self.init_regs[r.index()]
    }

    pub fn fin(&self, r: Reg) -> u64 {
        self.final_regs[r.index()]
    }

    pub fn rsp0(&self) -> u64 {
        self.init(Reg::Rsp)
    }

    fn m0_byte(&self, addr: u64) -> u8 {
        self.m0_overrides
            .get(&addr)
            .copied()
            .unwrap_or_else(|| draw_mem(self.seed, addr))
    }

    /// Initial memory (pre-run) at `addr`.
    pub fn m0(&self, addr: u64, w: OpWidth) -> u64 {
        let mut v = 0u64;
        for i in 0..w.bytes() {
            v |= (self.m0_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    /// Final memory at `addr`: stores overlayed on the initial contents.
    pub fn final_mem(&self, addr: u64, w: OpWidth) -> u64 {
        let mut v = 0u64;
        for i in 0..w.bytes() {
            let a = addr.wrapping_add(i);
            let b = self.stores.get(&a).copied().unwrap_or_else(|| self.m0_byte(a));
            v |= (b as u64) << (8 * i);
        }
        v
    }

    pub fn changed(&self) -> RegSet {
        Reg::ALL
            .into_iter()
            .filter(|r| *r != Reg::Rsp && self.init(*r) != self.fin(*r))
            .collect()
    }
}

/// The setup of one classification run.
#[derive(Debug, Clone, Copy)]
pub enum RunSetup {
    Random { seed: u64 },
    /// All GPRs (and flags) forced to one boundary value; memory still draws
    /// from the seed.
    Boundary { value: u64, seed: u64 },
}

/// Interpret a gadget under a given setup and collect observations.
pub fn observe(g: &Gadget, setup: RunSetup) -> RunObs {
    let mut st = match setup {
        RunSetup::Random { seed } => MachineState::with_seed(seed),
        RunSetup::Boundary { value, seed } => {
            let mut st = MachineState::with_seed(seed);
            for r in Reg::ALL {
                st.set_reg(r, value);
            }
            for f in Flag::ALL {
                st.set_flag(f, value != 0);
            }
            st
        }
    };
    let seed = st.seed();
    let init_regs = st.snapshot_regs();
    let init_flags = st.snapshot_flags();
    let mut fin = interpret(&g.instrs, st).expect("decoded gadget must interpret");
    RunObs {
        seed,
        init_regs,
        init_flags,
        final_regs: fin.snapshot_regs(),
        final_rip: fin.rip(),
        reads: fin.reads_log.clone(),
        writes: fin.writes_log.clone(),
        stores: fin.stores().clone(),
        terminator: g.terminator(),
        m0_overrides: HashMap::new(),
    }
}

/// Does the claim's defining relation hold in this run?
pub fn claim_holds(class: &GadgetClass, width: OpWidth, obs: &RunObs) -> bool {
    let m = width.mask();
    match class {
        GadgetClass::LoadConst { reg, offset } => {
            obs.fin(*reg) == obs.m0(obs.rsp0().wrapping_add(*offset), OpWidth::W64)
        }
        GadgetClass::MovImm { reg, value } => obs.fin(*reg) == *value & m,
        GadgetClass::MoveReg { dst, src } => obs.fin(*dst) == obs.init(*src) & m,
        GadgetClass::Arithmetic { dst, src1, op, src2 } => {
            let b = match src2 {
                ArithSrc::Reg(r) => obs.init(*r),
                ArithSrc::Imm(v) => *v,
            };
            obs.fin(*dst) == op.apply(obs.init(*src1), b, width)
        }
        GadgetClass::LoadMem { dst, addr_reg, disp } => {
            let addr = obs.init(*addr_reg).wrapping_add(*disp as u64);
            obs.fin(*dst) == obs.m0(addr, width)
        }
        GadgetClass::StoreMem { addr_reg, disp, src } => {
            let addr = obs.init(*addr_reg).wrapping_add(*disp as u64);
            obs.final_mem(addr, width) == obs.init(*src) & m
        }
        GadgetClass::StoreConst { addr_reg, disp, value } => {
            let addr = obs.init(*addr_reg).wrapping_add(*disp as u64);
            obs.final_mem(addr, width) == *value & m
        }
        GadgetClass::ArithmeticLoad { dst, op, addr_reg, disp } => {
            let addr = obs.init(*addr_reg).wrapping_add(*disp as u64);
            obs.fin(*dst) == op.apply(obs.init(*dst), obs.m0(addr, width), width)
        }
        GadgetClass::ArithmeticStore { addr_reg, disp, op, src } => {
            let addr = obs.init(*addr_reg).wrapping_add(*disp as u64);
            obs.final_mem(addr, width) == op.apply(obs.m0(addr, width), obs.init(*src), width)
        }
        GadgetClass::Syscall => obs.terminator == StopKind::Syscall,
        GadgetClass::StackPivot { kind } => {
            let rsp_f = obs.fin(Reg::Rsp);
            match kind {
                PivotKind::RegPlusConst(r, c) => rsp_f == obs.init(*r).wrapping_add(*c as u64),
                PivotKind::SlotPlusConst(off, c) => {
                    let slot = obs.m0(obs.rsp0().wrapping_add(*off), OpWidth::W64);
                    rsp_f == slot.wrapping_add(*c as u64)
                }
            }
        }
        GadgetClass::NoOp => {
            obs.changed().is_empty()
                && obs.writes.is_empty()
                && matches!(obs.terminator, StopKind::RetNear | StopKind::RetImm(_))
        }
    }
}

pub const DEFAULT_CLASSIFY_SEEDS: [u64; 2] = [0x0B5E_55ED_0001, 0x0B5E_55ED_0002];

#[derive(Debug, Clone)]
pub struct ClassifyConfig {
    pub seeds: Vec<u64>,
    /// Add the all-zero and all-minus-one boundary runs.
    pub boundaries: bool,
    /// How many frame slots the LoadConst scan covers.
    pub slot_window: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            seeds: DEFAULT_CLASSIFY_SEEDS.to_vec(),
            boundaries: true,
            slot_window: 48,
        }
    }
}

impl ClassifyConfig {
    pub fn setups(&self) -> Vec<RunSetup> {
        let mut v: Vec<RunSetup> = self.seeds.iter().map(|s| RunSetup::Random { seed: *s }).collect();
        if self.boundaries {
            v.push(RunSetup::Boundary { value: 0, seed: 0x0B0D_0000 });
            v.push(RunSetup::Boundary { value: u64::MAX, seed: 0x0B0D_0001 });
        }
        v
    }
}

/// Classify a gadget under the default run schedule.
pub fn classify(g: &Gadget) -> Vec<TypedClaim> {
    classify_with(g, &ClassifyConfig::default())
}

pub fn classify_with(g: &Gadget, cfg: &ClassifyConfig) -> Vec<TypedClaim> {
    let setups = cfg.setups();
    assert!(!setups.is_empty());
    let runs: Vec<RunObs> = setups.iter().map(|s| observe(g, *s)).collect();

    let mut widths = vec![OpWidth::W64];
    if g.instrs.has_w32() {
        widths.push(OpWidth::W32);
    }

    let mut candidates = Vec::new();
    for &w in &widths {
        generate_candidates(g, &runs[0], w, cfg.slot_window, &mut candidates);
    }
    candidates.sort();
    candidates.dedup();

    // A claim must hold in every run.
    candidates.retain(|(class, w)| runs.iter().all(|r| claim_holds(class, *w, r)));

    // Prefer the 64-bit form when both widths express the same relation.
    let dual: Vec<(GadgetClass, OpWidth)> = candidates
        .iter()
        .filter(|(c, w)| *w == OpWidth::W32 && candidates.contains(&(*c, OpWidth::W64)))
        .cloned()
        .collect();
    candidates.retain(|cw| !dual.contains(cw));

    let changed_any: RegSet = runs
        .iter()
        .fold(RegSet::EMPTY, |acc, r| acc.union(r.changed()));

    candidates
        .into_iter()
        .map(|(class, width)| {
            let clobbers = changed_any.difference(class.outputs());
            TypedClaim {
                class,
                width,
                clobbers,
                verified: Verification::Unchecked,
            }
        })
        .collect()
}

fn generate_candidates(
    g: &Gadget,
    obs: &RunObs,
    w: OpWidth,
    slot_window: usize,
    out: &mut Vec<(GadgetClass, OpWidth)>,
) {
    let m = w.mask();
    let regs_no_rsp = || Reg::ALL.into_iter().filter(|r| *r != Reg::Rsp);

    // Immediates appearing in the gadget text seed the shift-amount scan.
    let shift_present = g.instrs.iter().any(|i| {
        matches!(
            i.mnemonic,
            crate::binfront::Mnemonic::Shl | crate::binfront::Mnemonic::Shr | crate::binfront::Mnemonic::Sar
        )
    });

    for dst in regs_no_rsp() {
        let fv = obs.fin(dst);
        let changed = fv != obs.init(dst);

        // Relations are only read off registers the gadget actually
        // changed; identities over untouched registers are noise.
        if !changed {
            continue;
        }

        out.push((GadgetClass::MovImm { reg: dst, value: fv }, w));

        // Register moves.
        for src in regs_no_rsp() {
            if src != dst && fv == obs.init(src) & m {
                out.push((GadgetClass::MoveReg { dst, src }, w));
            }
        }

        // Stack slot loads (64-bit only; the stack machine is word-sized).
        if w == OpWidth::W64 {
            for slot in 0..slot_window {
                let off = (slot as u64) * 8;
                if fv == obs.m0(obs.rsp0().wrapping_add(off), OpWidth::W64) {
                    out.push((GadgetClass::LoadConst { reg: dst, offset: off }, w));
                }
            }
        }

        // Register-register arithmetic. and/or over a register with itself
        // are register moves in disguise and stay out.
        for op in AluOp::BINARY {
            for s1 in regs_no_rsp() {
                for s2 in regs_no_rsp() {
                    if s1 == s2 && matches!(op, AluOp::And | AluOp::Or) {
                        continue;
                    }
                    if fv == op.apply(obs.init(s1), obs.init(s2), w) {
                        out.push((
                            GadgetClass::Arithmetic { dst, src1: s1, op, src2: ArithSrc::Reg(s2) },
                            w,
                        ));
                    }
                }
            }
        }

        // Immediate arithmetic: recover the constant from this run, validate
        // in the rest. Identity constants are dropped as noise.
        {
            let half = 1u64 << (w.bits() - 1);
            for s1 in regs_no_rsp() {
                let iv = obs.init(s1) & m;
                let delta = fv.wrapping_sub(iv) & m;
                if delta != 0 {
                    // canonical form: small positive adds, otherwise subtract
                    let (op, c) = if delta < half {
                        (AluOp::Add, delta)
                    } else {
                        (AluOp::Sub, delta.wrapping_neg() & m)
                    };
                    out.push((
                        GadgetClass::Arithmetic { dst, src1: s1, op, src2: ArithSrc::Imm(c) },
                        w,
                    ));
                }
                let c_xor = (fv ^ iv) & m;
                if c_xor != 0 {
                    out.push((
                        GadgetClass::Arithmetic {
                            dst,
                            src1: s1,
                            op: AluOp::Xor,
                            src2: ArithSrc::Imm(c_xor),
                        },
                        w,
                    ));
                }
            }
            if shift_present {
                for op in [AluOp::Shl, AluOp::Shr, AluOp::Sar] {
                    for count in 1..w.bits() as u64 {
                        if fv == op.apply(obs.init(dst), count, w) {
                            out.push((
                                GadgetClass::Arithmetic {
                                    dst,
                                    src1: dst,
                                    op,
                                    src2: ArithSrc::Imm(count),
                                },
                                w,
                            ));
                        }
                    }
                }
            }
        }

        // Memory loads observed in the run (same changed gate applies).
        for acc in &obs.reads {
            if acc.width as u64 != w.bytes() {
                continue;
            }
            for areg in regs_no_rsp() {
                let disp = acc.addr.wrapping_sub(obs.init(areg)) as i64;
                let mv = obs.m0(acc.addr, w);
                if fv == mv {
                    out.push((GadgetClass::LoadMem { dst, addr_reg: areg, disp }, w));
                }
                if fv == AluOp::Add.apply(obs.init(dst), mv, w)
                    || fv == AluOp::Sub.apply(obs.init(dst), mv, w)
                    || fv == AluOp::And.apply(obs.init(dst), mv, w)
                    || fv == AluOp::Or.apply(obs.init(dst), mv, w)
                    || fv == AluOp::Xor.apply(obs.init(dst), mv, w)
                {
                    for op in AluOp::BINARY {
                        if fv == op.apply(obs.init(dst), mv, w) {
                            out.push((
                                GadgetClass::ArithmeticLoad { dst, op, addr_reg: areg, disp },
                                w,
                            ));
                        }
                    }
                }
            }
        }
    }

    // Memory writes observed in the run.
    for acc in &obs.writes {
        if acc.width as u64 != w.bytes() {
            continue;
        }
        for areg in regs_no_rsp() {
            let disp = acc.addr.wrapping_sub(obs.init(areg)) as i64;
            let m0v = obs.m0(acc.addr, w);
            let finv = obs.final_mem(acc.addr, w);
            out.push((GadgetClass::StoreConst { addr_reg: areg, disp, value: finv }, w));
            for src in regs_no_rsp() {
                if finv == obs.init(src) & m {
                    out.push((GadgetClass::StoreMem { addr_reg: areg, disp, src }, w));
                }
                for op in AluOp::BINARY {
                    if finv == op.apply(m0v, obs.init(src), w) {
                        out.push((
                            GadgetClass::ArithmeticStore { addr_reg: areg, disp, op, src },
                            w,
                        ));
                    }
                }
            }
        }
    }

    if w == OpWidth::W64 {
        if obs.terminator == StopKind::Syscall {
            out.push((GadgetClass::Syscall, w));
        }

        if claim_holds(&GadgetClass::NoOp, w, obs) {
            out.push((GadgetClass::NoOp, w));
        }

        // Pivot candidates only when the stack delta is input-dependent.
        if super::frame::analyze_frame(g).is_err() {
            let rsp_f = obs.fin(Reg::Rsp);
            for r in regs_no_rsp() {
                let c = rsp_f.wrapping_sub(obs.init(r)) as i64;
                if c.unsigned_abs() <= 0x10000 {
                    out.push((
                        GadgetClass::StackPivot { kind: PivotKind::RegPlusConst(r, c) },
                        w,
                    ));
                }
            }
            for slot in 0..16u64 {
                let off = slot * 8;
                let sv = obs.m0(obs.rsp0().wrapping_add(off), OpWidth::W64);
                let c = rsp_f.wrapping_sub(sv) as i64;
                if c.unsigned_abs() <= 0x10000 {
                    out.push((
                        GadgetClass::StackPivot { kind: PivotKind::SlotPlusConst(off, c) },
                        w,
                    ));
                }
            }
        }
    }
}
