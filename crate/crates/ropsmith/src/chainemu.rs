//! Deterministic chain execution oracle.
//!
//! The emulator seeds a stack with an emitted layout, performs the hijacked
//! return, and walks decoded instructions out of the loaded image until a
//! syscall, a jump outside executable memory, or the step limit. Syscalls
//! are trapped, never executed. Uninitialized reads draw deterministically
//! from the run's seed, so repeated runs across seeds stand in for repeated
//! real executions.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::binfront::{decode_instruction, BinaryImage};
use crate::chaincomp::{ArgSpec, PayloadKind, PayloadSpec, StackLayout};
use crate::regs::{Reg, NUM_REGS};
use crate::semantics::{step, ImageBacking, MachineState, MemBacking, StepOutcome};

#[derive(Debug, Clone)]
pub struct EmuConfig {
    pub step_limit: usize,
    pub stack_base: u64,
    pub stack_size: u64,
    /// Zero-initialized writable range standing in for .data/.bss when the
    /// image has none.
    pub scratch: Range<u64>,
    pub seeds: Vec<u64>,
    /// Reaching this address counts as a clean halt (call targets).
    pub halt_va: Option<u64>,
}

pub const DEFAULT_SCRATCH: Range<u64> = 0x0061_0000..0x0061_1000;

impl Default for EmuConfig {
    fn default() -> Self {
        EmuConfig {
            step_limit: 10_000,
            stack_base: 0x7FFF_F100_0000,
            stack_size: 0x1_0000,
            scratch: DEFAULT_SCRATCH,
            seeds: (0..10).map(|i| 0xE401 + i * 0x1000).collect(),
            halt_va: None,
        }
    }
}

impl EmuConfig {
    /// Scratch placed at the image's writable segment when it has one.
    pub fn for_image(image: &BinaryImage) -> EmuConfig {
        let mut cfg = EmuConfig::default();
        if let Some(r) = image.writable_region() {
            cfg.scratch = r.base_va..r.base_va + r.mem_size;
        }
        cfg
    }

    pub fn stack_range(&self) -> Range<u64> {
        self.stack_base..self.stack_base + self.stack_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    NonExecutable,
    Undecodable,
    WriteViolation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmuEvent {
    Exec { va: u64 },
    Read { addr: u64, width: u8 },
    Write { addr: u64, width: u8 },
    Syscall { regs: [u64; NUM_REGS] },
    Fault { kind: FaultKind, va: u64 },
    Halt { va: u64 },
    StepLimit,
}

/// Ordered event record of one emulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<EmuEvent>,
}

impl Trace {
    pub fn terminal(&self) -> Option<&EmuEvent> {
        self.events.last()
    }

    pub fn syscall_snapshot(&self) -> Option<&[u64; NUM_REGS]> {
        self.events.iter().find_map(|e| match e {
            EmuEvent::Syscall { regs } => Some(regs),
            _ => None,
        })
    }

    pub fn executed_vas(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                EmuEvent::Exec { va } => Some(*va),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Trace {
    /// Line-oriented dump: one event per line, stable field order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            match e {
                EmuEvent::Exec { va } => writeln!(f, "exec {va:#018x}")?,
                EmuEvent::Read { addr, width } => writeln!(f, "read {addr:#018x} {width}")?,
                EmuEvent::Write { addr, width } => writeln!(f, "write {addr:#018x} {width}")?,
                EmuEvent::Syscall { regs } => {
                    write!(f, "syscall")?;
                    for r in Reg::ALL {
                        write!(f, " {}={:#x}", r.name(), regs[r.index()])?;
                    }
                    writeln!(f)?;
                }
                EmuEvent::Fault { kind, va } => {
                    let k = match kind {
                        FaultKind::NonExecutable => "nonexec",
                        FaultKind::Undecodable => "undecodable",
                        FaultKind::WriteViolation => "writeviolation",
                    };
                    writeln!(f, "fault {k} {va:#018x}")?;
                }
                EmuEvent::Halt { va } => writeln!(f, "halt {va:#018x}")?,
                EmuEvent::StepLimit => writeln!(f, "steplimit")?,
            }
        }
        Ok(())
    }
}

/// Run one chain layout under one seed.
pub fn run_chain(
    image: &BinaryImage,
    layout: &StackLayout,
    cfg: &EmuConfig,
    seed: u64,
) -> (Trace, MachineState) {
    assert!(!layout.bytes.is_empty(), "layout must be non-empty");
    assert!(
        image
            .regions
            .iter()
            .all(|r| r.base_va + r.mem_size <= cfg.stack_base
                || r.base_va >= cfg.stack_base + cfg.stack_size),
        "stack region must not overlap the image"
    );

    let backing = ImageBacking {
        regions: image
            .regions
            .iter()
            .map(|r| (r.base_va, r.mem_size, r.bytes.clone(), r.writable))
            .collect(),
        scratch: cfg.scratch.clone(),
        stack: cfg.stack_range(),
    };
    let backing = Arc::new(backing);
    let mut state = MachineState::with_backing(seed, MemBacking::Image(backing.clone()));

    for (i, b) in layout.bytes.iter().enumerate() {
        state.plant_byte(cfg.stack_base + i as u64, *b);
    }
    state.set_reg(Reg::Rsp, cfg.stack_base);

    let mut trace = Trace::default();

    // the hijacked return: pop the first layout word into rip
    let first = state.read_u64(cfg.stack_base);
    state.set_reg(Reg::Rsp, cfg.stack_base + 8);
    state.set_rip(first);
    state.reads_log.clear();

    for _ in 0..cfg.step_limit {
        let rip = state.rip();
        if Some(rip) == cfg.halt_va {
            trace.events.push(EmuEvent::Halt { va: rip });
            return (trace, state);
        }
        let Some(region) = image.region_at(rip) else {
            trace.events.push(EmuEvent::Fault { kind: FaultKind::NonExecutable, va: rip });
            return (trace, state);
        };
        if !region.executable {
            trace.events.push(EmuEvent::Fault { kind: FaultKind::NonExecutable, va: rip });
            return (trace, state);
        }
        let off = (rip - region.base_va) as usize;
        let instr = match decode_instruction(&region.bytes, off, rip) {
            Ok(i) => i,
            Err(_) => {
                trace.events.push(EmuEvent::Fault { kind: FaultKind::Undecodable, va: rip });
                return (trace, state);
            }
        };
        trace.events.push(EmuEvent::Exec { va: rip });

        let reads_before = state.reads_log.len();
        let writes_before = state.writes_log.len();
        let outcome = match step(&mut state, &instr) {
            Ok(o) => o,
            Err(_) => {
                trace.events.push(EmuEvent::Fault { kind: FaultKind::Undecodable, va: rip });
                return (trace, state);
            }
        };
        let reads: Vec<_> = state.reads_log[reads_before..].to_vec();
        for acc in reads {
            trace.events.push(EmuEvent::Read { addr: acc.addr, width: acc.width });
        }
        let writes: Vec<_> = state.writes_log[writes_before..].to_vec();
        for acc in writes {
            trace.events.push(EmuEvent::Write { addr: acc.addr, width: acc.width });
            if !backing.writable(acc.addr)
                || !backing.writable(acc.addr.wrapping_add(acc.width as u64 - 1))
            {
                trace.events.push(EmuEvent::Fault {
                    kind: FaultKind::WriteViolation,
                    va: acc.addr,
                });
                return (trace, state);
            }
        }

        if outcome == StepOutcome::Syscall {
            let regs = state.snapshot_regs();
            trace.events.push(EmuEvent::Syscall { regs });
            return (trace, state);
        }
    }
    trace.events.push(EmuEvent::StepLimit);
    (trace, state)
}

/// One named mismatch between expectation and observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diff {
    pub what: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Default)]
pub struct PayloadCheck {
    pub pass: bool,
    pub diffs: Vec<Diff>,
}

fn diff(diffs: &mut Vec<Diff>, what: impl Into<String>, expected: impl fmt::Display, actual: impl fmt::Display) {
    diffs.push(Diff {
        what: what.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    });
}

/// Judge one finished run against the payload's goal state.
pub fn check_payload(trace: &Trace, final_state: &MachineState, payload: &PayloadSpec) -> PayloadCheck {
    let mut diffs = Vec::new();
    match &payload.kind {
        PayloadKind::SetRegs(assignments) => {
            match trace.terminal() {
                Some(EmuEvent::Syscall { .. }) => {
                    diff(&mut diffs, "terminal", "halt or fault", "syscall");
                }
                Some(EmuEvent::StepLimit) | None => {
                    diff(&mut diffs, "terminal", "halt or fault", "step limit");
                }
                _ => {}
            }
            for (reg, expected) in assignments {
                let actual = final_state.peek_reg(*reg);
                if actual != Some(*expected) {
                    diff(
                        &mut diffs,
                        reg.name(),
                        format!("{expected:#x}"),
                        actual.map(|v| format!("{v:#x}")).unwrap_or_else(|| "<unset>".into()),
                    );
                }
            }
        }
        PayloadKind::MemWrite { addr, bytes } => {
            if matches!(trace.terminal(), Some(EmuEvent::Syscall { .. }) | Some(EmuEvent::StepLimit) | None) {
                diff(&mut diffs, "terminal", "halt or fault", "syscall/steplimit");
            }
            for (i, expected) in bytes.iter().enumerate() {
                let actual = final_state.peek_final_byte(addr + i as u64);
                if actual != *expected {
                    diff(
                        &mut diffs,
                        format!("memory[{:#x}]", addr + i as u64),
                        format!("{expected:#04x}"),
                        format!("{actual:#04x}"),
                    );
                }
            }
        }
        PayloadKind::Syscall { number, args } => match trace.syscall_snapshot() {
            None => diff(&mut diffs, "terminal", "syscall", "no syscall reached"),
            Some(regs) => {
                let num_reg = payload.platform.syscall_number_reg;
                if regs[num_reg.index()] != *number {
                    diff(
                        &mut diffs,
                        num_reg.name(),
                        format!("{number:#x}"),
                        format!("{:#x}", regs[num_reg.index()]),
                    );
                }
                for (i, arg) in args.iter().enumerate() {
                    let reg = payload.platform.arg_regs[i];
                    let actual = regs[reg.index()];
                    match arg {
                        ArgSpec::Value(v) => {
                            if actual != *v {
                                diff(&mut diffs, reg.name(), format!("{v:#x}"), format!("{actual:#x}"));
                            }
                        }
                        ArgSpec::StringPtr { addr, bytes } => {
                            if actual != *addr {
                                diff(&mut diffs, reg.name(), format!("{addr:#x}"), format!("{actual:#x}"));
                            }
                            // dereference and compare, NUL terminator included
                            for (k, expected) in bytes.iter().enumerate() {
                                let got = final_state.peek_final_byte(addr + k as u64);
                                if got != *expected {
                                    diff(
                                        &mut diffs,
                                        format!("*{}[{k}]", reg.name()),
                                        format!("{expected:#04x}"),
                                        format!("{got:#04x}"),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        },
        PayloadKind::CallFunction { addr, args } => {
            let reached = match trace.terminal() {
                Some(EmuEvent::Halt { va }) => *va == *addr,
                Some(EmuEvent::Fault { kind: FaultKind::NonExecutable, va }) => *va == *addr,
                _ => false,
            };
            if !reached {
                diff(
                    &mut diffs,
                    "control",
                    format!("reach {addr:#x}"),
                    format!("{:?}", trace.terminal()),
                );
            }
            for (i, arg) in args.iter().enumerate() {
                let reg = payload.platform.arg_regs[i];
                let actual = final_state.peek_reg(reg);
                if actual != Some(arg.register_value()) {
                    diff(
                        &mut diffs,
                        reg.name(),
                        format!("{:#x}", arg.register_value()),
                        actual.map(|v| format!("{v:#x}")).unwrap_or_else(|| "<unset>".into()),
                    );
                }
            }
        }
    }
    PayloadCheck { pass: diffs.is_empty(), diffs }
}

#[derive(Debug, Clone)]
pub struct ChainValidation {
    pub per_seed: Vec<(u64, PayloadCheck)>,
    /// Passes only when every seed passes.
    pub pass: bool,
}

/// Run a layout under every configured seed; a single failure fails the
/// chain.
pub fn validate_chain(
    image: &BinaryImage,
    layout: &StackLayout,
    cfg: &EmuConfig,
    payload: &PayloadSpec,
) -> ChainValidation {
    let mut per_seed = Vec::new();
    let mut pass = true;
    for &seed in &cfg.seeds {
        let (trace, state) = run_chain(image, layout, cfg, seed);
        let check = check_payload(&trace, &state, payload);
        pass &= check.pass;
        per_seed.push((seed, check));
    }
    ChainValidation { per_seed, pass }
}

/// Map of symbols for golden trace output, if callers want the dump.
pub fn trace_dump(trace: &Trace) -> String {
    trace.to_string()
}
