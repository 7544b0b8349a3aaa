//! Concrete interpretation of the instruction subset.
//!
//! A `MachineState` materializes registers, flags, and memory lazily: the
//! first read of an unset location draws a value deterministically from the
//! state's seed, then the value persists. Two runs with the same seed and the
//! same explicit setup are therefore bit-identical, while different seeds act
//! as independent random inputs for gadget classification.

mod classify;
mod frame;
mod summary;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

pub use classify::{
    classify, classify_with, claim_holds, describe, observe, AluOp, ArithSrc, ClassifyConfig,
    GadgetClass, PivotKind, RunObs, RunSetup, TypedClaim, Verification, DEFAULT_CLASSIFY_SEEDS,
};
pub use frame::{analyze_frame, FrameError, GadgetFrame, NextSource};
pub use summary::{summarize, Access, GadgetSummary, Precondition, SummaryError};

use crate::binfront::{InstrSeq, Instruction, MemRef, Mnemonic, OpWidth, Operand, StopKind};
use crate::regs::{Flag, Reg, NUM_FLAGS, NUM_REGS};

/// SplitMix64 finalizer, the deterministic PRF behind all lazy draws.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_reg(seed: u64, r: Reg) -> u64 {
    splitmix64(seed ^ splitmix64(0x5245_4700 + r.index() as u64))
}

fn draw_flag(seed: u64, f: Flag) -> bool {
    splitmix64(seed ^ splitmix64(0x464C_4700 + f.index() as u64)) & 1 == 1
}

fn draw_mem(seed: u64, addr: u64) -> u8 {
    (splitmix64(seed ^ splitmix64(addr ^ 0x4D45_4D00_0000_0000)) & 0xFF) as u8
}

/// The deterministic byte a fresh state with `seed` would read at `addr`.
pub fn mem_draw_for(seed: u64, addr: u64) -> u8 {
    draw_mem(seed, addr)
}

#[cfg(test)]
pub(crate) fn draw_reg_probe(seed: u64, r: Reg) -> u64 {
    draw_reg(seed, r)
}

/// What backs reads of memory the program never wrote.
#[derive(Debug, Clone, Default)]
pub enum MemBacking {
    /// Every unwritten byte is a fresh deterministic draw.
    #[default]
    Random,
    /// Image regions return file bytes (zero in the .bss tail), the scratch
    /// range reads as zero, everything else draws from the seed.
    Image(Arc<ImageBacking>),
}

#[derive(Debug, Clone)]
pub struct ImageBacking {
    pub regions: Vec<(u64, u64, Vec<u8>, bool)>, // base, mem_size, bytes, writable
    pub scratch: std::ops::Range<u64>,
    pub stack: std::ops::Range<u64>,
}

impl ImageBacking {
    fn read(&self, seed: u64, addr: u64) -> u8 {
        for (base, mem_size, bytes, _) in &self.regions {
            if addr >= *base && addr < base + mem_size {
                return bytes.get((addr - base) as usize).copied().unwrap_or(0);
            }
        }
        if self.scratch.contains(&addr) {
            return 0;
        }
        draw_mem(seed, addr)
    }

    /// True when the program may store to `addr`.
    pub fn writable(&self, addr: u64) -> bool {
        if self.scratch.contains(&addr) || self.stack.contains(&addr) {
            return true;
        }
        self.regions
            .iter()
            .any(|(base, mem_size, _, writable)| *writable && addr >= *base && addr < base + mem_size)
    }
}

/// A single recorded memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemAccess {
    pub addr: u64,
    pub width: u8,
    pub value: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StepError {
    /// Reserved: the sparse memory map cannot currently fault.
    #[error("step fault")]
    StepFault,
    #[error("unsupported instruction reached the interpreter")]
    UnsupportedInstr,
}

/// Control-flow outcome of stepping one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Ret { target: u64 },
    Jump { target: u64 },
    Call { target: u64 },
    Syscall,
}

#[derive(Debug, Clone)]
pub struct MachineState {
    regs: [Option<u64>; NUM_REGS],
    flags: [Option<bool>; NUM_FLAGS],
    rip: u64,
    /// Overlay of materialized draws plus program stores.
    mem: HashMap<u64, u8>,
    /// Addresses the program stored to (subset of `mem` keys).
    stores: HashMap<u64, u8>,
    backing: MemBacking,
    seed: u64,
    pub reads_log: Vec<MemAccess>,
    pub writes_log: Vec<MemAccess>,
}

impl MachineState {
    pub fn with_seed(seed: u64) -> MachineState {
        MachineState {
            regs: [None; NUM_REGS],
            flags: [None; NUM_FLAGS],
            rip: 0,
            mem: HashMap::new(),
            stores: HashMap::new(),
            backing: MemBacking::Random,
            seed,
            reads_log: Vec::new(),
            writes_log: Vec::new(),
        }
    }

    pub fn with_backing(seed: u64, backing: MemBacking) -> MachineState {
        MachineState {
            backing,
            ..MachineState::with_seed(seed)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Read a register, drawing its initial value on first access.
    pub fn reg(&mut self, r: Reg) -> u64 {
        match self.regs[r.index()] {
            Some(v) => v,
            None => {
                let v = draw_reg(self.seed, r);
                self.regs[r.index()] = Some(v);
                v
            }
        }
    }

    pub fn set_reg(&mut self, r: Reg, v: u64) {
        self.regs[r.index()] = Some(v);
    }

    pub fn flag(&mut self, f: Flag) -> bool {
        match self.flags[f.index()] {
            Some(v) => v,
            None => {
                let v = draw_flag(self.seed, f);
                self.flags[f.index()] = Some(v);
                v
            }
        }
    }

    pub fn set_flag(&mut self, f: Flag, v: bool) {
        self.flags[f.index()] = Some(v);
    }

    pub fn rip(&self) -> u64 {
        self.rip
    }

    pub fn set_rip(&mut self, v: u64) {
        self.rip = v;
    }

    fn backing_byte(&self, addr: u64) -> u8 {
        match &self.backing {
            MemBacking::Random => draw_mem(self.seed, addr),
            MemBacking::Image(img) => img.read(self.seed, addr),
        }
    }

    pub fn mem_byte(&mut self, addr: u64) -> u8 {
        match self.mem.get(&addr) {
            Some(b) => *b,
            None => {
                let b = self.backing_byte(addr);
                self.mem.insert(addr, b);
                b
            }
        }
    }

    pub fn write_byte(&mut self, addr: u64, b: u8) {
        self.mem.insert(addr, b);
        self.stores.insert(addr, b);
    }

    /// Seed a byte of *initial* memory without marking it as a program
    /// store (counterexample replays, frame tag setup).
    pub fn plant_byte(&mut self, addr: u64, b: u8) {
        self.mem.insert(addr, b);
    }

    pub fn read_u64(&mut self, addr: u64) -> u64 {
        let mut v = 0u64;
        for i in 0..8 {
            v |= (self.mem_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    pub fn read_width(&mut self, addr: u64, w: OpWidth) -> u64 {
        let mut v = 0u64;
        for i in 0..w.bytes() {
            v |= (self.mem_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) {
        for i in 0..8 {
            self.write_byte(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
    }

    pub fn write_width(&mut self, addr: u64, v: u64, w: OpWidth) {
        for i in 0..w.bytes() {
            self.write_byte(addr.wrapping_add(i), (v >> (8 * i)) as u8);
        }
    }

    /// The value memory held at `addr` before the program ran, independent of
    /// any stores made since.
    pub fn initial_u64(&self, addr: u64) -> u64 {
        let mut v = 0u64;
        for i in 0..8 {
            v |= (self.backing_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    pub fn initial_width(&self, addr: u64, w: OpWidth) -> u64 {
        let mut v = 0u64;
        for i in 0..w.bytes() {
            v |= (self.backing_byte(addr.wrapping_add(i)) as u64) << (8 * i);
        }
        v
    }

    /// Final value, stores included, without materializing new draws.
    pub fn final_u64(&self, addr: u64) -> u64 {
        let mut v = 0u64;
        for i in 0..8 {
            let a = addr.wrapping_add(i);
            let b = self.stores.get(&a).copied().unwrap_or_else(|| self.backing_byte(a));
            v |= (b as u64) << (8 * i);
        }
        v
    }

    pub fn stores(&self) -> &HashMap<u64, u8> {
        &self.stores
    }

    /// Register value without forcing a draw.
    pub fn peek_reg(&self, r: Reg) -> Option<u64> {
        self.regs[r.index()]
    }

    /// Memory byte without materializing a fresh draw.
    pub fn peek_final_byte(&self, addr: u64) -> u8 {
        self.mem
            .get(&addr)
            .copied()
            .unwrap_or_else(|| self.backing_byte(addr))
    }

    /// Snapshot of all sixteen GPRs, drawing any still-unset ones.
    pub fn snapshot_regs(&mut self) -> [u64; NUM_REGS] {
        let mut out = [0u64; NUM_REGS];
        for r in Reg::ALL {
            out[r.index()] = self.reg(r);
        }
        out
    }

    pub fn snapshot_flags(&mut self) -> [bool; NUM_FLAGS] {
        let mut out = [false; NUM_FLAGS];
        for f in Flag::ALL {
            out[f.index()] = self.flag(f);
        }
        out
    }
}

fn effective_addr(state: &mut MachineState, m: &MemRef) -> u64 {
    let mut addr = state.reg(m.base);
    if let Some((idx, scale)) = m.index {
        addr = addr.wrapping_add(state.reg(idx).wrapping_mul(scale as u64));
    }
    addr.wrapping_add(m.disp as u64)
}

fn read_operand(state: &mut MachineState, op: &Operand, w: OpWidth) -> u64 {
    match op {
        Operand::Reg(r) => state.reg(*r) & w.mask(),
        Operand::Imm(v) => *v as u64 & w.mask(),
        Operand::Mem(m) => {
            let addr = effective_addr(state, m);
            let v = state.read_width(addr, w);
            state.reads_log.push(MemAccess {
                addr,
                width: w.bytes() as u8,
                value: v,
            });
            v
        }
    }
}

/// Writes honor x86-64 zero extension: a 32-bit destination register write
/// clears the upper half.
fn write_operand(state: &mut MachineState, op: &Operand, v: u64, w: OpWidth) {
    match op {
        Operand::Reg(r) => state.set_reg(*r, v & w.mask()),
        Operand::Mem(m) => {
            let addr = effective_addr(state, m);
            state.write_width(addr, v & w.mask(), w);
            state.writes_log.push(MemAccess {
                addr,
                width: w.bytes() as u8,
                value: v & w.mask(),
            });
        }
        Operand::Imm(_) => unreachable!("immediate destination"),
    }
}

fn sign_bit(v: u64, w: OpWidth) -> bool {
    v >> (w.bits() - 1) & 1 == 1
}

fn set_zsf(state: &mut MachineState, r: u64, w: OpWidth) {
    state.set_flag(Flag::Zf, r & w.mask() == 0);
    state.set_flag(Flag::Sf, sign_bit(r, w));
}

fn add_with_flags(state: &mut MachineState, a: u64, b: u64, w: OpWidth) -> u64 {
    let m = w.mask();
    let r = a.wrapping_add(b) & m;
    state.set_flag(Flag::Cf, (a as u128 + b as u128) > m as u128);
    state.set_flag(Flag::Of, sign_bit(a, w) == sign_bit(b, w) && sign_bit(r, w) != sign_bit(a, w));
    set_zsf(state, r, w);
    r
}

fn sub_with_flags(state: &mut MachineState, a: u64, b: u64, borrow: u64, w: OpWidth) -> u64 {
    let m = w.mask();
    let r = a.wrapping_sub(b).wrapping_sub(borrow) & m;
    state.set_flag(Flag::Cf, (a as u128) < (b as u128 + borrow as u128));
    state.set_flag(Flag::Of, sign_bit(a, w) != sign_bit(b, w) && sign_bit(r, w) != sign_bit(a, w));
    set_zsf(state, r, w);
    r
}

fn logic_flags(state: &mut MachineState, r: u64, w: OpWidth) {
    state.set_flag(Flag::Cf, false);
    state.set_flag(Flag::Of, false);
    set_zsf(state, r, w);
}

/// Execute one instruction. The caller is responsible for consuming the
/// returned control-flow outcome; `rip` has already been updated.
pub fn step(state: &mut MachineState, instr: &Instruction) -> Result<StepOutcome, StepError> {
    use Mnemonic::*;

    let w = instr.width;
    let next_va = instr.va.wrapping_add(instr.len as u64);
    state.set_rip(next_va);

    match instr.mnemonic {
        Nop => {}
        Mov => {
            let v = read_operand(state, &instr.operands[1], w);
            write_operand(state, &instr.operands[0], v, w);
        }
        Lea => {
            let Operand::Mem(m) = &instr.operands[1] else {
                return Err(StepError::UnsupportedInstr);
            };
            let addr = effective_addr(state, m);
            write_operand(state, &instr.operands[0], addr, w);
        }
        Add | Sub | And | Or | Xor | Sbb => {
            let a = read_operand(state, &instr.operands[0], w);
            let bval = read_operand(state, &instr.operands[1], w);
            let r = match instr.mnemonic {
                Add => add_with_flags(state, a, bval, w),
                Sub => sub_with_flags(state, a, bval, 0, w),
                Sbb => {
                    let cf = state.flag(Flag::Cf) as u64;
                    sub_with_flags(state, a, bval, cf, w)
                }
                And => {
                    let r = a & bval;
                    logic_flags(state, r, w);
                    r
                }
                Or => {
                    let r = a | bval;
                    logic_flags(state, r, w);
                    r
                }
                Xor => {
                    let r = a ^ bval;
                    logic_flags(state, r, w);
                    r
                }
                _ => unreachable!(),
            };
            write_operand(state, &instr.operands[0], r, w);
        }
        Inc | Dec => {
            let a = read_operand(state, &instr.operands[0], w);
            let m = w.mask();
            let r = if instr.mnemonic == Inc {
                a.wrapping_add(1) & m
            } else {
                a.wrapping_sub(1) & m
            };
            // CF untouched
            state.set_flag(
                Flag::Of,
                if instr.mnemonic == Inc {
                    !sign_bit(a, w) && sign_bit(r, w)
                } else {
                    sign_bit(a, w) && !sign_bit(r, w)
                },
            );
            set_zsf(state, r, w);
            write_operand(state, &instr.operands[0], r, w);
        }
        Neg => {
            let a = read_operand(state, &instr.operands[0], w);
            let r = a.wrapping_neg() & w.mask();
            state.set_flag(Flag::Cf, a != 0);
            state.set_flag(Flag::Of, a == 1 << (w.bits() - 1));
            set_zsf(state, r, w);
            write_operand(state, &instr.operands[0], r, w);
        }
        Xchg => {
            let a = read_operand(state, &instr.operands[0], w);
            let bv = read_operand(state, &instr.operands[1], w);
            write_operand(state, &instr.operands[0], bv, w);
            write_operand(state, &instr.operands[1], a, w);
        }
        Shl | Shr | Sar => {
            let a = read_operand(state, &instr.operands[0], w);
            let Operand::Imm(count) = instr.operands[1] else {
                return Err(StepError::UnsupportedInstr);
            };
            let count = (count as u32) & (w.bits() - 1);
            let r = if count == 0 {
                a
            } else {
                match instr.mnemonic {
                    Shl => {
                        state.set_flag(Flag::Cf, (a >> (w.bits() - count)) & 1 == 1);
                        a.wrapping_shl(count) & w.mask()
                    }
                    Shr => {
                        state.set_flag(Flag::Cf, (a >> (count - 1)) & 1 == 1);
                        a >> count
                    }
                    Sar => {
                        state.set_flag(Flag::Cf, (a >> (count - 1)) & 1 == 1);
                        match w {
                            OpWidth::W64 => ((a as i64) >> count) as u64,
                            OpWidth::W32 => (((a as u32) as i32) >> count) as u32 as u64,
                        }
                    }
                    _ => unreachable!(),
                }
            };
            if count != 0 {
                state.set_flag(Flag::Of, false);
                set_zsf(state, r, w);
            }
            write_operand(state, &instr.operands[0], r, w);
        }
        Push => {
            let v = read_operand(state, &instr.operands[0], OpWidth::W64);
            let rsp = state.reg(Reg::Rsp).wrapping_sub(8);
            state.set_reg(Reg::Rsp, rsp);
            state.write_u64(rsp, v);
            state.writes_log.push(MemAccess { addr: rsp, width: 8, value: v });
        }
        Pop => {
            let rsp = state.reg(Reg::Rsp);
            let v = state.read_u64(rsp);
            state.reads_log.push(MemAccess { addr: rsp, width: 8, value: v });
            state.set_reg(Reg::Rsp, rsp.wrapping_add(8));
            write_operand(state, &instr.operands[0], v, OpWidth::W64);
        }
        Leave => {
            let rbp = state.reg(Reg::Rbp);
            let v = state.read_u64(rbp);
            state.reads_log.push(MemAccess { addr: rbp, width: 8, value: v });
            state.set_reg(Reg::Rbp, v);
            state.set_reg(Reg::Rsp, rbp.wrapping_add(8));
        }
        Ret => {
            let rsp = state.reg(Reg::Rsp);
            let target = state.read_u64(rsp);
            state.reads_log.push(MemAccess { addr: rsp, width: 8, value: target });
            let extra = match instr.stop_kind {
                StopKind::RetImm(n) => n as u64,
                _ => 0,
            };
            state.set_reg(Reg::Rsp, rsp.wrapping_add(8 + extra));
            state.set_rip(target);
            return Ok(StepOutcome::Ret { target });
        }
        Jmp => {
            let target = match &instr.operands[0] {
                Operand::Reg(r) => state.reg(*r),
                Operand::Mem(m) => {
                    let addr = effective_addr(state, m);
                    let t = state.read_u64(addr);
                    state.reads_log.push(MemAccess { addr, width: 8, value: t });
                    t
                }
                Operand::Imm(_) => return Err(StepError::UnsupportedInstr),
            };
            state.set_rip(target);
            return Ok(StepOutcome::Jump { target });
        }
        Call => {
            let target = match &instr.operands[0] {
                Operand::Reg(r) => state.reg(*r),
                Operand::Mem(m) => {
                    let addr = effective_addr(state, m);
                    let t = state.read_u64(addr);
                    state.reads_log.push(MemAccess { addr, width: 8, value: t });
                    t
                }
                Operand::Imm(_) => return Err(StepError::UnsupportedInstr),
            };
            let rsp = state.reg(Reg::Rsp).wrapping_sub(8);
            state.set_reg(Reg::Rsp, rsp);
            state.write_u64(rsp, next_va);
            state.writes_log.push(MemAccess { addr: rsp, width: 8, value: next_va });
            state.set_rip(target);
            return Ok(StepOutcome::Call { target });
        }
        Syscall => return Ok(StepOutcome::Syscall),
    }
    Ok(StepOutcome::Continue)
}

/// Run a full instruction sequence, stopping at (and including) the first
/// control transfer. Returns the final state; `rip` holds the transfer target
/// (or the address after a syscall).
pub fn interpret(seq: &InstrSeq, mut state: MachineState) -> Result<MachineState, StepError> {
    for instr in seq.iter() {
        match step(&mut state, instr)? {
            StepOutcome::Continue => {}
            _ => break,
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfront::decode_sequence;

    fn seq(bytes: &[u8]) -> InstrSeq {
        decode_sequence(bytes, 0x1000, 16).unwrap()
    }

    #[test]
    fn pop_ret_semantics() {
        // pop rax ; ret with stack [v, n]
        let s = seq(&[0x58, 0xC3]);
        let mut st = MachineState::with_seed(7);
        let rsp0 = 0x7000_0000u64;
        st.set_reg(Reg::Rsp, rsp0);
        st.write_u64(rsp0, 0xAABB);
        st.write_u64(rsp0 + 8, 0x401000);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rax), 0xAABB);
        assert_eq!(fin.rip(), 0x401000);
        assert_eq!(fin.reg(Reg::Rsp), rsp0 + 16);
    }

    #[test]
    fn listing1_zero_case() {
        // neg rax ; sbb rax, rax ; and rax, rcx ; pop rbp ; ret
        let s = seq(&[0x48, 0xF7, 0xD8, 0x48, 0x19, 0xC0, 0x48, 0x21, 0xC8, 0x5D, 0xC3]);
        let mut st = MachineState::with_seed(3);
        st.set_reg(Reg::Rax, 0);
        st.set_reg(Reg::Rcx, 5);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rax), 0, "zero input stays zero");

        // nonzero input copies rcx
        let mut st = MachineState::with_seed(3);
        st.set_reg(Reg::Rax, 17);
        st.set_reg(Reg::Rcx, 5);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rax), 5);
    }

    #[test]
    fn deterministic_across_equal_seeds() {
        let s = seq(&[0x58, 0x5B, 0x48, 0x01, 0xD8, 0xC3]); // pop rax; pop rbx; add rax,rbx; ret
        let run = |seed| {
            let mut st = MachineState::with_seed(seed);
            st.set_reg(Reg::Rsp, 0x7000_0000);
            let mut f = interpret(&s, st).unwrap();
            (f.snapshot_regs(), f.rip())
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42).0, run(43).0);
    }

    #[test]
    fn w32_write_zero_extends() {
        // mov ecx, [rax] then check upper half cleared
        let s = seq(&[0x8B, 0x08, 0xC3]);
        let mut st = MachineState::with_seed(1);
        st.set_reg(Reg::Rax, 0x5000);
        st.set_reg(Reg::Rcx, 0xFFFF_FFFF_FFFF_FFFF);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        st.write_u64(0x5000, 0x1122_3344_5566_7788);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rcx), 0x5566_7788);
    }

    #[test]
    fn ret_imm_adjusts_rsp() {
        let s = seq(&[0x58, 0xC2, 0x08, 0x00]); // pop rax ; ret 8
        let mut st = MachineState::with_seed(1);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rsp), 0x7000_0000 + 24);
    }

    #[test]
    fn xchg_swaps() {
        let s = seq(&[0x48, 0x94, 0xC3]); // xchg rax, rsp ; ret
        let mut st = MachineState::with_seed(1);
        st.set_reg(Reg::Rax, 0x1111);
        st.set_reg(Reg::Rsp, 0x2222);
        let mut fin = interpret(&s, st).unwrap();
        assert_eq!(fin.reg(Reg::Rax), 0x2222);
        // ret popped from the new stack at 0x1111 and bumped it
        assert_eq!(fin.reg(Reg::Rsp), 0x1111 + 8);
    }

    #[test]
    fn push_ret_jumps_to_register() {
        let s = seq(&[0x50, 0xC3]); // push rax ; ret
        let mut st = MachineState::with_seed(1);
        st.set_reg(Reg::Rax, 0xCAFE);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        let fin = interpret(&s, st).unwrap();
        assert_eq!(fin.rip(), 0xCAFE);
    }

    #[test]
    fn neg_sets_cf_on_nonzero() {
        let s = seq(&[0x48, 0xF7, 0xD8, 0xC3]); // neg rax ; ret
        let mut st = MachineState::with_seed(1);
        st.set_reg(Reg::Rax, 1);
        st.set_reg(Reg::Rsp, 0x7000_0000);
        let mut fin = interpret(&s, st).unwrap();
        assert!(fin.flag(Flag::Cf));
        assert_eq!(fin.reg(Reg::Rax), u64::MAX);
    }
}
