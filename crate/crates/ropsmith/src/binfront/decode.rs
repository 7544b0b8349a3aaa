//! Decoder for the supported x86-64 instruction subset.
//!
//! 64-bit mode only, REX-aware. Instructions outside the subset decode to
//! `DecodeError::Unsupported`; the scanner treats those offsets as dead.
//! Operand width is 64-bit with REX.W and 32-bit without (writes to a 32-bit
//! register zero-extend into the full register, as the hardware does).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regs::{Flag, Reg, RegSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// Valid-looking bytes outside the supported subset.
    #[error("unsupported instruction")]
    Unsupported,
    /// Recognized privileged instruction (hlt, in/out, cli/sti).
    #[error("privileged instruction")]
    Privileged,
    /// Byte stream ends in the middle of an instruction.
    #[error("truncated instruction")]
    Truncated,
}

/// Operand width of the ALU / mov family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpWidth {
    W32,
    W64,
}

impl OpWidth {
    pub fn bytes(self) -> u64 {
        match self {
            OpWidth::W32 => 4,
            OpWidth::W64 => 8,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            OpWidth::W32 => 32,
            OpWidth::W64 => 64,
        }
    }

    pub fn mask(self) -> u64 {
        match self {
            OpWidth::W32 => 0xFFFF_FFFF,
            OpWidth::W64 => u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mnemonic {
    Ret,
    Pop,
    Push,
    Mov,
    Lea,
    Add,
    Sub,
    And,
    Or,
    Xor,
    Sbb,
    Inc,
    Dec,
    Neg,
    Xchg,
    Shl,
    Shr,
    Sar,
    Nop,
    Leave,
    Jmp,
    Call,
    Syscall,
}

impl Mnemonic {
    pub fn name(self) -> &'static str {
        match self {
            Mnemonic::Ret => "ret",
            Mnemonic::Pop => "pop",
            Mnemonic::Push => "push",
            Mnemonic::Mov => "mov",
            Mnemonic::Lea => "lea",
            Mnemonic::Add => "add",
            Mnemonic::Sub => "sub",
            Mnemonic::And => "and",
            Mnemonic::Or => "or",
            Mnemonic::Xor => "xor",
            Mnemonic::Sbb => "sbb",
            Mnemonic::Inc => "inc",
            Mnemonic::Dec => "dec",
            Mnemonic::Neg => "neg",
            Mnemonic::Xchg => "xchg",
            Mnemonic::Shl => "shl",
            Mnemonic::Shr => "shr",
            Mnemonic::Sar => "sar",
            Mnemonic::Nop => "nop",
            Mnemonic::Leave => "leave",
            Mnemonic::Jmp => "jmp",
            Mnemonic::Call => "call",
            Mnemonic::Syscall => "syscall",
        }
    }
}

/// Memory reference: base + index*scale + disp. No RIP-relative or
/// base-less forms, no segment overrides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub base: Reg,
    pub index: Option<(Reg, u8)>,
    pub disp: i64,
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.base)?;
        if let Some((idx, scale)) = self.index {
            write!(f, "+{idx}*{scale}")?;
        }
        if self.disp > 0 {
            write!(f, "+{:#x}", self.disp)?;
        } else if self.disp < 0 {
            write!(f, "-{:#x}", -self.disp)?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
    Mem(MemRef),
}

/// How an instruction ends a gadget, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopKind {
    None,
    RetNear,
    RetImm(u16),
    JmpReg,
    JmpMem,
    CallReg,
    CallMem,
    Syscall,
}

/// One decoded instruction of the supported subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub va: u64,
    pub len: u8,
    pub mnemonic: Mnemonic,
    pub width: OpWidth,
    pub operands: Vec<Operand>,
    pub reads: RegSet,
    pub writes: RegSet,
    pub flag_reads: Vec<Flag>,
    pub flag_writes: Vec<Flag>,
    pub stop_kind: StopKind,
}

impl Instruction {
    pub fn is_control_transfer(&self) -> bool {
        self.stop_kind != StopKind::None
    }

    fn reg_name(&self, r: Reg) -> &'static str {
        match self.width {
            OpWidth::W32 => r.name32(),
            OpWidth::W64 => r.name(),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // push/pop/jmp/call operate on full registers regardless of REX.W
        let full_width = matches!(
            self.mnemonic,
            Mnemonic::Push | Mnemonic::Pop | Mnemonic::Jmp | Mnemonic::Call
        );
        f.write_str(self.mnemonic.name())?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            match op {
                Operand::Reg(r) => f.write_str(if full_width {
                    r.name()
                } else {
                    self.reg_name(*r)
                })?,
                Operand::Imm(v) => {
                    if *v < 0 {
                        write!(f, "-{:#x}", v.wrapping_neg())?
                    } else {
                        write!(f, "{:#x}", v)?
                    }
                }
                Operand::Mem(m) => write!(f, "{m}")?,
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, DecodeError> {
        let b = *self.bytes.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn i8(&mut self) -> Result<i64, DecodeError> {
        Ok(self.u8()? as i8 as i64)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let lo = self.u8()? as u16;
        let hi = self.u8()? as u16;
        Ok(lo | (hi << 8))
    }

    fn i32(&mut self) -> Result<i64, DecodeError> {
        let mut v = 0u32;
        for i in 0..4 {
            v |= (self.u8()? as u32) << (8 * i);
        }
        Ok(v as i32 as i64)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        let mut v = 0u64;
        for i in 0..8 {
            v |= (self.u8()? as u64) << (8 * i);
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Default)]
struct Rex {
    w: bool,
    r: bool,
    x: bool,
    b: bool,
}

/// Register-or-memory side of a ModRM byte.
enum Rm {
    Reg(Reg),
    Mem(MemRef),
}

fn modrm(cur: &mut Cursor, rex: Rex) -> Result<(Reg, Rm), DecodeError> {
    let byte = cur.u8()?;
    let mode = byte >> 6;
    let reg_bits = ((byte >> 3) & 7) as usize | ((rex.r as usize) << 3);
    let rm_bits = (byte & 7) as usize;
    let reg = Reg::from_index(reg_bits).unwrap();

    if mode == 3 {
        let rm = Reg::from_index(rm_bits | ((rex.b as usize) << 3)).unwrap();
        return Ok((reg, Rm::Reg(rm)));
    }

    // Memory forms.
    let (base, index) = if rm_bits == 4 {
        // SIB byte.
        let sib = cur.u8()?;
        let scale = 1u8 << (sib >> 6);
        let idx_bits = ((sib >> 3) & 7) as usize | ((rex.x as usize) << 3);
        let base_bits = (sib & 7) as usize | ((rex.b as usize) << 3);
        if (sib & 7) == 5 && mode == 0 {
            // disp32 with no base register
            return Err(DecodeError::Unsupported);
        }
        let index = if idx_bits == 4 {
            None // rsp encoding means "no index"
        } else {
            Some((Reg::from_index(idx_bits).unwrap(), scale))
        };
        (Reg::from_index(base_bits).unwrap(), index)
    } else {
        if rm_bits == 5 && mode == 0 {
            // RIP-relative addressing, outside the subset
            return Err(DecodeError::Unsupported);
        }
        (Reg::from_index(rm_bits | ((rex.b as usize) << 3)).unwrap(), None)
    };

    let disp = match mode {
        0 => 0,
        1 => cur.i8()?,
        2 => cur.i32()?,
        _ => unreachable!(),
    };
    Ok((reg, Rm::Mem(MemRef { base, index, disp })))
}

fn width(rex: Rex) -> OpWidth {
    if rex.w {
        OpWidth::W64
    } else {
        OpWidth::W32
    }
}

struct Builder {
    va: u64,
    mnemonic: Mnemonic,
    width: OpWidth,
    operands: Vec<Operand>,
    flag_reads: Vec<Flag>,
    flag_writes: Vec<Flag>,
    stop_kind: StopKind,
}

impl Builder {
    fn new(va: u64, mnemonic: Mnemonic, width: OpWidth) -> Builder {
        Builder {
            va,
            mnemonic,
            width,
            operands: Vec::new(),
            flag_reads: Vec::new(),
            flag_writes: Vec::new(),
            stop_kind: StopKind::None,
        }
    }

    fn op(mut self, o: Operand) -> Builder {
        self.operands.push(o);
        self
    }

    fn rm(self, rm: Rm) -> Builder {
        match rm {
            Rm::Reg(r) => self.op(Operand::Reg(r)),
            Rm::Mem(m) => self.op(Operand::Mem(m)),
        }
    }

    fn stop(mut self, k: StopKind) -> Builder {
        self.stop_kind = k;
        self
    }

    fn arith_flags(mut self) -> Builder {
        self.flag_writes = vec![Flag::Cf, Flag::Zf, Flag::Sf, Flag::Of];
        self
    }

    fn finish(mut self, len: usize) -> Instruction {
        use Mnemonic::*;

        match self.mnemonic {
            Sbb => self.flag_reads.push(Flag::Cf),
            // inc/dec leave CF untouched
            Inc | Dec => self.flag_writes = vec![Flag::Zf, Flag::Sf, Flag::Of],
            _ => {}
        }

        let mut reads = RegSet::EMPTY;
        let mut writes = RegSet::EMPTY;
        let note_mem = |m: &MemRef, reads: &mut RegSet| {
            reads.insert(m.base);
            if let Some((idx, _)) = m.index {
                reads.insert(idx);
            }
        };
        match self.mnemonic {
            Ret => reads.insert(Reg::Rsp),
            Pop => {
                reads.insert(Reg::Rsp);
                writes.insert(Reg::Rsp);
                if let Operand::Reg(r) = self.operands[0] {
                    writes.insert(r);
                }
            }
            Push => {
                reads.insert(Reg::Rsp);
                writes.insert(Reg::Rsp);
                if let Operand::Reg(r) = self.operands[0] {
                    reads.insert(r);
                }
            }
            Leave => {
                reads.insert(Reg::Rbp);
                writes.insert(Reg::Rbp);
                writes.insert(Reg::Rsp);
            }
            Syscall | Nop => {}
            Mov | Lea => {
                match &self.operands[0] {
                    Operand::Reg(r) => writes.insert(*r),
                    Operand::Mem(m) => note_mem(m, &mut reads),
                    Operand::Imm(_) => unreachable!(),
                }
                match &self.operands[1] {
                    Operand::Reg(r) => reads.insert(*r),
                    Operand::Mem(m) => note_mem(m, &mut reads),
                    Operand::Imm(_) => {}
                }
            }
            Add | Sub | And | Or | Xor | Sbb | Shl | Shr | Sar => {
                match &self.operands[0] {
                    Operand::Reg(r) => {
                        reads.insert(*r);
                        writes.insert(*r);
                    }
                    Operand::Mem(m) => note_mem(m, &mut reads),
                    Operand::Imm(_) => unreachable!(),
                }
                match &self.operands[1] {
                    Operand::Reg(r) => reads.insert(*r),
                    Operand::Mem(m) => note_mem(m, &mut reads),
                    Operand::Imm(_) => {}
                }
            }
            Inc | Dec | Neg => {
                if let Operand::Reg(r) = self.operands[0] {
                    reads.insert(r);
                    writes.insert(r);
                }
            }
            Xchg => {
                for op in &self.operands {
                    if let Operand::Reg(r) = op {
                        reads.insert(*r);
                        writes.insert(*r);
                    }
                }
            }
            Jmp | Call => match &self.operands[0] {
                Operand::Reg(r) => reads.insert(*r),
                Operand::Mem(m) => note_mem(m, &mut reads),
                Operand::Imm(_) => unreachable!(),
            },
        }
        if matches!(self.mnemonic, Ret) || matches!(self.stop_kind, StopKind::CallReg | StopKind::CallMem) {
            writes.insert(Reg::Rsp);
        }
        if matches!(self.stop_kind, StopKind::CallReg | StopKind::CallMem) {
            reads.insert(Reg::Rsp);
        }

        Instruction {
            va: self.va,
            len: len as u8,
            mnemonic: self.mnemonic,
            width: self.width,
            operands: self.operands,
            reads,
            writes,
            flag_reads: self.flag_reads,
            flag_writes: self.flag_writes,
            stop_kind: self.stop_kind,
        }
    }
}

/// Decode one instruction at `offset` within `bytes`, labelling it with `va`.
pub fn decode_instruction(bytes: &[u8], offset: usize, va: u64) -> Result<Instruction, DecodeError> {
    if offset >= bytes.len() {
        return Err(DecodeError::Truncated);
    }
    let window = &bytes[offset..];
    let mut cur = Cursor { bytes: window, pos: 0 };

    // No legacy prefixes. 66 c2/c3 encodes retw, which truncates rip to 16
    // bits; like far returns it is recognized but never a usable gadget.
    let first = cur.u8()?;
    if first == 0x66 {
        return Err(DecodeError::Unsupported);
    }

    let mut rex = Rex::default();
    let opcode = if (0x40..=0x4F).contains(&first) {
        rex = Rex {
            w: first & 8 != 0,
            r: first & 4 != 0,
            x: first & 2 != 0,
            b: first & 1 != 0,
        };
        cur.u8()?
    } else {
        first
    };

    let w = width(rex);
    let b = |mn, wd| Builder::new(va, mn, wd);

    let instr = match opcode {
        0xC3 => b(Mnemonic::Ret, OpWidth::W64).stop(StopKind::RetNear),
        0xC2 => {
            let imm = cur.u16()?;
            b(Mnemonic::Ret, OpWidth::W64)
                .op(Operand::Imm(imm as i64))
                .stop(StopKind::RetImm(imm))
        }
        // far returns are recognized stop bytes but never valid gadget bodies
        0xCB | 0xCA => return Err(DecodeError::Unsupported),
        0x50..=0x57 => {
            let r = Reg::from_index((opcode - 0x50) as usize | ((rex.b as usize) << 3)).unwrap();
            b(Mnemonic::Push, OpWidth::W64).op(Operand::Reg(r))
        }
        0x58..=0x5F => {
            let r = Reg::from_index((opcode - 0x58) as usize | ((rex.b as usize) << 3)).unwrap();
            b(Mnemonic::Pop, OpWidth::W64).op(Operand::Reg(r))
        }
        0x90 if !rex.b => b(Mnemonic::Nop, OpWidth::W64),
        0x90..=0x97 => {
            let r = Reg::from_index((opcode - 0x90) as usize | ((rex.b as usize) << 3)).unwrap();
            b(Mnemonic::Xchg, w).op(Operand::Reg(Reg::Rax)).op(Operand::Reg(r))
        }
        0x87 => {
            let (reg, rm) = modrm(&mut cur, rex)?;
            match rm {
                Rm::Reg(r) => b(Mnemonic::Xchg, w).op(Operand::Reg(r)).op(Operand::Reg(reg)),
                Rm::Mem(_) => return Err(DecodeError::Unsupported),
            }
        }
        0x89 => {
            let (reg, rm) = modrm(&mut cur, rex)?;
            b(Mnemonic::Mov, w).rm(rm).op(Operand::Reg(reg))
        }
        0x8B => {
            let (reg, rm) = modrm(&mut cur, rex)?;
            b(Mnemonic::Mov, w).op(Operand::Reg(reg)).rm(rm)
        }
        0x8D => {
            let (reg, rm) = modrm(&mut cur, rex)?;
            match rm {
                Rm::Mem(m) => b(Mnemonic::Lea, w).op(Operand::Reg(reg)).op(Operand::Mem(m)),
                Rm::Reg(_) => return Err(DecodeError::Unsupported),
            }
        }
        0xC7 => {
            let (ext, rm) = modrm(&mut cur, rex)?;
            if ext.index() != 0 {
                return Err(DecodeError::Unsupported);
            }
            let imm = cur.i32()?;
            b(Mnemonic::Mov, w).rm(rm).op(Operand::Imm(imm))
        }
        0xB8..=0xBF => {
            let r = Reg::from_index((opcode - 0xB8) as usize | ((rex.b as usize) << 3)).unwrap();
            let imm = if rex.w { cur.u64()? as i64 } else { cur.i32()? & 0xFFFF_FFFF };
            b(Mnemonic::Mov, w).op(Operand::Reg(r)).op(Operand::Imm(imm))
        }
        0x01 | 0x03 | 0x09 | 0x0B | 0x19 | 0x1B | 0x21 | 0x23 | 0x29 | 0x2B | 0x31 | 0x33 => {
            let mn = match opcode & 0xF8 {
                0x00 => Mnemonic::Add,
                0x08 => Mnemonic::Or,
                0x18 => Mnemonic::Sbb,
                0x20 => Mnemonic::And,
                0x28 => Mnemonic::Sub,
                0x30 => Mnemonic::Xor,
                _ => unreachable!(),
            };
            let (reg, rm) = modrm(&mut cur, rex)?;
            if opcode & 2 == 0 {
                // op r/m, r
                if matches!(mn, Mnemonic::Sbb) && matches!(rm, Rm::Mem(_)) {
                    return Err(DecodeError::Unsupported);
                }
                b(mn, w).rm(rm).op(Operand::Reg(reg)).arith_flags()
            } else {
                // op r, r/m
                if matches!(mn, Mnemonic::Sbb) && matches!(rm, Rm::Mem(_)) {
                    return Err(DecodeError::Unsupported);
                }
                b(mn, w).op(Operand::Reg(reg)).rm(rm).arith_flags()
            }
        }
        0x81 | 0x83 => {
            let (ext, rm) = modrm(&mut cur, rex)?;
            let mn = match ext.index() {
                0 => Mnemonic::Add,
                1 => Mnemonic::Or,
                3 => Mnemonic::Sbb,
                4 => Mnemonic::And,
                5 => Mnemonic::Sub,
                6 => Mnemonic::Xor,
                _ => return Err(DecodeError::Unsupported),
            };
            let rm = match rm {
                Rm::Reg(r) => r,
                Rm::Mem(_) => return Err(DecodeError::Unsupported),
            };
            let imm = if opcode == 0x81 { cur.i32()? } else { cur.i8()? };
            b(mn, w).op(Operand::Reg(rm)).op(Operand::Imm(imm)).arith_flags()
        }
        0xF7 => {
            let (ext, rm) = modrm(&mut cur, rex)?;
            if ext.index() != 3 {
                return Err(DecodeError::Unsupported);
            }
            match rm {
                Rm::Reg(r) => b(Mnemonic::Neg, w).op(Operand::Reg(r)).arith_flags(),
                Rm::Mem(_) => return Err(DecodeError::Unsupported),
            }
        }
        0xFF => {
            let (ext, rm) = modrm(&mut cur, rex)?;
            match (ext.index(), rm) {
                (0, Rm::Reg(r)) => b(Mnemonic::Inc, w).op(Operand::Reg(r)).arith_flags(),
                (1, Rm::Reg(r)) => b(Mnemonic::Dec, w).op(Operand::Reg(r)).arith_flags(),
                (2, Rm::Reg(r)) => b(Mnemonic::Call, OpWidth::W64)
                    .op(Operand::Reg(r))
                    .stop(StopKind::CallReg),
                (2, Rm::Mem(m)) => b(Mnemonic::Call, OpWidth::W64)
                    .op(Operand::Mem(m))
                    .stop(StopKind::CallMem),
                (4, Rm::Reg(r)) => b(Mnemonic::Jmp, OpWidth::W64)
                    .op(Operand::Reg(r))
                    .stop(StopKind::JmpReg),
                (4, Rm::Mem(m)) => b(Mnemonic::Jmp, OpWidth::W64)
                    .op(Operand::Mem(m))
                    .stop(StopKind::JmpMem),
                _ => return Err(DecodeError::Unsupported),
            }
        }
        0xC1 => {
            let (ext, rm) = modrm(&mut cur, rex)?;
            let mn = match ext.index() {
                4 => Mnemonic::Shl,
                5 => Mnemonic::Shr,
                7 => Mnemonic::Sar,
                _ => return Err(DecodeError::Unsupported),
            };
            let rm = match rm {
                Rm::Reg(r) => r,
                Rm::Mem(_) => return Err(DecodeError::Unsupported),
            };
            let imm = cur.u8()? as i64;
            b(mn, w).op(Operand::Reg(rm)).op(Operand::Imm(imm)).arith_flags()
        }
        0xC9 => b(Mnemonic::Leave, OpWidth::W64),
        0x0F => match cur.u8()? {
            0x05 => b(Mnemonic::Syscall, OpWidth::W64).stop(StopKind::Syscall),
            _ => return Err(DecodeError::Unsupported),
        },
        0xF4 | 0xFA | 0xFB | 0xE4..=0xE7 | 0xEC..=0xEF => return Err(DecodeError::Privileged),
        _ => return Err(DecodeError::Unsupported),
    };

    let len = cur.pos;
    debug_assert!((1..=15).contains(&len));
    Ok(instr.finish(len))
}

/// A decoded straight-line sequence ending in a control transfer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstrSeq(pub Vec<Instruction>);

impl InstrSeq {
    pub fn terminator(&self) -> &Instruction {
        self.0.last().expect("sequence is never empty")
    }

    pub fn byte_len(&self) -> usize {
        self.0.iter().map(|i| i.len as usize).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Instruction> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_w32(&self) -> bool {
        self.0.iter().any(|i| {
            i.width == OpWidth::W32
                && !matches!(
                    i.mnemonic,
                    Mnemonic::Push | Mnemonic::Pop | Mnemonic::Nop | Mnemonic::Ret
                )
        })
    }
}

impl fmt::Display for InstrSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, instr) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ; ")?;
            }
            write!(f, "{instr}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SeqError {
    #[error("undecodable instruction at offset {0}")]
    Undecodable(usize),
    #[error("no control transfer within the instruction budget")]
    NoTerminator,
}

/// Decode consecutive instructions starting at the beginning of `bytes`,
/// stopping inclusively at the first control transfer.
pub fn decode_sequence(bytes: &[u8], start_va: u64, max_insns: usize) -> Result<InstrSeq, SeqError> {
    assert!(max_insns >= 1);
    let mut out = Vec::new();
    let mut off = 0usize;
    while out.len() < max_insns {
        let instr =
            decode_instruction(bytes, off, start_va + off as u64).map_err(|_| SeqError::Undecodable(off))?;
        off += instr.len as usize;
        let stop = instr.is_control_transfer();
        out.push(instr);
        if stop {
            return Ok(InstrSeq(out));
        }
    }
    Err(SeqError::NoTerminator)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec(bytes: &[u8]) -> Instruction {
        decode_instruction(bytes, 0, 0x1000).unwrap()
    }

    #[test]
    fn ret_near() {
        let i = dec(&[0xC3]);
        assert_eq!(i.mnemonic, Mnemonic::Ret);
        assert_eq!(i.len, 1);
        assert_eq!(i.stop_kind, StopKind::RetNear);
        assert!(i.is_control_transfer());
    }

    #[test]
    fn ret_imm16() {
        let i = dec(&[0xC2, 0x08, 0x00]);
        assert_eq!(i.mnemonic, Mnemonic::Ret);
        assert_eq!(i.len, 3);
        assert_eq!(i.stop_kind, StopKind::RetImm(8));
    }

    #[test]
    fn pop_rdi() {
        let i = dec(&[0x5F]);
        assert_eq!(i.mnemonic, Mnemonic::Pop);
        assert_eq!(i.len, 1);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rdi)]);
        assert_eq!(i.stop_kind, StopKind::None);
        assert_eq!(i.to_string(), "pop rdi");
    }

    #[test]
    fn truncated() {
        assert_eq!(decode_instruction(&[0xFF], 0, 0), Err(DecodeError::Truncated));
        assert_eq!(decode_instruction(&[0xC2, 0x08], 0, 0), Err(DecodeError::Truncated));
        assert_eq!(decode_instruction(&[0x48], 0, 0), Err(DecodeError::Truncated));
    }

    #[test]
    fn far_ret_rejected() {
        assert_eq!(decode_instruction(&[0xCB], 0, 0), Err(DecodeError::Unsupported));
        assert_eq!(decode_instruction(&[0xCA, 0x08, 0x00], 0, 0), Err(DecodeError::Unsupported));
    }

    #[test]
    fn retw_rejected() {
        // 66 c3 is retw: rip truncates to 16 bits, never chainable
        assert_eq!(decode_instruction(&[0x66, 0xC3], 0, 0), Err(DecodeError::Unsupported));
        assert_eq!(
            decode_instruction(&[0x66, 0xC2, 0x08, 0x00], 0, 0),
            Err(DecodeError::Unsupported)
        );
    }

    #[test]
    fn privileged_distinct() {
        assert_eq!(decode_instruction(&[0xF4], 0, 0), Err(DecodeError::Privileged));
    }

    #[test]
    fn rex_pop_r15() {
        let i = dec(&[0x41, 0x5F]);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::R15)]);
        assert_eq!(i.len, 2);
        assert_eq!(i.to_string(), "pop r15");
    }

    #[test]
    fn mov_reg_reg() {
        // 48 89 d8 = mov rax, rbx
        let i = dec(&[0x48, 0x89, 0xD8]);
        assert_eq!(i.mnemonic, Mnemonic::Mov);
        assert_eq!(i.width, OpWidth::W64);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rax), Operand::Reg(Reg::Rbx)]);
        assert_eq!(i.to_string(), "mov rax, rbx");
    }

    #[test]
    fn mov_load_disp8() {
        // 48 8b 42 02 = mov rax, [rdx+2]
        let i = dec(&[0x48, 0x8B, 0x42, 0x02]);
        assert_eq!(i.mnemonic, Mnemonic::Mov);
        assert_eq!(
            i.operands,
            vec![
                Operand::Reg(Reg::Rax),
                Operand::Mem(MemRef { base: Reg::Rdx, index: None, disp: 2 })
            ]
        );
        assert_eq!(i.len, 4);
    }

    #[test]
    fn mov_store() {
        // 48 89 02 = mov [rdx], rax
        let i = dec(&[0x48, 0x89, 0x02]);
        assert_eq!(
            i.operands,
            vec![
                Operand::Mem(MemRef { base: Reg::Rdx, index: None, disp: 0 }),
                Operand::Reg(Reg::Rax)
            ]
        );
    }

    #[test]
    fn mov_imm32_no_rex() {
        // b8 c3 00 00 00 = mov eax, 0xc3
        let i = dec(&[0xB8, 0xC3, 0x00, 0x00, 0x00]);
        assert_eq!(i.width, OpWidth::W32);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rax), Operand::Imm(0xC3)]);
        assert_eq!(i.len, 5);
        assert_eq!(i.to_string(), "mov eax, 0xc3");
    }

    #[test]
    fn mov_imm64() {
        let mut bytes = vec![0x48, 0xB8];
        bytes.extend_from_slice(&0x1122334455667788u64.to_le_bytes());
        let i = dec(&bytes);
        assert_eq!(i.len, 10);
        assert_eq!(i.operands[1], Operand::Imm(0x1122334455667788));
    }

    #[test]
    fn add_reg_reg() {
        // 48 01 d8 = add rax, rbx
        let i = dec(&[0x48, 0x01, 0xD8]);
        assert_eq!(i.mnemonic, Mnemonic::Add);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rax), Operand::Reg(Reg::Rbx)]);
        assert_eq!(i.flag_writes, vec![Flag::Cf, Flag::Zf, Flag::Sf, Flag::Of]);
    }

    #[test]
    fn add_mem_reg() {
        // 48 01 18 = add [rax], rbx
        let i = dec(&[0x48, 0x01, 0x18]);
        assert_eq!(
            i.operands,
            vec![
                Operand::Mem(MemRef { base: Reg::Rax, index: None, disp: 0 }),
                Operand::Reg(Reg::Rbx)
            ]
        );
    }

    #[test]
    fn w32_load_and_add() {
        // 8b 08 = mov ecx, [rax] ; 01 cb = add ebx, ecx
        let load = dec(&[0x8B, 0x08]);
        assert_eq!(load.width, OpWidth::W32);
        assert_eq!(load.to_string(), "mov ecx, [rax]");
        let add = dec(&[0x01, 0xCB]);
        assert_eq!(add.width, OpWidth::W32);
        assert_eq!(add.to_string(), "add ebx, ecx");
    }

    #[test]
    fn listing1_pieces() {
        assert_eq!(dec(&[0x48, 0xF7, 0xD8]).to_string(), "neg rax");
        assert_eq!(dec(&[0x48, 0x19, 0xC0]).to_string(), "sbb rax, rax");
        assert_eq!(dec(&[0x48, 0x21, 0xC8]).to_string(), "and rax, rcx");
        let sbb = dec(&[0x48, 0x19, 0xC0]);
        assert_eq!(sbb.flag_reads, vec![Flag::Cf]);
    }

    #[test]
    fn shifts() {
        // 48 c1 e0 08 = shl rax, 8
        let i = dec(&[0x48, 0xC1, 0xE0, 0x08]);
        assert_eq!(i.mnemonic, Mnemonic::Shl);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rax), Operand::Imm(8)]);
    }

    #[test]
    fn inc_dec_preserve_cf() {
        let i = dec(&[0x48, 0xFF, 0xC0]); // inc rax
        assert_eq!(i.mnemonic, Mnemonic::Inc);
        assert!(!i.flag_writes.contains(&Flag::Cf));
    }

    #[test]
    fn indirect_control() {
        let jr = dec(&[0xFF, 0xE0]); // jmp rax
        assert_eq!(jr.stop_kind, StopKind::JmpReg);
        let jm = dec(&[0xFF, 0x60, 0x08]); // jmp [rax+8]
        assert_eq!(jm.stop_kind, StopKind::JmpMem);
        let cr = dec(&[0xFF, 0xD0]); // call rax
        assert_eq!(cr.stop_kind, StopKind::CallReg);
        let cm = dec(&[0xFF, 0x13]); // call [rbx]
        assert_eq!(cm.stop_kind, StopKind::CallMem);
        let sc = dec(&[0x0F, 0x05]);
        assert_eq!(sc.stop_kind, StopKind::Syscall);
    }

    #[test]
    fn xchg_rax_forms() {
        let i = dec(&[0x48, 0x94]); // xchg rax, rsp
        assert_eq!(i.mnemonic, Mnemonic::Xchg);
        assert_eq!(i.operands, vec![Operand::Reg(Reg::Rax), Operand::Reg(Reg::Rsp)]);
        // plain 0x90 stays nop
        assert_eq!(dec(&[0x90]).mnemonic, Mnemonic::Nop);
    }

    #[test]
    fn rip_relative_rejected() {
        // 48 8b 05 xx xx xx xx = mov rax, [rip+disp32]
        assert_eq!(
            decode_instruction(&[0x48, 0x8B, 0x05, 0, 0, 0, 0], 0, 0),
            Err(DecodeError::Unsupported)
        );
    }

    #[test]
    fn sequence_examples() {
        let s = decode_sequence(&[0x58, 0xC3], 0x1000, 5).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.to_string(), "pop rax ; ret");

        let s = decode_sequence(&[0x48, 0x01, 0xD8, 0xC3], 0x1000, 5).unwrap();
        assert_eq!(s.to_string(), "add rax, rbx ; ret");

        // stops at the first control transfer
        let s = decode_sequence(&[0xC3, 0xC3], 0x1000, 5).unwrap();
        assert_eq!(s.len(), 1);

        assert_eq!(decode_sequence(&[0x58, 0x58], 0, 2), Err(SeqError::NoTerminator));
        assert_eq!(decode_sequence(&[0x58, 0x06, 0xC3], 0, 5), Err(SeqError::Undecodable(1)));
    }

    #[test]
    fn redecoding_is_deterministic() {
        let blobs: &[&[u8]] = &[
            &[0xC3],
            &[0x41, 0x5F],
            &[0x48, 0x89, 0xD8],
            &[0x8B, 0x08],
            &[0x48, 0xC1, 0xE0, 0x08],
        ];
        for b in blobs {
            let a = decode_instruction(b, 0, 0x400000).unwrap();
            let again = decode_instruction(b, 0, 0x400000).unwrap();
            assert_eq!(a, again);
            assert_eq!(a.len as usize, b.len());
        }
    }
}
