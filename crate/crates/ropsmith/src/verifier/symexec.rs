//! Symbolic execution of gadget instructions into SSA bitvector formulas.
//!
//! Registers start as free 64-bit variables, memory as a free byte array.
//! Every destination written by an instruction gets a fresh variable defined
//! by an equality formula, so the formula list reads like the gadget's SSA
//! trace. Multi-byte memory accesses expand to concats of byte selects in
//! little-endian order.

use thiserror::Error;

use crate::binfront::{InstrSeq, Instruction, MemRef, Mnemonic, OpWidth, Operand, StopKind};
use crate::gadgetscan::Gadget;
use crate::regs::{Reg, NUM_REGS};
use crate::sym::{Arena, Sort, TermId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SymExecError {
    #[error("unsupported instruction for symbolic execution")]
    UnsupportedInstr,
}

/// Register/flag/memory bindings at one point in time.
#[derive(Debug, Clone)]
pub struct SymState {
    pub regs: [TermId; NUM_REGS],
    pub mem: TermId,
    pub rip: TermId,
    /// CF is the only flag any subset instruction reads.
    pub cf: Option<TermId>,
}

/// Result of symbolically executing a gadget.
#[derive(Debug, Clone)]
pub struct SymExec {
    pub arena: Arena,
    pub init: SymState,
    pub fin: SymState,
    /// SSA definitions in execution order: variable index = term.
    pub formulas: Vec<(u32, TermId)>,
    /// Variable index of each initial register, in `Reg` order.
    pub reg_vars: [u32; NUM_REGS],
    /// Variable index of the initial memory array.
    pub mem_var: u32,
    /// Variable index of the initial CF, if any instruction read it fresh.
    pub cf_var: Option<u32>,
}

struct Engine {
    arena: Arena,
    regs: [TermId; NUM_REGS],
    mem: TermId,
    rip: TermId,
    cf: Option<TermId>,
    cf_var: Option<u32>,
    formulas: Vec<(u32, TermId)>,
    next_phi: u32,
}

impl Engine {
    fn fresh(&mut self, sort: Sort) -> (u32, TermId) {
        let idx = self.arena.vars().len() as u32;
        let name = format!("phi{}", self.next_phi);
        self.next_phi += 1;
        let t = self.arena.fresh_var(name, sort);
        (idx, t)
    }

    /// SSA definition: create a fresh variable equal to `term`.
    fn define(&mut self, sort: Sort, term: TermId) -> TermId {
        let (idx, var) = self.fresh(sort);
        self.formulas.push((idx, term));
        var
    }

    fn set_reg(&mut self, r: Reg, value64: TermId) {
        let var = self.define(Sort::Bv(64), value64);
        self.regs[r.index()] = var;
    }

    fn reg_w(&mut self, r: Reg, w: OpWidth) -> TermId {
        let full = self.regs[r.index()];
        match w {
            OpWidth::W64 => full,
            OpWidth::W32 => self.arena.extract(31, 0, full),
        }
    }

    /// Write a register at operand width, zero-extending 32-bit results.
    fn write_reg_w(&mut self, r: Reg, value: TermId, w: OpWidth) {
        let v64 = match w {
            OpWidth::W64 => value,
            OpWidth::W32 => self.arena.zext_to_64(value),
        };
        self.set_reg(r, v64);
    }

    fn cf(&mut self) -> TermId {
        match self.cf {
            Some(t) => t,
            None => {
                let idx = self.arena.vars().len() as u32;
                let t = self.arena.fresh_var("cf0", Sort::Bool);
                self.cf = Some(t);
                self.cf_var = Some(idx);
                t
            }
        }
    }

    fn set_cf(&mut self, t: TermId) {
        self.cf = Some(t);
    }

    fn addr_of(&mut self, m: &MemRef) -> TermId {
        let mut addr = self.regs[m.base.index()];
        if let Some((idx, scale)) = m.index {
            let idx_t = self.regs[idx.index()];
            // scale is a power of two; shift instead of multiply
            let sh = self.arena.bv(64, scale.trailing_zeros() as u64);
            let scaled = self.arena.shl(idx_t, sh);
            addr = self.arena.add(addr, scaled);
        }
        if m.disp != 0 {
            let d = self.arena.bv(64, m.disp as u64);
            addr = self.arena.add(addr, d);
        }
        addr
    }

    fn read_operand(&mut self, op: &Operand, w: OpWidth) -> Result<TermId, SymExecError> {
        Ok(match op {
            Operand::Reg(r) => self.reg_w(*r, w),
            Operand::Imm(v) => self.arena.bv(w.bits(), *v as u64),
            Operand::Mem(m) => {
                let addr = self.addr_of(m);
                let loaded = self.arena.select_le(self.mem, addr, w.bytes());
                // the load result itself is an SSA definition (Table 5 style)
                self.define(Sort::Bv(w.bits()), loaded)
            }
        })
    }

    fn write_operand(&mut self, op: &Operand, value: TermId, w: OpWidth) -> Result<(), SymExecError> {
        match op {
            Operand::Reg(r) => self.write_reg_w(*r, value, w),
            Operand::Mem(m) => {
                let addr = self.addr_of(m);
                let stored = self.arena.store_le(self.mem, addr, value, w.bytes());
                let var = self.define(Sort::Array, stored);
                self.mem = var;
            }
            Operand::Imm(_) => return Err(SymExecError::UnsupportedInstr),
        }
        Ok(())
    }

    fn cf_to_bv(&mut self, bits: u32) -> TermId {
        let cf = self.cf();
        let one = self.arena.bv(bits, 1);
        let zero = self.arena.bv(bits, 0);
        self.arena.ite(cf, one, zero)
    }

    /// Carry/borrow through a (width+1)-bit computation.
    fn wide_bit(&mut self, a: TermId, b: TermId, borrow_in: Option<TermId>, sub: bool, w: OpWidth) -> TermId {
        let zero1 = self.arena.bv(1, 0);
        let wa = self.arena.concat(zero1, a);
        let wb = self.arena.concat(zero1, b);
        let mut wide = if sub {
            self.arena.sub(wa, wb)
        } else {
            self.arena.add(wa, wb)
        };
        if let Some(bi) = borrow_in {
            wide = if sub {
                self.arena.sub(wide, bi)
            } else {
                self.arena.add(wide, bi)
            };
        }
        let top = self.arena.extract(w.bits(), w.bits(), wide);
        let one = self.arena.bv(1, 1);
        self.arena.eq(top, one)
    }

    fn step(&mut self, instr: &Instruction) -> Result<(), SymExecError> {
        use Mnemonic::*;
        let w = instr.width;
        let next_va = instr.va.wrapping_add(instr.len as u64);
        self.rip = self.arena.bv(64, next_va);

        match instr.mnemonic {
            Nop => {}
            Mov => {
                let v = self.read_operand(&instr.operands[1], w)?;
                self.write_operand(&instr.operands[0], v, w)?;
            }
            Lea => {
                let Operand::Mem(m) = &instr.operands[1] else {
                    return Err(SymExecError::UnsupportedInstr);
                };
                let addr = self.addr_of(m);
                let v = match w {
                    OpWidth::W64 => addr,
                    OpWidth::W32 => self.arena.extract(31, 0, addr),
                };
                self.write_operand(&instr.operands[0], v, w)?;
            }
            Add | Sub | And | Or | Xor | Sbb => {
                let a = self.read_operand(&instr.operands[0], w)?;
                let bv = self.read_operand(&instr.operands[1], w)?;
                let r = match instr.mnemonic {
                    Add => {
                        let cf = self.wide_bit(a, bv, None, false, w);
                        let r = self.arena.add(a, bv);
                        self.set_cf(cf);
                        r
                    }
                    Sub => {
                        let cf = self.wide_bit(a, bv, None, true, w);
                        let r = self.arena.sub(a, bv);
                        self.set_cf(cf);
                        r
                    }
                    Sbb => {
                        let borrow = self.cf_to_bv(w.bits() + 1);
                        let cf = self.wide_bit(a, bv, Some(borrow), true, w);
                        let cf_w = self.cf_to_bv(w.bits());
                        let r0 = self.arena.sub(a, bv);
                        let r = self.arena.sub(r0, cf_w);
                        self.set_cf(cf);
                        r
                    }
                    And => {
                        let f = self.arena.bool_const(false);
                        self.set_cf(f);
                        self.arena.bvand(a, bv)
                    }
                    Or => {
                        let f = self.arena.bool_const(false);
                        self.set_cf(f);
                        self.arena.bvor(a, bv)
                    }
                    Xor => {
                        let f = self.arena.bool_const(false);
                        self.set_cf(f);
                        self.arena.bvxor(a, bv)
                    }
                    _ => unreachable!(),
                };
                self.write_operand(&instr.operands[0], r, w)?;
            }
            Inc | Dec => {
                let a = self.read_operand(&instr.operands[0], w)?;
                let one = self.arena.bv(w.bits(), 1);
                // CF preserved
                let r = if instr.mnemonic == Inc {
                    self.arena.add(a, one)
                } else {
                    self.arena.sub(a, one)
                };
                self.write_operand(&instr.operands[0], r, w)?;
            }
            Neg => {
                let a = self.read_operand(&instr.operands[0], w)?;
                let zero = self.arena.bv(w.bits(), 0);
                let is_zero = self.arena.eq(a, zero);
                let cf = self.arena.not(is_zero);
                self.set_cf(cf);
                let r = self.arena.neg(a);
                self.write_operand(&instr.operands[0], r, w)?;
            }
            Xchg => {
                let a = self.read_operand(&instr.operands[0], w)?;
                let bv = self.read_operand(&instr.operands[1], w)?;
                self.write_operand(&instr.operands[0], bv, w)?;
                self.write_operand(&instr.operands[1], a, w)?;
            }
            Shl | Shr | Sar => {
                let a = self.read_operand(&instr.operands[0], w)?;
                let Operand::Imm(count) = instr.operands[1] else {
                    return Err(SymExecError::UnsupportedInstr);
                };
                let count = (count as u32) & (w.bits() - 1);
                let c = self.arena.bv(w.bits(), count as u64);
                let r = match instr.mnemonic {
                    Shl => self.arena.shl(a, c),
                    Shr => self.arena.lshr(a, c),
                    Sar => self.arena.ashr(a, c),
                    _ => unreachable!(),
                };
                if count != 0 {
                    let bit = match instr.mnemonic {
                        Shl => w.bits() - count,
                        _ => count - 1,
                    };
                    let out_bit = self.arena.extract(bit, bit, a);
                    let one = self.arena.bv(1, 1);
                    let cf = self.arena.eq(out_bit, one);
                    self.set_cf(cf);
                }
                self.write_operand(&instr.operands[0], r, w)?;
            }
            Push => {
                let v = self.read_operand(&instr.operands[0], OpWidth::W64)?;
                let rsp = self.regs[Reg::Rsp.index()];
                let eight = self.arena.bv(64, 8);
                let new_rsp = self.arena.sub(rsp, eight);
                self.set_reg(Reg::Rsp, new_rsp);
                let rsp_t = self.regs[Reg::Rsp.index()];
                let stored = self.arena.store_le(self.mem, rsp_t, v, 8);
                let var = self.define(Sort::Array, stored);
                self.mem = var;
            }
            Pop => {
                let rsp = self.regs[Reg::Rsp.index()];
                let loaded = self.arena.select_le(self.mem, rsp, 8);
                let v = self.define(Sort::Bv(64), loaded);
                let eight = self.arena.bv(64, 8);
                let new_rsp = self.arena.add(rsp, eight);
                self.set_reg(Reg::Rsp, new_rsp);
                if let Operand::Reg(r) = instr.operands[0] {
                    self.set_reg(r, v);
                } else {
                    return Err(SymExecError::UnsupportedInstr);
                }
            }
            Leave => {
                let rbp = self.regs[Reg::Rbp.index()];
                let loaded = self.arena.select_le(self.mem, rbp, 8);
                let v = self.define(Sort::Bv(64), loaded);
                let eight = self.arena.bv(64, 8);
                let new_rsp = self.arena.add(rbp, eight);
                self.set_reg(Reg::Rsp, new_rsp);
                self.set_reg(Reg::Rbp, v);
            }
            Ret => {
                let rsp = self.regs[Reg::Rsp.index()];
                let target = self.arena.select_le(self.mem, rsp, 8);
                let rip = self.define(Sort::Bv(64), target);
                self.rip = rip;
                let extra = match instr.stop_kind {
                    StopKind::RetImm(n) => 8 + n as u64,
                    _ => 8,
                };
                let adj = self.arena.bv(64, extra);
                let new_rsp = self.arena.add(rsp, adj);
                self.set_reg(Reg::Rsp, new_rsp);
            }
            Jmp => {
                let target = match &instr.operands[0] {
                    Operand::Reg(r) => self.regs[r.index()],
                    Operand::Mem(m) => {
                        let addr = self.addr_of(m);
                        let loaded = self.arena.select_le(self.mem, addr, 8);
                        self.define(Sort::Bv(64), loaded)
                    }
                    Operand::Imm(_) => return Err(SymExecError::UnsupportedInstr),
                };
                self.rip = target;
            }
            Call => {
                let target = match &instr.operands[0] {
                    Operand::Reg(r) => self.regs[r.index()],
                    Operand::Mem(m) => {
                        let addr = self.addr_of(m);
                        let loaded = self.arena.select_le(self.mem, addr, 8);
                        self.define(Sort::Bv(64), loaded)
                    }
                    Operand::Imm(_) => return Err(SymExecError::UnsupportedInstr),
                };
                let rsp = self.regs[Reg::Rsp.index()];
                let eight = self.arena.bv(64, 8);
                let new_rsp = self.arena.sub(rsp, eight);
                self.set_reg(Reg::Rsp, new_rsp);
                let ret_addr = self.arena.bv(64, next_va);
                let rsp_t = self.regs[Reg::Rsp.index()];
                let stored = self.arena.store_le(self.mem, rsp_t, ret_addr, 8);
                let var = self.define(Sort::Array, stored);
                self.mem = var;
                self.rip = target;
            }
            Syscall => {
                self.rip = self.arena.bv(64, next_va);
            }
        }
        Ok(())
    }
}

/// Symbolically execute a gadget's instruction sequence.
pub fn symexec_seq(seq: &InstrSeq) -> Result<SymExec, SymExecError> {
    let mut arena = Arena::new();
    let mut regs = [TermId(0); NUM_REGS];
    let mut reg_vars = [0u32; NUM_REGS];
    for r in Reg::ALL {
        reg_vars[r.index()] = arena.vars().len() as u32;
        regs[r.index()] = arena.fresh_var(format!("r0_{}", r.name()), Sort::Bv(64));
    }
    let mem_var = arena.vars().len() as u32;
    let mem = arena.fresh_var("M", Sort::Array);
    let rip = arena.fresh_var("rip0", Sort::Bv(64));

    let init = SymState {
        regs,
        mem,
        rip,
        cf: None,
    };

    let mut eng = Engine {
        arena,
        regs,
        mem,
        rip,
        cf: None,
        cf_var: None,
        formulas: Vec::new(),
        next_phi: 1,
    };
    for instr in seq.iter() {
        eng.step(instr)?;
        if instr.is_control_transfer() {
            break;
        }
    }

    let fin = SymState {
        regs: eng.regs,
        mem: eng.mem,
        rip: eng.rip,
        cf: eng.cf,
    };
    Ok(SymExec {
        arena: eng.arena,
        init,
        fin,
        formulas: eng.formulas,
        reg_vars,
        mem_var,
        cf_var: eng.cf_var,
    })
}

pub fn symexec_gadget(g: &Gadget) -> Result<SymExec, SymExecError> {
    symexec_seq(&g.instrs)
}
