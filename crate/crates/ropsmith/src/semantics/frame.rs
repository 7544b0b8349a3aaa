//! Gadget frame analysis.
//!
//! The frame is the stack region a gadget consumes: parameter slots plus the
//! cell holding the next gadget address. Geometry is measured by running the
//! gadget twice over tagged stack and register contents and watching where
//! the tags surface.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{interpret, MachineState};
use crate::binfront::StopKind;
use crate::gadgetscan::Gadget;
use crate::regs::{Flag, Reg};

/// Where the next gadget address comes from after this gadget runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextSource {
    /// Loaded from the gadget's own frame at this byte offset.
    StackOffset(u64),
    /// Taken from a register (push/ret pairs, jmp reg, call reg).
    FromRegister(Reg),
    /// Loaded through memory not inside the frame (jmp [reg+disp], pop rsp).
    FromMemory,
    /// A syscall gadget transfers to the kernel, not to another gadget.
    Syscall,
}

/// Stack geometry of a gadget with a constant stack delta.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GadgetFrame {
    /// Stack pointer movement in bytes; negative for net pushers.
    pub frame_size: i64,
    pub next: NextSource,
    /// Registers loaded verbatim from frame slots: (register, byte offset).
    pub value_slots: Vec<(Reg, u64)>,
}

impl GadgetFrame {
    pub fn next_addr_offset(&self) -> Option<u64> {
        match self.next {
            NextSource::StackOffset(o) => Some(o),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    /// The stack delta depends on input values (stack pivots, `leave`).
    #[error("non-constant stack offset")]
    NonConstantStackOffset,
}

const RSP_BASE: u64 = 0x7FFC_0000_0000;
const TAG_SLOTS: usize = 96;

fn stack_tag(run: u64, slot: usize) -> u64 {
    0xA5A5_0000_0000_0000 | (run << 24) | ((slot as u64) << 3)
}

fn reg_tag(run: u64, r: Reg) -> u64 {
    0x5EB0_0000_0000_0000 | (run << 24) | ((r.index() as u64) << 3)
}

struct TaggedRun {
    rsp_delta: i64,
    rip: u64,
    regs: [u64; 16],
}

fn tagged_run(g: &Gadget, run: u64) -> TaggedRun {
    let mut st = MachineState::with_seed(0x7461_6700 + run);
    st.set_reg(Reg::Rsp, RSP_BASE);
    for r in Reg::ALL {
        if r != Reg::Rsp {
            st.set_reg(r, reg_tag(run, r));
        }
    }
    for f in Flag::ALL {
        st.set_flag(f, false);
    }
    for slot in 0..TAG_SLOTS {
        st.write_u64(RSP_BASE + (slot as u64) * 8, stack_tag(run, slot));
    }
    let mut fin = interpret(&g.instrs, st).expect("gadget instructions are interpretable");
    TaggedRun {
        rsp_delta: fin.reg(Reg::Rsp).wrapping_sub(RSP_BASE) as i64,
        rip: fin.rip(),
        regs: fin.snapshot_regs(),
    }
}

/// Measure a gadget's frame from two runs with distinct tagged contents.
pub fn analyze_frame(g: &Gadget) -> Result<GadgetFrame, FrameError> {
    let a = tagged_run(g, 1);
    let b = tagged_run(g, 2);
    if a.rsp_delta != b.rsp_delta {
        return Err(FrameError::NonConstantStackOffset);
    }
    let frame_size = a.rsp_delta;

    let next = if g.terminator() == StopKind::Syscall {
        NextSource::Syscall
    } else {
        let from_slot = (0..TAG_SLOTS)
            .find(|&s| a.rip == stack_tag(1, s) && b.rip == stack_tag(2, s))
            .map(|s| NextSource::StackOffset((s as u64) * 8));
        let from_reg = || {
            Reg::ALL
                .into_iter()
                .filter(|&r| r != Reg::Rsp)
                .find(|&r| a.rip == reg_tag(1, r) && b.rip == reg_tag(2, r))
                .map(NextSource::FromRegister)
        };
        from_slot.or_else(from_reg).unwrap_or(NextSource::FromMemory)
    };

    if let NextSource::StackOffset(off) = next {
        if frame_size < 8 || off as i64 > frame_size - 8 {
            // The rip load fell outside the frame the gadget consumes.
            return Err(FrameError::NonConstantStackOffset);
        }
    }

    let mut value_slots = Vec::new();
    for r in Reg::ALL {
        if r == Reg::Rsp {
            continue;
        }
        for slot in 0..TAG_SLOTS {
            if a.regs[r.index()] == stack_tag(1, slot) && b.regs[r.index()] == stack_tag(2, slot) {
                value_slots.push((r, (slot as u64) * 8));
                break;
            }
        }
    }

    Ok(GadgetFrame {
        frame_size,
        next,
        value_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfront::decode_sequence;

    fn gadget(bytes: &[u8]) -> Gadget {
        Gadget {
            va: 0x1000,
            instrs: decode_sequence(bytes, 0x1000, 16).unwrap(),
            raw_bytes: bytes.to_vec(),
        }
    }

    #[test]
    fn bare_ret() {
        let f = analyze_frame(&gadget(&[0xC3])).unwrap();
        assert_eq!(f.frame_size, 8);
        assert_eq!(f.next, NextSource::StackOffset(0));
        assert!(f.value_slots.is_empty());
    }

    #[test]
    fn pop_rax_ret8() {
        let f = analyze_frame(&gadget(&[0x58, 0xC2, 0x08, 0x00])).unwrap();
        assert_eq!(f.frame_size, 24);
        assert_eq!(f.next, NextSource::StackOffset(8));
        assert_eq!(f.value_slots, vec![(Reg::Rax, 0)]);
    }

    #[test]
    fn push_rax_ret_is_register_sourced() {
        let f = analyze_frame(&gadget(&[0x50, 0xC3])).unwrap();
        assert_eq!(f.next, NextSource::FromRegister(Reg::Rax));
        assert_eq!(f.frame_size, 0);
    }

    #[test]
    fn leave_ret_non_constant() {
        assert_eq!(
            analyze_frame(&gadget(&[0xC9, 0xC3])),
            Err(FrameError::NonConstantStackOffset)
        );
    }

    #[test]
    fn pop_rsp_pivot_non_constant() {
        assert_eq!(
            analyze_frame(&gadget(&[0x5C, 0xC3])),
            Err(FrameError::NonConstantStackOffset)
        );
    }

    #[test]
    fn jmp_reg_frame() {
        let f = analyze_frame(&gadget(&[0x58, 0xFF, 0xE3])).unwrap(); // pop rax ; jmp rbx
        assert_eq!(f.frame_size, 8);
        assert_eq!(f.next, NextSource::FromRegister(Reg::Rbx));
        assert_eq!(f.value_slots, vec![(Reg::Rax, 0)]);
    }

    #[test]
    fn jmp_mem_frame() {
        let f = analyze_frame(&gadget(&[0xFF, 0x60, 0x08])).unwrap(); // jmp [rax+8]
        assert_eq!(f.next, NextSource::FromMemory);
    }

    #[test]
    fn syscall_frame() {
        let f = analyze_frame(&gadget(&[0x0F, 0x05])).unwrap();
        assert_eq!(f.next, NextSource::Syscall);
        assert_eq!(f.frame_size, 0);
    }

    #[test]
    fn multi_pop() {
        let f = analyze_frame(&gadget(&[0x58, 0x5B, 0x59, 0xC3])).unwrap(); // pop rax;rbx;rcx;ret
        assert_eq!(f.frame_size, 32);
        assert_eq!(f.next, NextSource::StackOffset(24));
        assert_eq!(
            f.value_slots,
            vec![(Reg::Rax, 0), (Reg::Rcx, 16), (Reg::Rbx, 8)]
        );
    }
}
