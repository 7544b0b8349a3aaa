//! General-purpose registers, flags, and compact register sets.
//!
//! Register indices follow the hardware ModRM encoding order so the decoder
//! can map encoded register numbers directly.

use std::fmt;

use serde::{Deserialize, Serialize};

/// The sixteen 64-bit general-purpose registers, in ModRM encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reg {
    Rax = 0,
    Rcx = 1,
    Rdx = 2,
    Rbx = 3,
    Rsp = 4,
    Rbp = 5,
    Rsi = 6,
    Rdi = 7,
    R8 = 8,
    R9 = 9,
    R10 = 10,
    R11 = 11,
    R12 = 12,
    R13 = 13,
    R14 = 14,
    R15 = 15,
}

pub const NUM_REGS: usize = 16;

impl Reg {
    pub const ALL: [Reg; NUM_REGS] = [
        Reg::Rax,
        Reg::Rcx,
        Reg::Rdx,
        Reg::Rbx,
        Reg::Rsp,
        Reg::Rbp,
        Reg::Rsi,
        Reg::Rdi,
        Reg::R8,
        Reg::R9,
        Reg::R10,
        Reg::R11,
        Reg::R12,
        Reg::R13,
        Reg::R14,
        Reg::R15,
    ];

    pub fn from_index(i: usize) -> Option<Reg> {
        Reg::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// 64-bit register name.
    pub fn name(self) -> &'static str {
        match self {
            Reg::Rax => "rax",
            Reg::Rcx => "rcx",
            Reg::Rdx => "rdx",
            Reg::Rbx => "rbx",
            Reg::Rsp => "rsp",
            Reg::Rbp => "rbp",
            Reg::Rsi => "rsi",
            Reg::Rdi => "rdi",
            Reg::R8 => "r8",
            Reg::R9 => "r9",
            Reg::R10 => "r10",
            Reg::R11 => "r11",
            Reg::R12 => "r12",
            Reg::R13 => "r13",
            Reg::R14 => "r14",
            Reg::R15 => "r15",
        }
    }

    /// 32-bit sub-register name.
    pub fn name32(self) -> &'static str {
        match self {
            Reg::Rax => "eax",
            Reg::Rcx => "ecx",
            Reg::Rdx => "edx",
            Reg::Rbx => "ebx",
            Reg::Rsp => "esp",
            Reg::Rbp => "ebp",
            Reg::Rsi => "esi",
            Reg::Rdi => "edi",
            Reg::R8 => "r8d",
            Reg::R9 => "r9d",
            Reg::R10 => "r10d",
            Reg::R11 => "r11d",
            Reg::R12 => "r12d",
            Reg::R13 => "r13d",
            Reg::R14 => "r14d",
            Reg::R15 => "r15d",
        }
    }

    pub fn parse(s: &str) -> Option<Reg> {
        Reg::ALL.iter().copied().find(|r| r.name() == s)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Status flags tracked by the interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    Cf = 0,
    Zf = 1,
    Sf = 2,
    Of = 3,
}

pub const NUM_FLAGS: usize = 4;

impl Flag {
    pub const ALL: [Flag; NUM_FLAGS] = [Flag::Cf, Flag::Zf, Flag::Sf, Flag::Of];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::Cf => "cf",
            Flag::Zf => "zf",
            Flag::Sf => "sf",
            Flag::Of => "of",
        }
    }
}

/// Bitset over the sixteen GPRs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegSet(pub u16);

impl RegSet {
    pub const EMPTY: RegSet = RegSet(0);

    pub fn single(r: Reg) -> RegSet {
        RegSet(1 << r.index())
    }

    pub fn of(regs: &[Reg]) -> RegSet {
        let mut s = RegSet::EMPTY;
        for &r in regs {
            s.insert(r);
        }
        s
    }

    pub fn insert(&mut self, r: Reg) {
        self.0 |= 1 << r.index();
    }

    pub fn remove(&mut self, r: Reg) {
        self.0 &= !(1 << r.index());
    }

    pub fn contains(self, r: Reg) -> bool {
        self.0 & (1 << r.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: RegSet) -> RegSet {
        RegSet(self.0 | other.0)
    }

    pub fn intersection(self, other: RegSet) -> RegSet {
        RegSet(self.0 & other.0)
    }

    pub fn difference(self, other: RegSet) -> RegSet {
        RegSet(self.0 & !other.0)
    }

    pub fn is_superset(self, other: RegSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn iter(self) -> impl Iterator<Item = Reg> {
        Reg::ALL.into_iter().filter(move |r| self.contains(*r))
    }
}

impl FromIterator<Reg> for RegSet {
    fn from_iter<T: IntoIterator<Item = Reg>>(iter: T) -> Self {
        let mut s = RegSet::EMPTY;
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl fmt::Display for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, r) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for RegSet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let names: Vec<&str> = self.iter().map(|r| r.name()).collect();
        names.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for RegSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(de)?;
        let mut s = RegSet::EMPTY;
        for n in names {
            let r = Reg::parse(&n)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown register {n}")))?;
            s.insert(r);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_order_matches_modrm() {
        assert_eq!(Reg::Rax.index(), 0);
        assert_eq!(Reg::Rsp.index(), 4);
        assert_eq!(Reg::Rdi.index(), 7);
        assert_eq!(Reg::R15.index(), 15);
    }

    #[test]
    fn regset_ops() {
        let mut s = RegSet::of(&[Reg::Rax, Reg::Rdi]);
        assert!(s.contains(Reg::Rax));
        assert!(!s.contains(Reg::Rbx));
        assert_eq!(s.len(), 2);
        s.remove(Reg::Rax);
        assert_eq!(s, RegSet::single(Reg::Rdi));
        assert!(RegSet::of(&[Reg::Rax, Reg::Rdi, Reg::Rsi]).is_superset(s));
    }
}
