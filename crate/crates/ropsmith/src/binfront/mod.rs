//! Binary front end: ELF64 loading and instruction decoding.

mod decode;
mod elf;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use decode::{
    decode_instruction, decode_sequence, DecodeError, InstrSeq, Instruction, MemRef, Mnemonic,
    OpWidth, Operand, SeqError, StopKind,
};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("not an ELF64 little-endian file")]
    BadMagic,
    #[error("no executable code in any PT_LOAD segment")]
    NoExecutableCode,
    #[error("malformed ELF headers: {0}")]
    MalformedHeaders(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One loaded PT_LOAD segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub base_va: u64,
    pub bytes: Vec<u8>,
    /// In-memory size; any tail beyond `bytes.len()` is zero-filled (.bss).
    pub mem_size: u64,
    pub executable: bool,
    pub writable: bool,
}

impl Region {
    pub fn contains(&self, va: u64) -> bool {
        va >= self.base_va && va < self.base_va + self.mem_size
    }

    /// Byte at `va`, honoring the zero-filled tail.
    pub fn byte_at(&self, va: u64) -> Option<u8> {
        if !self.contains(va) {
            return None;
        }
        let off = (va - self.base_va) as usize;
        Some(self.bytes.get(off).copied().unwrap_or(0))
    }
}

/// A loaded executable image: sorted, non-overlapping regions.
#[derive(Debug, Clone)]
pub struct BinaryImage {
    pub path: String,
    pub regions: Vec<Region>,
    pub entry_va: u64,
}

impl BinaryImage {
    /// Regions eligible for gadget scanning. Writable+executable regions are
    /// skipped unless `include_wx` is set; they violate W^X and their bytes
    /// cannot be trusted in a live target.
    pub fn scannable_regions(&self, include_wx: bool) -> impl Iterator<Item = &Region> {
        self.regions
            .iter()
            .filter(move |r| r.executable && !r.bytes.is_empty() && (include_wx || !r.writable))
    }

    pub fn region_at(&self, va: u64) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(va))
    }

    pub fn executable_at(&self, va: u64) -> bool {
        self.region_at(va).map(|r| r.executable).unwrap_or(false)
    }

    /// First writable region, used as default scratch space for memory writes.
    pub fn writable_region(&self) -> Option<&Region> {
        self.regions.iter().find(|r| r.writable && !r.executable)
    }

    /// Parse an in-memory ELF64 file.
    pub fn from_bytes(path: &str, data: &[u8]) -> Result<BinaryImage, LoadError> {
        elf::parse(path, data)
    }
}

/// Load all PT_LOAD segments of an ELF64 executable or shared object.
pub fn load_image<P: AsRef<Path>>(path: P) -> Result<BinaryImage, LoadError> {
    let data = fs::read(path.as_ref())?;
    elf::parse(&path.as_ref().to_string_lossy(), &data)
}
