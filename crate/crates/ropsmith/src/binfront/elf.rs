//! Minimal ELF64 program-header parser. Only PT_LOAD segments are consulted;
//! section headers, relocations, and dynamic linking are ignored.

use super::{BinaryImage, LoadError, Region};

const ELF_MAGIC: [u8; 4] = [0x7F, b'E', b'L', b'F'];
const ELFCLASS64: u8 = 2;
const ELFDATA2LSB: u8 = 1;
const EM_X86_64: u16 = 0x3E;
const PT_LOAD: u32 = 1;
const PF_X: u32 = 1;
const PF_W: u32 = 2;

fn u16le(b: &[u8], off: usize) -> Result<u16, LoadError> {
    let s = b.get(off..off + 2).ok_or_else(malformed("header out of bounds"))?;
    Ok(u16::from_le_bytes([s[0], s[1]]))
}

fn u32le(b: &[u8], off: usize) -> Result<u32, LoadError> {
    let s = b.get(off..off + 4).ok_or_else(malformed("header out of bounds"))?;
    Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

fn u64le(b: &[u8], off: usize) -> Result<u64, LoadError> {
    let s = b.get(off..off + 8).ok_or_else(malformed("header out of bounds"))?;
    Ok(u64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]))
}

fn malformed(what: &str) -> impl Fn() -> LoadError + '_ {
    move || LoadError::MalformedHeaders(what.to_string())
}

pub(super) fn parse(path: &str, data: &[u8]) -> Result<BinaryImage, LoadError> {
    if data.len() < 0x40 || data[..4] != ELF_MAGIC || data[4] != ELFCLASS64 || data[5] != ELFDATA2LSB
    {
        return Err(LoadError::BadMagic);
    }
    let machine = u16le(data, 0x12)?;
    if machine != EM_X86_64 {
        return Err(LoadError::MalformedHeaders(format!(
            "unsupported machine {machine:#x}"
        )));
    }
    let entry_va = u64le(data, 0x18)?;
    let phoff = u64le(data, 0x20)? as usize;
    let phentsize = u16le(data, 0x36)? as usize;
    let phnum = u16le(data, 0x38)? as usize;
    if phentsize < 0x38 {
        return Err(LoadError::MalformedHeaders("phentsize too small".into()));
    }

    let mut regions = Vec::new();
    for i in 0..phnum {
        let off = phoff + i * phentsize;
        let p_type = u32le(data, off)?;
        if p_type != PT_LOAD {
            continue;
        }
        let p_flags = u32le(data, off + 0x4)?;
        let p_offset = u64le(data, off + 0x8)? as usize;
        let p_vaddr = u64le(data, off + 0x10)?;
        let p_filesz = u64le(data, off + 0x20)? as usize;
        let p_memsz = u64le(data, off + 0x28)?;
        let end = p_offset
            .checked_add(p_filesz)
            .ok_or_else(malformed("segment size overflow"))?;
        if end > data.len() {
            return Err(LoadError::MalformedHeaders(format!(
                "segment {i} extends past end of file"
            )));
        }
        if (p_memsz as usize) < p_filesz {
            return Err(LoadError::MalformedHeaders(format!("segment {i} memsz < filesz")));
        }
        regions.push(Region {
            base_va: p_vaddr,
            bytes: data[p_offset..end].to_vec(),
            mem_size: p_memsz,
            executable: p_flags & PF_X != 0,
            writable: p_flags & PF_W != 0,
        });
    }

    // zero-byte executable segments carry nothing scannable
    regions.retain(|r| !(r.executable && r.bytes.is_empty()));
    regions.sort_by_key(|r| r.base_va);
    for pair in regions.windows(2) {
        if pair[0].base_va + pair[0].mem_size > pair[1].base_va {
            return Err(LoadError::MalformedHeaders("overlapping PT_LOAD segments".into()));
        }
    }
    if !regions.iter().any(|r| r.executable && !r.bytes.is_empty()) {
        return Err(LoadError::NoExecutableCode);
    }

    Ok(BinaryImage {
        path: path.to_string(),
        regions,
        entry_va,
    })
}
