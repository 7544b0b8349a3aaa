//! Shared test fixtures: a minimal ELF64 writer and synthetic gadget images.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ropsmith::gadgetscan::Gadget;
use ropsmith::binfront::decode_sequence;

pub struct SegSpec {
    pub vaddr: u64,
    pub data: Vec<u8>,
    pub mem_size: u64,
    pub exec: bool,
    pub write: bool,
}

/// Assemble a minimal ELF64 little-endian executable out of raw segments.
/// Program headers only; section headers are absent on purpose.
pub fn build_elf(segs: &[SegSpec], entry: u64) -> Vec<u8> {
    const EHSIZE: usize = 64;
    const PHENT: usize = 56;
    let phnum = segs.len();
    let mut out = vec![0u8; EHSIZE + PHENT * phnum];

    out[..4].copy_from_slice(&[0x7F, b'E', b'L', b'F']);
    out[4] = 2; // ELFCLASS64
    out[5] = 1; // little-endian
    out[6] = 1; // EV_CURRENT
    out[16..18].copy_from_slice(&2u16.to_le_bytes()); // ET_EXEC
    out[18..20].copy_from_slice(&0x3Eu16.to_le_bytes()); // EM_X86_64
    out[20..24].copy_from_slice(&1u32.to_le_bytes());
    out[24..32].copy_from_slice(&entry.to_le_bytes());
    out[32..40].copy_from_slice(&(EHSIZE as u64).to_le_bytes()); // phoff
    out[52..54].copy_from_slice(&(EHSIZE as u16).to_le_bytes());
    out[54..56].copy_from_slice(&(PHENT as u16).to_le_bytes());
    out[56..58].copy_from_slice(&(phnum as u16).to_le_bytes());

    for (i, seg) in segs.iter().enumerate() {
        let off = out.len();
        out.extend_from_slice(&seg.data);
        let ph = EHSIZE + i * PHENT;
        let mut flags = 4u32; // PF_R
        if seg.exec {
            flags |= 1;
        }
        if seg.write {
            flags |= 2;
        }
        out[ph..ph + 4].copy_from_slice(&1u32.to_le_bytes()); // PT_LOAD
        out[ph + 4..ph + 8].copy_from_slice(&flags.to_le_bytes());
        out[ph + 8..ph + 16].copy_from_slice(&(off as u64).to_le_bytes());
        out[ph + 16..ph + 24].copy_from_slice(&seg.vaddr.to_le_bytes());
        out[ph + 24..ph + 32].copy_from_slice(&seg.vaddr.to_le_bytes());
        out[ph + 32..ph + 40].copy_from_slice(&(seg.data.len() as u64).to_le_bytes());
        out[ph + 40..ph + 48].copy_from_slice(&seg.mem_size.to_le_bytes());
        out[ph + 48..ph + 56].copy_from_slice(&0x1000u64.to_le_bytes());
    }
    out
}

/// Builds an executable blob of named gadgets separated by int3 bytes.
pub struct GadgetBlob {
    pub base: u64,
    pub bytes: Vec<u8>,
    offsets: BTreeMap<&'static str, u64>,
}

impl GadgetBlob {
    pub fn new(base: u64) -> GadgetBlob {
        GadgetBlob {
            base,
            bytes: Vec::new(),
            offsets: BTreeMap::new(),
        }
    }

    pub fn gadget(&mut self, name: &'static str, bytes: &[u8]) -> &mut Self {
        self.offsets.insert(name, self.bytes.len() as u64);
        self.bytes.extend_from_slice(bytes);
        self.bytes.push(0xCC); // int3 separates gadgets
        self
    }

    pub fn va(&self, name: &str) -> u64 {
        self.base + self.offsets[name]
    }

    pub fn gadget_at(&self, name: &str, raw: &[u8]) -> Gadget {
        let va = self.va(name);
        Gadget {
            va,
            instrs: decode_sequence(raw, va, 16).unwrap(),
            raw_bytes: raw.to_vec(),
        }
    }
}

pub const LOW_BASE: u64 = 0x40_0000;
pub const LOW_DATA: u64 = 0x60_1000;

/// The kitchen-sink image: every gadget shape the pipeline handles, at a
/// conventional low base with a writable .bss-style segment.
pub fn rich_blob(base: u64) -> GadgetBlob {
    let mut b = GadgetBlob::new(base);
    b.gadget("pop_rax", &[0x58, 0xC3])
        .gadget("pop_rdi", &[0x5F, 0xC3])
        .gadget("pop_rsi", &[0x5E, 0xC3])
        .gadget("pop_rdx", &[0x5A, 0xC3])
        .gadget("pop_rbx", &[0x5B, 0xC3])
        .gadget("pop_rcx", &[0x59, 0xC3])
        .gadget("pop_rbp", &[0x5D, 0xC3])
        .gadget("store_rdx_rax", &[0x48, 0x89, 0x02, 0xC3]) // mov [rdx], rax ; ret
        .gadget("syscall", &[0x0F, 0x05])
        .gadget("xor_rax", &[0x48, 0x31, 0xC0, 0xC3])
        .gadget("xor_rdi", &[0x48, 0x31, 0xFF, 0xC3])
        .gadget("xor_rsi", &[0x48, 0x31, 0xF6, 0xC3])
        .gadget("xor_rdx", &[0x48, 0x31, 0xD2, 0xC3])
        .gadget("add_rax_rbx", &[0x48, 0x01, 0xD8, 0xC3])
        .gadget("add_rdi_rbx", &[0x48, 0x01, 0xDF, 0xC3])
        .gadget("add_rsi_rbx", &[0x48, 0x01, 0xDE, 0xC3])
        .gadget("add_rdx_rbx", &[0x48, 0x01, 0xDA, 0xC3])
        .gadget("inc_rax", &[0x48, 0xFF, 0xC0, 0xC3])
        .gadget("dec_rax", &[0x48, 0xFF, 0xC8, 0xC3])
        .gadget("mov_rbx_rax", &[0x48, 0x89, 0xC3, 0xC3])
        .gadget("mov_rdi_rax", &[0x48, 0x89, 0xC7, 0xC3])
        .gadget("mov_rdx_rax", &[0x48, 0x89, 0xC2, 0xC3])
        .gadget("mov_rsi_rax", &[0x48, 0x89, 0xC6, 0xC3])
        .gadget("add_pop", &[0x48, 0x01, 0xD8, 0x5A, 0xC3]) // add rax,rbx ; pop rdx ; ret
        .gadget("push_pop", &[0x50, 0x5B, 0x59, 0xC3]) // push rax ; pop rbx ; pop rcx ; ret
        .gadget(
            "neg_sbb_and",
            &[0x48, 0xF7, 0xD8, 0x48, 0x19, 0xC0, 0x48, 0x21, 0xC8, 0x5D, 0xC3],
        )
        .gadget("pop_rax_ret8", &[0x58, 0xC2, 0x08, 0x00])
        .gadget("shl_rax_8", &[0x48, 0xC1, 0xE0, 0x08, 0xC3])
        .gadget("or_rax_rbx", &[0x48, 0x09, 0xD8, 0xC3])
        .gadget("sub_rax_rbx", &[0x48, 0x29, 0xD8, 0xC3])
        .gadget("xor_rax_rbx", &[0x48, 0x31, 0xD8, 0xC3])
        .gadget("and_rax_rbx", &[0x48, 0x21, 0xD8, 0xC3])
        .gadget("load_rax_rdx8", &[0x48, 0x8B, 0x42, 0x08, 0xC3]) // mov rax, [rdx+8] ; ret
        .gadget("table5", &[0x8B, 0x08, 0x01, 0xCB, 0xC3]) // mov ecx,[rax]; add ebx,ecx; ret
        .gadget("store_zero", &[0x48, 0xC7, 0x00, 0x00, 0x00, 0x00, 0x00, 0xC3]) // mov [rax], 0
        .gadget("add_store", &[0x48, 0x01, 0x18, 0xC3]) // add [rax], rbx ; ret
        .gadget("push_rax_ret", &[0x50, 0xC3])
        .gadget("jmp_rax", &[0xFF, 0xE0])
        .gadget("leave_ret", &[0xC9, 0xC3])
        .gadget("xchg_rax_rsp", &[0x48, 0x94, 0xC3])
        .gadget("pop_r8", &[0x41, 0x58, 0xC3])
        .gadget("mov_rcx_rbx", &[0x48, 0x89, 0xD9, 0xC3]);
    b
}

/// Rich fixture as a loadable image with a zeroed writable segment.
pub fn rich_image_bytes() -> (GadgetBlob, Vec<u8>) {
    let blob = rich_blob(LOW_BASE);
    let elf = build_elf(
        &[
            SegSpec {
                vaddr: LOW_BASE,
                data: blob.bytes.clone(),
                mem_size: blob.bytes.len() as u64,
                exec: true,
                write: false,
            },
            SegSpec {
                vaddr: LOW_DATA,
                data: Vec::new(),
                mem_size: 0x2000,
                exec: false,
                write: true,
            },
        ],
        LOW_BASE,
    );
    (blob, elf)
}

/// Base chosen so every gadget address is free of 0x00 and 0x0a bytes.
pub const HIGH_BASE: u64 = 0x4242_4242_4242_1111;
pub const HIGH_DATA: u64 = 0x4242_4242_4261_4141;

/// Restricted-byte fixture: addresses clean of 00/0a, gadgets sufficient for
/// FSM synthesis (pops, self-xors, inc/dec, adders, shift, store, syscall).
pub fn high_blob() -> GadgetBlob {
    let mut b = GadgetBlob::new(HIGH_BASE);
    b.gadget("pop_rax", &[0x58, 0xC3])
        .gadget("pop_rbx", &[0x5B, 0xC3])
        .gadget("pop_rdi", &[0x5F, 0xC3])
        .gadget("pop_rsi", &[0x5E, 0xC3])
        .gadget("pop_rdx", &[0x5A, 0xC3])
        .gadget("xor_rax", &[0x48, 0x31, 0xC0, 0xC3])
        .gadget("xor_rsi", &[0x48, 0x31, 0xF6, 0xC3])
        .gadget("xor_rdx", &[0x48, 0x31, 0xD2, 0xC3])
        .gadget("xor_rdi", &[0x48, 0x31, 0xFF, 0xC3])
        .gadget("add_rax_rbx", &[0x48, 0x01, 0xD8, 0xC3])
        .gadget("add_rdi_rbx", &[0x48, 0x01, 0xDF, 0xC3])
        .gadget("inc_rax", &[0x48, 0xFF, 0xC0, 0xC3])
        .gadget("dec_rax", &[0x48, 0xFF, 0xC8, 0xC3])
        .gadget("shl_rax_8", &[0x48, 0xC1, 0xE0, 0x08, 0xC3])
        .gadget("store_rdx_rax", &[0x48, 0x89, 0x02, 0xC3])
        .gadget("mov_rdi_rax", &[0x48, 0x89, 0xC7, 0xC3])
        .gadget("syscall", &[0x0F, 0x05]);
    b
}

pub fn high_image_bytes() -> (GadgetBlob, Vec<u8>) {
    let blob = high_blob();
    let elf = build_elf(
        &[
            SegSpec {
                vaddr: HIGH_BASE,
                data: blob.bytes.clone(),
                mem_size: blob.bytes.len() as u64,
                exec: true,
                write: false,
            },
            SegSpec {
                vaddr: HIGH_DATA,
                data: Vec::new(),
                mem_size: 0x1000,
                exec: false,
                write: true,
            },
        ],
        HIGH_BASE,
    );
    (blob, elf)
}

/// The minimal three-gadget memory-write fixture: value loader placed at the
/// lowest address so the compiler reproduces the canonical frame order.
pub fn fig1_image_bytes() -> (GadgetBlob, Vec<u8>) {
    let mut blob = GadgetBlob::new(LOW_BASE);
    blob.gadget("pop_rax", &[0x58, 0xC3])
        .gadget("pop_rdx", &[0x5A, 0xC3])
        .gadget("store_rdx_rax", &[0x48, 0x89, 0x02, 0xC3]);
    let elf = build_elf(
        &[
            SegSpec {
                vaddr: LOW_BASE,
                data: blob.bytes.clone(),
                mem_size: blob.bytes.len() as u64,
                exec: true,
                write: false,
            },
            SegSpec {
                vaddr: LOW_DATA,
                data: Vec::new(),
                mem_size: 0x2000,
                exec: false,
                write: true,
            },
        ],
        LOW_BASE,
    );
    (blob, elf)
}

/// Write an image to a temp file and load it back.
pub fn load_fixture(elf: &[u8]) -> (tempfile::TempDir, ropsmith::BinaryImage) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.elf");
    std::fs::write(&path, elf).unwrap();
    let image = ropsmith::load_image(&path).unwrap();
    (dir, image)
}

/// Decode a raw byte string as a gadget at a synthetic address.
pub fn gadget(va: u64, bytes: &[u8]) -> Gadget {
    Gadget {
        va,
        instrs: decode_sequence(bytes, va, 16).unwrap(),
        raw_bytes: bytes.to_vec(),
    }
}
