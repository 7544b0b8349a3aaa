//! Galileo-style exhaustive gadget discovery.
//!
//! For every position where a control transfer instruction decodes, try every
//! start offset up to `max_back_bytes` before it. Any start that decodes into
//! a clean sequence ending exactly at that terminator is a gadget. Unaligned
//! starts deliberately pick up instructions hidden inside other encodings.

use serde::{Deserialize, Serialize};

use crate::binfront::{decode_instruction, decode_sequence, BinaryImage, InstrSeq, Region, StopKind};

/// An instruction sequence ending with a control transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gadget {
    pub va: u64,
    pub instrs: InstrSeq,
    pub raw_bytes: Vec<u8>,
}

impl Gadget {
    pub fn terminator(&self) -> StopKind {
        self.instrs.terminator().stop_kind
    }

    pub fn text(&self) -> String {
        self.instrs.to_string()
    }

    /// Rebuild a gadget from raw bytes, e.g. out of a serialized catalog entry.
    pub fn from_bytes(va: u64, raw: &[u8]) -> Option<Gadget> {
        let seq = decode_sequence(raw, va, raw.len()).ok()?;
        if seq.byte_len() != raw.len() {
            return None;
        }
        Some(Gadget {
            va,
            instrs: seq,
            raw_bytes: raw.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Longest gadget in instructions, terminator included.
    pub max_insns: usize,
    /// How many bytes before a terminator to try as start offsets.
    pub max_back_bytes: usize,
    pub enabled_terminators: Vec<TerminatorKind>,
    /// Skip writable+executable regions (their bytes are unreliable).
    pub skip_writable_exec: bool,
}

/// Terminator selection, collapsing `RetImm(n)` values into one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatorKind {
    Ret,
    RetImm,
    JmpReg,
    JmpMem,
    CallReg,
    CallMem,
    Syscall,
}

impl TerminatorKind {
    pub const ALL: [TerminatorKind; 7] = [
        TerminatorKind::Ret,
        TerminatorKind::RetImm,
        TerminatorKind::JmpReg,
        TerminatorKind::JmpMem,
        TerminatorKind::CallReg,
        TerminatorKind::CallMem,
        TerminatorKind::Syscall,
    ];

    pub fn of(stop: StopKind) -> Option<TerminatorKind> {
        match stop {
            StopKind::None => None,
            StopKind::RetNear => Some(TerminatorKind::Ret),
            StopKind::RetImm(_) => Some(TerminatorKind::RetImm),
            StopKind::JmpReg => Some(TerminatorKind::JmpReg),
            StopKind::JmpMem => Some(TerminatorKind::JmpMem),
            StopKind::CallReg => Some(TerminatorKind::CallReg),
            StopKind::CallMem => Some(TerminatorKind::CallMem),
            StopKind::Syscall => Some(TerminatorKind::Syscall),
        }
    }
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            max_insns: 5,
            max_back_bytes: 25,
            enabled_terminators: TerminatorKind::ALL.to_vec(),
            skip_writable_exec: true,
        }
    }
}

impl ScanConfig {
    fn terminator_ok(&self, stop: StopKind) -> bool {
        let Some(kind) = TerminatorKind::of(stop) else {
            return false;
        };
        if !self.enabled_terminators.contains(&kind) {
            return false;
        }
        // Large or unaligned ret immediates make frames impractical.
        if let StopKind::RetImm(n) = stop {
            return n <= 256 && n % 8 == 0;
        }
        true
    }
}

/// Scan statistics kept for diagnostics (`--verbose` output).
#[derive(Debug, Clone, Default)]
pub struct ScanStats {
    pub regions_scanned: usize,
    pub regions_skipped_wx: usize,
    pub terminator_sites: usize,
    /// Far-return byte positions (cb/ca); recognized but never chained.
    pub far_ret_sites: usize,
}

/// Scan whatever executable regions the config allows. Results are
/// deduplicated by (va, byte length) and sorted by va.
pub fn galileo_scan(image: &BinaryImage, cfg: &ScanConfig) -> Vec<Gadget> {
    galileo_scan_with_stats(image, cfg).0
}

pub fn galileo_scan_with_stats(image: &BinaryImage, cfg: &ScanConfig) -> (Vec<Gadget>, ScanStats) {
    assert!(cfg.max_insns >= 1, "max_insns must be at least 1");
    assert!(
        cfg.max_back_bytes >= cfg.max_insns,
        "max_back_bytes must cover at least one byte per instruction"
    );
    let mut out = Vec::new();
    let mut stats = ScanStats {
        regions_skipped_wx: image
            .regions
            .iter()
            .filter(|r| r.executable && r.writable && !r.bytes.is_empty())
            .count(),
        ..ScanStats::default()
    };
    for region in image.scannable_regions(!cfg.skip_writable_exec) {
        stats.regions_scanned += 1;
        scan_region(region, cfg, &mut out, &mut stats);
    }
    out.sort_by_key(|g| (g.va, g.raw_bytes.len()));
    out.dedup_by_key(|g| (g.va, g.raw_bytes.len()));
    (out, stats)
}

fn scan_region(region: &Region, cfg: &ScanConfig, out: &mut Vec<Gadget>, stats: &mut ScanStats) {
    let bytes = &region.bytes;
    for pos in 0..bytes.len() {
        if bytes[pos] == 0xCB || bytes[pos] == 0xCA {
            stats.far_ret_sites += 1;
        }
        let term = match decode_instruction(bytes, pos, region.base_va + pos as u64) {
            Ok(i) if cfg.terminator_ok(i.stop_kind) => i,
            _ => continue,
        };
        stats.terminator_sites += 1;
        let term_end = pos + term.len as usize;
        let lowest = pos.saturating_sub(cfg.max_back_bytes);
        for start in lowest..=pos {
            let window = &bytes[start..term_end];
            let va = region.base_va + start as u64;
            let Ok(seq) = decode_sequence(window, va, cfg.max_insns) else {
                continue;
            };
            // The sequence must consume the window exactly, i.e. end at this
            // terminator rather than some earlier control transfer.
            if seq.byte_len() != window.len() {
                continue;
            }
            if !cfg.terminator_ok(seq.terminator().stop_kind) {
                continue;
            }
            out.push(Gadget {
                va,
                instrs: seq,
                raw_bytes: window.to_vec(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfront::Region;

    fn image_with(bytes: &[u8], base: u64) -> BinaryImage {
        BinaryImage {
            path: "<test>".into(),
            regions: vec![Region {
                base_va: base,
                bytes: bytes.to_vec(),
                mem_size: bytes.len() as u64,
                executable: true,
                writable: false,
            }],
            entry_va: base,
        }
    }

    #[test]
    fn unaligned_pop_r15() {
        // 41 5f c3 scans as three gadgets: pop r15; ret / pop rdi; ret / ret
        let img = image_with(&[0x41, 0x5F, 0xC3], 0x1000);
        let gadgets = galileo_scan(&img, &ScanConfig::default());
        let texts: Vec<(u64, String)> = gadgets.iter().map(|g| (g.va, g.text())).collect();
        assert_eq!(
            texts,
            vec![
                (0x1000, "pop r15 ; ret".to_string()),
                (0x1001, "pop rdi ; ret".to_string()),
                (0x1002, "ret".to_string()),
            ]
        );
    }

    #[test]
    fn ret_inside_immediate() {
        // b8 c3 00 00 00 = mov eax, 0xc3; the c3 at offset 1 is also a ret
        let img = image_with(&[0xB8, 0xC3, 0x00, 0x00, 0x00, 0xC3], 0x2000);
        let gadgets = galileo_scan(&img, &ScanConfig::default());
        let texts: Vec<(u64, String)> = gadgets.iter().map(|g| (g.va, g.text())).collect();
        assert!(texts.contains(&(0x2001, "ret".to_string())));
        assert!(texts.contains(&(0x2000, "mov eax, 0xc3 ; ret".to_string())));
        assert!(texts.contains(&(0x2005, "ret".to_string())));
        assert_eq!(gadgets.len(), 3);
    }

    #[test]
    fn syscall_terminator() {
        let img = image_with(&[0x0F, 0x05, 0xC3], 0x3000);
        let gadgets = galileo_scan(&img, &ScanConfig::default());
        let texts: Vec<(u64, String)> = gadgets.iter().map(|g| (g.va, g.text())).collect();
        assert!(texts.contains(&(0x3000, "syscall".to_string())));
        assert!(texts.contains(&(0x3002, "ret".to_string())));
    }

    #[test]
    fn empty_region() {
        let img = BinaryImage {
            path: "<test>".into(),
            regions: vec![Region {
                base_va: 0x1000,
                bytes: vec![],
                mem_size: 0,
                executable: true,
                writable: false,
            }],
            entry_va: 0x1000,
        };
        assert!(galileo_scan(&img, &ScanConfig::default()).is_empty());
    }

    #[test]
    fn wx_region_skipped_by_default() {
        let mut img = image_with(&[0xC3], 0x1000);
        img.regions[0].writable = true;
        assert!(galileo_scan(&img, &ScanConfig::default()).is_empty());
        let cfg = ScanConfig {
            skip_writable_exec: false,
            ..ScanConfig::default()
        };
        assert_eq!(galileo_scan(&img, &cfg).len(), 1);
    }

    #[test]
    fn large_ret_imm_excluded() {
        // c2 37 13 = ret 0x1337: decodes fine but is not chainable
        let img = image_with(&[0x58, 0xC2, 0x37, 0x13], 0x1000);
        assert!(galileo_scan(&img, &ScanConfig::default()).is_empty());
        // aligned small immediate is accepted
        let img = image_with(&[0x58, 0xC2, 0x08, 0x00], 0x1000);
        let g = galileo_scan(&img, &ScanConfig::default());
        assert_eq!(g.len(), 2); // pop rax; ret 8 and the bare ret 8
    }

    #[test]
    fn output_invariant_under_region_order() {
        let r1 = Region {
            base_va: 0x1000,
            bytes: vec![0x58, 0xC3],
            mem_size: 2,
            executable: true,
            writable: false,
        };
        let r2 = Region {
            base_va: 0x2000,
            bytes: vec![0x5F, 0xC3],
            mem_size: 2,
            executable: true,
            writable: false,
        };
        let img_a = BinaryImage {
            path: "<t>".into(),
            regions: vec![r1.clone(), r2.clone()],
            entry_va: 0,
        };
        let img_b = BinaryImage {
            path: "<t>".into(),
            regions: vec![r2, r1],
            entry_va: 0,
        };
        let cfg = ScanConfig::default();
        assert_eq!(galileo_scan(&img_a, &cfg), galileo_scan(&img_b, &cfg));
    }
}
