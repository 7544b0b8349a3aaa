//! The gadget catalog: verified claims grouped under semantic descriptions,
//! queryable and serialized as versioned JSON.
//!
//! Every entry carries the five catalog fields: semantic description, virtual
//! address, machine instructions, gadget parameters, and side effects, plus
//! the frame geometry and verification status the compiler needs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::binfront::OpWidth;
use crate::gadgetscan::{galileo_scan, Gadget, ScanConfig};
use crate::regs::{Reg, RegSet};
use crate::semantics::{
    analyze_frame, classify_with, describe, Access, ArithSrc, ClassifyConfig, FrameError,
    GadgetClass, GadgetFrame, NextSource, TypedClaim, Verification,
};
use crate::verifier::{verify_claims, BuiltinOracle, SatOracle, SmtProcessOracle};
use crate::BinaryImage;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

/// Classification and verification results for one gadget.
#[derive(Debug, Clone)]
pub struct GadgetAnalysis {
    pub gadget: Gadget,
    pub frame: Result<GadgetFrame, FrameError>,
    pub claims: Vec<TypedClaim>,
}

/// Classify one gadget (no verification yet).
pub fn analyze_gadget(g: &Gadget, cfg: &ClassifyConfig) -> GadgetAnalysis {
    GadgetAnalysis {
        gadget: g.clone(),
        frame: analyze_frame(g),
        claims: classify_with(g, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineCode {
    pub text: String,
    #[serde(with = "hex")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideEffects {
    pub clobbers: RegSet,
    pub unknown_side_effects: bool,
}

/// One catalog entry: a (gadget, verified claim) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub semantic_description: String,
    pub va: u64,
    pub va_hex: String,
    pub machine_instructions: MachineCode,
    pub parameters: GadgetClass,
    pub width: OpWidth,
    pub side_effects: SideEffects,
    pub frame: Option<GadgetFrame>,
    pub verification: Verification,
    pub instr_count: usize,
}

impl CatalogEntry {
    /// May this entry participate in ret-chain compilation?
    pub fn compile_eligible(&self, include_unverified: bool) -> bool {
        if self.side_effects.unknown_side_effects {
            return false;
        }
        match self.verification {
            Verification::Refuted => return false,
            Verification::Verified => {}
            Verification::Unchecked => {
                if !include_unverified {
                    return false;
                }
            }
        }
        if self.width != OpWidth::W64 {
            return false;
        }
        // stack layouts are word-granular: odd frames cannot be emitted
        match &self.frame {
            Some(f @ GadgetFrame { next: NextSource::StackOffset(o), .. }) => {
                f.frame_size >= 8 && f.frame_size % 8 == 0 && o % 8 == 0
            }
            Some(f @ GadgetFrame { next: NextSource::Syscall, .. }) => {
                f.frame_size >= 0 && f.frame_size % 8 == 0
            }
            _ => false,
        }
    }

    pub fn frame_size_key(&self) -> i64 {
        self.frame.as_ref().map(|f| f.frame_size).unwrap_or(i64::MAX)
    }

    pub fn gadget(&self) -> Option<Gadget> {
        Gadget::from_bytes(self.va, &self.machine_instructions.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogGroup {
    pub gtype: String,
    pub entries: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub image_path: String,
    pub image_sha256: String,
    pub scan: Option<ScanConfig>,
    pub classify_seeds: Vec<u64>,
    pub boundary_runs: bool,
    pub solver: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogStats {
    pub gadgets_scanned: usize,
    pub claims_classified: usize,
    pub refuted_dropped: usize,
    pub unchecked_dropped: usize,
    pub bad_address_dropped: usize,
    /// Populated semantic groups and their entry counts; which gadget types
    /// an image actually provides (its computational coverage).
    pub coverage: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub bad_bytes: Option<Vec<u8>>,
    pub groups: Vec<CatalogGroup>,
    pub stats: CatalogStats,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog schema version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("catalog parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Default)]
pub struct BuildOpts {
    /// Entries whose address encodes any of these bytes are dropped.
    pub bad_bytes: Vec<u8>,
    /// Keep claims that no proving oracle has confirmed.
    pub include_unverified: bool,
}

fn va_has_bad_byte(va: u64, bad: &[u8]) -> bool {
    va.to_le_bytes().iter().any(|b| bad.contains(b))
}

/// Registers the attacker can set from the stack using catalog entries:
/// direct loaders plus anything reachable over register moves.
pub fn settable_registers(entries: &[(GadgetClass, OpWidth, Option<&GadgetFrame>)]) -> RegSet {
    let ret_frame = |f: &Option<&GadgetFrame>| {
        matches!(f, Some(GadgetFrame { next: NextSource::StackOffset(_), .. }))
    };
    let mut settable = RegSet::EMPTY;
    for (class, w, frame) in entries {
        if *w != OpWidth::W64 || !ret_frame(frame) {
            continue;
        }
        if let GadgetClass::LoadConst { reg, .. } = class {
            settable.insert(*reg);
        }
    }
    loop {
        let mut grew = false;
        for (class, w, frame) in entries {
            if *w != OpWidth::W64 || !ret_frame(frame) {
                continue;
            }
            if let GadgetClass::MoveReg { dst, src } = class {
                if settable.contains(*src) && !settable.contains(*dst) {
                    settable.insert(*dst);
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    settable
}

/// Address registers a claim's own semantics declare (their dereferences are
/// described, not side effects).
fn declared_addr_regs(class: &GadgetClass) -> RegSet {
    match class {
        GadgetClass::StoreMem { addr_reg, .. }
        | GadgetClass::StoreConst { addr_reg, .. }
        | GadgetClass::ArithmeticStore { addr_reg, .. }
        | GadgetClass::LoadMem { addr_reg, .. }
        | GadgetClass::ArithmeticLoad { addr_reg, .. } => RegSet::single(*addr_reg),
        _ => RegSet::EMPTY,
    }
}

/// Build the catalog out of per-gadget analyses. Refuted claims are dropped;
/// unchecked ones only survive with `include_unverified`; entries at
/// bad-byte addresses are filtered with a count.
pub fn build_catalog(
    analyses: &[GadgetAnalysis],
    opts: &BuildOpts,
    provenance: Provenance,
) -> Catalog {
    let mut stats = CatalogStats {
        gadgets_scanned: analyses.len(),
        ..CatalogStats::default()
    };

    // Settability is computed over everything that could enter the catalog.
    let shapes: Vec<(GadgetClass, OpWidth, Option<&GadgetFrame>)> = analyses
        .iter()
        .flat_map(|a| {
            a.claims.iter().filter_map(|c| {
                if c.verified == Verification::Refuted {
                    return None;
                }
                if !opts.include_unverified && c.verified == Verification::Unchecked {
                    return None;
                }
                if !opts.bad_bytes.is_empty() && va_has_bad_byte(a.gadget.va, &opts.bad_bytes) {
                    return None;
                }
                Some((c.class, c.width, a.frame.as_ref().ok()))
            })
        })
        .collect();
    let settable = settable_registers(&shapes);

    let mut groups: BTreeMap<String, Vec<CatalogEntry>> = BTreeMap::new();
    for a in analyses {
        stats.claims_classified += a.claims.len();
        let write_regs: RegSet = match crate::semantics::summarize(&a.gadget) {
            Ok(s) => s
                .preconds
                .iter()
                .filter(|p| p.access == Access::Write)
                .map(|p| p.reg)
                .collect(),
            Err(_) => RegSet::EMPTY,
        };
        for claim in &a.claims {
            match claim.verified {
                Verification::Refuted => {
                    stats.refuted_dropped += 1;
                    continue;
                }
                Verification::Unchecked if !opts.include_unverified => {
                    stats.unchecked_dropped += 1;
                    continue;
                }
                _ => {}
            }
            if !opts.bad_bytes.is_empty() && va_has_bad_byte(a.gadget.va, &opts.bad_bytes) {
                stats.bad_address_dropped += 1;
                continue;
            }
            let declared = declared_addr_regs(&claim.class);
            let undeclared_writes = !write_regs.difference(declared).is_empty();
            let unsettable_declared = declared.iter().any(|r| !settable.contains(r))
                && matches!(
                    claim.class,
                    GadgetClass::StoreMem { .. }
                        | GadgetClass::StoreConst { .. }
                        | GadgetClass::ArithmeticStore { .. }
                );
            let entry = CatalogEntry {
                semantic_description: describe(&claim.class, claim.width),
                va: a.gadget.va,
                va_hex: format!("{:#x}", a.gadget.va),
                machine_instructions: MachineCode {
                    text: a.gadget.text(),
                    bytes: a.gadget.raw_bytes.clone(),
                },
                parameters: claim.class,
                width: claim.width,
                side_effects: SideEffects {
                    clobbers: claim.clobbers,
                    unknown_side_effects: undeclared_writes || unsettable_declared,
                },
                frame: a.frame.as_ref().ok().cloned(),
                verification: claim.verified,
                instr_count: a.gadget.instrs.len(),
            };
            groups.entry(claim.class.kind_name().to_string()).or_default().push(entry);
        }
    }

    let mut out_groups = Vec::new();
    for (gtype, mut entries) in groups {
        entries.sort_by_key(|e| (e.instr_count, e.frame_size_key(), e.va));
        stats.coverage.insert(gtype.clone(), entries.len());
        out_groups.push(CatalogGroup { gtype, entries });
    }

    Catalog {
        schema_version: CATALOG_SCHEMA_VERSION,
        provenance,
        bad_bytes: if opts.bad_bytes.is_empty() {
            None
        } else {
            Some(opts.bad_bytes.clone())
        },
        groups: out_groups,
        stats,
    }
}

/// Wildcard query over gadget parameters. `None` fields match anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassPattern {
    LoadConst { reg: Option<Reg>, offset: Option<u64> },
    MovImm { reg: Option<Reg>, value: Option<u64> },
    MoveReg { dst: Option<Reg>, src: Option<Reg> },
    Arithmetic {
        dst: Option<Reg>,
        src1: Option<Reg>,
        op: Option<crate::semantics::AluOp>,
        src2: Option<ArithSrc>,
    },
    LoadMem { dst: Option<Reg>, addr_reg: Option<Reg> },
    StoreMem { addr_reg: Option<Reg>, src: Option<Reg> },
    StoreConst { addr_reg: Option<Reg>, value: Option<u64> },
    ArithmeticLoad { dst: Option<Reg>, op: Option<crate::semantics::AluOp> },
    ArithmeticStore {
        addr_reg: Option<Reg>,
        op: Option<crate::semantics::AluOp>,
        src: Option<Reg>,
    },
    Syscall,
    StackPivot,
    NoOp,
}

fn opt<T: PartialEq>(pattern: Option<T>, actual: T) -> bool {
    pattern.map(|p| p == actual).unwrap_or(true)
}

impl ClassPattern {
    pub fn matches(&self, class: &GadgetClass) -> bool {
        match (self, class) {
            (ClassPattern::LoadConst { reg, offset }, GadgetClass::LoadConst { reg: r, offset: o }) => {
                opt(*reg, *r) && opt(*offset, *o)
            }
            (ClassPattern::MovImm { reg, value }, GadgetClass::MovImm { reg: r, value: v }) => {
                opt(*reg, *r) && opt(*value, *v)
            }
            (ClassPattern::MoveReg { dst, src }, GadgetClass::MoveReg { dst: d, src: s }) => {
                opt(*dst, *d) && opt(*src, *s)
            }
            (
                ClassPattern::Arithmetic { dst, src1, op, src2 },
                GadgetClass::Arithmetic { dst: d, src1: s1, op: o, src2: s2 },
            ) => opt(*dst, *d) && opt(*src1, *s1) && opt(*op, *o) && opt(*src2, *s2),
            (
                ClassPattern::LoadMem { dst, addr_reg },
                GadgetClass::LoadMem { dst: d, addr_reg: a, .. },
            ) => opt(*dst, *d) && opt(*addr_reg, *a),
            (
                ClassPattern::StoreMem { addr_reg, src },
                GadgetClass::StoreMem { addr_reg: a, src: s, .. },
            ) => opt(*addr_reg, *a) && opt(*src, *s),
            (
                ClassPattern::StoreConst { addr_reg, value },
                GadgetClass::StoreConst { addr_reg: a, value: v, .. },
            ) => opt(*addr_reg, *a) && opt(*value, *v),
            (
                ClassPattern::ArithmeticLoad { dst, op },
                GadgetClass::ArithmeticLoad { dst: d, op: o, .. },
            ) => opt(*dst, *d) && opt(*op, *o),
            (
                ClassPattern::ArithmeticStore { addr_reg, op, src },
                GadgetClass::ArithmeticStore { addr_reg: a, op: o, src: s, .. },
            ) => opt(*addr_reg, *a) && opt(*op, *o) && opt(*src, *s),
            (ClassPattern::Syscall, GadgetClass::Syscall) => true,
            (ClassPattern::StackPivot, GadgetClass::StackPivot { .. }) => true,
            (ClassPattern::NoOp, GadgetClass::NoOp) => true,
            _ => false,
        }
    }
}

/// All entries unifying with the pattern, shortest and tightest frames first.
pub fn query<'a>(catalog: &'a Catalog, pattern: &ClassPattern) -> Vec<&'a CatalogEntry> {
    let mut out: Vec<&CatalogEntry> = catalog
        .groups
        .iter()
        .flat_map(|g| g.entries.iter())
        .filter(|e| pattern.matches(&e.parameters))
        .collect();
    out.sort_by_key(|e| (e.instr_count, e.frame_size_key(), e.va));
    out
}

impl Catalog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Catalog, CatalogError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CatalogError::Parse("missing schema_version".into()))? as u32;
        if found != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::VersionMismatch {
                found,
                expected: CATALOG_SCHEMA_VERSION,
            });
        }
        let catalog: Catalog =
            serde_json::from_value(value).map_err(|e| CatalogError::Parse(e.to_string()))?;
        for entry in catalog.groups.iter().flat_map(|g| g.entries.iter()) {
            if entry.va_hex != format!("{:#x}", entry.va) {
                return Err(CatalogError::Parse(format!(
                    "va/va_hex mismatch at {}",
                    entry.va_hex
                )));
            }
        }
        Ok(catalog)
    }

    /// Serialize then parse; the result must be structurally identical.
    pub fn roundtrip(&self) -> Result<Catalog, CatalogError> {
        Catalog::from_json(&self.to_json())
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.groups.iter().flat_map(|g| g.entries.iter())
    }

    pub fn compile_entries(&self, include_unverified: bool) -> Vec<&CatalogEntry> {
        self.entries()
            .filter(|e| e.compile_eligible(include_unverified))
            .collect()
    }
}

/// End-to-end pipeline configuration: scan, classify, verify, build.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub scan: ScanConfig,
    pub classify: ClassifyConfig,
    /// External SMT solver; claims stay unchecked without one (the builtin
    /// oracle can only refute).
    pub solver_path: Option<String>,
    pub solver_timeout_secs: u64,
    pub oracle_samples: usize,
    pub oracle_seed: u64,
    pub build: BuildOpts,
}

impl PipelineConfig {
    pub fn new() -> PipelineConfig {
        PipelineConfig {
            scan: ScanConfig::default(),
            classify: ClassifyConfig::default(),
            solver_path: None,
            solver_timeout_secs: 10,
            oracle_samples: BuiltinOracle::default().samples,
            oracle_seed: BuiltinOracle::default().seed,
            build: BuildOpts {
                bad_bytes: Vec::new(),
                // without a proving backend, refutation-surviving claims are
                // the working set; `--verified-only` restores strictness
                include_unverified: true,
            },
        }
    }
}

fn image_sha256(image: &BinaryImage) -> String {
    let mut hasher = Sha256::new();
    for r in &image.regions {
        hasher.update(r.base_va.to_le_bytes());
        hasher.update(&r.bytes);
    }
    hex::encode(hasher.finalize())
}

/// Scan, classify, verify, and catalog an image in one pass.
pub fn build_from_image(image: &BinaryImage, cfg: &PipelineConfig) -> Catalog {
    let gadgets = galileo_scan(image, &cfg.scan);
    build_from_gadgets(&gadgets, image, cfg)
}

pub fn build_from_gadgets(
    gadgets: &[Gadget],
    image: &BinaryImage,
    cfg: &PipelineConfig,
) -> Catalog {
    let mut analyses: Vec<GadgetAnalysis> = gadgets
        .iter()
        .map(|g| analyze_gadget(g, &cfg.classify))
        .collect();

    let mut builtin = BuiltinOracle {
        samples: cfg.oracle_samples,
        seed: cfg.oracle_seed,
    };
    let mut external = cfg
        .solver_path
        .as_ref()
        .map(|p| {
            let mut o = SmtProcessOracle::new(p.clone());
            o.timeout = std::time::Duration::from_secs(cfg.solver_timeout_secs);
            o
        });
    for a in &mut analyses {
        let oracle: &mut dyn SatOracle = match external.as_mut() {
            Some(ext) => ext,
            None => &mut builtin,
        };
        verify_claims(&a.gadget, &mut a.claims, oracle);
    }

    let provenance = Provenance {
        image_path: image.path.clone(),
        image_sha256: image_sha256(image),
        scan: Some(cfg.scan.clone()),
        classify_seeds: cfg.classify.seeds.clone(),
        boundary_runs: cfg.classify.boundaries,
        solver: cfg.solver_path.clone(),
    };
    build_catalog(&analyses, &cfg.build, provenance)
}

/// Catalog a bare gadget list (no image), e.g. for hand-built corpora.
pub fn build_synthetic(gadgets: &[Gadget], cfg: &PipelineConfig) -> Catalog {
    let mut analyses: Vec<GadgetAnalysis> = gadgets
        .iter()
        .map(|g| analyze_gadget(g, &cfg.classify))
        .collect();
    let mut builtin = BuiltinOracle {
        samples: cfg.oracle_samples,
        seed: cfg.oracle_seed,
    };
    for a in &mut analyses {
        verify_claims(&a.gadget, &mut a.claims, &mut builtin);
    }
    let provenance = Provenance {
        image_path: "<synthetic>".into(),
        ..Provenance::default()
    };
    build_catalog(&analyses, &cfg.build, provenance)
}

/// Re-verify every entry of an existing catalog; returns per-entry verdicts
/// as (va, description, old, new).
pub fn reverify(
    catalog: &Catalog,
    oracle: &mut dyn SatOracle,
) -> Vec<(u64, String, Verification, Verification)> {
    let mut report = Vec::new();
    for entry in catalog.entries() {
        let Some(gadget) = entry.gadget() else {
            continue;
        };
        let mut claims = vec![TypedClaim {
            class: entry.parameters,
            width: entry.width,
            clobbers: entry.side_effects.clobbers,
            verified: Verification::Unchecked,
        }];
        verify_claims(&gadget, &mut claims, oracle);
        report.push((
            entry.va,
            entry.semantic_description.clone(),
            entry.verification,
            claims[0].verified,
        ));
    }
    report
}

/// Which semantic groups are populated; the catalog's answer to "what can
/// this image compute".
pub fn coverage_summary(catalog: &Catalog) -> Vec<(String, usize)> {
    catalog
        .stats
        .coverage
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfront::decode_sequence;

    fn gadget(va: u64, bytes: &[u8]) -> Gadget {
        Gadget {
            va,
            instrs: decode_sequence(bytes, va, 16).unwrap(),
            raw_bytes: bytes.to_vec(),
        }
    }

    fn analyses(gs: &[(u64, &[u8])]) -> Vec<GadgetAnalysis> {
        gs.iter()
            .map(|(va, b)| analyze_gadget(&gadget(*va, b), &ClassifyConfig::default()))
            .collect()
    }

    fn opts() -> BuildOpts {
        BuildOpts {
            bad_bytes: Vec::new(),
            include_unverified: true,
        }
    }

    #[test]
    fn table4_add_with_pop_group() {
        // two add-with-pop gadgets and one clean add, like the catalog table
        let a = analyses(&[
            (0xdeadbe00, &[0x48, 0x01, 0xD8, 0x5A, 0xC3][..]), // add rax,rbx ; pop rdx ; ret
            (0xcafeca00, &[0x48, 0x01, 0xD8, 0x59, 0xC3][..]), // add rax,rbx ; pop rcx ; ret
            (0xcafeba00, &[0x48, 0x01, 0xD1, 0xC3][..]),       // add rcx,rdx ; ret
        ]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let adds = query(
            &cat,
            &ClassPattern::Arithmetic {
                dst: None,
                src1: None,
                op: Some(crate::semantics::AluOp::Add),
                src2: None,
            },
        );
        let descriptions: Vec<&str> = adds.iter().map(|e| e.semantic_description.as_str()).collect();
        assert!(descriptions.contains(&"rax <- rax + rbx"));
        assert!(descriptions.contains(&"rcx <- rcx + rdx"));
        // side effects recorded per entry
        let with_rdx = adds
            .iter()
            .find(|e| e.va == 0xdeadbe00 && e.semantic_description == "rax <- rax + rbx")
            .unwrap();
        assert_eq!(with_rdx.side_effects.clobbers, RegSet::single(Reg::Rdx));
        let clean = adds.iter().find(|e| e.va == 0xcafeba00).unwrap();
        assert!(clean.side_effects.clobbers.is_empty());
        // shorter, tighter gadgets order first
        assert_eq!(adds[0].va, 0xcafeba00);
    }

    #[test]
    fn unsettable_store_flagged() {
        // only a store through rdx, no way to set rdx
        let a = analyses(&[(0x1000, &[0x48, 0x89, 0x02, 0xC3][..])]); // mov [rdx], rax ; ret
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let stores = query(&cat, &ClassPattern::StoreMem { addr_reg: None, src: None });
        assert!(!stores.is_empty());
        assert!(stores[0].side_effects.unknown_side_effects);
        assert!(cat.compile_entries(true).iter().all(|e| {
            !matches!(e.parameters, GadgetClass::StoreMem { .. })
        }));

        // adding a loader for rdx makes the store usable
        let a = analyses(&[
            (0x1000, &[0x48, 0x89, 0x02, 0xC3][..]),
            (0x2000, &[0x5A, 0xC3][..]), // pop rdx ; ret
        ]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let stores = query(&cat, &ClassPattern::StoreMem { addr_reg: None, src: None });
        assert!(!stores[0].side_effects.unknown_side_effects);
    }

    #[test]
    fn undeclared_write_flags_entry() {
        // mov [rdx], rax ; mov rbx, rcx ; ret : the MoveReg entry carries an
        // undeclared store side effect through rdx
        let a = analyses(&[
            (0x1000, &[0x48, 0x89, 0x02, 0x48, 0x89, 0xCB, 0xC3][..]),
            (0x2000, &[0x5A, 0xC3][..]),
        ]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let movers = query(&cat, &ClassPattern::MoveReg { dst: Some(Reg::Rbx), src: Some(Reg::Rcx) });
        assert!(!movers.is_empty());
        assert!(movers[0].side_effects.unknown_side_effects);
        // but its own StoreMem reading of the same gadget is declared, and
        // rdx is settable via the pop, so that entry stays usable
        let stores = query(&cat, &ClassPattern::StoreMem { addr_reg: Some(Reg::Rdx), src: None });
        assert!(!stores.is_empty());
        assert!(!stores[0].side_effects.unknown_side_effects);
    }

    #[test]
    fn empty_input_empty_catalog() {
        let cat = build_catalog(&[], &opts(), Provenance::default());
        assert!(cat.groups.is_empty());
        assert_eq!(cat.stats.gadgets_scanned, 0);
    }

    #[test]
    fn bad_byte_addresses_filtered() {
        let a = analyses(&[
            (0x401000, &[0x58, 0xC3][..]),          // contains 0x00 bytes in address
            (0x4141414141414141, &[0x5F, 0xC3][..]), // clean address
        ]);
        let mut o = opts();
        o.bad_bytes = vec![0x00];
        let cat = build_catalog(&a, &o, Provenance::default());
        assert!(cat.entries().all(|e| e.va == 0x4141414141414141));
        assert!(cat.stats.bad_address_dropped > 0);
        for e in cat.entries() {
            assert!(!va_has_bad_byte(e.va, &[0x00]));
        }
    }

    #[test]
    fn query_ordering_and_wildcards() {
        let a = analyses(&[
            (0x3000, &[0x48, 0x89, 0xC7, 0x5F, 0xC3][..]), // mov rdi, rax ; pop rdi...
            (0x1000, &[0x5F, 0xC3][..]),                   // pop rdi ; ret
            (0x2000, &[0x58, 0x5F, 0xC3][..]),             // pop rax ; pop rdi ; ret
        ]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let rdi_loaders = query(&cat, &ClassPattern::LoadConst { reg: Some(Reg::Rdi), offset: None });
        assert_eq!(rdi_loaders[0].va, 0x1000, "shortest gadget first");
        let movers = query(&cat, &ClassPattern::MoveReg { dst: Some(Reg::Rax), src: None });
        assert!(movers.is_empty());
        let absent = query(&cat, &ClassPattern::Syscall);
        assert!(absent.is_empty());
    }

    #[test]
    fn roundtrip_identity() {
        let a = analyses(&[
            (0x1000, &[0x58, 0xC3][..]),
            (0x2000, &[0x48, 0x01, 0xD8, 0x5A, 0xC3][..]),
            (0x3000, &[0x0F, 0x05][..]),
        ]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let back = cat.roundtrip().unwrap();
        assert_eq!(cat, back);
    }

    #[test]
    fn version_mismatch_detected() {
        let a = analyses(&[(0x1000, &[0xC3][..])]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let bumped = cat.to_json().replace(
            &format!("\"schema_version\": {CATALOG_SCHEMA_VERSION}"),
            "\"schema_version\": 999",
        );
        match Catalog::from_json(&bumped) {
            Err(CatalogError::VersionMismatch { found: 999, .. }) => {}
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let a = analyses(&[(0x1000, &[0xC3][..])]);
        let json = build_catalog(&a, &opts(), Provenance::default()).to_json();
        let truncated = &json[..json.len() / 2];
        assert!(matches!(Catalog::from_json(truncated), Err(CatalogError::Parse(_))));
    }

    #[test]
    fn odd_frame_sizes_not_compile_eligible() {
        // add rsp, 4 ; ret walks the stack by 12 with the next address at +4;
        // no word-granular layout can drive it
        let a = analyses(&[(0x1000, &[0x48, 0x83, 0xC4, 0x04, 0xC3][..])]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        assert!(cat.compile_entries(true).is_empty());
        // the aligned sibling stays usable
        let a = analyses(&[(0x1000, &[0x48, 0x83, 0xC4, 0x08, 0xC3][..])]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        assert!(!cat.compile_entries(true).is_empty());
    }

    #[test]
    fn five_catalog_fields_serialized() {
        let a = analyses(&[(0x1000, &[0x58, 0xC3][..])]);
        let cat = build_catalog(&a, &opts(), Provenance::default());
        let json: serde_json::Value = serde_json::from_str(&cat.to_json()).unwrap();
        let entry = &json["groups"][0]["entries"][0];
        for field in [
            "semantic_description",
            "va",
            "machine_instructions",
            "parameters",
            "side_effects",
        ] {
            assert!(entry.get(field).is_some(), "missing catalog field {field}");
        }
        assert!(entry["machine_instructions"].get("text").is_some());
        assert!(entry["machine_instructions"].get("bytes").is_some());
    }
}
