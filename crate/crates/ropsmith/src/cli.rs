//! Command-line orchestration of the pipeline: scan, catalog, chain,
//! emulate, verify.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::catalog::{self, Catalog, PipelineConfig};
use crate::chaincomp::{
    compile_payload_with, emit_stack, ArgSpec, Chain, CompileOpts, PayloadKind, PayloadSpec,
    StackLayout,
};
use crate::chainemu::{run_chain, validate_chain, EmuConfig};
use crate::gadgetscan::{galileo_scan_with_stats, ScanConfig};
use crate::platform::Platform;
use crate::regs::Reg;
use crate::verifier::{BuiltinOracle, SatOracle, SmtProcessOracle};
use crate::{load_image, BinaryImage};

#[derive(Parser)]
#[command(
    name = "ropsmith",
    about = "ROP gadget discovery, semantic cataloging, and chain compilation for x86-64 ELF binaries",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List gadgets discovered in an image.
    Scan(ScanArgs),
    /// Scan, classify, verify, and write a catalog file.
    Catalog(CatalogArgs),
    /// Compile a payload into a stack layout.
    Chain(ChainArgs),
    /// Run a layout in the emulator and judge the payload.
    Emulate(EmulateArgs),
    /// Re-verify the claims of an existing catalog.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScanCommon {
    /// Longest gadget in instructions.
    #[arg(long, default_value_t = 5)]
    max_insns: usize,
    /// Bytes scanned backward from each control transfer.
    #[arg(long, default_value_t = 25)]
    max_back_bytes: usize,
    /// Also scan writable+executable regions.
    #[arg(long)]
    include_wx: bool,
}

impl ScanCommon {
    fn config(&self) -> Result<ScanConfig, String> {
        if self.max_insns < 1 {
            return Err("--max-insns must be at least 1".into());
        }
        if self.max_back_bytes < self.max_insns {
            return Err("--max-back-bytes must be at least --max-insns".into());
        }
        Ok(ScanConfig {
            max_insns: self.max_insns,
            max_back_bytes: self.max_back_bytes,
            skip_writable_exec: !self.include_wx,
            ..ScanConfig::default()
        })
    }
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    image: PathBuf,
    #[command(flatten)]
    scan: ScanCommon,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct VerifyOpts {
    /// External SMT solver (SMT-LIB v2 on stdin/stdout). Falls back to the
    /// ROPSMITH_SOLVER environment variable.
    #[arg(long)]
    solver: Option<String>,
    /// Per-claim solver timeout in seconds.
    #[arg(long, default_value_t = 10)]
    solver_timeout: u64,
    /// Keep only claims an external solver proved.
    #[arg(long)]
    verified_only: bool,
}

impl VerifyOpts {
    fn solver_path(&self) -> Option<String> {
        self.solver
            .clone()
            .or_else(|| std::env::var("ROPSMITH_SOLVER").ok())
    }
}

#[derive(Args)]
struct CatalogArgs {
    #[arg(long)]
    image: PathBuf,
    /// Output catalog file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restricted bytes as comma-separated hex, e.g. "00,0a,0d".
    #[arg(long)]
    bad_bytes: Option<String>,
    #[command(flatten)]
    scan: ScanCommon,
    #[command(flatten)]
    verify: VerifyOpts,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long, conflicts_with = "catalog")]
    image: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Payload kind: setregs, memwrite, syscall, call, execve.
    #[arg(long)]
    payload: String,
    /// Payload arguments, e.g. `rax=7 rdi=0x10` for setregs,
    /// `0x601000=6869` for memwrite, `<number> <args..>` for syscall,
    /// `<addr> <args..>` for call.
    payload_args: Vec<String>,
    /// Shorthand for the execve payload's /bin/sh argument.
    #[arg(long)]
    binsh: bool,
    #[arg(long)]
    bad_bytes: Option<String>,
    /// Output format.
    #[arg(long, default_value = "text", value_parser = ["raw", "text", "json"])]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writable address for pointer payload data (defaults to the image's
    /// writable segment, or the emulator scratch region).
    #[arg(long, value_parser = parse_u64)]
    scratch_addr: Option<u64>,
    /// Platform syscall table (JSON); bundled linux-x86_64 by default.
    #[arg(long)]
    syscall_table: Option<PathBuf>,
    #[command(flatten)]
    scan: ScanCommon,
    #[command(flatten)]
    verify: VerifyOpts,
}

#[derive(Args)]
struct EmulateArgs {
    #[arg(long)]
    image: PathBuf,
    /// Raw layout file, as written by `chain --format raw`.
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    payload: String,
    payload_args: Vec<String>,
    #[arg(long)]
    binsh: bool,
    /// Number of distinct-seed runs; one failure fails the chain.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Print the first run's event trace.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    scratch_addr: Option<String>,
    #[arg(long)]
    syscall_table: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[command(flatten)]
    verify: VerifyOpts,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let r = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        t.parse()
    };
    r.map_err(|e| format!("bad number {s:?}: {e}"))
}

fn parse_bad_bytes(s: &str) -> Result<Vec<u8>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            u8::from_str_radix(p.trim(), 16).map_err(|e| format!("bad byte {p:?}: {e}"))
        })
        .collect()
}

/// Run the CLI; the argv slice includes the program name.
pub fn run_cli(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, String> {
    match cli.command {
        Command::Scan(args) => cmd_scan(args),
        Command::Catalog(args) => cmd_catalog(args),
        Command::Chain(args) => cmd_chain(args),
        Command::Emulate(args) => cmd_emulate(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn open_image(path: &PathBuf) -> Result<BinaryImage, String> {
    load_image(path).map_err(|e| e.to_string())
}

/// Write lines to stdout, treating a closed pipe as a normal end of output.
fn emit_stdout(text: &str) -> Result<(), String> {
    use std::io::Write;
    match std::io::stdout().write_all(text.as_bytes()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(e.to_string()),
    }
}

fn cmd_scan(args: ScanArgs) -> Result<i32, String> {
    let image = open_image(&args.image)?;
    let (gadgets, stats) = galileo_scan_with_stats(&image, &args.scan.config()?);
    let mut listing = String::new();
    for g in &gadgets {
        listing.push_str(&format!("{:#018x}: {}\n", g.va, g.text()));
    }
    emit_stdout(&listing)?;
    if args.verbose {
        eprintln!(
            "# regions scanned: {}, skipped w^x: {}, terminator sites: {}, far-ret bytes: {}",
            stats.regions_scanned, stats.regions_skipped_wx, stats.terminator_sites, stats.far_ret_sites
        );
    }
    eprintln!("# {} gadgets", gadgets.len());
    Ok(0)
}

fn pipeline_config(
    scan: &ScanCommon,
    verify: &VerifyOpts,
    bad_bytes: &Option<String>,
) -> Result<PipelineConfig, String> {
    let mut cfg = PipelineConfig::new();
    cfg.scan = scan.config()?;
    cfg.solver_path = verify.solver_path();
    cfg.solver_timeout_secs = verify.solver_timeout;
    cfg.build.include_unverified = !verify.verified_only;
    if let Some(s) = bad_bytes {
        cfg.build.bad_bytes = parse_bad_bytes(s)?;
    }
    Ok(cfg)
}

fn cmd_catalog(args: CatalogArgs) -> Result<i32, String> {
    let image = open_image(&args.image)?;
    let cfg = pipeline_config(&args.scan, &args.verify, &args.bad_bytes)?;
    let catalog = catalog::build_from_image(&image, &cfg);
    let json = catalog.to_json();
    match &args.out {
        Some(path) => std::fs::write(path, &json).map_err(|e| e.to_string())?,
        None => emit_stdout(&format!("{json}\n"))?,
    }
    eprintln!(
        "# {} gadgets, {} claims classified, {} entries ({} refuted, {} unchecked, {} bad-address dropped)",
        catalog.stats.gadgets_scanned,
        catalog.stats.claims_classified,
        catalog.entries().count(),
        catalog.stats.refuted_dropped,
        catalog.stats.unchecked_dropped,
        catalog.stats.bad_address_dropped
    );
    for (gtype, count) in catalog::coverage_summary(&catalog) {
        eprintln!("#   {gtype}: {count}");
    }
    Ok(0)
}

fn platform_for(table: &Option<PathBuf>) -> Result<Platform, String> {
    match table {
        Some(path) => Platform::from_file(path).map_err(|e| e.to_string()),
        None => Ok(Platform::linux_x86_64()),
    }
}

fn parse_payload(
    kind: &str,
    args: &[String],
    binsh: bool,
    platform: Platform,
    bad_bytes: Vec<u8>,
    scratch_addr: u64,
) -> Result<PayloadSpec, String> {
    let kind = match kind {
        "setregs" => {
            let mut map = BTreeMap::new();
            if args.is_empty() {
                return Err("setregs needs reg=value arguments".into());
            }
            for a in args {
                let (reg, val) = a
                    .split_once('=')
                    .ok_or_else(|| format!("expected reg=value, got {a:?}"))?;
                let reg = Reg::parse(reg).ok_or_else(|| format!("unknown register {reg:?}"))?;
                map.insert(reg, parse_u64(val)?);
            }
            PayloadKind::SetRegs(map)
        }
        "memwrite" => {
            if args.len() != 1 {
                return Err("memwrite takes exactly one addr=hexbytes argument".into());
            }
            let spec = args[0]
                .split_once('=')
                .ok_or("memwrite needs addr=hexbytes")?;
            let addr = parse_u64(spec.0)?;
            let bytes = hex::decode(spec.1).map_err(|e| format!("bad hex data: {e}"))?;
            if bytes.is_empty() {
                return Err("memwrite data must be non-empty".into());
            }
            PayloadKind::MemWrite { addr, bytes }
        }
        "syscall" => {
            let number = parse_u64(args.first().ok_or("syscall needs a number")?)?;
            let call_args = args[1..]
                .iter()
                .map(|a| Ok(ArgSpec::Value(parse_u64(a)?)))
                .collect::<Result<Vec<_>, String>>()?;
            PayloadKind::Syscall { number, args: call_args }
        }
        "call" => {
            let addr = parse_u64(args.first().ok_or("call needs a target address")?)?;
            let call_args = args[1..]
                .iter()
                .map(|a| Ok(ArgSpec::Value(parse_u64(a)?)))
                .collect::<Result<Vec<_>, String>>()?;
            PayloadKind::CallFunction { addr, args: call_args }
        }
        "execve" => {
            if !binsh {
                return Err("execve payload currently requires --binsh".into());
            }
            let number = platform.syscall_number("execve").map_err(|e| e.to_string())?;
            PayloadKind::Syscall {
                number,
                args: vec![
                    ArgSpec::StringPtr { addr: scratch_addr, bytes: b"/bin/sh\0".to_vec() },
                    ArgSpec::Value(0),
                    ArgSpec::Value(0),
                ],
            }
        }
        other => return Err(format!("unknown payload kind {other:?}")),
    };
    Ok(PayloadSpec { kind, bad_bytes, platform })
}

fn default_scratch(image: &BinaryImage) -> u64 {
    EmuConfig::for_image(image).scratch.start + 0x100
}

fn cmd_chain(args: ChainArgs) -> Result<i32, String> {
    let bad_bytes = match &args.bad_bytes {
        Some(s) => parse_bad_bytes(s)?,
        None => Vec::new(),
    };
    let platform = platform_for(&args.syscall_table)?;

    let (catalog, scratch) = match (&args.image, &args.catalog) {
        (Some(image_path), None) => {
            let image = open_image(image_path)?;
            let cfg = pipeline_config(&args.scan, &args.verify, &args.bad_bytes)?;
            let scratch = args.scratch_addr.unwrap_or_else(|| default_scratch(&image));
            (catalog::build_from_image(&image, &cfg), scratch)
        }
        (None, Some(cat_path)) => {
            let text = std::fs::read_to_string(cat_path).map_err(|e| e.to_string())?;
            let catalog = Catalog::from_json(&text).map_err(|e| e.to_string())?;
            let scratch = args
                .scratch_addr
                .unwrap_or(crate::chainemu::DEFAULT_SCRATCH.start + 0x100);
            (catalog, scratch)
        }
        _ => return Err("chain needs exactly one of --image or --catalog".into()),
    };

    let payload = parse_payload(
        &args.payload,
        &args.payload_args,
        args.binsh,
        platform,
        bad_bytes.clone(),
        scratch,
    )?;

    let opts = CompileOpts {
        verified_only: args.verify.verified_only,
        ..CompileOpts::default()
    };
    let chain = compile_payload_with(&catalog, &payload, &opts).map_err(|e| e.to_string())?;
    let layout = emit_stack(&chain, &payload.bad_bytes).map_err(|e| e.to_string())?;

    let rendered = render_layout(&chain, &layout, &args.format);
    match &args.out {
        Some(path) => std::fs::write(path, rendered).map_err(|e| e.to_string())?,
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(&rendered) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    eprintln!(
        "# chain: {} gadgets, layout {} bytes",
        chain.steps.len(),
        layout.bytes.len()
    );
    Ok(0)
}

fn render_layout(chain: &Chain, layout: &StackLayout, format: &str) -> Vec<u8> {
    match format {
        "raw" => layout.bytes.clone(),
        "json" => {
            let doc = serde_json::json!({
                "chain": chain,
                "layout": layout,
                "symbols": layout.symbols,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("layout serializes");
            s.push('\n');
            s.into_bytes()
        }
        _ => {
            let mut s = String::new();
            for w in &layout.words {
                let role = match w.role {
                    crate::chaincomp::WordRole::GadgetAddress => "gadget ",
                    crate::chaincomp::WordRole::Operand => "operand",
                    crate::chaincomp::WordRole::Padding => "padding",
                    crate::chaincomp::WordRole::FinalTarget => "target ",
                };
                s.push_str(&format!(
                    "{:#06x} {:#018x} {role} {}\n",
                    w.offset, w.value, w.comment
                ));
            }
            s.into_bytes()
        }
    }
}

fn cmd_emulate(args: EmulateArgs) -> Result<i32, String> {
    let image = open_image(&args.image)?;
    let bytes = std::fs::read(&args.layout).map_err(|e| e.to_string())?;
    if bytes.is_empty() || bytes.len() % 8 != 0 {
        return Err("layout file must be a non-empty multiple of 8 bytes".into());
    }
    let layout = StackLayout {
        bytes,
        words: Vec::new(),
        symbols: BTreeMap::new(),
    };
    let platform = platform_for(&args.syscall_table)?;
    let mut cfg = EmuConfig::for_image(&image);
    cfg.seeds = (0..args.seeds as u64).map(|i| 0xE401 + i * 0x1000).collect();
    let scratch = match &args.scratch_addr {
        Some(s) => parse_u64(s)?,
        None => default_scratch(&image),
    };
    let payload = parse_payload(
        &args.payload,
        &args.payload_args,
        args.binsh,
        platform,
        Vec::new(),
        scratch,
    )?;
    if let PayloadKind::CallFunction { addr, .. } = &payload.kind {
        cfg.halt_va = Some(*addr);
    }

    if args.trace {
        let (trace, _) = run_chain(&image, &layout, &cfg, cfg.seeds[0]);
        print!("{trace}");
    }

    let validation = validate_chain(&image, &layout, &cfg, &payload);
    for (seed, check) in &validation.per_seed {
        if check.pass {
            println!("seed {seed:#x}: pass");
        } else {
            println!("seed {seed:#x}: FAIL");
            for d in &check.diffs {
                println!("  {} expected {} got {}", d.what, d.expected, d.actual);
            }
        }
    }
    if validation.pass {
        println!("chain validated under {} seeds", validation.per_seed.len());
        Ok(0)
    } else {
        Err("chain failed validation".into())
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, String> {
    let text = std::fs::read_to_string(&args.catalog).map_err(|e| e.to_string())?;
    let catalog = Catalog::from_json(&text).map_err(|e| e.to_string())?;
    let mut builtin = BuiltinOracle::default();
    let mut external = args.verify.solver_path().map(SmtProcessOracle::new);
    let oracle: &mut dyn SatOracle = match external.as_mut() {
        Some(o) => o,
        None => &mut builtin,
    };
    let report = catalog::reverify(&catalog, oracle);
    let mut changed = 0;
    let mut listing = String::new();
    for (va, desc, old, new) in &report {
        if old != new {
            changed += 1;
        }
        listing.push_str(&format!("{va:#018x} {desc}: {old:?} -> {new:?}\n"));
    }
    emit_stdout(&listing)?;
    eprintln!("# {} entries re-checked, {changed} changed", report.len());
    Ok(0)
}
