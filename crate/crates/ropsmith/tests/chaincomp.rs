//! Chain compilation: composition, shortest-chain search, move graph,
//! payload compilation, stack emission.

mod common;

use std::collections::BTreeMap;

use common::*;
use ropsmith::catalog::{build_synthetic, Catalog, PipelineConfig};
use ropsmith::chaincomp::{
    compile_payload, controlled_of, controlled_registers, emit_stack, find_move_path, search_all,
    shortest_setreg_chains, ArgSpec, ChainError, CompileCtx, FinalTarget, PayloadKind,
    PayloadSpec, SearchLimits, WordRole,
};
use ropsmith::chainemu::{validate_chain, EmuConfig};
use ropsmith::gadgetscan::Gadget;
use ropsmith::regs::{Reg, RegSet};
use ropsmith::semantics::splitmix64;

fn quick_pipeline() -> PipelineConfig {
    let mut cfg = PipelineConfig::new();
    cfg.oracle_samples = 96;
    cfg
}

fn synthetic_catalog(gadgets: &[Gadget]) -> Catalog {
    build_synthetic(gadgets, &quick_pipeline())
}

fn mov_rr(dst: Reg, src: Reg) -> Vec<u8> {
    vec![0x48, 0x89, 0xC0 | ((src.index() as u8) << 3) | dst.index() as u8, 0xC3]
}

fn pop_r(r: Reg) -> Vec<u8> {
    assert!(r.index() < 8);
    vec![0x58 + r.index() as u8, 0xC3]
}

#[test]
fn controlled_registers_spec_examples() {
    let gadgets = vec![
        gadget(0x1000, &pop_r(Reg::Rax)),
        gadget(0x2000, &pop_r(Reg::Rdi)),
        gadget(0x3000, &[0x48, 0x31, 0xC0, 0xC3]), // xor rax, rax ; ret
    ];
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();
    let find = |va: u64| ctx.gadgets.iter().position(|g| g.va == va).unwrap();

    let pop_rax = find(0x1000);
    let pop_rdi = find(0x2000);
    let xor_rax = find(0x3000);

    let one = controlled_of(&ctx, &[pop_rax]).unwrap();
    assert_eq!(one.set, RegSet::single(Reg::Rax));
    assert_eq!(one.slot_of(Reg::Rax), Some(0));

    let two = controlled_of(&ctx, &[pop_rax, pop_rdi]).unwrap();
    assert_eq!(two.set, RegSet::of(&[Reg::Rax, Reg::Rdi]));
    assert_eq!(two.slot_of(Reg::Rdi), Some(16));

    // the xor forces rax to a constant, killing its slot control
    let zeroed = controlled_of(&ctx, &[pop_rax, xor_rax]).unwrap();
    assert_eq!(zeroed.set, RegSet::EMPTY);
}

#[test]
fn double_pop_is_optimal() {
    let gadgets = vec![
        gadget(0x1000, &pop_r(Reg::Rax)),
        gadget(0x2000, &pop_r(Reg::Rdi)),
        gadget(0x3000, &[0x58, 0x5F, 0xC3]), // pop rax ; pop rdi ; ret
    ];
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();
    let targets = RegSet::of(&[Reg::Rax, Reg::Rdi]);
    let search = shortest_setreg_chains(&ctx, targets, SearchLimits::default()).unwrap();
    let best = search.best_cover(targets).unwrap();
    assert_eq!(best.gadgets.len(), 1, "the double pop wins");
    assert_eq!(ctx.gadgets[best.gadgets[0]].va, 0x3000);
}

#[test]
fn missing_register_is_unsatisfiable() {
    let gadgets = vec![gadget(0x1000, &pop_r(Reg::Rax))];
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();
    match shortest_setreg_chains(&ctx, RegSet::single(Reg::Rdx), SearchLimits::default()) {
        Err(ChainError::Unsatisfiable(regs)) => assert_eq!(regs, RegSet::single(Reg::Rdx)),
        other => panic!("expected Unsatisfiable, got {other:?}"),
    }
}

#[test]
fn clobber_interaction_orders_rdi_last() {
    // add rax,rbx ; pop rdi ; ret   (sets rdi, but also recomputes rax)
    // pop rax ; pop rbx ; ret
    // pop rdi ; ret
    let gadgets = vec![
        gadget(0x1000, &pop_r(Reg::Rdi)),
        gadget(0x2000, &[0x48, 0x01, 0xD8, 0x5F, 0xC3]), // add rax,rbx ; pop rdi ; ret
        gadget(0x3000, &[0x58, 0x5B, 0xC3]),             // pop rax ; pop rbx ; ret
    ];
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();
    let targets = RegSet::of(&[Reg::Rax, Reg::Rdi]);
    let search = shortest_setreg_chains(&ctx, targets, SearchLimits::default()).unwrap();
    let best = search.best_cover(targets).unwrap();
    // whatever the chain, composition must certify both registers
    assert!(best.controlled.set.is_superset(targets));
    // and the rdi slot must not be consumed by the rax/rbx loader
    let rax_slot = best.controlled.slot_of(Reg::Rax).unwrap();
    let rdi_slot = best.controlled.slot_of(Reg::Rdi).unwrap();
    assert_ne!(rax_slot, rdi_slot);
}

#[test]
fn fig5_move_graph_three_hops() {
    // the published connection graph, 64-bit analogs, duplicate edges kept
    let edges: &[(Reg, Reg)] = &[
        (Reg::Rdi, Reg::Rdx),
        (Reg::Rsi, Reg::Rax),
        (Reg::Rbp, Reg::Rdx),
        (Reg::Rcx, Reg::Rbx),
        (Reg::Rsi, Reg::Rbp),
        (Reg::Rax, Reg::Rdi),
        (Reg::Rbx, Reg::Rcx),
        (Reg::Rdi, Reg::Rdx), // duplicate edge at a second address
        (Reg::Rdx, Reg::Rbx),
        (Reg::Rbx, Reg::Rax),
        (Reg::Rsi, Reg::Rax), // duplicate
    ];
    let gadgets: Vec<Gadget> = edges
        .iter()
        .enumerate()
        .map(|(i, (src, dst))| gadget(0x1000 + (i as u64) * 0x100, &mov_rr(*dst, *src)))
        .collect();
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();

    let path = find_move_path(&ctx, Reg::Rsi, Reg::Rbx, 8).unwrap();
    assert_eq!(path.gadgets.len(), 3, "esi -> ebp -> edx -> ebx");
    let texts: Vec<&str> = path.gadgets.iter().map(|&g| ctx.gadgets[g].text.as_str()).collect();
    assert_eq!(texts, vec!["mov rbp, rsi ; ret", "mov rdx, rbp ; ret", "mov rbx, rdx ; ret"]);

    // independent shortest-path computation over the same edge set
    let mut graph = petgraph::graph::DiGraph::<Reg, ()>::new();
    let nodes: Vec<_> = Reg::ALL.iter().map(|r| graph.add_node(*r)).collect();
    for (src, dst) in edges {
        graph.add_edge(nodes[src.index()], nodes[dst.index()], ());
    }
    let dist = petgraph::algo::dijkstra(&graph, nodes[Reg::Rsi.index()], Some(nodes[Reg::Rbx.index()]), |_| 1usize);
    assert_eq!(dist[&nodes[Reg::Rbx.index()]], 3);

    // src == dst is the empty chain
    assert!(find_move_path(&ctx, Reg::Rax, Reg::Rax, 8).unwrap().gadgets.is_empty());

    // r15 is untouched by any mover
    assert!(matches!(
        find_move_path(&ctx, Reg::Rsi, Reg::R15, 8),
        Err(ChainError::NoPath { .. })
    ));
}

#[test]
fn fig1_memwrite_chain_layout_and_execution() {
    let (blob, elf) = fig1_image_bytes();
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());

    let mem_addr = LOW_DATA + 0x100;
    let mem_value: u64 = 0x1122_3344_5566_7788;
    let payload = PayloadSpec::new(PayloadKind::MemWrite {
        addr: mem_addr,
        bytes: mem_value.to_le_bytes().to_vec(),
    });
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();

    // canonical frame order: loader, value, loader, address, store, next
    let values: Vec<u64> = layout.words.iter().map(|w| w.value).collect();
    assert_eq!(values.len(), 6);
    assert_eq!(values[0], blob.va("pop_rax"));
    assert_eq!(values[1], mem_value);
    assert_eq!(values[2], blob.va("pop_rdx"));
    assert_eq!(values[3], mem_addr);
    assert_eq!(values[4], blob.va("store_rdx_rax"));
    assert_eq!(layout.words[5].role, WordRole::FinalTarget);

    // ten-seed execution: the byte lands
    let cfg = EmuConfig::for_image(&image);
    let validation = validate_chain(&image, &layout, &cfg, &payload);
    assert!(validation.pass, "{:?}", validation.per_seed);
}

#[test]
fn ret_imm_inserts_padding() {
    let mut blob = GadgetBlob::new(LOW_BASE);
    blob.gadget("pop_rax_ret8", &[0x58, 0xC2, 0x08, 0x00])
        .gadget("pop_rdi", &[0x5F, 0xC3]);
    let elf = build_elf(
        &[SegSpec {
            vaddr: LOW_BASE,
            data: blob.bytes.clone(),
            mem_size: blob.bytes.len() as u64,
            exec: true,
            write: false,
        }],
        LOW_BASE,
    );
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());

    let mut regs = BTreeMap::new();
    regs.insert(Reg::Rax, 7u64);
    regs.insert(Reg::Rdi, 9u64);
    let payload = PayloadSpec::new(PayloadKind::SetRegs(regs));
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();

    // the ret-8 frame carries 8 bytes of dead padding after its next slot
    let ret8_pos = layout
        .words
        .iter()
        .position(|w| w.value == blob.va("pop_rax_ret8"))
        .expect("ret8 gadget appears");
    let frame_words: Vec<WordRole> = layout.words[ret8_pos + 1..ret8_pos + 4]
        .iter()
        .map(|w| w.role)
        .collect();
    assert_eq!(frame_words[0], WordRole::Operand);
    assert!(matches!(
        frame_words[1],
        WordRole::GadgetAddress | WordRole::FinalTarget
    ));
    assert_eq!(frame_words[2], WordRole::Padding, "ret 8 leaves dead padding");

    // and the next gadget is still reached
    let cfg = EmuConfig::for_image(&image);
    let validation = validate_chain(&image, &layout, &cfg, &payload);
    assert!(validation.pass, "{:?}", validation.per_seed);
}

#[test]
fn bad_byte_in_gadget_address_is_unavoidable() {
    // only loader for rax lives at an address with a 0x20 byte
    let gadgets = vec![gadget(0x2000, &pop_r(Reg::Rax))];
    let mut cfg = quick_pipeline();
    cfg.build.bad_bytes = vec![0x20];
    let cat = build_synthetic(&gadgets, &cfg);
    // the address filter drops the loader entirely
    assert!(CompileCtx::new(&cat, false).is_err());
}

#[test]
fn bad_byte_in_final_target_detected() {
    let gadgets = vec![gadget(0x1111, &pop_r(Reg::Rax))];
    let cat = synthetic_catalog(&gadgets);
    let mut regs = BTreeMap::new();
    regs.insert(Reg::Rax, 0x4141_4141_4141_4141u64);
    let mut payload = PayloadSpec::new(PayloadKind::SetRegs(regs));
    payload.bad_bytes = vec![0x11]; // the gadget address itself offends
    let chain = compile_payload(&cat, &payload).unwrap();
    match emit_stack(&chain, &payload.bad_bytes) {
        Err(ChainError::BadcharUnavoidable { byte: 0x11, .. }) => {}
        other => panic!("expected BadcharUnavoidable, got {other:?}"),
    }
}

#[test]
fn missing_syscall_gadget_reported() {
    let gadgets = vec![gadget(0x1000, &pop_r(Reg::Rax)), gadget(0x2000, &pop_r(Reg::Rdi))];
    let cat = synthetic_catalog(&gadgets);
    let payload = PayloadSpec::new(PayloadKind::Syscall { number: 60, args: vec![ArgSpec::Value(0)] });
    match compile_payload(&cat, &payload) {
        Err(ChainError::MissingGadget(what)) => assert!(what.contains("Syscall"), "{what}"),
        other => panic!("expected MissingGadget, got {other:?}"),
    }
}

#[test]
fn controlled_registers_public_api() {
    let gadgets = vec![gadget(0x1000, &pop_r(Reg::Rax)), gadget(0x2000, &pop_r(Reg::Rdi))];
    let cat = synthetic_catalog(&gadgets);
    let mut regs = BTreeMap::new();
    regs.insert(Reg::Rax, 1u64);
    regs.insert(Reg::Rdi, 2u64);
    let payload = PayloadSpec::new(PayloadKind::SetRegs(regs));
    let chain = compile_payload(&cat, &payload).unwrap();
    let set = controlled_registers(&cat, &chain).unwrap();
    assert!(set.is_superset(RegSet::of(&[Reg::Rax, Reg::Rdi])));
}

/// Pool of gadget shapes for randomized catalogs: loaders, movers, adders,
/// zeroers, and clobbering variants, all slot-distinct.
fn shape_pool() -> Vec<Vec<u8>> {
    let regs7 = [Reg::Rax, Reg::Rcx, Reg::Rdx, Reg::Rbx, Reg::Rbp, Reg::Rsi, Reg::Rdi];
    let mut pool = Vec::new();
    for r in regs7 {
        pool.push(pop_r(r));
    }
    for (a, b) in [
        (Reg::Rax, Reg::Rbx),
        (Reg::Rcx, Reg::Rdx),
        (Reg::Rdi, Reg::Rsi),
        (Reg::Rbx, Reg::Rbp),
    ] {
        pool.push(vec![0x58 + a.index() as u8, 0x58 + b.index() as u8, 0xC3]); // pop a ; pop b ; ret
        pool.push(mov_rr(a, b));
        pool.push(mov_rr(b, a));
        // add a, b ; ret
        pool.push(vec![0x48, 0x01, 0xC0 | ((b.index() as u8) << 3) | a.index() as u8, 0xC3]);
    }
    for r in [Reg::Rax, Reg::Rsi] {
        // xor r, r ; ret
        pool.push(vec![0x48, 0x31, 0xC0 | ((r.index() as u8) << 3) | r.index() as u8, 0xC3]);
    }
    // clobbering loaders: add rax, rbx ; pop rdx ; ret and friends
    pool.push(vec![0x48, 0x01, 0xD8, 0x5A, 0xC3]);
    pool.push(vec![0x48, 0x01, 0xCA, 0x5F, 0xC3]); // add rdx, rcx ; pop rdi ; ret
    pool
}

/// Exhaustive chain enumeration oracle for the shortest-chain search.
#[test]
fn alg1_matches_exhaustive_enumeration() {
    let pool = shape_pool();
    let limits = SearchLimits { max_len: 4 };

    for trial in 0..50u64 {
        // sample up to 8 distinct shapes
        let mut picks = Vec::new();
        let mut cursor = splitmix64(0xA161 + trial);
        let count = 3 + (cursor % 6) as usize; // 3..=8
        while picks.len() < count {
            cursor = splitmix64(cursor);
            let i = (cursor % pool.len() as u64) as usize;
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        let gadgets: Vec<Gadget> = picks
            .iter()
            .enumerate()
            .map(|(k, &i)| gadget(0x1000 + (k as u64) * 0x100, &pool[i]))
            .collect();
        let cat = synthetic_catalog(&gadgets);
        let Ok(ctx) = CompileCtx::new(&cat, false) else {
            continue;
        };

        let algo = search_all(&ctx, limits).unwrap();

        // brute force all sequences up to length 4
        let mut oracle: BTreeMap<RegSet, usize> = BTreeMap::new();
        let candidates: Vec<usize> = (0..ctx.gadgets.len())
            .filter(|&i| {
                matches!(
                    ctx.gadgets[i].frame.next,
                    ropsmith::semantics::NextSource::StackOffset(_)
                ) && !ctx.gadgets[i].writes_memory
            })
            .collect();
        let mut stack: Vec<Vec<usize>> = candidates.iter().map(|&c| vec![c]).collect();
        while let Some(seq) = stack.pop() {
            let controlled = controlled_of(&ctx, &seq).unwrap();
            let e = oracle.entry(controlled.set).or_insert(seq.len());
            if seq.len() < *e {
                *e = seq.len();
            }
            if seq.len() < limits.max_len {
                for &c in &candidates {
                    let mut next = seq.clone();
                    next.push(c);
                    stack.push(next);
                }
            }
        }

        for (set, oracle_len) in &oracle {
            let got = algo
                .by_set
                .get(set)
                .unwrap_or_else(|| panic!("trial {trial}: search missed set {set}"));
            assert_eq!(
                got.gadgets.len(),
                *oracle_len,
                "trial {trial}: set {set} suboptimal"
            );
        }
        for (set, chain) in &algo.by_set {
            if chain.gadgets.len() <= limits.max_len {
                assert_eq!(
                    oracle.get(set),
                    Some(&chain.gadgets.len()),
                    "trial {trial}: search invented set {set}"
                );
            }
        }
    }
}

/// Every compiled payload must validate in the emulator under all seeds, and
/// required registers must keep their values once set.
#[test]
fn compiled_payloads_validate_end_to_end() {
    let (_blob, elf) = rich_image_bytes();
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());
    let cfg = EmuConfig::for_image(&image);

    // register setting
    let mut regs = BTreeMap::new();
    regs.insert(Reg::Rax, 0x3Cu64);
    regs.insert(Reg::Rdi, 0x1234_5678u64);
    regs.insert(Reg::Rsi, 0u64);
    let payload = PayloadSpec::new(PayloadKind::SetRegs(regs));
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();
    let v = validate_chain(&image, &layout, &cfg, &payload);
    assert!(v.pass, "setregs failed: {:?}", v.per_seed);

    // memory write of an odd-length string
    let payload = PayloadSpec::new(PayloadKind::MemWrite {
        addr: LOW_DATA + 0x80,
        bytes: b"hello gadget world".to_vec(),
    });
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();
    let v = validate_chain(&image, &layout, &cfg, &payload);
    assert!(v.pass, "memwrite failed: {:?}", v.per_seed);

    // syscall with plain args
    let payload = PayloadSpec::new(PayloadKind::Syscall {
        number: 60,
        args: vec![ArgSpec::Value(42)],
    });
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();
    let v = validate_chain(&image, &layout, &cfg, &payload);
    assert!(v.pass, "syscall failed: {:?}", v.per_seed);

    // function call with arguments
    let target = 0x7000_0000u64;
    let payload = PayloadSpec::new(PayloadKind::CallFunction {
        addr: target,
        args: vec![ArgSpec::Value(1), ArgSpec::Value(2)],
    });
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();
    let mut call_cfg = cfg.clone();
    call_cfg.halt_va = Some(target);
    let v = validate_chain(&image, &layout, &call_cfg, &payload);
    assert!(v.pass, "call failed: {:?}", v.per_seed);
}

#[test]
fn execve_chain_reaches_syscall_under_all_seeds() {
    let (_blob, elf) = rich_image_bytes();
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());
    let cfg = EmuConfig::for_image(&image);

    let payload = PayloadSpec::execve_binsh(ropsmith::platform::Platform::linux_x86_64(), LOW_DATA + 0x100);
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();
    let v = validate_chain(&image, &layout, &cfg, &payload);
    assert!(v.pass, "execve failed: {:?}", v.per_seed);
    assert_eq!(cfg.seeds.len(), 10);
}

/// Registers required by the payload are never modified after their defining
/// slot load: verified by replaying the chain and snapshotting at gadget
/// boundaries.
#[test]
fn clobber_safety_trace_assertion() {
    use ropsmith::semantics::{step, ImageBacking, MachineState, MemBacking, StepOutcome};
    use std::sync::Arc;

    let (_blob, elf) = rich_image_bytes();
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());
    let cfg = EmuConfig::for_image(&image);

    let payload = PayloadSpec::new(PayloadKind::Syscall {
        number: 60,
        args: vec![ArgSpec::Value(7), ArgSpec::Value(8), ArgSpec::Value(9)],
    });
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();

    let step_starts: Vec<u64> = chain.gadget_vas();
    let required: Vec<(Reg, u64)> = vec![
        (Reg::Rax, 60),
        (Reg::Rdi, 7),
        (Reg::Rsi, 8),
        (Reg::Rdx, 9),
    ];

    let backing = Arc::new(ImageBacking {
        regions: image
            .regions
            .iter()
            .map(|r| (r.base_va, r.mem_size, r.bytes.clone(), r.writable))
            .collect(),
        scratch: cfg.scratch.clone(),
        stack: cfg.stack_range(),
    });
    let mut st = MachineState::with_backing(cfg.seeds[0], MemBacking::Image(backing));
    for (i, b) in layout.bytes.iter().enumerate() {
        st.plant_byte(cfg.stack_base + i as u64, *b);
    }
    st.set_reg(Reg::Rsp, cfg.stack_base + 8);
    st.set_rip(layout.word_at(0));

    // value once correct at a gadget boundary must stay correct
    let mut locked: BTreeMap<Reg, u64> = BTreeMap::new();
    for _ in 0..10_000 {
        let rip = st.rip();
        if step_starts.contains(&rip) {
            for (r, v) in &required {
                if let Some(actual) = st.peek_reg(*r) {
                    if actual == *v {
                        locked.entry(*r).or_insert(*v);
                    }
                    if let Some(expected) = locked.get(r) {
                        assert_eq!(actual, *expected, "{r} changed after its defining load");
                    }
                }
            }
        }
        let region = image.region_at(rip).expect("rip stays in image");
        let off = (rip - region.base_va) as usize;
        let instr = ropsmith::binfront::decode_instruction(&region.bytes, off, rip).unwrap();
        if step(&mut st, &instr).unwrap() == StepOutcome::Syscall { break }
    }
    for (r, v) in &required {
        assert_eq!(st.peek_reg(*r), Some(*v));
    }
}

#[test]
fn layout_bytes_decode_back_to_bindings() {
    let (_blob, elf) = rich_image_bytes();
    let (_dir, image) = load_fixture(&elf);
    let catalog = ropsmith::catalog::build_from_image(&image, &quick_pipeline());

    let mut regs = BTreeMap::new();
    regs.insert(Reg::Rax, 0xAAu64);
    regs.insert(Reg::Rdi, 0xBBu64);
    let payload = PayloadSpec::new(PayloadKind::SetRegs(regs.clone()));
    let chain = compile_payload(&catalog, &payload).unwrap();
    let layout = emit_stack(&chain, &[]).unwrap();

    assert_eq!(layout.bytes.len() % 8, 0);
    // walking the frames against the bytes reproduces every binding
    let mut cursor = 8u64; // skip the entry word
    for step in &chain.steps {
        for (off, slot) in &step.bindings {
            let word = layout.word_at(cursor + off);
            match slot {
                ropsmith::chaincomp::SlotValue::Value { value, .. } => assert_eq!(word, *value),
                ropsmith::chaincomp::SlotValue::Hole(t) => panic!("unbound hole {t}"),
            }
        }
        cursor += step.frame.frame_size as u64;
    }
    // and the symbol table points at the operand words
    for (name, value) in [("rax", 0xAAu64), ("rdi", 0xBB)] {
        let off = layout.symbols[name];
        assert_eq!(layout.word_at(off), value);
    }
}

#[test]
fn holes_bind_or_block_emission() {
    use ropsmith::chaincomp::SlotValue;

    let gadgets = vec![gadget(0x1000, &pop_r(Reg::Rax))];
    let cat = synthetic_catalog(&gadgets);
    let ctx = CompileCtx::new(&cat, false).unwrap();
    let mut bindings = BTreeMap::new();
    bindings.insert(0u64, SlotValue::Hole("value".into()));
    let mut chain = ropsmith::chaincomp::Chain {
        steps: vec![ctx.step_of(0, bindings)],
        final_target: FinalTarget::Sentinel,
    };

    // unbound holes block emission
    match emit_stack(&chain, &[]) {
        Err(ChainError::UnboundHole(tag)) => assert_eq!(tag, "value"),
        other => panic!("expected UnboundHole, got {other:?}"),
    }

    // binding fills the slot and records the symbol
    assert!(chain.bind("value", 0x1234));
    assert!(!chain.bind("no-such-hole", 1));
    let layout = emit_stack(&chain, &[]).unwrap();
    assert_eq!(layout.word_at(8), 0x1234);
    assert_eq!(layout.symbols["value"], 8);
}
