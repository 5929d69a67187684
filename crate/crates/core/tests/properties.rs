mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{
    brute_force_scc, first_max_degree, graph, graph_with_ids, random_adjacency, random_document, random_record, rng,
};
use vmlab::cfg::BlockId;
use vmlab::classifier::{evaluate, train, FeatureConfig, TrainParams};
use vmlab::dataset::{all_cells, cell_counts, duplicate_ids, sample_corpus, split, SplitSpec};
use vmlab::interchange::{emit_document, parse_document};
use vmlab::ir::eval;
use vmlab::labeler::{identify_dispatcher, label_structures, LabelerError, LabelerParams};
use vmlab::labels::{pure_role, DispatchKind, Role};
use vmlab::preprocess::{segment_and_merge, tokenize, TokenizerMode, Unit};
use vmlab::programs::{random_inputs, random_program};
use vmlab::virtualizer::{insert_markers, recover_truth, strip_markers, virtualize};
use vmlab::viz::{check_dot, emit_dot, ColorScheme};

fn kind_strategy() -> impl Strategy<Value = DispatchKind> {
    prop::sample::select(DispatchKind::ALL.to_vec())
}

fn role_strategy() -> impl Strategy<Value = Role> {
    prop::sample::select(Role::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interchange_round_trips(seed in any::<u64>()) {
        let doc = random_document(&mut rng(seed));
        let text = emit_document(&doc);
        let back = parse_document(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(emit_document(&back), text.clone());
        let edges = text.lines().filter(|l| l.starts_with("EDGE ")).count();
        let degree_sum: usize = doc.cfg.blocks().iter().map(|b| b.succs.len()).sum();
        prop_assert_eq!(edges, degree_sum);
    }

    #[test]
    fn artifact_documents_round_trip(seed in any::<u64>(), size in 24usize..80, kind in kind_strategy(), opt in 0u8..=1) {
        let a = virtualize(&random_program(seed, size), kind, opt, seed);
        let doc = a.to_document();
        prop_assert_eq!(parse_document(&emit_document(&doc)).unwrap(), doc);
    }

    #[test]
    fn scc_matches_reachability(seed in any::<u64>()) {
        let mut r = rng(seed);
        let adj = random_adjacency(&mut r, 50, 3);
        let cfg = graph(&adj);
        for b in 0..adj.len() {
            let got: BTreeSet<usize> = cfg.scc_of(BlockId(b as u32)).unwrap().members.iter().map(|id| id.index()).collect();
            prop_assert_eq!(got, brute_force_scc(&adj, b));
        }
    }

    #[test]
    fn dispatcher_ignores_id_renaming(seed in any::<u64>()) {
        let mut r = rng(seed);
        let adj = random_adjacency(&mut r, 30, 6);
        let renamed: Vec<u32> = (0..adj.len() as u32).map(|i| 1000 - 7 * i).collect();
        let params = LabelerParams::default();
        let a = identify_dispatcher(&graph(&adj), &params).map(|d| d.index());
        let b = identify_dispatcher(&graph_with_ids(&adj, &renamed, |_| Vec::new()), &params)
            .map(|d| (0..adj.len()).find(|&i| renamed[i] == d.0).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn role_map_invariants(seed in any::<u64>(), fanout in 2usize..5) {
        let mut r = rng(seed);
        let adj = random_adjacency(&mut r, 40, 6);
        let cfg = graph(&adj);
        let params = LabelerParams::new(fanout).unwrap();
        let roles = label_structures(&cfg, &params);
        prop_assert_eq!(roles.len(), cfg.len());
        let starts: Vec<BlockId> = roles.iter().filter(|(_, r)| **r == Role::DispatchStart).map(|(id, _)| *id).collect();
        prop_assert!(starts.len() <= 1);
        match identify_dispatcher(&cfg, &params) {
            Ok(d) => {
                prop_assert_eq!(starts, vec![d]);
                let succs: BTreeSet<BlockId> = cfg.succs(d).unwrap().iter().copied().collect();
                for (id, role) in &roles {
                    if *role == Role::Handler {
                        prop_assert!(succs.contains(id));
                    }
                }
            }
            Err(_) => prop_assert!(roles.values().all(|r| *r == Role::NonVm)),
        }
    }

    #[test]
    fn dropping_edges_elsewhere_keeps_dispatcher(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut adj = random_adjacency(&mut r, 20, 6);
        let params = LabelerParams::default();
        let before = identify_dispatcher(&graph(&adj), &params);
        if let Ok(d) = before {
            let victim = (d.index() + 1 + (seed as usize % adj.len())) % adj.len();
            if victim != d.index() {
                adj[victim].clear();
                prop_assert_eq!(identify_dispatcher(&graph(&adj), &params), Ok(d));
            }
        }
        let (pos, max) = first_max_degree(&adj);
        match identify_dispatcher(&graph(&adj), &params) {
            Ok(d) => prop_assert_eq!(d.index(), pos),
            Err(e) => prop_assert_eq!(e, LabelerError::NoDispatcher { max, min_fanout: 3 }),
        }
    }

    #[test]
    fn segments_respect_budget_and_runs(
        units in prop::collection::vec((role_strategy(), 0usize..300), 1..25),
        budget in 8usize..=1024,
    ) {
        let units: Vec<Unit> = units
            .iter()
            .enumerate()
            .map(|(i, (role, n))| Unit {
                block: BlockId(i as u32),
                tokens: (0..*n).map(|k| format!("t{i}_{k}")).collect(),
                role: *role,
            })
            .collect();
        let chunks = segment_and_merge(&units, budget).unwrap();
        for c in &chunks {
            prop_assert!(!c.tokens.is_empty() && c.tokens.len() <= budget);
            for t in &c.tokens {
                let origin: usize = t[1..t.find('_').unwrap()].parse().unwrap();
                prop_assert_eq!(units[origin].role, c.role);
            }
        }
        // each maximal same-role run reappears as consecutive chunks
        let mut cursor = 0;
        let mut i = 0;
        while i < units.len() {
            let role = units[i].role;
            let mut stream = Vec::new();
            while i < units.len() && units[i].role == role {
                stream.extend(units[i].tokens.iter().cloned());
                i += 1;
            }
            if stream.is_empty() {
                continue;
            }
            let mut rebuilt = Vec::new();
            while rebuilt.len() < stream.len() {
                prop_assert_eq!(chunks[cursor].role, role);
                rebuilt.extend(chunks[cursor].tokens.iter().cloned());
                cursor += 1;
            }
            prop_assert_eq!(rebuilt, stream);
        }
        prop_assert_eq!(cursor, chunks.len());
    }

    #[test]
    fn tokenize_is_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let instrs: Vec<String> = (0..10).map(|_| common::random_instr(&mut r)).collect();
        for mode in [TokenizerMode::Subword, TokenizerMode::Normalized] {
            prop_assert_eq!(tokenize(&instrs, mode), tokenize(&instrs, mode));
        }
        let joined = tokenize(&instrs, TokenizerMode::Subword);
        let piecewise: Vec<String> = instrs.iter().flat_map(|i| tokenize(&[i], TokenizerMode::Subword)).collect();
        prop_assert_eq!(joined, piecewise);
    }

    #[test]
    fn generated_programs_validate(seed in any::<u64>(), size in 8usize..=512) {
        let p = random_program(seed, size);
        prop_assert_eq!(p.instrs.len(), size);
        prop_assert!(p.validate().is_ok());
        for inputs in random_inputs(seed, 2) {
            prop_assert_eq!(eval(&p, &inputs, 100_000), eval(&p, &inputs, 100_000));
        }
    }

    #[test]
    fn virtualized_structure(seed in any::<u64>(), size in 24usize..120, kind in kind_strategy()) {
        let p = random_program(seed, size);
        let a0 = virtualize(&p, kind, 0, seed);
        prop_assert_eq!(&a0, &virtualize(&p, kind, 0, seed));
        prop_assert!(a0.cfg.ids().all(|id| a0.is_pure(id)));
        let ds = a0.pure_blocks(Role::DispatchStart);
        prop_assert_eq!(ds.len(), 1);
        let succs: BTreeSet<BlockId> = a0.cfg.succs(ds[0]).unwrap().iter().copied().collect();
        prop_assert!(a0.pure_blocks(Role::Handler).iter().all(|h| succs.contains(h)));

        let a1 = virtualize(&p, kind, 1, seed);
        prop_assert_eq!(a1.pure_blocks(Role::DispatchStart).len(), 1);
        prop_assert_eq!(a1.pure_blocks(Role::Handler).len(), a0.pure_blocks(Role::Handler).len());
        for role in [Role::VmStart, Role::VmEnd] {
            prop_assert!(a1.pure_blocks(role).is_empty());
            let inside_mixed = a1.truth.values().any(|s| pure_role(s).is_none() && s.iter().any(|x| x.role == role));
            prop_assert!(inside_mixed);
        }
    }

    #[test]
    fn markers_round_trip(seed in any::<u64>(), size in 24usize..100, kind in kind_strategy(), opt in 0u8..=1) {
        let a = virtualize(&random_program(seed, size), kind, opt, seed);
        let marked = insert_markers(&a);
        prop_assert_eq!(strip_markers(&marked), a.cfg.clone());
        prop_assert_eq!(recover_truth(&marked).unwrap(), (a.cfg.clone(), a.truth.clone()));
    }

    #[test]
    fn dot_is_total_and_deterministic(seed in any::<u64>(), kind in kind_strategy()) {
        let a = virtualize(&random_program(seed, 40), kind, 1, seed);
        let roles = label_structures(&a.cfg, &LabelerParams::default());
        let dot = emit_dot(&a.cfg, &roles, &ColorScheme::default()).unwrap();
        prop_assert_eq!(&dot, &emit_dot(&a.cfg, &roles, &ColorScheme::default()).unwrap());
        let summary = check_dot(&dot).unwrap();
        prop_assert_eq!(summary.nodes, a.cfg.len());
        prop_assert_eq!(summary.edges, a.cfg.edge_count());
        prop_assert_eq!(summary.fill.len(), a.cfg.len());
    }

    #[test]
    fn dataset_records_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let records: Vec<_> = (0..20).map(|_| random_record(&mut r)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        vmlab::dataset::write_records(&records, &path).unwrap();
        prop_assert_eq!(vmlab::dataset::read_records(&path).unwrap(), records);
    }

    #[test]
    fn balancing_and_split(seed in any::<u64>(), per_class in 1usize..12, train in 0.05f64..0.95) {
        let mut r = rng(seed);
        let mut pool: Vec<_> = (0..300).map(|_| random_record(&mut r)).collect();
        pool.extend(pool[..30].to_vec());
        let corpus = sample_corpus(pool, per_class, seed);
        prop_assert!(duplicate_ids(&corpus.records).is_empty());
        let counts = cell_counts(&corpus.records);
        for cell in all_cells() {
            prop_assert_eq!(counts[&cell], per_class.min(corpus.available[&cell]));
        }

        let spec = SplitSpec::new(train, seed).unwrap();
        let (tr, te) = split(&corpus.records, &spec);
        let mut ids: Vec<&str> = tr.iter().chain(&te).map(|x| x.id.as_str()).collect();
        ids.sort();
        let mut all: Vec<&str> = corpus.records.iter().map(|x| x.id.as_str()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
        let (ctr, cte) = (cell_counts(&tr), cell_counts(&te));
        for cell in all_cells() {
            let n = counts[&cell];
            prop_assert_eq!(ctr[&cell] + cte[&cell], n);
            prop_assert!((ctr[&cell] as f64 - train * n as f64).abs() <= 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_deterministic_and_beats_majority(seed in any::<u64>()) {
        let mut r = rng(seed);
        let records: Vec<_> = (0..120).map(|_| random_record(&mut r)).collect();
        let config = FeatureConfig::new(vec![1, 2], 1 << 12, true).unwrap();
        let params = TrainParams { seed, ..TrainParams::default() };
        let m1 = train(&records, &config, params);
        let mut reversed = records.clone();
        reversed.reverse();
        prop_assert_eq!(&m1, &train(&reversed, &config, params));
        let report = evaluate(&m1, &records);
        prop_assert_eq!(&report, &evaluate(&m1, &records));

        let mean_f1 = report.rows.iter().map(|row| row.f1).sum::<f64>() / report.rows.len() as f64;
        prop_assert!((report.macro_f1 - mean_f1).abs() < 1e-12);
        let majority = report.rows.iter().map(|row| row.support).max().unwrap() as f64 / records.len() as f64;
        prop_assert!(report.sub_accuracy >= majority);
    }
}
