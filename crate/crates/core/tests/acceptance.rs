//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use common::{first_max_degree, graph, random_adjacency, random_document, random_record, rng};
use vmlab::classifier::{evaluate, f1, report_from_labels, train};
use vmlab::dataset::{build_corpus, read_records, split, write_records, SplitSpec};
use vmlab::interchange::{emit_document, parse_document};
use vmlab::ir::eval;
use vmlab::labeler::{identify_dispatcher, LabelerError, LabelerParams};
use vmlab::labels::{DispatchKind, Role};
use vmlab::pipeline::{bench_table, corpus_artifacts, run_pipeline, PipelineConfig};
use vmlab::preprocess::{corpus_reduction, labeled_units, segment_artifact, tokenize};
use vmlab::programs::{self, random_inputs, random_program};
use vmlab::virtualizer::{insert_markers, interpret, recover_truth, strip_markers, virtualize};

const STEP_BUDGET: u64 = 100_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.1?}, limit {limit:?}"))?;
    Ok(took)
}

fn table_pattern() -> Outcome {
    let start = Instant::now();
    let table = bench_table(7, &LabelerParams::default());
    let took = within(Duration::from_secs(10), start)?;
    ensure(table.rows.len() == 12, || format!("{} rows", table.rows.len()))?;
    let (mut o0, mut kept, mut lost) = (0, 0, 0);
    for row in &table.rows {
        let survives = matches!(row.role, Role::DispatchStart | Role::Handler);
        for k in 0..3 {
            ensure(row.cells[0][k], || format!("{} {} O0 column {k} is ✗", row.program, row.role))?;
            ensure(row.cells[1][k] == survives, || format!("{} {} O1 column {k} wrong", row.program, row.role))?;
            o0 += 1;
            if survives {
                kept += 1;
            } else {
                lost += 1;
            }
        }
    }
    Ok(format!("O0 {o0}/36 ✓; O1 Dispatch/Handler {kept}/18 ✓, VM Start/End {lost}/18 ✗; {took:.2?}"))
}

fn semantic_preservation() -> Outcome {
    let start = Instant::now();
    let expected: [(&str, Vec<i64>, Vec<i64>); 3] = [
        ("factorial", vec![5], vec![120]),
        ("fibonacci", vec![10], vec![55]),
        ("bubble_sort", programs::BUBBLE_SORT_PRESET.to_vec(), (1..=8).collect()),
    ];
    let mut cases: Vec<(vmlab::ir::SourceProgram, Vec<Vec<i64>>)> = Vec::new();
    for (name, input, output) in &expected {
        let p = programs::builtin(name).ok_or("missing benchmark")?;
        ensure(eval(&p, input, STEP_BUDGET).as_ref() == Ok(output), || format!("eval {name} wrong"))?;
        let mut suite = programs::benchmark_inputs(&p);
        suite.push(input.clone());
        cases.push((p, suite));
    }
    let mut r = rng(2024);
    for i in 0..50u64 {
        let seed = 1000 + i;
        cases.push((random_program(seed, r.gen_range(24..=160)), random_inputs(seed, 3)));
    }
    let mut checks = 0;
    for (p, suite) in &cases {
        for kind in DispatchKind::ALL {
            for opt in [0, 1] {
                let a = virtualize(p, kind, opt, 7);
                for inputs in suite {
                    let want = eval(p, inputs, STEP_BUDGET);
                    let got = interpret(&a, inputs, STEP_BUDGET);
                    ensure(got == want, || format!("{} {kind} O{opt} {inputs:?}: {got:?} != {want:?}", p.name))?;
                    checks += 1;
                }
            }
        }
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!("{} programs, {checks}/{checks} runs equal, {took:.2?}", cases.len()))
}

fn preprocessing() -> Outcome {
    let config = PipelineConfig::default();
    let artifacts = corpus_artifacts(&config);
    let mut ratios = Vec::new();
    let mut segments_seen = 0;
    for a in &artifacts {
        let segments = segment_artifact(a, config.tokenizer, config.budget).map_err(|e| e.to_string())?;
        ensure(segments.iter().all(|s| !s.tokens.is_empty() && s.tokens.len() <= config.budget), || {
            format!("{}: segment over budget", a.tag())
        })?;
        // Rebuild each same-role run from the labelled units and compare.
        let units = labeled_units(&a.cfg, &a.truth, config.tokenizer);
        let mut cursor = 0;
        let mut i = 0;
        while i < units.len() {
            let role = units[i].role;
            let mut stream = Vec::new();
            while i < units.len() && units[i].role == role {
                stream.extend(units[i].tokens.iter().cloned());
                i += 1;
            }
            let mut rebuilt = Vec::new();
            while rebuilt.len() < stream.len() {
                let s = segments.get(cursor).ok_or_else(|| format!("{}: ran out of segments", a.tag()))?;
                ensure(s.sub_label == role, || format!("{}: segment label {} in {role} run", a.tag(), s.sub_label))?;
                rebuilt.extend(s.tokens.iter().cloned());
                cursor += 1;
            }
            ensure(rebuilt == stream, || format!("{}: run does not reconstruct", a.tag()))?;
        }
        ensure(cursor == segments.len(), || format!("{}: extra segments", a.tag()))?;
        segments_seen += segments.len();

        let full: usize = a.cfg.blocks().iter().map(|b| tokenize(&b.instrs, config.tokenizer).len()).sum();
        let mean = segments.iter().map(|s| s.tokens.len()).sum::<usize>() as f64 / segments.len() as f64;
        ratios.push(1.0 - mean / full as f64);
    }
    let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let reported = corpus_reduction(&artifacts, config.tokenizer, config.budget).map_err(|e| e.to_string())?;
    ensure((ratio - reported).abs() < 1e-12, || format!("reported {reported} vs recomputed {ratio}"))?;
    ensure(ratio >= 0.90, || format!("reduction {ratio:.4} < 0.90"))?;
    Ok(format!("{} artifacts, {segments_seen} segments ≤ {}, reduction {ratio:.4}", artifacts.len(), config.budget))
}

fn classifier() -> Outcome {
    let start = Instant::now();
    let config = PipelineConfig::default();
    let artifacts = corpus_artifacts(&config);
    let corpus = build_corpus(&artifacts, 600, config.budget, config.tokenizer, 42).map_err(|e| e.to_string())?;
    ensure(corpus.shortfalls.is_empty(), || format!("short cells: {:?}", corpus.shortfalls))?;
    let (tr, te) = split(&corpus.records, &SplitSpec::new(0.8, 42).map_err(|e| e.to_string())?);
    let model = train(&tr, &config.feature_config(), config.train_params());
    let report = evaluate(&model, &te);
    let took = within(Duration::from_secs(300), start)?;
    let summary = format!(
        "macro-F1 {:.4}, main accuracy {:.4}, {} train / {} test, {took:.1?}",
        report.macro_f1,
        report.main_accuracy,
        tr.len(),
        te.len()
    );
    ensure(report.macro_f1 >= 0.95 && report.main_accuracy >= 0.85, || summary.clone())?;
    Ok(summary)
}

fn metric_arithmetic() -> Outcome {
    let v = f1(0.9983, 0.9993);
    ensure((v - 0.9988).abs() <= 1e-4, || format!("f1 = {v}"))?;

    // Hand-built fixture: truth role -> (predicted role, count).
    use Role::*;
    let plan: [(Role, &[(Role, usize)]); 6] = [
        (DispatchStart, &[(DispatchStart, 5)]),
        (Handler, &[(Handler, 4), (Vm, 2)]),
        (Vm, &[(Vm, 4), (Handler, 1)]),
        (VmStart, &[(VmStart, 3), (NonVm, 1)]),
        (VmEnd, &[(VmEnd, 2), (NonVm, 2)]),
        (NonVm, &[(NonVm, 6)]),
    ];
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (t, outs) in plan {
        for &(p, n) in outs {
            for _ in 0..n {
                let k = DispatchKind::ALL[truth.len() % 3];
                // three records get a wrong main label
                let pk = if truth.len() % 10 == 0 { DispatchKind::ALL[(truth.len() + 1) % 3] } else { k };
                truth.push((k, t));
                pred.push((pk, p));
            }
        }
    }
    ensure(truth.len() == 30, || format!("fixture has {} records", truth.len()))?;
    let report = report_from_labels(&truth, &pred);

    let confusion = vec![
        vec![5, 0, 0, 0, 0, 0],
        vec![0, 4, 2, 0, 0, 0],
        vec![0, 1, 4, 0, 0, 0],
        vec![0, 0, 0, 3, 0, 1],
        vec![0, 0, 0, 0, 2, 2],
        vec![0, 0, 0, 0, 0, 6],
    ];
    ensure(report.confusion == confusion, || format!("confusion {:?}", report.confusion))?;
    // (precision, recall, f1, support) worked out by hand
    let rows = [
        (1.0, 1.0, 1.0, 5),
        (4.0 / 5.0, 4.0 / 6.0, 8.0 / 11.0, 6),
        (4.0 / 6.0, 4.0 / 5.0, 8.0 / 11.0, 5),
        (1.0, 3.0 / 4.0, 6.0 / 7.0, 4),
        (1.0, 2.0 / 4.0, 2.0 / 3.0, 4),
        (6.0 / 9.0, 1.0, 4.0 / 5.0, 6),
    ];
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    for (row, (p, r, f, s)) in report.rows.iter().zip(rows) {
        ensure(close(row.precision, p) && close(row.recall, r) && close(row.f1, f) && row.support == s, || {
            format!("{} row {:?}", row.role, row)
        })?;
        ensure(!row.precision_undefined, || format!("{} flagged undefined", row.role))?;
    }
    let macro_f1 = (1.0 + 8.0 / 11.0 + 8.0 / 11.0 + 6.0 / 7.0 + 2.0 / 3.0 + 4.0 / 5.0) / 6.0;
    ensure(close(report.macro_precision, 77.0 / 90.0), || format!("macro P {}", report.macro_precision))?;
    ensure(close(report.macro_recall, 283.0 / 360.0), || format!("macro R {}", report.macro_recall))?;
    ensure(close(report.macro_f1, macro_f1), || format!("macro F1 {}", report.macro_f1))?;
    ensure(close(report.sub_accuracy, 24.0 / 30.0), || format!("sub acc {}", report.sub_accuracy))?;
    ensure(close(report.main_accuracy, 27.0 / 30.0), || format!("main acc {}", report.main_accuracy))?;
    ensure(report.total == 30, || "total".into())?;
    Ok(format!("f1(0.9983, 0.9993) = {v:.4}; 30-record report matches oracle"))
}

fn dispatcher_oracle() -> Outcome {
    let params = LabelerParams::default();
    let mut r = rng(6);
    let (mut found, mut none) = (0, 0);
    for i in 0..1000 {
        let max_degree = r.gen_range(0..=8);
        let adj = random_adjacency(&mut r, 50, max_degree);
        let (pos, max) = first_max_degree(&adj);
        let got = identify_dispatcher(&graph(&adj), &params);
        if max >= params.min_fanout {
            ensure(got.as_ref().map(|d| d.index()) == Ok(pos), || format!("graph {i}: {got:?}, oracle bb{pos}"))?;
            found += 1;
        } else {
            let want = LabelerError::NoDispatcher { max, min_fanout: params.min_fanout };
            ensure(got.as_ref() == Err(&want), || format!("graph {i}: {got:?}, oracle none"))?;
            none += 1;
        }
    }
    Ok(format!("1000/1000 agree ({found} with dispatcher, {none} below threshold)"))
}

fn round_trips() -> Outcome {
    let mut r = rng(7);
    let mut docs = 0;
    for i in 0..100 {
        let doc = random_document(&mut r);
        let text = emit_document(&doc);
        let back = parse_document(&text).map_err(|e| format!("doc {i}: {e}"))?;
        ensure(back == doc && emit_document(&back) == text, || format!("doc {i} differs"))?;
        docs += 1;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sets = 0;
    for i in 0..100 {
        let records: Vec<_> = (0..r.gen_range(1..15)).map(|_| random_record(&mut r)).collect();
        let path = dir.path().join(format!("{i}.jsonl"));
        write_records(&records, &path).map_err(|e| e.to_string())?;
        ensure(read_records(&path).map_err(|e| e.to_string())? == records, || format!("record set {i} differs"))?;
        sets += 1;
    }

    let mut marked = 0;
    for i in 0..100u64 {
        let kind = DispatchKind::ALL[(i % 3) as usize];
        let a = virtualize(&random_program(500 + i, r.gen_range(24..=120)), kind, (i % 2) as u8, i);
        let m = insert_markers(&a);
        ensure(strip_markers(&m) == a.cfg, || format!("artifact {i}: strip∘insert differs"))?;
        let recovered = recover_truth(&m).map_err(|e| e.to_string())?;
        ensure(recovered == (a.cfg.clone(), a.truth.clone()), || format!("artifact {i}: truth differs"))?;
        marked += 1;
    }
    Ok(format!("interchange {docs}/100, dataset {sets}/100, markers {marked}/100"))
}

fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = PipelineConfig { out: dir.path().join("out"), ..PipelineConfig::default() };
    let mut snaps = Vec::new();
    for _ in 0..2 {
        if config.out.exists() {
            fs::remove_dir_all(&config.out).map_err(|e| e.to_string())?;
        }
        run_pipeline(&config).map_err(|e| e.to_string())?;
        snaps.push(snapshot(&config.out)?);
    }
    let (a, b) = (&snaps[0], &snaps[1]);
    ensure(a.keys().eq(b.keys()), || "file sets differ".into())?;
    for (name, bytes) in a {
        ensure(&b[name] == bytes, || format!("{name} differs"))?;
    }
    let dots = a.keys().filter(|k| k.ends_with(".dot")).count();
    for required in ["manifest.txt", "train.jsonl", "test.jsonl", "model.bin"] {
        ensure(a.contains_key(required), || format!("{required} missing"))?;
    }
    Ok(format!("{} files byte-identical across runs ({dots} DOT)", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 detection table pattern", table_pattern),
        ("2 semantic preservation", semantic_preservation),
        ("3 preprocessing invariants", preprocessing),
        ("4 classifier performance", classifier),
        ("5 metric arithmetic", metric_arithmetic),
        ("6 dispatcher oracle", dispatcher_oracle),
        ("7 round trips", round_trips),
        ("8 pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/8 passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
