use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vmlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmlab")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn virtualize_then_label_reports_detection() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&vmlab(&["virtualize", "--program", "factorial", "--kind", "indirect", "--out", "f.cfg"], dir.path()));
    let text = stdout(&vmlab(&["label", "f.cfg"], dir.path()));
    assert!(text.starts_with("FUNC factorial\n"));
    assert!(text.contains("# detection: VM-START ✓  DISPATCH-START ✓  HANDLER ✓  VM-END ✓"));

    stdout(&vmlab(
        &["virtualize", "--program", "factorial", "--kind", "indirect", "--opt", "1", "--out", "o.cfg"],
        dir.path(),
    ));
    let text = stdout(&vmlab(&["label", "o.cfg"], dir.path()));
    assert!(text.contains("VM-START ✗  DISPATCH-START ✓  HANDLER ✓  VM-END ✗"));
}

#[test]
fn labelled_output_parses_as_interchange() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&vmlab(&["virtualize", "--program", "fibonacci", "--markers", "--out", "m.cfg"], dir.path()));
    assert!(fs::read_to_string(dir.path().join("m.cfg")).unwrap().contains("__vmlab_"));
    let summary = stdout(&vmlab(&["label", "m.cfg", "--out", "l.cfg"], dir.path()));
    assert!(summary.contains("✓  DISPATCH-START ✓"));
    let doc = vmlab::interchange::parse_document(&fs::read_to_string(dir.path().join("l.cfg")).unwrap()).unwrap();
    assert_eq!(doc.labels.len(), doc.cfg.len());
    assert!(doc.cfg.blocks().iter().all(|b| b.instrs.iter().all(|i| !vmlab::virtualizer::is_marker(i))));
}

#[test]
fn program_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.vm"), vmlab::programs::factorial().to_text()).unwrap();
    let text = stdout(&vmlab(&["virtualize", "--program", "p.vm"], dir.path()));
    assert!(text.contains("LABEL"));
    let bad = vmlab(&["virtualize", "--program", "missing"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn preprocess_respects_budget() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&vmlab(&["virtualize", "--program", "bubble_sort", "--kind", "direct", "--out", "b.cfg"], dir.path()));
    let jsonl = stdout(&vmlab(&["preprocess", "b.cfg", "--budget", "16", "--tokenizer", "normalized"], dir.path()));
    assert!(!jsonl.is_empty());
    for line in jsonl.lines() {
        let r = vmlab::dataset::parse_record(line).unwrap();
        assert!(r.tokens.len() <= 16);
        assert_eq!(r.main_label, vmlab::labels::DispatchKind::Direct);
    }
}

#[test]
fn preprocess_without_labels_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("u.cfg"), "FUNC f\nBLOCK 0\nINS ret\n").unwrap();
    let o = vmlab(&["preprocess", "u.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no LABEL"));
}

#[test]
fn dataset_train_eval_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "programs = builtin+random:12\n";
    fs::write(dir.path().join("gen.conf"), cfg).unwrap();
    stdout(&vmlab(&["dataset", "--config", "gen.conf", "--per-class", "10", "--out", "ds"], dir.path()));
    let manifest = fs::read_to_string(dir.path().join("ds/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 42"));
    stdout(&vmlab(&["train", "ds/train.jsonl", "--hash-bits", "12", "--out", "m.bin"], dir.path()));
    let table = stdout(&vmlab(&["eval", "m.bin", "ds/test.jsonl"], dir.path()));
    assert!(table.contains("main-label accuracy"));
    let csv = stdout(&vmlab(&["eval", "m.bin", "ds/test.jsonl", "--csv"], dir.path()));
    assert!(csv.lines().next().unwrap().contains(','));
}

#[test]
fn viz_emits_checkable_dot() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&vmlab(&["virtualize", "--program", "factorial", "--opt", "1", "--out", "f.cfg"], dir.path()));
    for labels in ["pred", "truth"] {
        let dot = stdout(&vmlab(&["viz", "f.cfg", "--labels", labels], dir.path()));
        let summary = vmlab::viz::check_dot(&dot).unwrap();
        assert!(summary.fill.values().any(|c| c == "red"));
    }
    let truth = stdout(&vmlab(&["viz", "f.cfg", "--labels", "truth"], dir.path()));
    assert!(truth.contains("filled,dashed"));
}

#[test]
fn bench_table_csv_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = stdout(&vmlab(&["bench-table", "--csv"], dir.path()));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn pipeline_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let small = ["--set", "programs=builtin+random:6", "--set", "per_class=10", "--set", "hash_bits=12"];
    let mut args = vec!["pipeline", "--out", "a", "--set", "min_macro_f1=0", "--set", "min_main_accuracy=0"];
    args.extend(small);
    let o = vmlab(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("a/manifest.txt").exists());

    let mut args = vec!["pipeline", "--out", "b", "--set", "min_reduction=1"];
    args.extend(small);
    assert_eq!(vmlab(&args, dir.path()).status.code(), Some(2));

    let o = vmlab(&["pipeline", "--set", "kinds="], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("vmlab-out").exists());
}
