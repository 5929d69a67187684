//! End-to-end pipeline: virtualize, label, score, segment, sample, train,
//! evaluate, and render.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::{evaluate, save_model, train, EvalReport, FeatureConfig, TrainParams};
use crate::dataset::{build_corpus, holdout, render_manifest, split, write_records, SplitSpec};
use crate::interchange::emit_document;
use crate::ir::SourceProgram;
use crate::labeler::{label_structures, mark, score_against_truth, DetectionRow, LabelerParams};
use crate::labels::{DispatchKind, Role};
use crate::preprocess::{corpus_reduction, TokenizerMode, DEFAULT_BUDGET, MIN_BUDGET};
use crate::programs::{self, MAX_RANDOM_SIZE, MIN_RANDOM_SIZE};
use crate::virtualizer::{virtualize, VmArtifact};
use crate::viz::{emit_dot_with, ColorScheme, DotOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Error)]
#[error("{stage}: {cause}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub cause: String,
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, cause: e.to_string() }
}

/// Everything the pipeline needs. Parsed from flat `key = value` text;
/// unknown keys are errors.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub include_builtin: bool,
    pub random_programs: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub kinds: Vec<DispatchKind>,
    pub opts: Vec<u8>,
    pub budget: usize,
    pub tokenizer: TokenizerMode,
    pub per_class: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub program_seed: u64,
    pub vm_seed: u64,
    pub corpus_seed: u64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub epochs: u32,
    pub lr: f64,
    pub hash_bits: u32,
    pub min_fanout: usize,
    pub min_macro_f1: f64,
    pub min_main_accuracy: f64,
    pub min_reduction: f64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            include_builtin: true,
            random_programs: 400,
            min_size: 24,
            max_size: 160,
            kinds: DispatchKind::ALL.to_vec(),
            opts: vec![0, 1],
            budget: DEFAULT_BUDGET,
            tokenizer: TokenizerMode::Subword,
            per_class: 600,
            train_fraction: 0.8,
            val_fraction: 0.0,
            program_seed: 1,
            vm_seed: 7,
            corpus_seed: 42,
            split_seed: 42,
            train_seed: 42,
            epochs: 5,
            lr: 0.1,
            hash_bits: 18,
            min_fanout: 3,
            min_macro_f1: 0.95,
            min_main_accuracy: 0.85,
            min_reduction: 0.90,
            out: PathBuf::from("vmlab-out"),
        }
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(s).ok_or_else(|| ConfigError::Value { key: key.into(), message: format!("bad item `{s}`") }))
        .collect()
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Value { key: key.into(), message: format!("bad value `{value}`") })
        }
        match key {
            "programs" => {
                self.include_builtin = false;
                self.random_programs = 0;
                for part in value.split('+').map(str::trim) {
                    match part.split_once(':') {
                        None if part == "builtin" => self.include_builtin = true,
                        Some(("random", n)) => self.random_programs = num(key, n)?,
                        _ => {
                            return Err(ConfigError::Value {
                                key: key.into(),
                                message: format!(
                                    "expected `builtin`, `random:N`, or both joined by `+`, got `{value}`"
                                ),
                            })
                        }
                    }
                }
            }
            "min_size" => self.min_size = num(key, value)?,
            "max_size" => self.max_size = num(key, value)?,
            "kinds" => self.kinds = parse_list(key, value, |s| s.parse().ok())?,
            "opts" => self.opts = parse_list(key, value, |s| s.parse().ok())?,
            "budget" => self.budget = num(key, value)?,
            "tokenizer" => self.tokenizer = num(key, value)?,
            "per_class" => self.per_class = num(key, value)?,
            "train_fraction" => self.train_fraction = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "program_seed" => self.program_seed = num(key, value)?,
            "vm_seed" => self.vm_seed = num(key, value)?,
            "corpus_seed" => self.corpus_seed = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "train_seed" => self.train_seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "hash_bits" => self.hash_bits = num(key, value)?,
            "min_fanout" => self.min_fanout = num(key, value)?,
            "min_macro_f1" => self.min_macro_f1 = num(key, value)?,
            "min_main_accuracy" => self.min_main_accuracy = num(key, value)?,
            "min_reduction" => self.min_reduction = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(ConfigError::Value { key: key.into(), message: "unknown key".into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::Value { key: key.into(), message: message.into() });
        if self.kinds.is_empty() {
            return bad("kinds", "at least one dispatch kind is required");
        }
        if self.opts.is_empty() || self.opts.iter().any(|o| *o > 1) {
            return bad("opts", "must list opt levels from {0, 1}");
        }
        if !self.include_builtin && self.random_programs == 0 {
            return bad("programs", "no programs selected");
        }
        if self.min_size < MIN_RANDOM_SIZE || self.max_size > MAX_RANDOM_SIZE || self.min_size > self.max_size {
            return bad(
                "min_size",
                &format!("sizes must satisfy {MIN_RANDOM_SIZE} <= min_size <= max_size <= {MAX_RANDOM_SIZE}"),
            );
        }
        if self.budget < MIN_BUDGET {
            return bad("budget", &format!("must be at least {MIN_BUDGET}"));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie strictly between 0 and 1");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", "must lie in [0, 1)");
        }
        if !(1..=24).contains(&self.hash_bits) {
            return bad("hash_bits", "must lie in 1..=24");
        }
        if self.min_fanout < 2 {
            return bad("min_fanout", "must be at least 2");
        }
        if self.per_class == 0 || self.epochs == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return bad("per_class", "per_class, epochs, and lr must be positive");
        }
        Ok(())
    }

    /// The configuration as `key = value` lines, in a fixed order.
    pub fn to_text(&self) -> String {
        let list = |v: Vec<String>| v.join(",");
        let mut programs = Vec::new();
        if self.include_builtin {
            programs.push("builtin".to_string());
        }
        if self.random_programs > 0 {
            programs.push(format!("random:{}", self.random_programs));
        }
        let pairs = [
            ("programs", programs.join("+")),
            ("min_size", self.min_size.to_string()),
            ("max_size", self.max_size.to_string()),
            ("kinds", list(self.kinds.iter().map(ToString::to_string).collect())),
            ("opts", list(self.opts.iter().map(ToString::to_string).collect())),
            ("budget", self.budget.to_string()),
            ("tokenizer", self.tokenizer.to_string()),
            ("per_class", self.per_class.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("program_seed", self.program_seed.to_string()),
            ("vm_seed", self.vm_seed.to_string()),
            ("corpus_seed", self.corpus_seed.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("hash_bits", self.hash_bits.to_string()),
            ("min_fanout", self.min_fanout.to_string()),
            ("min_macro_f1", self.min_macro_f1.to_string()),
            ("min_main_accuracy", self.min_main_accuracy.to_string()),
            ("min_reduction", self.min_reduction.to_string()),
            ("out", self.out.display().to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig { hash_dim: 1 << self.hash_bits, ..FeatureConfig::default() }
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams { epochs: self.epochs, lr: self.lr, seed: self.train_seed }
    }
}

/// Benchmarks (if selected) followed by random programs whose sizes are
/// uniform in `[min_size, max_size]`.
pub fn corpus_programs(config: &PipelineConfig) -> Vec<SourceProgram> {
    let mut out = if config.include_builtin { programs::builtin_programs() } else { Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.program_seed);
    for _ in 0..config.random_programs {
        let seed: u64 = rng.gen();
        let size = rng.gen_range(config.min_size..=config.max_size);
        out.push(programs::random_program(seed, size));
    }
    out
}

/// Seed used for the register assignment of the `index`th program.
pub fn artifact_seed(vm_seed: u64, index: usize) -> u64 {
    vm_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Every program under every selected kind and opt level, in program order.
pub fn corpus_artifacts(config: &PipelineConfig) -> Vec<VmArtifact> {
    let mut out = Vec::new();
    for (i, p) in corpus_programs(config).iter().enumerate() {
        for &kind in &config.kinds {
            for &opt in &config.opts {
                out.push(virtualize(p, kind, opt, artifact_seed(config.vm_seed, i)));
            }
        }
    }
    out
}

/// One benchmark row: detection verdicts for one role across opt levels
/// (outer) and dispatch kinds (inner).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRow {
    pub program: String,
    pub role: Role,
    pub cells: [[bool; 3]; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

const ROLE_NAMES: [(Role, &str); 4] = [
    (Role::VmStart, "VM Start"),
    (Role::DispatchStart, "Dispatch"),
    (Role::Handler, "Handler"),
    (Role::VmEnd, "VM End"),
];

/// Scores the labeler on every benchmark, kind, and opt level.
pub fn bench_table(vm_seed: u64, params: &LabelerParams) -> BenchTable {
    let mut rows = Vec::new();
    for (i, p) in programs::builtin_programs().iter().enumerate() {
        let mut detections: [[Option<DetectionRow>; 3]; 2] = Default::default();
        for opt in 0..2u8 {
            for kind in DispatchKind::ALL {
                let a = virtualize(p, kind, opt, artifact_seed(vm_seed, i));
                detections[opt as usize][kind.index()] =
                    Some(score_against_truth(&label_structures(&a.cfg, params), &a));
            }
        }
        for (role, _) in ROLE_NAMES {
            let cells = detections
                .clone()
                .map(|per_kind| per_kind.map(|d| d.and_then(|d| d.get(role)).expect("every cell is scored")));
            rows.push(BenchRow { program: p.name.clone(), role, cells });
        }
    }
    BenchTable { rows }
}

fn role_name(role: Role) -> &'static str {
    ROLE_NAMES.iter().find(|(r, _)| *r == role).map(|(_, n)| *n).unwrap_or("")
}

impl BenchTable {
    pub fn to_text(&self) -> String {
        let kinds = ["Switch", "Direct", "Indirect"];
        let mut out = format!("{:<12} {:<9} | {:^26} | {:^26}\n", "Program", "Role", "-O0", "Others");
        let _ = writeln!(
            out,
            "{:<12} {:<9} | {:<8}{:<8}{:<10} | {:<8}{:<8}{:<10}",
            "", "", kinds[0], kinds[1], kinds[2], kinds[0], kinds[1], kinds[2]
        );
        for r in &self.rows {
            let c = |o: usize, k: usize| mark(r.cells[o][k]);
            let _ = writeln!(
                out,
                "{:<12} {:<9} | {:<8}{:<8}{:<10} | {:<8}{:<8}{:<10}",
                r.program,
                role_name(r.role),
                c(0, 0),
                c(0, 1),
                c(0, 2),
                c(1, 0),
                c(1, 1),
                c(1, 2)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("program,role,o0_switch,o0_direct,o0_indirect,o1_switch,o1_direct,o1_indirect\n");
        for r in &self.rows {
            let cells: Vec<&str> = r.cells.iter().flatten().map(|ok| if *ok { "1" } else { "0" }).collect();
            let _ = writeln!(out, "{},{},{}", r.program, r.role, cells.join(","));
        }
        out
    }

    /// Whether the matrix has the expected shape: everything detected at
    /// opt 0; at opt 1 the dispatcher and handlers detected and the entry
    /// and exit boundaries not.
    pub fn matches_expected_pattern(&self) -> bool {
        self.rows.iter().all(|r| {
            let o1 = matches!(r.role, Role::DispatchStart | Role::Handler);
            r.cells[0].iter().all(|c| *c) && r.cells[1].iter().all(|c| *c == o1)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub bench: BenchTable,
    pub reduction: f64,
    pub eval: EvalReport,
    pub records: usize,
    pub gates: Vec<(String, bool)>,
    pub manifest: String,
}

impl PipelineReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|(_, ok)| *ok)
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError { stage: "write", cause: format!("{}: {e}", path.display()) })
}

/// Runs every stage and writes outputs under `config.out`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    config.validate().map_err(stage("config"))?;
    let out = &config.out;
    fs::create_dir_all(out.join("dot")).map_err(stage("setup"))?;
    fs::create_dir_all(out.join("cfg")).map_err(stage("setup"))?;
    let params = LabelerParams::new(config.min_fanout).map_err(stage("config"))?;

    let bench = bench_table(config.vm_seed, &params);
    write(&out.join("bench_table.txt"), &bench.to_text())?;
    write(&out.join("bench_table.csv"), &bench.to_csv())?;

    let artifacts = corpus_artifacts(config);
    let benchmarks: BTreeSet<String> = programs::builtin_programs().into_iter().map(|p| p.name).collect();
    for a in artifacts.iter().filter(|a| benchmarks.contains(&a.program)) {
        let pred = label_structures(&a.cfg, &params);
        let mut doc = a.to_document();
        doc.set_roles(&pred);
        write(&out.join("cfg").join(format!("{}.cfg", a.tag())), &emit_document(&doc))?;
        let scheme = ColorScheme::default();
        let pred_dot = emit_dot_with(&a.cfg, &pred, &scheme, &DotOptions::default()).map_err(stage("viz"))?;
        let truth_dot = emit_dot_with(&a.cfg, &a.block_roles(), &scheme, &DotOptions::mixed_from(&a.truth))
            .map_err(stage("viz"))?;
        write(&out.join("dot").join(format!("{}.pred.dot", a.tag())), &pred_dot)?;
        write(&out.join("dot").join(format!("{}.truth.dot", a.tag())), &truth_dot)?;
    }

    let reduction = corpus_reduction(&artifacts, config.tokenizer, config.budget).map_err(stage("preprocess"))?;

    let corpus = build_corpus(&artifacts, config.per_class, config.budget, config.tokenizer, config.corpus_seed)
        .map_err(stage("dataset"))?;
    let spec = SplitSpec::new(config.train_fraction, config.split_seed).map_err(stage("dataset"))?;
    let (mut train_set, test_set) = split(&corpus.records, &spec);
    let mut val_set = Vec::new();
    if config.val_fraction > 0.0 {
        (train_set, val_set) = holdout(&train_set, config.val_fraction, config.split_seed).map_err(stage("dataset"))?;
    }
    write_records(&train_set, &out.join("train.jsonl")).map_err(stage("dataset"))?;
    write_records(&test_set, &out.join("test.jsonl")).map_err(stage("dataset"))?;
    if !val_set.is_empty() {
        write_records(&val_set, &out.join("val.jsonl")).map_err(stage("dataset"))?;
    }
    let mut sets: Vec<(&str, &[_])> = vec![("train", &train_set), ("test", &test_set)];
    if !val_set.is_empty() {
        sets.push(("val", &val_set));
    }
    let dataset_manifest = render_manifest(&sets);
    write(&out.join("dataset_manifest.txt"), &dataset_manifest)?;

    let model = train(&train_set, &config.feature_config(), config.train_params());
    save_model(&model, &out.join("model.bin")).map_err(stage("train"))?;
    let eval = evaluate(&model, &test_set);
    write(&out.join("eval.txt"), &eval.to_table())?;
    write(&out.join("eval.csv"), &eval.to_csv())?;

    let gates = vec![
        (format!("macro_f1 >= {}", config.min_macro_f1), eval.macro_f1 >= config.min_macro_f1),
        (format!("main_accuracy >= {}", config.min_main_accuracy), eval.main_accuracy >= config.min_main_accuracy),
        (format!("reduction >= {}", config.min_reduction), reduction >= config.min_reduction),
    ];

    let mut m = String::from("[config]\n");
    m.push_str(&config.to_text());
    m.push_str("\n[artifacts]\n");
    let _ = writeln!(m, "programs = {}", artifacts.len() / (config.kinds.len() * config.opts.len()));
    let _ = writeln!(m, "artifacts = {}", artifacts.len());
    let _ = writeln!(m, "artifact_seed = vm_seed * 0x9e3779b97f4a7c15 + program_index");
    m.push_str("\n[bench_table]\n");
    m.push_str(&bench.to_text());
    let _ = writeln!(m, "expected_pattern = {}", bench.matches_expected_pattern());
    m.push_str("\n[preprocess]\n");
    let _ = writeln!(m, "reduction_ratio = {reduction:.6}");
    m.push_str("reduction_definition = mean over functions of 1 - mean segment tokens / whole-function tokens\n");
    m.push_str("\n[dataset]\n");
    let _ = writeln!(m, "records = {}", corpus.records.len());
    for s in &corpus.shortfalls {
        let _ =
            writeln!(m, "shortfall = {} {} requested {} available {}", s.cell.0, s.cell.1, s.requested, s.available);
    }
    m.push_str(&dataset_manifest);
    m.push_str("\n[eval]\n");
    m.push_str(&eval.to_table());
    m.push_str("\n[gates]\n");
    for (name, ok) in &gates {
        let _ = writeln!(m, "{name} : {}", if *ok { "pass" } else { "FAIL" });
    }
    write(&out.join("manifest.txt"), &m)?;

    Ok(PipelineReport { bench, reduction, eval, records: corpus.records.len(), gates, manifest: m })
}
