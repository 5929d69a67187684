//! `vmlab` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use vmlab::classifier::{evaluate, load_model, save_model, train, FeatureConfig, TrainParams};
use vmlab::dataset::{
    read_records, render_manifest, render_records, sample_corpus, split, write_records, DatasetRecord, SplitSpec,
    DEFAULT_PER_CLASS,
};
use vmlab::interchange::{emit_document, parse_document, Document};
use vmlab::ir::SourceProgram;
use vmlab::labeler::{identify_dispatcher, label_structures, score_roles, LabelerParams};
use vmlab::labels::{first_span_roles, DispatchKind, Truth};
use vmlab::pipeline::{bench_table, corpus_artifacts, run_pipeline, PipelineConfig};
use vmlab::preprocess::{segment_artifact, segment_labeled, Provenance, TokenizerMode, DEFAULT_BUDGET};
use vmlab::programs;
use vmlab::virtualizer::{insert_markers, is_marker, recover_truth, virtualize};
use vmlab::viz::{emit_dot_with, ColorScheme, DotOptions};

/// Exit status when the pipeline ran but an acceptance gate failed.
const GATE_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "vmlab", version, about = "Virtualization-obfuscation CFG lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Virtualize a program and print its CFG in interchange form.
    Virtualize {
        /// Builtin name (factorial, fibonacci, bubble_sort) or a program file.
        #[arg(long)]
        program: String,
        #[arg(long, default_value = "switch")]
        kind: DispatchKind,
        #[arg(long, default_value_t = 0)]
        opt: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit role marker calls instead of LABEL lines.
        #[arg(long)]
        markers: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict block roles from structure alone.
    Label {
        /// Interchange file, or `-` for stdin.
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        min_fanout: usize,
        /// Write the labelled document here; the summary still goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut labelled CFGs into budget-sized segments (JSON Lines).
    Preprocess {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long, default_value = "subword")]
        tokenizer: TokenizerMode,
        /// Dispatch kind for inputs without a `kind` META line.
        #[arg(long)]
        kind: Option<DispatchKind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a balanced, split dataset.
    ///
    /// With input files the records are drawn from them; otherwise a corpus
    /// is generated from the builtin and random programs.
    Dataset {
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PER_CLASS)]
        per_class: usize,
        /// Training fraction.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Generation settings (pipeline config format).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        tokenizer: Option<TokenizerMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-head classifier.
    Train {
        train: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 18)]
        hash_bits: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on held-out records.
    Eval {
        model: PathBuf,
        test: PathBuf,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a labelled CFG as Graphviz DOT.
    Viz {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "pred")]
        labels: LabelSource,
        /// Show every instruction in each node.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 3)]
        min_fanout: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection matrix over the benchmarks.
    BenchTable {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        csv: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage; exits 2 when a gate fails.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelSource {
    Pred,
    Truth,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn load_program(spec: &str) -> Result<SourceProgram> {
    if let Some(p) = programs::builtin(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!("`{spec}` is neither a builtin program nor a file");
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("program");
    SourceProgram::parse(&read_input(path)?, stem).with_context(|| format!("parsing {spec}"))
}

/// Loads a document and the truth it carries, if any: LABEL lines win,
/// otherwise role markers are recovered and stripped.
fn load_labeled(path: &Path) -> Result<(Document, Option<Truth>)> {
    let mut doc = parse_document(&read_input(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if !doc.labels.is_empty() {
        let truth = doc.labels.clone();
        return Ok((doc, Some(truth)));
    }
    let marked = doc.cfg.blocks().iter().any(|b| b.instrs.iter().any(|i| is_marker(i)));
    if !marked {
        return Ok((doc, None));
    }
    let (cfg, truth) = recover_truth(&doc.cfg).with_context(|| format!("recovering markers in {}", path.display()))?;
    doc.cfg = cfg;
    doc.labels = truth.clone();
    Ok((doc, Some(truth)))
}

fn meta_num<T: std::str::FromStr>(doc: &Document, key: &str) -> Result<T> {
    match doc.meta(key) {
        None => "0".parse().map_err(|_| anyhow!("bad default for `{key}`")),
        Some(v) => v.parse().map_err(|_| anyhow!("META {key} `{v}` is not a number")),
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Virtualize { program, kind, opt, seed, markers, out } => {
            if opt > 1 {
                bail!("--opt must be 0 or 1");
            }
            let artifact = virtualize(&load_program(&program)?, kind, opt, seed);
            let mut doc = artifact.to_document();
            if markers {
                doc.cfg = insert_markers(&artifact);
                doc.labels.clear();
            }
            emit(out.as_deref(), &emit_document(&doc))?;
        }
        Command::Label { input, min_fanout, out } => {
            let params = LabelerParams::new(min_fanout)?;
            let (mut doc, truth) = load_labeled(&input)?;
            let pred = label_structures(&doc.cfg, &params);
            doc.set_roles(&pred);
            let mut summary = String::new();
            match identify_dispatcher(&doc.cfg, &params) {
                Ok(d) => writeln!(summary, "# dispatcher: bb{d}")?,
                Err(e) => writeln!(summary, "# dispatcher: none ({e})")?,
            }
            match &truth {
                Some(t) => writeln!(summary, "# detection: {}", score_roles(&pred, t))?,
                None => writeln!(summary, "# detection: no ground truth in input")?,
            }
            match out {
                Some(path) => {
                    emit(Some(&path), &emit_document(&doc))?;
                    emit(None, &summary)?;
                }
                None => emit(None, &(emit_document(&doc) + &summary))?,
            }
        }
        Command::Preprocess { inputs, budget, tokenizer, kind, out } => {
            let mut records = Vec::new();
            for path in &inputs {
                let (doc, truth) = load_labeled(path)?;
                let truth = truth.ok_or_else(|| anyhow!("{} has no LABEL lines or markers", path.display()))?;
                let kind = match (kind, doc.meta("kind")) {
                    (Some(k), _) => k,
                    (None, Some(k)) => k.parse()?,
                    (None, None) => bail!("{} has no `kind` META line; pass --kind", path.display()),
                };
                let origin = Provenance {
                    program: doc.meta("program").unwrap_or(doc.cfg.name()).to_string(),
                    kind,
                    opt: meta_num(&doc, "opt")?,
                    seed: meta_num(&doc, "seed")?,
                };
                let segments = segment_labeled(&doc.cfg, &truth, &origin, tokenizer, budget)
                    .with_context(|| format!("segmenting {}", path.display()))?;
                records.extend(segments.into_iter().map(DatasetRecord::from_segment));
            }
            let mut text = Vec::new();
            render_records(&records, &mut text)?;
            emit(out.as_deref(), &String::from_utf8(text)?)?;
        }
        Command::Dataset { inputs, per_class, split: train_fraction, seed, config, budget, tokenizer, out } => {
            let spec = SplitSpec::new(train_fraction, seed)?;
            let pool = if inputs.is_empty() {
                let mut cfg = match &config {
                    Some(p) => PipelineConfig::parse(&read_input(p)?)?,
                    None => PipelineConfig::default(),
                };
                if let Some(b) = budget {
                    cfg.budget = b;
                }
                if let Some(t) = tokenizer {
                    cfg.tokenizer = t;
                }
                cfg.validate()?;
                let mut pool = Vec::new();
                for a in corpus_artifacts(&cfg) {
                    pool.extend(
                        segment_artifact(&a, cfg.tokenizer, cfg.budget)?.into_iter().map(DatasetRecord::from_segment),
                    );
                }
                pool
            } else {
                let mut pool = Vec::new();
                for p in &inputs {
                    pool.extend(read_records(p).with_context(|| format!("reading {}", p.display()))?);
                }
                pool
            };
            let corpus = sample_corpus(pool, per_class, seed);
            let (train_set, test_set) = split(&corpus.records, &spec);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_records(&train_set, &out.join("train.jsonl"))?;
            write_records(&test_set, &out.join("test.jsonl"))?;
            let mut manifest = format!("per_class = {per_class}\nsplit = {train_fraction}\nseed = {seed}\n");
            for s in &corpus.shortfalls {
                writeln!(
                    manifest,
                    "shortfall = {} {} requested {} available {}",
                    s.cell.0, s.cell.1, s.requested, s.available
                )?;
            }
            manifest.push_str(&render_manifest(&[("train", &train_set), ("test", &test_set)]));
            fs::write(out.join("manifest.txt"), &manifest)?;
            println!("{} train, {} test records in {}", train_set.len(), test_set.len(), out.display());
            for s in &corpus.shortfalls {
                eprintln!("warning: {} {} has {} of {} records", s.cell.0, s.cell.1, s.available, s.requested);
            }
        }
        Command::Train { train: path, epochs, lr, seed, hash_bits, out } => {
            if hash_bits == 0 || hash_bits > 24 {
                bail!("--hash-bits must be in 1..=24");
            }
            let config = FeatureConfig::new(vec![1, 2], 1 << hash_bits, true)?;
            let records = read_records(&path).with_context(|| format!("reading {}", path.display()))?;
            if records.is_empty() {
                bail!("{} has no records", path.display());
            }
            let model = train(&records, &config, TrainParams { epochs, lr, seed });
            save_model(&model, &out)?;
            println!("trained on {} records, saved {}", records.len(), out.display());
        }
        Command::Eval { model, test, csv, out } => {
            let model = load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let records = read_records(&test).with_context(|| format!("reading {}", test.display()))?;
            let report = evaluate(&model, &records);
            emit(out.as_deref(), &if csv { report.to_csv() } else { report.to_table() })?;
        }
        Command::Viz { input, labels, full, min_fanout, out } => {
            let (doc, truth) = load_labeled(&input)?;
            let (roles, mut options) = match labels {
                LabelSource::Pred => {
                    (label_structures(&doc.cfg, &LabelerParams::new(min_fanout)?), DotOptions::default())
                }
                LabelSource::Truth => {
                    let truth = truth.ok_or_else(|| anyhow!("{} carries no truth", input.display()))?;
                    (first_span_roles(&truth), DotOptions::mixed_from(&truth))
                }
            };
            options.full_text = full;
            emit(out.as_deref(), &emit_dot_with(&doc.cfg, &roles, &ColorScheme::default(), &options)?)?;
        }
        Command::BenchTable { seed, csv, out } => {
            let table = bench_table(seed, &LabelerParams::default());
            emit(out.as_deref(), &if csv { table.to_csv() } else { table.to_text() })?;
        }
        Command::Pipeline { config, overrides, out } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::parse(&read_input(p)?)?,
                None => PipelineConfig::default(),
            };
            for o in &overrides {
                let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{o}`"))?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            cfg.validate()?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.bench.to_text());
            println!("reduction_ratio = {:.6}", report.reduction);
            println!("records = {}", report.records);
            print!("{}", report.eval.to_table());
            for (name, ok) in &report.gates {
                println!("gate {name} : {}", if *ok { "pass" } else { "FAIL" });
            }
            if !report.passed() {
                return Ok(ExitCode::from(GATE_FAILED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
