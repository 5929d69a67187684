//! Balanced corpus construction, stratified splits, and JSON Lines records.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::labels::{DispatchKind, Role};
use crate::preprocess::{segment_artifact, PreprocessError, Segment, SegmentSource, TokenizerMode};
use crate::virtualizer::VmArtifact;

pub const DEFAULT_PER_CLASS: usize = 600;

/// Provenance of a record.
pub type RecordMeta = SegmentSource;

/// One `(main_label, sub_label)` stratum.
pub type Cell = (DispatchKind, Role);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty input")]
    EmptyInput,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub main_label: DispatchKind,
    pub sub_label: Role,
    pub tokens: Vec<String>,
    pub meta: RecordMeta,
}

impl DatasetRecord {
    /// Builds a record whose id is a content hash of everything else.
    pub fn new(main_label: DispatchKind, sub_label: Role, tokens: Vec<String>, meta: RecordMeta) -> Self {
        let id = record_id(main_label, sub_label, &tokens, &meta);
        Self { id, main_label, sub_label, tokens, meta }
    }

    pub fn from_segment(segment: Segment) -> Self {
        Self::new(segment.main_label, segment.sub_label, segment.tokens, segment.source)
    }

    pub fn cell(&self) -> Cell {
        (self.main_label, self.sub_label)
    }
}

fn record_id(main: DispatchKind, sub: Role, tokens: &[String], meta: &RecordMeta) -> String {
    let canonical = serde_json::to_vec(&(main, sub, tokens, meta)).expect("record fields serialize");
    Sha256::digest(&canonical).iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// A cell that could not be filled to the requested size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub cell: Cell,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    /// Records grouped by cell in label order.
    pub records: Vec<DatasetRecord>,
    pub shortfalls: Vec<Shortfall>,
    /// Segments available per cell before sampling.
    pub available: BTreeMap<Cell, usize>,
}

/// Segments every artifact and samples up to `per_class` records per cell,
/// uniformly without replacement.
pub fn build_corpus(
    artifacts: &[VmArtifact],
    per_class: usize,
    budget: usize,
    mode: TokenizerMode,
    seed: u64,
) -> Result<Corpus, DatasetError> {
    if artifacts.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut segments = Vec::new();
    for a in artifacts {
        segments.extend(segment_artifact(a, mode, budget)?.into_iter().map(DatasetRecord::from_segment));
    }
    Ok(sample_corpus(segments, per_class, seed))
}

/// Samples up to `per_class` records per cell from an existing pool. The
/// result does not depend on the order of `records`.
pub fn sample_corpus(records: Vec<DatasetRecord>, per_class: usize, seed: u64) -> Corpus {
    let mut pools: BTreeMap<Cell, Vec<DatasetRecord>> = all_cells().map(|c| (c, Vec::new())).collect();
    for rec in records {
        pools.get_mut(&rec.cell()).expect("every cell is present").push(rec);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut shortfalls = Vec::new();
    let mut available = BTreeMap::new();
    for (cell, mut pool) in pools {
        canonicalize(&mut pool);
        available.insert(cell, pool.len());
        if pool.len() < per_class {
            shortfalls.push(Shortfall { cell, requested: per_class, available: pool.len() });
        }
        pool.shuffle(&mut rng);
        pool.truncate(per_class);
        records.extend(pool);
    }
    Corpus { records, shortfalls, available }
}

/// Sorts by id and drops exact duplicates so sampling ignores input order.
fn canonicalize(records: &mut Vec<DatasetRecord>) {
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records.dedup_by(|a, b| a.id == b.id);
}

pub fn all_cells() -> impl Iterator<Item = Cell> {
    DispatchKind::ALL.into_iter().flat_map(|k| Role::ALL.into_iter().map(move |r| (k, r)))
}

pub fn cell_counts(records: &[DatasetRecord]) -> BTreeMap<Cell, usize> {
    let mut counts: BTreeMap<Cell, usize> = all_cells().map(|c| (c, 0)).collect();
    for r in records {
        *counts.entry(r.cell()).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, test_fraction: 0.2, seed: 42 }
    }
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        Self::with_fractions(train_fraction, 1.0 - train_fraction, seed)
    }

    pub fn with_fractions(train_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        let valid = |f: f64| (0.0..=1.0).contains(&f);
        if !valid(train_fraction) || !valid(test_fraction) || (train_fraction + test_fraction - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Split(format!(
                "fractions must lie in [0, 1] and sum to 1, got {train_fraction} and {test_fraction}"
            )));
        }
        Ok(Self { train_fraction, test_fraction, seed })
    }

    /// Train share of a cell of `n` records by largest-remainder rounding.
    /// An exact tie in remainders goes to the training side.
    pub fn train_count(&self, n: usize) -> usize {
        let train = n as f64 * self.train_fraction;
        let test = n as f64 * self.test_fraction;
        let (train_floor, test_floor) = (train.floor() as usize, test.floor() as usize);
        let leftover = n.saturating_sub(train_floor + test_floor);
        let rounds_up = leftover > 0 && train - train.floor() >= test - test.floor();
        (train_floor + usize::from(rounds_up)).min(n)
    }
}

/// Stratified split by cell. Within a cell records are put in id order and
/// shuffled with the spec's seed, so the result does not depend on input
/// order.
pub fn split(records: &[DatasetRecord], spec: &SplitSpec) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    let mut cells: BTreeMap<Cell, Vec<DatasetRecord>> = BTreeMap::new();
    for r in records {
        cells.entry(r.cell()).or_default().push(r.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut group) in cells {
        group.sort_by(|a, b| a.id.cmp(&b.id));
        group.shuffle(&mut rng);
        let k = spec.train_count(group.len());
        test.extend(group.split_off(k));
        train.extend(group);
    }
    (train, test)
}

/// Carves a stratified validation set out of a training set.
pub fn holdout(
    train: &[DatasetRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>), DatasetError> {
    let spec = SplitSpec::with_fractions(1.0 - val_fraction, val_fraction, seed)?;
    Ok(split(train, &spec))
}

pub fn write_records(records: &[DatasetRecord], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    render_records(records, &mut out)?;
    out.flush()?;
    Ok(())
}

/// JSON Lines, one record per line.
pub fn render_records(records: &[DatasetRecord], mut out: impl Write) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line).map_err(|message| DatasetError::Parse { line: i + 1, message })?);
    }
    Ok(records)
}

pub fn parse_record(line: &str) -> Result<DatasetRecord, String> {
    let r: DatasetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.tokens.is_empty() {
        return Err("record has no tokens".into());
    }
    Ok(r)
}

/// Per-cell counts as aligned text.
pub fn render_manifest(sets: &[(&str, &[DatasetRecord])]) -> String {
    let mut out = String::from("main_label\tsub_label");
    for (name, _) in sets {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    let counts: Vec<BTreeMap<Cell, usize>> = sets.iter().map(|(_, r)| cell_counts(r)).collect();
    for cell in all_cells() {
        out.push_str(&format!("{}\t{}", cell.0, cell.1));
        for c in &counts {
            out.push_str(&format!("\t{}", c[&cell]));
        }
        out.push('\n');
    }
    out
}

/// Ids that occur more than once.
pub fn duplicate_ids(records: &[DatasetRecord]) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    records.iter().filter(|r| !seen.insert(r.id.as_str())).map(|r| r.id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(main: DispatchKind, sub: Role, n: usize) -> DatasetRecord {
        let meta =
            SegmentSource { program: "p".into(), opt: 0, seed: n as u64, first_block: 0, last_block: 0, chunk: 0 };
        DatasetRecord::new(main, sub, vec![format!("t{n}")], meta)
    }

    #[test]
    fn ten_in_one_cell_split_eight_two() {
        let records: Vec<_> = (0..10).map(|i| rec(DispatchKind::Switch, Role::Vm, i)).collect();
        let (train, test) = split(&records, &SplitSpec::default());
        assert_eq!((train.len(), test.len()), (8, 2));
    }

    #[test]
    fn largest_remainder_rounding() {
        let spec = SplitSpec::default();
        assert_eq!(spec.train_count(7), 6); // 5.6 / 1.4
        assert_eq!(spec.train_count(3), 2); // 2.4 / 0.6
        assert_eq!(spec.train_count(1), 1);
        assert_eq!(spec.train_count(0), 0);
        let half = SplitSpec::new(0.5, 0).unwrap();
        assert_eq!(half.train_count(5), 3);
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(SplitSpec::with_fractions(0.7, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.5, 0).is_err());
    }

    #[test]
    fn ids_depend_on_content() {
        let a = rec(DispatchKind::Direct, Role::Handler, 1);
        assert_eq!(a.id, rec(DispatchKind::Direct, Role::Handler, 1).id);
        assert_ne!(a.id, rec(DispatchKind::Indirect, Role::Handler, 1).id);
        assert_eq!(a.id.len(), 32);
    }

    #[test]
    fn missing_sub_label_is_rejected() {
        let line = r#"{"id":"x","main_label":"SWITCH","tokens":["a"],"meta":{"program":"p","opt":0,"seed":0,"first_block":0,"last_block":0,"chunk":0}}"#;
        assert!(parse_record(line).unwrap_err().contains("sub_label"));
    }
}
