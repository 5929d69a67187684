//! Tokenization and token-budget segmentation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{parse_operand, split_instr, Operand};
use crate::cfg::{BlockId, Cfg};
use crate::labels::{DispatchKind, Role, Truth, UnknownLabel};
use crate::virtualizer::{is_marker, VmArtifact};

pub const DEFAULT_BUDGET: usize = 512;
pub const MIN_BUDGET: usize = 8;
/// Maximum chunk length in SUBWORD mode.
pub const SUBWORD_CHUNK: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("empty input")]
    EmptyInput,
    #[error("budget must be at least {MIN_BUDGET}, got {0}")]
    Budget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TokenizerMode {
    #[default]
    Subword,
    Normalized,
}

impl TokenizerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerMode::Subword => "subword",
            TokenizerMode::Normalized => "normalized",
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenizerMode {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "subword" => Ok(TokenizerMode::Subword),
            "normalized" => Ok(TokenizerMode::Normalized),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

pub fn tokenize<S: AsRef<str>>(instrs: &[S], mode: TokenizerMode) -> Vec<String> {
    let mut out = Vec::new();
    for ins in instrs {
        match mode {
            TokenizerMode::Subword => subword(ins.as_ref(), &mut out),
            TokenizerMode::Normalized => normalized(ins.as_ref(), &mut out),
        }
    }
    out
}

fn subword(text: &str, out: &mut Vec<String>) {
    let lower = text.to_lowercase();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if word.chars().count() > SUBWORD_CHUNK {
            let chars: Vec<char> = word.chars().collect();
            out.extend(chars.chunks(SUBWORD_CHUNK).map(|c| format!("##{}", c.iter().collect::<String>())));
        } else if !word.is_empty() {
            out.push(word.clone());
        }
        word.clear();
    };
    for c in lower.chars() {
        if c.is_whitespace() {
            flush(&mut word, out);
        } else if c.is_ascii_punctuation() && c != '_' {
            flush(&mut word, out);
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    flush(&mut word, out);
}

fn normalized(text: &str, out: &mut Vec<String>) {
    if is_marker(text) {
        return;
    }
    let (mnemonic, operands) = split_instr(text);
    if mnemonic.is_empty() {
        return;
    }
    out.push(mnemonic.to_lowercase());
    for op in operands {
        let class = match parse_operand(op) {
            Ok(Operand::Reg(_)) => "REG",
            Ok(Operand::Imm(_)) => "IMM",
            Ok(Operand::Mem(_)) => "MEM",
            Ok(Operand::Label(_) | Operand::Sym(_)) if is_generic_register(op) => "REG",
            Ok(Operand::Label(_) | Operand::Sym(_)) => "ADDR",
            Err(_) if op.contains('[') => "MEM",
            Err(_) => "ADDR",
        };
        out.push(class.to_string());
    }
}

/// `r0`..`r15`-style names that are not x86 registers.
fn is_generic_register(op: &str) -> bool {
    op.strip_prefix('r').is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Where a segment came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSource {
    pub program: String,
    pub opt: u8,
    pub seed: u64,
    pub first_block: u32,
    pub last_block: u32,
    /// Position of this chunk within its merged run.
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub tokens: Vec<String>,
    pub sub_label: Role,
    pub main_label: DispatchKind,
    pub source: SegmentSource,
}

/// One labelled token stream: a block, or a span of a mixed block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub block: BlockId,
    pub tokens: Vec<String>,
    pub role: Role,
}

/// A chunk of a same-role run, before provenance is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub tokens: Vec<String>,
    pub role: Role,
    pub first_block: BlockId,
    pub last_block: BlockId,
    pub chunk: usize,
}

/// Joins adjacent units with the same role, then cuts every run into
/// consecutive chunks of exactly `budget` tokens (the last may be shorter).
/// Runs without tokens produce nothing.
pub fn segment_and_merge(units: &[Unit], budget: usize) -> Result<Vec<Chunk>, PreprocessError> {
    if budget < MIN_BUDGET {
        return Err(PreprocessError::Budget(budget));
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < units.len() {
        let role = units[i].role;
        let mut j = i;
        let mut stream: Vec<String> = Vec::new();
        while j < units.len() && units[j].role == role {
            stream.extend_from_slice(&units[j].tokens);
            j += 1;
        }
        // blocks that contributed tokens, for provenance
        let mut contributing = units[i..j].iter().filter(|u| !u.tokens.is_empty()).map(|u| u.block);
        if let Some(first) = contributing.next() {
            let last = contributing.next_back().unwrap_or(first);
            for (k, piece) in stream.chunks(budget).enumerate() {
                out.push(Chunk { tokens: piece.to_vec(), role, first_block: first, last_block: last, chunk: k });
            }
        }
        i = j;
    }
    Ok(out)
}

/// Labelled units in layout order, one per truth span. Blocks without
/// truth are skipped.
pub fn labeled_units(cfg: &Cfg, truth: &Truth, mode: TokenizerMode) -> Vec<Unit> {
    let mut units = Vec::new();
    for b in cfg.blocks() {
        for span in truth.get(&b.id).into_iter().flatten() {
            units.push(Unit { block: b.id, tokens: tokenize(&b.instrs[span.start..span.end], mode), role: span.role });
        }
    }
    units
}

/// Token count of a whole function.
pub fn full_stream_len(cfg: &Cfg, mode: TokenizerMode) -> usize {
    cfg.blocks().iter().map(|b| tokenize(&b.instrs, mode).len()).sum()
}

/// Identifies the function a segment was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub program: String,
    pub kind: DispatchKind,
    pub opt: u8,
    pub seed: u64,
}

pub fn segment_labeled(
    cfg: &Cfg,
    truth: &Truth,
    origin: &Provenance,
    mode: TokenizerMode,
    budget: usize,
) -> Result<Vec<Segment>, PreprocessError> {
    let chunks = segment_and_merge(&labeled_units(cfg, truth, mode), budget)?;
    Ok(chunks
        .into_iter()
        .map(|c| Segment {
            tokens: c.tokens,
            sub_label: c.role,
            main_label: origin.kind,
            source: SegmentSource {
                program: origin.program.clone(),
                opt: origin.opt,
                seed: origin.seed,
                first_block: c.first_block.0,
                last_block: c.last_block.0,
                chunk: c.chunk,
            },
        })
        .collect())
}

pub fn segment_artifact(
    artifact: &VmArtifact,
    mode: TokenizerMode,
    budget: usize,
) -> Result<Vec<Segment>, PreprocessError> {
    let origin = Provenance {
        program: artifact.program.clone(),
        kind: artifact.kind,
        opt: artifact.opt_level,
        seed: artifact.seed,
    };
    segment_labeled(&artifact.cfg, &artifact.truth, &origin, mode, budget)
}

/// `1 - mean segment length / full_stream_len`.
pub fn reduction_stats(segments: &[Segment], full_stream_len: usize) -> Result<f64, PreprocessError> {
    if segments.is_empty() || full_stream_len == 0 {
        return Err(PreprocessError::EmptyInput);
    }
    let total: usize = segments.iter().map(|s| s.tokens.len()).sum();
    let mean = total as f64 / segments.len() as f64;
    Ok(1.0 - mean / full_stream_len as f64)
}

/// Mean of the per-artifact reduction ratios.
pub fn corpus_reduction(artifacts: &[VmArtifact], mode: TokenizerMode, budget: usize) -> Result<f64, PreprocessError> {
    if artifacts.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let mut sum = 0.0;
    for a in artifacts {
        sum += reduction_stats(&segment_artifact(a, mode, budget)?, full_stream_len(&a.cfg, mode))?;
    }
    Ok(sum / artifacts.len() as f64)
}
