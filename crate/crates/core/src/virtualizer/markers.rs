//! Role marker pseudo-calls.

use thiserror::Error;

use super::VmArtifact;
use crate::cfg::{BasicBlock, BlockId, Cfg};
use crate::labels::{Role, RoleSpan, Truth};

pub const MARKER_PREFIX: &str = "__vmlab_";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarkerError {
    #[error("block {0}: instructions before the first marker")]
    Unmarked(BlockId),
    #[error("block {block}: unknown marker role `{name}`")]
    UnknownRole { block: BlockId, name: String },
}

/// Marker instruction text for `role`.
pub fn marker(role: Role) -> String {
    format!("call {MARKER_PREFIX}{role}")
}

pub(crate) fn is_marker_symbol(sym: &str) -> bool {
    sym.starts_with(MARKER_PREFIX)
}

/// Whether an instruction is a marker: first token `call`, second token
/// starting with the marker prefix.
pub fn is_marker(instr: &str) -> bool {
    let mut tokens = instr.split_whitespace();
    tokens.next() == Some("call") && tokens.next().is_some_and(is_marker_symbol)
}

/// Copy of the artifact's CFG with a marker at the start of every truth span.
pub fn insert_markers(artifact: &VmArtifact) -> Cfg {
    map_blocks(&artifact.cfg, |b| {
        let spans = artifact.truth.get(&b.id).map(Vec::as_slice).unwrap_or_default();
        let mut out = Vec::with_capacity(b.instrs.len() + spans.len());
        for span in spans {
            out.push(marker(span.role));
            out.extend_from_slice(&b.instrs[span.start..span.end]);
        }
        out
    })
}

/// Removes every marker instruction.
pub fn strip_markers(cfg: &Cfg) -> Cfg {
    map_blocks(cfg, |b| b.instrs.iter().filter(|i| !is_marker(i)).cloned().collect())
}

/// Reads span truth back from a marked CFG, returning the stripped CFG with
/// it. Blocks with no markers at all get no truth entry.
pub fn recover_truth(cfg: &Cfg) -> Result<(Cfg, Truth), MarkerError> {
    let mut truth = Truth::new();
    for b in cfg.blocks() {
        let mut spans: Vec<RoleSpan> = Vec::new();
        let mut len = 0;
        for ins in &b.instrs {
            if is_marker(ins) {
                let name = ins.split_whitespace().nth(1).unwrap_or_default()[MARKER_PREFIX.len()..].to_string();
                let role = name.parse::<Role>().map_err(|_| MarkerError::UnknownRole { block: b.id, name })?;
                if let Some(last) = spans.last_mut() {
                    last.end = len;
                }
                spans.push(RoleSpan::new(len, len, role));
            } else {
                if spans.is_empty() {
                    return Err(MarkerError::Unmarked(b.id));
                }
                len += 1;
            }
        }
        if let Some(last) = spans.last_mut() {
            last.end = len;
            truth.insert(b.id, spans);
        }
    }
    Ok((strip_markers(cfg), truth))
}

fn map_blocks(cfg: &Cfg, f: impl Fn(&BasicBlock) -> Vec<String>) -> Cfg {
    let blocks = cfg.blocks().iter().map(|b| BasicBlock::new(b.id, f(b), b.succs.clone())).collect();
    Cfg::new(cfg.name(), blocks).expect("edges are unchanged")
}
