//! Line-based text interchange for CFGs with optional labels and metadata.
//!
//! ```text
//! FUNC <name>
//! META <key> <value>
//! BLOCK <id>
//! INS <tokens...>
//! EDGE <src> <dst>
//! LABEL <id> <ROLE>                      # whole block
//! LABEL <id> <ROLE>@<s>:<e> <ROLE>@<s>:<e> # instruction spans
//! ```
//!
//! EDGE lines follow all BLOCK sections. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::cfg::{BasicBlock, BlockId, Cfg, CfgError};
use crate::labels::{Role, RoleMap, RoleSpan, Truth};

/// A parsed interchange file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub cfg: Cfg,
    pub meta: Vec<(String, String)>,
    pub labels: Truth,
}

impl Document {
    pub fn new(cfg: Cfg) -> Self {
        Self { cfg, meta: Vec::new(), labels: Truth::new() }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    /// Replaces labels with whole-block roles.
    pub fn set_roles(&mut self, roles: &RoleMap) {
        self.labels = roles
            .iter()
            .filter_map(|(id, role)| {
                let len = self.cfg.block(*id).ok()?.instrs.len();
                Some((*id, vec![RoleSpan::new(0, len, *role)]))
            })
            .collect();
    }
}

pub fn parse_cfg(text: &str) -> Result<Cfg, CfgError> {
    parse_document(text).map(|d| d.cfg)
}

pub fn emit_cfg(cfg: &Cfg) -> String {
    emit_document(&Document::new(cfg.clone()))
}

fn perr(line: usize, message: impl Into<String>) -> CfgError {
    CfgError::Parse { line, message: message.into() }
}

fn parse_id(tok: Option<&str>, line: usize) -> Result<BlockId, CfgError> {
    let tok = tok.ok_or_else(|| perr(line, "missing block id"))?;
    tok.parse::<u32>().map(BlockId).map_err(|_| perr(line, format!("bad block id `{tok}`")))
}

/// A role with an optional instruction range.
type RawSpan = (Role, Option<(usize, usize)>);

fn parse_span(tok: &str, line: usize) -> Result<RawSpan, CfgError> {
    let (role, range) = match tok.split_once('@') {
        Some((r, range)) => (r, Some(range)),
        None => (tok, None),
    };
    let role: Role = role.parse().map_err(|e| perr(line, format!("{e}")))?;
    let range = match range {
        None => None,
        Some(range) => {
            let (s, e) = range.split_once(':').ok_or_else(|| perr(line, format!("bad span `{range}`")))?;
            let s = s.parse().map_err(|_| perr(line, format!("bad span start `{s}`")))?;
            let e = e.parse().map_err(|_| perr(line, format!("bad span end `{e}`")))?;
            Some((s, e))
        }
    };
    Ok((role, range))
}

pub fn parse_document(text: &str) -> Result<Document, CfgError> {
    let mut name: Option<String> = None;
    let mut meta = Vec::new();
    let mut blocks: Vec<(BlockId, Vec<String>)> = Vec::new();
    let mut edges: Vec<(BlockId, BlockId)> = Vec::new();
    let mut raw_labels: Vec<(usize, BlockId, Vec<RawSpan>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (keyword, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (trimmed, ""),
        };
        if keyword != "FUNC" && name.is_none() {
            return Err(perr(line, format!("`{keyword}` before FUNC")));
        }
        match keyword {
            "FUNC" => {
                if name.is_some() {
                    return Err(perr(line, "only one FUNC per file"));
                }
                if rest.is_empty() || rest.contains(char::is_whitespace) {
                    return Err(perr(line, "FUNC takes exactly one name"));
                }
                name = Some(rest.to_string());
            }
            "META" => {
                let (k, v) = match rest.split_once(char::is_whitespace) {
                    Some((k, v)) => (k, v.trim()),
                    None => (rest, ""),
                };
                if k.is_empty() {
                    return Err(perr(line, "META needs a key"));
                }
                meta.push((k.to_string(), v.to_string()));
            }
            "BLOCK" => {
                if !edges.is_empty() {
                    return Err(perr(line, "BLOCK after EDGE records"));
                }
                let mut toks = rest.split_whitespace();
                let id = parse_id(toks.next(), line)?;
                if toks.next().is_some() {
                    return Err(perr(line, "trailing tokens after BLOCK id"));
                }
                blocks.push((id, Vec::new()));
            }
            "INS" => {
                if !edges.is_empty() {
                    return Err(perr(line, "INS after EDGE records"));
                }
                let block = blocks.last_mut().ok_or_else(|| perr(line, "INS outside a BLOCK"))?;
                block.1.push(rest.split_whitespace().collect::<Vec<_>>().join(" "));
            }
            "EDGE" => {
                let mut toks = rest.split_whitespace();
                let src = parse_id(toks.next(), line)?;
                let dst = parse_id(toks.next(), line)?;
                if toks.next().is_some() {
                    return Err(perr(line, "trailing tokens after EDGE"));
                }
                edges.push((src, dst));
            }
            "LABEL" => {
                let mut toks = rest.split_whitespace();
                let id = parse_id(toks.next(), line)?;
                let spans = toks.map(|t| parse_span(t, line)).collect::<Result<Vec<_>, _>>()?;
                if spans.is_empty() {
                    return Err(perr(line, "LABEL needs a role"));
                }
                raw_labels.push((line, id, spans));
            }
            other => return Err(perr(line, format!("unknown record `{other}`"))),
        }
    }

    let name = name.ok_or_else(|| perr(text.lines().count().max(1), "missing FUNC record"))?;

    let mut succs: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for (src, dst) in edges {
        succs.entry(src).or_default().push(dst);
    }
    if let Some(src) = succs.keys().find(|k| !blocks.iter().any(|(id, _)| id == *k)) {
        return Err(CfgError::Validation(format!("edge from missing block {src}")));
    }
    let blocks = blocks
        .into_iter()
        .map(|(id, instrs)| BasicBlock::new(id, instrs, succs.remove(&id).unwrap_or_default()))
        .collect();
    let cfg = Cfg::new(name, blocks)?;

    let mut labels = Truth::new();
    for (line, id, spans) in raw_labels {
        let len = cfg
            .block(id)
            .map_err(|_| CfgError::Validation(format!("line {line}: LABEL for missing block {id}")))?
            .instrs
            .len();
        let spans = resolve_spans(&spans, len)
            .ok_or_else(|| CfgError::Validation(format!("line {line}: spans of block {id} do not tile 0..{len}")))?;
        if labels.insert(id, spans).is_some() {
            return Err(CfgError::Validation(format!("line {line}: duplicate LABEL for block {id}")));
        }
    }

    Ok(Document { cfg, meta, labels })
}

fn resolve_spans(raw: &[(Role, Option<(usize, usize)>)], len: usize) -> Option<Vec<RoleSpan>> {
    if let [(role, None)] = raw {
        return Some(vec![RoleSpan::new(0, len, *role)]);
    }
    let mut cursor = 0;
    let mut spans = Vec::with_capacity(raw.len());
    for (role, range) in raw {
        let (s, e) = (*range)?;
        if s != cursor || e < s {
            return None;
        }
        spans.push(RoleSpan::new(s, e, *role));
        cursor = e;
    }
    (cursor == len).then_some(spans)
}

pub fn emit_document(doc: &Document) -> String {
    let mut out = String::new();
    let cfg = &doc.cfg;
    let _ = writeln!(out, "FUNC {}", cfg.name());
    for (k, v) in &doc.meta {
        if v.is_empty() {
            let _ = writeln!(out, "META {k}");
        } else {
            let _ = writeln!(out, "META {k} {v}");
        }
    }
    for b in cfg.blocks() {
        let _ = writeln!(out, "BLOCK {}", b.id);
        for ins in &b.instrs {
            if ins.is_empty() {
                out.push_str("INS\n");
            } else {
                let _ = writeln!(out, "INS {ins}");
            }
        }
    }
    for (src, dst) in cfg.edges() {
        let _ = writeln!(out, "EDGE {src} {dst}");
    }
    for b in cfg.blocks() {
        let Some(spans) = doc.labels.get(&b.id) else { continue };
        let whole = matches!(spans.as_slice(), [s] if s.start == 0 && s.end == b.instrs.len());
        if whole {
            let _ = writeln!(out, "LABEL {} {}", b.id, spans[0].role);
        } else {
            let _ = write!(out, "LABEL {}", b.id);
            for s in spans {
                let _ = write!(out, " {}@{}:{}", s.role, s.start, s.end);
            }
            out.push('\n');
        }
    }
    out
}
