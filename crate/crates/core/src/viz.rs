//! Colour-coded DOT rendering of labelled CFGs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::cfg::{BlockId, Cfg};
use crate::labels::{pure_role, Role, RoleMap, Truth};

/// Instructions shown per node unless full text is requested.
pub const LABEL_LINES: usize = 3;
const ELLIPSIS: &str = "...";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VizError {
    #[error("no role for block {0}")]
    IncompleteRoleMap(BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorScheme {
    colors: BTreeMap<Role, String>,
}

impl Default for ColorScheme {
    fn default() -> Self {
        let pairs = [
            (Role::DispatchStart, "red"),
            (Role::Handler, "orange"),
            (Role::Vm, "lightblue"),
            (Role::VmStart, "green"),
            (Role::VmEnd, "purple"),
            (Role::NonVm, "gray"),
        ];
        Self { colors: pairs.into_iter().map(|(r, c)| (r, c.to_string())).collect() }
    }
}

impl ColorScheme {
    pub fn color(&self, role: Role) -> &str {
        &self.colors[&role]
    }

    pub fn with_color(mut self, role: Role, color: impl Into<String>) -> Self {
        self.colors.insert(role, color.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotOptions {
    /// Show every instruction instead of the first few.
    pub full_text: bool,
    /// Blocks drawn with a dashed border.
    pub dashed: BTreeSet<BlockId>,
}

impl DotOptions {
    /// Dashes the blocks whose truth spans carry more than one role.
    pub fn mixed_from(truth: &Truth) -> Self {
        let dashed = truth.iter().filter(|(_, s)| pure_role(s).is_none()).map(|(id, _)| *id).collect();
        Self { full_text: false, dashed }
    }
}

pub fn emit_dot(cfg: &Cfg, roles: &RoleMap, scheme: &ColorScheme) -> Result<String, VizError> {
    emit_dot_with(cfg, roles, scheme, &DotOptions::default())
}

pub fn emit_dot_with(
    cfg: &Cfg,
    roles: &RoleMap,
    scheme: &ColorScheme,
    options: &DotOptions,
) -> Result<String, VizError> {
    let mut out = format!("// function: {}\n// blocks: {}, edges: {}\n", cfg.name(), cfg.len(), cfg.edge_count());
    if cfg.is_empty() {
        out.push_str("digraph G { }\n");
        return Ok(out);
    }
    out.push_str("digraph G {\n  node [shape=box, fontname=\"monospace\"];\n");
    for b in cfg.blocks() {
        let role = *roles.get(&b.id).ok_or(VizError::IncompleteRoleMap(b.id))?;
        let shown = if options.full_text { b.instrs.len() } else { b.instrs.len().min(LABEL_LINES) };
        let mut label = format!("bb{}\\l", b.id);
        for ins in &b.instrs[..shown] {
            label.push_str(&escape(ins));
            label.push_str("\\l");
        }
        if shown < b.instrs.len() {
            label.push_str(ELLIPSIS);
            label.push_str("\\l");
        }
        let style = if options.dashed.contains(&b.id) { "filled,dashed" } else { "filled" };
        let _ = writeln!(
            out,
            "  bb{} [label=\"{label}\", style=\"{style}\", fillcolor=\"{}\", tooltip=\"{role}\"];",
            b.id,
            scheme.color(role)
        );
    }
    for (from, to) in cfg.edges() {
        let _ = writeln!(out, "  bb{from} -> bb{to};");
    }
    out.push_str("}\n");
    Ok(out)
}

fn escape(text: &str) -> String {
    let mut s = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '"' | '\\' => {
                s.push('\\');
                s.push(c);
            }
            '\n' => s.push_str("\\n"),
            _ => s.push(c),
        }
    }
    s
}

/// Counts reported by [`check_dot`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotSummary {
    pub nodes: usize,
    pub edges: usize,
    /// `fillcolor` of every node statement, by node id.
    pub fill: BTreeMap<String, String>,
    /// Out-degree per node id from edge statements.
    pub out_degree: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Id(String),
    Str(String),
    Arrow,
    Punct(char),
}

fn lex(text: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') || c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            let end = (i + 2..chars.len().saturating_sub(1)).find(|&j| chars[j] == '*' && chars[j + 1] == '/');
            i = end.ok_or("unterminated comment")? + 2;
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err("unterminated string".into()),
                    Some('"') => break,
                    Some('\\') => {
                        s.push('\\');
                        s.push(*chars.get(i + 1).ok_or("unterminated string")?);
                        i += 2;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            i += 1;
            toks.push(Tok::Str(s));
        } else if c == '-' && chars.get(i + 1) == Some(&'>') {
            toks.push(Tok::Arrow);
            i += 2;
        } else if "{}[]=;,".contains(c) {
            toks.push(Tok::Punct(c));
            i += 1;
        } else if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            if i == start {
                return Err(format!("unexpected `{c}`"));
            }
            toks.push(Tok::Id(chars[start..i].iter().collect()));
        } else {
            return Err(format!("unexpected `{c}`"));
        }
    }
    Ok(toks)
}

/// Minimal syntax check for the DOT subset this crate emits: one digraph
/// of node, edge, attribute, and `id = id` statements.
pub fn check_dot(text: &str) -> Result<DotSummary, String> {
    let toks = lex(text)?;
    let mut p = 0;
    let id = |p: &mut usize| -> Result<String, String> {
        match toks.get(*p) {
            Some(Tok::Id(s)) | Some(Tok::Str(s)) => {
                *p += 1;
                Ok(s.clone())
            }
            other => Err(format!("expected identifier, found {other:?}")),
        }
    };
    let punct = |p: &mut usize, c: char| -> bool {
        if toks.get(*p) == Some(&Tok::Punct(c)) {
            *p += 1;
            true
        } else {
            false
        }
    };

    if id(&mut p)? != "digraph" {
        return Err("expected `digraph`".into());
    }
    if !matches!(toks.get(p), Some(Tok::Punct('{'))) {
        id(&mut p)?;
    }
    if !punct(&mut p, '{') {
        return Err("expected `{`".into());
    }
    let attrs = |p: &mut usize| -> Result<Vec<(String, String)>, String> {
        let mut list = Vec::new();
        while punct(p, '[') {
            while !punct(p, ']') {
                let k = id(p)?;
                if !punct(p, '=') {
                    return Err(format!("expected `=` after attribute `{k}`"));
                }
                list.push((k, id(p)?));
                if !punct(p, ',') {
                    punct(p, ';');
                }
            }
        }
        Ok(list)
    };

    let mut summary = DotSummary::default();
    loop {
        if punct(&mut p, '}') {
            break;
        }
        if p >= toks.len() {
            return Err("missing `}`".into());
        }
        let first = id(&mut p)?;
        if matches!(first.as_str(), "graph" | "node" | "edge") && matches!(toks.get(p), Some(Tok::Punct('['))) {
            attrs(&mut p)?;
        } else if punct(&mut p, '=') {
            id(&mut p)?;
        } else if toks.get(p) == Some(&Tok::Arrow) {
            let mut from = first;
            while toks.get(p) == Some(&Tok::Arrow) {
                p += 1;
                let to = id(&mut p)?;
                summary.edges += 1;
                *summary.out_degree.entry(from).or_default() += 1;
                from = to;
            }
            attrs(&mut p)?;
        } else {
            let list = attrs(&mut p)?;
            summary.nodes += 1;
            if let Some((_, color)) = list.into_iter().find(|(k, _)| k == "fillcolor") {
                summary.fill.insert(first, color);
            }
        }
        punct(&mut p, ';');
    }
    if p != toks.len() {
        return Err("trailing input after graph".into());
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::BasicBlock;

    #[test]
    fn empty_cfg() {
        let cfg = Cfg::new("none", vec![]).unwrap();
        let dot = emit_dot(&cfg, &RoleMap::new(), &ColorScheme::default()).unwrap();
        assert!(dot.starts_with("// function: none\n"));
        assert!(dot.ends_with("digraph G { }\n"));
        assert_eq!(check_dot(&dot).unwrap().nodes, 0);
    }

    #[test]
    fn missing_role_is_an_error() {
        let cfg = Cfg::new("f", vec![BasicBlock::new(BlockId(0), vec![], vec![])]).unwrap();
        assert_eq!(
            emit_dot(&cfg, &RoleMap::new(), &ColorScheme::default()),
            Err(VizError::IncompleteRoleMap(BlockId(0)))
        );
    }

    #[test]
    fn labels_truncate_and_escape() {
        let instrs = vec!["a \"q\"".to_string(), "b".into(), "c".into(), "d".into()];
        let cfg = Cfg::new("f", vec![BasicBlock::new(BlockId(0), instrs, vec![])]).unwrap();
        let roles = RoleMap::from([(BlockId(0), Role::Vm)]);
        let short = emit_dot(&cfg, &roles, &ColorScheme::default()).unwrap();
        assert!(short.contains("a \\\"q\\\"\\lb\\lc\\l...\\l"));
        let full =
            emit_dot_with(&cfg, &roles, &ColorScheme::default(), &DotOptions { full_text: true, ..Default::default() })
                .unwrap();
        assert!(full.contains("c\\ld\\l\""));
        assert_eq!(check_dot(&short).unwrap().fill["bb0"], "lightblue");
    }

    #[test]
    fn checker_rejects_garbage() {
        assert!(check_dot("digraph G { a -> }").is_err());
        assert!(check_dot("graph G { }").is_err());
        assert!(check_dot("digraph G { a [label=\"x\"] ").is_err());
        assert!(check_dot("digraph { a -> b -> c; x = y; node [shape=box]; }").is_ok());
    }
}
