use std::collections::BTreeMap;

use super::VmArtifact;
use crate::asm::{Asm, JumpTarget};
use crate::cfg::{BasicBlock, BlockId, Cfg};
use crate::labels::{RoleSpan, Truth};

struct Work {
    id: BlockId,
    code: Vec<Asm>,
    succs: Vec<BlockId>,
    spans: Vec<RoleSpan>,
}

/// Chain merging: a block whose only successor has it as the only
/// predecessor absorbs that successor, until no such pair remains. Block ids
/// are then renumbered densely in layout order.
///
/// Merged blocks keep the truth spans of both halves, so role boundaries
/// that used to be block boundaries end up inside a single block.
pub fn optimize(artifact: &VmArtifact) -> VmArtifact {
    let parse = |text: &String| text.parse::<Asm>().expect("generated instruction parses");
    let mut work: Vec<Work> = artifact
        .cfg
        .blocks()
        .iter()
        .map(|b| Work {
            id: b.id,
            code: b.instrs.iter().map(parse).collect(),
            succs: b.succs.clone(),
            spans: artifact.truth[&b.id].clone(),
        })
        .collect();
    let entry = artifact.cfg.entry();
    let dispatcher = artifact.layout.dispatcher;

    while let Some((a, b)) = find_chain(&work, entry, dispatcher) {
        let absorbed = work.remove(b);
        let a = if b < a { a - 1 } else { a };
        let head = &mut work[a];
        head.code.pop();
        let cut = head.code.len();
        for s in &mut head.spans {
            s.end = s.end.min(cut);
            s.start = s.start.min(cut);
        }
        head.spans.extend(absorbed.spans.iter().map(|s| RoleSpan::new(s.start + cut, s.end + cut, s.role)));
        head.spans = coalesce(std::mem::take(&mut head.spans));
        head.code.extend(absorbed.code);
        head.succs = absorbed.succs;
    }

    let renumber: BTreeMap<BlockId, BlockId> =
        work.iter().enumerate().map(|(i, w)| (w.id, BlockId(i as u32))).collect();
    let map = |id: BlockId| renumber[&id];

    let mut truth = Truth::new();
    let mut blocks = Vec::with_capacity(work.len());
    for w in work {
        let id = map(w.id);
        let instrs = w
            .code
            .into_iter()
            .map(|mut ins| {
                ins.map_labels(map);
                ins.to_string()
            })
            .collect();
        truth.insert(id, w.spans);
        blocks.push(BasicBlock::new(id, instrs, w.succs.into_iter().map(map).collect()));
    }
    let mut layout = artifact.layout.clone();
    layout.map_blocks(map);

    VmArtifact {
        cfg: Cfg::new(artifact.cfg.name(), blocks).expect("merging preserves well-formedness"),
        opt_level: 1,
        truth,
        layout,
        ..artifact.clone()
    }
}

/// Positions `(a, b)` of the first mergeable pair in layout order.
fn find_chain(work: &[Work], entry: Option<BlockId>, dispatcher: BlockId) -> Option<(usize, usize)> {
    let mut preds: BTreeMap<BlockId, usize> = BTreeMap::new();
    for w in work {
        for s in &w.succs {
            *preds.entry(*s).or_default() += 1;
        }
    }
    work.iter().enumerate().find_map(|(a, w)| {
        let [next] = w.succs[..] else { return None };
        let mergeable = next != w.id
            && Some(next) != entry
            && next != dispatcher
            && preds.get(&next) == Some(&1)
            && matches!(w.code.last(), Some(Asm::Jmp(JumpTarget::Label(t))) if *t == next);
        mergeable.then(|| (a, work.iter().position(|x| x.id == next).expect("successor exists")))
    })
}

/// Drops empty spans and joins neighbours with the same role, keeping one
/// span for an empty block.
fn coalesce(spans: Vec<RoleSpan>) -> Vec<RoleSpan> {
    let fallback = spans.first().map(|s| RoleSpan::new(0, 0, s.role));
    let mut out: Vec<RoleSpan> = Vec::new();
    for s in spans.into_iter().filter(|s| !s.is_empty()) {
        match out.last_mut() {
            Some(last) if last.role == s.role && last.end == s.start => last.end = s.end,
            _ => out.push(s),
        }
    }
    if out.is_empty() {
        out.extend(fallback);
    }
    out
}
