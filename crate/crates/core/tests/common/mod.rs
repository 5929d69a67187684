//! Seeded generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vmlab::cfg::{BasicBlock, BlockId, Cfg};
use vmlab::dataset::{DatasetRecord, RecordMeta};
use vmlab::interchange::Document;
use vmlab::labels::{DispatchKind, Role, RoleSpan, Truth};

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adjacency lists with distinct targets; block `i` has id `i`.
pub fn random_adjacency(rng: &mut Rng8, max_blocks: usize, max_degree: usize) -> Vec<Vec<u32>> {
    let n = rng.gen_range(1..=max_blocks);
    let ids: Vec<u32> = (0..n as u32).collect();
    (0..n)
        .map(|_| {
            let d = rng.gen_range(0..=max_degree.min(n));
            ids.choose_multiple(rng, d).copied().collect()
        })
        .collect()
}

/// Builds a CFG whose block at layout position `i` has id `ids[i]`.
pub fn graph_with_ids(adj: &[Vec<u32>], ids: &[u32], instrs: impl Fn(usize) -> Vec<String>) -> Cfg {
    let blocks = adj
        .iter()
        .enumerate()
        .map(|(i, succs)| {
            BasicBlock::new(BlockId(ids[i]), instrs(i), succs.iter().map(|&t| BlockId(ids[t as usize])).collect())
        })
        .collect();
    Cfg::new("g", blocks).expect("generated graph is valid")
}

pub fn graph(adj: &[Vec<u32>]) -> Cfg {
    let ids: Vec<u32> = (0..adj.len() as u32).collect();
    graph_with_ids(adj, &ids, |_| Vec::new())
}

/// Layout index of the first block attaining the largest out-degree.
pub fn first_max_degree(adj: &[Vec<u32>]) -> (usize, usize) {
    let max = adj.iter().map(Vec::len).max().unwrap_or(0);
    (adj.iter().position(|s| s.len() == max).unwrap_or(0), max)
}

/// Every block that reaches `from` and is reachable from it.
pub fn brute_force_scc(adj: &[Vec<u32>], from: usize) -> BTreeSet<usize> {
    let reach = |start: usize| {
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(b) = stack.pop() {
            for &t in &adj[b] {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    stack.push(t as usize);
                }
            }
        }
        seen
    };
    let fwd = reach(from);
    (0..adj.len()).filter(|&x| fwd[x] && reach(x)[from]).collect()
}

const MNEMONICS: [&str; 8] = ["mov", "add", "cmp", "jmp", "call", "push", "lea", "xor"];
const OPERANDS: [&str; 8] = ["rax", "rbx", "r12", "5", "-3", "qword [rbx + 8]", "bb4", "0x40"];

pub fn random_instr(rng: &mut Rng8) -> String {
    let m = MNEMONICS.choose(rng).unwrap();
    let ops: Vec<&str> = (0..rng.gen_range(0..=2)).map(|_| *OPERANDS.choose(rng).unwrap()).collect();
    if ops.is_empty() {
        m.to_string()
    } else {
        format!("{m} {}", ops.join(", "))
    }
}

/// Random contiguous spans covering `len` instructions.
pub fn random_spans(rng: &mut Rng8, len: usize) -> Vec<RoleSpan> {
    let role = |rng: &mut Rng8| *Role::ALL.choose(rng).unwrap();
    if len < 2 || rng.gen_bool(0.6) {
        return vec![RoleSpan::new(0, len, role(rng))];
    }
    let cut = rng.gen_range(1..len);
    vec![RoleSpan::new(0, cut, role(rng)), RoleSpan::new(cut, len, role(rng))]
}

/// A document with random graph, instructions, metadata and labels.
pub fn random_document(rng: &mut Rng8) -> Document {
    let adj = random_adjacency(rng, 12, 4);
    let texts: Vec<Vec<String>> =
        adj.iter().map(|_| (0..rng.gen_range(0..6)).map(|_| random_instr(rng)).collect()).collect();
    // sparse, shuffled ids that still follow layout order
    let mut ids: Vec<u32> = (0..adj.len() as u32).map(|i| i * 3 + rng.gen_range(0..3)).collect();
    if rng.gen_bool(0.3) {
        ids.shuffle(rng);
    }
    let cfg = graph_with_ids(&adj, &ids, |i| texts[i].clone());
    let mut doc = Document::new(cfg);
    if rng.gen_bool(0.5) {
        doc.set_meta("kind", DispatchKind::ALL.choose(rng).unwrap());
        doc.set_meta("seed", rng.gen::<u32>());
    }
    if rng.gen_bool(0.7) {
        let labels: Truth = doc.cfg.blocks().iter().map(|b| (b.id, random_spans(rng, b.instrs.len()))).collect();
        doc.labels = labels;
    }
    doc
}

pub fn random_record(rng: &mut Rng8) -> DatasetRecord {
    let alphabet = ["mov", "##rax", ",", "[", "REG", "\"q\"", "\\", "é", "\t", "0x1f"];
    let tokens = (0..rng.gen_range(1..20)).map(|_| alphabet.choose(rng).unwrap().to_string()).collect();
    let meta = RecordMeta {
        program: format!("rand_{}", rng.gen::<u16>()),
        opt: rng.gen_range(0..=1),
        seed: rng.gen(),
        first_block: rng.gen_range(0..40),
        last_block: rng.gen_range(40..80),
        chunk: rng.gen_range(0..3),
    };
    DatasetRecord::new(*DispatchKind::ALL.choose(rng).unwrap(), *Role::ALL.choose(rng).unwrap(), tokens, meta)
}
