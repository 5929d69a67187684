//! Control-flow graph model and the graph queries the labeler relies on.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for BlockId {
    fn from(v: u32) -> Self {
        BlockId(v)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("block {0} not found")]
    BlockNotFound(BlockId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid cfg: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instrs: Vec<String>,
    pub succs: Vec<BlockId>,
}

impl BasicBlock {
    /// Builds a block; repeated successors collapse onto their first occurrence.
    pub fn new(id: BlockId, instrs: Vec<String>, succs: Vec<BlockId>) -> Self {
        let mut seen = HashSet::new();
        let succs = succs.into_iter().filter(|s| seen.insert(*s)).collect();
        Self { id, instrs, succs }
    }
}

/// A single function's CFG. Blocks are kept in layout order and the entry
/// is the first block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    name: String,
    blocks: Vec<BasicBlock>,
    index: BTreeMap<BlockId, usize>,
}

/// Strongly connected component containing a queried block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scc {
    pub members: BTreeSet<BlockId>,
    /// Singleton without a self-loop.
    pub trivial: bool,
}

impl Cfg {
    pub fn new(name: impl Into<String>, blocks: Vec<BasicBlock>) -> Result<Self, CfgError> {
        let mut index = BTreeMap::new();
        for (pos, b) in blocks.iter().enumerate() {
            if index.insert(b.id, pos).is_some() {
                return Err(CfgError::Validation(format!("duplicate block id {}", b.id)));
            }
        }
        for b in &blocks {
            let mut seen = HashSet::new();
            for s in &b.succs {
                if !index.contains_key(s) {
                    return Err(CfgError::Validation(format!("edge {} -> {} targets a missing block", b.id, s)));
                }
                if !seen.insert(*s) {
                    return Err(CfgError::Validation(format!("duplicate edge {} -> {}", b.id, s)));
                }
            }
        }
        Ok(Self { name: name.into(), blocks, index })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entry(&self) -> Option<BlockId> {
        self.blocks.first().map(|b| b.id)
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.iter().map(|b| b.id)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn block(&self, id: BlockId) -> Result<&BasicBlock, CfgError> {
        self.index.get(&id).map(|&pos| &self.blocks[pos]).ok_or(CfgError::BlockNotFound(id))
    }

    /// Position of a block in layout order.
    pub fn position(&self, id: BlockId) -> Result<usize, CfgError> {
        self.index.get(&id).copied().ok_or(CfgError::BlockNotFound(id))
    }

    pub fn succs(&self, id: BlockId) -> Result<&[BlockId], CfgError> {
        Ok(&self.block(id)?.succs)
    }

    pub fn out_degree(&self, id: BlockId) -> Result<usize, CfgError> {
        Ok(self.block(id)?.succs.len())
    }

    pub fn predecessors(&self, id: BlockId) -> Result<BTreeSet<BlockId>, CfgError> {
        self.block(id)?;
        Ok(self.blocks.iter().filter(|b| b.succs.contains(&id)).map(|b| b.id).collect())
    }

    pub fn edge_count(&self) -> usize {
        self.blocks.iter().map(|b| b.succs.len()).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.blocks.iter().flat_map(|b| b.succs.iter().map(move |s| (b.id, *s)))
    }

    /// Blocks not reachable from the entry. They are kept, only flagged.
    pub fn unreachable_blocks(&self) -> BTreeSet<BlockId> {
        let Some(entry) = self.entry() else {
            return BTreeSet::new();
        };
        let mut seen = HashSet::from([entry]);
        let mut stack = vec![entry];
        while let Some(b) = stack.pop() {
            for s in &self.blocks[self.index[&b]].succs {
                if seen.insert(*s) {
                    stack.push(*s);
                }
            }
        }
        self.ids().filter(|id| !seen.contains(id)).collect()
    }

    /// Strongly connected component of `id` (Tarjan over the whole graph).
    pub fn scc_of(&self, id: BlockId) -> Result<Scc, CfgError> {
        let target = self.position(id)?;
        let comps = tarjan(self);
        let members: BTreeSet<BlockId> =
            self.blocks.iter().zip(&comps).filter(|(_, c)| **c == comps[target]).map(|(b, _)| b.id).collect();
        let trivial = members.len() == 1 && !self.blocks[target].succs.contains(&id);
        Ok(Scc { members, trivial })
    }

    /// Component number for every block in layout order.
    pub fn scc_ids(&self) -> Vec<usize> {
        tarjan(self)
    }
}

fn tarjan(cfg: &Cfg) -> Vec<usize> {
    let mut graph = DiGraph::<(), ()>::with_capacity(cfg.blocks.len(), cfg.edge_count());
    let nodes: Vec<NodeIndex> = cfg.blocks.iter().map(|_| graph.add_node(())).collect();
    for b in &cfg.blocks {
        for s in &b.succs {
            graph.add_edge(nodes[cfg.index[&b.id]], nodes[cfg.index[s]], ());
        }
    }
    let mut comp = vec![0; cfg.blocks.len()];
    for (c, members) in tarjan_scc(&graph).into_iter().enumerate() {
        for m in members {
            comp[m.index()] = c;
        }
    }
    comp
}
