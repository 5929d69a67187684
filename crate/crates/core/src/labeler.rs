//! Structural identification of interpreter blocks, without ground truth.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::cfg::{BlockId, Cfg, CfgError};
use crate::labels::{pure_role, Role, RoleMap, Truth};
use crate::virtualizer::VmArtifact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelerParams {
    /// Smallest out-degree accepted for a dispatcher.
    pub min_fanout: usize,
}

impl Default for LabelerParams {
    fn default() -> Self {
        Self { min_fanout: 3 }
    }
}

impl LabelerParams {
    pub fn new(min_fanout: usize) -> Result<Self, LabelerError> {
        if min_fanout < 2 {
            return Err(LabelerError::InvalidParams(format!("min_fanout must be at least 2, got {min_fanout}")));
        }
        Ok(Self { min_fanout })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelerError {
    #[error("no block has out-degree of at least {min_fanout} (maximum is {max})")]
    NoDispatcher { max: usize, min_fanout: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Cfg(#[from] CfgError),
}

/// The block with the largest out-degree; on ties the earliest in layout
/// order wins.
pub fn identify_dispatcher(cfg: &Cfg, params: &LabelerParams) -> Result<BlockId, LabelerError> {
    let mut best: Option<(BlockId, usize)> = None;
    for b in cfg.blocks() {
        let n = b.succs.len();
        if best.is_none_or(|(_, max)| n > max) {
            best = Some((b.id, n));
        }
    }
    match best {
        Some((id, max)) if max >= params.min_fanout => Ok(id),
        other => Err(LabelerError::NoDispatcher { max: other.map_or(0, |(_, m)| m), min_fanout: params.min_fanout }),
    }
}

/// Dispatcher's strongly connected component plus its direct successors.
pub fn vm_region(cfg: &Cfg, dispatcher: BlockId) -> Result<BTreeSet<BlockId>, CfgError> {
    let mut region = cfg.scc_of(dispatcher)?.members;
    region.extend(cfg.succs(dispatcher)?);
    Ok(region)
}

/// Assigns a role to every block. Without a dispatcher everything is NON-VM.
pub fn label_structures(cfg: &Cfg, params: &LabelerParams) -> RoleMap {
    let mut roles: RoleMap = cfg.ids().map(|id| (id, Role::NonVm)).collect();
    let Ok(d) = identify_dispatcher(cfg, params) else {
        return roles;
    };
    let scc = cfg.scc_of(d).expect("dispatcher exists").members;
    let region = vm_region(cfg, d).expect("dispatcher exists");
    let direct: BTreeSet<BlockId> = cfg.succs(d).expect("dispatcher exists").iter().copied().collect();

    for &b in &region {
        let role = if b == d {
            Role::DispatchStart
        } else {
            let leaves = cfg.succs(b).expect("region block exists").iter().any(|s| !region.contains(s));
            if !scc.contains(&b) || leaves {
                Role::VmEnd
            } else if direct.contains(&b) {
                Role::Handler
            } else {
                Role::Vm
            }
        };
        roles.insert(b, role);
    }
    for p in cfg.predecessors(d).expect("dispatcher exists") {
        if !region.contains(&p) {
            roles.insert(p, Role::VmStart);
        }
    }
    roles
}

/// Per-role detection verdicts for one artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRow {
    pub vm_start: bool,
    pub dispatch_start: bool,
    pub handler: bool,
    pub vm_end: bool,
}

impl DetectionRow {
    pub fn get(&self, role: Role) -> Option<bool> {
        match role {
            Role::VmStart => Some(self.vm_start),
            Role::DispatchStart => Some(self.dispatch_start),
            Role::Handler => Some(self.handler),
            Role::VmEnd => Some(self.vm_end),
            Role::Vm | Role::NonVm => None,
        }
    }

    pub fn all(&self) -> bool {
        self.vm_start && self.dispatch_start && self.handler && self.vm_end
    }
}

pub fn mark(ok: bool) -> &'static str {
    if ok {
        "✓"
    } else {
        "✗"
    }
}

impl fmt::Display for DetectionRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> =
            Role::CORE.iter().map(|r| format!("{r} {}", mark(self.get(*r).unwrap_or(false)))).collect();
        f.write_str(&cells.join("  "))
    }
}

/// A role is detected when the predicted set is non-empty and equals the set
/// of blocks that are purely that role in the truth.
pub fn score_roles(pred: &RoleMap, truth: &Truth) -> DetectionRow {
    let ok = |role: Role| {
        let predicted: BTreeSet<BlockId> = pred.iter().filter(|(_, r)| **r == role).map(|(id, _)| *id).collect();
        let pure: BTreeSet<BlockId> =
            truth.iter().filter(|(_, s)| pure_role(s) == Some(role)).map(|(id, _)| *id).collect();
        !predicted.is_empty() && predicted == pure
    };
    DetectionRow {
        vm_start: ok(Role::VmStart),
        dispatch_start: ok(Role::DispatchStart),
        handler: ok(Role::Handler),
        vm_end: ok(Role::VmEnd),
    }
}

pub fn score_against_truth(pred: &RoleMap, artifact: &VmArtifact) -> DetectionRow {
    score_roles(pred, &artifact.truth)
}
