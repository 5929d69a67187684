//! Label vocabularies shared by the generator, the labeler, and the classifier.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cfg::BlockId;

/// Interpreter dispatch strategy. Doubles as the classifier's main label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DispatchKind {
    Switch,
    Direct,
    Indirect,
}

impl DispatchKind {
    pub const ALL: [DispatchKind; 3] = [DispatchKind::Switch, DispatchKind::Direct, DispatchKind::Indirect];

    pub fn as_str(self) -> &'static str {
        match self {
            DispatchKind::Switch => "SWITCH",
            DispatchKind::Direct => "DIRECT",
            DispatchKind::Indirect => "INDIRECT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DispatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for DispatchKind {
    type Err = UnknownLabel;

    /// Case-insensitive so that CLI flags like `--kind switch` work.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SWITCH" => Ok(DispatchKind::Switch),
            "DIRECT" => Ok(DispatchKind::Direct),
            "INDIRECT" => Ok(DispatchKind::Indirect),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

/// Structural role of a block (or of an instruction span inside a block).
///
/// Declaration order is the canonical class order used for tie-breaking
/// and for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    DispatchStart,
    Handler,
    Vm,
    VmStart,
    VmEnd,
    NonVm,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::DispatchStart, Role::Handler, Role::Vm, Role::VmStart, Role::VmEnd, Role::NonVm];

    /// The four roles scored in the detection matrix, in table row order.
    pub const CORE: [Role; 4] = [Role::VmStart, Role::DispatchStart, Role::Handler, Role::VmEnd];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::DispatchStart => "DISPATCH-START",
            Role::Handler => "HANDLER",
            Role::Vm => "VM",
            Role::VmStart => "VM-START",
            Role::VmEnd => "VM-END",
            Role::NonVm => "NON-VM",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

macro_rules! serde_via_str {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_str!(Role);
serde_via_str!(DispatchKind);

/// A half-open instruction range `[start, end)` inside one block, with its role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoleSpan {
    pub start: usize,
    pub end: usize,
    pub role: Role,
}

impl RoleSpan {
    pub fn new(start: usize, end: usize, role: Role) -> Self {
        Self { start, end, role }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Instruction-level ground truth: block id to its ordered role spans.
pub type Truth = BTreeMap<BlockId, Vec<RoleSpan>>;

/// Block-level role assignment, total over a cfg's blocks.
pub type RoleMap = BTreeMap<BlockId, Role>;

/// The single role of a block whose spans all agree, `None` for mixed blocks.
pub fn pure_role(spans: &[RoleSpan]) -> Option<Role> {
    let first = spans.first()?.role;
    spans.iter().all(|s| s.role == first).then_some(first)
}

/// Collapses truth to a block-level map using the first span of every block.
pub fn first_span_roles(truth: &Truth) -> RoleMap {
    truth.iter().filter_map(|(id, spans)| spans.first().map(|s| (*id, s.role))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_names_round_trip() {
        for role in Role::ALL {
            assert_eq!(role.as_str().parse::<Role>().unwrap(), role);
        }
        assert_eq!("vm-end".parse::<Role>().unwrap(), Role::VmEnd);
        assert!("VMEND".parse::<Role>().is_err());
    }

    #[test]
    fn kind_parse_is_case_insensitive() {
        assert_eq!("indirect".parse::<DispatchKind>().unwrap(), DispatchKind::Indirect);
        assert!("threaded".parse::<DispatchKind>().is_err());
    }

    #[test]
    fn purity() {
        let a = RoleSpan::new(0, 2, Role::Vm);
        let b = RoleSpan::new(2, 3, Role::Vm);
        let c = RoleSpan::new(3, 5, Role::VmEnd);
        assert_eq!(pure_role(&[a, b]), Some(Role::Vm));
        assert_eq!(pure_role(&[a, c]), None);
        assert_eq!(pure_role(&[]), None);
    }
}
