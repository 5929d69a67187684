//! Virtualization obfuscator for the toy IR.
//!
//! A program is compiled to bytecode and wrapped in a generated interpreter
//! whose blocks carry instruction-level role truth. Three dispatch shapes
//! are produced:
//!
//! * `SWITCH`: a central dispatcher fetches the opcode and jumps through a
//!   switch table; handlers loop back to it.
//! * `DIRECT`: each vop stores its handler address inline; handlers jump to
//!   a shared fetch tail (the hub) that jumps to that address.
//! * `INDIRECT`: like `DIRECT`, but the hub looks the handler up in a table
//!   indexed by opcode.
//!
//! In every shape the dispatching block has one edge per virtual opcode plus
//! one edge to the VM-END block.

mod bytecode;
mod codegen;
mod exec;
mod markers;
mod optimize;

use crate::asm::Gpr;
use crate::cfg::{BlockId, Cfg};
use crate::interchange::Document;
use crate::labels::{pure_role, DispatchKind, Role, Truth};

pub use bytecode::{compile_bytecode, BytecodeProgram, Vop, VopClass};
pub use codegen::virtualize;
pub use exec::interpret;
pub use markers::{insert_markers, is_marker, marker, recover_truth, strip_markers, MarkerError, MARKER_PREFIX};
pub use optimize::optimize;

/// Byte address of virtual memory cell 0.
pub const VMEM_BASE: i64 = 0x2000;
/// Byte address of the first vop.
pub const BYTECODE_BASE: i64 = 0x10000;
pub const SWITCH_TABLE_BASE: i64 = 0x8000;
pub const HANDLER_TABLE_BASE: i64 = 0xa000;
/// Address of block `id` is `CODE_BASE + 16 * id`.
pub const CODE_BASE: i64 = 0x40_0000;
pub const STACK_TOP: i64 = 0x7fff_0000;
/// Space for the sixteen virtual registers inside the native frame.
pub const VREG_BYTES: i64 = 128;

pub fn block_address(id: BlockId) -> i64 {
    CODE_BASE + 16 * id.0 as i64
}

pub fn address_block(addr: i64) -> Option<BlockId> {
    let off = addr.checked_sub(CODE_BASE)?;
    (off >= 0 && off % 16 == 0 && off / 16 <= u32::MAX as i64).then_some(BlockId((off / 16) as u32))
}

/// Byte layout of one encoded vop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Encoding {
    pub stride: i64,
    pub opcode: i64,
    pub operands: [i64; 3],
    /// Offset of the inline handler address (threaded direct dispatch only).
    pub handler: Option<i64>,
}

impl Encoding {
    pub fn for_kind(kind: DispatchKind) -> Self {
        match kind {
            DispatchKind::Switch => Encoding { stride: 32, opcode: 0, operands: [8, 16, 24], handler: None },
            DispatchKind::Indirect => Encoding { stride: 32, opcode: 24, operands: [0, 8, 16], handler: None },
            DispatchKind::Direct => Encoding { stride: 40, opcode: 8, operands: [16, 24, 32], handler: Some(0) },
        }
    }
}

/// Native registers the interpreter keeps its state in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VmRegs {
    pub vpc: Gpr,
    pub vregs: Gpr,
    pub vmem: Gpr,
    pub bytecode: Gpr,
    pub table: Gpr,
    pub t0: Gpr,
    pub t1: Gpr,
    pub t2: Gpr,
}

impl VmRegs {
    pub fn all(&self) -> [Gpr; 8] {
        [self.vpc, self.vregs, self.vmem, self.bytecode, self.table, self.t0, self.t1, self.t2]
    }
}

/// Where the interpreter pieces landed in the generated CFG.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VmLayout {
    pub dispatcher: BlockId,
    /// Handler head per virtual opcode.
    pub handlers: Vec<BlockId>,
    pub vm_end: BlockId,
    pub regs: VmRegs,
    pub encoding: Encoding,
    /// Native frame size below the saved frame pointer.
    pub frame: i64,
}

impl VmLayout {
    fn map_blocks(&mut self, map: impl Fn(BlockId) -> BlockId) {
        self.dispatcher = map(self.dispatcher);
        self.vm_end = map(self.vm_end);
        for h in &mut self.handlers {
            *h = map(*h);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmArtifact {
    pub program: String,
    pub cfg: Cfg,
    pub kind: DispatchKind,
    pub opt_level: u8,
    pub truth: Truth,
    pub bytecode: BytecodeProgram,
    pub layout: VmLayout,
    pub seed: u64,
    /// Input count of the source program.
    pub inputs: usize,
}

impl VmArtifact {
    /// Block ids whose spans all carry `role`.
    pub fn pure_blocks(&self, role: Role) -> Vec<BlockId> {
        self.truth.iter().filter(|(_, spans)| pure_role(spans) == Some(role)).map(|(id, _)| *id).collect()
    }

    pub fn is_pure(&self, id: BlockId) -> bool {
        self.truth.get(&id).is_some_and(|s| pure_role(s).is_some())
    }

    /// Block-level view of the truth (first span role of each block).
    pub fn block_roles(&self) -> crate::labels::RoleMap {
        crate::labels::first_span_roles(&self.truth)
    }

    /// Stable identifier used in file names and dataset provenance.
    pub fn tag(&self) -> String {
        format!("{}-{}-O{}-s{}", self.program, self.kind.as_str().to_ascii_lowercase(), self.opt_level, self.seed)
    }

    /// Interchange document with metadata and span truth.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new(self.cfg.clone());
        doc.set_meta("program", &self.program);
        doc.set_meta("kind", self.kind);
        doc.set_meta("opt", self.opt_level);
        doc.set_meta("seed", self.seed);
        doc.labels = self.truth.clone();
        doc
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for b in self.cfg.blocks() {
            let spans = self.truth.get(&b.id).ok_or_else(|| format!("block {} has no truth", b.id))?;
            let mut cursor = 0;
            for s in spans {
                if s.start != cursor || s.end < s.start {
                    return Err(format!("block {}: spans are not contiguous", b.id));
                }
                cursor = s.end;
            }
            if cursor != b.instrs.len() {
                return Err(format!("block {}: spans do not cover the block", b.id));
            }
        }
        if self.truth.len() != self.cfg.len() {
            return Err("truth names blocks missing from the cfg".into());
        }
        if self.opt_level == 0 {
            if let Some(b) = self.cfg.blocks().iter().find(|b| !self.is_pure(b.id)) {
                return Err(format!("block {} is mixed at opt 0", b.id));
            }
            if self.pure_blocks(Role::DispatchStart).len() != 1 {
                return Err("expected exactly one DISPATCH-START block".into());
            }
        }
        self.bytecode.check_invariants()
    }
}
