//! Executes the pseudo-assembly of a virtualized artifact.

use std::collections::HashMap;

use super::codegen::OUTPUT_SYMBOL;
use super::markers::is_marker_symbol;
use super::{
    address_block, block_address, VmArtifact, BYTECODE_BASE, HANDLER_TABLE_BASE, STACK_TOP, SWITCH_TABLE_BASE,
};
use crate::asm::{AluOp, Asm, Gpr, JumpTarget, Mem, Src};
use crate::cfg::BlockId;
use crate::ir::IrError;
use crate::labels::DispatchKind;

/// Return address planted below the arguments; returning to it ends the run.
const RETURN_SENTINEL: i64 = -0x1000;
/// Native instructions allowed per virtual step before the run is cut off.
const NATIVE_PER_STEP: u64 = 64;
const NATIVE_OVERHEAD: u64 = 1024;

/// Data section of an artifact: encoded bytecode plus dispatch tables.
pub(crate) fn data_image(artifact: &VmArtifact) -> HashMap<i64, i64> {
    let enc = artifact.layout.encoding;
    let layout = &artifact.layout;
    let bc = &artifact.bytecode;
    let mut mem = HashMap::new();
    let vop_base = |i: usize| BYTECODE_BASE + i as i64 * enc.stride;

    for (i, vop) in bc.vops.iter().enumerate() {
        let base = vop_base(i);
        mem.insert(base + enc.opcode, vop.opcode as i64);
        for (off, value) in enc.operands.iter().zip(vop.operands) {
            mem.insert(base + off, value);
        }
        if let Some(slot) = enc.handler {
            mem.insert(base + slot, block_address(layout.handlers[vop.opcode as usize]));
        }
    }
    // past VEXIT: an out-of-range opcode (or the VM-END address) ends the loop
    let sentinel = vop_base(bc.vops.len());
    mem.insert(sentinel + enc.opcode, bc.handler_count as i64);
    if let Some(slot) = enc.handler {
        mem.insert(sentinel + slot, block_address(layout.vm_end));
    }

    let table = match artifact.kind {
        DispatchKind::Switch => Some(SWITCH_TABLE_BASE),
        DispatchKind::Indirect => Some(HANDLER_TABLE_BASE),
        DispatchKind::Direct => None,
    };
    if let Some(table) = table {
        for (op, head) in layout.handlers.iter().enumerate() {
            mem.insert(table + 8 * op as i64, block_address(*head));
        }
    }
    mem
}

struct Machine {
    regs: [i64; 16],
    mem: HashMap<i64, i64>,
    flags: (i64, i64),
    out: Vec<i64>,
}

impl Machine {
    fn addr(&self, m: &Mem) -> i64 {
        let mut a = self.regs[m.base.index()].wrapping_add(m.disp);
        if let Some((idx, scale)) = m.index {
            a = a.wrapping_add(self.regs[idx.index()].wrapping_mul(scale as i64));
        }
        a
    }

    fn load(&self, addr: i64) -> i64 {
        self.mem.get(&addr).copied().unwrap_or(0)
    }

    fn src(&self, s: Src) -> i64 {
        match s {
            Src::Reg(r) => self.regs[r.index()],
            Src::Imm(v) => v,
        }
    }

    fn push(&mut self, v: i64) {
        let sp = self.regs[Gpr::Rsp.index()] - 8;
        self.regs[Gpr::Rsp.index()] = sp;
        self.mem.insert(sp, v);
    }

    fn pop(&mut self) -> i64 {
        let sp = self.regs[Gpr::Rsp.index()];
        self.regs[Gpr::Rsp.index()] = sp + 8;
        self.load(sp)
    }
}

/// Runs the artifact's native code on `inputs` and returns the values it
/// printed.
///
/// `step_budget` counts virtual instructions of the source program, so
/// the run times out exactly when evaluating the source program would.
pub fn interpret(artifact: &VmArtifact, inputs: &[i64], step_budget: u64) -> Result<Vec<i64>, IrError> {
    if inputs.len() != artifact.inputs {
        return Err(IrError::InputArity { expected: artifact.inputs, got: inputs.len() });
    }
    let cfg = &artifact.cfg;
    let code: Vec<Vec<Asm>> = cfg
        .blocks()
        .iter()
        .map(|b| {
            b.instrs
                .iter()
                .map(|t| t.parse::<Asm>().map_err(|e| IrError::Fault(format!("block {}: {e}", b.id))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let position = |id: BlockId| cfg.position(id).map_err(|e| IrError::Fault(e.to_string()));

    let mut m = Machine { regs: [0; 16], mem: data_image(artifact), flags: (0, 0), out: Vec::new() };
    m.regs[Gpr::Rsp.index()] = STACK_TOP;
    m.mem.insert(STACK_TOP, RETURN_SENTINEL);
    for (i, v) in inputs.iter().enumerate() {
        m.mem.insert(STACK_TOP + 8 + 8 * i as i64, *v);
    }

    let layout = &artifact.layout;
    let vpc = layout.regs.vpc;
    let stride = layout.encoding.stride;
    let source_vops = artifact.bytecode.exit_index() as i64;
    let native_cap = step_budget.saturating_add(2).saturating_mul(NATIVE_PER_STEP).saturating_add(NATIVE_OVERHEAD);

    let mut steps = 0u64;
    let mut native = 0u64;
    let mut block = position(cfg.entry().ok_or_else(|| IrError::Fault("empty cfg".into()))?)?;
    'blocks: loop {
        if cfg.blocks()[block].id == layout.dispatcher {
            let offset = m.regs[vpc.index()] - BYTECODE_BASE;
            if offset % stride == 0 && (0..source_vops).contains(&(offset / stride)) {
                if steps >= step_budget {
                    return Err(IrError::Timeout);
                }
                steps += 1;
            }
        }
        for ins in &code[block] {
            native += 1;
            if native > native_cap {
                return Err(IrError::Timeout);
            }
            let target = match ins {
                Asm::Mov(d, s) => {
                    m.regs[d.index()] = m.src(*s);
                    None
                }
                Asm::Lea(d, mem) => {
                    m.regs[d.index()] = m.addr(mem);
                    None
                }
                Asm::Load(d, mem) => {
                    m.regs[d.index()] = m.load(m.addr(mem));
                    None
                }
                Asm::Store(mem, s) => {
                    let (a, v) = (m.addr(mem), m.src(*s));
                    m.mem.insert(a, v);
                    None
                }
                Asm::Alu(op, d, s) => {
                    let (a, b) = (m.regs[d.index()], m.src(*s));
                    m.regs[d.index()] = match op {
                        AluOp::Add => a.wrapping_add(b),
                        AluOp::Sub => a.wrapping_sub(b),
                        AluOp::Mul => a.wrapping_mul(b),
                        AluOp::Div if b == 0 => return Err(IrError::TrapDivZero),
                        AluOp::Div => a.wrapping_div(b),
                        AluOp::Rem if b == 0 => return Err(IrError::TrapDivZero),
                        AluOp::Rem => a.wrapping_rem(b),
                    };
                    None
                }
                Asm::Cmp(a, s) => {
                    m.flags = (m.regs[a.index()], m.src(*s));
                    None
                }
                Asm::Jcc(c, b) => c.holds(m.flags.0, m.flags.1).then_some(*b),
                Asm::Jmp(JumpTarget::Label(b)) => Some(*b),
                Asm::Jmp(JumpTarget::Reg(r)) => Some(resolve(m.regs[r.index()])?),
                Asm::Jmp(JumpTarget::Mem(mem)) => Some(resolve(m.load(m.addr(mem)))?),
                Asm::Bound(r, limit) => {
                    if !(0..*limit).contains(&m.regs[r.index()]) {
                        return Err(IrError::TrapBounds);
                    }
                    None
                }
                Asm::Call(sym) if sym == OUTPUT_SYMBOL => {
                    m.out.push(m.regs[Gpr::Rdi.index()]);
                    None
                }
                Asm::Call(sym) if is_marker_symbol(sym) => None,
                Asm::Call(sym) => return Err(IrError::Fault(format!("call to unknown symbol `{sym}`"))),
                Asm::Push(r) => {
                    let v = m.regs[r.index()];
                    m.push(v);
                    None
                }
                Asm::Pop(r) => {
                    m.regs[r.index()] = m.pop();
                    None
                }
                Asm::Ret => {
                    let ra = m.pop();
                    if ra == RETURN_SENTINEL {
                        return Ok(m.out);
                    }
                    Some(resolve(ra)?)
                }
                Asm::Nop => None,
            };
            if let Some(t) = target {
                block = position(t)?;
                continue 'blocks;
            }
        }
        return Err(IrError::Fault(format!("fell off the end of block {}", cfg.blocks()[block].id)));
    }
}

fn resolve(addr: i64) -> Result<BlockId, IrError> {
    address_block(addr).ok_or_else(|| IrError::Fault(format!("jump to non-code address {addr:#x}")))
}
