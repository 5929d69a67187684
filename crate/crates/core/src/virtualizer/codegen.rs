use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bytecode::{compile_bytecode, BytecodeProgram, VopClass};
use super::{
    optimize, Encoding, VmArtifact, VmLayout, VmRegs, BYTECODE_BASE, HANDLER_TABLE_BASE, SWITCH_TABLE_BASE, VMEM_BASE,
    VREG_BYTES,
};
use crate::asm::{AluOp, Asm, Cond, Gpr, JumpTarget, Mem, Src};
use crate::cfg::{BasicBlock, BlockId, Cfg};
use crate::ir::{Opcode, SourceProgram, NUM_REGS};
use crate::labels::{DispatchKind, Role, RoleSpan, Truth};

/// Registers the interpreter may claim. `rsp`, `rbp`, and `rdi` are reserved
/// for the frame and the output call.
const POOL: [Gpr; 13] = [
    Gpr::Rax,
    Gpr::Rbx,
    Gpr::Rcx,
    Gpr::Rdx,
    Gpr::Rsi,
    Gpr::R8,
    Gpr::R9,
    Gpr::R10,
    Gpr::R11,
    Gpr::R12,
    Gpr::R13,
    Gpr::R14,
    Gpr::R15,
];

pub const OUTPUT_SYMBOL: &str = "__vm_out";

fn frame_size(kind: DispatchKind) -> i64 {
    VREG_BYTES
        + match kind {
            DispatchKind::Switch => 16,
            DispatchKind::Direct => 32,
            DispatchKind::Indirect => 48,
        }
}

/// Virtualizes `program`. Register assignment inside the interpreter is
/// drawn from `seed`; everything else is a pure function of the inputs.
///
/// # Panics
///
/// Panics if `opt_level` is not 0 or 1.
pub fn virtualize(program: &SourceProgram, kind: DispatchKind, opt_level: u8, seed: u64) -> VmArtifact {
    assert!(opt_level <= 1, "opt_level must be 0 or 1, got {opt_level}");
    let bytecode = compile_bytecode(program);
    let artifact = Generator::new(program, bytecode, kind, seed).run();
    if opt_level == 1 {
        optimize(&artifact)
    } else {
        artifact
    }
}

struct Pending {
    role: Role,
    code: Vec<Asm>,
    /// Explicit successor list for blocks ending in computed jumps.
    succs: Option<Vec<BlockId>>,
}

struct Generator<'a> {
    program: &'a SourceProgram,
    bytecode: BytecodeProgram,
    kind: DispatchKind,
    seed: u64,
    enc: Encoding,
    regs: VmRegs,
    frame: i64,
    saved: Vec<Gpr>,
    blocks: Vec<Option<Pending>>,
    dispatcher: BlockId,
    heads: Vec<BlockId>,
    interiors: Vec<Vec<BlockId>>,
    vm_end: BlockId,
    epilogue: BlockId,
}

impl<'a> Generator<'a> {
    fn new(program: &'a SourceProgram, bytecode: BytecodeProgram, kind: DispatchKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = POOL;
        pool.shuffle(&mut rng);
        let regs = VmRegs {
            vpc: pool[0],
            vregs: pool[1],
            vmem: pool[2],
            bytecode: pool[3],
            table: pool[4],
            t0: pool[5],
            t1: pool[6],
            t2: pool[7],
        };
        let mut saved: Vec<Gpr> = regs.all().into_iter().filter(|g| g.callee_saved()).collect();
        saved.sort();

        // layout: prologue, vm-start, dispatcher, handlers (head then interior), vm-end, epilogue
        let mut next = 3u32;
        let mut alloc = || {
            let id = BlockId(next);
            next += 1;
            id
        };
        let mut heads = Vec::new();
        let mut interiors = Vec::new();
        for class in &bytecode.classes {
            heads.push(alloc());
            let n = match class {
                VopClass::Source(Opcode::Lt | Opcode::Eq | Opcode::Jz) => 2,
                _ => 0,
            };
            interiors.push((0..n).map(|_| alloc()).collect());
        }
        let vm_end = alloc();
        let epilogue = alloc();
        let total = epilogue.index() + 1;

        Self {
            program,
            bytecode,
            kind,
            seed,
            enc: Encoding::for_kind(kind),
            regs,
            frame: frame_size(kind),
            saved,
            blocks: (0..total).map(|_| None).collect(),
            dispatcher: BlockId(2),
            heads,
            interiors,
            vm_end,
            epilogue,
        }
    }

    fn put(&mut self, id: BlockId, role: Role, code: Vec<Asm>) {
        self.blocks[id.index()] = Some(Pending { role, code, succs: None });
    }

    fn operand(&self, i: usize) -> Mem {
        Mem::disp(self.regs.vpc, self.enc.operands[i])
    }

    fn vreg_slot(&self, reg: Gpr) -> Mem {
        Mem::indexed(self.regs.vregs, reg, 8, 0)
    }

    fn advance(&self) -> Asm {
        Asm::Alu(AluOp::Add, self.regs.vpc, Src::Imm(self.enc.stride))
    }

    fn back_to_dispatch(&self) -> Asm {
        Asm::Jmp(JumpTarget::Label(self.dispatcher))
    }

    /// `vpc = bytecode + operand[i] * stride`
    fn branch_to_operand(&self, i: usize) -> Vec<Asm> {
        let r = self.regs;
        vec![
            Asm::Load(r.t0, self.operand(i)),
            Asm::Alu(AluOp::Mul, r.t0, Src::Imm(self.enc.stride)),
            Asm::Mov(r.vpc, Src::Reg(r.bytecode)),
            Asm::Alu(AluOp::Add, r.vpc, Src::Reg(r.t0)),
            self.back_to_dispatch(),
        ]
    }

    fn run(mut self) -> VmArtifact {
        let r = self.regs;
        let saved_bytes = 8 * self.saved.len() as i64;

        let mut prologue = vec![
            Asm::Push(Gpr::Rbp),
            Asm::Mov(Gpr::Rbp, Src::Reg(Gpr::Rsp)),
            Asm::Alu(AluOp::Sub, Gpr::Rsp, Src::Imm(self.frame)),
        ];
        prologue.extend(self.saved.iter().map(|g| Asm::Push(*g)));
        prologue.push(Asm::Jmp(JumpTarget::Label(BlockId(1))));
        self.put(BlockId(0), Role::NonVm, prologue);

        let mut start = vec![
            Asm::Lea(r.vregs, Mem::disp(Gpr::Rbp, -self.frame)),
            Asm::Mov(r.vmem, Src::Imm(VMEM_BASE)),
            Asm::Mov(r.bytecode, Src::Imm(BYTECODE_BASE)),
        ];
        match self.kind {
            DispatchKind::Switch => start.push(Asm::Mov(r.table, Src::Imm(SWITCH_TABLE_BASE))),
            DispatchKind::Indirect => start.push(Asm::Mov(r.table, Src::Imm(HANDLER_TABLE_BASE))),
            DispatchKind::Direct => {}
        }
        for i in 0..NUM_REGS as i64 {
            let slot = Mem::disp(r.vregs, 8 * i);
            if (i as usize) < self.program.inputs {
                start.push(Asm::Load(r.t0, Mem::disp(Gpr::Rbp, 16 + 8 * i)));
                start.push(Asm::Store(slot, Src::Reg(r.t0)));
            } else {
                start.push(Asm::Store(slot, Src::Imm(0)));
            }
        }
        start.push(Asm::Mov(r.vpc, Src::Reg(r.bytecode)));
        if self.bytecode.vpc0 != 0 {
            start.push(Asm::Alu(AluOp::Add, r.vpc, Src::Imm(self.bytecode.vpc0 as i64 * self.enc.stride)));
        }
        start.push(self.back_to_dispatch());
        self.put(BlockId(1), Role::VmStart, start);

        let k = self.bytecode.handler_count as i64;
        let dispatch = match self.kind {
            DispatchKind::Switch => vec![
                Asm::Load(r.t0, Mem::disp(r.vpc, self.enc.opcode)),
                Asm::Cmp(r.t0, Src::Imm(k)),
                Asm::Jcc(Cond::Ae, self.vm_end),
                Asm::Jmp(JumpTarget::Mem(Mem::indexed(r.table, r.t0, 8, 0))),
            ],
            DispatchKind::Indirect => vec![
                Asm::Load(r.t0, Mem::disp(r.vpc, self.enc.opcode)),
                Asm::Cmp(r.t0, Src::Imm(k)),
                Asm::Jcc(Cond::Ae, self.vm_end),
                Asm::Load(r.t1, Mem::indexed(r.table, r.t0, 8, 0)),
                Asm::Jmp(JumpTarget::Reg(r.t1)),
            ],
            DispatchKind::Direct => vec![
                Asm::Load(r.t0, Mem::disp(r.vpc, self.enc.handler.expect("direct encoding has a handler slot"))),
                Asm::Jmp(JumpTarget::Reg(r.t0)),
            ],
        };
        let mut succs = self.heads.clone();
        succs.push(self.vm_end);
        self.blocks[self.dispatcher.index()] =
            Some(Pending { role: Role::DispatchStart, code: dispatch, succs: Some(succs) });

        for (opcode, class) in self.bytecode.classes.clone().into_iter().enumerate() {
            self.handler(opcode, class);
        }

        let end = vec![
            Asm::Load(Gpr::Rax, Mem::base(r.vregs)),
            Asm::Lea(Gpr::Rsp, Mem::disp(Gpr::Rbp, -(self.frame + saved_bytes))),
            Asm::Jmp(JumpTarget::Label(self.epilogue)),
        ];
        self.put(self.vm_end, Role::VmEnd, end);

        let mut epilogue: Vec<Asm> = self.saved.iter().rev().map(|g| Asm::Pop(*g)).collect();
        epilogue.extend([Asm::Mov(Gpr::Rsp, Src::Reg(Gpr::Rbp)), Asm::Pop(Gpr::Rbp), Asm::Ret]);
        self.put(self.epilogue, Role::NonVm, epilogue);

        self.finish()
    }

    fn handler(&mut self, opcode: usize, class: VopClass) {
        let r = self.regs;
        let head = self.heads[opcode];
        let interior = self.interiors[opcode].clone();
        let binary_operands = |g: &Self| {
            vec![
                Asm::Load(r.t1, g.operand(1)),
                Asm::Load(r.t1, g.vreg_slot(r.t1)),
                Asm::Load(r.t2, g.operand(2)),
                Asm::Load(r.t2, g.vreg_slot(r.t2)),
            ]
        };
        let tail = |g: &Self| vec![g.advance(), g.back_to_dispatch()];

        let code = match class {
            VopClass::Exit => tail(self),
            VopClass::Source(op) => match op {
                Opcode::Const => {
                    let mut c = vec![
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Load(r.t1, self.operand(1)),
                        Asm::Store(self.vreg_slot(r.t0), Src::Reg(r.t1)),
                    ];
                    c.extend(tail(self));
                    c
                }
                Opcode::Mov => {
                    let mut c = vec![
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Load(r.t1, self.operand(1)),
                        Asm::Load(r.t1, self.vreg_slot(r.t1)),
                        Asm::Store(self.vreg_slot(r.t0), Src::Reg(r.t1)),
                    ];
                    c.extend(tail(self));
                    c
                }
                Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::Mod => {
                    let alu = match op {
                        Opcode::Add => AluOp::Add,
                        Opcode::Sub => AluOp::Sub,
                        Opcode::Mul => AluOp::Mul,
                        Opcode::Div => AluOp::Div,
                        _ => AluOp::Rem,
                    };
                    let mut c = binary_operands(self);
                    c.extend([
                        Asm::Alu(alu, r.t1, Src::Reg(r.t2)),
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Store(self.vreg_slot(r.t0), Src::Reg(r.t1)),
                    ]);
                    c.extend(tail(self));
                    c
                }
                Opcode::Lt | Opcode::Eq => {
                    let cond = if op == Opcode::Lt { Cond::L } else { Cond::E };
                    let (yes, no) = (interior[0], interior[1]);
                    let mut c = binary_operands(self);
                    c.extend([
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Cmp(r.t1, Src::Reg(r.t2)),
                        Asm::Jcc(cond, yes),
                        Asm::Jmp(JumpTarget::Label(no)),
                    ]);
                    for (block, value) in [(yes, 1), (no, 0)] {
                        let mut body = vec![Asm::Store(self.vreg_slot(r.t0), Src::Imm(value))];
                        body.extend(tail(self));
                        self.put(block, Role::Vm, body);
                    }
                    c
                }
                Opcode::Load => {
                    let mut c = vec![
                        Asm::Load(r.t1, self.operand(1)),
                        Asm::Load(r.t1, self.vreg_slot(r.t1)),
                        Asm::Load(r.t2, self.operand(2)),
                        Asm::Alu(AluOp::Add, r.t1, Src::Reg(r.t2)),
                        Asm::Bound(r.t1, crate::ir::MEM_CELLS as i64),
                        Asm::Load(r.t1, Mem::indexed(r.vmem, r.t1, 8, 0)),
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Store(self.vreg_slot(r.t0), Src::Reg(r.t1)),
                    ];
                    c.extend(tail(self));
                    c
                }
                Opcode::Store => {
                    let mut c = vec![
                        Asm::Load(r.t1, self.operand(0)),
                        Asm::Load(r.t1, self.vreg_slot(r.t1)),
                        Asm::Load(r.t2, self.operand(1)),
                        Asm::Alu(AluOp::Add, r.t1, Src::Reg(r.t2)),
                        Asm::Bound(r.t1, crate::ir::MEM_CELLS as i64),
                        Asm::Load(r.t2, self.operand(2)),
                        Asm::Load(r.t2, self.vreg_slot(r.t2)),
                        Asm::Store(Mem::indexed(r.vmem, r.t1, 8, 0), Src::Reg(r.t2)),
                    ];
                    c.extend(tail(self));
                    c
                }
                Opcode::Jmp => self.branch_to_operand(0),
                Opcode::Jz => {
                    let (taken, fall) = (interior[0], interior[1]);
                    let taken_code = self.branch_to_operand(1);
                    self.put(taken, Role::Vm, taken_code);
                    let fall_code = tail(self);
                    self.put(fall, Role::Vm, fall_code);
                    vec![
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Load(r.t0, self.vreg_slot(r.t0)),
                        Asm::Cmp(r.t0, Src::Imm(0)),
                        Asm::Jcc(Cond::E, taken),
                        Asm::Jmp(JumpTarget::Label(fall)),
                    ]
                }
                Opcode::Out => {
                    let mut c = vec![
                        Asm::Load(r.t0, self.operand(0)),
                        Asm::Load(Gpr::Rdi, self.vreg_slot(r.t0)),
                        Asm::Call(OUTPUT_SYMBOL.into()),
                    ];
                    c.extend(tail(self));
                    c
                }
                Opcode::Ret => {
                    let exit = self.bytecode.exit_index() as i64 * self.enc.stride;
                    vec![
                        Asm::Mov(r.vpc, Src::Reg(r.bytecode)),
                        Asm::Alu(AluOp::Add, r.vpc, Src::Imm(exit)),
                        self.back_to_dispatch(),
                    ]
                }
            },
        };
        self.put(head, Role::Handler, code);
    }

    fn finish(self) -> VmArtifact {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut truth = Truth::new();
        for (pos, pending) in self.blocks.into_iter().enumerate() {
            let p = pending.unwrap_or_else(|| panic!("block {pos} was never generated"));
            let id = BlockId(pos as u32);
            let succs = p.succs.unwrap_or_else(|| p.code.iter().filter_map(Asm::label_targets).collect());
            let instrs: Vec<String> = p.code.iter().map(ToString::to_string).collect();
            truth.insert(id, vec![RoleSpan::new(0, instrs.len(), p.role)]);
            blocks.push(BasicBlock::new(id, instrs, succs));
        }
        let cfg = Cfg::new(self.program.name.clone(), blocks).expect("generated cfg is well formed");
        VmArtifact {
            program: self.program.name.clone(),
            cfg,
            kind: self.kind,
            opt_level: 0,
            truth,
            bytecode: self.bytecode,
            layout: VmLayout {
                dispatcher: self.dispatcher,
                handlers: self.heads,
                vm_end: self.vm_end,
                regs: self.regs,
                encoding: self.enc,
                frame: self.frame,
            },
            seed: self.seed,
            inputs: self.program.inputs,
        }
    }
}
