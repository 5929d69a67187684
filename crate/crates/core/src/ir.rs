//! A small register IR: sixteen 64-bit registers, a 256-cell memory, and
//! fifteen opcodes. Its evaluator is the semantic oracle for everything the
//! virtualizer produces.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const NUM_REGS: usize = 16;
pub const MEM_CELLS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("step budget exhausted")]
    Timeout,
    #[error("division by zero")]
    TrapDivZero,
    #[error("memory access out of bounds")]
    TrapBounds,
    #[error("expected {expected} inputs, got {got}")]
    InputArity { expected: usize, got: usize },
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Raised only by the native executor when generated code is malformed.
    #[error("execution fault: {0}")]
    Fault(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u8);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Const,
    Mov,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Eq,
    Load,
    Store,
    Jmp,
    Jz,
    Out,
    Ret,
}

impl Opcode {
    pub const ALL: [Opcode; 15] = [
        Opcode::Const,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Mod,
        Opcode::Lt,
        Opcode::Eq,
        Opcode::Load,
        Opcode::Store,
        Opcode::Jmp,
        Opcode::Jz,
        Opcode::Out,
        Opcode::Ret,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Const => "CONST",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::Mod => "MOD",
            Opcode::Lt => "LT",
            Opcode::Eq => "EQ",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Jmp => "JMP",
            Opcode::Jz => "JZ",
            Opcode::Out => "OUT",
            Opcode::Ret => "RET",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Eq,
}

impl BinOp {
    pub fn opcode(self) -> Opcode {
        match self {
            BinOp::Add => Opcode::Add,
            BinOp::Sub => Opcode::Sub,
            BinOp::Mul => Opcode::Mul,
            BinOp::Div => Opcode::Div,
            BinOp::Mod => Opcode::Mod,
            BinOp::Lt => Opcode::Lt,
            BinOp::Eq => Opcode::Eq,
        }
    }

    /// Wrapping 64-bit semantics shared by the evaluator and the executor.
    pub fn apply(self, a: i64, b: i64) -> Result<i64, IrError> {
        Ok(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div if b == 0 => return Err(IrError::TrapDivZero),
            BinOp::Div => a.wrapping_div(b),
            BinOp::Mod if b == 0 => return Err(IrError::TrapDivZero),
            BinOp::Mod => a.wrapping_rem(b),
            BinOp::Lt => (a < b) as i64,
            BinOp::Eq => (a == b) as i64,
        })
    }
}

/// One IR instruction. Memory operands address `mem[base + regs[index]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Const { dst: Reg, imm: i64 },
    Mov { dst: Reg, src: Reg },
    Bin { op: BinOp, dst: Reg, lhs: Reg, rhs: Reg },
    Load { dst: Reg, index: Reg, base: u8 },
    Store { index: Reg, base: u8, src: Reg },
    Jmp { target: usize },
    Jz { cond: Reg, target: usize },
    Out { src: Reg },
    Ret,
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::Const { .. } => Opcode::Const,
            Instr::Mov { .. } => Opcode::Mov,
            Instr::Bin { op, .. } => op.opcode(),
            Instr::Load { .. } => Opcode::Load,
            Instr::Store { .. } => Opcode::Store,
            Instr::Jmp { .. } => Opcode::Jmp,
            Instr::Jz { .. } => Opcode::Jz,
            Instr::Out { .. } => Opcode::Out,
            Instr::Ret => Opcode::Ret,
        }
    }

    pub fn jump_target(&self) -> Option<usize> {
        match self {
            Instr::Jmp { target } | Instr::Jz { target, .. } => Some(*target),
            _ => None,
        }
    }

    fn regs(&self) -> Vec<Reg> {
        match *self {
            Instr::Const { dst, .. } => vec![dst],
            Instr::Mov { dst, src } => vec![dst, src],
            Instr::Bin { dst, lhs, rhs, .. } => vec![dst, lhs, rhs],
            Instr::Load { dst, index, .. } => vec![dst, index],
            Instr::Store { index, src, .. } => vec![index, src],
            Instr::Jz { cond, .. } => vec![cond],
            Instr::Out { src } => vec![src],
            Instr::Jmp { .. } | Instr::Ret => vec![],
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instr::Const { dst, imm } => write!(f, "CONST {dst} {imm}"),
            Instr::Mov { dst, src } => write!(f, "MOV {dst} {src}"),
            Instr::Bin { op, dst, lhs, rhs } => write!(f, "{} {dst} {lhs} {rhs}", op.opcode()),
            Instr::Load { dst, index, base } => write!(f, "LOAD {dst} {index} {base}"),
            Instr::Store { index, base, src } => write!(f, "STORE {index} {base} {src}"),
            Instr::Jmp { target } => write!(f, "JMP {target}"),
            Instr::Jz { cond, target } => write!(f, "JZ {cond} {target}"),
            Instr::Out { src } => write!(f, "OUT {src}"),
            Instr::Ret => write!(f, "RET"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceProgram {
    pub name: String,
    pub instrs: Vec<Instr>,
    /// Registers `r0..r{inputs}` are preloaded with the inputs.
    pub inputs: usize,
}

impl SourceProgram {
    pub fn new(name: impl Into<String>, instrs: Vec<Instr>, inputs: usize) -> Result<Self, IrError> {
        let p = Self { name: name.into(), instrs, inputs };
        p.validate()?;
        Ok(p)
    }

    /// Checks operand ranges, jump targets, and that control cannot fall off the end.
    pub fn validate(&self) -> Result<(), IrError> {
        let n = self.instrs.len();
        if self.inputs > NUM_REGS {
            return Err(IrError::Invalid(format!("{} inputs exceed {NUM_REGS} registers", self.inputs)));
        }
        match self.instrs.last() {
            Some(Instr::Ret | Instr::Jmp { .. }) => {}
            Some(_) => return Err(IrError::Invalid("last instruction must be RET or JMP".into())),
            None => return Err(IrError::Invalid("empty program".into())),
        }
        if !self.instrs.contains(&Instr::Ret) {
            return Err(IrError::Invalid("program has no RET".into()));
        }
        for (pc, ins) in self.instrs.iter().enumerate() {
            if let Some(t) = ins.jump_target() {
                if t >= n {
                    return Err(IrError::Invalid(format!("instruction {pc}: jump target {t} out of range")));
                }
            }
            if let Some(r) = ins.regs().into_iter().find(|r| r.0 as usize >= NUM_REGS) {
                return Err(IrError::Invalid(format!("instruction {pc}: register {r} out of range")));
            }
        }
        Ok(())
    }

    /// Distinct opcodes used, in opcode declaration order.
    pub fn opcodes(&self) -> BTreeSet<Opcode> {
        self.instrs.iter().map(Instr::opcode).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(".name {}\n.inputs {}\n", self.name, self.inputs);
        for ins in &self.instrs {
            out.push_str(&ins.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses the textual program format. `default_name` is used when the
    /// text carries no `.name` directive.
    pub fn parse(text: &str, default_name: &str) -> Result<Self, IrError> {
        let mut name = default_name.to_string();
        let mut inputs = 0;
        let mut instrs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let code = raw.split('#').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            let toks: Vec<&str> = code.split_whitespace().collect();
            let err = |message: String| IrError::Parse { line, message };
            match toks[0] {
                ".name" => {
                    name = toks.get(1).ok_or_else(|| err(".name needs a value".into()))?.to_string();
                }
                ".inputs" => {
                    inputs =
                        toks.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| err(".inputs needs a count".into()))?;
                }
                _ => instrs.push(parse_instr(&toks).map_err(err)?),
            }
        }
        Self::new(name, instrs, inputs)
    }
}

impl FromStr for Instr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_instr(&s.split_whitespace().collect::<Vec<_>>())
    }
}

fn parse_instr(toks: &[&str]) -> Result<Instr, String> {
    let reg = |i: usize| -> Result<Reg, String> {
        let t = toks.get(i).ok_or_else(|| format!("missing operand {i}"))?;
        let n: u8 = t.strip_prefix('r').and_then(|d| d.parse().ok()).ok_or_else(|| format!("bad register `{t}`"))?;
        if n as usize >= NUM_REGS {
            return Err(format!("register `{t}` out of range"));
        }
        Ok(Reg(n))
    };
    let num = |i: usize| -> Result<i64, String> {
        let t = toks.get(i).ok_or_else(|| format!("missing operand {i}"))?;
        t.parse().map_err(|_| format!("bad integer `{t}`"))
    };
    let target = |i: usize| -> Result<usize, String> {
        let v = num(i)?;
        usize::try_from(v).map_err(|_| format!("bad jump target {v}"))
    };
    let base = |i: usize| -> Result<u8, String> {
        let v = num(i)?;
        u8::try_from(v).map_err(|_| format!("memory index {v} out of range"))
    };
    let opcode = Opcode::ALL
        .into_iter()
        .find(|o| o.mnemonic().eq_ignore_ascii_case(toks[0]))
        .ok_or_else(|| format!("unknown opcode `{}`", toks[0]))?;
    let arity = match opcode {
        Opcode::Ret => 0,
        Opcode::Jmp | Opcode::Out => 1,
        Opcode::Const | Opcode::Mov | Opcode::Jz => 2,
        _ => 3,
    };
    if toks.len() != arity + 1 {
        return Err(format!("{opcode} takes {arity} operands"));
    }
    let bin = |op: BinOp| -> Result<Instr, String> { Ok(Instr::Bin { op, dst: reg(1)?, lhs: reg(2)?, rhs: reg(3)? }) };
    match opcode {
        Opcode::Const => Ok(Instr::Const { dst: reg(1)?, imm: num(2)? }),
        Opcode::Mov => Ok(Instr::Mov { dst: reg(1)?, src: reg(2)? }),
        Opcode::Add => bin(BinOp::Add),
        Opcode::Sub => bin(BinOp::Sub),
        Opcode::Mul => bin(BinOp::Mul),
        Opcode::Div => bin(BinOp::Div),
        Opcode::Mod => bin(BinOp::Mod),
        Opcode::Lt => bin(BinOp::Lt),
        Opcode::Eq => bin(BinOp::Eq),
        Opcode::Load => Ok(Instr::Load { dst: reg(1)?, index: reg(2)?, base: base(3)? }),
        Opcode::Store => Ok(Instr::Store { index: reg(1)?, base: base(2)?, src: reg(3)? }),
        Opcode::Jmp => Ok(Instr::Jmp { target: target(1)? }),
        Opcode::Jz => Ok(Instr::Jz { cond: reg(1)?, target: target(2)? }),
        Opcode::Out => Ok(Instr::Out { src: reg(1)? }),
        Opcode::Ret => Ok(Instr::Ret),
    }
}

/// Effective address of a memory operand, trapping outside the 256-cell array.
pub fn effective_address(base: i64, index: i64) -> Result<usize, IrError> {
    let addr = base.wrapping_add(index);
    if (0..MEM_CELLS as i64).contains(&addr) {
        Ok(addr as usize)
    } else {
        Err(IrError::TrapBounds)
    }
}

/// Runs `program` and returns its OUT values. Each executed instruction
/// costs one step; running past `step_budget` steps is a timeout.
pub fn eval(program: &SourceProgram, inputs: &[i64], step_budget: u64) -> Result<Vec<i64>, IrError> {
    if inputs.len() != program.inputs {
        return Err(IrError::InputArity { expected: program.inputs, got: inputs.len() });
    }
    let mut regs = [0i64; NUM_REGS];
    regs[..inputs.len()].copy_from_slice(inputs);
    let mut mem = [0i64; MEM_CELLS];
    let mut out = Vec::new();
    let mut pc = 0usize;
    let mut steps = 0u64;
    loop {
        if steps >= step_budget {
            return Err(IrError::Timeout);
        }
        steps += 1;
        let ins = program.instrs.get(pc).ok_or_else(|| IrError::Invalid(format!("pc {pc} out of range")))?;
        pc += 1;
        match *ins {
            Instr::Const { dst, imm } => regs[dst.0 as usize] = imm,
            Instr::Mov { dst, src } => regs[dst.0 as usize] = regs[src.0 as usize],
            Instr::Bin { op, dst, lhs, rhs } => {
                regs[dst.0 as usize] = op.apply(regs[lhs.0 as usize], regs[rhs.0 as usize])?
            }
            Instr::Load { dst, index, base } => {
                regs[dst.0 as usize] = mem[effective_address(base as i64, regs[index.0 as usize])?]
            }
            Instr::Store { index, base, src } => {
                mem[effective_address(base as i64, regs[index.0 as usize])?] = regs[src.0 as usize]
            }
            Instr::Jmp { target } => pc = target,
            Instr::Jz { cond, target } => {
                if regs[cond.0 as usize] == 0 {
                    pc = target
                }
            }
            Instr::Out { src } => out.push(regs[src.0 as usize]),
            Instr::Ret => return Ok(out),
        }
    }
}
