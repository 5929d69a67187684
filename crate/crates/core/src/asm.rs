//! Typed form of the pseudo-assembly emitted into CFG blocks.
//!
//! Blocks store instructions as text; this module renders and parses that
//! text so passes can rewrite branch targets and the executor can run it.
//! Addresses are byte addresses of 64-bit words.

use std::fmt;
use std::str::FromStr;

use crate::cfg::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gpr {
    Rax,
    Rbx,
    Rcx,
    Rdx,
    Rsi,
    Rdi,
    Rbp,
    Rsp,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
    R15,
}

impl Gpr {
    pub const ALL: [Gpr; 16] = [
        Gpr::Rax,
        Gpr::Rbx,
        Gpr::Rcx,
        Gpr::Rdx,
        Gpr::Rsi,
        Gpr::Rdi,
        Gpr::Rbp,
        Gpr::Rsp,
        Gpr::R8,
        Gpr::R9,
        Gpr::R10,
        Gpr::R11,
        Gpr::R12,
        Gpr::R13,
        Gpr::R14,
        Gpr::R15,
    ];

    pub fn name(self) -> &'static str {
        ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15"]
            [self as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Registers a callee must preserve.
    pub fn callee_saved(self) -> bool {
        matches!(self, Gpr::Rbx | Gpr::R12 | Gpr::R13 | Gpr::R14 | Gpr::R15)
    }
}

impl fmt::Display for Gpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gpr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Gpr::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| format!("unknown register `{s}`"))
    }
}

/// `[base + index*scale + disp]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mem {
    pub base: Gpr,
    pub index: Option<(Gpr, u8)>,
    pub disp: i64,
}

impl Mem {
    pub fn base(base: Gpr) -> Self {
        Self { base, index: None, disp: 0 }
    }

    pub fn disp(base: Gpr, disp: i64) -> Self {
        Self { base, index: None, disp }
    }

    pub fn indexed(base: Gpr, index: Gpr, scale: u8, disp: i64) -> Self {
        Self { base, index: Some((index, scale)), disp }
    }
}

impl fmt::Display for Mem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.base)?;
        if let Some((idx, scale)) = self.index {
            write!(f, "+{idx}*{scale}")?;
        }
        match self.disp {
            0 => {}
            d if d > 0 => write!(f, "+{d}")?,
            d => write!(f, "{d}")?,
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Gpr),
    Imm(i64),
    Mem(Mem),
    Label(BlockId),
    Sym(String),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
            Operand::Mem(m) => write!(f, "{m}"),
            Operand::Label(b) => write!(f, "bb{b}"),
            Operand::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl AluOp {
    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Mul => "mul",
            AluOp::Div => "div",
            AluOp::Rem => "rem",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    E,
    Ne,
    L,
    Ge,
    /// Unsigned above-or-equal.
    Ae,
}

impl Cond {
    fn mnemonic(self) -> &'static str {
        match self {
            Cond::E => "je",
            Cond::Ne => "jne",
            Cond::L => "jl",
            Cond::Ge => "jge",
            Cond::Ae => "jae",
        }
    }

    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cond::E => lhs == rhs,
            Cond::Ne => lhs != rhs,
            Cond::L => lhs < rhs,
            Cond::Ge => lhs >= rhs,
            Cond::Ae => (lhs as u64) >= (rhs as u64),
        }
    }
}

/// Source operand of moves, arithmetic, and comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Src {
    Reg(Gpr),
    Imm(i64),
}

impl fmt::Display for Src {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Src::Reg(r) => write!(f, "{r}"),
            Src::Imm(v) => write!(f, "{v}"),
        }
    }
}

impl From<Gpr> for Src {
    fn from(r: Gpr) -> Self {
        Src::Reg(r)
    }
}

impl From<i64> for Src {
    fn from(v: i64) -> Self {
        Src::Imm(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpTarget {
    Label(BlockId),
    Reg(Gpr),
    Mem(Mem),
}

impl fmt::Display for JumpTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpTarget::Label(b) => write!(f, "bb{b}"),
            JumpTarget::Reg(r) => write!(f, "{r}"),
            JumpTarget::Mem(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Asm {
    Mov(Gpr, Src),
    Lea(Gpr, Mem),
    Load(Gpr, Mem),
    Store(Mem, Src),
    Alu(AluOp, Gpr, Src),
    Cmp(Gpr, Src),
    Jcc(Cond, BlockId),
    Jmp(JumpTarget),
    /// Traps unless `0 <= reg < limit`.
    Bound(Gpr, i64),
    Call(String),
    Push(Gpr),
    Pop(Gpr),
    Ret,
    Nop,
}

impl Asm {
    /// Static successor labels named by this instruction.
    pub fn label_targets(&self) -> Option<BlockId> {
        match self {
            Asm::Jcc(_, b) | Asm::Jmp(JumpTarget::Label(b)) => Some(*b),
            _ => None,
        }
    }

    /// Rewrites every block label through `map`.
    pub fn map_labels(&mut self, map: impl Fn(BlockId) -> BlockId) {
        match self {
            Asm::Jcc(_, b) | Asm::Jmp(JumpTarget::Label(b)) => *b = map(*b),
            _ => {}
        }
    }
}

impl fmt::Display for Asm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Asm::Mov(d, s) => write!(f, "mov {d}, {s}"),
            Asm::Lea(d, m) => write!(f, "lea {d}, {m}"),
            Asm::Load(d, m) => write!(f, "load {d}, {m}"),
            Asm::Store(m, s) => write!(f, "store {m}, {s}"),
            Asm::Alu(op, d, s) => write!(f, "{} {d}, {s}", op.mnemonic()),
            Asm::Cmp(a, b) => write!(f, "cmp {a}, {b}"),
            Asm::Jcc(c, b) => write!(f, "{} bb{b}", c.mnemonic()),
            Asm::Jmp(t) => write!(f, "jmp {t}"),
            Asm::Bound(r, n) => write!(f, "bound {r}, {n}"),
            Asm::Call(s) => write!(f, "call {s}"),
            Asm::Push(r) => write!(f, "push {r}"),
            Asm::Pop(r) => write!(f, "pop {r}"),
            Asm::Ret => f.write_str("ret"),
            Asm::Nop => f.write_str("nop"),
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = match body.strip_prefix("0x") {
        Some(hex) => i64::from_str_radix(hex, 16).ok()?,
        None if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) => body.parse().ok()?,
        None => return None,
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn parse_label(s: &str) -> Option<BlockId> {
    s.strip_prefix("bb")?.parse().ok().map(BlockId)
}

fn parse_mem(s: &str) -> Result<Mem, String> {
    let inner =
        s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(|| format!("bad memory operand `{s}`"))?;
    // split into signed terms
    let mut terms: Vec<(bool, &str)> = Vec::new();
    let mut start = 0;
    let mut neg = false;
    for (i, c) in inner.char_indices() {
        if (c == '+' || c == '-') && i > 0 {
            terms.push((neg, &inner[start..i]));
            neg = c == '-';
            start = i + 1;
        }
    }
    terms.push((neg, &inner[start..]));

    let mut base = None;
    let mut index = None;
    let mut disp = 0i64;
    for (neg, term) in terms {
        if let Some((r, scale)) = term.split_once('*') {
            let r: Gpr = r.parse()?;
            let scale: u8 = scale.parse().map_err(|_| format!("bad scale in `{s}`"))?;
            if neg || index.replace((r, scale)).is_some() {
                return Err(format!("bad index term in `{s}`"));
            }
        } else if let Ok(r) = term.parse::<Gpr>() {
            if neg || base.replace(r).is_some() {
                return Err(format!("bad base term in `{s}`"));
            }
        } else {
            let v = parse_int(term).ok_or_else(|| format!("bad displacement in `{s}`"))?;
            disp = disp.wrapping_add(if neg { v.wrapping_neg() } else { v });
        }
    }
    let base = base.ok_or_else(|| format!("memory operand `{s}` lacks a base register"))?;
    Ok(Mem { base, index, disp })
}

/// Parses one operand. Symbols are identifiers such as `__vm_out`.
pub fn parse_operand(s: &str) -> Result<Operand, String> {
    if s.starts_with('[') {
        return parse_mem(s).map(Operand::Mem);
    }
    if let Ok(r) = s.parse::<Gpr>() {
        return Ok(Operand::Reg(r));
    }
    if let Some(v) = parse_int(s) {
        return Ok(Operand::Imm(v));
    }
    if let Some(b) = parse_label(s) {
        return Ok(Operand::Label(b));
    }
    let ok_start = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    if ok_start && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
        return Ok(Operand::Sym(s.to_string()));
    }
    Err(format!("bad operand `{s}`"))
}

/// Splits `mnemonic op1, op2` into mnemonic and operand strings.
pub fn split_instr(text: &str) -> (&str, Vec<&str>) {
    let text = text.trim();
    match text.split_once(char::is_whitespace) {
        None => (text, Vec::new()),
        Some((m, rest)) => (m, rest.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()),
    }
}

impl FromStr for Asm {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (mnemonic, raw) = split_instr(text);
        let ops = raw.iter().map(|o| parse_operand(o)).collect::<Result<Vec<_>, _>>()?;
        let bad = || format!("bad operands for `{text}`");
        let reg = |o: &Operand| match o {
            Operand::Reg(r) => Ok(*r),
            _ => Err(bad()),
        };
        let src = |o: &Operand| match o {
            Operand::Reg(r) => Ok(Src::Reg(*r)),
            Operand::Imm(v) => Ok(Src::Imm(*v)),
            _ => Err(bad()),
        };
        let mem = |o: &Operand| match o {
            Operand::Mem(m) => Ok(*m),
            _ => Err(bad()),
        };
        let alu = |op: AluOp| match ops.as_slice() {
            [d, s] => Ok(Asm::Alu(op, reg(d)?, src(s)?)),
            _ => Err(bad()),
        };
        let jcc = |c: Cond| match ops.as_slice() {
            [Operand::Label(b)] => Ok(Asm::Jcc(c, *b)),
            _ => Err(bad()),
        };
        match mnemonic {
            "mov" => match ops.as_slice() {
                [d, s] => Ok(Asm::Mov(reg(d)?, src(s)?)),
                _ => Err(bad()),
            },
            "lea" => match ops.as_slice() {
                [d, m] => Ok(Asm::Lea(reg(d)?, mem(m)?)),
                _ => Err(bad()),
            },
            "load" => match ops.as_slice() {
                [d, m] => Ok(Asm::Load(reg(d)?, mem(m)?)),
                _ => Err(bad()),
            },
            "store" => match ops.as_slice() {
                [m, s] => Ok(Asm::Store(mem(m)?, src(s)?)),
                _ => Err(bad()),
            },
            "add" => alu(AluOp::Add),
            "sub" => alu(AluOp::Sub),
            "mul" => alu(AluOp::Mul),
            "div" => alu(AluOp::Div),
            "rem" => alu(AluOp::Rem),
            "cmp" => match ops.as_slice() {
                [a, b] => Ok(Asm::Cmp(reg(a)?, src(b)?)),
                _ => Err(bad()),
            },
            "je" => jcc(Cond::E),
            "jne" => jcc(Cond::Ne),
            "jl" => jcc(Cond::L),
            "jge" => jcc(Cond::Ge),
            "jae" => jcc(Cond::Ae),
            "jmp" => match ops.as_slice() {
                [Operand::Label(b)] => Ok(Asm::Jmp(JumpTarget::Label(*b))),
                [Operand::Reg(r)] => Ok(Asm::Jmp(JumpTarget::Reg(*r))),
                [Operand::Mem(m)] => Ok(Asm::Jmp(JumpTarget::Mem(*m))),
                _ => Err(bad()),
            },
            "bound" => match ops.as_slice() {
                [r, Operand::Imm(n)] => Ok(Asm::Bound(reg(r)?, *n)),
                _ => Err(bad()),
            },
            "call" => match ops.as_slice() {
                [Operand::Sym(s)] => Ok(Asm::Call(s.clone())),
                _ => Err(bad()),
            },
            "push" => match ops.as_slice() {
                [r] => Ok(Asm::Push(reg(r)?)),
                _ => Err(bad()),
            },
            "pop" => match ops.as_slice() {
                [r] => Ok(Asm::Pop(reg(r)?)),
                _ => Err(bad()),
            },
            "ret" if ops.is_empty() => Ok(Asm::Ret),
            "nop" if ops.is_empty() => Ok(Asm::Nop),
            _ => Err(format!("unknown instruction `{text}`")),
        }
    }
}
