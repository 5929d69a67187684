use std::fmt;

use crate::ir::{Instr, Opcode, SourceProgram};

/// What a virtual opcode does: mirror one source opcode, or leave the VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VopClass {
    Source(Opcode),
    Exit,
}

impl fmt::Display for VopClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VopClass::Source(op) => write!(f, "V{op}"),
            VopClass::Exit => f.write_str("VEXIT"),
        }
    }
}

/// One virtual instruction: opcode number plus up to three operand words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vop {
    pub opcode: u8,
    pub operands: [i64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BytecodeProgram {
    /// Source instructions in order (vop `i` is source instruction `i`),
    /// followed by one trailing VEXIT vop.
    pub vops: Vec<Vop>,
    pub vpc0: usize,
    /// Number of distinct virtual opcodes, VEXIT included.
    pub handler_count: usize,
    /// `classes[opcode]` describes virtual opcode `opcode`.
    pub classes: Vec<VopClass>,
}

impl BytecodeProgram {
    /// Index of the trailing VEXIT vop; also the number of source vops.
    pub fn exit_index(&self) -> usize {
        self.vops.len() - 1
    }

    pub fn class_of(&self, vop: &Vop) -> VopClass {
        self.classes[vop.opcode as usize]
    }

    pub fn opcode_of(&self, class: VopClass) -> Option<u8> {
        self.classes.iter().position(|c| *c == class).map(|p| p as u8)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.exit_index();
        if self.handler_count != self.classes.len() {
            return Err("handler_count disagrees with the class table".into());
        }
        for (i, v) in self.vops.iter().enumerate() {
            if v.opcode as usize >= self.handler_count {
                return Err(format!("vop {i}: opcode {} out of range", v.opcode));
            }
            let target = match self.class_of(v) {
                VopClass::Source(Opcode::Jmp) => Some(v.operands[0]),
                VopClass::Source(Opcode::Jz) => Some(v.operands[1]),
                _ => None,
            };
            if let Some(t) = target {
                if !(0..n as i64).contains(&t) {
                    return Err(format!("vop {i}: target {t} out of range"));
                }
            }
        }
        match self.vops.last() {
            Some(v) if self.class_of(v) == VopClass::Exit => Ok(()),
            _ => Err("bytecode must end with VEXIT".into()),
        }
    }
}

/// Translates a program into bytecode.
///
/// Virtual opcodes are numbered by source opcode declaration order over the
/// opcodes the program uses, and VEXIT takes the last number. Source `RET`
/// becomes a VRET vop whose handler transfers to the trailing VEXIT vop.
pub fn compile_bytecode(program: &SourceProgram) -> BytecodeProgram {
    let mut classes: Vec<VopClass> = program.opcodes().into_iter().map(VopClass::Source).collect();
    classes.push(VopClass::Exit);
    let number = |class: VopClass| classes.iter().position(|c| *c == class).expect("class is registered") as u8;

    let mut vops: Vec<Vop> = program
        .instrs
        .iter()
        .map(|ins| {
            let operands = match *ins {
                Instr::Const { dst, imm } => [dst.0 as i64, imm, 0],
                Instr::Mov { dst, src } => [dst.0 as i64, src.0 as i64, 0],
                Instr::Bin { dst, lhs, rhs, .. } => [dst.0 as i64, lhs.0 as i64, rhs.0 as i64],
                Instr::Load { dst, index, base } => [dst.0 as i64, index.0 as i64, base as i64],
                Instr::Store { index, base, src } => [index.0 as i64, base as i64, src.0 as i64],
                Instr::Jmp { target } => [target as i64, 0, 0],
                Instr::Jz { cond, target } => [cond.0 as i64, target as i64, 0],
                Instr::Out { src } => [src.0 as i64, 0, 0],
                Instr::Ret => [0; 3],
            };
            Vop { opcode: number(VopClass::Source(ins.opcode())), operands }
        })
        .collect();
    vops.push(Vop { opcode: number(VopClass::Exit), operands: [0; 3] });

    BytecodeProgram { vops, vpc0: 0, handler_count: classes.len(), classes }
}
