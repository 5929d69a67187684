//! Benchmark programs and the seeded random program generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{BinOp, Instr, Reg, SourceProgram};

/// Input array sorted by the `bubble_sort` benchmark.
pub const BUBBLE_SORT_PRESET: [i64; 8] = [5, 1, 4, 2, 8, 3, 7, 6];

const FACTORIAL: &str = "\
.name factorial
.inputs 1
CONST r1 1        # acc
CONST r2 1
CONST r3 0
LT r4 r3 r0       # while 0 < n
JZ r4 8
MUL r1 r1 r0
SUB r0 r0 r2
JMP 3
OUT r1
RET
";

const FIBONACCI: &str = "\
.name fibonacci
.inputs 1
CONST r1 0        # a
CONST r2 1        # b
CONST r3 0        # i
CONST r5 1
LT r4 r3 r0       # while i < n
JZ r4 11
ADD r6 r1 r2
MOV r1 r2
MOV r2 r6
ADD r3 r3 r5
JMP 4
OUT r1
RET
";

const BUBBLE_SORT: &str = "\
.name bubble_sort
.inputs 8
CONST r8 0
STORE r8 0 r0     # copy inputs to mem[0..8]
STORE r8 1 r1
STORE r8 2 r2
STORE r8 3 r3
STORE r8 4 r4
STORE r8 5 r5
STORE r8 6 r6
STORE r8 7 r7
CONST r9 1
CONST r10 7
CONST r11 0       # i
LT r12 r11 r10    # 12: outer
JZ r12 28
CONST r13 0       # j
SUB r14 r10 r11
LT r12 r13 r14    # 16: inner
JZ r12 26
LOAD r0 r13 0
LOAD r1 r13 1
LT r12 r1 r0
JZ r12 24
STORE r13 0 r1
STORE r13 1 r0
ADD r13 r13 r9    # 24
JMP 16
ADD r11 r11 r9    # 26
JMP 12
CONST r13 0       # 28: emit sorted array
CONST r14 8
LT r12 r13 r14    # 30
JZ r12 36
LOAD r0 r13 0
OUT r0
ADD r13 r13 r9
JMP 30
RET               # 36
";

pub fn factorial() -> SourceProgram {
    SourceProgram::parse(FACTORIAL, "factorial").expect("factorial benchmark is valid")
}

pub fn fibonacci() -> SourceProgram {
    SourceProgram::parse(FIBONACCI, "fibonacci").expect("fibonacci benchmark is valid")
}

pub fn bubble_sort() -> SourceProgram {
    SourceProgram::parse(BUBBLE_SORT, "bubble_sort").expect("bubble_sort benchmark is valid")
}

/// The three benchmarks, in table row order.
pub fn builtin_programs() -> Vec<SourceProgram> {
    vec![bubble_sort(), factorial(), fibonacci()]
}

pub fn builtin(name: &str) -> Option<SourceProgram> {
    builtin_programs().into_iter().find(|p| p.name == name)
}

/// Canonical input suite for a benchmark.
pub fn benchmark_inputs(program: &SourceProgram) -> Vec<Vec<i64>> {
    match program.name.as_str() {
        "factorial" => vec![vec![5], vec![0], vec![1], vec![10]],
        "fibonacci" => vec![vec![10], vec![0], vec![1], vec![20]],
        "bubble_sort" => vec![BUBBLE_SORT_PRESET.to_vec(), vec![3, -1, 3, 0, 9, -7, 2, 2]],
        _ => Vec::new(),
    }
}

pub const MIN_RANDOM_SIZE: usize = 8;
pub const MAX_RANDOM_SIZE: usize = 512;
pub const RANDOM_INPUTS: usize = 2;

// Register conventions of generated programs. Statement bodies only write
// the general registers, so loop counters and constants stay intact.
const GENERAL: u8 = 10;
const ONE: Reg = Reg(11);
const COUNTERS: [Reg; 2] = [Reg(12), Reg(13)];
const ZERO: Reg = Reg(15);
const MAX_LOOP_TRIPS: i64 = 4;

/// Generates a terminating program of exactly `size` instructions with
/// [`RANDOM_INPUTS`] inputs.
///
/// Only forward jumps are emitted, except for the back edge of counted
/// loops. Loops nest at most two deep and run at most four iterations, and
/// every division is guarded by a zero test. At least one conditional
/// branch is always present.
///
/// # Panics
///
/// Panics if `size` is outside `[MIN_RANDOM_SIZE, MAX_RANDOM_SIZE]`.
pub fn random_program(seed: u64, size: usize) -> SourceProgram {
    assert!(
        (MIN_RANDOM_SIZE..=MAX_RANDOM_SIZE).contains(&size),
        "random program size {size} outside [{MIN_RANDOM_SIZE}, {MAX_RANDOM_SIZE}]"
    );
    let mut gen = Generator { rng: ChaCha8Rng::seed_from_u64(seed), code: Vec::with_capacity(size) };
    gen.code.push(Instr::Const { dst: ONE, imm: 1 });
    gen.code.push(Instr::Const { dst: ZERO, imm: 0 });
    let body = size - 4;
    // open with a branch so every program has a VM-interior path
    let first = if body >= 5 && gen.rng.gen_bool(0.5) {
        gen.rng.gen_range(5..=body.min(24))
    } else {
        gen.rng.gen_range(2..=body.min(8))
    };
    if first >= 5 {
        gen.counted_loop(first, 0, &[]);
    } else {
        gen.if_block(first, 0, &[]);
    }
    gen.block(body - first, 0, &[]);
    gen.code.push(Instr::Out { src: Reg(0) });
    gen.code.push(Instr::Ret);
    debug_assert_eq!(gen.code.len(), size);
    SourceProgram::new(format!("rand_{seed}_{size}"), gen.code, RANDOM_INPUTS).expect("generator emits valid programs")
}

struct Generator {
    rng: ChaCha8Rng,
    code: Vec<Instr>,
}

impl Generator {
    fn general(&mut self) -> Reg {
        Reg(self.rng.gen_range(0..GENERAL))
    }

    /// Emits exactly `budget` instructions.
    fn block(&mut self, mut budget: usize, depth: usize, counters: &[Reg]) {
        while budget > 0 {
            let roll = self.rng.gen_range(0..100);
            let used = if roll < 8 && budget >= 5 && depth < COUNTERS.len() {
                let n = self.rng.gen_range(5..=budget.min(20));
                self.counted_loop(n, depth, counters);
                n
            } else if roll < 20 && budget >= 2 {
                let n = self.rng.gen_range(2..=budget.min(8));
                self.if_block(n, depth, counters);
                n
            } else if roll < 28 && budget >= 2 {
                self.guarded_division();
                2
            } else {
                self.simple(counters);
                1
            };
            budget -= used;
        }
    }

    fn simple(&mut self, counters: &[Reg]) {
        let dst = self.general();
        let ins = match self.rng.gen_range(0..12) {
            0 | 1 => Instr::Const { dst, imm: self.rng.gen_range(-50..=50) },
            2 => Instr::Mov { dst, src: self.general() },
            3..=7 => {
                let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Lt, BinOp::Eq]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                Instr::Bin { op, dst, lhs: self.general(), rhs: self.general() }
            }
            8 => Instr::Out { src: self.general() },
            9 => Instr::Store { index: ZERO, base: self.rng.gen(), src: self.general() },
            10 if !counters.is_empty() => {
                let index = *counters.choose(&mut self.rng).expect("non-empty");
                let limit = 255 - MAX_LOOP_TRIPS as u8;
                Instr::Load { dst, index, base: self.rng.gen_range(0..=limit) }
            }
            _ => Instr::Load { dst, index: ZERO, base: self.rng.gen() },
        };
        self.code.push(ins);
    }

    fn guarded_division(&mut self) {
        let divisor = self.general();
        let skip = self.code.len() + 2;
        let op = if self.rng.gen_bool(0.5) { BinOp::Div } else { BinOp::Mod };
        self.code.push(Instr::Jz { cond: divisor, target: skip });
        let (dst, lhs) = (self.general(), self.general());
        self.code.push(Instr::Bin { op, dst, lhs, rhs: divisor });
    }

    /// `JZ cond end; body` in exactly `size` instructions.
    fn if_block(&mut self, size: usize, depth: usize, counters: &[Reg]) {
        let cond = self.general();
        let at = self.code.len();
        self.code.push(Instr::Jz { cond, target: 0 });
        self.block(size - 1, depth, counters);
        let end = self.code.len();
        self.code[at] = Instr::Jz { cond, target: end };
    }

    /// `CONST k trips; head: JZ k end; body; SUB k k 1; JMP head; end:`
    fn counted_loop(&mut self, size: usize, depth: usize, counters: &[Reg]) {
        let counter = COUNTERS[depth];
        let trips = self.rng.gen_range(1..=MAX_LOOP_TRIPS);
        self.code.push(Instr::Const { dst: counter, imm: trips });
        let head = self.code.len();
        self.code.push(Instr::Jz { cond: counter, target: 0 });
        let mut inner = counters.to_vec();
        inner.push(counter);
        self.block(size - 4, depth + 1, &inner);
        self.code.push(Instr::Bin { op: BinOp::Sub, dst: counter, lhs: counter, rhs: ONE });
        self.code.push(Instr::Jmp { target: head });
        let end = self.code.len();
        self.code[head] = Instr::Jz { cond: counter, target: end };
    }
}

/// Deterministic input suite for a random program.
pub fn random_inputs(seed: u64, count: usize) -> Vec<Vec<i64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d1a9_u64);
    let mut suites = vec![vec![0; RANDOM_INPUTS]];
    while suites.len() < count {
        suites.push((0..RANDOM_INPUTS).map(|_| rng.gen_range(-20..=20)).collect());
    }
    suites
}
