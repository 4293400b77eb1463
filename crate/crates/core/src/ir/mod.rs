//! Typed SSA intermediate representation.
//!
//! A [`Program`] is a list of functions plus an initial memory image. Each
//! function owns a dense table of SSA values ([`ValueDef`]) and a list of
//! blocks; the first block is the entry block. Instructions refer to other
//! entities by index, so the VM and the hardening passes never do name
//! lookups.
//!
//! Scalar types are `iN` (1 to 64 bits) and `f32`/`f64`. Hardened programs
//! additionally use 256-bit vector types `<R x T>` where `R = 256 / bits(T)`.

mod canon;
mod classify;
mod parse;
mod print;
mod validate;

pub use canon::canonicalize_types;
pub use classify::{classify, InstrClass, Opcode, SyncKind};
pub use parse::parse_program;
pub use print::print_program;
pub use validate::validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the modeled vector register, in bits.
pub const VECTOR_BITS: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScalarKind {
    Int,
    Float,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScalarType {
    pub kind: ScalarKind,
    pub bits: u8,
}

impl ScalarType {
    pub const I8: ScalarType = ScalarType::int(8);
    pub const I16: ScalarType = ScalarType::int(16);
    pub const I32: ScalarType = ScalarType::int(32);
    pub const I64: ScalarType = ScalarType::int(64);
    pub const F32: ScalarType = ScalarType { kind: ScalarKind::Float, bits: 32 };
    pub const F64: ScalarType = ScalarType { kind: ScalarKind::Float, bits: 64 };

    pub const fn int(bits: u8) -> Self {
        ScalarType { kind: ScalarKind::Int, bits }
    }

    pub fn is_int(self) -> bool {
        self.kind == ScalarKind::Int
    }

    pub fn is_float(self) -> bool {
        self.kind == ScalarKind::Float
    }

    /// True for the widths a vector register can hold natively.
    pub fn is_canonical(self) -> bool {
        match self.kind {
            ScalarKind::Int => matches!(self.bits, 8 | 16 | 32 | 64),
            ScalarKind::Float => matches!(self.bits, 32 | 64),
        }
    }

    /// Smallest canonical integer width that holds `bits`.
    pub fn canonical_int_width(bits: u8) -> u8 {
        match bits {
            0..=8 => 8,
            9..=16 => 16,
            17..=32 => 32,
            _ => 64,
        }
    }

    /// Bytes occupied in memory (non-canonical integers use their canonical width).
    pub fn mem_bytes(self) -> usize {
        match self.kind {
            ScalarKind::Int => Self::canonical_int_width(self.bits) as usize / 8,
            ScalarKind::Float => self.bits as usize / 8,
        }
    }

    pub fn mask(self) -> u64 {
        if self.bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ScalarKind::Int => write!(f, "i{}", self.bits),
            ScalarKind::Float => write!(f, "f{}", self.bits),
        }
    }
}

/// Number of replicas of `t` that fill one vector register.
///
/// Only defined for canonical widths.
pub fn replication_factor(t: ScalarType) -> Option<usize> {
    if t.is_canonical() {
        Some((VECTOR_BITS / t.bits as u32) as usize)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    Scalar(ScalarType),
    /// A full vector register of `256 / bits` replicas.
    Vector(ScalarType),
}

impl Type {
    pub fn elem(self) -> ScalarType {
        match self {
            Type::Scalar(t) | Type::Vector(t) => t,
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Type::Vector(_))
    }

    pub fn lanes(self) -> usize {
        match self {
            Type::Scalar(_) => 1,
            Type::Vector(t) => replication_factor(t).unwrap_or(1),
        }
    }

    /// Same shape (scalar or vector) with a different element type.
    pub fn with_elem(self, elem: ScalarType) -> Type {
        match self {
            Type::Scalar(_) => Type::Scalar(elem),
            Type::Vector(_) => Type::Vector(elem),
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(t) => write!(f, "{t}"),
            Type::Vector(t) => write!(f, "<{} x {}>", self.lanes(), t),
        }
    }
}

impl From<ScalarType> for Type {
    fn from(t: ScalarType) -> Self {
        Type::Scalar(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FuncId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl FuncId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtMode {
    Zero,
    Sign,
}

/// Records that a value was widened from a non-canonical integer width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Widening {
    pub from_bits: u8,
    pub mode: ExtMode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueDef {
    pub name: String,
    pub ty: Type,
    pub widened: Option<Widening>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Div,
    Rem,
    FAdd,
    FSub,
    FMul,
    FDiv,
}

impl BinOp {
    pub const ALL: [BinOp; 14] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Div,
        BinOp::Rem,
        BinOp::FAdd,
        BinOp::FSub,
        BinOp::FMul,
        BinOp::FDiv,
    ];

    pub fn is_float(self) -> bool {
        matches!(self, BinOp::FAdd | BinOp::FSub | BinOp::FMul | BinOp::FDiv)
    }

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::FAdd => "fadd",
            BinOp::FSub => "fsub",
            BinOp::FMul => "fmul",
            BinOp::FDiv => "fdiv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CastOp {
    Trunc,
    ZExt,
    SExt,
}

impl CastOp {
    pub fn name(self) -> &'static str {
        match self {
            CastOp::Trunc => "trunc",
            CastOp::ZExt => "zext",
            CastOp::SExt => "sext",
        }
    }
}

/// Comparison predicates. `eq`/`ne` compare bit patterns and accept floats;
/// the `o*` predicates are ordered IEEE comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
    Oeq,
    One,
    Olt,
    Ole,
    Ogt,
    Oge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 16] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Slt,
        CmpPred::Sle,
        CmpPred::Sgt,
        CmpPred::Sge,
        CmpPred::Ult,
        CmpPred::Ule,
        CmpPred::Ugt,
        CmpPred::Uge,
        CmpPred::Oeq,
        CmpPred::One,
        CmpPred::Olt,
        CmpPred::Ole,
        CmpPred::Ogt,
        CmpPred::Oge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Slt => "slt",
            CmpPred::Sle => "sle",
            CmpPred::Sgt => "sgt",
            CmpPred::Sge => "sge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
            CmpPred::Ugt => "ugt",
            CmpPred::Uge => "uge",
            CmpPred::Oeq => "oeq",
            CmpPred::One => "one",
            CmpPred::Olt => "olt",
            CmpPred::Ole => "ole",
            CmpPred::Ogt => "ogt",
            CmpPred::Oge => "oge",
        }
    }

    pub fn is_float(self) -> bool {
        matches!(
            self,
            CmpPred::Oeq | CmpPred::One | CmpPred::Olt | CmpPred::Ole | CmpPred::Ogt | CmpPred::Oge
        )
    }

    pub fn is_signed(self) -> bool {
        matches!(self, CmpPred::Slt | CmpPred::Sle | CmpPred::Sgt | CmpPred::Sge)
    }

    pub fn is_unsigned(self) -> bool {
        matches!(self, CmpPred::Ult | CmpPred::Ule | CmpPred::Ugt | CmpPred::Uge)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    /// Compare the two low lanes; broadcast lane 0 if equal, else the highest lane.
    Basic,
    /// Plurality vote over all lanes; a tie between the top groups is unrecoverable.
    #[default]
    Extended,
}

impl RecoveryMode {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMode::Basic => "basic",
            RecoveryMode::Extended => "extended",
        }
    }
}

/// Why an instruction exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Original,
    Wrapper,
    Check,
    Recovery,
    Shadow,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Original, Tag::Wrapper, Tag::Check, Tag::Recovery, Tag::Shadow];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Original => "original",
            Tag::Wrapper => "wrapper",
            Tag::Check => "check",
            Tag::Recovery => "recovery",
            Tag::Shadow => "shadow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The synchronization point (or other construct) an inserted instruction serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Site {
    None,
    Load,
    Store,
    Branch,
    Call,
    Ret,
    Param,
    Fallback,
}

impl Site {
    pub const ALL: [Site; 8] = [
        Site::None,
        Site::Load,
        Site::Store,
        Site::Branch,
        Site::Call,
        Site::Ret,
        Site::Param,
        Site::Fallback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Site::None => "none",
            Site::Load => "load",
            Site::Store => "store",
            Site::Branch => "branch",
            Site::Call => "call",
            Site::Ret => "ret",
            Site::Param => "param",
            Site::Fallback => "fallback",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub tag: Tag,
    pub site: Site,
}

impl Origin {
    pub const ORIGINAL: Origin = Origin { tag: Tag::Original, site: Site::None };

    pub fn new(tag: Tag, site: Site) -> Self {
        Origin { tag, site }
    }
}

impl Default for Origin {
    fn default() -> Self {
        Origin::ORIGINAL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Constant; vector constants are splats. `bits` holds the raw element bits.
    Const { bits: u64 },
    Bin { op: BinOp, lhs: ValueId, rhs: ValueId },
    Neg { arg: ValueId },
    Cast { op: CastOp, arg: ValueId },
    Cmp { pred: CmpPred, lhs: ValueId, rhs: ValueId },
    Select { cond: ValueId, on_true: ValueId, on_false: ValueId },
    Phi { incoming: Vec<(ValueId, BlockId)> },
    Copy { arg: ValueId },
    Load { addr: ValueId },
    Store { value: ValueId, addr: ValueId },
    Call { callee: FuncId, args: Vec<ValueId> },
    Extract { arg: ValueId, lane: u8 },
    Broadcast { arg: ValueId },
    /// Rotate lanes by one: `[x0..x{R-1}] -> [x{R-1}, x0, .., x{R-2}]`.
    Shuffle { arg: ValueId },
    /// Classifies a vector as all-ones / all-zero / mixed (`1` / `0` / `2`).
    Ptest { arg: ValueId },
    Recover { arg: ValueId, mode: RecoveryMode },
    Vote { a: ValueId, b: ValueId, c: ValueId },
    Br { cond: ValueId, on_true: BlockId, on_false: BlockId },
    /// Three-way branch on a `ptest` result.
    Brp { test: ValueId, all_true: BlockId, all_false: BlockId, mix: BlockId },
    Jmp { target: BlockId },
    Ret { value: Option<ValueId> },
}

/// Result of a `ptest`, encoded as an `i8` in the IR.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PtestResult {
    AllFalse = 0,
    AllTrue = 1,
    Mix = 2,
}

impl Op {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Op::Br { .. } | Op::Brp { .. } | Op::Jmp { .. } | Op::Ret { .. })
    }

    /// Value operands in a fixed order.
    pub fn operands(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        self.for_each_operand(|v| out.push(v));
        out
    }

    pub fn for_each_operand(&self, mut f: impl FnMut(ValueId)) {
        match self {
            Op::Const { .. } | Op::Jmp { .. } => {}
            Op::Bin { lhs, rhs, .. } | Op::Cmp { lhs, rhs, .. } => {
                f(*lhs);
                f(*rhs);
            }
            Op::Neg { arg }
            | Op::Cast { arg, .. }
            | Op::Copy { arg }
            | Op::Extract { arg, .. }
            | Op::Broadcast { arg }
            | Op::Shuffle { arg }
            | Op::Ptest { arg }
            | Op::Recover { arg, .. } => f(*arg),
            Op::Select { cond, on_true, on_false } => {
                f(*cond);
                f(*on_true);
                f(*on_false);
            }
            Op::Phi { incoming } => incoming.iter().for_each(|(v, _)| f(*v)),
            Op::Load { addr } => f(*addr),
            Op::Store { value, addr } => {
                f(*value);
                f(*addr);
            }
            Op::Call { args, .. } => args.iter().for_each(|a| f(*a)),
            Op::Vote { a, b, c } => {
                f(*a);
                f(*b);
                f(*c);
            }
            Op::Br { cond, .. } => f(*cond),
            Op::Brp { test, .. } => f(*test),
            Op::Ret { value } => {
                if let Some(v) = value {
                    f(*v)
                }
            }
        }
    }

    pub fn map_operands(&mut self, mut f: impl FnMut(ValueId) -> ValueId) {
        match self {
            Op::Const { .. } | Op::Jmp { .. } => {}
            Op::Bin { lhs, rhs, .. } | Op::Cmp { lhs, rhs, .. } => {
                *lhs = f(*lhs);
                *rhs = f(*rhs);
            }
            Op::Neg { arg }
            | Op::Cast { arg, .. }
            | Op::Copy { arg }
            | Op::Extract { arg, .. }
            | Op::Broadcast { arg }
            | Op::Shuffle { arg }
            | Op::Ptest { arg }
            | Op::Recover { arg, .. } => *arg = f(*arg),
            Op::Select { cond, on_true, on_false } => {
                *cond = f(*cond);
                *on_true = f(*on_true);
                *on_false = f(*on_false);
            }
            Op::Phi { incoming } => incoming.iter_mut().for_each(|(v, _)| *v = f(*v)),
            Op::Load { addr } => *addr = f(*addr),
            Op::Store { value, addr } => {
                *value = f(*value);
                *addr = f(*addr);
            }
            Op::Call { args, .. } => args.iter_mut().for_each(|a| *a = f(*a)),
            Op::Vote { a, b, c } => {
                *a = f(*a);
                *b = f(*b);
                *c = f(*c);
            }
            Op::Br { cond, .. } => *cond = f(*cond),
            Op::Brp { test, .. } => *test = f(*test),
            Op::Ret { value } => {
                if let Some(v) = value {
                    *v = f(*v)
                }
            }
        }
    }

    /// Successor blocks of a terminator (empty for other instructions).
    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            Op::Br { on_true, on_false, .. } => vec![*on_true, *on_false],
            Op::Brp { all_true, all_false, mix, .. } => vec![*all_true, *all_false, *mix],
            Op::Jmp { target } => vec![*target],
            _ => Vec::new(),
        }
    }

    pub fn map_successors(&mut self, mut f: impl FnMut(BlockId) -> BlockId) {
        match self {
            Op::Br { on_true, on_false, .. } => {
                *on_true = f(*on_true);
                *on_false = f(*on_false);
            }
            Op::Brp { all_true, all_false, mix, .. } => {
                *all_true = f(*all_true);
                *all_false = f(*all_false);
                *mix = f(*mix);
            }
            Op::Jmp { target } => *target = f(*target),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instr {
    pub result: Option<ValueId>,
    pub op: Op,
    pub origin: Origin,
}

impl Instr {
    pub fn new(result: Option<ValueId>, op: Op) -> Self {
        Instr { result, op, origin: Origin::ORIGINAL }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn opcode(&self) -> Opcode {
        Opcode::of(&self.op)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub label: String,
    pub instrs: Vec<Instr>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Instr> {
        self.instrs.last().filter(|i| i.op.is_terminator())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub params: Vec<ValueId>,
    /// `None` for `void`.
    pub ret: Option<Type>,
    pub values: Vec<ValueDef>,
    pub blocks: Vec<Block>,
    pub is_extern: bool,
}

impl Function {
    pub fn value(&self, v: ValueId) -> &ValueDef {
        &self.values[v.index()]
    }

    pub fn ty(&self, v: ValueId) -> Type {
        self.values[v.index()].ty
    }

    pub fn add_value(&mut self, name: impl Into<String>, ty: Type) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(ValueDef { name: name.into(), ty, widened: None });
        id
    }

    pub fn instr_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len()).sum()
    }

    /// Predecessor lists, deduplicated and in block order.
    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds: Vec<Vec<BlockId>> = vec![Vec::new(); self.blocks.len()];
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(t) = b.terminator() {
                for s in t.op.successors() {
                    if let Some(p) = preds.get_mut(s.index()) {
                        if !p.contains(&BlockId(i as u32)) {
                            p.push(BlockId(i as u32));
                        }
                    }
                }
            }
        }
        preds
    }

    /// Defining instruction for every value, as (block, index).
    pub fn def_sites(&self) -> Vec<Option<(BlockId, usize)>> {
        let mut sites = vec![None; self.values.len()];
        for (bi, b) in self.blocks.iter().enumerate() {
            for (ii, ins) in b.instrs.iter().enumerate() {
                if let Some(r) = ins.result {
                    sites[r.index()] = Some((BlockId(bi as u32), ii));
                }
            }
        }
        sites
    }

    /// Renumber values so parameters come first, then results in program order,
    /// dropping definitions nothing refers to. This is the order the parser
    /// assigns, so a renumbered function round-trips through text unchanged.
    pub fn renumber(&mut self) {
        let mut map: Vec<Option<ValueId>> = vec![None; self.values.len()];
        let mut values = Vec::with_capacity(self.values.len());
        let assign = |old: ValueId, values: &mut Vec<ValueDef>, map: &mut Vec<Option<ValueId>>| {
            if map[old.index()].is_none() {
                map[old.index()] = Some(ValueId(values.len() as u32));
                values.push(self.values[old.index()].clone());
            }
        };
        for &p in &self.params {
            assign(p, &mut values, &mut map);
        }
        for b in &self.blocks {
            for ins in &b.instrs {
                if let Some(r) = ins.result {
                    assign(r, &mut values, &mut map);
                }
            }
        }
        let remap = |v: ValueId| map[v.index()].expect("operand without definition");
        for p in &mut self.params {
            *p = remap(*p);
        }
        for b in &mut self.blocks {
            for ins in &mut b.instrs {
                if let Some(r) = ins.result.as_mut() {
                    *r = remap(*r);
                }
                ins.op.map_operands(remap);
            }
        }
        self.values = values;
    }
}

/// A run of initialized bytes in the memory image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSegment {
    pub offset: u64,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub functions: Vec<Function>,
    pub data: Vec<DataSegment>,
    pub entry: String,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<(FuncId, &Function)> {
        self.functions
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
            .map(|(i, f)| (FuncId(i as u32), f))
    }

    pub fn entry_function(&self) -> Option<(FuncId, &Function)> {
        self.function(&self.entry)
    }

    pub fn instr_count(&self) -> usize {
        self.functions.iter().map(Function::instr_count).sum()
    }

    /// Static instruction count per origin tag.
    pub fn tag_counts(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for f in &self.functions {
            for b in &f.blocks {
                for i in &b.instrs {
                    out[i.origin.tag.index()] += 1;
                }
            }
        }
        out
    }

    /// True when every vector register type in the program is well formed and
    /// no integer width needs canonicalizing.
    pub fn is_canonical(&self) -> bool {
        self.functions
            .iter()
            .all(|f| f.values.iter().all(|v| v.ty.elem().is_canonical()))
    }
}

/// Location of an instruction, for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct InstrLoc {
    pub func: usize,
    pub block: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IrError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{}type error in @{func}: {msg}", line_prefix(*.line))]
    Type { func: String, line: Option<usize>, msg: String },
    #[error("{}SSA violation in @{func}: {msg}", line_prefix(*.line))]
    Ssa { func: String, line: Option<usize>, msg: String },
    #[error("unsupported type {ty}: {msg}")]
    Unsupported { ty: String, msg: String },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("{l}: ")).unwrap_or_default()
}

impl IrError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            IrError::Syntax { .. } => "syntax",
            IrError::Type { .. } => "type",
            IrError::Ssa { .. } => "ssa",
            IrError::Unsupported { .. } => "unsupported",
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            IrError::Syntax { line, .. } => Some(*line),
            IrError::Type { line, .. } | IrError::Ssa { line, .. } => *line,
            IrError::Unsupported { .. } => None,
        }
    }
}
