use serde::{Deserialize, Serialize};

use super::{BinOp, CastOp, Instr, Op};

/// Textual opcode of an instruction, without operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Const,
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
    Neg,
    Trunc,
    Zext,
    Sext,
    Fadd,
    Fsub,
    Fmul,
    Fdiv,
    Cmp,
    Select,
    Phi,
    Copy,
    Load,
    Store,
    Br,
    Brp,
    Jmp,
    Call,
    Ret,
    Extract,
    Broadcast,
    Shuffle,
    Ptest,
    Recover,
    Vote,
}

impl Opcode {
    pub const ALL: [Opcode; 36] = [
        Opcode::Const,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Div,
        Opcode::Rem,
        Opcode::Neg,
        Opcode::Trunc,
        Opcode::Zext,
        Opcode::Sext,
        Opcode::Fadd,
        Opcode::Fsub,
        Opcode::Fmul,
        Opcode::Fdiv,
        Opcode::Cmp,
        Opcode::Select,
        Opcode::Phi,
        Opcode::Copy,
        Opcode::Load,
        Opcode::Store,
        Opcode::Br,
        Opcode::Brp,
        Opcode::Jmp,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Extract,
        Opcode::Broadcast,
        Opcode::Shuffle,
        Opcode::Ptest,
        Opcode::Recover,
        Opcode::Vote,
    ];

    pub fn of(op: &Op) -> Opcode {
        match op {
            Op::Const { .. } => Opcode::Const,
            Op::Bin { op, .. } => match op {
                BinOp::Add => Opcode::Add,
                BinOp::Sub => Opcode::Sub,
                BinOp::Mul => Opcode::Mul,
                BinOp::And => Opcode::And,
                BinOp::Or => Opcode::Or,
                BinOp::Xor => Opcode::Xor,
                BinOp::Shl => Opcode::Shl,
                BinOp::Shr => Opcode::Shr,
                BinOp::Div => Opcode::Div,
                BinOp::Rem => Opcode::Rem,
                BinOp::FAdd => Opcode::Fadd,
                BinOp::FSub => Opcode::Fsub,
                BinOp::FMul => Opcode::Fmul,
                BinOp::FDiv => Opcode::Fdiv,
            },
            Op::Neg { .. } => Opcode::Neg,
            Op::Cast { op, .. } => match op {
                CastOp::Trunc => Opcode::Trunc,
                CastOp::ZExt => Opcode::Zext,
                CastOp::SExt => Opcode::Sext,
            },
            Op::Cmp { .. } => Opcode::Cmp,
            Op::Select { .. } => Opcode::Select,
            Op::Phi { .. } => Opcode::Phi,
            Op::Copy { .. } => Opcode::Copy,
            Op::Load { .. } => Opcode::Load,
            Op::Store { .. } => Opcode::Store,
            Op::Call { .. } => Opcode::Call,
            Op::Extract { .. } => Opcode::Extract,
            Op::Broadcast { .. } => Opcode::Broadcast,
            Op::Shuffle { .. } => Opcode::Shuffle,
            Op::Ptest { .. } => Opcode::Ptest,
            Op::Recover { .. } => Opcode::Recover,
            Op::Vote { .. } => Opcode::Vote,
            Op::Br { .. } => Opcode::Br,
            Op::Brp { .. } => Opcode::Brp,
            Op::Jmp { .. } => Opcode::Jmp,
            Op::Ret { .. } => Opcode::Ret,
        }
    }

    pub fn class(self) -> InstrClass {
        match self {
            Opcode::Load => InstrClass::Sync(SyncKind::Load),
            Opcode::Store => InstrClass::Sync(SyncKind::Store),
            Opcode::Br | Opcode::Brp | Opcode::Jmp => InstrClass::Sync(SyncKind::Branch),
            Opcode::Call => InstrClass::Sync(SyncKind::Call),
            Opcode::Ret => InstrClass::Sync(SyncKind::Ret),
            Opcode::Div | Opcode::Rem => InstrClass::ScalarFallback,
            _ => InstrClass::Replicable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncKind {
    Load,
    Store,
    Branch,
    Call,
    Ret,
}

/// How the hardening passes treat an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrClass {
    /// Operates lane-wise on replicated data.
    Replicable,
    /// Replicable, but vector registers lack the operation (integer division
    /// and remainder), so it is computed on extracted scalars and voted.
    ScalarFallback,
    /// Memory and control-flow operations: executed once on a single copy.
    Sync(SyncKind),
}

impl InstrClass {
    pub fn is_replicable(self) -> bool {
        matches!(self, InstrClass::Replicable | InstrClass::ScalarFallback)
    }

    /// Dense index used by statistics tables.
    pub fn index(self) -> usize {
        match self {
            InstrClass::Replicable => 0,
            InstrClass::ScalarFallback => 1,
            InstrClass::Sync(SyncKind::Load) => 2,
            InstrClass::Sync(SyncKind::Store) => 3,
            InstrClass::Sync(SyncKind::Branch) => 4,
            InstrClass::Sync(SyncKind::Call) => 5,
            InstrClass::Sync(SyncKind::Ret) => 6,
        }
    }

    pub const ALL: [InstrClass; 7] = [
        InstrClass::Replicable,
        InstrClass::ScalarFallback,
        InstrClass::Sync(SyncKind::Load),
        InstrClass::Sync(SyncKind::Store),
        InstrClass::Sync(SyncKind::Branch),
        InstrClass::Sync(SyncKind::Call),
        InstrClass::Sync(SyncKind::Ret),
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::Replicable => "replicable",
            InstrClass::ScalarFallback => "scalar_fallback",
            InstrClass::Sync(SyncKind::Load) => "load",
            InstrClass::Sync(SyncKind::Store) => "store",
            InstrClass::Sync(SyncKind::Branch) => "branch",
            InstrClass::Sync(SyncKind::Call) => "call",
            InstrClass::Sync(SyncKind::Ret) => "ret",
        }
    }
}

pub fn classify(i: &Instr) -> InstrClass {
    i.opcode().class()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Instr, ValueId};

    #[test]
    fn add_is_replicable() {
        let i = Instr::new(
            Some(ValueId(2)),
            Op::Bin { op: BinOp::Add, lhs: ValueId(0), rhs: ValueId(1) },
        );
        assert_eq!(classify(&i), InstrClass::Replicable);
    }

    #[test]
    fn sync_classes() {
        assert_eq!(Opcode::Load.class(), InstrClass::Sync(SyncKind::Load));
        assert_eq!(Opcode::Store.class(), InstrClass::Sync(SyncKind::Store));
        assert_eq!(Opcode::Br.class(), InstrClass::Sync(SyncKind::Branch));
        assert_eq!(Opcode::Call.class(), InstrClass::Sync(SyncKind::Call));
        assert_eq!(Opcode::Ret.class(), InstrClass::Sync(SyncKind::Ret));
        assert_eq!(Opcode::Div.class(), InstrClass::ScalarFallback);
        assert_eq!(Opcode::Select.class(), InstrClass::Replicable);
        assert_eq!(Opcode::Phi.class(), InstrClass::Replicable);
    }

    #[test]
    fn classification_partitions_opcodes() {
        let mut seen = [0usize; 7];
        for op in Opcode::ALL {
            seen[op.class().index()] += 1;
        }
        assert_eq!(seen.iter().sum::<usize>(), Opcode::ALL.len());
        assert!(seen.iter().all(|&n| n > 0));
    }
}
