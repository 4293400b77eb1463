//! Instruction triplication with majority voting.
//!
//! Each replicable instruction runs three times on three independent scalar
//! data flows. Before a synchronization instruction consumes a value, the
//! original and first shadow are compared; on disagreement a recovery block
//! votes over all three copies.

use crate::ir::{
    canonicalize_types, validate, CmpPred, Function, Instr, Op, Origin, Program, ScalarType, Site,
    Tag, Type, ValueId,
};
use crate::vm::lanes;

use super::{Builder, XformError};

/// The value held by at least two of the inputs, or `None` when all three
/// differ (the hardened program aborts as unrecoverable in that case).
pub fn majority_vote(a: u64, b: u64, c: u64) -> Option<u64> {
    lanes::vote(a, b, c)
}

pub fn harden_triplicate(p: &Program) -> Result<Program, XformError> {
    let p = canonicalize_types(p)?;
    let mut out = p.clone();
    for (i, f) in p.functions.iter().enumerate() {
        if !f.is_extern {
            out.functions[i] = Triplicate::run(f)?;
        }
    }
    validate(&out)?;
    Ok(out)
}

fn o(tag: Tag, site: Site) -> Origin {
    Origin::new(tag, site)
}

struct Triplicate<'a> {
    b: Builder,
    src: &'a Function,
    shadows: Vec<[ValueId; 2]>,
    base: String,
}

impl<'a> Triplicate<'a> {
    fn run(src: &'a Function) -> Result<Function, XformError> {
        let mut b = Builder::new(src.clone());
        let shadows = (0..src.values.len())
            .map(|i| {
                let v = &src.values[i];
                [b.fresh(&format!("{}.1", v.name), v.ty), b.fresh(&format!("{}.2", v.name), v.ty)]
            })
            .collect();
        let mut t = Triplicate { b, src, shadows, base: String::new() };
        let n = src.blocks.len();
        let mut exit = vec![0; n];
        for ob in 0..n {
            t.b.cur = ob;
            t.base = src.blocks[ob].label.clone();
            let mut entered = ob != 0;
            for ins in &src.blocks[ob].instrs {
                if !entered && !matches!(ins.op, Op::Phi { .. }) {
                    for &p in &src.params {
                        t.copies(p, Site::Param);
                    }
                    entered = true;
                }
                t.lower(ins)?;
            }
            exit[ob] = t.b.cur;
        }
        t.b.fix_phis(n, &exit, &[]);
        Ok(t.b.finish())
    }

    fn sh(&self, v: ValueId, k: usize) -> ValueId {
        self.shadows[v.index()][k]
    }

    /// Seeds both shadow flows from a value produced once.
    fn copies(&mut self, v: ValueId, site: Site) {
        for k in 0..2 {
            let s = self.sh(v, k);
            self.b.emit_to(Some(s), Op::Copy { arg: v }, o(Tag::Wrapper, site));
        }
    }

    fn lower(&mut self, ins: &Instr) -> Result<(), XformError> {
        let r = ins.result;
        match &ins.op {
            Op::Phi { .. }
            | Op::Const { .. }
            | Op::Bin { .. }
            | Op::Neg { .. }
            | Op::Cast { .. }
            | Op::Cmp { .. }
            | Op::Select { .. }
            | Op::Copy { .. } => {
                self.b.emit_to(r, ins.op.clone(), ins.origin);
                let r = r.expect("replicable instructions define a value");
                for k in 0..2 {
                    let mut op = ins.op.clone();
                    op.map_operands(|v| self.sh(v, k));
                    self.b.emit_to(Some(self.sh(r, k)), op, o(Tag::Shadow, Site::None));
                }
            }
            Op::Load { addr } => {
                let a = self.vote(*addr, Site::Load);
                let r = r.expect("load result");
                self.b.emit_to(Some(r), Op::Load { addr: a }, ins.origin);
                self.copies(r, Site::Load);
            }
            Op::Store { value, addr } => {
                let v = self.vote(*value, Site::Store);
                let a = self.vote(*addr, Site::Store);
                self.b.emit_to(None, Op::Store { value: v, addr: a }, ins.origin);
            }
            Op::Call { callee, args } => {
                let args = args.iter().map(|a| self.vote(*a, Site::Call)).collect();
                self.b.emit_to(r, Op::Call { callee: *callee, args }, ins.origin);
                if let Some(r) = r {
                    self.copies(r, Site::Call);
                }
            }
            Op::Br { cond, on_true, on_false } => {
                let c = self.vote(*cond, Site::Branch);
                self.b.emit_to(None, Op::Br { cond: c, on_true: *on_true, on_false: *on_false }, ins.origin);
            }
            Op::Jmp { .. } => self.b.emit_to(None, ins.op.clone(), ins.origin),
            Op::Ret { value } => {
                let value = value.map(|v| self.vote(v, Site::Ret));
                self.b.emit_to(None, Op::Ret { value }, ins.origin);
            }
            _ => {
                return Err(XformError::Unsupported {
                    func: self.src.name.clone(),
                    opcode: format!("{:?}", ins.opcode()).to_lowercase(),
                })
            }
        }
        Ok(())
    }

    /// Fast path compares the original with the first shadow; a mismatch
    /// branches to a block that votes over all three copies.
    fn vote(&mut self, v: ValueId, site: Site) -> ValueId {
        let t = self.b.f.ty(v);
        let name = self.b.name(v);
        let op = Op::Cmp { pred: CmpPred::Eq, lhs: v, rhs: self.sh(v, 0) };
        let same = self.b.emit(&format!("{name}.eq"), Type::Scalar(ScalarType::I8), op, o(Tag::Check, site));
        let here = self.b.cur;
        let ok = self.b.new_block(&format!("{}.ok", self.base));
        let rec = self.b.new_block(&format!("{}.vote", self.base));
        let br = Op::Br { cond: same, on_true: block(ok), on_false: block(rec) };
        self.b.emit_to(None, br, o(Tag::Check, site));

        self.b.cur = rec;
        let op = Op::Vote { a: v, b: self.sh(v, 0), c: self.sh(v, 1) };
        let w = self.b.emit(&format!("{name}.maj"), t, op, o(Tag::Recovery, site));
        self.b.emit_to(None, Op::Jmp { target: block(ok) }, o(Tag::Recovery, site));

        self.b.cur = ok;
        let incoming = vec![(v, block(here)), (w, block(rec))];
        self.b.emit(&format!("{name}.v"), t, Op::Phi { incoming }, o(Tag::Check, site))
    }
}

fn block(b: usize) -> crate::ir::BlockId {
    crate::ir::BlockId(b as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, print_program, InstrClass};
    use crate::vm::{execute, ExecConfig, Status};

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(5, 5, 5), Some(5));
        assert_eq!(majority_vote(5, 9, 5), Some(5));
        assert_eq!(majority_vote(1, 2, 3), None);
    }

    #[test]
    fn loop_is_triplicated_and_voted() {
        let src = "func @main(%r1: i64, %r2: i64, %r3: i64) -> i64 {
entry:
  jmp @loop
loop:
  %a = phi i64 [%r1, @entry], [%b, @loop]
  %b = add i64 %a, %r2
  %c = cmp ne i64 %b, %r3
  br %c, @loop, @done
done:
  ret %b
}";
        let p = parse_program(src).unwrap();
        let h = harden_triplicate(&p).unwrap();
        let text = print_program(&h);
        assert_eq!(text.matches("add i64").count(), 3, "{text}");
        assert!(text.contains("vote i64"));
        assert_eq!(parse_program(&text).unwrap(), h);
        let native = execute(&p, &[0, 1, 3], &ExecConfig::default());
        let r = execute(&h, &[0, 1, 3], &ExecConfig::default());
        assert_eq!(r.status, Status::Finished);
        assert_eq!(r.ret, native.ret);
        assert!(r.stats.replicable() >= 3 * native.stats.replicable());
        assert_eq!(r.stats.class(InstrClass::Sync(crate::ir::SyncKind::Ret)), 1);
    }

    #[test]
    fn straight_line_blowup() {
        let src = "func @main(%x: i64) -> i64 {
entry:
  %a = add i64 %x, %x
  %b = mul i64 %a, %x
  %c = sub i64 %b, %a
  ret %c
}";
        let h = harden_triplicate(&parse_program(src).unwrap()).unwrap();
        let reps = h.functions[0]
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| i.origin.tag != Tag::Check && crate::ir::classify(i) == InstrClass::Replicable)
            .filter(|i| !matches!(i.op, Op::Copy { .. } | Op::Phi { .. }))
            .count();
        assert!(reps >= 9);
    }
}
