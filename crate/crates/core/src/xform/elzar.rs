//! Lane replication.
//!
//! Every scalar value of the input becomes a vector register holding
//! `256 / bits` identical copies, and replicable instructions operate on all
//! copies at once. Synchronization instructions (loads, stores, branches,
//! calls, returns) work on lane 0: before one executes, its operands are
//! checked for lane equality and repaired by a voting recovery block if a
//! lane disagrees.

use crate::ir::{
    canonicalize_types, validate, BinOp, CmpPred, Function, Op, Origin, Program, ScalarType, Site, Tag, Type, ValueId,
};

use super::{Builder, HardenConfig, XformError};

/// Applies lane replication to every non-extern function.
pub fn harden(p: &Program, cfg: &HardenConfig) -> Result<Program, XformError> {
    let p = canonicalize_types(p)?;
    let mut out = p.clone();
    for (i, f) in p.functions.iter().enumerate() {
        if !f.is_extern {
            out.functions[i] = Lowering::run(f, cfg)?;
        }
    }
    validate(&out)?;
    Ok(out)
}

fn o(tag: Tag, site: Site) -> Origin {
    Origin::new(tag, site)
}

struct Lowering<'a> {
    b: Builder,
    src: &'a Function,
    cfg: &'a HardenConfig,
    /// Extra phi edges created by branch recovery blocks.
    extra: Vec<(usize, usize, usize)>,
    /// Label of the original block being lowered, used to name split blocks.
    base: String,
}

impl<'a> Lowering<'a> {
    fn run(src: &'a Function, cfg: &'a HardenConfig) -> Result<Function, XformError> {
        let mut f = src.clone();
        for v in &mut f.values {
            v.ty = Type::Vector(v.ty.elem());
        }
        let mut lw = Lowering { b: Builder::new(f), src, cfg, extra: Vec::new(), base: String::new() };
        let n = src.blocks.len();

        // Parameters stay scalar at the call boundary and are replicated on entry.
        let mut entry_code = Vec::new();
        for (i, &p) in src.params.iter().enumerate() {
            let base = format!("{}.s", src.value(p).name);
            let s = lw.b.fresh(&base, src.ty(p));
            lw.b.f.params[i] = s;
            entry_code.push((p, s));
        }

        let mut exit = vec![0; n];
        for ob in 0..n {
            lw.b.cur = ob;
            lw.base = src.blocks[ob].label.clone();
            let mut entered = ob != 0;
            for (ii, ins) in src.blocks[ob].instrs.iter().enumerate() {
                if !entered && !matches!(ins.op, Op::Phi { .. }) {
                    for &(p, s) in &entry_code {
                        lw.b.emit_to(Some(p), Op::Broadcast { arg: s }, o(Tag::Wrapper, Site::Param));
                    }
                    entered = true;
                }
                lw.lower(ob, ii, ins)?;
            }
            exit[ob] = lw.b.cur;
        }
        let extra = std::mem::take(&mut lw.extra);
        lw.b.fix_phis(n, &exit, &extra);
        Ok(lw.b.finish())
    }

    fn vty(&self, v: ValueId) -> Type {
        self.b.f.ty(v)
    }

    fn lower(&mut self, ob: usize, _ii: usize, ins: &crate::ir::Instr) -> Result<(), XformError> {
        let r = ins.result;
        match &ins.op {
            Op::Phi { .. }
            | Op::Const { .. }
            | Op::Neg { .. }
            | Op::Cast { .. }
            | Op::Cmp { .. }
            | Op::Select { .. }
            | Op::Copy { .. }
            | Op::Jmp { .. } => self.b.emit_to(r, ins.op.clone(), ins.origin),
            Op::Bin { op: BinOp::Div | BinOp::Rem, .. } => self.fallback_scalar_ilr(ins),
            Op::Bin { .. } => self.b.emit_to(r, ins.op.clone(), ins.origin),
            Op::Load { addr } => self.wrap_load(r.expect("load result"), *addr),
            Op::Store { value, addr } => self.wrap_store(*value, *addr),
            Op::Call { callee, args } => {
                let scalars: Vec<ValueId> = args
                    .iter()
                    .map(|a| self.sync_operand(*a, Site::Call, self.cfg.checks.other))
                    .collect();
                let op = Op::Call { callee: *callee, args: scalars };
                match r {
                    Some(v) => {
                        let elem = self.vty(v).elem();
                        let base = format!("{}.s", self.b.name(v));
                        let s = self.b.emit(&base, Type::Scalar(elem), op, ins.origin);
                        self.b.emit_to(Some(v), Op::Broadcast { arg: s }, o(Tag::Wrapper, Site::Call));
                    }
                    None => self.b.emit_to(None, op, ins.origin),
                }
            }
            Op::Ret { value } => {
                let value = value.map(|v| self.sync_operand(v, Site::Ret, self.cfg.checks.other));
                self.b.emit_to(None, Op::Ret { value }, ins.origin);
            }
            Op::Br { cond, on_true, on_false } => {
                self.lower_branch(ob, *cond, on_true.index(), on_false.index(), ins.origin)
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

    /// Lane 0 of `v` as a scalar, checked first when `checked`.
    fn sync_operand(&mut self, v: ValueId, site: Site, checked: bool) -> ValueId {
        if checked {
            self.build_check(v, site)
        } else {
            let t = self.vty(v);
            let base = format!("{}.s", self.b.name(v));
            self.b.emit(&base, Type::Scalar(t.elem()), Op::Extract { arg: v, lane: 0 }, o(Tag::Wrapper, site))
        }
    }

    /// Compares `v` with its one-lane rotation. Equal lanes continue with
    /// lane 0; any difference diverts to a recovery block that repairs the
    /// register and re-extracts. Returns the scalar merged in the
    /// continuation block, which becomes the current block.
    fn build_check(&mut self, v: ValueId, site: Site) -> ValueId {
        let t = self.vty(v);
        let name = self.b.name(v);
        let rot = self.b.emit(&format!("{name}.rot"), t, Op::Shuffle { arg: v }, o(Tag::Check, site));
        // Integer lanes: xor is all-zero iff every lane equals its neighbor.
        // Float lanes: a bitwise `ne` mask gives the same verdict.
        let diff = if t.elem().is_int() {
            let op = Op::Bin { op: BinOp::Xor, lhs: v, rhs: rot };
            self.b.emit(&format!("{name}.diff"), t, op, o(Tag::Check, site))
        } else {
            let op = Op::Cmp { pred: CmpPred::Ne, lhs: v, rhs: rot };
            self.b.emit(&format!("{name}.diff"), t.with_elem(ScalarType::I8), op, o(Tag::Check, site))
        };
        let test =
            self.b.emit(&format!("{name}.pt"), ScalarType::I8.into(), Op::Ptest { arg: diff }, o(Tag::Check, site));
        let scalar_ty = Type::Scalar(t.elem());
        let e = self.b.emit(&format!("{name}.s"), scalar_ty, Op::Extract { arg: v, lane: 0 }, o(Tag::Wrapper, site));
        let here = self.b.cur;
        let ok = self.b.new_block(&format!("{}.ok", self.base));
        let rec = self.b.new_block(&format!("{}.rec", self.base));
        let brp = Op::Brp {
            test,
            all_true: block(rec),
            all_false: block(ok),
            mix: block(rec),
        };
        self.b.emit_to(None, brp, o(Tag::Check, site));

        self.b.cur = rec;
        let fixed = self.build_recovery(v, site);
        let e2 = self.b.emit(&format!("{name}.s"), scalar_ty, Op::Extract { arg: fixed, lane: 0 }, o(Tag::Recovery, site));
        self.b.emit_to(None, Op::Jmp { target: block(ok) }, o(Tag::Recovery, site));

        self.b.cur = ok;
        let incoming = vec![(e, block(here)), (e2, block(rec))];
        self.b.emit(&format!("{name}.s"), scalar_ty, Op::Phi { incoming }, o(Tag::Check, site))
    }

    fn build_recovery(&mut self, v: ValueId, site: Site) -> ValueId {
        let t = self.vty(v);
        let name = format!("{}.fix", self.b.name(v));
        let mode = self.cfg.recovery;
        self.b.emit(&name, t, Op::Recover { arg: v, mode }, o(Tag::Recovery, site))
    }

    fn wrap_load(&mut self, result: ValueId, addr: ValueId) {
        let a = self.sync_operand(addr, Site::Load, self.cfg.checks.loads);
        let elem = self.vty(result).elem();
        let base = format!("{}.s", self.b.name(result));
        let s = self.b.emit(&base, Type::Scalar(elem), Op::Load { addr: a }, Origin::ORIGINAL);
        self.b.emit_to(Some(result), Op::Broadcast { arg: s }, o(Tag::Wrapper, Site::Load));
    }

    fn wrap_store(&mut self, value: ValueId, addr: ValueId) {
        let on = self.cfg.checks.stores;
        let v = self.sync_operand(value, Site::Store, on);
        let a = self.sync_operand(addr, Site::Store, on);
        self.b.emit_to(None, Op::Store { value: v, addr: a }, Origin::ORIGINAL);
    }

    /// Turns the replicated condition into an all-ones/all-zeros lane mask and
    /// branches three ways on its `ptest`: all-true and all-false take the
    /// original edges, a mix goes through mask recovery first.
    fn lower_branch(&mut self, ob: usize, cond: ValueId, t: usize, f: usize, origin: Origin) {
        let site = Site::Branch;
        let ct = self.vty(cond);
        let name = self.b.name(cond);
        let is_cmp = self.src_def_is_cmp(cond);
        let bools = if is_cmp {
            cond
        } else {
            let zero = self.b.emit(&format!("{name}.zero"), ct, Op::Const { bits: 0 }, o(Tag::Wrapper, site));
            let op = Op::Cmp { pred: CmpPred::Ne, lhs: cond, rhs: zero };
            self.b.emit(&format!("{name}.nz"), ct.with_elem(ScalarType::I8), op, o(Tag::Wrapper, site))
        };
        let mt = self.vty(bools);
        let mask = self.b.emit(&format!("{name}.mask"), mt, Op::Neg { arg: bools }, o(Tag::Wrapper, site));
        if !self.cfg.checks.branches {
            let br = Op::Br { cond: mask, on_true: block(t), on_false: block(f) };
            self.b.emit_to(None, br, origin);
            return;
        }
        let test = self.b.emit(&format!("{name}.pt"), ScalarType::I8.into(), Op::Ptest { arg: mask }, o(Tag::Check, site));
        let here = self.b.cur;
        let rec = self.b.new_block(&format!("{}.brec", self.base));
        let brp = Op::Brp { test, all_true: block(t), all_false: block(f), mix: block(rec) };
        self.b.emit_to(None, brp, origin);

        self.b.cur = rec;
        let fixed = self.build_recovery(mask, site);
        let e = self.b.emit(&format!("{name}.s"), ScalarType::I8.into(), Op::Extract { arg: fixed, lane: 0 }, o(Tag::Recovery, site));
        let br = Op::Br { cond: e, on_true: block(t), on_false: block(f) };
        self.b.emit_to(None, br, o(Tag::Recovery, site));
        self.b.cur = here;
        self.extra.push((t, ob, rec));
        if f != t {
            self.extra.push((f, ob, rec));
        }
    }

    fn src_def_is_cmp(&self, v: ValueId) -> bool {
        self.src
            .blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .any(|i| i.result == Some(v) && matches!(i.op, Op::Cmp { .. }))
    }

    /// Integer division has no vector form: run it on three extracted lanes
    /// and vote.
    fn fallback_scalar_ilr(&mut self, ins: &crate::ir::Instr) {
        let Op::Bin { op, lhs, rhs } = ins.op else { unreachable!("div or rem") };
        let r = ins.result.expect("div result");
        let site = Site::Fallback;
        let t = self.vty(r);
        let st = Type::Scalar(t.elem());
        let name = self.b.name(r);
        let mut outs = Vec::with_capacity(3);
        for lane in 0..3u8 {
            let x = self.b.emit(&format!("{name}.l"), st, Op::Extract { arg: lhs, lane }, o(Tag::Wrapper, site));
            let y = self.b.emit(&format!("{name}.r"), st, Op::Extract { arg: rhs, lane }, o(Tag::Wrapper, site));
            let origin = if lane == 0 { ins.origin } else { o(Tag::Wrapper, site) };
            outs.push(self.b.emit(&format!("{name}.q"), st, Op::Bin { op, lhs: x, rhs: y }, origin));
        }
        let op = Op::Vote { a: outs[0], b: outs[1], c: outs[2] };
        let v = self.b.emit(&format!("{name}.v"), st, op, o(Tag::Check, site));
        self.b.emit_to(Some(r), Op::Broadcast { arg: v }, o(Tag::Wrapper, site));
    }
}

fn block(b: usize) -> crate::ir::BlockId {
    crate::ir::BlockId(b as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, print_program, replication_factor};
    use crate::vm::{execute, ExecConfig, Status};

    const LOOP: &str = "func @main(%r1: i64, %r2: i64, %r3: i64) -> i64 {
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

    #[test]
    fn replication_factors() {
        assert_eq!(replication_factor(ScalarType::I64), Some(4));
        assert_eq!(replication_factor(ScalarType::I8), Some(32));
        assert_eq!(replication_factor(ScalarType::F32), Some(8));
        assert_eq!(replication_factor(ScalarType::int(9)), None);
    }

    #[test]
    fn loop_hardening_has_three_way_branch() {
        let p = parse_program(LOOP).unwrap();
        let h = harden(&p, &HardenConfig::default()).unwrap();
        let text = print_program(&h);
        assert!(text.contains("add <4 x i64>"), "{text}");
        assert!(text.contains("cmp ne <4 x i64>"), "{text}");
        assert!(text.contains("brp"), "{text}");
        assert!(text.contains("recover <32 x i8>"), "{text}");
        assert_eq!(parse_program(&text).unwrap(), h);
        let r = execute(&h, &[0, 1, 3], &ExecConfig::default());
        assert_eq!(r.status, Status::Finished);
        assert_eq!(r.ret, Some(3));
        assert_eq!(r.checks_failed, 0);
    }

    #[test]
    fn ret_only_program_gets_one_check() {
        let src = "func @main(%x: i64) -> i64 { entry: %y = add i64 %x, %x ret %y }";
        let h = harden(&parse_program(src).unwrap(), &HardenConfig::default()).unwrap();
        let f = &h.functions[0];
        let ptests = f.blocks.iter().flat_map(|b| &b.instrs).filter(|i| matches!(i.op, Op::Ptest { .. })).count();
        assert_eq!(ptests, 1);
        assert_eq!(execute(&h, &[21], &ExecConfig::default()).ret, Some(42));
    }

    #[test]
    fn unchecked_load_is_three_instructions() {
        let src = "func @main(%a: i64) -> i64 { entry: %v = load i64 %a ret %v }";
        let cfg = HardenConfig::with_checks(false, true, true, false);
        let h = harden(&parse_program(src).unwrap(), &cfg).unwrap();
        let ops: Vec<_> = h.functions[0].blocks[0].instrs.iter().map(|i| i.opcode()).collect();
        use crate::ir::Opcode::*;
        // broadcast of the parameter, then extract / load / broadcast, then the ret wrapper.
        assert_eq!(ops, vec![Broadcast, Extract, Load, Broadcast, Extract, Ret]);
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = HardenConfig::with_checks(true, false, true, true);
        let json = cfg.to_json();
        assert_eq!(json, r#"{"checks":{"loads":true,"stores":false,"branches":true,"other":true},"recovery":"extended"}"#);
        assert_eq!(HardenConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(HardenConfig::from_json(r#"{"recovery":"basic"}"#).unwrap().checks, Default::default());
    }

    #[test]
    fn rejects_hardened_input() {
        let p = parse_program(LOOP).unwrap();
        let h = harden(&p, &HardenConfig::default()).unwrap();
        assert!(matches!(harden(&h, &HardenConfig::default()), Err(XformError::Unsupported { .. })));
    }
}
