use super::{
    BinOp, BlockId, CastOp, Function, InstrLoc, IrError, Op, Program, ScalarType, Type, ValueId,
};

/// A validation error together with the offending instruction, if any.
#[derive(Debug)]
pub(crate) struct Located {
    pub err: IrError,
    pub loc: Option<InstrLoc>,
}

/// Checks typing and SSA well-formedness.
pub fn validate(p: &Program) -> Result<(), IrError> {
    validate_located(p).map_err(|l| l.err)
}

pub(crate) fn validate_located(p: &Program) -> Result<(), Located> {
    if p.entry_function().is_none() {
        return Err(Located {
            err: IrError::Type {
                func: p.entry.clone(),
                line: None,
                msg: format!("entry function @{} is not defined", p.entry),
            },
            loc: None,
        });
    }
    for (fi, f) in p.functions.iter().enumerate() {
        Checker { p, f, fi }.run()?;
    }
    Ok(())
}

/// Immediate dominators of reachable blocks (`None` for unreachable ones and
/// for the entry block).
pub(crate) fn dominators(f: &Function) -> (Vec<Option<BlockId>>, Vec<bool>) {
    let n = f.blocks.len();
    let succs: Vec<Vec<BlockId>> = f
        .blocks
        .iter()
        .map(|b| b.terminator().map(|t| t.op.successors()).unwrap_or_default())
        .collect();
    // Reverse postorder via iterative DFS.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    if n > 0 {
        seen[0] = true;
        stack.push((0, 0));
    }
    while let Some(&mut (b, ref mut next)) = stack.last_mut() {
        if let Some(s) = succs[b].get(*next) {
            *next += 1;
            let s = s.index();
            if s < n && !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            order.push(b);
            stack.pop();
        }
    }
    order.reverse();
    let mut rpo_index = vec![usize::MAX; n];
    for (i, &b) in order.iter().enumerate() {
        rpo_index[b] = i;
    }
    let preds = f.predecessors();
    let mut idom: Vec<Option<usize>> = vec![None; n];
    if n > 0 {
        idom[0] = Some(0);
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &b in order.iter().skip(1) {
            let mut new: Option<usize> = None;
            for p in &preds[b] {
                let p = p.index();
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(mut a) => {
                        let mut c = p;
                        while a != c {
                            while rpo_index[a] > rpo_index[c] {
                                a = idom[a].expect("processed");
                            }
                            while rpo_index[c] > rpo_index[a] {
                                c = idom[c].expect("processed");
                            }
                        }
                        a
                    }
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    let reachable = seen;
    let out = idom
        .iter()
        .enumerate()
        .map(|(i, d)| d.filter(|&d| d != i).map(|d| BlockId(d as u32)))
        .collect();
    (out, reachable)
}

fn dominates(idom: &[Option<BlockId>], a: BlockId, mut b: BlockId) -> bool {
    loop {
        if a == b {
            return true;
        }
        match idom[b.index()] {
            Some(d) => b = d,
            None => return false,
        }
    }
}

struct Checker<'a> {
    p: &'a Program,
    f: &'a Function,
    fi: usize,
}

impl Checker<'_> {
    fn type_err(&self, loc: Option<InstrLoc>, msg: String) -> Located {
        Located { err: IrError::Type { func: self.f.name.clone(), line: None, msg }, loc }
    }

    fn ssa_err(&self, loc: Option<InstrLoc>, msg: String) -> Located {
        Located { err: IrError::Ssa { func: self.f.name.clone(), line: None, msg }, loc }
    }

    fn run(&self) -> Result<(), Located> {
        let f = self.f;
        let nvals = f.values.len();
        let mut defined = vec![false; nvals];
        for &p in &f.params {
            if p.index() >= nvals {
                return Err(self.ssa_err(None, format!("parameter {} out of range", p.0)));
            }
            defined[p.index()] = true;
            if f.ty(p).is_vector() {
                return Err(self.type_err(None, "parameters must be scalars".into()));
            }
        }
        if f.ret.is_some_and(|t| t.is_vector()) {
            return Err(self.type_err(None, "return type must be a scalar".into()));
        }
        if f.is_extern {
            return Ok(());
        }
        if f.blocks.is_empty() {
            return Err(self.type_err(None, "function has no blocks".into()));
        }
        let nblocks = f.blocks.len();
        for (bi, b) in f.blocks.iter().enumerate() {
            let mut past_phis = false;
            for (ii, ins) in b.instrs.iter().enumerate() {
                let loc = Some(InstrLoc { func: self.fi, block: bi, index: ii });
                let last = ii + 1 == b.instrs.len();
                if ins.op.is_terminator() != last {
                    let msg = if last {
                        format!("block {} does not end with a terminator", b.label)
                    } else {
                        format!("terminator in the middle of block {}", b.label)
                    };
                    return Err(self.type_err(loc, msg));
                }
                if matches!(ins.op, Op::Phi { .. }) {
                    if past_phis {
                        return Err(self.type_err(loc, "phi after a non-phi instruction".into()));
                    }
                } else {
                    past_phis = true;
                }
                let mut bad = None;
                ins.op.for_each_operand(|v| {
                    if v.index() >= nvals {
                        bad = Some(v);
                    }
                });
                if let Some(v) = bad {
                    return Err(self.ssa_err(loc, format!("operand {} out of range", v.0)));
                }
                for s in ins.op.successors() {
                    if s.index() >= nblocks {
                        return Err(self.type_err(loc, format!("branch target {} out of range", s.0)));
                    }
                }
                if let Some(r) = ins.result {
                    if r.index() >= nvals {
                        return Err(self.ssa_err(loc, format!("result {} out of range", r.0)));
                    }
                    if defined[r.index()] {
                        let name = &f.value(r).name;
                        return Err(self.ssa_err(loc, format!("%{name} defined more than once")));
                    }
                    defined[r.index()] = true;
                }
                self.check_types(ins, loc)?;
            }
            if b.instrs.is_empty() {
                return Err(self.type_err(None, format!("block {} is empty", b.label)));
            }
        }
        self.check_ssa()
    }

    fn name(&self, v: ValueId) -> String {
        format!("%{}", self.f.value(v).name)
    }

    fn expect(&self, loc: Option<InstrLoc>, v: ValueId, t: Type) -> Result<(), Located> {
        let actual = self.f.ty(v);
        if actual != t {
            return Err(self.type_err(loc, format!("{} has type {actual}, expected {t}", self.name(v))));
        }
        Ok(())
    }

    fn check_types(&self, ins: &super::Instr, loc: Option<InstrLoc>) -> Result<(), Located> {
        let f = self.f;
        let ty = |v: ValueId| f.ty(v);
        let rty = ins.result.map(ty);
        let needs_result = !matches!(
            ins.op,
            Op::Store { .. } | Op::Br { .. } | Op::Brp { .. } | Op::Jmp { .. } | Op::Ret { .. } | Op::Call { .. }
        );
        if needs_result != rty.is_some() && !matches!(ins.op, Op::Call { .. }) {
            let what = if needs_result { "must define a value" } else { "cannot define a value" };
            return Err(self.type_err(loc, format!("{:?} {what}", ins.opcode()).to_lowercase()));
        }
        let err = |msg: String| Err(self.type_err(loc, msg));
        match &ins.op {
            Op::Const { bits } => {
                let t = rty.expect("checked").elem();
                if t.is_int() && bits & !t.mask() != 0 {
                    return err(format!("constant does not fit {t}"));
                }
            }
            Op::Bin { op, lhs, rhs } => {
                let t = rty.expect("checked");
                self.expect(loc, *lhs, t)?;
                self.expect(loc, *rhs, t)?;
                if op.is_float() != t.elem().is_float() {
                    return err(format!("{} is not defined on {t}", op.name()));
                }
                let _ = BinOp::ALL;
            }
            Op::Neg { arg } | Op::Copy { arg } => self.expect(loc, *arg, rty.expect("checked"))?,
            Op::Cast { op, arg } => {
                let (a, r) = (ty(*arg), rty.expect("checked"));
                if a.is_vector() != r.is_vector() || !a.elem().is_int() || !r.elem().is_int() {
                    return err(format!("cannot {} {a} to {r}", op.name()));
                }
                let ok = match op {
                    CastOp::Trunc => r.elem().bits < a.elem().bits,
                    CastOp::ZExt | CastOp::SExt => r.elem().bits > a.elem().bits,
                };
                if !ok {
                    return err(format!("cannot {} {a} to {r}", op.name()));
                }
            }
            Op::Cmp { pred, lhs, rhs } => {
                let t = ty(*lhs);
                self.expect(loc, *rhs, t)?;
                self.expect(loc, ins.result.expect("checked"), t.with_elem(ScalarType::I8))?;
                if (pred.is_float() && !t.elem().is_float())
                    || ((pred.is_signed() || pred.is_unsigned()) && !t.elem().is_int())
                {
                    return err(format!("predicate {} is not defined on {t}", pred.name()));
                }
            }
            Op::Select { cond, on_true, on_false } => {
                let t = rty.expect("checked");
                self.expect(loc, *on_true, t)?;
                self.expect(loc, *on_false, t)?;
                let c = ty(*cond);
                if c.is_vector() != t.is_vector() || !c.elem().is_int() {
                    return err(format!("select condition has type {c}"));
                }
            }
            Op::Phi { incoming } => {
                let t = rty.expect("checked");
                if incoming.is_empty() {
                    return err("phi without incoming values".into());
                }
                for (v, _) in incoming {
                    self.expect(loc, *v, t)?;
                }
            }
            Op::Load { addr } => {
                self.expect(loc, *addr, ScalarType::I64.into())?;
                if rty.expect("checked").is_vector() {
                    return err("loads produce scalars".into());
                }
            }
            Op::Store { value, addr } => {
                self.expect(loc, *addr, ScalarType::I64.into())?;
                if ty(*value).is_vector() {
                    return err("stores take scalars".into());
                }
            }
            Op::Call { callee, args } => {
                let Some(g) = self.p.functions.get(callee.index()) else {
                    return err(format!("call to unknown function {}", callee.0));
                };
                if g.params.len() != args.len() {
                    return err(format!(
                        "@{} takes {} arguments, got {}",
                        g.name,
                        g.params.len(),
                        args.len()
                    ));
                }
                for (a, p) in args.iter().zip(&g.params) {
                    self.expect(loc, *a, g.ty(*p))?;
                }
                match (ins.result, g.ret) {
                    (Some(r), Some(t)) => self.expect(loc, r, t)?,
                    (Some(_), None) => return err(format!("@{} returns void", g.name)),
                    _ => {}
                }
            }
            Op::Extract { arg, lane } => {
                let a = ty(*arg);
                if !a.is_vector() || (*lane as usize) >= a.lanes() {
                    return err(format!("cannot extract lane {lane} from {a}"));
                }
                self.expect(loc, ins.result.expect("checked"), Type::Scalar(a.elem()))?;
            }
            Op::Broadcast { arg } => {
                let a = ty(*arg);
                if a.is_vector() || !a.elem().is_canonical() {
                    return err(format!("cannot broadcast {a}"));
                }
                self.expect(loc, ins.result.expect("checked"), Type::Vector(a.elem()))?;
            }
            Op::Shuffle { arg } | Op::Recover { arg, .. } => {
                let t = rty.expect("checked");
                if !t.is_vector() {
                    return err(format!("{:?} needs a vector", ins.opcode()).to_lowercase());
                }
                self.expect(loc, *arg, t)?;
            }
            Op::Ptest { arg } => {
                let a = ty(*arg);
                if !a.is_vector() || !a.elem().is_int() {
                    return err(format!("ptest needs an integer vector, got {a}"));
                }
                self.expect(loc, ins.result.expect("checked"), ScalarType::I8.into())?;
            }
            Op::Vote { a, b, c } => {
                let t = rty.expect("checked");
                for v in [a, b, c] {
                    self.expect(loc, *v, t)?;
                }
            }
            Op::Br { cond, .. } => {
                let c = ty(*cond);
                let ok = match c {
                    Type::Scalar(s) => s.is_int(),
                    Type::Vector(s) => s == ScalarType::I8,
                };
                if !ok {
                    return err(format!("branch condition has type {c}"));
                }
            }
            Op::Brp { test, .. } => self.expect(loc, *test, ScalarType::I8.into())?,
            Op::Jmp { .. } => {}
            Op::Ret { value } => match (value, f.ret) {
                (Some(v), Some(t)) => self.expect(loc, *v, t)?,
                (None, None) => {}
                (Some(_), None) => return err("void function returns a value".into()),
                (None, Some(t)) => return err(format!("missing return value of type {t}")),
            },
        }
        Ok(())
    }

    fn check_ssa(&self) -> Result<(), Located> {
        let f = self.f;
        let (idom, reachable) = dominators(f);
        let preds = f.predecessors();
        let sites = f.def_sites();
        let is_param = |v: ValueId| f.params.contains(&v);
        for (bi, b) in f.blocks.iter().enumerate() {
            if !reachable[bi] {
                continue;
            }
            let here = BlockId(bi as u32);
            for (ii, ins) in b.instrs.iter().enumerate() {
                let loc = Some(InstrLoc { func: self.fi, block: bi, index: ii });
                if let Op::Phi { incoming } = &ins.op {
                    let reachable_preds: Vec<BlockId> =
                        preds[bi].iter().copied().filter(|p| reachable[p.index()]).collect();
                    for p in &reachable_preds {
                        if !incoming.iter().any(|(_, ib)| ib == p) {
                            let label = &f.blocks[p.index()].label;
                            return Err(self.ssa_err(loc, format!("phi has no entry for predecessor {label}")));
                        }
                    }
                    for (v, ib) in incoming {
                        if !preds[bi].contains(ib) {
                            let label = &f.blocks[ib.index()].label;
                            return Err(self.ssa_err(loc, format!("phi entry for {label}, which is not a predecessor")));
                        }
                        if !reachable[ib.index()] || is_param(*v) {
                            continue;
                        }
                        match sites[v.index()] {
                            Some((db, _)) if dominates(&idom, db, *ib) => {}
                            _ => {
                                return Err(self.ssa_err(
                                    loc,
                                    format!("{} does not dominate the edge from {}", self.name(*v), f.blocks[ib.index()].label),
                                ))
                            }
                        }
                    }
                    continue;
                }
                let mut bad = None;
                ins.op.for_each_operand(|v| {
                    if bad.is_some() || is_param(v) {
                        return;
                    }
                    let ok = match sites[v.index()] {
                        Some((db, di)) if db == here => di < ii,
                        Some((db, _)) => reachable[db.index()] && dominates(&idom, db, here),
                        None => false,
                    };
                    if !ok {
                        bad = Some(v);
                    }
                });
                if let Some(v) = bad {
                    let msg = if sites[v.index()].is_none() {
                        format!("use of undefined value {}", self.name(v))
                    } else {
                        format!("use of {} is not dominated by its definition", self.name(v))
                    };
                    return Err(self.ssa_err(loc, msg));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::parse_program;

    #[test]
    fn rejects_missing_terminator() {
        let err = parse_program("func @main() -> void {\nentry:\n  %a = const i64 1\n}").unwrap_err();
        assert_eq!(err.kind(), "type");
    }

    #[test]
    fn rejects_use_across_non_dominating_branch() {
        let src = "func @main(%c: i8) -> i64 {
entry:
  br %c, @a, @b
a:
  %x = const i64 1
  jmp @b
b:
  ret %x
}";
        let err = parse_program(src).unwrap_err();
        assert_eq!(err.kind(), "ssa");
        assert_eq!(err.line(), Some(8));
    }

    #[test]
    fn accepts_loop_phi() {
        let src = "func @main() -> i64 {
entry:
  %z = const i64 0
  %one = const i64 1
  %n = const i64 10
  jmp @loop
loop:
  %i = phi i64 [%z, @entry], [%i2, @loop]
  %i2 = add i64 %i, %one
  %c = cmp slt i64 %i2, %n
  br %c, @loop, @done
done:
  ret %i2
}";
        parse_program(src).unwrap();
    }

    #[test]
    fn phi_must_cover_predecessors() {
        let src = "func @main(%c: i8) -> i64 {
entry:
  %z = const i64 0
  br %c, @a, @b
a:
  jmp @b
b:
  %p = phi i64 [%z, @entry]
  ret %p
}";
        assert_eq!(parse_program(src).unwrap_err().kind(), "ssa");
    }

    #[test]
    fn call_arity() {
        let src = "func @f(%a: i64) -> i64 { entry: ret %a }
func @main() -> i64 { entry: %r = call @f() ret %r }";
        assert_eq!(parse_program(src).unwrap_err().kind(), "type");
    }
}
