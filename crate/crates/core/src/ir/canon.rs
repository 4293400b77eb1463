//! Widening of non-canonical integer types.
//!
//! A value of type `iN` with `N` not in {8, 16, 32, 64} is carried in the
//! next canonical width `W`. Each such value picks a normalization mode: sign
//! mode (upper bits replicate bit `N-1`) if it ever feeds a `sext`, zero mode
//! otherwise. Values joined by a phi share a mode. Every instruction that can
//! disturb the upper bits is followed by a renormalization, and uses whose
//! meaning depends on the upper bits get an explicit mode conversion.

use std::collections::{HashMap, HashSet};

use super::{
    validate, BinOp, CastOp, ExtMode, Function, Instr, IrError, Op, Program, ScalarType, Type,
    ValueId, Widening,
};

/// Rewrites every non-canonical integer type to a canonical width while
/// preserving `iN` semantics. Programs that are already canonical are
/// returned unchanged.
pub fn canonicalize_types(p: &Program) -> Result<Program, IrError> {
    for f in &p.functions {
        for v in &f.values {
            let e = v.ty.elem();
            if e.is_float() && !e.is_canonical() {
                return Err(IrError::Unsupported {
                    ty: e.to_string(),
                    msg: "unsupported float width".into(),
                });
            }
        }
    }
    if p.is_canonical() {
        return Ok(p.clone());
    }
    let mut out = p.clone();
    for f in &mut out.functions {
        canon_function(f);
    }
    validate(&out)?;
    Ok(out)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

struct Ctx<'a> {
    f: &'a mut Function,
    names: HashSet<String>,
    consts: HashMap<(Type, u64), ValueId>,
    const_instrs: Vec<Instr>,
    /// Original width of each narrow value (indexed by pre-pass value id).
    narrow: Vec<Option<u8>>,
    mode: Vec<ExtMode>,
}

impl Ctx<'_> {
    fn fresh(&mut self, base: &str, ty: Type) -> ValueId {
        let mut k = 0;
        let name = loop {
            let cand = format!("{base}.n{k}");
            if !self.names.contains(&cand) {
                break cand;
            }
            k += 1;
        };
        self.names.insert(name.clone());
        self.f.add_value(name, ty)
    }

    fn konst(&mut self, ty: Type, bits: u64) -> ValueId {
        if let Some(&v) = self.consts.get(&(ty, bits)) {
            return v;
        }
        let v = self.fresh("k", ty);
        self.const_instrs.push(Instr::new(Some(v), Op::Const { bits }));
        self.consts.insert((ty, bits), v);
        v
    }

    fn narrow_of(&self, v: ValueId) -> Option<u8> {
        self.narrow.get(v.index()).copied().flatten()
    }

    /// Emits `dst = normalize(raw)` for an `n`-bit value held in a wider register.
    fn normalize(&mut self, out: &mut Vec<Instr>, raw: ValueId, dst: ValueId, n: u8, mode: ExtMode) {
        let t = self.f.ty(raw);
        let mask = self.konst(t, (1u64 << n) - 1);
        match mode {
            ExtMode::Zero => {
                out.push(Instr::new(Some(dst), Op::Bin { op: BinOp::And, lhs: raw, rhs: mask }));
            }
            ExtMode::Sign => {
                let sb = self.konst(t, 1u64 << (n - 1));
                let base = self.f.value(dst).name.clone();
                let m = self.fresh(&base, t);
                let x = self.fresh(&base, t);
                out.push(Instr::new(Some(m), Op::Bin { op: BinOp::And, lhs: raw, rhs: mask }));
                out.push(Instr::new(Some(x), Op::Bin { op: BinOp::Xor, lhs: m, rhs: sb }));
                out.push(Instr::new(Some(dst), Op::Bin { op: BinOp::Sub, lhs: x, rhs: sb }));
            }
        }
    }

    /// Returns `v` in the requested mode, converting if necessary.
    fn convert(&mut self, out: &mut Vec<Instr>, v: ValueId, want: ExtMode) -> ValueId {
        let Some(n) = self.narrow_of(v) else { return v };
        if self.mode[v.index()] == want {
            return v;
        }
        let t = self.f.ty(v);
        let base = self.f.value(v).name.clone();
        let d = self.fresh(&base, t);
        self.f.values[d.index()].widened = Some(Widening { from_bits: n, mode: want });
        self.normalize(out, v, d, n, want);
        d
    }

    fn mode_of(&self, v: ValueId) -> ExtMode {
        self.mode.get(v.index()).copied().unwrap_or(ExtMode::Zero)
    }
}

fn canon_function(f: &mut Function) {
    let n = f.values.len();
    let narrow: Vec<Option<u8>> = f
        .values
        .iter()
        .map(|v| {
            let e = v.ty.elem();
            (e.is_int() && !e.is_canonical()).then_some(e.bits)
        })
        .collect();
    if narrow.iter().all(Option::is_none) {
        return;
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut sext_src = Vec::new();
    for b in &f.blocks {
        for ins in &b.instrs {
            match &ins.op {
                Op::Phi { incoming } => {
                    let r = ins.result.expect("phi result").index();
                    for (v, _) in incoming {
                        let (a, c) = (find(&mut parent, r), find(&mut parent, v.index()));
                        parent[a] = c;
                    }
                }
                Op::Cast { op: CastOp::SExt, arg } => sext_src.push(arg.index()),
                _ => {}
            }
        }
    }
    let mut sign = vec![false; n];
    for s in sext_src {
        let r = find(&mut parent, s);
        sign[r] = true;
    }
    let mode: Vec<ExtMode> = (0..n)
        .map(|v| if sign[find(&mut parent, v)] { ExtMode::Sign } else { ExtMode::Zero })
        .collect();

    for (i, v) in f.values.iter_mut().enumerate() {
        if let Some(bits) = narrow[i] {
            let w = ScalarType::canonical_int_width(bits);
            v.ty = v.ty.with_elem(ScalarType::int(w));
            v.widened = Some(Widening { from_bits: bits, mode: mode[i] });
        }
    }
    if f.is_extern {
        return;
    }

    let names = f.values.iter().map(|v| v.name.clone()).collect();
    let blocks = std::mem::take(&mut f.blocks);
    let params = f.params.clone();
    let mut cx = Ctx { f, names, consts: HashMap::new(), const_instrs: Vec::new(), narrow, mode };

    let mut prologue = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if let Some(bits) = cx.narrow_of(*p) {
            let t = cx.f.ty(*p);
            let base = cx.f.value(*p).name.clone();
            let raw = cx.fresh(&base, t);
            cx.f.params[i] = raw;
            let m = cx.mode_of(*p);
            cx.normalize(&mut prologue, raw, *p, bits, m);
        }
    }

    let mut new_blocks = Vec::with_capacity(blocks.len());
    for mut b in blocks {
        let mut out = Vec::with_capacity(b.instrs.len());
        for ins in b.instrs.drain(..) {
            rewrite(&mut cx, &mut out, ins);
        }
        b.instrs = out;
        new_blocks.push(b);
    }
    let mut entry_prefix = std::mem::take(&mut cx.const_instrs);
    entry_prefix.extend(prologue);
    let entry = &mut new_blocks[0].instrs;
    let at = entry.iter().take_while(|i| matches!(i.op, Op::Phi { .. })).count();
    entry.splice(at..at, entry_prefix);
    cx.f.blocks = new_blocks;
    cx.f.renumber();
}

fn rewrite(cx: &mut Ctx<'_>, out: &mut Vec<Instr>, mut ins: Instr) {
    let result_bits = ins.result.and_then(|r| cx.narrow_of(r));
    let renormalize = result_bits.is_some()
        && !matches!(
            ins.op,
            Op::Phi { .. } | Op::Const { .. } | Op::Select { .. } | Op::Copy { .. } | Op::Vote { .. }
        );
    match &mut ins.op {
        Op::Const { bits } => {
            if let (Some(nb), Some(r)) = (result_bits, ins.result) {
                if cx.mode_of(r) == ExtMode::Sign && *bits >> (nb - 1) & 1 == 1 {
                    *bits |= !((1u64 << nb) - 1);
                    *bits &= cx.f.ty(r).elem().mask();
                }
            }
        }
        Op::Cast { op, arg } => {
            let a = match op {
                CastOp::SExt => cx.convert(out, *arg, ExtMode::Sign),
                CastOp::ZExt => cx.convert(out, *arg, ExtMode::Zero),
                CastOp::Trunc => *arg,
            };
            let r = ins.result.expect("cast result");
            if cx.f.ty(a).elem().bits == cx.f.ty(r).elem().bits {
                ins.op = Op::Copy { arg: a };
            } else {
                *arg = a;
            }
        }
        Op::Cmp { pred, lhs, rhs } => {
            if pred.is_signed() || pred.is_unsigned() {
                let m = if pred.is_signed() { ExtMode::Sign } else { ExtMode::Zero };
                *lhs = cx.convert(out, *lhs, m);
                *rhs = cx.convert(out, *rhs, m);
            } else if !pred.is_float() && cx.narrow_of(*lhs).is_some() {
                let m = cx.mode_of(*lhs);
                *rhs = cx.convert(out, *rhs, m);
            }
        }
        Op::Bin { op: BinOp::Div | BinOp::Rem, lhs, rhs } => {
            *lhs = cx.convert(out, *lhs, ExtMode::Sign);
            *rhs = cx.convert(out, *rhs, ExtMode::Sign);
        }
        Op::Bin { op: op @ (BinOp::Shl | BinOp::Shr), lhs, rhs } => {
            if *op == BinOp::Shr {
                *lhs = cx.convert(out, *lhs, ExtMode::Zero);
            }
            if let Some(nb) = cx.narrow_of(*rhs) {
                let amt = cx.convert(out, *rhs, ExtMode::Zero);
                let t = cx.f.ty(amt);
                let width = cx.konst(t, nb as u64);
                let base = cx.f.value(*rhs).name.clone();
                let r = cx.fresh(&base, t);
                out.push(Instr::new(Some(r), Op::Bin { op: BinOp::Rem, lhs: amt, rhs: width }));
                *rhs = r;
            }
        }
        Op::Select { on_true, on_false, .. } => {
            if let Some(r) = ins.result.filter(|r| cx.narrow_of(*r).is_some()) {
                let m = cx.mode_of(r);
                *on_true = cx.convert(out, *on_true, m);
                *on_false = cx.convert(out, *on_false, m);
            }
        }
        Op::Copy { arg } => {
            if let Some(r) = ins.result.filter(|r| cx.narrow_of(*r).is_some()) {
                let m = cx.mode_of(r);
                *arg = cx.convert(out, *arg, m);
            }
        }
        Op::Vote { a, b, c } => {
            if let Some(r) = ins.result.filter(|r| cx.narrow_of(*r).is_some()) {
                let m = cx.mode_of(r);
                for v in [a, b, c] {
                    *v = cx.convert(out, *v, m);
                }
            }
        }
        Op::Store { value, .. } => *value = cx.convert(out, *value, ExtMode::Zero),
        _ => {}
    }
    if renormalize {
        let r = ins.result.expect("renormalized instruction has a result");
        let t = cx.f.ty(r);
        let base = cx.f.value(r).name.clone();
        let raw = cx.fresh(&base, t);
        ins.result = Some(raw);
        out.push(ins);
        let nb = result_bits.expect("narrow");
        let m = cx.mode_of(r);
        cx.normalize(out, raw, r, nb, m);
    } else {
        out.push(ins);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_program, print_program};

    #[test]
    fn canonical_program_is_unchanged() {
        let p = parse_program("func @main() -> i64 { entry: %a = const i64 1 ret %a }").unwrap();
        assert_eq!(canonicalize_types(&p).unwrap(), p);
    }

    #[test]
    fn widens_and_annotates() {
        let src = "func @main(%x: i9) -> i64 {
entry:
  %y = add i9 %x, %x
  %z = sext i64 %y
  ret %z
}";
        let p = canonicalize_types(&parse_program(src).unwrap()).unwrap();
        assert!(p.is_canonical());
        let text = print_program(&p);
        assert!(text.contains("!widened:i9:sext"), "{text}");
        assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn sign_mode_constant_is_sign_extended() {
        let src = "func @main() -> i64 {
entry:
  %a = const i12 -1
  %b = sext i64 %a
  ret %b
}";
        let p = canonicalize_types(&parse_program(src).unwrap()).unwrap();
        let f = &p.functions[0];
        let a = f.values.iter().position(|v| v.name == "a").unwrap();
        let bits = f.blocks[0]
            .instrs
            .iter()
            .find_map(|i| match i.op {
                Op::Const { bits } if i.result == Some(ValueId(a as u32)) => Some(bits),
                _ => None,
            })
            .unwrap();
        assert_eq!(bits, 0xffff);
    }
}
