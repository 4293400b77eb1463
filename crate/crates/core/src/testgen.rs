//! Random structured programs for differential testing.
//!
//! Generated programs always validate and terminate. Control flow nests
//! if/else diamonds inside counted loops. Divisors are forced odd and
//! addresses are masked into an aligned scratch window.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    /// Also use integer widths that are not a power of two, such as `i12`.
    pub odd_widths: bool,
    pub floats: bool,
    pub memory: bool,
    pub calls: bool,
    pub max_depth: u32,
    pub ops_per_region: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { odd_widths: true, floats: true, memory: true, calls: true, max_depth: 2, ops_per_region: 6 }
    }
}

const POW2: [u8; 4] = [8, 16, 32, 64];
const ODD: [u8; 5] = [3, 12, 20, 33, 47];
const SCRATCH: u64 = 4096;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Ty {
    I(u8),
    F64,
}

impl Ty {
    fn text(self) -> String {
        match self {
            Ty::I(b) => format!("i{b}"),
            Ty::F64 => "f64".into(),
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    out: String,
    next: usize,
    labels: usize,
    /// Label of the block currently being filled.
    cur: String,
    widths: Vec<u8>,
}

/// Values visible at the current point, scoped by region nesting.
#[derive(Clone, Default)]
struct Scope {
    vals: Vec<(String, Ty)>,
}

impl Scope {
    fn of(&self, t: Ty) -> Vec<&String> {
        self.vals.iter().filter(|(_, ty)| *ty == t).map(|(n, _)| n).collect()
    }
}

/// Produces a program whose only entry point is `@main() -> i64`.
pub fn generate(seed: u64, cfg: &GenConfig) -> String {
    let mut widths = POW2.to_vec();
    if cfg.odd_widths {
        widths.extend(ODD);
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        cfg: *cfg,
        out: String::new(),
        next: 0,
        labels: 0,
        cur: "entry".into(),
        widths,
    };
    g.program();
    g.out
}

impl Gen {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str("  ");
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn fresh(&mut self, base: &str) -> String {
        self.next += 1;
        format!("%{base}{}", self.next)
    }

    fn label(&mut self, base: &str) -> String {
        self.labels += 1;
        format!("{base}{}", self.labels)
    }

    fn start_block(&mut self, l: &str) {
        let _ = writeln!(self.out, "{l}:");
        self.cur = l.to_string();
    }

    fn def(&mut self, sc: &mut Scope, t: Ty, rhs: String) -> String {
        let v = self.fresh("v");
        self.line(format!("{v} = {rhs}"));
        sc.vals.push((v.clone(), t));
        v
    }

    fn int_ty(&mut self) -> Ty {
        Ty::I(*self.widths.choose(&mut self.rng).unwrap())
    }

    fn any_ty(&mut self) -> Ty {
        if self.cfg.floats && self.rng.gen_bool(0.2) {
            Ty::F64
        } else {
            self.int_ty()
        }
    }

    fn constant(&mut self, sc: &mut Scope, t: Ty) -> String {
        let lit = match t {
            Ty::F64 => format!("{:?}", self.rng.gen_range(-50.0f64..50.0)),
            Ty::I(b) => {
                let raw: u64 = if self.rng.gen_bool(0.5) { self.rng.gen_range(0..16) } else { self.rng.gen() };
                let shift = 64 - b as u32;
                (((raw << shift) as i64) >> shift).to_string()
            }
        };
        self.def(sc, t, format!("const {} {lit}", t.text()))
    }

    /// An existing value of type `t`, or a new constant.
    fn operand(&mut self, sc: &mut Scope, t: Ty) -> String {
        let c = sc.of(t);
        if !c.is_empty() && self.rng.gen_bool(0.85) {
            return c.choose(&mut self.rng).unwrap().to_string();
        }
        if let Ty::I(b) = t {
            // Convert from another integer value when possible.
            let others: Vec<(String, u8)> = sc
                .vals
                .iter()
                .filter_map(|(n, ty)| match ty {
                    Ty::I(ob) if *ob != b => Some((n.clone(), *ob)),
                    _ => None,
                })
                .collect();
            if let Some((n, ob)) = others.choose(&mut self.rng).cloned() {
                let op = if ob > b { "trunc" } else if self.rng.gen() { "sext" } else { "zext" };
                return self.def(sc, t, format!("{op} {} {n}", t.text()));
            }
        }
        self.constant(sc, t)
    }

    fn cmp(&mut self, sc: &mut Scope) -> String {
        let t = self.any_ty();
        let a = self.operand(sc, t);
        let b = self.operand(sc, t);
        let preds: &[&str] = match t {
            Ty::F64 => &["oeq", "one", "olt", "ole", "ogt", "oge"],
            Ty::I(_) => &["eq", "ne", "slt", "sle", "sgt", "sge", "ult", "ule", "ugt", "uge"],
        };
        let p = preds.choose(&mut self.rng).unwrap();
        self.def(sc, Ty::I(8), format!("cmp {p} {} {a}, {b}", t.text()))
    }

    fn arith(&mut self, sc: &mut Scope) -> String {
        let t = self.any_ty();
        match t {
            Ty::F64 => {
                let a = self.operand(sc, t);
                let b = self.operand(sc, t);
                let op = ["fadd", "fsub", "fmul", "fadd"].choose(&mut self.rng).unwrap();
                if self.rng.gen_bool(0.1) {
                    self.def(sc, t, format!("neg f64 {a}"))
                } else {
                    self.def(sc, t, format!("{op} f64 {a}, {b}"))
                }
            }
            Ty::I(_) => {
                let ts = t.text();
                let a = self.operand(sc, t);
                let b = self.operand(sc, t);
                match self.rng.gen_range(0..12) {
                    0..=7 => {
                        let op = ["add", "sub", "mul", "and", "or", "xor", "shl", "shr"][self.rng.gen_range(0..8)];
                        self.def(sc, t, format!("{op} {ts} {a}, {b}"))
                    }
                    8 | 9 => {
                        let one = self.def(sc, t, format!("const {ts} 1"));
                        let d = self.def(sc, t, format!("or {ts} {b}, {one}"));
                        let op = if self.rng.gen() { "div" } else { "rem" };
                        self.def(sc, t, format!("{op} {ts} {a}, {d}"))
                    }
                    10 => self.def(sc, t, format!("neg {ts} {a}")),
                    _ => {
                        let c = self.cmp(sc);
                        self.def(sc, t, format!("select {ts} {c}, {a}, {b}"))
                    }
                }
            }
        }
    }

    fn address(&mut self, sc: &mut Scope) -> String {
        let x = self.operand(sc, Ty::I(64));
        let mask = self.def(sc, Ty::I(64), "const i64 504".into());
        let base = self.def(sc, Ty::I(64), format!("const i64 {SCRATCH}"));
        let off = self.def(sc, Ty::I(64), format!("and i64 {x}, {mask}"));
        self.def(sc, Ty::I(64), format!("add i64 {off}, {base}"))
    }

    fn memory(&mut self, sc: &mut Scope) {
        let a = self.address(sc);
        if self.rng.gen() {
            let v = self.operand(sc, Ty::I(64));
            self.line(format!("store i64 {v}, {a}"));
        } else {
            self.def(sc, Ty::I(64), format!("load i64 {a}"));
        }
    }

    fn call(&mut self, sc: &mut Scope) {
        let a = self.operand(sc, Ty::I(64));
        let b = self.operand(sc, Ty::I(64));
        self.def(sc, Ty::I(64), format!("call @helper({a}, {b})"));
    }

    fn straight(&mut self, sc: &mut Scope) {
        let n = self.rng.gen_range(1..=self.cfg.ops_per_region);
        for _ in 0..n {
            match self.rng.gen_range(0..10) {
                0 | 1 if self.cfg.memory => self.memory(sc),
                2 if self.cfg.calls => self.call(sc),
                _ => {
                    self.arith(sc);
                }
            }
        }
    }

    /// Emits a region and returns with `self.cur` set to its last block.
    fn region(&mut self, sc: &mut Scope, depth: u32) {
        self.straight(sc);
        if depth < self.cfg.max_depth {
            match self.rng.gen_range(0..4) {
                0 => self.diamond(sc, depth),
                1 => self.counted_loop(sc, depth),
                _ => {}
            }
            self.straight(sc);
        }
    }

    fn diamond(&mut self, sc: &mut Scope, depth: u32) {
        let c = self.cmp(sc);
        let (t, f, m) = (self.label("then"), self.label("else"), self.label("join"));
        self.line(format!("br {c}, @{t}, @{f}"));
        let ty = self.any_ty();
        let mut arms = Vec::new();
        for l in [&t, &f] {
            self.start_block(l);
            let mut inner = sc.clone();
            self.region(&mut inner, depth + 1);
            let v = self.operand(&mut inner, ty);
            arms.push((v, self.cur.clone()));
            self.line(format!("jmp @{m}"));
        }
        self.start_block(&m);
        let phi = format!("phi {} [{}, @{}], [{}, @{}]", ty.text(), arms[0].0, arms[0].1, arms[1].0, arms[1].1);
        self.def(sc, ty, phi);
    }

    fn counted_loop(&mut self, sc: &mut Scope, depth: u32) {
        let ty = self.int_ty();
        let ts = ty.text();
        let init = self.operand(sc, ty);
        let zero = self.def(sc, Ty::I(64), "const i64 0".into());
        let one = self.def(sc, Ty::I(64), "const i64 1".into());
        let trip = self.rng.gen_range(1..=6);
        let n = self.def(sc, Ty::I(64), format!("const i64 {trip}"));
        let (h, b, x) = (self.label("head"), self.label("body"), self.label("exit"));
        let pre = self.cur.clone();
        self.line(format!("jmp @{h}"));
        self.start_block(&h);
        let i = self.fresh("i");
        let acc = self.fresh("acc");
        let i2 = self.fresh("i");
        let acc2 = self.fresh("acc");
        let latch_marker = self.out.len();
        self.line(format!("{i} = phi i64 [{zero}, @{pre}], [{i2}, @LATCH]"));
        self.line(format!("{acc} = phi {ts} [{init}, @{pre}], [{acc2}, @LATCH]"));
        let c = self.fresh("c");
        self.line(format!("{c} = cmp slt i64 {i}, {n}"));
        self.line(format!("br {c}, @{b}, @{x}"));
        self.start_block(&b);
        let mut inner = sc.clone();
        inner.vals.push((i.clone(), Ty::I(64)));
        inner.vals.push((acc.clone(), ty));
        self.region(&mut inner, depth + 1);
        let v = self.operand(&mut inner, ty);
        let op = ["add", "xor", "mul", "sub"].choose(&mut self.rng).unwrap();
        self.line(format!("{acc2} = {op} {ts} {acc}, {v}"));
        self.line(format!("{i2} = add i64 {i}, {one}"));
        self.line(format!("jmp @{h}"));
        let latch = self.cur.clone();
        let tail = self.out.split_off(latch_marker);
        self.out.push_str(&tail.replacen("@LATCH", &format!("@{latch}"), 2));
        self.start_block(&x);
        sc.vals.push((i, Ty::I(64)));
        sc.vals.push((acc, ty));
    }

    fn helper(&mut self) {
        self.out.push_str("func @helper(%p: i64, %q: i64) -> i64 {\n");
        self.start_block("entry");
        let mut sc = Scope { vals: vec![("%p".into(), Ty::I(64)), ("%q".into(), Ty::I(64))] };
        let outer = self.cfg;
        self.cfg = GenConfig { calls: false, max_depth: 1, ..outer };
        self.region(&mut sc, 0);
        let r = self.operand(&mut sc, Ty::I(64));
        self.cfg = outer;
        self.line(format!("ret {r}"));
        self.out.push_str("}\n\n");
    }

    fn program(&mut self) {
        self.out.push_str("extern func @print(%v: i64) -> void\n");
        self.out.push_str("extern func @print_f64(%v: f64) -> void\n\n");
        if self.cfg.calls {
            self.helper();
        }
        self.out.push_str("func @main() -> i64 {\n");
        self.start_block("entry");
        let mut sc = Scope::default();
        self.region(&mut sc, 0);
        // Print a sample of what survived to the end.
        let mut shown = sc.vals.clone();
        shown.shuffle(&mut self.rng);
        shown.truncate(6);
        for (v, t) in shown {
            match t {
                Ty::F64 => self.line(format!("call @print_f64({v})")),
                Ty::I(64) => self.line(format!("call @print({v})")),
                Ty::I(_) => {
                    let w = self.fresh("w");
                    self.line(format!("{w} = sext i64 {v}"));
                    self.line(format!("call @print({w})"));
                }
            }
        }
        let r = self.operand(&mut sc, Ty::I(64));
        self.line(format!("ret {r}"));
        self.out.push_str("}\n");
    }
}
