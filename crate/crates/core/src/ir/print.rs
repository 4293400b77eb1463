use std::fmt::Write;

use super::{
    ExtMode, Function, Instr, Op, Origin, Program, ScalarKind, ScalarType, Tag, Type, ValueId,
    Widening,
};

/// Renders a program in the textual IR format. Output is deterministic and
/// parses back to a structurally equal program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if p.entry != "main" {
        let _ = writeln!(out, "entry @{}", p.entry);
    }
    for seg in &p.data {
        let hex: String = seg.bytes.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(out, "data {} \"{}\"", seg.offset, hex);
    }
    if !p.data.is_empty() || p.entry != "main" {
        out.push('\n');
    }
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_function(&mut out, p, f);
    }
    out
}

fn print_function(out: &mut String, p: &Program, f: &Function) {
    if f.is_extern {
        out.push_str("extern ");
    }
    let _ = write!(out, "func @{}(", f.name);
    for (i, &param) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let def = f.value(param);
        let _ = write!(out, "%{}: {}", def.name, def.ty);
        if let Some(w) = def.widened {
            push_widening(out, w);
        }
    }
    out.push_str(") -> ");
    match f.ret {
        Some(t) => {
            let _ = write!(out, "{t}");
        }
        None => out.push_str("void"),
    }
    if f.is_extern {
        out.push('\n');
        return;
    }
    out.push_str(" {\n");
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for ins in &b.instrs {
            out.push_str("  ");
            print_instr(out, p, f, ins);
            out.push('\n');
        }
    }
    out.push_str("}\n");
}

fn name(f: &Function, v: ValueId) -> String {
    format!("%{}", f.value(v).name)
}

fn label(f: &Function, b: super::BlockId) -> String {
    format!("@{}", f.blocks[b.index()].label)
}

pub(crate) fn format_literal(t: ScalarType, bits: u64) -> String {
    match t.kind {
        ScalarKind::Int => {
            let shift = 64 - t.bits as u32;
            let signed = ((bits << shift) as i64) >> shift;
            signed.to_string()
        }
        ScalarKind::Float => {
            if t.bits == 32 {
                let v = f32::from_bits(bits as u32);
                if v.is_finite() {
                    format!("{v:?}")
                } else {
                    format!("0x{:08x}", bits as u32)
                }
            } else {
                let v = f64::from_bits(bits);
                if v.is_finite() {
                    format!("{v:?}")
                } else {
                    format!("0x{bits:016x}")
                }
            }
        }
    }
}

fn push_widening(out: &mut String, w: Widening) {
    let mode = match w.mode {
        ExtMode::Zero => "zext",
        ExtMode::Sign => "sext",
    };
    let _ = write!(out, " !widened:i{}:{}", w.from_bits, mode);
}

fn push_origin(out: &mut String, o: Origin) {
    if o.tag == Tag::Original && o.site == super::Site::None {
        return;
    }
    let _ = write!(out, " !{}", o.tag.name());
    if o.site != super::Site::None {
        let _ = write!(out, ":{}", o.site.name());
    }
}

fn print_instr(out: &mut String, p: &Program, f: &Function, ins: &Instr) {
    let rty = ins.result.map(|r| f.ty(r));
    if let Some(r) = ins.result {
        let _ = write!(out, "{} = ", name(f, r));
    }
    let ty = |t: Option<Type>| t.map(|t| t.to_string()).unwrap_or_default();
    match &ins.op {
        Op::Const { bits } => {
            let t = rty.expect("const has a result");
            let _ = write!(out, "const {} {}", t, format_literal(t.elem(), *bits));
        }
        Op::Bin { op, lhs, rhs } => {
            let _ = write!(out, "{} {} {}, {}", op.name(), ty(rty), name(f, *lhs), name(f, *rhs));
        }
        Op::Neg { arg } => {
            let _ = write!(out, "neg {} {}", ty(rty), name(f, *arg));
        }
        Op::Cast { op, arg } => {
            let _ = write!(out, "{} {} {}", op.name(), ty(rty), name(f, *arg));
        }
        Op::Cmp { pred, lhs, rhs } => {
            let _ = write!(
                out,
                "cmp {} {} {}, {}",
                pred.name(),
                f.ty(*lhs),
                name(f, *lhs),
                name(f, *rhs)
            );
        }
        Op::Select { cond, on_true, on_false } => {
            let _ = write!(
                out,
                "select {} {}, {}, {}",
                ty(rty),
                name(f, *cond),
                name(f, *on_true),
                name(f, *on_false)
            );
        }
        Op::Phi { incoming } => {
            let _ = write!(out, "phi {}", ty(rty));
            for (i, (v, b)) in incoming.iter().enumerate() {
                out.push_str(if i == 0 { " " } else { ", " });
                let _ = write!(out, "[{}, {}]", name(f, *v), label(f, *b));
            }
        }
        Op::Copy { arg } => {
            let _ = write!(out, "copy {} {}", ty(rty), name(f, *arg));
        }
        Op::Load { addr } => {
            let _ = write!(out, "load {} {}", ty(rty), name(f, *addr));
        }
        Op::Store { value, addr } => {
            let _ = write!(out, "store {} {}, {}", f.ty(*value), name(f, *value), name(f, *addr));
        }
        Op::Call { callee, args } => {
            let _ = write!(out, "call @{}(", p.functions[callee.index()].name);
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&name(f, *a));
            }
            out.push(')');
        }
        Op::Extract { arg, lane } => {
            let _ = write!(out, "extract {} {}, {}", f.ty(*arg), name(f, *arg), lane);
        }
        Op::Broadcast { arg } => {
            let _ = write!(out, "broadcast {} {}", ty(rty), name(f, *arg));
        }
        Op::Shuffle { arg } => {
            let _ = write!(out, "shuffle {} {}", ty(rty), name(f, *arg));
        }
        Op::Ptest { arg } => {
            let _ = write!(out, "ptest {} {}", f.ty(*arg), name(f, *arg));
        }
        Op::Recover { arg, mode } => {
            let _ = write!(out, "recover {} {}, {}", ty(rty), name(f, *arg), mode.name());
        }
        Op::Vote { a, b, c } => {
            let _ = write!(
                out,
                "vote {} {}, {}, {}",
                ty(rty),
                name(f, *a),
                name(f, *b),
                name(f, *c)
            );
        }
        Op::Br { cond, on_true, on_false } => {
            let _ = write!(
                out,
                "br {}, {}, {}",
                name(f, *cond),
                label(f, *on_true),
                label(f, *on_false)
            );
        }
        Op::Brp { test, all_true, all_false, mix } => {
            let _ = write!(
                out,
                "brp {}, {}, {}, {}",
                name(f, *test),
                label(f, *all_true),
                label(f, *all_false),
                label(f, *mix)
            );
        }
        Op::Jmp { target } => {
            let _ = write!(out, "jmp {}", label(f, *target));
        }
        Op::Ret { value } => {
            out.push_str("ret");
            if let Some(v) = value {
                let _ = write!(out, " {}", name(f, *v));
            }
        }
    }
    push_origin(out, ins.origin);
    if let Some(w) = ins.result.and_then(|r| f.value(r).widened) {
        push_widening(out, w);
    }
}
