//! Scalar and lane-wise value semantics.
//!
//! A register is 256 bits stored as four little-endian words. A vector of
//! element width `w` keeps lane `i` in bits `[i*w, (i+1)*w)`. Scalars live in
//! the low bits of word 0 and are kept zero-extended from their width.
//!
//! When result and operand lane counts differ (conversions between widths,
//! masks produced by comparisons), result lane `j` reads operand lane
//! `j mod R_operand`.

use crate::ir::{BinOp, CastOp, CmpPred, PtestResult, RecoveryMode, ScalarType};

pub type Reg = [u64; 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trap {
    DivideByZero,
    OutOfBounds(u64),
    Misaligned(u64),
    CallDepth,
    UnknownExtern,
}

impl std::fmt::Display for Trap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trap::DivideByZero => write!(f, "division by zero"),
            Trap::OutOfBounds(a) => write!(f, "out-of-bounds access at {a:#x}"),
            Trap::Misaligned(a) => write!(f, "misaligned access at {a:#x}"),
            Trap::CallDepth => write!(f, "call depth limit exceeded"),
            Trap::UnknownExtern => write!(f, "call to unknown extern function"),
        }
    }
}

pub fn lanes_of(t: ScalarType) -> usize {
    256 / t.bits as usize
}

pub fn lane(r: &Reg, bits: u8, i: usize) -> u64 {
    let start = i * bits as usize;
    let (w, s) = (start / 64, start % 64);
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    (r[w] >> s) & mask
}

pub fn set_lane(r: &mut Reg, bits: u8, i: usize, v: u64) {
    let start = i * bits as usize;
    let (w, s) = (start / 64, start % 64);
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    r[w] = (r[w] & !(mask << s)) | ((v & mask) << s);
}

pub fn scalar(v: u64) -> Reg {
    [v, 0, 0, 0]
}

pub fn broadcast(s: u64, t: ScalarType) -> Reg {
    let mut r = [0; 4];
    for i in 0..lanes_of(t) {
        set_lane(&mut r, t.bits, i, s);
    }
    r
}

pub fn extract(r: &Reg, t: ScalarType, i: usize) -> u64 {
    lane(r, t.bits, i)
}

/// `[x0, .., x{R-1}] -> [x{R-1}, x0, .., x{R-2}]`.
pub fn shuffle_rot1(r: &Reg, t: ScalarType) -> Reg {
    let n = lanes_of(t);
    let mut out = [0; 4];
    for i in 0..n {
        set_lane(&mut out, t.bits, i, lane(r, t.bits, (i + n - 1) % n));
    }
    out
}

pub fn ptest(r: &Reg, t: ScalarType) -> PtestResult {
    let n = lanes_of(t);
    let (mut ones, mut zeros) = (0, 0);
    for i in 0..n {
        match lane(r, t.bits, i) {
            0 => zeros += 1,
            v if v == t.mask() => ones += 1,
            _ => {}
        }
    }
    if ones == n {
        PtestResult::AllTrue
    } else if zeros == n {
        PtestResult::AllFalse
    } else {
        PtestResult::Mix
    }
}

/// Applies `f` lane-wise. Operand lane counts may differ from the result's.
pub fn map_lanes(rt: ScalarType, ops: &[(ScalarType, &Reg)], mut f: impl FnMut(&[u64]) -> Result<u64, Trap>) -> Result<Reg, Trap> {
    let n = lanes_of(rt);
    let mut out = [0; 4];
    let mut buf = [0u64; 3];
    for j in 0..n {
        for (k, (t, r)) in ops.iter().enumerate() {
            buf[k] = lane(r, t.bits, j % lanes_of(*t));
        }
        set_lane(&mut out, rt.bits, j, f(&buf[..ops.len()])?);
    }
    Ok(out)
}

fn sext(v: u64, bits: u8) -> i64 {
    let shift = 64 - bits as u32;
    ((v << shift) as i64) >> shift
}

fn f32_of(v: u64) -> f32 {
    f32::from_bits(v as u32)
}

pub fn scalar_bin(op: BinOp, t: ScalarType, a: u64, b: u64) -> Result<u64, Trap> {
    let m = t.mask();
    let sh = |b: u64| (b % t.bits as u64) as u32;
    let r = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a << sh(b),
        BinOp::Shr => (a & m) >> sh(b),
        BinOp::Div | BinOp::Rem => {
            let (x, y) = (sext(a, t.bits), sext(b, t.bits));
            if y == 0 {
                return Err(Trap::DivideByZero);
            }
            if op == BinOp::Div {
                x.wrapping_div(y) as u64
            } else {
                x.wrapping_rem(y) as u64
            }
        }
        BinOp::FAdd | BinOp::FSub | BinOp::FMul | BinOp::FDiv => {
            if t.bits == 32 {
                let (x, y) = (f32_of(a), f32_of(b));
                let r = match op {
                    BinOp::FAdd => x + y,
                    BinOp::FSub => x - y,
                    BinOp::FMul => x * y,
                    _ => x / y,
                };
                r.to_bits() as u64
            } else {
                let (x, y) = (f64::from_bits(a), f64::from_bits(b));
                let r = match op {
                    BinOp::FAdd => x + y,
                    BinOp::FSub => x - y,
                    BinOp::FMul => x * y,
                    _ => x / y,
                };
                r.to_bits()
            }
        }
    };
    Ok(r & m)
}

pub fn scalar_neg(t: ScalarType, a: u64) -> u64 {
    if t.is_float() {
        a ^ (1u64 << (t.bits - 1))
    } else {
        a.wrapping_neg() & t.mask()
    }
}

pub fn scalar_cmp(pred: CmpPred, t: ScalarType, a: u64, b: u64) -> bool {
    let (a, b) = (a & t.mask(), b & t.mask());
    let (sa, sb) = (sext(a, t.bits), sext(b, t.bits));
    let fl = |v: u64| if t.bits == 32 { f32_of(v) as f64 } else { f64::from_bits(v) };
    match pred {
        CmpPred::Eq => a == b,
        CmpPred::Ne => a != b,
        CmpPred::Slt => sa < sb,
        CmpPred::Sle => sa <= sb,
        CmpPred::Sgt => sa > sb,
        CmpPred::Sge => sa >= sb,
        CmpPred::Ult => a < b,
        CmpPred::Ule => a <= b,
        CmpPred::Ugt => a > b,
        CmpPred::Uge => a >= b,
        CmpPred::Oeq => fl(a) == fl(b),
        CmpPred::One => {
            let (x, y) = (fl(a), fl(b));
            !x.is_nan() && !y.is_nan() && x != y
        }
        CmpPred::Olt => fl(a) < fl(b),
        CmpPred::Ole => fl(a) <= fl(b),
        CmpPred::Ogt => fl(a) > fl(b),
        CmpPred::Oge => fl(a) >= fl(b),
    }
}

pub fn scalar_cast(op: CastOp, from: ScalarType, to: ScalarType, a: u64) -> u64 {
    match op {
        CastOp::Trunc | CastOp::ZExt => a & from.mask() & to.mask(),
        CastOp::SExt => sext(a, from.bits) as u64 & to.mask(),
    }
}

/// Triple-modular vote. `None` when all three disagree.
pub fn vote(a: u64, b: u64, c: u64) -> Option<u64> {
    if a == b || a == c {
        Some(a)
    } else if b == c {
        Some(b)
    } else {
        None
    }
}

/// Picks the value every lane should hold. `None` means the lanes cannot be
/// reconciled.
///
/// Basic mode trusts lane 0 when it agrees with lane 1 and otherwise takes
/// the highest lane. Extended mode takes the most frequent value when it is
/// unique and held by at least two lanes; a tie between the largest groups is
/// unrecoverable, and all-distinct lanes fall back to the basic rule.
pub fn recover_lanes(vals: &[u64], mode: RecoveryMode) -> Option<u64> {
    let basic = || if vals[0] == vals[1] { vals[0] } else { vals[vals.len() - 1] };
    match mode {
        RecoveryMode::Basic => Some(basic()),
        RecoveryMode::Extended => {
            let mut best = (0usize, 0u64);
            let mut tied = false;
            for (i, &v) in vals.iter().enumerate() {
                if vals[..i].contains(&v) {
                    continue;
                }
                let n = vals[i..].iter().filter(|&&x| x == v).count();
                if n > best.0 {
                    best = (n, v);
                    tied = false;
                } else if n == best.0 {
                    tied = true;
                }
            }
            match best.0 {
                1 => Some(basic()),
                _ if tied => None,
                _ => Some(best.1),
            }
        }
    }
}

/// Applies [`recover_lanes`] to a register. Returns the repaired register and
/// whether any lane differed.
pub fn recover_reg(r: &Reg, t: ScalarType, mode: RecoveryMode) -> Option<(Reg, bool)> {
    let n = lanes_of(t);
    let vals: Vec<u64> = (0..n).map(|i| lane(r, t.bits, i)).collect();
    let differ = vals.iter().any(|&v| v != vals[0]);
    if !differ {
        return Some((*r, false));
    }
    recover_lanes(&vals, mode).map(|v| (broadcast(v, t), true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const I64: ScalarType = ScalarType::I64;

    fn vec4(v: [u64; 4]) -> Reg {
        v
    }

    #[test]
    fn lane_add() {
        let a = vec4([1, 2, 3, 4]);
        let b = broadcast(10, I64);
        let r = map_lanes(I64, &[(I64, &a), (I64, &b)], |x| scalar_bin(BinOp::Add, I64, x[0], x[1])).unwrap();
        assert_eq!(r, [11, 12, 13, 14]);
    }

    #[test]
    fn shuffle_rotates_right() {
        assert_eq!(shuffle_rot1(&[1, 2, 3, 4], I64), [4, 1, 2, 3]);
        let t = ScalarType::I8;
        let mut r = [0; 4];
        for i in 0..32 {
            set_lane(&mut r, 8, i, i as u64);
        }
        let s = shuffle_rot1(&r, t);
        assert_eq!(lane(&s, 8, 0), 31);
        assert_eq!(lane(&s, 8, 9), 8);
    }

    #[test]
    fn ptest_examples() {
        let t = u64::MAX;
        assert_eq!(ptest(&[t, t, t, t], I64), PtestResult::AllTrue);
        assert_eq!(ptest(&[t, 0, t, t], I64), PtestResult::Mix);
        assert_eq!(ptest(&[0; 4], I64), PtestResult::AllFalse);
        assert_eq!(ptest(&[1, 1, 1, 1], I64), PtestResult::Mix);
    }

    #[test]
    fn ptest_sampled_for_narrow_lanes() {
        for t in [ScalarType::I8, ScalarType::I16, ScalarType::I32] {
            let all = broadcast(t.mask(), t);
            assert_eq!(ptest(&all, t), PtestResult::AllTrue);
            for i in 0..lanes_of(t) {
                let mut r = all;
                set_lane(&mut r, t.bits, i, 0);
                assert_eq!(ptest(&r, t), PtestResult::Mix);
                let mut z = [0; 4];
                set_lane(&mut z, t.bits, i, t.mask());
                assert_eq!(ptest(&z, t), PtestResult::Mix);
            }
        }
    }

    #[test]
    fn signed_division() {
        let t = ScalarType::I8;
        assert_eq!(scalar_bin(BinOp::Div, t, (-7i64 as u64) & 0xff, 2), Ok((-3i64 as u64) & 0xff));
        assert_eq!(scalar_bin(BinOp::Rem, t, (-7i64 as u64) & 0xff, 2), Ok(0xff));
        assert_eq!(scalar_bin(BinOp::Div, t, 0x80, 0xff), Ok(0x80));
        assert_eq!(scalar_bin(BinOp::Div, I64, 1, 0), Err(Trap::DivideByZero));
    }

    #[test]
    fn shift_count_wraps() {
        assert_eq!(scalar_bin(BinOp::Shl, I64, 1, 65), Ok(2));
        assert_eq!(scalar_bin(BinOp::Shr, ScalarType::I8, 0x80, 9), Ok(0x40));
    }

    #[test]
    fn float_compare_nan() {
        let nan = f64::NAN.to_bits();
        assert!(!scalar_cmp(CmpPred::Oeq, ScalarType::F64, nan, nan));
        assert!(!scalar_cmp(CmpPred::One, ScalarType::F64, nan, 0));
        assert!(scalar_cmp(CmpPred::Eq, ScalarType::F64, nan, nan));
    }

    #[test]
    fn vote_majority() {
        assert_eq!(vote(1, 1, 2), Some(1));
        assert_eq!(vote(2, 1, 1), Some(1));
        assert_eq!(vote(1, 2, 1), Some(1));
        assert_eq!(vote(1, 2, 3), None);
    }

    #[test]
    fn basic_recovery_single_corruption() {
        for bad in 0..4 {
            let mut v = [7u64; 4];
            v[bad] = 9;
            assert_eq!(recover_lanes(&v, RecoveryMode::Basic), Some(7));
        }
    }

    #[test]
    fn mixed_lane_counts_replicate() {
        // An i8 mask over four i64 lanes: mask lane j reads lane j mod 4.
        let a = [1, 2, 3, 4];
        let b = [1, 0, 3, 0];
        let r = map_lanes(ScalarType::I8, &[(I64, &a), (I64, &b)], |x| Ok((x[0] == x[1]) as u64)).unwrap();
        for j in 0..32 {
            assert_eq!(lane(&r, 8, j), (j % 2 == 0) as u64);
        }
    }

    proptest! {
        #[test]
        fn xor_with_rotation_is_zero_iff_lanes_equal(base in any::<u64>(), other in any::<u64>(), mask in 0u8..16) {
            let mut v = [base; 4];
            for (i, l) in v.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *l = other;
                }
            }
            let rot = shuffle_rot1(&v, I64);
            let x = map_lanes(I64, &[(I64, &v), (I64, &rot)], |x| Ok(x[0] ^ x[1])).unwrap();
            let all_equal = v.iter().all(|&l| l == v[0]);
            prop_assert_eq!(x == [0; 4], all_equal);
        }

        #[test]
        fn lane_ops_are_independent(
            a in any::<[u64; 4]>(),
            b in any::<[u64; 4]>(),
            lane_idx in 0usize..4,
            flip in 0u32..64,
            op in prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::And, BinOp::Or, BinOp::Xor, BinOp::Shl, BinOp::Shr]),
        ) {
            let f = |x: &[u64]| scalar_bin(op, I64, x[0], x[1]);
            let clean = map_lanes(I64, &[(I64, &a), (I64, &b)], f).unwrap();
            let mut a2 = a;
            a2[lane_idx] ^= 1 << flip;
            let dirty = map_lanes(I64, &[(I64, &a2), (I64, &b)], f).unwrap();
            for j in 0..4 {
                if j != lane_idx {
                    prop_assert_eq!(clean[j], dirty[j]);
                }
            }
        }
    }
}
