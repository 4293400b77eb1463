//! Deterministic interpreter for native and hardened programs.

pub mod lanes;
mod stats;

pub use lanes::{Reg, Trap};
pub use stats::DynStats;

use serde::{Deserialize, Serialize};

use crate::ir::{Function, Op, Program, ScalarType, Tag, Type, ValueId};
use lanes::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub step_limit: u64,
    pub mem_size: usize,
    pub max_call_depth: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { step_limit: 100_000_000, mem_size: 1 << 20, max_call_depth: 256 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Finished,
    Trap,
    StepLimit,
    Unrecoverable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExecResult {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trap: Option<String>,
    pub output: String,
    pub mem_digest: String,
    /// Raw bits of the entry function's return value.
    pub ret: Option<u64>,
    pub steps: u64,
    pub recovery_fired: u64,
    pub checks_failed: u64,
    pub stats: DynStats,
}

impl ExecResult {
    /// Same exit status, printed output and final memory.
    pub fn same_behavior(&self, other: &ExecResult) -> bool {
        self.status == other.status && self.output == other.output && self.mem_digest == other.mem_digest
    }
}

/// A single bit flip in the result of the `occurrence`-th injectable
/// instruction execution (counting from zero).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub occurrence: u64,
    pub lane: u32,
    pub bit: u32,
}

/// Fault-injection instrumentation.
#[derive(Clone, Debug)]
pub struct Hook<'a> {
    /// Indexed by function, then block, then instruction: whether the result
    /// register may be corrupted.
    pub injectable: &'a [Vec<Vec<bool>>],
    pub fault: Option<Fault>,
    /// Record the (lanes, bits) shape of every injectable occurrence.
    pub record: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub occurrences: u64,
    pub shapes: Vec<(u8, u8)>,
    pub injected: bool,
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

enum Stop {
    Trap(Trap),
    StepLimit,
    Unrecoverable,
}

impl From<Trap> for Stop {
    fn from(t: Trap) -> Self {
        Stop::Trap(t)
    }
}

struct Machine<'a> {
    p: &'a Program,
    cfg: ExecConfig,
    mem: Vec<u8>,
    out: String,
    stats: DynStats,
    steps: u64,
    recovery_fired: u64,
    checks_failed: u64,
    depth: usize,
    hook: Option<&'a Hook<'a>>,
    trace: Trace,
}

pub fn execute(p: &Program, args: &[u64], cfg: &ExecConfig) -> ExecResult {
    execute_with(p, args, cfg, None).0
}

pub fn execute_with<'a>(
    p: &'a Program,
    args: &[u64],
    cfg: &ExecConfig,
    hook: Option<&'a Hook<'a>>,
) -> (ExecResult, Trace) {
    let mut m = Machine {
        p,
        cfg: *cfg,
        mem: vec![0; cfg.mem_size],
        out: String::new(),
        stats: DynStats::new(),
        steps: 0,
        recovery_fired: 0,
        checks_failed: 0,
        depth: 0,
        hook,
        trace: Trace::default(),
    };
    let mut outcome = Ok(None);
    for seg in &p.data {
        let end = seg.offset as usize + seg.bytes.len();
        if end > m.mem.len() {
            outcome = Err(Stop::Trap(Trap::OutOfBounds(seg.offset)));
            break;
        }
        m.mem[seg.offset as usize..end].copy_from_slice(&seg.bytes);
    }
    if outcome.is_ok() {
        outcome = match p.entry_function() {
            Some((id, f)) => {
                let regs: Vec<Reg> = f
                    .params
                    .iter()
                    .enumerate()
                    .map(|(i, &pv)| scalar(args.get(i).copied().unwrap_or(0) & f.ty(pv).elem().mask()))
                    .collect();
                m.call(id.index(), &regs)
            }
            None => Err(Stop::Trap(Trap::UnknownExtern)),
        };
    }
    let (status, trap, ret) = match outcome {
        Ok(r) => (Status::Finished, None, r.map(|r| r[0])),
        Err(Stop::Trap(t)) => (Status::Trap, Some(t.to_string()), None),
        Err(Stop::StepLimit) => (Status::StepLimit, None, None),
        Err(Stop::Unrecoverable) => (Status::Unrecoverable, None, None),
    };
    let res = ExecResult {
        status,
        trap,
        output: m.out,
        mem_digest: format!("{:016x}", fnv1a64(&m.mem)),
        ret,
        steps: m.steps,
        recovery_fired: m.recovery_fired,
        checks_failed: m.checks_failed,
        stats: m.stats,
    };
    (res, m.trace)
}

fn elem(f: &Function, v: ValueId) -> ScalarType {
    f.ty(v).elem()
}

impl<'a> Machine<'a> {
    #[inline]
    fn step(&mut self) -> Result<(), Stop> {
        self.steps += 1;
        if self.steps > self.cfg.step_limit {
            Err(Stop::StepLimit)
        } else {
            Ok(())
        }
    }

    fn mem_range(&self, addr: u64, size: usize) -> Result<usize, Trap> {
        if !addr.is_multiple_of(size as u64) {
            return Err(Trap::Misaligned(addr));
        }
        match addr.checked_add(size as u64) {
            Some(end) if end <= self.mem.len() as u64 => Ok(addr as usize),
            _ => Err(Trap::OutOfBounds(addr)),
        }
    }

    fn call_extern(&mut self, f: &Function, args: &[Reg]) -> Result<Option<Reg>, Stop> {
        match (f.name.as_str(), args) {
            ("print", [a]) => {
                let t = f.ty(f.params[0]).elem();
                let v = scalar_cast(crate::ir::CastOp::SExt, t, ScalarType::I64, a[0]) as i64;
                self.out.push_str(&v.to_string());
            }
            ("print_f64", [a]) => {
                let t = f.ty(f.params[0]).elem();
                let v = if t.bits == 32 { f32::from_bits(a[0] as u32) as f64 } else { f64::from_bits(a[0]) };
                self.out.push_str(&v.to_string());
            }
            _ => return Err(Trap::UnknownExtern.into()),
        }
        self.out.push('\n');
        if f.ret.is_some() {
            return Err(Trap::UnknownExtern.into());
        }
        Ok(None)
    }

    fn call(&mut self, fid: usize, args: &[Reg]) -> Result<Option<Reg>, Stop> {
        let p = self.p;
        let f = &p.functions[fid];
        if f.is_extern {
            return self.call_extern(f, args);
        }
        if self.depth >= self.cfg.max_call_depth {
            return Err(Trap::CallDepth.into());
        }
        self.depth += 1;
        let r = self.run(fid, f, args);
        self.depth -= 1;
        r
    }

    fn run(&mut self, fid: usize, f: &'a Function, args: &[Reg]) -> Result<Option<Reg>, Stop> {
        let mut regs: Vec<Reg> = vec![[0; 4]; f.values.len()];
        for (&pv, a) in f.params.iter().zip(args) {
            regs[pv.index()] = *a;
        }
        let mut bb = 0usize;
        let mut prev: Option<usize> = None;
        let mut phi_buf: Vec<(ValueId, Reg)> = Vec::new();
        loop {
            let block = &f.blocks[bb];
            let mut idx = 0;
            phi_buf.clear();
            while let Some(ins) = block.instrs.get(idx) {
                let Op::Phi { incoming } = &ins.op else { break };
                self.step()?;
                self.stats.record(crate::ir::Opcode::Phi, ins.origin);
                if let Some(pb) = prev {
                    if let Some((v, _)) = incoming.iter().find(|(_, b)| b.index() == pb) {
                        phi_buf.push((ins.result.expect("phi result"), regs[v.index()]));
                    }
                }
                idx += 1;
            }
            for (r, v) in phi_buf.drain(..) {
                regs[r.index()] = v;
            }
            let next = loop {
                let ins = &block.instrs[idx];
                self.step()?;
                self.stats.record(ins.opcode(), ins.origin);
                let rty = ins.result.map(|r| f.ty(r));
                let val: Option<Reg> = match &ins.op {
                    Op::Phi { .. } => unreachable!("phis are leading"),
                    Op::Const { bits } => Some(match rty.expect("typed") {
                        Type::Scalar(_) => scalar(*bits),
                        Type::Vector(t) => broadcast(*bits, t),
                    }),
                    Op::Bin { op, lhs, rhs } => {
                        let (a, b) = (&regs[lhs.index()], &regs[rhs.index()]);
                        Some(match rty.expect("typed") {
                            Type::Scalar(t) => scalar(scalar_bin(*op, t, a[0], b[0])?),
                            Type::Vector(t) => map_lanes(t, &[(t, a), (t, b)], |x| scalar_bin(*op, t, x[0], x[1]))?,
                        })
                    }
                    Op::Neg { arg } => {
                        let a = &regs[arg.index()];
                        Some(match rty.expect("typed") {
                            Type::Scalar(t) => scalar(scalar_neg(t, a[0])),
                            Type::Vector(t) => map_lanes(t, &[(t, a)], |x| Ok(scalar_neg(t, x[0])))?,
                        })
                    }
                    Op::Cast { op, arg } => {
                        let a = &regs[arg.index()];
                        let from = elem(f, *arg);
                        Some(match rty.expect("typed") {
                            Type::Scalar(t) => scalar(scalar_cast(*op, from, t, a[0])),
                            Type::Vector(t) => map_lanes(t, &[(from, a)], |x| Ok(scalar_cast(*op, from, t, x[0])))?,
                        })
                    }
                    Op::Cmp { pred, lhs, rhs } => {
                        let (a, b) = (&regs[lhs.index()], &regs[rhs.index()]);
                        let ot = f.ty(*lhs);
                        let t = ot.elem();
                        Some(if ot.is_vector() {
                            map_lanes(ScalarType::I8, &[(t, a), (t, b)], |x| Ok(scalar_cmp(*pred, t, x[0], x[1]) as u64))?
                        } else {
                            scalar(scalar_cmp(*pred, t, a[0], b[0]) as u64)
                        })
                    }
                    Op::Select { cond, on_true, on_false } => {
                        let (c, a, b) = (&regs[cond.index()], &regs[on_true.index()], &regs[on_false.index()]);
                        Some(match rty.expect("typed") {
                            Type::Scalar(_) => {
                                if c[0] != 0 {
                                    *a
                                } else {
                                    *b
                                }
                            }
                            Type::Vector(t) => {
                                let ct = elem(f, *cond);
                                map_lanes(t, &[(ct, c), (t, a), (t, b)], |x| Ok(if x[0] != 0 { x[1] } else { x[2] }))?
                            }
                        })
                    }
                    Op::Copy { arg } => Some(regs[arg.index()]),
                    Op::Load { addr } => {
                        let t = rty.expect("typed").elem();
                        let size = t.mem_bytes();
                        let at = self.mem_range(regs[addr.index()][0], size)?;
                        let mut buf = [0u8; 8];
                        buf[..size].copy_from_slice(&self.mem[at..at + size]);
                        Some(scalar(u64::from_le_bytes(buf) & t.mask()))
                    }
                    Op::Store { value, addr } => {
                        let t = elem(f, *value);
                        let size = t.mem_bytes();
                        let at = self.mem_range(regs[addr.index()][0], size)?;
                        let bytes = regs[value.index()][0].to_le_bytes();
                        self.mem[at..at + size].copy_from_slice(&bytes[..size]);
                        None
                    }
                    Op::Call { callee, args } => {
                        let argv: Vec<Reg> = args.iter().map(|a| regs[a.index()]).collect();
                        let r = self.call(callee.index(), &argv)?;
                        ins.result.map(|_| r.unwrap_or([0; 4]))
                    }
                    Op::Extract { arg, lane } => {
                        Some(scalar(extract(&regs[arg.index()], elem(f, *arg), *lane as usize)))
                    }
                    Op::Broadcast { arg } => Some(broadcast(regs[arg.index()][0], elem(f, *arg))),
                    Op::Shuffle { arg } => Some(shuffle_rot1(&regs[arg.index()], elem(f, *arg))),
                    Op::Ptest { arg } => Some(scalar(ptest(&regs[arg.index()], elem(f, *arg)) as u64)),
                    Op::Recover { arg, mode } => {
                        let (r, fired) =
                            recover_reg(&regs[arg.index()], elem(f, *arg), *mode).ok_or(Stop::Unrecoverable)?;
                        if fired {
                            self.recovery_fired += 1;
                        }
                        Some(r)
                    }
                    Op::Vote { a, b, c } => {
                        let (x, y, z) = (&regs[a.index()], &regs[b.index()], &regs[c.index()]);
                        let t = elem(f, *a);
                        if x != y || x != z {
                            self.recovery_fired += 1;
                        }
                        Some(match rty.expect("typed") {
                            Type::Scalar(_) => scalar(vote(x[0], y[0], z[0]).ok_or(Stop::Unrecoverable)?),
                            Type::Vector(t2) => map_lanes(t2, &[(t, x), (t, y), (t, z)], |v| {
                                vote(v[0], v[1], v[2]).ok_or(Trap::DivideByZero)
                            })
                            .map_err(|_| Stop::Unrecoverable)?,
                        })
                    }
                    Op::Br { cond, on_true, on_false } => {
                        let c = &regs[cond.index()];
                        let taken = match f.ty(*cond) {
                            Type::Scalar(_) => c[0] != 0,
                            Type::Vector(t) => {
                                let vals: Vec<u64> = (0..lanes_of(t)).map(|i| lane(c, t.bits, i)).collect();
                                recover_lanes(&vals, crate::ir::RecoveryMode::Extended).unwrap_or(vals[0]) != 0
                            }
                        };
                        if !taken && ins.origin.tag == Tag::Check {
                            self.checks_failed += 1;
                        }
                        break if taken { on_true.index() } else { on_false.index() };
                    }
                    Op::Brp { test, all_true, all_false, mix } => {
                        break match regs[test.index()][0] {
                            1 => all_true.index(),
                            0 => all_false.index(),
                            _ => {
                                self.checks_failed += 1;
                                mix.index()
                            }
                        };
                    }
                    Op::Jmp { target } => break target.index(),
                    Op::Ret { value } => return Ok(value.map(|v| regs[v.index()])),
                };
                if let (Some(r), Some(mut v)) = (ins.result, val) {
                    if let Some(h) = self.hook {
                        if h.injectable[fid][bb][idx] {
                            let t = f.ty(r);
                            let occ = self.trace.occurrences;
                            self.trace.occurrences += 1;
                            if h.record {
                                self.trace.shapes.push((t.lanes() as u8, t.elem().bits));
                            }
                            if let Some(fault) = h.fault.filter(|x| x.occurrence == occ) {
                                let bits = t.elem().bits;
                                let l = fault.lane as usize % t.lanes();
                                let old = lane(&v, bits, l);
                                set_lane(&mut v, bits, l, old ^ (1u64 << (fault.bit % bits as u32)));
                                self.trace.injected = true;
                            }
                        }
                    }
                    regs[r.index()] = v;
                }
                idx += 1;
            };
            prev = Some(bb);
            bb = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn run(src: &str, args: &[u64]) -> ExecResult {
        execute(&parse_program(src).unwrap(), args, &ExecConfig::default())
    }

    const PRELUDE: &str = "extern func @print(%v: i64) -> void\n";

    #[test]
    fn counting_loop_terminates() {
        // r1 += r2 until r1 == r3, starting from r1 = 0, r2 = 1, r3 = 3.
        let src = "func @main(%r1: i64, %r2: i64, %r3: i64) -> i64 {
entry:
  jmp @loop
loop:
  %a = phi i64 [%r1, @entry], [%b, @loop]
  %n = phi i64 [%r1, @entry], [%n2, @loop]
  %b = add i64 %a, %r2
  %n2 = add i64 %n, %r2
  %c = cmp ne i64 %b, %r3
  br %c, @loop, @done
done:
  ret %n2
}";
        let r = run(src, &[0, 1, 3]);
        assert_eq!(r.status, Status::Finished);
        assert_eq!(r.ret, Some(3));
    }

    #[test]
    fn infinite_loop_hits_step_limit() {
        let src = "func @main() -> void { entry: jmp @l l: jmp @l }";
        let cfg = ExecConfig { step_limit: 1_000_000, ..Default::default() };
        let r = execute(&parse_program(src).unwrap(), &[], &cfg);
        assert_eq!(r.status, Status::StepLimit);
    }

    #[test]
    fn load_out_of_bounds_traps() {
        let src = "func @main() -> i64 { entry: %a = const i64 1048576 %v = load i64 %a ret %v }";
        assert_eq!(run(src, &[]).status, Status::Trap);
        let src = "func @main() -> i64 { entry: %a = const i64 4 %v = load i64 %a ret %v }";
        assert_eq!(run(src, &[]).status, Status::Trap, "misaligned");
    }

    #[test]
    fn divide_by_zero_traps() {
        let src = "func @main(%x: i64) -> i64 { entry: %z = const i64 0 %v = div i64 %x, %z ret %v }";
        assert_eq!(run(src, &[5]).status, Status::Trap);
    }

    #[test]
    fn print_and_memory() {
        let src = format!(
            "{PRELUDE}data 16 i64 -5
func @main() -> void {{
entry:
  %a = const i64 16
  %v = load i64 %a
  call @print(%v)
  %b = const i64 24
  store i64 %v, %b
  ret
}}"
        );
        let r = run(&src, &[]);
        assert_eq!(r.output, "-5\n");
        let mut mem = vec![0u8; 1 << 20];
        mem[16..24].copy_from_slice(&(-5i64).to_le_bytes());
        mem[24..32].copy_from_slice(&(-5i64).to_le_bytes());
        assert_eq!(r.mem_digest, format!("{:016x}", fnv1a64(&mem)));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn stats_conserve() {
        let src = format!("{PRELUDE}func @main() -> void {{ entry: %a = const i64 2 call @print(%a) ret }}");
        let r = run(&src, &[]);
        assert_eq!(r.stats.total, 3);
        assert_eq!(Tag::ALL.iter().map(|t| r.stats.tag(*t)).sum::<u64>(), r.stats.total);
    }

    #[test]
    fn recursion_depth_traps() {
        let src = "func @f() -> void { entry: call @f() ret }
func @main() -> void { entry: call @f() ret }";
        assert_eq!(run(src, &[]).status, Status::Trap);
    }

    #[test]
    fn narrow_integers_wrap_at_their_width() {
        let src = "func @main(%x: i9) -> i64 {
entry:
  %y = add i9 %x, %x
  %z = sext i64 %y
  ret %z
}";
        let r = run(src, &[200]);
        assert_eq!(r.ret, Some((-112i64) as u64));
    }
}
