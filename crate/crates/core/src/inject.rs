//! Single-event-upset injection campaigns.
//!
//! A campaign executes a program once fault-free (the golden run), then
//! repeatedly re-executes it with one bit flipped in the destination of one
//! dynamic instruction, and classifies every run against the golden result.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Function, Op, Program, Tag, ValueId};
use crate::vm::{execute_with, fnv1a64, ExecConfig, ExecResult, Fault, Hook, Status};

/// Which destinations may receive the flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Any,
    VectorLanesOnly,
    ScalarRegsOnly,
    /// Scalars that reach the address operand of a load or store.
    AddressScalarsOnly,
}

impl Target {
    pub const ALL: [Target; 4] =
        [Target::Any, Target::VectorLanesOnly, Target::ScalarRegsOnly, Target::AddressScalarsOnly];

    pub fn name(self) -> &'static str {
        match self {
            Target::Any => "any",
            Target::VectorLanesOnly => "vector-lanes-only",
            Target::ScalarRegsOnly => "scalar-regs-only",
            Target::AddressScalarsOnly => "address-scalars-only",
        }
    }

    pub fn parse(s: &str) -> Option<Target> {
        Target::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub runs: u64,
    pub seed: u64,
    pub target: Target,
    /// Origin tags whose instructions are injectable.
    pub region: Vec<Tag>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig { runs: 2500, seed: DEFAULT_SEED, target: Target::Any, region: Tag::ALL.to_vec() }
    }
}

pub const DEFAULT_SEED: u64 = 0x5eed_1a4e_f047_2017;

/// Bit `bit` of lane `lane` in the destination of the `occurrence`-th
/// injectable dynamic instruction.
pub type InjectionPoint = Fault;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Hang,
    OsDetected,
    Corrected,
    Masked,
    Sdc,
}

impl Outcome {
    pub const ALL: [Outcome; 5] =
        [Outcome::Hang, Outcome::OsDetected, Outcome::Corrected, Outcome::Masked, Outcome::Sdc];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Hang => "hang",
            Outcome::OsDetected => "os_detected",
            Outcome::Corrected => "corrected",
            Outcome::Masked => "masked",
            Outcome::Sdc => "sdc",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InjectError {
    #[error("campaign needs at least one run")]
    NoRuns,
    #[error("golden run did not finish ({status:?}{})", .trap.as_ref().map(|t| format!(": {t}")).unwrap_or_default())]
    GoldenFailed { status: Status, trap: Option<String> },
    #[error("no injectable {} instruction executed in the golden run", .0.name())]
    EmptyTarget(Target),
}

/// Indexed by function, then block, then instruction.
pub type InjectableMask = Vec<Vec<Vec<bool>>>;

/// Marks instructions that define a value matching `target` inside `region`.
/// Phis and extern functions are never injectable.
pub fn injectable_mask(p: &Program, target: Target, region: &[Tag]) -> InjectableMask {
    p.functions
        .iter()
        .map(|f| {
            let addrs = if target == Target::AddressScalarsOnly { address_values(f) } else { HashSet::new() };
            f.blocks
                .iter()
                .map(|b| {
                    b.instrs
                        .iter()
                        .map(|ins| {
                            let Some(r) = ins.result else { return false };
                            if f.is_extern || matches!(ins.op, Op::Phi { .. }) || !region.contains(&ins.origin.tag) {
                                return false;
                            }
                            let vector = f.ty(r).is_vector();
                            match target {
                                Target::Any => true,
                                Target::VectorLanesOnly => vector,
                                Target::ScalarRegsOnly => !vector,
                                Target::AddressScalarsOnly => !vector && addrs.contains(&r),
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Values used as a memory address, directly or through phis and copies.
fn address_values(f: &Function) -> HashSet<ValueId> {
    let mut set = HashSet::new();
    let mut work = Vec::new();
    for ins in f.blocks.iter().flat_map(|b| &b.instrs) {
        match ins.op {
            Op::Load { addr } | Op::Store { addr, .. } => work.push(addr),
            _ => {}
        }
    }
    let defs: std::collections::HashMap<ValueId, &Op> =
        f.blocks.iter().flat_map(|b| &b.instrs).filter_map(|i| i.result.map(|r| (r, &i.op))).collect();
    while let Some(v) = work.pop() {
        if !set.insert(v) {
            continue;
        }
        match defs.get(&v) {
            Some(Op::Phi { incoming }) => work.extend(incoming.iter().map(|(v, _)| *v)),
            Some(Op::Copy { arg }) => work.push(*arg),
            _ => {}
        }
    }
    set
}

#[derive(Clone, Debug)]
pub struct Golden {
    pub result: ExecResult,
    /// (lanes, element bits) of each injectable dynamic occurrence.
    pub shapes: Vec<(u8, u8)>,
    pub mask: InjectableMask,
}

impl Golden {
    pub fn injectable_count(&self) -> u64 {
        self.shapes.len() as u64
    }
}

pub fn golden_run(p: &Program, args: &[u64], exec: &ExecConfig, target: Target, region: &[Tag]) -> Result<Golden, InjectError> {
    let mask = injectable_mask(p, target, region);
    let hook = Hook { injectable: &mask, fault: None, record: true };
    let (result, trace) = execute_with(p, args, exec, Some(&hook));
    if result.status != Status::Finished {
        return Err(InjectError::GoldenFailed { status: result.status, trap: result.trap });
    }
    Ok(Golden { result, shapes: trace.shapes, mask })
}

/// Uniform over occurrences, then over the destination's lanes, then bits.
pub fn sample_point(golden: &Golden, rng: &mut impl Rng) -> Result<InjectionPoint, InjectError> {
    if golden.shapes.is_empty() {
        return Err(InjectError::EmptyTarget(Target::Any));
    }
    let occurrence = rng.gen_range(0..golden.shapes.len());
    let (lanes, bits) = golden.shapes[occurrence];
    let lane = rng.gen_range(0..lanes as u32);
    let bit = rng.gen_range(0..bits as u32);
    Ok(Fault { occurrence: occurrence as u64, lane, bit })
}

/// Keeps hung runs bounded without cutting off legitimately longer recovery paths.
pub fn injection_step_limit(golden: &Golden, exec: &ExecConfig) -> u64 {
    golden.result.steps.saturating_mul(4).saturating_add(10_000).min(exec.step_limit)
}

pub fn classify(golden: &ExecResult, r: &ExecResult) -> Outcome {
    match r.status {
        Status::StepLimit => Outcome::Hang,
        Status::Trap | Status::Unrecoverable => Outcome::OsDetected,
        Status::Finished => {
            if r.output != golden.output || r.mem_digest != golden.mem_digest {
                Outcome::Sdc
            } else if r.recovery_fired > 0 {
                Outcome::Corrected
            } else {
                Outcome::Masked
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunRecord {
    pub run: u64,
    pub occurrence: u64,
    pub lane: u32,
    pub bit: u32,
    pub outcome: Outcome,
    pub status: Status,
    pub recovery_fired: u64,
    pub output_differs: bool,
    pub memory_differs: bool,
}

pub fn run_with_injection(p: &Program, args: &[u64], exec: &ExecConfig, golden: &Golden, point: InjectionPoint) -> (Outcome, ExecResult) {
    let cfg = ExecConfig { step_limit: injection_step_limit(golden, exec), ..*exec };
    let hook = Hook { injectable: &golden.mask, fault: Some(point), record: false };
    let (r, _) = execute_with(p, args, &cfg, Some(&hook));
    (classify(&golden.result, &r), r)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub hang: u64,
    pub os_detected: u64,
    pub corrected: u64,
    pub masked: u64,
    pub sdc: u64,
    /// SDCs visible in program output alone, ignoring final memory.
    pub sdc_output_only: u64,
}

impl OutcomeCounts {
    pub fn get(&self, o: Outcome) -> u64 {
        match o {
            Outcome::Hang => self.hang,
            Outcome::OsDetected => self.os_detected,
            Outcome::Corrected => self.corrected,
            Outcome::Masked => self.masked,
            Outcome::Sdc => self.sdc,
        }
    }

    fn add(&mut self, rec: &RunRecord) {
        match rec.outcome {
            Outcome::Hang => self.hang += 1,
            Outcome::OsDetected => self.os_detected += 1,
            Outcome::Corrected => self.corrected += 1,
            Outcome::Masked => self.masked += 1,
            Outcome::Sdc => self.sdc += 1,
        }
        if rec.status == Status::Finished && rec.output_differs {
            self.sdc_output_only += 1;
        }
    }

    pub fn total(&self) -> u64 {
        Outcome::ALL.iter().map(|&o| self.get(o)).sum()
    }
}

/// Percentages of all runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutcomeRates {
    pub hang: f64,
    pub os_detected: f64,
    pub corrected: f64,
    pub masked: f64,
    pub sdc: f64,
    pub sdc_output_only: f64,
}

impl OutcomeRates {
    fn of(c: &OutcomeCounts) -> Self {
        let n = c.total().max(1) as f64;
        let pct = |x: u64| 100.0 * x as f64 / n;
        OutcomeRates {
            hang: pct(c.hang),
            os_detected: pct(c.os_detected),
            corrected: pct(c.corrected),
            masked: pct(c.masked),
            sdc: pct(c.sdc),
            sdc_output_only: pct(c.sdc_output_only),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GoldenSummary {
    pub output_digest: String,
    pub mem_digest: String,
    pub injectable_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignReport {
    pub program: String,
    pub variant: String,
    pub config: CampaignConfig,
    pub golden: GoldenSummary,
    pub outcomes: OutcomeCounts,
    pub rates: OutcomeRates,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per run.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn sdc_rate(&self) -> f64 {
        self.outcomes.sdc as f64 / self.outcomes.total().max(1) as f64
    }
}

/// Runs `cfg.runs` single-fault executions. Points are drawn sequentially from
/// one seeded stream and results are folded in run order, so the report does
/// not depend on how many worker threads execute the runs.
pub fn campaign(
    p: &Program,
    args: &[u64],
    exec: &ExecConfig,
    cfg: &CampaignConfig,
    program: &str,
    variant: &str,
) -> Result<CampaignReport, InjectError> {
    if cfg.runs == 0 {
        return Err(InjectError::NoRuns);
    }
    let golden = golden_run(p, args, exec, cfg.target, &cfg.region)?;
    if golden.shapes.is_empty() {
        return Err(InjectError::EmptyTarget(cfg.target));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<InjectionPoint> =
        (0..cfg.runs).map(|_| sample_point(&golden, &mut rng)).collect::<Result<_, _>>()?;
    let records: Vec<RunRecord> = points
        .par_iter()
        .enumerate()
        .map(|(i, &pt)| {
            let (outcome, r) = run_with_injection(p, args, exec, &golden, pt);
            RunRecord {
                run: i as u64,
                occurrence: pt.occurrence,
                lane: pt.lane,
                bit: pt.bit,
                outcome,
                status: r.status,
                recovery_fired: r.recovery_fired,
                output_differs: r.output != golden.result.output,
                memory_differs: r.mem_digest != golden.result.mem_digest,
            }
        })
        .collect();
    let mut outcomes = OutcomeCounts::default();
    for r in &records {
        outcomes.add(r);
    }
    Ok(CampaignReport {
        program: program.to_string(),
        variant: variant.to_string(),
        config: cfg.clone(),
        golden: GoldenSummary {
            output_digest: format!("{:016x}", fnv1a64(golden.result.output.as_bytes())),
            mem_digest: golden.result.mem_digest.clone(),
            injectable_count: golden.injectable_count(),
        },
        rates: OutcomeRates::of(&outcomes),
        outcomes,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;
    use crate::xform::{harden, HardenConfig};

    const SUM: &str = "extern func @print(%x: i64) -> void
func @main() -> void {
entry:
  %zero = const i64 0
  %one = const i64 1
  %n = const i64 100
  jmp @loop
loop:
  %i = phi i64 [%zero, @entry], [%i2, @loop]
  %s = phi i64 [%zero, @entry], [%s2, @loop]
  %s2 = add i64 %s, %i
  %i2 = add i64 %i, %one
  %c = cmp slt i64 %i2, %n
  br %c, @loop, @done
done:
  %dead = mul i64 %s2, %s2
  call @print(%s2)
  ret
}";

    fn exec() -> ExecConfig {
        ExecConfig::default()
    }

    #[test]
    fn golden_of_sum() {
        let p = parse_program(SUM).unwrap();
        let g = golden_run(&p, &[], &exec(), Target::Any, &Tag::ALL).unwrap();
        assert_eq!(g.result.output, "4950\n");
        assert_eq!(g.injectable_count(), 3 + 300 + 1);
    }

    #[test]
    fn hardened_injectable_count_is_larger() {
        let p = parse_program(SUM).unwrap();
        let h = harden(&p, &HardenConfig::default()).unwrap();
        let g = golden_run(&p, &[], &exec(), Target::Any, &Tag::ALL).unwrap();
        let gh = golden_run(&h, &[], &exec(), Target::Any, &Tag::ALL).unwrap();
        assert!(gh.result.same_behavior(&g.result));
        assert!(g.injectable_count() <= gh.injectable_count());
    }

    #[test]
    fn dead_value_flip_is_masked() {
        let p = parse_program(SUM).unwrap();
        let g = golden_run(&p, &[], &exec(), Target::Any, &Tag::ALL).unwrap();
        let last = g.injectable_count() - 1;
        let (o, _) = run_with_injection(&p, &[], &exec(), &g, Fault { occurrence: last, lane: 0, bit: 7 });
        assert_eq!(o, Outcome::Masked);
    }

    #[test]
    fn scalar_target_has_lane_zero_and_vector_target_spans_lanes() {
        let p = parse_program(SUM).unwrap();
        let h = harden(&p, &HardenConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = golden_run(&h, &[], &exec(), Target::ScalarRegsOnly, &Tag::ALL).unwrap();
        assert!(g.shapes.iter().all(|s| s.0 == 1));
        for _ in 0..200 {
            assert_eq!(sample_point(&g, &mut rng).unwrap().lane, 0);
        }
        let g = golden_run(&h, &[], &exec(), Target::VectorLanesOnly, &Tag::ALL).unwrap();
        let mut lanes = HashSet::new();
        for _ in 0..400 {
            let pt = sample_point(&g, &mut rng).unwrap();
            assert!(pt.lane < g.shapes[pt.occurrence as usize].0 as u32);
            lanes.insert(pt.lane);
        }
        assert!((0..4).all(|l| lanes.contains(&l)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = parse_program(SUM).unwrap();
        let g = golden_run(&p, &[], &exec(), Target::Any, &Tag::ALL).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_point(&g, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn zero_runs_is_rejected() {
        let p = parse_program(SUM).unwrap();
        let cfg = CampaignConfig { runs: 0, ..Default::default() };
        assert_eq!(campaign(&p, &[], &exec(), &cfg, "sum", "native").unwrap_err(), InjectError::NoRuns);
    }

    #[test]
    fn native_campaign_sees_corruption_and_classifies_every_run() {
        let p = parse_program(SUM).unwrap();
        let cfg = CampaignConfig { runs: 300, ..Default::default() };
        let r = campaign(&p, &[], &exec(), &cfg, "sum", "native").unwrap();
        assert_eq!(r.outcomes.total(), 300);
        assert_eq!(r.records.len(), 300);
        assert!(r.outcomes.sdc > 0);
        assert_eq!(r.to_csv().lines().count(), 301);
    }

    #[test]
    fn address_mask_follows_phis() {
        let src = "func @main(%base: i64) -> void {
entry:
  %z = const i64 0
  jmp @l
l:
  %a = phi i64 [%base, @entry], [%a2, @l]
  store i64 %z, %a
  %k = const i64 8
  %a2 = add i64 %a, %k
  %c = cmp ult i64 %a2, %k
  br %c, @l, @d
d:
  ret
}";
        let p = parse_program(src).unwrap();
        let m = injectable_mask(&p, Target::AddressScalarsOnly, &Tag::ALL);
        let hit: Vec<bool> = m[0][1].clone();
        // phi, store, const, add, cmp, br
        assert_eq!(hit, vec![false, false, false, true, false, false]);
    }
}
