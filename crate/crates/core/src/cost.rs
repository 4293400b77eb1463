//! Dynamic instruction-count cost model.
//!
//! The unit is one executed non-phi instruction. Hardened counts are split
//! by origin tag so that the cost of wrappers and checks can be isolated and
//! the effect of hypothetical vector-ISA extensions estimated by subtraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Site, Tag};
use crate::vm::{DynStats, ExecResult, Status};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostError {
    #[error("native run executed no instructions")]
    EmptyNative,
    #[error("{variant} run did not finish ({status:?})")]
    Unfinished { variant: String, status: Status },
}

/// Share of executed instructions per origin tag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TagShares {
    pub original: f64,
    pub wrapper: f64,
    pub check: f64,
    pub recovery: f64,
    pub shadow: f64,
}

impl TagShares {
    pub fn of(s: &DynStats) -> Self {
        let n = s.total.max(1) as f64;
        let f = |t| s.tag(t) as f64 / n;
        TagShares {
            original: f(Tag::Original),
            wrapper: f(Tag::Wrapper),
            check: f(Tag::Check),
            recovery: f(Tag::Recovery),
            shadow: f(Tag::Shadow),
        }
    }

    pub fn sum(&self) -> f64 {
        self.original + self.wrapper + self.check + self.recovery + self.shadow
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantCost {
    pub variant: String,
    pub total: u64,
    /// Variant total over native total.
    pub blowup: f64,
    /// Replicable (and scalar-fallback) counts over native's.
    pub replicable_blowup: f64,
    pub loads: f64,
    pub stores: f64,
    pub branches: f64,
    pub shares: TagShares,
    #[serde(skip)]
    pub stats: DynStats,
}

fn finished(r: &ExecResult, variant: &str) -> Result<(), CostError> {
    if r.status == Status::Finished {
        Ok(())
    } else {
        Err(CostError::Unfinished { variant: variant.to_string(), status: r.status })
    }
}

/// Blow-up and class fractions of `hardened` relative to `native`.
pub fn profile(native: &ExecResult, hardened: &ExecResult, variant: &str) -> Result<VariantCost, CostError> {
    finished(native, "native")?;
    finished(hardened, variant)?;
    let (n, h) = (&native.stats, &hardened.stats);
    if n.total == 0 {
        return Err(CostError::EmptyNative);
    }
    Ok(VariantCost {
        variant: variant.to_string(),
        total: h.total,
        blowup: h.total as f64 / n.total as f64,
        replicable_blowup: h.replicable() as f64 / n.replicable().max(1) as f64,
        loads: h.loads_fraction(),
        stores: h.stores_fraction(),
        branches: h.branches_fraction(),
        shares: TagShares::of(h),
        stats: h.clone(),
    })
}

/// Costs of every variant of one benchmark, native first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostProfile {
    pub bench: String,
    pub variants: Vec<VariantCost>,
}

impl CostProfile {
    pub fn build(bench: &str, native: &ExecResult, hardened: &[(&str, &ExecResult)]) -> Result<Self, CostError> {
        let mut variants = vec![profile(native, native, "native")?];
        for (name, r) in hardened {
            variants.push(profile(native, r, name)?);
        }
        Ok(CostProfile { bench: bench.to_string(), variants })
    }

    pub fn variant(&self, name: &str) -> Option<&VariantCost> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

const CSV_HEADER: [&str; 12] = [
    "bench",
    "variant",
    "blowup",
    "replicable_blowup",
    "pct_loads",
    "pct_stores",
    "pct_branches",
    "share_original",
    "share_wrapper",
    "share_check",
    "share_recovery",
    "share_shadow",
];

/// One row per (benchmark, variant).
pub fn profiles_to_csv(profiles: &[CostProfile]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv write");
    for p in profiles {
        for v in &p.variants {
            let s = &v.shares;
            let nums = [
                v.blowup,
                v.replicable_blowup,
                100.0 * v.loads,
                100.0 * v.stores,
                100.0 * v.branches,
                s.original,
                s.wrapper,
                s.check,
                s.recovery,
                s.shadow,
            ];
            let mut row = vec![p.bench.clone(), v.variant.clone()];
            row.extend(nums.iter().map(|x| format!("{x:.4}")));
            w.write_record(&row).expect("in-memory csv write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Hypothetical vector-ISA extensions whose effect is estimated by removing
/// the instructions they would make unnecessary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhatIfConfig {
    /// Vector gather/scatter: loads and stores take replicated operands, so
    /// their extract and broadcast wrappers disappear.
    pub gather_scatter: bool,
    /// Branching directly on vector comparison flags: the `ptest` before
    /// each replicated branch disappears.
    pub flags_compare: bool,
    /// Checks performed by the memory subsystem: the check instructions at
    /// loads and stores disappear.
    pub offload_checks: bool,
    /// Weight wrapper groups by their relative runtime cost instead of
    /// counting every instruction as one.
    pub weighted: bool,
    pub ratios: WrapperRatios,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrapperRatios {
    pub load: f64,
    pub store: f64,
    pub branch: f64,
}

impl Default for WrapperRatios {
    fn default() -> Self {
        WrapperRatios { load: 1.96, store: 1.00, branch: 1.86 }
    }
}

impl Default for WhatIfConfig {
    fn default() -> Self {
        WhatIfConfig::all(false)
    }
}

impl WhatIfConfig {
    pub fn all(on: bool) -> Self {
        WhatIfConfig {
            gather_scatter: on,
            flags_compare: on,
            offload_checks: on,
            weighted: false,
            ratios: WrapperRatios::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WhatIfEstimate {
    pub measured: f64,
    pub estimated: f64,
    pub measured_factor: f64,
    pub estimated_factor: f64,
    pub removed_gather_scatter: f64,
    pub removed_flags_compare: f64,
    pub removed_offload_checks: f64,
    /// Per-tag counts left after removal, as signed values so the caller can
    /// confirm none went negative.
    pub remaining_by_tag: [i64; 5],
}

/// Counts per (tag, site) after removing what the enabled proposals obviate.
fn cells(s: &DynStats) -> [[i64; 8]; 5] {
    let mut c = [[0i64; 8]; 5];
    for t in Tag::ALL {
        for site in Site::ALL {
            c[t.index()][site.index()] = s.origin(t, site) as i64;
        }
    }
    c
}

fn weight(cfg: &WhatIfConfig, t: Tag, site: Site) -> f64 {
    if !cfg.weighted || t != Tag::Wrapper {
        return 1.0;
    }
    match site {
        Site::Load => cfg.ratios.load,
        Site::Store => cfg.ratios.store,
        Site::Branch => cfg.ratios.branch,
        _ => 1.0,
    }
}

fn weighted_total(cfg: &WhatIfConfig, c: &[[i64; 8]; 5]) -> f64 {
    let mut sum = 0.0;
    for t in Tag::ALL {
        for site in Site::ALL {
            sum += weight(cfg, t, site) * c[t.index()][site.index()] as f64;
        }
    }
    sum
}

pub fn whatif_estimate(native: &DynStats, hardened: &DynStats, cfg: &WhatIfConfig) -> WhatIfEstimate {
    let before = cells(hardened);
    let mut c = before;
    let mut take = |t: Tag, site: Site| -> f64 {
        let w = weight(cfg, t, site);
        let n = std::mem::take(&mut c[t.index()][site.index()]);
        w * n as f64
    };
    let mut removed = [0.0; 3];
    if cfg.gather_scatter {
        removed[0] = take(Tag::Wrapper, Site::Load) + take(Tag::Wrapper, Site::Store);
    }
    if cfg.flags_compare {
        removed[1] = take(Tag::Check, Site::Branch);
    }
    if cfg.offload_checks {
        removed[2] = take(Tag::Check, Site::Load) + take(Tag::Check, Site::Store);
    }
    let measured = weighted_total(cfg, &before);
    let estimated = weighted_total(cfg, &c);
    let base = native.total.max(1) as f64;
    let mut remaining_by_tag = [0i64; 5];
    for t in Tag::ALL {
        remaining_by_tag[t.index()] = c[t.index()].iter().sum();
    }
    WhatIfEstimate {
        measured,
        estimated,
        measured_factor: measured / base,
        estimated_factor: estimated / base,
        removed_gather_scatter: removed[0],
        removed_flags_compare: removed[1],
        removed_offload_checks: removed[2],
        remaining_by_tag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;
    use crate::vm::{execute, ExecConfig};
    use crate::xform::{harden, harden_triplicate, HardenConfig};

    const MEM: &str = "func @main() -> i64 {
entry:
  %z = const i64 0
  %eight = const i64 8
  %lim = const i64 800
  jmp @l
l:
  %a = phi i64 [%z, @entry], [%a2, @l]
  %v = load i64 %a
  %w = add i64 %v, %a
  store i64 %w, %a
  %a2 = add i64 %a, %eight
  %c = cmp ult i64 %a2, %lim
  br %c, @l, @d
d:
  ret %a2
}";

    fn runs() -> (ExecResult, ExecResult, ExecResult) {
        let p = parse_program(MEM).unwrap();
        let cfg = ExecConfig::default();
        let e = harden(&p, &HardenConfig::default()).unwrap();
        let s = harden_triplicate(&p).unwrap();
        (execute(&p, &[], &cfg), execute(&e, &[], &cfg), execute(&s, &[], &cfg))
    }

    #[test]
    fn native_blowup_is_one_and_shares_sum_to_one() {
        let (n, e, s) = runs();
        let p = CostProfile::build("mem", &n, &[("elzar", &e), ("swiftr", &s)]).unwrap();
        assert_eq!(p.variant("native").unwrap().blowup, 1.0);
        for v in &p.variants {
            assert!((v.shares.sum() - 1.0).abs() < 1e-12, "{}", v.variant);
        }
        assert!(p.variant("swiftr").unwrap().replicable_blowup >= 3.0);
        let csv = profiles_to_csv(&[p]);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("bench,variant,blowup"));
    }

    #[test]
    fn empty_native_is_an_error() {
        let (mut n, e, _) = runs();
        n.stats = DynStats::new();
        assert_eq!(profile(&n, &e, "elzar").unwrap_err(), CostError::EmptyNative);
    }

    #[test]
    fn all_off_is_identity() {
        let (n, e, _) = runs();
        let w = whatif_estimate(&n.stats, &e.stats, &WhatIfConfig::all(false));
        assert_eq!(w.estimated, e.stats.total as f64);
        assert_eq!(w.measured, w.estimated);
    }

    #[test]
    fn every_flag_is_monotone_and_all_on_is_strictly_lower() {
        let (n, e, _) = runs();
        let off = whatif_estimate(&n.stats, &e.stats, &WhatIfConfig::all(false)).estimated;
        let flags: [fn(&mut WhatIfConfig); 3] =
            [|c| c.gather_scatter = true, |c| c.flags_compare = true, |c| c.offload_checks = true];
        for set in flags {
            let mut c = WhatIfConfig::all(false);
            set(&mut c);
            let w = whatif_estimate(&n.stats, &e.stats, &c);
            assert!(w.estimated < off);
            assert!(w.remaining_by_tag.iter().all(|&x| x >= 0));
        }
        let all = whatif_estimate(&n.stats, &e.stats, &WhatIfConfig::all(true));
        assert!(all.estimated_factor < all.measured_factor);
        // One ptest per executed branch: 100 loop iterations.
        assert_eq!(all.removed_flags_compare, 100.0);
    }

    #[test]
    fn weighted_mode_scales_wrappers() {
        let (n, e, _) = runs();
        let mut c = WhatIfConfig::all(false);
        c.weighted = true;
        let w = whatif_estimate(&n.stats, &e.stats, &c);
        let s = &e.stats;
        let expect = s.total as f64 + 0.96 * s.origin(Tag::Wrapper, Site::Load) as f64
            + 0.86 * s.origin(Tag::Wrapper, Site::Branch) as f64;
        assert!((w.measured - expect).abs() < 1e-6);
    }
}
