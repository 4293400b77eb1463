//! `lanefort` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error, 3 execution error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use lanefort_core::corpus::{self, CORPUS};
use lanefort_core::cost::{profiles_to_csv, whatif_estimate, CostProfile, WhatIfConfig};
use lanefort_core::inject::{
    campaign, golden_run, run_with_injection, CampaignConfig, Target, DEFAULT_SEED,
};
use lanefort_core::ir::{parse_program, print_program, Program, RecoveryMode, Tag};
use lanefort_core::vm::{execute, ExecConfig, ExecResult, Fault, Status};
use lanefort_core::xform::{harden, harden_triplicate, HardenConfig};

#[derive(Parser)]
#[command(name = "lanefort", version, about = "Harden, run and fault-inject IR programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Pass {
    Elzar,
    Swiftr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Native,
    Elzar,
    Swiftr,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Native => "native",
            Variant::Elzar => "elzar",
            Variant::Swiftr => "swiftr",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Recovery {
    Basic,
    Extended,
}

#[derive(clap::Args, Clone)]
struct HardenOpts {
    /// Synchronization points to check: `all`, `none`, or a comma list of
    /// loads, stores, branches, other.
    #[arg(long, default_value = "all")]
    checks: String,
    #[arg(long, value_enum, default_value = "extended")]
    recovery: Recovery,
    /// JSON hardening config; overrides --checks and --recovery.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the hardened form of a program.
    Harden {
        /// IR file or corpus program name.
        program: String,
        #[arg(long, value_enum, default_value = "elzar")]
        pass: Pass,
        #[command(flatten)]
        opts: HardenOpts,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Execute a program fault-free and print its output.
    Run {
        program: String,
        #[arg(long, value_enum, default_value = "native")]
        variant: Variant,
        #[command(flatten)]
        opts: HardenOpts,
        /// Comma-separated integer arguments for the entry function.
        #[arg(long)]
        args: Option<String>,
        /// Print the full execution result as JSON instead of program output.
        #[arg(long)]
        json: bool,
    },
    /// Execute once with a single bit flip and classify the outcome.
    Inject {
        program: String,
        #[arg(long, value_enum, default_value = "native")]
        variant: Variant,
        #[command(flatten)]
        opts: HardenOpts,
        #[arg(long)]
        args: Option<String>,
        #[arg(long, default_value = "any")]
        target: String,
        #[arg(long)]
        occurrence: u64,
        #[arg(long, default_value_t = 0)]
        lane: u32,
        #[arg(long)]
        bit: u32,
    },
    /// Run a fault-injection campaign.
    Campaign {
        program: String,
        #[arg(long, value_enum, default_value = "native")]
        variant: Variant,
        #[command(flatten)]
        opts: HardenOpts,
        #[arg(long)]
        args: Option<String>,
        #[arg(long, default_value_t = 2500)]
        runs: u64,
        /// Defaults to $LANEFORT_SEED, then a built-in constant.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "any")]
        target: String,
        /// Comma list of origin tags to inject into (default: all).
        #[arg(long)]
        region: Option<String>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write one CSV row per run.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare dynamic instruction counts of several variants.
    Compare {
        program: String,
        #[arg(value_enum, default_values = ["native", "elzar", "swiftr"])]
        variants: Vec<Variant>,
        #[command(flatten)]
        opts: HardenOpts,
        #[arg(long)]
        args: Option<String>,
        /// Write the cost CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cost tables (and optionally campaigns) for the whole built-in corpus.
    Report {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Injection runs per program and variant; 0 skips campaigns.
        #[arg(long, default_value_t = 0)]
        runs: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in corpus.
    Corpus,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
    Exec(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Exec(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Input(e) | Failure::Exec(e) => e,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn exec(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Exec(e.into())
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Harden { program, pass, opts, output } => {
            let src = load(&program)?;
            let variant = match pass {
                Pass::Elzar => Variant::Elzar,
                Pass::Swiftr => Variant::Swiftr,
            };
            let h = build(&src.program, variant, &opts)?;
            emit(output.as_deref(), &print_program(&h))
        }
        Cmd::Run { program, variant, opts, args, json } => {
            let src = load(&program)?;
            let args = parse_args(args.as_deref(), src.args)?;
            let p = build(&src.program, variant, &opts)?;
            let r = execute(&p, &args, &ExecConfig::default());
            if json {
                stdout(&(serde_json::to_string_pretty(&r).expect("result serializes") + "\n"));
            } else {
                stdout(&r.output);
            }
            finished(&r)
        }
        Cmd::Inject { program, variant, opts, args, target, occurrence, lane, bit } => {
            let src = load(&program)?;
            let args = parse_args(args.as_deref(), src.args)?;
            let target = parse_target(&target)?;
            let p = build(&src.program, variant, &opts)?;
            let ex = ExecConfig::default();
            let golden = golden_run(&p, &args, &ex, target, &Tag::ALL).map_err(exec)?;
            if occurrence >= golden.injectable_count() {
                return Err(usage(anyhow!(
                    "occurrence {occurrence} out of range: {} injectable instructions executed",
                    golden.injectable_count()
                )));
            }
            let (outcome, r) = run_with_injection(&p, &args, &ex, &golden, Fault { occurrence, lane, bit });
            let out = serde_json::json!({
                "outcome": outcome,
                "status": r.status,
                "trap": r.trap,
                "recovery_fired": r.recovery_fired,
                "output": r.output,
                "golden_output": golden.result.output,
            });
            stdout(&(serde_json::to_string_pretty(&out).expect("json") + "\n"));
            Ok(())
        }
        Cmd::Campaign { program, variant, opts, args, runs, seed, target, region, report, csv } => {
            let src = load(&program)?;
            let args = parse_args(args.as_deref(), src.args)?;
            let p = build(&src.program, variant, &opts)?;
            let cfg = CampaignConfig {
                runs,
                seed: resolve_seed(seed)?,
                target: parse_target(&target)?,
                region: parse_region(region.as_deref())?,
            };
            if runs == 0 {
                return Err(usage(anyhow!("--runs must be positive")));
            }
            let rep = campaign(&p, &args, &ExecConfig::default(), &cfg, &src.name, variant.name())
                .map_err(exec)?;
            if let Some(path) = csv {
                write(&path, &rep.to_csv())?;
            }
            emit(report.as_deref(), &(rep.to_json() + "\n"))
        }
        Cmd::Compare { program, variants, opts, args, csv } => {
            let src = load(&program)?;
            let args = parse_args(args.as_deref(), src.args)?;
            let (profile, whatif) = compare(&src.name, &src.program, &variants, &opts, &args)?;
            emit(csv.as_deref(), &profiles_to_csv(&[profile]))?;
            for line in whatif {
                eprintln!("{line}");
            }
            Ok(())
        }
        Cmd::Report { out, runs, seed } => report(&out, runs, resolve_seed(seed)?),
        Cmd::Corpus => {
            for p in CORPUS {
                stdout(&format!("{}\t{}\n", p.name, p.category.name()));
            }
            Ok(())
        }
    }
}

struct Source {
    name: String,
    program: Program,
    args: &'static [u64],
}

/// Reads an IR file, or falls back to a built-in corpus program by name.
fn load(name_or_path: &str) -> Res<Source> {
    let path = Path::new(name_or_path);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {name_or_path}")).map_err(input)?;
        let program = parse_program(&text).with_context(|| name_or_path.to_string()).map_err(input)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| name_or_path.into());
        return Ok(Source { name, program, args: &[] });
    }
    let c = corpus::by_name(name_or_path)
        .ok_or_else(|| input(anyhow!("{name_or_path}: no such file or corpus program")))?;
    let program = c.parse().with_context(|| format!("corpus program {name_or_path}")).map_err(input)?;
    Ok(Source { name: c.name.into(), program, args: c.args })
}

fn harden_config(opts: &HardenOpts) -> Res<HardenConfig> {
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(input)?;
        return HardenConfig::from_json(&text).context("hardening config").map_err(input);
    }
    let mut cfg = HardenConfig::with_checks(false, false, false, false);
    cfg.recovery = match opts.recovery {
        Recovery::Basic => RecoveryMode::Basic,
        Recovery::Extended => RecoveryMode::Extended,
    };
    for item in opts.checks.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let c = &mut cfg.checks;
        match item {
            "all" => (c.loads, c.stores, c.branches, c.other) = (true, true, true, true),
            "none" => {}
            "loads" => c.loads = true,
            "stores" => c.stores = true,
            "branches" => c.branches = true,
            "other" => c.other = true,
            _ => return Err(usage(anyhow!("unknown check class `{item}`"))),
        }
    }
    Ok(cfg)
}

fn build(p: &Program, variant: Variant, opts: &HardenOpts) -> Res<Program> {
    match variant {
        Variant::Native => Ok(p.clone()),
        Variant::Elzar => harden(p, &harden_config(opts)?).map_err(input),
        Variant::Swiftr => harden_triplicate(p).map_err(input),
    }
}

fn parse_args(s: Option<&str>, default: &[u64]) -> Res<Vec<u64>> {
    let Some(s) = s else { return Ok(default.to_vec()) };
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<i64>()
                .map(|v| v as u64)
                .or_else(|_| t.parse::<u64>())
                .map_err(|_| usage(anyhow!("bad argument `{t}`")))
        })
        .collect()
}

fn parse_target(s: &str) -> Res<Target> {
    Target::parse(s).ok_or_else(|| {
        let names: Vec<_> = Target::ALL.iter().map(|t| t.name()).collect();
        usage(anyhow!("unknown target `{s}` (expected one of {})", names.join(", ")))
    })
}

fn parse_region(s: Option<&str>) -> Res<Vec<Tag>> {
    let Some(s) = s else { return Ok(Tag::ALL.to_vec()) };
    s.split(',')
        .map(str::trim)
        .map(|t| {
            Tag::ALL.into_iter().find(|tag| tag.name() == t).ok_or_else(|| usage(anyhow!("unknown tag `{t}`")))
        })
        .collect()
}

fn resolve_seed(flag: Option<u64>) -> Res<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("LANEFORT_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| usage(anyhow!("LANEFORT_SEED is not an integer: `{v}`"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn finished(r: &ExecResult) -> Res<()> {
    match r.status {
        Status::Finished => Ok(()),
        s => Err(exec(anyhow!("execution ended with {s:?}{}", r.trap.as_ref().map(|t| format!(": {t}")).unwrap_or_default()))),
    }
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(exec)
}

/// Writes to stdout, treating a closed pipe (as with `| head`) as success.
fn stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn emit(path: Option<&Path>, text: &str) -> Res<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            stdout(text);
            Ok(())
        }
    }
}

/// Runs every variant fault-free and rejects semantic divergence. Returns
/// the cost profile plus one what-if summary line per hardened variant.
fn compare(name: &str, p: &Program, variants: &[Variant], opts: &HardenOpts, args: &[u64]) -> Res<(CostProfile, Vec<String>)> {
    let ex = ExecConfig::default();
    let native = execute(p, args, &ex);
    finished(&native)?;
    let mut runs = Vec::new();
    for &v in variants.iter().filter(|v| **v != Variant::Native) {
        let r = execute(&build(p, v, opts)?, args, &ex);
        if !r.same_behavior(&native) {
            return Err(exec(anyhow!("{name}: {} diverges from native ({:?})", v.name(), r.status)));
        }
        runs.push((v.name(), r));
    }
    let refs: Vec<(&str, &ExecResult)> = runs.iter().map(|(n, r)| (*n, r)).collect();
    let profile = CostProfile::build(name, &native, &refs).map_err(exec)?;
    let lines = runs
        .iter()
        .map(|(v, r)| {
            let w = whatif_estimate(&native.stats, &r.stats, &WhatIfConfig::all(true));
            format!("{name} {v}: measured {:.3}x, what-if (all proposals) {:.3}x", w.measured_factor, w.estimated_factor)
        })
        .collect();
    Ok((profile, lines))
}

fn report(out: &Path, runs: u64, seed: u64) -> Res<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(exec)?;
    let opts = HardenOpts { checks: "all".into(), recovery: Recovery::Extended, config: None };
    let variants = [Variant::Native, Variant::Elzar, Variant::Swiftr];
    let mut profiles = Vec::new();
    let mut whatif = String::from("bench,variant,measured_factor,estimated_factor\n");
    for c in CORPUS {
        let p = c.parse().map_err(input)?;
        let (profile, _) = compare(c.name, &p, &variants, &opts, c.args)?;
        let native = profile.variant("native").expect("native row").stats.clone();
        for v in profile.variants.iter().skip(1) {
            let w = whatif_estimate(&native, &v.stats, &WhatIfConfig::all(true));
            whatif.push_str(&format!("{},{},{:.4},{:.4}\n", c.name, v.variant, w.measured_factor, w.estimated_factor));
        }
        profiles.push(profile);
        if runs > 0 {
            for v in variants {
                let hp = build(&p, v, &opts)?;
                let cfg = CampaignConfig { runs, seed, ..Default::default() };
                let rep = campaign(&hp, c.args, &ExecConfig::default(), &cfg, c.name, v.name()).map_err(exec)?;
                write(&out.join(format!("campaign-{}-{}.json", c.name, v.name())), &(rep.to_json() + "\n"))?;
            }
        }
    }
    write(&out.join("cost.csv"), &profiles_to_csv(&profiles))?;
    write(&out.join("whatif.csv"), &whatif)?;
    println!("wrote {}", out.display());
    Ok(())
}
