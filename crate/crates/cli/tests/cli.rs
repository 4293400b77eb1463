use std::fs;
use std::process::{Command, Output};

fn lanefort(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanefort"))
        .args(args)
        .env_remove("LANEFORT_SEED")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn run_prints_program_output() {
    let o = lanefort(&["run", "sum100"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(text(&o.stdout), "4950\n");
}

#[test]
fn hardened_files_differ_but_behave_like_native() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for pass in ["elzar", "swiftr"] {
        let path = dir.path().join(format!("{pass}.ir"));
        let p = path.to_str().unwrap();
        let o = lanefort(&["harden", "sum100", "--pass", pass, "-o", p]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        let o = lanefort(&["run", p]);
        assert_eq!(text(&o.stdout), "4950\n");
        bodies.push(fs::read_to_string(&path).unwrap());
    }
    assert_ne!(bodies[0], bodies[1]);
}

#[test]
fn malformed_input_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ir");
    fs::write(&path, "func @main() -> void {\nentry:\n  %x = frobnicate i64 1\n  ret\n}\n").unwrap();
    let o = lanefort(&["harden", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("3:"), "{}", text(&o.stderr));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(lanefort(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lanefort(&["campaign", "sum100", "--target", "nowhere"]).status.code(), Some(1));
    assert_eq!(lanefort(&["campaign", "sum100", "--runs", "0"]).status.code(), Some(1));
}

#[test]
fn trapping_program_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trap.ir");
    let src = "func @main() -> i64 {\nentry:\n  %a = const i64 7\n  %z = const i64 0\n  %q = div i64 %a, %z\n  ret %q\n}\n";
    fs::write(&path, src).unwrap();
    assert_eq!(lanefort(&["run", path.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(lanefort(&["campaign", path.to_str().unwrap(), "--runs", "5"]).status.code(), Some(3));
}

#[test]
fn campaign_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("r{k}.json"));
        let args = ["campaign", "sum100", "--variant", "elzar", "--runs", "60", "--seed", "1"];
        let o = lanefort(&[&args[..], &["--report", path.to_str().unwrap()]].concat());
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        reports.push(fs::read(&path).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    let rates = v["rates"].as_object().unwrap();
    let sum: f64 = ["hang", "os_detected", "corrected", "masked", "sdc"]
        .iter()
        .map(|k| rates[*k].as_f64().unwrap())
        .sum();
    assert!((sum - 100.0).abs() < 1e-9);
    assert_eq!(v["config"]["seed"], 1);
}

#[test]
fn seed_comes_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_lanefort"))
        .args(["campaign", "sum100", "--runs", "3"])
        .env("LANEFORT_SEED", "77")
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config"]["seed"], 77);
}

#[test]
fn vector_lane_campaign_on_hardened_has_no_sdc() {
    let o = lanefort(&[
        "campaign", "memcpy", "--variant", "elzar", "--runs", "200", "--target", "vector-lanes-only",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcomes"]["sdc"], 0);
}

#[test]
fn compare_emits_one_row_per_variant() {
    let o = lanefort(&["compare", "sum100", "native", "elzar", "swiftr"]);
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o.stdout);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("sum100,native,1.0000"));
    let err = text(&o.stderr);
    for line in err.lines() {
        let nums: Vec<f64> = line
            .split_whitespace()
            .filter_map(|w| w.trim_end_matches([',', 'x']).parse().ok())
            .collect();
        assert!(nums[1] <= nums[0], "{line}");
    }
}

#[test]
fn inject_classifies_a_single_flip() {
    let o = lanefort(&["inject", "sum100", "--occurrence", "50", "--bit", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(["hang", "os_detected", "corrected", "masked", "sdc"].contains(&v["outcome"].as_str().unwrap()));
}

#[test]
fn report_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = lanefort(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let cost = fs::read_to_string(dir.path().join("cost.csv")).unwrap();
    assert_eq!(cost.lines().count(), 1 + 3 * lanefort_core::corpus::CORPUS.len());
    assert!(dir.path().join("whatif.csv").exists());
}
