//! Process-level CLI tests: exit codes, report shape, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gapdecomp")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn simulate_population(dir: &Path) -> PathBuf {
    let data = dir.join("population.csv");
    let out = run(
        &[
            "simulate",
            "--data",
            data.to_str().unwrap(),
            "--truth",
            dir.join("truth.json").to_str().unwrap(),
        ],
        dir,
    );
    assert!(out.status.success(), "simulate failed: {}", stderr_of(&out));
    data
}

fn decompose_args<'a>(data: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "decompose",
        "--input",
        data,
        "--outcome",
        "outcome",
        "--baseline",
        "White",
        "--comparison",
        "Hispanic",
        "--group-col",
        "group",
        "--cell-col",
        "cell",
        "--running-col",
        "running",
        "--location-col",
        "location",
        "--weight-col",
        "weight",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn unknown_column_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    let mut args = decompose_args(data.to_str().unwrap(), &[]);
    let idx = args.iter().position(|a| *a == "running").unwrap();
    args[idx] = "age_in_years";
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("age_in_years"),
        "stderr must name the missing column: {}",
        stderr_of(&out)
    );
}

#[test]
fn missing_required_flags_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["decompose", "--input", "x.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "not toml [").unwrap();
    let out = run(&["decompose", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn two_comparisons_give_two_report_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    // add a third group so a second comparison exists
    let mut content = std::fs::read_to_string(&data).unwrap();
    for age in [55, 56, 57, 58, 59, 60, 61, 62, 70, 71, 72, 73, 74, 75] {
        content.push_str(&format!("0.2,Black,South,{age},c0,1\n"));
        content.push_str(&format!("0.25,Black,Non-South,{age},c1,1\n"));
    }
    std::fs::write(&data, content).unwrap();

    let out = run(
        &decompose_args(
            data.to_str().unwrap(),
            &["--comparison", "Black", "--output", "report.json"],
        ),
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let analyses = report["analyses"].as_array().unwrap();
    assert_eq!(analyses.len(), 2);
    let comparisons: Vec<&str> = analyses
        .iter()
        .map(|a| a["comparison_group"].as_str().unwrap())
        .collect();
    assert_eq!(comparisons, ["Hispanic", "Black"]);
    // the Hispanic block must not count Black rows as unmapped: they are an
    // explicitly excluded comparison group
    assert_eq!(analyses[0]["ingest"]["dropped_unmapped"], 0);
    assert!(analyses[0]["ingest"]["dropped_excluded_group"].as_u64().unwrap() > 0);
}

#[test]
fn fixed_seed_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    let args = |name: &'static str| {
        decompose_args(
            data.to_str().unwrap(),
            &[
                "--bootstrap",
                "25",
                "--seed",
                "11",
                "--cluster-by-location",
                "--output",
                name,
            ],
        )
    };
    let first = run(&args("a.json"), dir.path());
    assert!(first.status.success(), "{}", stderr_of(&first));
    let second = run(&args("b.json"), dir.path());
    assert!(second.status.success());
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b, "reports differ across identical seeded runs");
}

#[test]
fn report_deltas_are_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    let out = run(
        &decompose_args(data.to_str().unwrap(), &["--output", "report.json"]),
        dir.path(),
    );
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let a = &report["analyses"][0];

    let tau_b = a["effects"]["baseline"]["tau"].as_f64().unwrap();
    let tau_c = a["effects"]["comparison"]["tau"].as_f64().unwrap();
    let delta_pooled = a["gaps"]["delta_pooled"]["value"].as_f64().unwrap();
    assert!((delta_pooled - (tau_c - tau_b)).abs() <= 1e-10);

    let delta_plugin = a["gaps"]["delta_plugin"]["value"].as_f64().unwrap();
    for reference in ["by_comparison_reference", "by_baseline_reference"] {
        let d = &a["decomposition"][reference];
        let within = d["within"]["value"].as_f64().unwrap();
        let composition = d["composition"]["value"].as_f64().unwrap();
        assert!((within + composition - delta_plugin).abs() <= 1e-10);
    }

    let gamma0 = a["gaps"]["gamma0"]["value"].as_f64().unwrap();
    let gamma1 = a["gaps"]["gamma1"]["value"].as_f64().unwrap();
    assert!((delta_pooled - (gamma1 - gamma0)).abs() <= 1e-10);
}

#[test]
fn per_cell_csv_is_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    let out = run(
        &decompose_args(
            data.to_str().unwrap(),
            &["--output", "report.json", "--cells-csv", "cells.csv"],
        ),
        dir.path(),
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("outcome,"));
    assert_eq!(lines.count(), 2); // Non-South and South
}

#[test]
fn partial_config_tables_use_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        format!(
            r#"
input = "{}"
outcomes = ["outcome"]
baseline = "White"
comparisons = ["Hispanic"]

[columns]
group = "group"
cell = "cell"
running = "running"
location = "location"
weight = "weight"

[rd]
donut = 1

[bootstrap]
replicates = 20
"#,
            data.display()
        ),
    )
    .unwrap();
    let out = run(
        &["decompose", "--config", "run.toml", "--output", "r.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap())
            .unwrap();
    assert_eq!(report["rd"]["cutoff"], 65);
    assert_eq!(report["rd"]["donut"], 1);
    assert_eq!(report["bootstrap"]["replicates"], 20);
    assert_eq!(report["bootstrap"]["ci_level"], 0.95);
}

#[test]
fn unfittable_strata_are_annotated_without_failing() {
    // a cell observed only above the cutoff cannot be fitted, has no
    // pre-cutoff share, and must not block the run
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_population(dir.path());
    let mut content = std::fs::read_to_string(&data).unwrap();
    for age in [70, 71, 72, 73] {
        content.push_str(&format!("0.5,White,Island,{age},c0,1\n"));
        content.push_str(&format!("0.6,Hispanic,Island,{age},c0,1\n"));
    }
    std::fs::write(&data, content).unwrap();

    let out = run(
        &decompose_args(data.to_str().unwrap(), &["--output", "report.json"]),
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let missing = report["analyses"][0]["effects"]["missing_cells"]
        .as_array()
        .unwrap();
    assert_eq!(missing.len(), 2, "both groups' Island strata are unfittable");
    assert!(missing.iter().all(|m| m["cell"] == "Island"));
    assert!(missing[0]["reason"].as_str().unwrap().contains("untreated"));
}

#[test]
fn simulate_is_reproducible_and_counts_match() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["one", "two"] {
        let out = run(
            &[
                "simulate",
                "--data",
                &format!("{name}.csv"),
                "--truth",
                &format!("{name}.json"),
            ],
            dir.path(),
        );
        assert!(out.status.success());
        assert!(stderr_of(&out).contains("wrote 580 records"));
    }
    let a = std::fs::read(dir.path().join("one.csv")).unwrap();
    let b = std::fs::read(dir.path().join("two.csv")).unwrap();
    assert_eq!(a, b);
    let ta = std::fs::read(dir.path().join("one.json")).unwrap();
    let tb = std::fs::read(dir.path().join("two.json")).unwrap();
    assert_eq!(ta, tb);

    // truth file carries the oracle kappa under both references
    let truth: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    let k1 = truth["by_comparison_reference"]["kappa"].as_f64().unwrap();
    let k0 = truth["by_baseline_reference"]["kappa"].as_f64().unwrap();
    assert!((k1 - 1.0).abs() < 1e-12);
    assert!((k0 - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn validate_passes_on_bundled_process() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate"], dir.path());
    assert!(out.status.success(), "{}", stderr_of(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overall: PASS"));
}

#[test]
fn validate_detects_forced_misspecification() {
    let dir = tempfile::tempdir().unwrap();
    // order-0 fit of a linear process: bias must be detected and labeled
    let out = run(&["validate", "--poly-order", "0", "--json"], dir.path());
    assert!(out.status.success(), "{}", stderr_of(&out));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["misspecified"], true);
    assert_eq!(summary["passed"], true);
    let checks = summary["checks"].as_array().unwrap();
    assert!(checks
        .iter()
        .any(|c| c["expected_fail"] == true && c["pass"] == false));
}

#[test]
fn validate_empty_dgp_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.toml"), "").unwrap();
    let out = run(&["validate", "--dgp", "empty.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // an impossible tolerance fails the comparison without being an error
    let out = run(&["validate", "--tolerance", "1e-30"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overall: FAIL"));
}
