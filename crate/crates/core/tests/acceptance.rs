//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its headline numbers (visible under --nocapture; the test name itself
//! carries the criterion number).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gapdecomp::analysis::AnalysisOptions;
use gapdecomp::commands::{bundled_asymmetric_dgp, run_simulate, run_validate, ValidateOptions};
use gapdecomp::config::parse_run_config;
use gapdecomp::decomp::{decompose, decompose_both_references};
use gapdecomp::infer::{bootstrap, BootstrapSpec, CiMethod, Clustering, Quantity};
use gapdecomp::io::{canonical_schema, load_microdata, summarize, CutoffSide};
use gapdecomp::model::{
    CellId, CompositionSample, CompositionTable, DatasetMeta, EffectTable, Group, GroupNames,
    MicroRecord, RdFit, RdSpec, Stratum,
};
use gapdecomp::rd::fit_rd;
use gapdecomp::synth::{make_population, population_truth, CellDgp, CountRule, DgpSpec};

fn fit_with_tau(stratum: Stratum, tau: f64) -> RdFit {
    RdFit {
        stratum,
        tau_hat: tau,
        below_coeffs: vec![0.0, 0.0],
        above_coeffs: vec![tau, 0.0],
        n_below: 10,
        n_above: 10,
        residual_variance: 0.0,
    }
}

fn effect_table(taus: &[(Group, usize, f64)], n_cells: usize) -> EffectTable {
    let mut by_group_cell = BTreeMap::new();
    for &(g, c, t) in taus {
        by_group_cell.insert(
            (g, CellId(c)),
            fit_with_tau(Stratum::GroupCell(g, CellId(c)), t),
        );
    }
    EffectTable {
        overall: fit_with_tau(Stratum::Overall, 0.0),
        by_group: [
            fit_with_tau(Stratum::Group(Group::Baseline), 0.0),
            fit_with_tau(Stratum::Group(Group::Comparison), 0.0),
        ],
        by_group_cell,
        missing_cells: BTreeMap::new(),
        n_cells,
    }
}

fn composition(pi0: &[f64], pi1: &[f64]) -> CompositionTable {
    let mut shares = BTreeMap::new();
    for (i, &s) in pi0.iter().enumerate() {
        shares.insert((Group::Baseline, CellId(i)), s);
    }
    for (i, &s) in pi1.iter().enumerate() {
        shares.insert((Group::Comparison, CellId(i)), s);
    }
    CompositionTable {
        shares,
        sample: CompositionSample::PreCutoff,
        n_cells: pi0.len(),
    }
}

/// Published Table-1 style entry: inputs are the rounded per-group effects,
/// the expected value is the published (rounded) change in gap.
struct TableEntry {
    label: &'static str,
    tau_comparison: f64,
    tau_baseline: f64,
    published: f64,
    published_decimals: u32,
}

#[test]
fn criterion_1_change_in_gap_reproduces_published_table() {
    let entries = [
        TableEntry { label: "unable overall, Black", tau_comparison: -0.05, tau_baseline: -0.03, published: -0.02, published_decimals: 2 },
        TableEntry { label: "unable overall, Hispanic", tau_comparison: -0.07, tau_baseline: -0.03, published: -0.04, published_decimals: 2 },
        TableEntry { label: "insured overall, Black", tau_comparison: 0.092, tau_baseline: 0.063, published: 0.029, published_decimals: 3 },
        TableEntry { label: "insured overall, Hispanic", tau_comparison: 0.15, tau_baseline: 0.063, published: 0.083, published_decimals: 3 },
        TableEntry { label: "unable non-south, Black", tau_comparison: -0.04, tau_baseline: -0.03, published: -0.01, published_decimals: 2 },
        TableEntry { label: "unable non-south, Hispanic", tau_comparison: -0.03, tau_baseline: -0.03, published: -0.01, published_decimals: 2 },
        TableEntry { label: "unable south, Black", tau_comparison: -0.05, tau_baseline: -0.03, published: -0.02, published_decimals: 2 },
        TableEntry { label: "unable south, Hispanic", tau_comparison: -0.12, tau_baseline: -0.03, published: -0.09, published_decimals: 2 },
        TableEntry { label: "insured non-south, Black", tau_comparison: 0.084, tau_baseline: 0.056, published: 0.028, published_decimals: 3 },
        TableEntry { label: "insured non-south, Hispanic", tau_comparison: 0.1, tau_baseline: 0.056, published: 0.047, published_decimals: 3 },
        TableEntry { label: "insured south, Black", tau_comparison: 0.097, tau_baseline: 0.076, published: 0.021, published_decimals: 3 },
        TableEntry { label: "insured south, Hispanic", tau_comparison: 0.21, tau_baseline: 0.076, published: 0.14, published_decimals: 2 },
    ];
    let started = std::time::Instant::now();
    for e in &entries {
        let computed = gapdecomp::decomp::change_in_gap(e.tau_comparison, e.tau_baseline);
        // inputs are rounded columns, so allow their rounding slack (0.005)
        // plus half an ulp of the published value
        let tolerance = 0.005 + 0.5 * 10f64.powi(-(e.published_decimals as i32)) + 1e-12;
        assert!(
            (computed - e.published).abs() <= tolerance,
            "{}: computed {computed}, published {}, tolerance {tolerance}",
            e.label,
            e.published
        );
    }
    // the overall rows whose arithmetic is exact in the published digits
    assert!((gapdecomp::decomp::change_in_gap(-0.05, -0.03) - (-0.02)).abs() < 1e-12);
    assert!((gapdecomp::decomp::change_in_gap(-0.07, -0.03) - (-0.04)).abs() < 1e-12);
    assert!((gapdecomp::decomp::change_in_gap(0.092, 0.063) - 0.029).abs() < 1e-12);
    assert!(started.elapsed().as_secs() < 1);
    println!(
        "criterion 1: PASS - change_in_gap matches all {} published entries",
        entries.len()
    );
}

#[test]
fn criterion_2_empirical_replication_substituted() {
    // The published tau/kappa values come from a restricted survey extract
    // whose estimation details are not available at desk scale, so the gate
    // substitutes the property-based and oracle criteria (3-9) for an exact
    // empirical replication. Nothing to execute here beyond recording that.
    println!("criterion 2: PASS - empirical replication substituted by criteria 3-9 (by design)");
}

#[test]
fn criterion_3_decomposition_identity_on_randomized_inputs() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..100 {
        let n_cells = rng.random_range(1..=6);
        let mut taus = Vec::new();
        for group in Group::BOTH {
            for c in 0..n_cells {
                taus.push((group, c, rng.random_range(-0.5..0.5)));
            }
        }
        let effects = effect_table(&taus, n_cells);
        let draw_shares = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..n_cells).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect()
        };
        let pi0 = draw_shares(&mut rng);
        let pi1 = draw_shares(&mut rng);
        let comp = composition(&pi0, &pi1);

        let pair = decompose_both_references(&effects, &comp).unwrap();
        for result in [&pair.by_comparison, &pair.by_baseline] {
            let plugin: f64 = (0..n_cells)
                .map(|c| {
                    let cell = CellId(c);
                    effects.cell_fit(Group::Comparison, cell).unwrap().tau_hat * pi1[c]
                        - effects.cell_fit(Group::Baseline, cell).unwrap().tau_hat * pi0[c]
                })
                .sum();
            let identity = result.within_component + result.composition_component;
            assert!(
                (identity - plugin).abs() <= 1e-12,
                "case {case}: identity violated by {}",
                (identity - plugin).abs()
            );
        }
        assert!((pair.by_comparison.delta - pair.by_baseline.delta).abs() <= 1e-12);
    }
    assert!(started.elapsed().as_secs() < 1);
    println!("criterion 3: PASS - within + composition = plug-in delta on 100 randomized inputs");
}

#[test]
fn criterion_4_kappa_extreme_cases() {
    let started = std::time::Instant::now();

    // equal shares: composition vanishes, kappa = 1 exactly
    let effects = effect_table(
        &[
            (Group::Comparison, 0, -0.12),
            (Group::Comparison, 1, -0.03),
            (Group::Baseline, 0, -0.05),
            (Group::Baseline, 1, -0.01),
        ],
        2,
    );
    let comp = composition(&[0.35, 0.65], &[0.35, 0.65]);
    let r = decompose(&effects, &comp, Group::Comparison).unwrap();
    assert_eq!(r.composition_component, 0.0);
    assert!((r.kappa.unwrap() - 1.0).abs() <= 1e-12);

    // equal cell effects: within vanishes, kappa = 0 exactly
    let effects = effect_table(
        &[
            (Group::Comparison, 0, -0.12),
            (Group::Comparison, 1, -0.03),
            (Group::Baseline, 0, -0.12),
            (Group::Baseline, 1, -0.03),
        ],
        2,
    );
    let comp = composition(&[0.8, 0.2], &[0.3, 0.7]);
    let r = decompose(&effects, &comp, Group::Comparison).unwrap();
    assert_eq!(r.within_component, 0.0);
    assert!(r.kappa.unwrap().abs() <= 1e-12);
    assert!(r.delta != 0.0);

    // kappa above one: within and total share a sign, composition opposes
    let effects = effect_table(
        &[
            (Group::Comparison, 0, 0.5),
            (Group::Comparison, 1, 0.3),
            (Group::Baseline, 0, 0.4),
            (Group::Baseline, 1, 0.1),
        ],
        2,
    );
    let comp = composition(&[0.9, 0.1], &[0.5, 0.5]);
    let r = decompose(&effects, &comp, Group::Comparison).unwrap();
    let kappa = r.kappa.unwrap();
    assert!(kappa > 1.0, "expected kappa > 1, got {kappa}");
    assert!((r.within_component + r.composition_component - r.delta).abs() <= 1e-12);

    // kappa below zero: within opposes the total
    let effects = effect_table(
        &[
            (Group::Comparison, 0, 0.6),
            (Group::Comparison, 1, -0.4),
            (Group::Baseline, 0, 0.5),
            (Group::Baseline, 1, -0.5),
        ],
        2,
    );
    let comp = composition(&[0.8, 0.2], &[0.2, 0.8]);
    let r = decompose(&effects, &comp, Group::Comparison).unwrap();
    let kappa = r.kappa.unwrap();
    assert!(kappa < 0.0, "expected kappa < 0, got {kappa}");

    assert!(started.elapsed().as_secs() < 1);
    println!("criterion 4: PASS - kappa is 1/0 exactly at the extremes and can leave [0, 1]");
}

#[test]
fn criterion_5_noiseless_oracle_equivalence() {
    let started = std::time::Instant::now();
    let dgp = bundled_asymmetric_dgp();
    let summary = run_validate(&dgp, &ValidateOptions::default()).unwrap();
    assert!(summary.passed, "validation failed:\n{}", summary.render_table());
    assert_eq!(summary.tolerance, 1e-8);
    assert!(!summary.misspecified);
    for check in &summary.checks {
        assert!(check.pass, "check failed: {}", check.name);
    }
    assert!(started.elapsed().as_secs() < 5);
    println!(
        "criterion 5: PASS - all {} oracle comparisons within 1e-8 on the bundled process",
        summary.checks.len()
    );
}

#[test]
fn criterion_6_rd_exactness_and_equivariance() {
    let started = std::time::Instant::now();
    let meta = DatasetMeta {
        cells: gapdecomp::model::Alphabet::from_labels(vec!["all".to_string()]),
        locations: gapdecomp::model::Alphabet::from_labels(vec!["l0".to_string()]),
        groups: GroupNames {
            baseline: "g0".to_string(),
            comparison: "g1".to_string(),
        },
    };
    let spec = RdSpec::default();

    // the stated closed-form process: tau* = -0.04 recovered to 1e-10
    let records: Vec<MicroRecord> = (51..=79)
        .map(|age| {
            let d = (age - 65) as f64;
            let outcome = if age > 65 {
                2.0 - 0.04 + 0.1 * d
            } else {
                2.0 + 0.5 * d
            };
            MicroRecord {
                outcome,
                group: Group::Baseline,
                cell: CellId(0),
                running: age,
                location: gapdecomp::model::LocationId(0),
                weight: 1.0,
            }
        })
        .collect();
    let fit = fit_rd(&records, &meta, &spec, Stratum::Overall).unwrap();
    assert!(
        (fit.tau_hat - (-0.04)).abs() <= 1e-10,
        "tau_hat = {}",
        fit.tau_hat
    );

    // 50 random linear processes: exact recovery, affine equivariance,
    // weight-scale invariance
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for case in 0..50 {
        let base = rng.random_range(-1.0..1.0);
        let slope_below = rng.random_range(-0.05..0.05);
        let slope_above = rng.random_range(-0.05..0.05);
        let tau_true = rng.random_range(-0.3..0.3);
        let records: Vec<MicroRecord> = (51..=79)
            .flat_map(|age| {
                let d = (age - 65) as f64;
                let mean = if age > 65 {
                    base + tau_true + slope_above * d
                } else {
                    base + slope_below * d
                };
                let copies = 1 + (age as usize * 7 + case) % 4;
                (0..copies).map(move |k| MicroRecord {
                    outcome: mean,
                    group: Group::Baseline,
                    cell: CellId(0),
                    running: age,
                    location: gapdecomp::model::LocationId(0),
                    weight: 0.25 + ((age as usize + k * 3 + case) % 8) as f64,
                })
            })
            .collect();

        let fit = fit_rd(&records, &meta, &spec, Stratum::Overall).unwrap();
        assert!(
            (fit.tau_hat - tau_true).abs() <= 1e-8,
            "case {case}: recovery off by {}",
            (fit.tau_hat - tau_true).abs()
        );

        let scale = rng.random_range(0.5..3.0);
        let shift = rng.random_range(-2.0..2.0);
        let transformed: Vec<MicroRecord> = records
            .iter()
            .map(|r| MicroRecord {
                outcome: scale * r.outcome + shift,
                ..*r
            })
            .collect();
        let tfit = fit_rd(&transformed, &meta, &spec, Stratum::Overall).unwrap();
        assert!(
            (tfit.tau_hat - scale * fit.tau_hat).abs() <= 1e-8,
            "case {case}: affine equivariance off"
        );

        let wscale = rng.random_range(0.1..50.0);
        let reweighted: Vec<MicroRecord> = records
            .iter()
            .map(|r| MicroRecord {
                weight: wscale * r.weight,
                ..*r
            })
            .collect();
        let wfit = fit_rd(&reweighted, &meta, &spec, Stratum::Overall).unwrap();
        assert!((wfit.tau_hat - fit.tau_hat).abs() <= 1e-12);
        for (a, b) in fit
            .below_coeffs
            .iter()
            .chain(&fit.above_coeffs)
            .zip(wfit.below_coeffs.iter().chain(&wfit.above_coeffs))
        {
            assert!((a - b).abs() <= 1e-12, "case {case}: weight scaling moved a coefficient");
        }
    }
    assert!(started.elapsed().as_secs() < 5);
    println!("criterion 6: PASS - exact recovery plus equivariance suites on 50 random processes");
}

fn coverage_dgp(seed: u64) -> DgpSpec {
    let cell = |group, cell: &str, count, base: Vec<f64>, effect| CellDgp {
        group,
        cell: cell.to_string(),
        count_per_age: CountRule::Constant(count),
        baseline_coeffs: base,
        above_coeffs: vec![-0.001],
        effect,
        noise_sd: 0.1,
    };
    DgpSpec {
        cutoff: 65,
        window: (51, 79),
        seed,
        treated_side: Default::default(),
        location_clusters: 10,
        group_names: GroupNames {
            baseline: "White".to_string(),
            comparison: "Hispanic".to_string(),
        },
        cells: vec![
            cell(Group::Comparison, "South", 210, vec![0.300, -0.004], -0.12),
            cell(Group::Comparison, "Non-South", 140, vec![0.250, -0.003], -0.03),
            cell(Group::Baseline, "South", 70, vec![0.110, -0.002], -0.03),
            cell(Group::Baseline, "Non-South", 280, vec![0.090, -0.001], -0.03),
        ],
    }
}

#[test]
fn criterion_7_bootstrap_determinism_and_coverage() {
    let started = std::time::Instant::now();
    let opts = AnalysisOptions::default();

    // byte-identical reports under a fixed seed
    let dgp = coverage_dgp(42);
    let small = DgpSpec {
        cells: dgp
            .cells
            .iter()
            .map(|c| CellDgp {
                count_per_age: CountRule::Constant(10),
                ..c.clone()
            })
            .collect(),
        ..dgp.clone()
    };
    let ds = make_population(&small).unwrap();
    let spec = small.rd_spec();
    let boot = BootstrapSpec {
        replicates: 50,
        seed: 9,
        cluster: Clustering::None,
        ci_level: 0.95,
        method: CiMethod::Percentile,
    };
    let render = || {
        let summary = bootstrap(&ds.records, &ds.meta, &spec, &opts, &boot).unwrap();
        let ingest = summarize(&ds.records, &ds.meta, &spec);
        let block = gapdecomp::report::analysis_report(
            "outcome",
            &ds,
            ingest,
            &summary.point,
            Some(&summary),
            &spec,
        );
        serde_json::to_string_pretty(&block).unwrap()
    };
    let first = render();
    let second = render();
    assert_eq!(first, second, "fixed-seed reports are not byte-identical");

    // noiseless population: zero-width intervals (one outcome law per group)
    let mut degenerate = small.clone();
    for c in &mut degenerate.cells {
        c.noise_sd = 0.0;
        let (base, effect) = match c.group {
            Group::Baseline => (vec![0.10, -0.002], -0.03),
            Group::Comparison => (vec![0.28, -0.003], -0.084),
        };
        c.baseline_coeffs = base;
        c.above_coeffs = vec![-0.001];
        c.effect = effect;
    }
    let dsz = make_population(&degenerate).unwrap();
    let zspec = degenerate.rd_spec();
    let zsum = bootstrap(&dsz.records, &dsz.meta, &zspec, &opts, &boot).unwrap();
    for quantity in [
        Quantity::DeltaPlugin,
        Quantity::DeltaPooled,
        Quantity::Gamma0,
        Quantity::Gamma1,
        Quantity::Within(Group::Comparison),
        Quantity::Composition(Group::Baseline),
    ] {
        let (lo, hi) = zsum.ci(quantity).unwrap();
        assert!(
            (hi - lo).abs() <= 1e-10,
            "noiseless interval for {quantity:?} has width {}",
            hi - lo
        );
    }

    // Monte Carlo coverage: 100 populations, B = 200, 95% interval for the
    // plug-in delta must cover the true value at least 90 times
    let truth = population_truth(&coverage_dgp(0)).unwrap();
    let delta_true = truth.delta;
    let mut covered = 0usize;
    for rep in 0..100 {
        let dgp = coverage_dgp(7_000 + rep);
        let population = make_population(&dgp).unwrap();
        let spec = dgp.rd_spec();
        let boot = BootstrapSpec {
            replicates: 200,
            seed: 100_000 + rep,
            cluster: Clustering::None,
            ci_level: 0.95,
            method: CiMethod::Percentile,
        };
        let summary = bootstrap(&population.records, &population.meta, &spec, &opts, &boot)
            .unwrap();
        let (lo, hi) = summary.ci(Quantity::DeltaPlugin).unwrap();
        if lo <= delta_true && delta_true <= hi {
            covered += 1;
        }
    }
    assert!(
        covered >= 90,
        "coverage {covered}/100 below the 90/100 gate"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 600, "criterion 7 took {elapsed:?}");
    println!(
        "criterion 7: PASS - byte-identical seeded runs, zero-width noiseless intervals, coverage {covered}/100 in {elapsed:?}"
    );
}

#[test]
fn criterion_8_simulate_write_load_summarize_round_trip() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("population.csv");
    let truth_path = dir.path().join("truth.json");
    let dgp = bundled_asymmetric_dgp();
    let written = run_simulate(&dgp, &data, &truth_path).unwrap();
    assert_eq!(written, (6 + 4 + 2 + 8) * 29);

    let schema = canonical_schema(&dgp.group_names);
    let spec = dgp.rd_spec();
    let (ds, report) = load_microdata(&data, &schema, &spec).unwrap();
    assert_eq!(report.records_kept, written);
    assert_eq!(report.dropped_total(), 0);

    // per-(group, cell, side) counts equal the process definition exactly:
    // 15 untreated ages (51..=65) and 14 treated ages (66..=79)
    let summary = summarize(&ds.records, &ds.meta, &spec);
    let count_of = |group, cell: &str, side| {
        summary
            .strata
            .iter()
            .find(|s| s.group == group && s.cell == cell && s.side == side)
            .map(|s| s.count)
            .unwrap_or(0)
    };
    for dgp_cell in &dgp.cells {
        let per_age = match dgp_cell.count_per_age {
            CountRule::Constant(c) => c as usize,
            _ => unreachable!("bundled process uses constant counts"),
        };
        assert_eq!(
            count_of(dgp_cell.group, &dgp_cell.cell, CutoffSide::Below),
            per_age * 15
        );
        assert_eq!(
            count_of(dgp_cell.group, &dgp_cell.cell, CutoffSide::Above),
            per_age * 14
        );
    }
    assert!(started.elapsed().as_secs() < 5);
    println!("criterion 8: PASS - round-trip reproduces every stratum count exactly");
}

#[test]
fn criterion_9_reference_robustness_is_reported() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("population.csv");
    let truth_path = dir.path().join("truth.json");
    let dgp = bundled_asymmetric_dgp();
    run_simulate(&dgp, &data, &truth_path).unwrap();

    let config = parse_run_config(&format!(
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
"#,
        data.display()
    ))
    .unwrap();
    let report = gapdecomp::commands::run_decompose(&config).unwrap();
    let d = &report.analyses[0].decomposition;

    assert!(d.delta_discrepancy <= 1e-12);
    let kappa_cmp = d.by_comparison_reference.kappa.value.unwrap();
    let kappa_base = d.by_baseline_reference.kappa.value.unwrap();
    assert!((kappa_cmp - 1.0).abs() <= 1e-8, "kappa(ref=comparison) = {kappa_cmp}");
    assert!(
        (kappa_base - 1.0 / 3.0).abs() <= 1e-8,
        "kappa(ref=baseline) = {kappa_base}"
    );
    assert!(d.reference_sensitive, "report must flag the reference difference");
    assert!((d.kappa_spread.unwrap() - 2.0 / 3.0).abs() <= 1e-8);
    assert!(started.elapsed().as_secs() < 5);
    println!(
        "criterion 9: PASS - delta agrees across references, kappa 1.0 vs 1/3 flagged in the report"
    );
}
