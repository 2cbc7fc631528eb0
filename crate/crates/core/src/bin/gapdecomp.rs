//! Command-line interface: decompose a disparity-gap change from survey
//! microdata, simulate synthetic populations, and validate the pipeline
//! against the synthetic oracle.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 estimation error,
//! 4 validation failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gapdecomp::commands::{
    bundled_asymmetric_dgp, run_decompose, run_simulate, run_validate, ValidateOptions,
};
use gapdecomp::config::{load_dgp, load_run_config, ColumnConfig, OptionsConfig, RunConfig};
use gapdecomp::infer::Clustering;
use gapdecomp::model::{CompositionSample, RdSpec, TreatedSide};
use gapdecomp::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "gapdecomp",
    version,
    about = "Decompose treatment-driven changes in a disparity gap between two groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects on survey microdata and decompose the change in gap
    Decompose(Box<DecomposeArgs>),
    /// Generate a synthetic population plus its ground-truth estimands
    Simulate(SimulateArgs),
    /// Generate, re-estimate, and compare every estimand to the oracle
    Validate(ValidateArgs),
}

#[derive(Args)]
struct DecomposeArgs {
    /// TOML run configuration; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,

    /// Input CSV file
    #[arg(long)]
    input: Option<PathBuf>,
    /// Outcome column; repeat for several outcomes
    #[arg(long = "outcome")]
    outcomes: Vec<String>,
    /// Group label coded 0 (e.g. White)
    #[arg(long)]
    baseline: Option<String>,
    /// Group label coded 1; repeat for several pairwise runs
    #[arg(long = "comparison")]
    comparisons: Vec<String>,

    /// Column holding the group label
    #[arg(long)]
    group_col: Option<String>,
    /// Column holding the covariate cell
    #[arg(long)]
    cell_col: Option<String>,
    /// Column holding the integer running variable (age)
    #[arg(long)]
    running_col: Option<String>,
    /// Column holding the cluster location
    #[arg(long)]
    location_col: Option<String>,
    /// Column holding the survey weight (omit for unit weights)
    #[arg(long)]
    weight_col: Option<String>,

    /// Eligibility cutoff
    #[arg(long)]
    cutoff: Option<i32>,
    /// Lower window bound (inclusive)
    #[arg(long)]
    window_min: Option<i32>,
    /// Upper window bound (inclusive)
    #[arg(long)]
    window_max: Option<i32>,
    /// Polynomial order of the per-side trends
    #[arg(long)]
    poly_order: Option<usize>,
    /// Which side is treated: above (strictly) or at_or_above
    #[arg(long)]
    treated_side: Option<String>,
    /// Exclude running values with |r - cutoff| < donut
    #[arg(long)]
    donut: Option<u32>,
    /// Ignore survey weights
    #[arg(long)]
    unweighted: bool,

    /// Bootstrap replicate count; enables the bootstrap
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Bootstrap seed
    #[arg(long)]
    seed: Option<u64>,
    /// Resample whole locations instead of records
    #[arg(long)]
    cluster_by_location: bool,
    /// Confidence level for percentile intervals
    #[arg(long)]
    ci_level: Option<f64>,

    /// Composition sample: pre_cutoff, post_cutoff, or all
    #[arg(long)]
    composition_sample: Option<String>,
    /// |delta| at or below this reports kappa as undefined
    #[arg(long)]
    kappa_threshold: Option<f64>,

    /// Report destination (stdout when omitted)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Optional per-cell CSV summary
    #[arg(long)]
    cells_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Process definition (TOML); the bundled two-region process when omitted
    #[arg(long)]
    dgp: Option<PathBuf>,
    /// Where to write the population (canonical CSV)
    #[arg(long, default_value = "population.csv")]
    data: PathBuf,
    /// Where to write the oracle truth (JSON)
    #[arg(long, default_value = "truth.json")]
    truth: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Process definition (TOML); the bundled two-region process when omitted
    #[arg(long)]
    dgp: Option<PathBuf>,
    /// Fit this polynomial order instead of the process degree; choosing a
    /// lower order enters misspecified mode, where effect-quantity failures
    /// are expected and detecting the bias is the pass condition
    #[arg(long)]
    poly_order: Option<usize>,
    /// Comparison tolerance (default: 1e-8 noiseless, ~10 sigma otherwise)
    #[arg(long)]
    tolerance: Option<f64>,
    /// Emit the check table as JSON instead of text
    #[arg(long)]
    json: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Estimation => 3,
    }
}

fn merge_config(args: DecomposeArgs) -> Result<RunConfig, Error> {
    let mut config = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig {
            input: PathBuf::new(),
            outcomes: Vec::new(),
            baseline: String::new(),
            comparisons: Vec::new(),
            columns: ColumnConfig {
                group: String::new(),
                cell: String::new(),
                running: String::new(),
                location: String::new(),
                weight: None,
            },
            cell_grouping: Default::default(),
            rd: RdSpec::default(),
            bootstrap: None,
            options: OptionsConfig::default(),
            output: None,
            cells_csv: None,
        },
    };

    if let Some(v) = args.input {
        config.input = v;
    }
    if !args.outcomes.is_empty() {
        config.outcomes = args.outcomes;
    }
    if let Some(v) = args.baseline {
        config.baseline = v;
    }
    if !args.comparisons.is_empty() {
        config.comparisons = args.comparisons;
    }
    if let Some(v) = args.group_col {
        config.columns.group = v;
    }
    if let Some(v) = args.cell_col {
        config.columns.cell = v;
    }
    if let Some(v) = args.running_col {
        config.columns.running = v;
    }
    if let Some(v) = args.location_col {
        config.columns.location = v;
    }
    if let Some(v) = args.weight_col {
        config.columns.weight = Some(v);
    }
    if let Some(v) = args.cutoff {
        config.rd.cutoff = v;
    }
    if let Some(v) = args.window_min {
        config.rd.window.0 = v;
    }
    if let Some(v) = args.window_max {
        config.rd.window.1 = v;
    }
    if let Some(v) = args.poly_order {
        config.rd.poly_order = v;
    }
    if let Some(v) = &args.treated_side {
        config.rd.treated_side = match v.as_str() {
            "above" => TreatedSide::Above,
            "at_or_above" => TreatedSide::AtOrAbove,
            other => {
                return Err(Error::Config(format!(
                    "treated_side must be 'above' or 'at_or_above', got '{other}'"
                )))
            }
        };
    }
    if let Some(v) = args.donut {
        config.rd.donut = v;
    }
    if args.unweighted {
        config.rd.weighted = false;
    }
    if args.bootstrap.is_some()
        || args.seed.is_some()
        || args.cluster_by_location
        || args.ci_level.is_some()
    {
        let mut boot = config.bootstrap.take().unwrap_or_default();
        if let Some(v) = args.bootstrap {
            boot.replicates = v;
        }
        if let Some(v) = args.seed {
            boot.seed = v;
        }
        if args.cluster_by_location {
            boot.cluster = Clustering::ByLocation;
        }
        if let Some(v) = args.ci_level {
            boot.ci_level = v;
        }
        config.bootstrap = Some(boot);
    }
    if let Some(v) = &args.composition_sample {
        config.options.composition_sample = match v.as_str() {
            "pre_cutoff" => CompositionSample::PreCutoff,
            "post_cutoff" => CompositionSample::PostCutoff,
            "all" => CompositionSample::All,
            other => {
                return Err(Error::Config(format!(
                    "composition_sample must be pre_cutoff, post_cutoff, or all, got '{other}'"
                )))
            }
        };
    }
    if let Some(v) = args.kappa_threshold {
        config.options.kappa_threshold = v;
    }
    if let Some(v) = args.output {
        config.output = Some(v);
    }
    if let Some(v) = args.cells_csv {
        config.cells_csv = Some(v);
    }

    if config.input.as_os_str().is_empty() {
        return Err(Error::Config(
            "an input file is required (--input or the config's `input`)".to_string(),
        ));
    }
    for (value, flag) in [
        (&config.columns.group, "--group-col"),
        (&config.columns.cell, "--cell-col"),
        (&config.columns.running, "--running-col"),
        (&config.columns.location, "--location-col"),
    ] {
        if value.is_empty() {
            return Err(Error::Config(format!("{flag} is required")));
        }
    }
    if config.baseline.is_empty() {
        return Err(Error::Config("--baseline is required".to_string()));
    }
    Ok(config)
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), Error> {
    let config = merge_config(args)?;
    let report = run_decompose(&config)?;
    let json = report.to_json() + "\n";
    match &config.output {
        Some(path) => {
            std::fs::write(path, &json).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            eprintln!("wrote report to {}", path.display());
        }
        None => print!("{json}"),
    }
    if let Some(path) = &config.cells_csv {
        gapdecomp::report::write_cells_csv(&report, path)?;
        eprintln!("wrote per-cell summary to {}", path.display());
    }
    for a in &report.analyses {
        let d = &a.decomposition.by_comparison_reference;
        let kappa = d
            .kappa
            .value
            .map(|k| format!("{k:.4}"))
            .unwrap_or_else(|| "undefined".to_string());
        eprintln!(
            "{} ({} vs {}): delta={:.5} within={:.5} composition={:.5} kappa={kappa}",
            a.outcome,
            a.comparison_group,
            a.baseline_group,
            d.delta.value,
            d.within.value,
            d.composition.value
        );
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let dgp = match &args.dgp {
        Some(path) => load_dgp(path)?,
        None => bundled_asymmetric_dgp(),
    };
    let records = run_simulate(&dgp, &args.data, &args.truth)?;
    eprintln!(
        "wrote {records} records to {} and oracle truth to {}",
        args.data.display(),
        args.truth.display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<bool, Error> {
    let dgp = match &args.dgp {
        Some(path) => load_dgp(path)?,
        None => bundled_asymmetric_dgp(),
    };
    let summary = run_validate(
        &dgp,
        &ValidateOptions {
            poly_order: args.poly_order,
            tolerance: args.tolerance,
        },
    )?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        );
    } else {
        print!("{}", summary.render_table());
    }
    Ok(summary.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Decompose(args) => cmd_decompose(*args).map(|()| true),
        Command::Simulate(args) => cmd_simulate(args).map(|()| true),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
