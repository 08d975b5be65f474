//! marcox: marginal Cox analysis of clustered survival data with
//! small-sample sandwich variance corrections, plus the matching trial
//! simulator and Monte Carlo harness.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure. Data goes to
//! stdout or the requested output file; progress and warnings go to stderr.

use marcox_cli::report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marcox::cox::{self, FitOptions};
use marcox::csvio;
use marcox::mc::{self, gridfile, McOptions};
use marcox::sim::{self, Scenario};
use marcox::variance::{EstimatorKind, EstimatorLabel};

#[derive(Parser)]
#[command(
    name = "marcox",
    version,
    about = "Marginal Cox model for clustered survival data with bias-corrected sandwich variances"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a trial CSV and report the Wald t-test under every estimator
    Fit(FitArgs),
    /// Generate one simulated trial as CSV
    Simulate(SimulateArgs),
    /// Run a Monte Carlo scenario grid and emit the summary CSV
    Mc(McArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with header cluster,time,event,z1[,z2,...]
    #[arg(long)]
    data: PathBuf,
    /// Write the machine-readable report CSV here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated estimator labels (default: all ten)
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Confidence level for intervals and tests
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Clipping constant of the FG correction
    #[arg(long = "fg-r", default_value_t = 0.75)]
    fg_r: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of clusters (even; first half treated)
    #[arg(long)]
    n: usize,
    /// Mean cluster size
    #[arg(long)]
    mbar: f64,
    /// Coefficient of variation of cluster sizes
    #[arg(long)]
    cv: f64,
    /// Within-cluster Kendall's tau
    #[arg(long)]
    tau: f64,
    /// Net control-arm censoring fraction
    #[arg(long)]
    p0: f64,
    /// Administrative control-arm censoring fraction
    #[arg(long, default_value_t = 0.2)]
    pa: f64,
    /// Weibull shape of the baseline hazard
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// True log hazard ratio
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trial CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// Scenario grid file
    #[arg(long)]
    grid: PathBuf,
    /// Replications per scenario
    #[arg(long, default_value_t = 5000)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the summary CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every replication's record to this CSV
    #[arg(long = "raw-dump")]
    raw_dump: Option<PathBuf>,
    /// Comma-separated estimator labels (default: all ten)
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Confidence level of the Wald t-test
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Clipping constant of the FG correction
    #[arg(long = "fg-r", default_value_t = 0.75)]
    fg_r: f64,
}

enum CliError {
    /// Unreadable or invalid input: exit 2.
    Input(String),
    /// The numbers did not work out (non-convergence, undefined
    /// corrections): exit 3.
    Numeric(String),
}

impl CliError {
    fn report(&self) -> ExitCode {
        match self {
            CliError::Input(msg) => {
                eprintln!("error[input]: {msg}");
                ExitCode::from(2)
            }
            CliError::Numeric(msg) => {
                eprintln!("error[numeric]: {msg}");
                ExitCode::from(3)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Mc(args) => cmd_mc(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn parse_kinds(labels: Option<Vec<String>>, fg_r: f64) -> Result<Vec<EstimatorKind>, CliError> {
    let labels = match labels {
        Some(l) if !l.is_empty() => l
            .iter()
            .map(|s| s.parse::<EstimatorLabel>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(e.to_string()))?,
        _ => EstimatorLabel::ALL.to_vec(),
    };
    labels
        .into_iter()
        .map(|l| EstimatorKind::with_fg_r(l, fg_r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn check_level(level: f64) -> Result<(), CliError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "confidence level must lie strictly inside (0, 1), got {level}"
        )))
    }
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    check_level(args.level)?;
    let kinds = parse_kinds(args.estimators, args.fg_r)?;
    let text = read_file(&args.data)?;
    let data = csvio::parse_trial_csv(&text).map_err(|e| CliError::Input(e.to_string()))?;
    let fit = cox::fit(&data, &FitOptions::default()).map_err(|e| CliError::Numeric(e.to_string()))?;

    let (rows, failures) = report::build_report(&data, &fit, &kinds, args.level);
    for (label, reason) in &failures {
        eprintln!("warning: {label}: {reason}");
    }
    if rows.is_empty() {
        return Err(CliError::Numeric(
            "every requested estimator failed on this dataset".into(),
        ));
    }
    print!("{}", report::render_table(&rows, args.level));
    if let Some(out) = &args.out {
        write_file(out, &report::report_to_csv(&rows))?;
    }
    Ok(())
}

fn scenario_comment(sc: &Scenario) -> String {
    format!(
        "scenario: n={} mbar={} cv={} tau={} theta={} p0={} pa={} kappa={} beta={} seed={}",
        sc.n,
        sc.mbar,
        sc.cv,
        sc.tau,
        sc.theta(),
        sc.p0,
        sc.pa,
        sc.kappa,
        sc.beta,
        sc.seed
    )
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let sc = Scenario {
        n: args.n,
        mbar: args.mbar,
        cv: args.cv,
        tau: args.tau,
        p0: args.p0,
        pa: args.pa,
        kappa: args.kappa,
        beta: args.beta,
        seed: args.seed,
    };
    sc.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let data = sim::generate_trial(&sc, 0).map_err(|e| match e {
        sim::SimError::Data(inner) => CliError::Numeric(inner.to_string()),
        other => CliError::Input(other.to_string()),
    })?;
    let sizes = data.cluster_sizes();
    eprintln!(
        "generated n={} clusters, sizes {:?}, total {} subjects, censoring fraction {:.4}",
        data.n_clusters(),
        sizes,
        data.n_subjects(),
        data.censoring_fraction()
    );
    let csv = csvio::trial_to_csv_with_comment(&data, &scenario_comment(&sc));
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_mc(args: McArgs) -> Result<(), CliError> {
    check_level(args.level)?;
    let kinds = parse_kinds(args.estimators, args.fg_r)?;
    let text = read_file(&args.grid)?;
    let grid = gridfile::parse_grid(&text, args.seed).map_err(|e| CliError::Input(e.to_string()))?;
    for sc in &grid {
        sc.validate().map_err(|e| CliError::Input(e.to_string()))?;
    }
    let opts = McOptions {
        reps: args.reps,
        level: args.level,
        kinds,
        workers: args.workers,
        fit: FitOptions::default(),
    };

    let mut summary_csv = String::from(mc::SUMMARY_CSV_HEADER);
    summary_csv.push('\n');
    let mut raw_csv = args.raw_dump.as_ref().map(|_| {
        let mut s = mc::raw_dump_header(&opts.kinds);
        s.push('\n');
        s
    });
    for (i, sc) in grid.iter().enumerate() {
        let result = mc::run_scenario(sc, &opts).map_err(|e| CliError::Numeric(e.to_string()))?;
        let failed = result.summary.reps_requested - result.summary.reps_converged;
        eprintln!(
            "scenario {}/{}: n={} mbar={} cv={} tau={} p0={} beta={}: {} converged, {} failed",
            i + 1,
            grid.len(),
            sc.n,
            sc.mbar,
            sc.cv,
            sc.tau,
            sc.p0,
            sc.beta,
            result.summary.reps_converged,
            failed
        );
        summary_csv.push_str(&result.summary.csv_rows());
        if let Some(raw) = raw_csv.as_mut() {
            raw.push_str(&mc::raw_dump_rows(sc, &opts.kinds, &result.outcomes));
        }
    }
    match &args.out {
        Some(path) => write_file(path, &summary_csv)?,
        None => print!("{summary_csv}"),
    }
    if let (Some(path), Some(raw)) = (&args.raw_dump, &raw_csv) {
        write_file(path, raw)?;
    }
    Ok(())
}
