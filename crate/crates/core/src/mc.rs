//! Replicated-simulation harness: runs many generated trials per scenario,
//! fits each, evaluates every requested variance estimator and its Wald
//! t-test, and aggregates percent relative bias and empirical type I error.
//!
//! Replications are embarrassingly parallel and deterministic: the random
//! substreams depend only on (seed, replication, cluster), the per-replication
//! records are collected in replication order, and the aggregation uses
//! pairwise summation, so results are byte-identical for any worker count.

pub mod gridfile;

use rayon::prelude::*;
use thiserror::Error;

use crate::cox::{self, FitOptions};
use crate::inference;
use crate::linalg::{pairwise_sum, pairwise_sum_by};
use crate::sim::{self, Scenario, SimError};
use crate::variance::{self, EstimatorKind, EstimatorLabel, DEFAULT_FG_R};

#[derive(Debug, Error)]
pub enum McError {
    #[error("need at least 2 converged replications to summarize, got {converged}")]
    TooFewReplications { converged: u64 },
    #[error("scenario grid is empty")]
    EmptyGrid,
    #[error("Monte Carlo variance of the estimate is zero; relative bias undefined")]
    ZeroMonteCarloVariance,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error("could not build worker pool: {0}")]
    ThreadPool(String),
}

/// Harness configuration shared by all scenarios of a run.
#[derive(Debug, Clone)]
pub struct McOptions {
    pub reps: u64,
    /// Confidence level of the Wald t-test (rejection at 1 - level).
    pub level: f64,
    pub kinds: Vec<EstimatorKind>,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub fit: FitOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            reps: 5000,
            level: 0.95,
            kinds: EstimatorKind::all(DEFAULT_FG_R).expect("default fg_r is valid"),
            workers: 0,
            fit: FitOptions::default(),
        }
    }
}

/// One converged replication: the estimate plus, per estimator, the variance
/// of the tested coefficient and whether the t-test rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: u64,
    pub beta_hat: f64,
    pub variances: Vec<f64>,
    pub rejects: Vec<bool>,
}

/// A replication that could not be used, with the cause.
#[derive(Debug, Clone, PartialEq)]
pub struct RepFailure {
    pub rep: u64,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RepOutcome {
    Converged(RepRecord),
    Failed(RepFailure),
}

impl RepOutcome {
    pub fn record(&self) -> Option<&RepRecord> {
        match self {
            RepOutcome::Converged(r) => Some(r),
            RepOutcome::Failed(_) => None,
        }
    }
}

/// Generate, fit, and test one replication. Failures (non-convergence,
/// leverage at one, ...) are recorded, not fatal.
pub fn run_replication(
    sc: &Scenario,
    rep: u64,
    kinds: &[EstimatorKind],
    level: f64,
    fit_options: &FitOptions,
) -> RepOutcome {
    let fail = |cause: String| RepOutcome::Failed(RepFailure { rep, cause });
    let data = match sim::generate_trial(sc, rep) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    let fit = match cox::fit(&data, fit_options) {
        Ok(f) => f,
        Err(e) => return fail(e.to_string()),
    };
    let estimates = match variance::sandwich_all(&data, &fit, kinds) {
        Ok(v) => v,
        Err(e) => return fail(e.to_string()),
    };
    let t_crit = match inference::t_quantile(1.0 - (1.0 - level) / 2.0, sc.n - 1) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let beta_hat = fit.beta_hat()[0];
    let mut variances = Vec::with_capacity(kinds.len());
    let mut rejects = Vec::with_capacity(kinds.len());
    for v in &estimates {
        let var = v.var(0);
        if var <= 0.0 || !var.is_finite() {
            return fail(format!(
                "{} variance for the tested coefficient is not positive ({var})",
                v.kind.label
            ));
        }
        variances.push(var);
        rejects.push((beta_hat / var.sqrt()).abs() > t_crit);
    }
    RepOutcome::Converged(RepRecord {
        rep,
        beta_hat,
        variances,
        rejects,
    })
}

/// Per-estimator aggregate of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRow {
    pub label: EstimatorLabel,
    pub mean_variance: f64,
    pub relbias_pct: f64,
    pub type1_rate: f64,
}

/// Aggregated results of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub scenario: Scenario,
    pub reps_requested: u64,
    pub reps_converged: u64,
    /// Monte Carlo variance of the estimate over converged replications
    /// (sample variance, divisor R - 1).
    pub var_mc: f64,
    pub rows: Vec<EstimatorRow>,
}

/// Aggregate replication outcomes. Failed replications are excluded from
/// every numerator and denominator; their count is visible through
/// `reps_requested - reps_converged`.
pub fn summarize(
    sc: &Scenario,
    kinds: &[EstimatorKind],
    outcomes: &[RepOutcome],
) -> Result<McSummary, McError> {
    let records: Vec<&RepRecord> = outcomes.iter().filter_map(|o| o.record()).collect();
    let converged = records.len() as u64;
    if converged < 2 {
        return Err(McError::TooFewReplications { converged });
    }
    let r = converged as f64;
    let mean_beta = pairwise_sum_by(&records, |rec| rec.beta_hat) / r;
    let var_mc = pairwise_sum_by(&records, |rec| {
        let d = rec.beta_hat - mean_beta;
        d * d
    }) / (r - 1.0);
    if var_mc <= 0.0 {
        return Err(McError::ZeroMonteCarloVariance);
    }
    let rows = kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let mean_variance = pairwise_sum_by(&records, |rec| rec.variances[j]) / r;
            let rejections = pairwise_sum_by(&records, |rec| f64::from(rec.rejects[j]));
            EstimatorRow {
                label: kind.label,
                mean_variance,
                relbias_pct: (mean_variance - var_mc) / var_mc * 100.0,
                type1_rate: rejections / r,
            }
        })
        .collect();
    Ok(McSummary {
        scenario: sc.clone(),
        reps_requested: outcomes.len() as u64,
        reps_converged: converged,
        var_mc,
        rows,
    })
}

/// A scenario's summary together with the raw per-replication outcomes.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub summary: McSummary,
    pub outcomes: Vec<RepOutcome>,
}

/// Run all replications of one scenario on a dedicated worker pool.
pub fn run_scenario(sc: &Scenario, opts: &McOptions) -> Result<ScenarioResult, McError> {
    sc.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| McError::ThreadPool(e.to_string()))?;
    let outcomes: Vec<RepOutcome> = pool.install(|| {
        (0..opts.reps)
            .into_par_iter()
            .map(|rep| run_replication(sc, rep, &opts.kinds, opts.level, &opts.fit))
            .collect()
    });
    let summary = summarize(sc, &opts.kinds, &outcomes)?;
    Ok(ScenarioResult { summary, outcomes })
}

/// Run a scenario grid; results line up with the input order.
pub fn run_grid(grid: &[Scenario], opts: &McOptions) -> Result<Vec<ScenarioResult>, McError> {
    if grid.is_empty() {
        return Err(McError::EmptyGrid);
    }
    grid.iter().map(|sc| run_scenario(sc, opts)).collect()
}

/// Header of the plot-ready summary CSV.
pub const SUMMARY_CSV_HEADER: &str =
    "n,mbar,cv,tau,p0,beta,estimator,reps_converged,var_mc,mean_variance,relbias_pct,type1_rate";

impl McSummary {
    /// One CSV line per estimator, matching [`SUMMARY_CSV_HEADER`].
    pub fn csv_rows(&self) -> String {
        let sc = &self.scenario;
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                sc.n,
                sc.mbar,
                sc.cv,
                sc.tau,
                sc.p0,
                sc.beta,
                row.label,
                self.reps_converged,
                self.var_mc,
                row.mean_variance,
                row.relbias_pct,
                row.type1_rate,
            ));
        }
        out
    }
}

/// Header of the optional per-replication dump.
pub fn raw_dump_header(kinds: &[EstimatorKind]) -> String {
    let mut out = String::from("n,mbar,cv,tau,p0,beta,rep,converged,cause,beta_hat");
    for kind in kinds {
        out.push_str(&format!(",var_{0},reject_{0}", kind.label));
    }
    out
}

/// Per-replication dump rows for one scenario (matching [`raw_dump_header`]).
pub fn raw_dump_rows(sc: &Scenario, kinds: &[EstimatorKind], outcomes: &[RepOutcome]) -> String {
    let mut out = String::new();
    let prefix = format!("{},{},{},{},{},{}", sc.n, sc.mbar, sc.cv, sc.tau, sc.p0, sc.beta);
    for outcome in outcomes {
        match outcome {
            RepOutcome::Converged(rec) => {
                out.push_str(&format!("{},{},1,,{}", prefix, rec.rep, rec.beta_hat));
                for j in 0..kinds.len() {
                    out.push_str(&format!(
                        ",{},{}",
                        rec.variances[j],
                        u8::from(rec.rejects[j])
                    ));
                }
                out.push('\n');
            }
            RepOutcome::Failed(f) => {
                let cause = f.cause.replace(',', ";");
                out.push_str(&format!("{},{},0,{},", prefix, f.rep, cause));
                for _ in kinds {
                    out.push_str(",,");
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Recompute var_mc from converged records only; exposed for re-aggregation
/// checks against the raw dump.
pub fn monte_carlo_variance(betas: &[f64]) -> f64 {
    let r = betas.len() as f64;
    let mean = pairwise_sum(betas) / r;
    let devs: Vec<f64> = betas.iter().map(|b| (b - mean) * (b - mean)).collect();
    pairwise_sum(&devs) / (r - 1.0)
}
