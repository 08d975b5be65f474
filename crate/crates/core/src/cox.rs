//! Marginal Cox model fit under an independence working correlation.
//!
//! The coefficient estimate solves the partial-likelihood estimating
//! equations by Newton iteration with step halving. Alongside the point
//! estimate, the fit produces everything the sandwich variance corrections
//! consume: the model-based variance, Breslow baseline hazard increments,
//! per-cluster scores, and per-cluster score gradients.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::TrialData;
use crate::grid::EventGrid;
use crate::linalg;

/// Condition-number ceiling beyond which the information matrix is treated
/// as singular.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(
        "no convergence after {iterations} iterations (max |score| = {max_score:.3e}): {reason}"
    )]
    NoConvergence {
        iterations: usize,
        max_score: f64,
        reason: String,
    },
    #[error("information matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },
}

/// Newton iteration controls.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Convergence tolerance on the max-norm of the score.
    pub tol: f64,
    /// Maximum Newton iterations.
    pub max_iter: usize,
    /// Maximum step halvings per iteration before giving up.
    pub max_step_halvings: usize,
    /// Coefficient magnitude treated as divergence. A monotone partial
    /// likelihood (separated data) drives the score to zero only as the
    /// coefficient runs off to infinity, so the score criterion alone would
    /// "converge" at an absurd estimate; this bound turns that into an error.
    pub max_abs_beta: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 50,
            max_step_halvings: 20,
            max_abs_beta: 15.0,
        }
    }
}

/// Everything the variance estimators need from a converged fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    beta_hat: DVector<f64>,
    vm: DMatrix<f64>,
    breslow: Vec<(f64, f64)>,
    cluster_scores: Vec<DVector<f64>>,
    cluster_gradients: Vec<DMatrix<f64>>,
    corrected: OnceLock<Vec<DVector<f64>>>,
    converged: bool,
    iterations: usize,
}

impl FitResult {
    /// Estimated log-hazard-ratio coefficients.
    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    /// Model-based variance (inverse observed information).
    pub fn vm(&self) -> &DMatrix<f64> {
        &self.vm
    }

    /// Breslow baseline hazard increments as (event time, increment) pairs,
    /// times ascending.
    pub fn breslow(&self) -> &[(f64, f64)] {
        &self.breslow
    }

    /// Cumulative baseline hazard at time t.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        self.breslow
            .iter()
            .take_while(|(u, _)| *u <= t)
            .map(|(_, inc)| inc)
            .sum()
    }

    /// Per-cluster martingale scores at the estimate.
    pub fn cluster_scores(&self) -> &[DVector<f64>] {
        &self.cluster_scores
    }

    /// Per-cluster score gradients at the estimate.
    pub fn cluster_gradients(&self) -> &[DMatrix<f64>] {
        &self.cluster_gradients
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Memoization slot for the residual-bias-corrected cluster scores;
    /// populated on first use by [`crate::variance::corrected_scores`].
    pub(crate) fn corrected_cell(&self) -> &OnceLock<Vec<DVector<f64>>> {
        &self.corrected
    }
}

/// Estimating-equation score U(beta).
pub fn score(data: &TrialData, beta: &DVector<f64>) -> DVector<f64> {
    EventGrid::build(data, beta).score(data)
}

/// Log partial likelihood at beta (Breslow tie handling).
pub fn log_partial_likelihood(data: &TrialData, beta: &DVector<f64>) -> f64 {
    EventGrid::build(data, beta).log_partial_likelihood(data)
}

/// Observed information (negative score Jacobian) at beta.
pub fn information(data: &TrialData, beta: &DVector<f64>) -> Result<DMatrix<f64>, FitError> {
    let info = EventGrid::build(data, beta).information(data.p());
    check_condition(&info)?;
    Ok(info)
}

fn check_condition(info: &DMatrix<f64>) -> Result<f64, FitError> {
    let condition = linalg::condition_number(info);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(FitError::SingularInformation { condition });
    }
    Ok(condition)
}

fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>, FitError> {
    check_condition(info)?;
    info.clone()
        .try_inverse()
        .ok_or(FitError::SingularInformation {
            condition: f64::INFINITY,
        })
}

/// Fit the marginal Cox model by Newton iteration from beta = 0.
pub fn fit(data: &TrialData, options: &FitOptions) -> Result<FitResult, FitError> {
    let p = data.p();
    let mut beta = DVector::zeros(p);
    let mut grid = EventGrid::build(data, &beta);
    let mut lpl = grid.log_partial_likelihood(data);
    let mut u = grid.score(data);
    let mut iterations = 0usize;

    while u.amax() > options.tol {
        if iterations >= options.max_iter {
            return Err(FitError::NoConvergence {
                iterations,
                max_score: u.amax(),
                reason: "iteration limit reached".into(),
            });
        }
        let info = grid.information(p);
        let vm = invert_information(&info)?;
        let step = &vm * &u;

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=options.max_step_halvings {
            let candidate = &beta + &step * scale;
            let cand_grid = EventGrid::build(data, &candidate);
            let cand_lpl = cand_grid.log_partial_likelihood(data);
            // Near the optimum the likelihood gain drops below float
            // precision while the score still shrinks; a candidate that
            // already satisfies the score criterion is always accepted.
            let cand_done = cand_grid.score(data).amax() <= options.tol;
            if cand_done || (cand_lpl.is_finite() && cand_lpl > lpl) {
                beta = candidate;
                grid = cand_grid;
                lpl = cand_lpl;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(FitError::NoConvergence {
                iterations,
                max_score: u.amax(),
                reason: format!(
                    "step halving failed {} times to improve the log partial likelihood",
                    options.max_step_halvings
                ),
            });
        }
        if beta.amax() > options.max_abs_beta {
            return Err(FitError::NoConvergence {
                iterations,
                max_score: u.amax(),
                reason: format!(
                    "coefficient magnitude exceeded {} (monotone likelihood / separation?)",
                    options.max_abs_beta
                ),
            });
        }
        u = grid.score(data);
        iterations += 1;
    }

    let info = grid.information(p);
    let vm = invert_information(&info)?;
    let breslow = grid
        .times
        .iter()
        .copied()
        .zip(grid.lambda.iter().copied())
        .collect();
    let parts = cluster_score_parts_from_grid(data, &grid);
    let cluster_scores = parts.totals();
    let cluster_gradients = cluster_gradients_from_grid(data, &grid);

    Ok(FitResult {
        beta_hat: beta,
        vm,
        breslow,
        cluster_scores,
        cluster_gradients,
        corrected: OnceLock::new(),
        converged: true,
        iterations,
    })
}

/// Breslow cumulative baseline hazard increments at `beta`, one per distinct
/// event time (ascending), ties aggregated before dividing by S^(0).
pub fn breslow(data: &TrialData, beta: &DVector<f64>) -> Vec<(f64, f64)> {
    let grid = EventGrid::build(data, beta);
    grid.times
        .iter()
        .copied()
        .zip(grid.lambda.iter().copied())
        .collect()
}

/// Per-cluster score split into the event term (covariate minus risk-set
/// mean at own event times) and the risk-redistribution term whose total is
/// identically zero at every beta.
#[derive(Debug, Clone)]
pub struct ClusterScoreParts {
    pub event: Vec<DVector<f64>>,
    pub riskset: Vec<DVector<f64>>,
}

impl ClusterScoreParts {
    pub fn totals(&self) -> Vec<DVector<f64>> {
        self.event
            .iter()
            .zip(&self.riskset)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Split per-cluster scores at an arbitrary beta.
pub fn cluster_score_parts(data: &TrialData, beta: &DVector<f64>) -> ClusterScoreParts {
    let grid = EventGrid::build(data, beta);
    cluster_score_parts_from_grid(data, &grid)
}

/// Per-cluster scores U_i at an arbitrary beta.
pub fn cluster_scores(data: &TrialData, beta: &DVector<f64>) -> Vec<DVector<f64>> {
    cluster_score_parts(data, beta).totals()
}

fn cluster_score_parts_from_grid(data: &TrialData, grid: &EventGrid) -> ClusterScoreParts {
    let p = data.p();
    let n = data.n_clusters();
    let mut event = vec![DVector::zeros(p); n];
    let mut riskset = vec![DVector::zeros(p); n];
    for (idx, (i, s)) in data.subjects().enumerate() {
        let Some(last) = grid.last_idx[idx] else {
            continue;
        };
        if s.event() {
            event[i] += s.covariates() - &grid.zbar[last];
        }
        // -w * sum_{k <= last} lambda_k (Z - zbar_k), via prefix sums.
        let w = grid.weight[idx];
        riskset[i].axpy(-w * grid.cum_lambda[last], s.covariates(), 1.0);
        riskset[i].axpy(w, &grid.cum_lambda_zbar[last], 1.0);
    }
    ClusterScoreParts { event, riskset }
}

/// Per-cluster gradients of the score (the three-term estimate): the event
/// curvature term, minus the at-risk-weighted curvature integral, plus the
/// at-risk-weighted cross term.
pub fn cluster_gradients(data: &TrialData, beta: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let grid = EventGrid::build(data, beta);
    cluster_gradients_from_grid(data, &grid)
}

fn cluster_gradients_from_grid(data: &TrialData, grid: &EventGrid) -> Vec<DMatrix<f64>> {
    let p = data.p();
    let n = data.n_clusters();
    let mut omega = vec![DMatrix::zeros(p, p); n];
    for (idx, (i, s)) in data.subjects().enumerate() {
        let Some(last) = grid.last_idx[idx] else {
            continue;
        };
        if s.event() {
            omega[i] += &grid.vmat[last];
        }
        let w = grid.weight[idx];
        omega[i] -= &grid.cum_lambda_vmat[last] * w;
        // w * (Z * cum_lambda - cum_lambda_zbar) Z'
        let left = s.covariates() * grid.cum_lambda[last] - &grid.cum_lambda_zbar[last];
        linalg::add_outer(&mut omega[i], w, &left, s.covariates());
    }
    omega
}

/// Per-subject martingale residual paths evaluated at the distinct event
/// times. The path value at the last event time equals the residual at
/// infinity.
#[derive(Debug, Clone)]
pub struct MartingalePaths {
    /// Distinct event times, ascending.
    pub event_times: Vec<f64>,
    /// paths[i][j][k] = residual of subject j in cluster i at event time k.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl MartingalePaths {
    /// Residual at infinity for subject j of cluster i.
    pub fn at_infinity(&self, i: usize, j: usize) -> f64 {
        *self.paths[i][j].last().expect("at least one event time")
    }

    pub fn total_at_infinity(&self) -> f64 {
        self.paths
            .iter()
            .flatten()
            .map(|path| path.last().unwrap())
            .sum()
    }
}

/// Martingale residuals of every subject at the fitted coefficients.
pub fn martingale_residuals(data: &TrialData, fit: &FitResult) -> MartingalePaths {
    let grid = EventGrid::build(data, fit.beta_hat());
    let n_times = grid.n_times();
    let mut paths: Vec<Vec<Vec<f64>>> = data
        .clusters()
        .iter()
        .map(|c| vec![Vec::with_capacity(n_times); c.len()])
        .collect();
    let sub_j = cluster_local_indices(data);
    for (idx, (i, s)) in data.subjects().enumerate() {
        let j = sub_j[idx];
        let w = grid.weight[idx];
        let last = grid.last_idx[idx];
        let path = &mut paths[i][j];
        for k in 0..n_times {
            let counting = if s.event() && grid.times[k] >= s.time() {
                1.0
            } else {
                0.0
            };
            let hazard = match last {
                Some(l) => w * grid.cum_lambda[k.min(l)],
                None => 0.0,
            };
            path.push(counting - hazard);
        }
    }
    MartingalePaths {
        event_times: grid.times,
        paths,
    }
}

/// Per-subject paths of the residual gradient (the at-risk, intensity-weighted
/// covariate deviation accumulated over event times).
#[derive(Debug, Clone)]
pub struct ResidualGradientPaths {
    pub event_times: Vec<f64>,
    /// increments[i][j][k]: the jump of the path at event time k.
    pub increments: Vec<Vec<Vec<DVector<f64>>>>,
    /// cumulative[i][j][k]: the path value at event time k.
    pub cumulative: Vec<Vec<Vec<DVector<f64>>>>,
}

/// Residual gradient paths for every subject at the fitted coefficients.
pub fn residual_gradients(data: &TrialData, fit: &FitResult) -> ResidualGradientPaths {
    let grid = EventGrid::build(data, fit.beta_hat());
    let p = data.p();
    let n_times = grid.n_times();
    let mut increments: Vec<Vec<Vec<DVector<f64>>>> = data
        .clusters()
        .iter()
        .map(|c| vec![Vec::with_capacity(n_times); c.len()])
        .collect();
    let mut cumulative = increments.clone();
    let sub_j = cluster_local_indices(data);
    for (idx, (i, s)) in data.subjects().enumerate() {
        let j = sub_j[idx];
        let w = grid.weight[idx];
        let last = grid.last_idx[idx];
        let mut acc = DVector::zeros(p);
        for k in 0..n_times {
            let inc = match last {
                Some(l) if k <= l => (s.covariates() - &grid.zbar[k]) * (w * grid.lambda[k]),
                _ => DVector::zeros(p),
            };
            acc += &inc;
            increments[i][j].push(inc);
            cumulative[i][j].push(acc.clone());
        }
    }
    ResidualGradientPaths {
        event_times: grid.times,
        increments,
        cumulative,
    }
}

/// Position of each flattened subject within its own cluster.
fn cluster_local_indices(data: &TrialData) -> Vec<usize> {
    let mut out = Vec::with_capacity(data.n_subjects());
    for cluster in data.clusters() {
        out.extend(0..cluster.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RawSubject;
    use approx::assert_relative_eq;

    pub(crate) fn d1() -> TrialData {
        let records = vec![
            RawSubject {
                cluster: "c1".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "c2".into(),
                time: 2.0,
                event: 1.0,
                covariates: vec![0.0],
            },
            RawSubject {
                cluster: "c1".into(),
                time: 3.0,
                event: 0.0,
                covariates: vec![1.0],
            },
        ];
        TrialData::from_records(&records).unwrap()
    }

    #[test]
    fn score_at_zero_matches_hand_calculation() {
        let data = d1();
        let u = score(&data, &DVector::zeros(1));
        assert_relative_eq!(u[0], 1.0 / 3.0 - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn score_vanishes_at_closed_form_root() {
        let data = d1();
        let beta = DVector::from_element(1, -0.5 * 2.0_f64.ln());
        let u = score(&data, &beta);
        assert!(u[0].abs() < 1e-15);
    }

    #[test]
    fn information_at_zero_matches_hand_calculation() {
        let data = d1();
        let info = information(&data, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(info[(0, 0)], 17.0 / 36.0, epsilon = 1e-15);
    }

    #[test]
    fn fit_recovers_closed_form_root() {
        let data = d1();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        assert!(fit.converged());
        assert_relative_eq!(fit.beta_hat()[0], -0.5 * 2.0_f64.ln(), epsilon = 1e-9);
        // Model-based variance is the inverse information at the estimate.
        let info = information(&data, fit.beta_hat()).unwrap();
        assert_relative_eq!(fit.vm()[(0, 0)], 1.0 / info[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn breslow_on_all_event_data_is_nelson_aalen() {
        let records = vec![
            RawSubject {
                cluster: "a".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 2.0,
                event: 1.0,
                covariates: vec![0.0],
            },
            RawSubject {
                cluster: "a".into(),
                time: 3.0,
                event: 1.0,
                covariates: vec![0.0],
            },
        ];
        let data = TrialData::from_records(&records).unwrap();
        let inc = breslow(&data, &DVector::zeros(1));
        let expected = [1.0 / 3.0, 0.5, 1.0];
        for ((_, got), want) in inc.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn breslow_closed_form_on_d1() {
        let data = d1();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        let sqrt2 = 2.0_f64.sqrt();
        assert_relative_eq!(fit.cumulative_hazard(1.0), sqrt2 - 1.0, epsilon = 1e-9);
        assert_relative_eq!(fit.cumulative_hazard(2.0), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn residuals_sum_to_zero_and_d1_subject_two_vanishes() {
        let data = d1();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        let res = martingale_residuals(&data, &fit);
        assert!(res.total_at_infinity().abs() < 1e-10);
        // Subject (t=2, event, Z=0): residual 1 - Lambda0(2) = 0.
        assert!(res.at_infinity(1, 0).abs() < 1e-9);
    }

    #[test]
    fn cluster_scores_sum_to_zero_at_estimate() {
        let data = d1();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        let total: DVector<f64> = fit
            .cluster_scores()
            .iter()
            .fold(DVector::zeros(1), |acc, u| acc + u);
        assert!(total.amax() < 1e-8);
    }

    #[test]
    fn riskset_score_terms_sum_to_zero_at_any_beta() {
        let data = d1();
        for b in [-1.3, -0.2, 0.0, 0.7, 2.1] {
            let parts = cluster_score_parts(&data, &DVector::from_element(1, b));
            let total: DVector<f64> = parts
                .riskset
                .iter()
                .fold(DVector::zeros(1), |acc, u| acc + u);
            assert!(total.amax() < 1e-12, "beta = {b}");
        }
    }

    #[test]
    fn cluster_gradients_sum_to_information() {
        let data = d1();
        let fit = fit(&data, &FitOptions::default()).unwrap();
        let info = information(&data, fit.beta_hat()).unwrap();
        let total: DMatrix<f64> = fit
            .cluster_gradients()
            .iter()
            .fold(DMatrix::zeros(1, 1), |acc, o| acc + o);
        assert_relative_eq!(total[(0, 0)], info[(0, 0)], max_relative = 1e-12);
    }

    #[test]
    fn separated_data_reports_no_convergence() {
        // All events carry Z = 1, all censored subjects Z = 0 with later
        // times: the likelihood is monotone in beta.
        let records = vec![
            RawSubject {
                cluster: "a".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "a".into(),
                time: 2.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 3.0,
                event: 0.0,
                covariates: vec![0.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 4.0,
                event: 0.0,
                covariates: vec![0.0],
            },
        ];
        let data = TrialData::from_records(&records).unwrap();
        let err = fit(&data, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::NoConvergence { .. }));
        let msg = err.to_string();
        assert!(msg.contains("separation") || msg.contains("iteration limit"));
    }

    #[test]
    fn collinear_covariates_reported_singular() {
        let records = vec![
            RawSubject {
                cluster: "a".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0, 2.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 2.0,
                event: 1.0,
                covariates: vec![0.0, 0.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 3.0,
                event: 0.0,
                covariates: vec![0.5, 1.0],
            },
        ];
        let data = TrialData::from_records(&records).unwrap();
        assert!(matches!(
            information(&data, &DVector::zeros(2)),
            Err(FitError::SingularInformation { .. })
        ));
    }

    #[test]
    fn mirrored_clusters_have_equal_gradients() {
        let records = vec![
            RawSubject {
                cluster: "a".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "a".into(),
                time: 2.0,
                event: 0.0,
                covariates: vec![0.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 1.0,
                event: 1.0,
                covariates: vec![1.0],
            },
            RawSubject {
                cluster: "b".into(),
                time: 2.0,
                event: 0.0,
                covariates: vec![0.0],
            },
        ];
        let data = TrialData::from_records(&records).unwrap();
        let omegas = cluster_gradients(&data, &DVector::from_element(1, 0.3));
        assert_relative_eq!(omegas[0][(0, 0)], omegas[1][(0, 0)], epsilon = 1e-14);
    }
}
