//! Robust sandwich covariance for the marginal Cox fit and its nine
//! small-sample bias corrections.
//!
//! All estimators share the form Vm * (sum_i C_i S_i S_i' C_i') * Vm where
//! S_i is either the plain per-cluster score or its residual-bias-corrected
//! version, and C_i is a cluster-specific correction matrix; the MBN family
//! instead adds a scaled model-based term. The ten labels:
//!
//! | label | scores    | correction                                  |
//! |-------|-----------|---------------------------------------------|
//! | ROB   | U_i       | identity (uncorrected)                      |
//! | KC    | U_i       | (I - Omega_i Vm)^(-1/2)                     |
//! | FG    | U_i       | diag{(1 - min(r, [Omega_i Vm]_jj))^(-1/2)}  |
//! | MD    | U_i       | (I - Omega_i Vm)^(-1)                       |
//! | MBN   | U_i       | additive: c Vs + delta phi Vm               |
//! | MR    | U_i^BC    | identity                                    |
//! | KCMR / FGMR / MDMR / MBNMR: same corrections with U_i^BC              |

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cox::FitResult;
use crate::data::TrialData;
use crate::grid::EventGrid;
use crate::linalg::{self, InvSqrtError};

/// Default clipping constant for the FG correction; keeps each diagonal
/// correction factor at most 2.
pub const DEFAULT_FG_R: f64 = 0.75;

/// Eigenvalues of Omega_i * Vm this close to 1 make the KC/MD corrections
/// blow up; report them instead of clipping.
const LEVERAGE_TOL: f64 = 1e-10;

/// Relative asymmetry beyond this in an assembled estimate indicates a bug
/// upstream, not round-off.
const ASYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarianceError {
    #[error("cluster {cluster}: leverage eigenvalue within {LEVERAGE_TOL:.0e} of 1; the {label} correction is undefined")]
    LeverageAtOne { cluster: usize, label: EstimatorLabel },
    #[error("cluster {cluster}: I - Omega_i Vm has complex or negative eigenvalues; no real principal square root")]
    ComplexSquareRoot { cluster: usize },
    #[error("additive correction needs more clusters than covariates (n = {n}, p = {p})")]
    DegenerateDesign { n: usize, p: usize },
    #[error("the {0} correction matrix is only defined for the multiplicative estimators")]
    NotMultiplicative(EstimatorLabel),
    #[error("fg_r must lie strictly inside (0, 1), got {0}")]
    BadFgR(f64),
    #[error("unknown estimator label `{0}`")]
    UnknownLabel(String),
    #[error("assembled {label} estimate was asymmetric beyond tolerance ({asymmetry:.3e}); this is a bug")]
    InternalAsymmetry { label: EstimatorLabel, asymmetry: f64 },
    #[error("assembled {label} estimate has a non-positive diagonal entry")]
    NonPositiveDiagonal { label: EstimatorLabel },
}

/// The ten estimator labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorLabel {
    Rob,
    Mr,
    Kc,
    Fg,
    Md,
    Mbn,
    Kcmr,
    Fgmr,
    Mdmr,
    Mbnmr,
}

impl EstimatorLabel {
    /// All labels in report order.
    pub const ALL: [EstimatorLabel; 10] = [
        EstimatorLabel::Rob,
        EstimatorLabel::Mr,
        EstimatorLabel::Kc,
        EstimatorLabel::Fg,
        EstimatorLabel::Md,
        EstimatorLabel::Mbn,
        EstimatorLabel::Kcmr,
        EstimatorLabel::Fgmr,
        EstimatorLabel::Mdmr,
        EstimatorLabel::Mbnmr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorLabel::Rob => "ROB",
            EstimatorLabel::Mr => "MR",
            EstimatorLabel::Kc => "KC",
            EstimatorLabel::Fg => "FG",
            EstimatorLabel::Md => "MD",
            EstimatorLabel::Mbn => "MBN",
            EstimatorLabel::Kcmr => "KCMR",
            EstimatorLabel::Fgmr => "FGMR",
            EstimatorLabel::Mdmr => "MDMR",
            EstimatorLabel::Mbnmr => "MBNMR",
        }
    }

    /// Whether the estimator plugs in the bias-corrected scores.
    pub fn uses_corrected_scores(&self) -> bool {
        matches!(
            self,
            EstimatorLabel::Mr
                | EstimatorLabel::Kcmr
                | EstimatorLabel::Fgmr
                | EstimatorLabel::Mdmr
                | EstimatorLabel::Mbnmr
        )
    }

    fn is_additive(&self) -> bool {
        matches!(self, EstimatorLabel::Mbn | EstimatorLabel::Mbnmr)
    }
}

impl std::fmt::Display for EstimatorLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorLabel {
    type Err = VarianceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorLabel::ALL
            .iter()
            .find(|l| l.as_str() == s)
            .copied()
            .ok_or_else(|| VarianceError::UnknownLabel(s.to_string()))
    }
}

/// An estimator label plus the FG clipping constant (ignored by non-FG kinds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorKind {
    pub label: EstimatorLabel,
    pub fg_r: f64,
}

impl EstimatorKind {
    pub fn new(label: EstimatorLabel) -> Self {
        EstimatorKind {
            label,
            fg_r: DEFAULT_FG_R,
        }
    }

    pub fn with_fg_r(label: EstimatorLabel, fg_r: f64) -> Result<Self, VarianceError> {
        if !(fg_r > 0.0 && fg_r < 1.0) {
            return Err(VarianceError::BadFgR(fg_r));
        }
        Ok(EstimatorKind { label, fg_r })
    }

    /// All ten kinds in report order with a shared FG constant.
    pub fn all(fg_r: f64) -> Result<Vec<EstimatorKind>, VarianceError> {
        EstimatorLabel::ALL
            .iter()
            .map(|l| EstimatorKind::with_fg_r(*l, fg_r))
            .collect()
    }
}

/// A p x p covariance estimate tagged with the estimator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub kind: EstimatorKind,
    pub matrix: DMatrix<f64>,
}

impl VarianceEstimate {
    fn assemble(kind: EstimatorKind, mut matrix: DMatrix<f64>) -> Result<Self, VarianceError> {
        let asymmetry = linalg::relative_asymmetry(&matrix);
        if asymmetry > ASYMMETRY_TOL {
            return Err(VarianceError::InternalAsymmetry {
                label: kind.label,
                asymmetry,
            });
        }
        linalg::symmetrize(&mut matrix);
        if (0..matrix.nrows()).any(|j| matrix[(j, j)] <= 0.0) {
            return Err(VarianceError::NonPositiveDiagonal { label: kind.label });
        }
        Ok(VarianceEstimate { kind, matrix })
    }

    /// Variance of the k-th coefficient.
    pub fn var(&self, k: usize) -> f64 {
        self.matrix[(k, k)]
    }
}

/// Bias-corrected per-cluster scores.
///
/// Each cluster's score is inflated by the estimated finite-sample bias of
/// its members' martingale residuals: a gradient feedback term through the
/// coefficient estimate plus a shared-baseline term through the Breslow
/// increments. Results are memoized on the fit.
pub fn corrected_scores<'f>(data: &TrialData, fit: &'f FitResult) -> &'f [DVector<f64>] {
    fit.corrected_cell()
        .get_or_init(|| compute_corrected_scores(data, fit))
}

fn compute_corrected_scores(data: &TrialData, fit: &FitResult) -> Vec<DVector<f64>> {
    let grid = EventGrid::build(data, fit.beta_hat());
    let p = data.p();
    let n = data.n_clusters();
    let vm = fit.vm();
    let n_times = grid.n_times();

    // Gradient feedback: A_i = sum_j w_j * sum_{k <= last_j} lambda_k
    // (Z_j - zbar_k)(Z_j - zbar_k)', accumulated from prefix sums.
    let mut feedback = vec![DMatrix::<f64>::zeros(p, p); n];
    for (idx, (i, s)) in data.subjects().enumerate() {
        let Some(last) = grid.last_idx[idx] else {
            continue;
        };
        let w = grid.weight[idx];
        let z = s.covariates();
        let a = &mut feedback[i];
        linalg::add_outer(a, w * grid.cum_lambda[last], z, z);
        linalg::add_outer(a, -w, z, &grid.cum_lambda_zbar[last]);
        linalg::add_outer(a, -w, &grid.cum_lambda_zbar[last], z);
        *a += &grid.cum_lambda_zz[last] * w;
    }

    let mut out = Vec::with_capacity(n);
    for (i, cluster) in data.clusters().iter().enumerate() {
        let bracket = DMatrix::identity(p, p) + &feedback[i] * vm;
        let mut u_bc = &bracket * &fit.cluster_scores()[i];

        // Shared-baseline term: sweep the event times from the latest down,
        // maintaining this cluster's own at-risk sums.
        let base = flat_offset(data, i);
        let mut members: Vec<usize> = (0..cluster.len()).collect();
        members.sort_unstable_by(|&a, &b| {
            cluster[b].time().partial_cmp(&cluster[a].time()).unwrap()
        });
        // This cluster's event counts per event-time index, latest first.
        let mut event_ks: Vec<usize> = members
            .iter()
            .filter(|&&j| cluster[j].event())
            .map(|&j| grid.last_idx[base + j].expect("event time on grid"))
            .collect();
        event_ks.sort_unstable_by(|a, b| b.cmp(a));
        let mut ev_ptr = 0usize;
        let mut m_ptr = 0usize;
        let mut cs0 = 0.0;
        let mut cs1 = DVector::zeros(p);
        for k in (0..n_times).rev() {
            while m_ptr < members.len() && cluster[members[m_ptr]].time() >= grid.times[k] {
                let j = members[m_ptr];
                let w = grid.weight[base + j];
                cs0 += w;
                cs1.axpy(w, cluster[j].covariates(), 1.0);
                m_ptr += 1;
            }
            let mut events_here = 0.0;
            while ev_ptr < event_ks.len() && event_ks[ev_ptr] == k {
                events_here += 1.0;
                ev_ptr += 1;
            }
            if cs0 == 0.0 && events_here == 0.0 {
                continue;
            }
            let dm = events_here - cs0 * grid.lambda[k];
            let scale = dm / grid.s0[k];
            u_bc.axpy(scale, &cs1, 1.0);
            u_bc.axpy(-scale * cs0, &grid.zbar[k], 1.0);
        }
        out.push(u_bc);
    }
    out
}

/// Flattened index of the first subject of cluster i.
fn flat_offset(data: &TrialData, i: usize) -> usize {
    data.clusters()[..i].iter().map(|c| c.len()).sum()
}

/// Cluster-specific correction matrix C_i for the multiplicative estimators.
pub fn correction_matrix(
    kind: &EstimatorKind,
    omega_i: &DMatrix<f64>,
    vm: &DMatrix<f64>,
) -> Result<DMatrix<f64>, VarianceError> {
    correction_matrix_for_cluster(kind, omega_i, vm, 0)
}

fn correction_matrix_for_cluster(
    kind: &EstimatorKind,
    omega_i: &DMatrix<f64>,
    vm: &DMatrix<f64>,
    cluster: usize,
) -> Result<DMatrix<f64>, VarianceError> {
    let p = omega_i.nrows();
    let label = kind.label;
    if label.is_additive() {
        return Err(VarianceError::NotMultiplicative(label));
    }
    match label {
        EstimatorLabel::Rob | EstimatorLabel::Mr => Ok(DMatrix::identity(p, p)),
        EstimatorLabel::Fg | EstimatorLabel::Fgmr => {
            let h = omega_i * vm;
            let mut c = DMatrix::zeros(p, p);
            for j in 0..p {
                let clipped = kind.fg_r.min(h[(j, j)]);
                c[(j, j)] = (1.0 - clipped).powf(-0.5);
            }
            Ok(c)
        }
        EstimatorLabel::Kc | EstimatorLabel::Kcmr => {
            let h = omega_i * vm;
            guard_leverage(&h, label, cluster)?;
            if p == 1 {
                let factor = (1.0 - h[(0, 0)]).powf(-0.5);
                return Ok(DMatrix::from_element(1, 1, factor));
            }
            let b = DMatrix::identity(p, p) - &h;
            linalg::principal_inv_sqrt(&b).map_err(|e| match e {
                InvSqrtError::NotRealPositive | InvSqrtError::SchurFailed => {
                    VarianceError::ComplexSquareRoot { cluster }
                }
            })
        }
        EstimatorLabel::Md | EstimatorLabel::Mdmr => {
            let h = omega_i * vm;
            guard_leverage(&h, label, cluster)?;
            let b = DMatrix::identity(p, p) - &h;
            b.try_inverse()
                .ok_or(VarianceError::LeverageAtOne { cluster, label })
        }
        EstimatorLabel::Mbn | EstimatorLabel::Mbnmr => unreachable!("additive handled above"),
    }
}

/// Error when any (essentially real) eigenvalue of Omega_i Vm reaches 1.
fn guard_leverage(
    h: &DMatrix<f64>,
    label: EstimatorLabel,
    cluster: usize,
) -> Result<(), VarianceError> {
    if h.nrows() == 1 {
        if h[(0, 0)] >= 1.0 - LEVERAGE_TOL {
            return Err(VarianceError::LeverageAtOne { cluster, label });
        }
        return Ok(());
    }
    let imag_tol = 1e-9 * (1.0 + h.norm());
    for (re, im) in linalg::eigenvalues(h) {
        if im.abs() <= imag_tol && re >= 1.0 - LEVERAGE_TOL {
            return Err(VarianceError::LeverageAtOne { cluster, label });
        }
    }
    Ok(())
}

/// One sandwich covariance estimate of the requested kind.
pub fn sandwich(
    data: &TrialData,
    fit: &FitResult,
    kind: &EstimatorKind,
) -> Result<VarianceEstimate, VarianceError> {
    if kind.label.is_additive() {
        let scores: Vec<DVector<f64>> = if kind.label.uses_corrected_scores() {
            corrected_scores(data, fit).to_vec()
        } else {
            fit.cluster_scores().to_vec()
        };
        return mbn_assemble(data, fit, &scores, kind);
    }
    let scores: &[DVector<f64>] = if kind.label.uses_corrected_scores() {
        corrected_scores(data, fit)
    } else {
        fit.cluster_scores()
    };
    multiplicative_sandwich(data, fit, kind, scores)
}

/// All requested estimates in one pass, sharing the corrected scores.
pub fn sandwich_all(
    data: &TrialData,
    fit: &FitResult,
    kinds: &[EstimatorKind],
) -> Result<Vec<VarianceEstimate>, VarianceError> {
    kinds.iter().map(|k| sandwich(data, fit, k)).collect()
}

fn multiplicative_sandwich(
    data: &TrialData,
    fit: &FitResult,
    kind: &EstimatorKind,
    scores: &[DVector<f64>],
) -> Result<VarianceEstimate, VarianceError> {
    let p = data.p();
    let vm = fit.vm();
    let mut meat = DMatrix::zeros(p, p);
    for (i, s_i) in scores.iter().enumerate() {
        let c_i = correction_matrix_for_cluster(kind, &fit.cluster_gradients()[i], vm, i)?;
        let cs = &c_i * s_i;
        linalg::add_outer(&mut meat, 1.0, &cs, &cs);
    }
    VarianceEstimate::assemble(*kind, vm * meat * vm)
}

/// Additive small-sample correction: a scaled sandwich plus a design-effect
/// multiple of the model-based variance. `scores` selects the plain or
/// bias-corrected cluster scores (used everywhere, including in the design
/// effect).
pub fn mbn_assemble(
    data: &TrialData,
    fit: &FitResult,
    scores: &[DVector<f64>],
    kind: &EstimatorKind,
) -> Result<VarianceEstimate, VarianceError> {
    let n = data.n_clusters();
    let p = data.p();
    if n <= p {
        return Err(VarianceError::DegenerateDesign { n, p });
    }
    let vm = fit.vm();
    let m_total = data.n_subjects() as f64;
    let nf = n as f64;
    let pf = p as f64;
    let c = (m_total - 1.0) / (m_total - pf) * (nf / (nf - 1.0));
    let delta = (pf / (nf - pf)).min(0.5);
    let mut meat = DMatrix::zeros(p, p);
    for s_i in scores {
        linalg::add_outer(&mut meat, 1.0, s_i, s_i);
    }
    let vs = vm * &meat * vm;
    let phi = (c * (vm * &meat).trace() / pf).max(1.0);
    VarianceEstimate::assemble(*kind, vs * c + vm * (delta * phi))
}
