//! Correlated clustered survival trial generator.
//!
//! Failure times have Weibull marginals under a proportional hazards model
//! with a cluster-level treatment indicator; within-cluster dependence comes
//! from a Clayton copula with parameter theta (Kendall's tau = 1/(2 theta + 1)).
//! Censoring is administrative at time 1, optionally combined with an
//! exponential dropout time whose rate is calibrated to hit a requested net
//! control-arm censoring fraction. Cluster sizes are gamma-distributed,
//! rounded, and floored at 2.

use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::data::{DataError, Subject, TrialData};
use crate::rng::StreamRng;

/// Administrative censoring horizon; every observed time lands in (0, 1].
pub const ADMIN_CENSOR_TIME: f64 = 1.0;

const LANE_SIZES: u64 = 0;
const LANE_CLUSTER: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("censoring probability must lie strictly inside (0, 1), got {0}")]
    BadRate(f64),
    #[error("no dropout rate in (0, 1000] reaches net censoring {p0} (administrative floor {pa})")]
    NoRoot { p0: f64, pa: f64 },
    #[error("cluster count must be even and at least 2, got {0}")]
    BadClusterCount(usize),
    #[error("mean cluster size must be at least 2, got {0}")]
    BadMeanSize(f64),
    #[error("cluster-size coefficient of variation must be nonnegative, got {0}")]
    BadCv(f64),
    #[error("kendall tau must lie strictly inside (0, 0.5), got {0}")]
    BadTau(f64),
    #[error("need administrative <= net censoring, both inside (0, 1); got pa = {pa}, p0 = {p0}")]
    BadCensoringRates { pa: f64, p0: f64 },
    #[error("weibull shape must be positive and finite, got {0}")]
    BadShape(f64),
    #[error("log hazard ratio must be finite, got {0}")]
    BadEffect(f64),
    #[error("generated trial failed validation: {0}")]
    Data(#[from] DataError),
}

/// One simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Number of clusters (even; half per arm).
    pub n: usize,
    /// Mean cluster size.
    pub mbar: f64,
    /// Coefficient of variation of cluster sizes (0 = equal sizes).
    pub cv: f64,
    /// Kendall's tau of within-cluster failure-time dependence.
    pub tau: f64,
    /// Net control-arm censoring fraction.
    pub p0: f64,
    /// Administrative control-arm censoring fraction.
    pub pa: f64,
    /// Weibull shape of the baseline hazard.
    pub kappa: f64,
    /// True log hazard ratio of treatment.
    pub beta: f64,
    pub seed: u64,
}

impl Scenario {
    /// A scenario with the default administrative censoring (0.2),
    /// exponential baseline (shape 1), and no treatment effect.
    pub fn new(n: usize, mbar: f64, cv: f64, tau: f64, p0: f64, seed: u64) -> Self {
        Scenario {
            n,
            mbar,
            cv,
            tau,
            p0,
            pa: 0.2,
            kappa: 1.0,
            beta: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return Err(SimError::BadClusterCount(self.n));
        }
        if self.mbar < 2.0 || !self.mbar.is_finite() {
            return Err(SimError::BadMeanSize(self.mbar));
        }
        if self.cv < 0.0 || !self.cv.is_finite() {
            return Err(SimError::BadCv(self.cv));
        }
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return Err(SimError::BadTau(self.tau));
        }
        if !(self.pa > 0.0 && self.pa < 1.0 && self.p0 < 1.0 && self.pa <= self.p0) {
            return Err(SimError::BadCensoringRates {
                pa: self.pa,
                p0: self.p0,
            });
        }
        if self.kappa <= 0.0 || !self.kappa.is_finite() {
            return Err(SimError::BadShape(self.kappa));
        }
        if !self.beta.is_finite() {
            return Err(SimError::BadEffect(self.beta));
        }
        Ok(())
    }

    /// Copula parameter implied by the configured Kendall's tau.
    pub fn theta(&self) -> f64 {
        theta_from_tau(self.tau)
    }
}

/// theta = (1/tau - 1) / 2, the Clayton parameter with Kendall's tau `tau`.
pub fn theta_from_tau(tau: f64) -> f64 {
    (1.0 / tau - 1.0) / 2.0
}

/// Kendall's tau = 1 / (2 theta + 1) of a Clayton copula.
pub fn tau_from_theta(theta: f64) -> f64 {
    1.0 / (2.0 * theta + 1.0)
}

/// Baseline Weibull rate hitting control-arm administrative censoring `pa`
/// at the horizon: exp(-(lambda0 * 1)^kappa) = pa.
pub fn solve_lambda0(pa: f64, kappa: f64) -> Result<f64, SimError> {
    if !(pa > 0.0 && pa < 1.0) {
        return Err(SimError::BadRate(pa));
    }
    if kappa <= 0.0 || !kappa.is_finite() {
        return Err(SimError::BadShape(kappa));
    }
    Ok((-pa.ln()).powf(1.0 / kappa))
}

/// Control-arm survival at time t.
fn weibull_survival(t: f64, lambda0: f64, kappa: f64) -> f64 {
    (-(lambda0 * t).powf(kappa)).exp()
}

/// Exponential dropout rate hitting net control-arm censoring `p0`:
/// P(T > min(C*, 1)) = p0 with C* ~ Exp(rho). Strictly administrative
/// censoring (p0 == pa) needs no dropout, so rho = 0.
pub fn solve_rho(p0: f64, pa: f64, lambda0: f64, kappa: f64) -> Result<f64, SimError> {
    if !(pa > 0.0 && pa < 1.0 && p0 < 1.0) {
        return Err(SimError::BadRate(p0));
    }
    if p0 == pa {
        return Ok(0.0);
    }
    if p0 < pa {
        return Err(SimError::NoRoot { p0, pa });
    }
    let censored_fraction = |rho: f64| -> f64 {
        let integral = adaptive_simpson(
            &|c| rho * (-rho * c).exp() * weibull_survival(c, lambda0, kappa),
            0.0,
            ADMIN_CENSOR_TIME,
            1e-10,
        );
        integral + (-rho).exp() * weibull_survival(ADMIN_CENSOR_TIME, lambda0, kappa)
    };
    let mut lo = 0.0_f64;
    let mut hi = 1e3_f64;
    if censored_fraction(hi) < p0 {
        return Err(SimError::NoRoot { p0, pa });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if censored_fraction(mid) < p0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Adaptive Simpson quadrature on [a, b].
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Draw `n` cluster sizes: gamma with mean `mbar` and coefficient of
/// variation `cv`, rounded to the nearest integer and floored at 2.
/// `cv = 0` degenerates to equal sizes round(mbar).
pub fn draw_cluster_sizes(n: usize, mbar: f64, cv: f64, rng: &mut StreamRng) -> Vec<usize> {
    assert!(mbar >= 2.0, "mean cluster size must be at least 2");
    assert!(cv >= 0.0, "coefficient of variation must be nonnegative");
    if cv == 0.0 {
        return vec![mbar.round() as usize; n];
    }
    let shape = 1.0 / (cv * cv);
    let scale = mbar * cv * cv;
    let gamma = Gamma::new(shape, scale).expect("validated gamma parameters");
    (0..n)
        .map(|_| {
            let draw: f64 = gamma.sample(rng);
            (draw.round() as i64).max(2) as usize
        })
        .collect()
}

/// Generate one cluster of correlated failure times from the Clayton copula
/// with Weibull marginals; `z` is the cluster's treatment indicator.
///
/// The construction peels one coordinate at a time from the conditional
/// distribution: each uniform variate is pushed through the inverse of the
/// conditional CDF given the coordinates already drawn.
pub fn clayton_cluster(
    mi: usize,
    theta: f64,
    z: f64,
    beta: f64,
    lambda0: f64,
    kappa: f64,
    rng: &mut StreamRng,
) -> Vec<f64> {
    assert!(mi >= 1, "cluster size must be at least 1");
    assert!(theta > 0.0, "copula parameter must be positive");
    let effect = (-z * beta).exp();
    let mut times = Vec::with_capacity(mi);
    let u1 = rng.next_open01();
    times.push((-(1.0 - u1).ln() * effect).powf(1.0 / kappa) / lambda0);
    let mut a_sum = (1.0 - u1).powf(-1.0 / theta);
    for h in 2..=mi {
        let hf = h as f64;
        let uh = rng.next_open01();
        let omega =
            (hf - 1.0) - a_sum + (a_sum - (hf - 2.0)) * (1.0 - uh).powf(-1.0 / (theta + hf - 1.0));
        times.push((theta * omega.ln() * effect).powf(1.0 / kappa) / lambda0);
        a_sum += omega;
    }
    times
}

/// Generate one trial for the given replication index. Fully deterministic
/// in (scenario seed, rep_index); the first n/2 clusters are the treated arm.
pub fn generate_trial(sc: &Scenario, rep_index: u64) -> Result<TrialData, SimError> {
    sc.validate()?;
    let theta = sc.theta();
    let lambda0 = solve_lambda0(sc.pa, sc.kappa)?;
    let rho = solve_rho(sc.p0, sc.pa, lambda0, sc.kappa)?;

    let mut size_rng = StreamRng::from_parts(sc.seed, rep_index, LANE_SIZES, 0);
    let sizes = draw_cluster_sizes(sc.n, sc.mbar, sc.cv, &mut size_rng);

    let mut clusters = Vec::with_capacity(sc.n);
    for (i, &mi) in sizes.iter().enumerate() {
        let z = if i < sc.n / 2 { 1.0 } else { 0.0 };
        let mut rng = StreamRng::from_parts(sc.seed, rep_index, LANE_CLUSTER, i as u64);
        let failures = clayton_cluster(mi, theta, z, sc.beta, lambda0, sc.kappa, &mut rng);
        let mut cluster = Vec::with_capacity(mi);
        for t in failures {
            let dropout = if rho > 0.0 {
                -rng.next_open01().ln() / rho
            } else {
                f64::INFINITY
            };
            let censor = dropout.min(ADMIN_CENSOR_TIME);
            let observed = t.min(censor);
            cluster.push(Subject::new(observed, t <= censor, vec![z]));
        }
        clusters.push(cluster);
    }
    Ok(TrialData::from_clusters(clusters)?)
}
