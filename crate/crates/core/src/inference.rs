//! Wald t-tests and confidence intervals with cluster-count degrees of
//! freedom, the small-sample reference recommended for trials that randomize
//! few clusters.

use thiserror::Error;

use crate::cox::FitResult;
use crate::special::{inc_beta, ln_gamma};
use crate::variance::VarianceEstimate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("degrees of freedom must be positive")]
    BadDegreesOfFreedom,
    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    BadLevel(f64),
    #[error("variance entry for the tested coefficient is not positive ({0})")]
    NonPositiveVariance(f64),
}

/// CDF of the t distribution with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: usize) -> f64 {
    let nu = df as f64;
    let y = nu / (nu + x * x);
    let tail = 0.5 * inc_beta(0.5 * nu, 0.5, y);
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn t_pdf(x: f64, df: usize) -> f64 {
    let nu = df as f64;
    let ln_norm = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp()
}

/// Inverse CDF of the t distribution, via the inverse regularized incomplete
/// beta with a final Newton polish on the CDF itself.
///
/// For `q >= 0.5` (where `1 - q` is exact), `t_quantile(1 - q, df)` and
/// `-t_quantile(q, df)` are bitwise equal: both calls reduce to the same
/// tail mass `min(q, 1 - q)`.
pub fn t_quantile(prob: f64, df: usize) -> Result<f64, InferenceError> {
    if !(prob > 0.0 && prob < 1.0) || prob.is_nan() {
        return Err(InferenceError::BadProbability(prob));
    }
    if df == 0 {
        return Err(InferenceError::BadDegreesOfFreedom);
    }
    let tail = prob.min(1.0 - prob);
    if tail == 0.5 {
        return Ok(0.0);
    }
    let sign = if prob >= 0.5 { 1.0 } else { -1.0 };

    let nu = df as f64;
    let a = 0.5 * nu;
    let b = 0.5;
    // Upper-tail mass of |T| relates to the incomplete beta through
    // 2 * tail = I_y(nu/2, 1/2) with y = nu / (nu + x^2).
    let y = inverse_inc_beta(a, b, 2.0 * tail);
    let mut x = (nu * (1.0 - y) / y).sqrt();
    // Newton polish against the CDF.
    let target = 1.0 - tail;
    for _ in 0..3 {
        let f = t_cdf(x, df) - target;
        let d = t_pdf(x, df);
        if d <= 0.0 {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() <= 1e-12 * (1.0 + x.abs()) {
            break;
        }
    }
    Ok(sign * x)
}

/// Solve I_y(a, b) = target for y in (0, 1); bisection with Newton
/// acceleration.
fn inverse_inc_beta(a: f64, b: f64, target: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut y = 0.5;
    let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
    for _ in 0..200 {
        let f = inc_beta(a, b, y) - target;
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        if f.abs() < 1e-15 || hi - lo < 1e-16 {
            break;
        }
        let deriv = ((a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln() - ln_beta).exp();
        let mut next = y - f / deriv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        y = next;
    }
    y
}

/// Result of a Wald t-test for one coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    /// Log hazard ratio estimate for the tested coefficient.
    pub estimate: f64,
    /// Hazard ratio, exp(estimate).
    pub hr: f64,
    pub se: f64,
    pub t_stat: f64,
    /// Degrees of freedom: number of clusters minus one.
    pub df: usize,
    pub p_value: f64,
    /// Confidence bounds on the log hazard-ratio scale.
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Two-sided Wald t-test of H0: beta_k = 0 with n_clusters - 1 degrees of
/// freedom under the supplied covariance estimate.
pub fn wald_test(
    fit: &FitResult,
    v: &VarianceEstimate,
    coef_index: usize,
    level: f64,
    n_clusters: usize,
) -> Result<TestResult, InferenceError> {
    assert!(
        coef_index < fit.beta_hat().len(),
        "coefficient index out of range"
    );
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::BadLevel(level));
    }
    if n_clusters < 2 {
        return Err(InferenceError::BadDegreesOfFreedom);
    }
    let variance = v.var(coef_index);
    if variance <= 0.0 || !variance.is_finite() {
        return Err(InferenceError::NonPositiveVariance(variance));
    }
    let df = n_clusters - 1;
    let estimate = fit.beta_hat()[coef_index];
    let se = variance.sqrt();
    let t_stat = estimate / se;
    let p_value = 2.0 * (1.0 - t_cdf(t_stat.abs(), df));
    let t_crit = t_quantile(1.0 - (1.0 - level) / 2.0, df)?;
    Ok(TestResult {
        estimate,
        hr: estimate.exp(),
        se,
        t_stat,
        df,
        p_value,
        ci_low: estimate - t_crit * se,
        ci_high: estimate + t_crit * se,
        level,
    })
}
