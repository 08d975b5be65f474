//! Independent oracle implementations for the integration tests.
//!
//! Everything here is written as literal, naive loops over the data --
//! separate from the prefix-sum machinery inside the crate -- so that
//! agreement between the two is meaningful evidence of correctness.

#![allow(dead_code)]

use marcox::data::{RawSubject, Subject, TrialData};
use marcox::rng::StreamRng;
use nalgebra::{DMatrix, DVector};

// ---------------------------------------------------------------------------
// Fixtures and random dataset generation
// ---------------------------------------------------------------------------

/// The closed-form three-subject fixture: root of the score at -ln(2)/2.
pub fn d1() -> TrialData {
    TrialData::from_records(&[
        raw("c1", 1.0, 1.0, &[1.0]),
        raw("c2", 2.0, 1.0, &[0.0]),
        raw("c1", 3.0, 0.0, &[1.0]),
    ])
    .unwrap()
}

pub fn raw(cluster: &str, time: f64, event: f64, z: &[f64]) -> RawSubject {
    RawSubject {
        cluster: cluster.to_string(),
        time,
        event,
        covariates: z.to_vec(),
    }
}

/// Random small clustered trial: exponential-ish times with a mild covariate
/// effect and ~20% censoring. Deterministic in `seed`.
pub fn random_trial(seed: u64, n_clusters: usize, m_lo: usize, m_hi: usize, p: usize) -> TrialData {
    let mut rng = StreamRng::from_parts(seed, 0, 90, 0);
    loop {
        let mut clusters = Vec::with_capacity(n_clusters);
        for _ in 0..n_clusters {
            let m = m_lo + (rng.next_u64() as usize) % (m_hi - m_lo + 1);
            let mut cluster = Vec::with_capacity(m);
            for _ in 0..m {
                let z: Vec<f64> = (0..p)
                    .map(|_| if rng.next_open01() < 0.5 { 0.0 } else { 1.0 })
                    .collect();
                let rate = (0.3 * z.iter().sum::<f64>()).exp();
                let t = -rng.next_open01().ln() / rate;
                let censored = rng.next_open01() < 0.2;
                let (x, event) = if censored {
                    (t * rng.next_open01(), false)
                } else {
                    (t, true)
                };
                cluster.push(Subject::new(x.max(1e-6), event, z));
            }
            clusters.push(cluster);
        }
        match TrialData::from_clusters(clusters) {
            Ok(data) => return data,
            Err(_) => {
                // Roll again (all-censored or constant-covariate draw).
                rng = StreamRng::from_parts(seed, 1 + rng.next_u64() % 1000, 90, 1);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force risk sums and estimating-equation pieces
// ---------------------------------------------------------------------------

pub struct OracleSums {
    pub s0: f64,
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
}

pub fn o_risk_sums(data: &TrialData, beta: &DVector<f64>, t: f64) -> OracleSums {
    let p = data.p();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    for cluster in data.clusters() {
        for s in cluster {
            if s.time() >= t {
                let w = beta.dot(s.covariates()).exp();
                s0 += w;
                s1 += s.covariates() * w;
                s2 += s.covariates() * s.covariates().transpose() * w;
            }
        }
    }
    OracleSums { s0, s1, s2 }
}

pub fn o_event_times(data: &TrialData) -> Vec<f64> {
    let mut times: Vec<f64> = data
        .subjects()
        .filter(|(_, s)| s.event())
        .map(|(_, s)| s.time())
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    times
}

pub fn o_score(data: &TrialData, beta: &DVector<f64>) -> DVector<f64> {
    let mut u = DVector::zeros(data.p());
    for (_, s) in data.subjects() {
        if s.event() {
            let sums = o_risk_sums(data, beta, s.time());
            u += s.covariates() - &sums.s1 / sums.s0;
        }
    }
    u
}

pub fn o_log_partial_likelihood(data: &TrialData, beta: &DVector<f64>) -> f64 {
    let mut lpl = 0.0;
    for (_, s) in data.subjects() {
        if s.event() {
            let sums = o_risk_sums(data, beta, s.time());
            lpl += beta.dot(s.covariates()) - sums.s0.ln();
        }
    }
    lpl
}

pub fn o_information(data: &TrialData, beta: &DVector<f64>) -> DMatrix<f64> {
    let p = data.p();
    let mut info = DMatrix::zeros(p, p);
    for (_, s) in data.subjects() {
        if s.event() {
            let sums = o_risk_sums(data, beta, s.time());
            let zbar = &sums.s1 / sums.s0;
            info += &sums.s2 / sums.s0 - &zbar * zbar.transpose();
        }
    }
    info
}

/// Breslow increments per distinct event time: d(u) / S0(u).
pub fn o_breslow(data: &TrialData, beta: &DVector<f64>) -> Vec<(f64, f64)> {
    o_event_times(data)
        .into_iter()
        .map(|u| {
            let d = data
                .subjects()
                .filter(|(_, s)| s.event() && s.time() == u)
                .count() as f64;
            (u, d / o_risk_sums(data, beta, u).s0)
        })
        .collect()
}

/// Residual increments dM_ij at every distinct event time, fully
/// materialized: dN_ij(u) - Y_ij(u) exp(beta'Z) dLambda0(u).
pub fn o_residual_increments(data: &TrialData, beta: &DVector<f64>) -> Vec<Vec<Vec<f64>>> {
    let breslow = o_breslow(data, beta);
    data.clusters()
        .iter()
        .map(|cluster| {
            cluster
                .iter()
                .map(|s| {
                    let w = beta.dot(s.covariates()).exp();
                    breslow
                        .iter()
                        .map(|(u, inc)| {
                            let dn = if s.event() && s.time() == *u { 1.0 } else { 0.0 };
                            let at_risk = if s.time() >= *u { 1.0 } else { 0.0 };
                            dn - at_risk * w * inc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Cluster scores via the fully materialized residual paths:
/// U_i = sum_j sum_u (Z_ij - S1/S0(u)) dM_ij(u).
pub fn o_cluster_scores(data: &TrialData, beta: &DVector<f64>) -> Vec<DVector<f64>> {
    let p = data.p();
    let times = o_event_times(data);
    let dm = o_residual_increments(data, beta);
    let zbars: Vec<DVector<f64>> = times
        .iter()
        .map(|u| {
            let sums = o_risk_sums(data, beta, *u);
            &sums.s1 / sums.s0
        })
        .collect();
    data.clusters()
        .iter()
        .enumerate()
        .map(|(i, cluster)| {
            let mut u_i = DVector::zeros(p);
            for (j, s) in cluster.iter().enumerate() {
                for (k, zbar) in zbars.iter().enumerate() {
                    u_i += (s.covariates() - zbar) * dm[i][j][k];
                }
            }
            u_i
        })
        .collect()
}

/// Literal three-term cluster gradients, each term its own loop.
pub fn o_cluster_gradients(data: &TrialData, beta: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let p = data.p();
    let times = o_event_times(data);
    let breslow = o_breslow(data, beta);
    let per_time: Vec<(DVector<f64>, DMatrix<f64>)> = times
        .iter()
        .map(|u| {
            let sums = o_risk_sums(data, beta, *u);
            let zbar = &sums.s1 / sums.s0;
            let vmat = &sums.s2 / sums.s0 - &zbar * zbar.transpose();
            (zbar, vmat)
        })
        .collect();
    data.clusters()
        .iter()
        .map(|cluster| {
            let mut term1 = DMatrix::zeros(p, p);
            for s in cluster {
                if s.event() {
                    let k = times.iter().position(|u| *u == s.time()).unwrap();
                    term1 += &per_time[k].1;
                }
            }
            let mut term2 = DMatrix::zeros(p, p);
            for s in cluster {
                let w = beta.dot(s.covariates()).exp();
                for (k, (_, inc)) in breslow.iter().enumerate() {
                    if s.time() >= times[k] {
                        term2 += &per_time[k].1 * (w * inc);
                    }
                }
            }
            let mut term3 = DMatrix::zeros(p, p);
            for s in cluster {
                let w = beta.dot(s.covariates()).exp();
                for (k, (_, inc)) in breslow.iter().enumerate() {
                    if s.time() >= times[k] {
                        term3 += (s.covariates() - &per_time[k].0)
                            * s.covariates().transpose()
                            * (w * inc);
                    }
                }
            }
            term1 - term2 + term3
        })
        .collect()
}

/// Literal bias-corrected cluster scores with full step-function
/// materialization of both the residual and its gradient paths.
pub fn o_corrected_scores(
    data: &TrialData,
    beta: &DVector<f64>,
    vm: &DMatrix<f64>,
) -> Vec<DVector<f64>> {
    let p = data.p();
    let times = o_event_times(data);
    let breslow = o_breslow(data, beta);
    let zbars: Vec<DVector<f64>> = times
        .iter()
        .map(|u| {
            let sums = o_risk_sums(data, beta, *u);
            &sums.s1 / sums.s0
        })
        .collect();
    let s0s: Vec<f64> = times
        .iter()
        .map(|u| o_risk_sums(data, beta, *u).s0)
        .collect();
    let dm = o_residual_increments(data, beta);
    let scores = o_cluster_scores(data, beta);

    data.clusters()
        .iter()
        .enumerate()
        .map(|(i, cluster)| {
            // Gradient-path increments dD_ij(u) for each member.
            let d_incs: Vec<Vec<DVector<f64>>> = cluster
                .iter()
                .map(|s| {
                    let w = beta.dot(s.covariates()).exp();
                    times
                        .iter()
                        .enumerate()
                        .map(|(k, u)| {
                            if s.time() >= *u {
                                (s.covariates() - &zbars[k]) * (w * breslow[k].1)
                            } else {
                                DVector::zeros(p)
                            }
                        })
                        .collect()
                })
                .collect();
            let mut bracket = DMatrix::<f64>::identity(p, p);
            for (j, s) in cluster.iter().enumerate() {
                for k in 0..times.len() {
                    bracket += (s.covariates() - &zbars[k]) * d_incs[j][k].transpose() * vm;
                }
            }
            let term_a = &bracket * &scores[i];

            // Within-cluster residual sum at each event time.
            let dm_cluster: Vec<f64> = (0..times.len())
                .map(|k| (0..cluster.len()).map(|j| dm[i][j][k]).sum())
                .collect();
            let mut term_b = DVector::zeros(p);
            for s in cluster.iter() {
                let w = beta.dot(s.covariates()).exp();
                for k in 0..times.len() {
                    if s.time() >= times[k] {
                        term_b += (s.covariates() - &zbars[k]) * (w / s0s[k] * dm_cluster[k]);
                    }
                }
            }
            term_a + term_b
        })
        .collect()
}

/// Naive sandwich: vm (sum_i c_i u_i u_i' c_i') vm with scalar or matrix
/// per-cluster factors supplied by the caller.
pub fn o_sandwich(
    vm: &DMatrix<f64>,
    scores: &[DVector<f64>],
    corrections: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let p = vm.nrows();
    let mut meat = DMatrix::zeros(p, p);
    for (u, c) in scores.iter().zip(corrections) {
        let cu = c * u;
        meat += &cu * cu.transpose();
    }
    vm * meat * vm
}

/// Naive additive (design effect) estimator.
pub fn o_mbn(data: &TrialData, vm: &DMatrix<f64>, scores: &[DVector<f64>]) -> DMatrix<f64> {
    let p = data.p();
    let n = data.n_clusters() as f64;
    let m_total = data.n_subjects() as f64;
    let c = (m_total - 1.0) / (m_total - p as f64) * (n / (n - 1.0));
    let delta = (p as f64 / (n - p as f64)).min(0.5);
    let mut meat = DMatrix::zeros(p, p);
    for u in scores {
        meat += u * u.transpose();
    }
    let vs = vm * &meat * vm;
    let phi = (c * (vm * &meat).trace() / p as f64).max(1.0);
    vs * c + vm * (delta * phi)
}

// ---------------------------------------------------------------------------
// Independent optimizers and distributions
// ---------------------------------------------------------------------------

/// Golden-section maximization of a unimodal function on [a, b].
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn o_ln_gamma(x: f64) -> f64 {
    // Stirling's series with shift; adequate far beyond test accuracy.
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + 0.5 * ((2.0 * std::f64::consts::PI).ln() - x.ln())
        + x * (x.ln() - 1.0)
        + inv / 12.0 * (1.0 - inv2 / 30.0 * (1.0 - inv2 * 2.0 / 7.0))
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_cdf(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // Series expansion.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut k = a;
        for _ in 0..500 {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        (a * x.ln() - x - o_ln_gamma(a)).exp() * sum
    } else {
        // Continued fraction for the upper tail (modified Lentz).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        1.0 - (a * x.ln() - x - o_ln_gamma(a)).exp() * h
    }
}

/// One-sample Kolmogorov-Smirnov distance against a CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0_f64;
    for (i, x) in samples.iter().enumerate() {
        let f = cdf(*x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
