//! Domain types for clustered right-censored survival data.
//!
//! A trial is a collection of clusters of subjects. Each subject carries an
//! observed time (the minimum of failure and censoring time), an event flag,
//! and a covariate vector. [`TrialData`] is the validated unit of fitting;
//! every estimator in this crate consumes it read-only.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Validation errors for raw subject records.
///
/// `record` indices refer to the flattened input order (0-based), so callers
/// reading from a file can map them back to line numbers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("record {record}: observed time must be positive and finite, got {value}")]
    NonPositiveTime { record: usize, value: f64 },
    #[error("record {record}: event flag must be 0 or 1, got {value}")]
    BadEventFlag { record: usize, value: f64 },
    #[error("record {record}: covariate values must be finite")]
    NonFiniteCovariate { record: usize },
    #[error("record {record}: expected {expected} covariates, found {found}")]
    RaggedCovariates {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("no events observed; at least one subject must have event = 1")]
    NoEvents,
    #[error("all covariate columns are constant; the model is unidentifiable")]
    ConstantCovariates,
    #[error("need at least 2 clusters, found {found}")]
    TooFewClusters { found: usize },
    #[error("input contains no records")]
    EmptyInput,
}

/// One individual's observation: time, event indicator, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    time: f64,
    event: bool,
    covariates: DVector<f64>,
}

impl Subject {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Subject {
            time,
            event,
            covariates: DVector::from_vec(covariates),
        }
    }

    /// Observed time (minimum of failure and censoring time).
    pub fn time(&self) -> f64 {
        self.time
    }

    /// True when the failure was observed, false when censored.
    pub fn event(&self) -> bool {
        self.event
    }

    /// Event indicator as 0/1 for use in estimating-equation sums.
    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }

    pub fn covariates(&self) -> &DVector<f64> {
        &self.covariates
    }
}

/// A raw input record before cluster-id mapping and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubject {
    /// Opaque cluster identifier; ids are mapped to indices 0..n-1 in
    /// first-appearance order and need not be contiguous or numeric.
    pub cluster: String,
    pub time: f64,
    /// Raw event value; must be exactly 0 or 1.
    pub event: f64,
    pub covariates: Vec<f64>,
}

/// A validated clustered survival dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    clusters: Vec<Vec<Subject>>,
    p: usize,
}

impl TrialData {
    /// Group raw records by cluster id (first-appearance order) and validate.
    pub fn from_records(records: &[RawSubject]) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyInput);
        }
        let mut ids: Vec<&str> = Vec::new();
        let mut clusters: Vec<Vec<Subject>> = Vec::new();
        for (idx, rec) in records.iter().enumerate() {
            if rec.event != 0.0 && rec.event != 1.0 {
                return Err(DataError::BadEventFlag {
                    record: idx,
                    value: rec.event,
                });
            }
            let subject = Subject::new(rec.time, rec.event == 1.0, rec.covariates.clone());
            let slot = match ids.iter().position(|id| *id == rec.cluster) {
                Some(i) => i,
                None => {
                    ids.push(&rec.cluster);
                    clusters.push(Vec::new());
                    clusters.len() - 1
                }
            };
            clusters[slot].push(subject);
        }
        Self::from_clusters(clusters)
    }

    /// Validate pre-grouped clusters of subjects.
    ///
    /// Record indices in errors refer to cluster order flattened
    /// (cluster 0 subjects first, then cluster 1, ...), which matches the
    /// input order when coming through [`TrialData::from_records`].
    pub fn from_clusters(clusters: Vec<Vec<Subject>>) -> Result<Self, DataError> {
        let clusters: Vec<Vec<Subject>> =
            clusters.into_iter().filter(|c| !c.is_empty()).collect();
        if clusters.iter().map(|c| c.len()).sum::<usize>() == 0 {
            return Err(DataError::EmptyInput);
        }
        if clusters.len() < 2 {
            return Err(DataError::TooFewClusters {
                found: clusters.len(),
            });
        }
        let p = clusters[0][0].covariates.len();
        let mut idx = 0usize;
        let mut any_event = false;
        for cluster in &clusters {
            for s in cluster {
                if s.time <= 0.0 || !s.time.is_finite() {
                    return Err(DataError::NonPositiveTime {
                        record: idx,
                        value: s.time,
                    });
                }
                if s.covariates.len() != p {
                    return Err(DataError::RaggedCovariates {
                        record: idx,
                        expected: p,
                        found: s.covariates.len(),
                    });
                }
                if s.covariates.iter().any(|z| !z.is_finite()) {
                    return Err(DataError::NonFiniteCovariate { record: idx });
                }
                any_event |= s.event;
                idx += 1;
            }
        }
        if !any_event {
            return Err(DataError::NoEvents);
        }
        // Identifiability: at least one covariate column must vary. A dataset
        // with p = 0 has no parameters and is rejected on the same grounds.
        let varying = (0..p).any(|j| {
            let mut first = None;
            clusters.iter().flatten().any(|s| {
                let z = s.covariates[j];
                match first {
                    None => {
                        first = Some(z);
                        false
                    }
                    Some(f) => z != f,
                }
            })
        });
        if !varying {
            return Err(DataError::ConstantCovariates);
        }
        Ok(TrialData { clusters, p })
    }

    /// Number of clusters n.
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Covariate dimension p.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn clusters(&self) -> &[Vec<Subject>] {
        &self.clusters
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.len()).collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.clusters.iter().map(|c| c.len()).sum()
    }

    pub fn n_events(&self) -> usize {
        self.subjects().filter(|(_, s)| s.event).count()
    }

    /// Fraction of subjects whose observation is censored.
    pub fn censoring_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.n_subjects() as f64
    }

    /// Iterate subjects as (cluster index, subject) in cluster order.
    pub fn subjects(&self) -> impl Iterator<Item = (usize, &Subject)> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |s| (i, s)))
    }
}

/// At-risk weighted covariate sums S^(0), S^(1), S^(2) at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSums {
    pub s0: f64,
    pub s1: DVector<f64>,
    pub s2: DMatrix<f64>,
}

/// Compute the at-risk sums over all subjects at time `t`:
/// s_r = sum over subjects of I(X >= t) * exp(beta'Z) * Z^(outer r).
///
/// An empty risk set yields s0 = 0; downstream consumers guard divisions.
pub fn risk_sums(data: &TrialData, beta: &DVector<f64>, t: f64) -> RiskSums {
    let p = data.p();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    for (_, s) in data.subjects() {
        if s.time() >= t {
            let w = beta.dot(s.covariates()).exp();
            s0 += w;
            s1.axpy(w, s.covariates(), 1.0);
            s2.ger(w, s.covariates(), s.covariates(), 1.0);
        }
    }
    RiskSums { s0, s1, s2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cluster: &str, time: f64, event: f64, z: &[f64]) -> RawSubject {
        RawSubject {
            cluster: cluster.to_string(),
            time,
            event,
            covariates: z.to_vec(),
        }
    }

    #[test]
    fn valid_two_cluster_dataset() {
        let records = vec![
            rec("a", 1.0, 1.0, &[1.0]),
            rec("b", 2.0, 1.0, &[0.0]),
            rec("a", 3.0, 0.0, &[1.0]),
        ];
        let data = TrialData::from_records(&records).unwrap();
        assert_eq!(data.n_clusters(), 2);
        assert_eq!(data.p(), 1);
        assert_eq!(data.cluster_sizes(), vec![2, 1]);
        assert_eq!(data.n_events(), 2);
    }

    #[test]
    fn zero_time_rejected() {
        let records = vec![rec("a", 0.0, 1.0, &[1.0]), rec("b", 2.0, 1.0, &[0.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::NonPositiveTime { record: 0, .. })
        ));
    }

    #[test]
    fn nan_time_rejected() {
        let records = vec![rec("a", f64::NAN, 1.0, &[1.0]), rec("b", 2.0, 1.0, &[0.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::NonPositiveTime { .. })
        ));
    }

    #[test]
    fn bad_event_flag_rejected() {
        let records = vec![rec("a", 1.0, 2.0, &[1.0]), rec("b", 2.0, 1.0, &[0.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::BadEventFlag { record: 0, value }) if value == 2.0
        ));
    }

    #[test]
    fn constant_covariates_rejected() {
        let records = vec![rec("a", 1.0, 1.0, &[1.0]), rec("b", 2.0, 1.0, &[1.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::ConstantCovariates)
        ));
    }

    #[test]
    fn ragged_covariates_rejected() {
        let records = vec![
            rec("a", 1.0, 1.0, &[1.0, 2.0]),
            rec("b", 2.0, 1.0, &[0.0]),
        ];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::RaggedCovariates { record: 1, expected: 2, found: 1 })
        ));
    }

    #[test]
    fn no_events_rejected() {
        let records = vec![rec("a", 1.0, 0.0, &[1.0]), rec("b", 2.0, 0.0, &[0.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::NoEvents)
        ));
    }

    #[test]
    fn single_cluster_rejected() {
        let records = vec![rec("a", 1.0, 1.0, &[1.0]), rec("a", 2.0, 1.0, &[0.0])];
        assert!(matches!(
            TrialData::from_records(&records),
            Err(DataError::TooFewClusters { found: 1 })
        ));
    }

    #[test]
    fn cluster_ids_mapped_in_first_appearance_order() {
        let records = vec![
            rec("x9", 1.0, 1.0, &[1.0]),
            rec("q", 2.0, 0.0, &[0.0]),
            rec("x9", 3.0, 1.0, &[0.5]),
        ];
        let data = TrialData::from_records(&records).unwrap();
        assert_eq!(data.clusters()[0].len(), 2);
        assert_eq!(data.clusters()[1].len(), 1);
        assert_eq!(data.clusters()[0][1].time(), 3.0);
    }

    #[test]
    fn risk_sums_counts_at_risk_at_beta_zero() {
        let records = vec![
            rec("a", 1.0, 1.0, &[0.0]),
            rec("a", 2.0, 1.0, &[1.0]),
            rec("b", 3.0, 1.0, &[0.0]),
        ];
        let data = TrialData::from_records(&records).unwrap();
        let beta = DVector::zeros(1);
        let rs = risk_sums(&data, &beta, 2.0);
        assert_eq!(rs.s0, 2.0);
        // Subjects with Z = 0 contribute nothing to s1.
        let rs1 = risk_sums(&data, &beta, 3.0);
        assert_eq!(rs1.s1[0], 0.0);
    }
}
