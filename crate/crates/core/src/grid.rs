//! Shared per-event-time quantities for a dataset at a fixed coefficient
//! vector. All estimating-equation integrals in this crate are discrete sums
//! over the distinct observed event times; this grid caches the risk-set
//! sums, Breslow increments, and their running prefixes so that downstream
//! per-cluster formulas reduce to O(p^2) work per subject.

use nalgebra::{DMatrix, DVector};

use crate::data::TrialData;

pub(crate) struct EventGrid {
    /// Distinct observed event times, ascending.
    pub times: Vec<f64>,
    /// Number of events at each time (ties aggregated).
    pub d: Vec<f64>,
    /// S^(0) at each event time.
    pub s0: Vec<f64>,
    /// S^(1)/S^(0) at each event time.
    pub zbar: Vec<DVector<f64>>,
    /// S^(2)/S^(0) - zbar zbar' at each event time.
    pub vmat: Vec<DMatrix<f64>>,
    /// Breslow baseline hazard increments d / S^(0).
    pub lambda: Vec<f64>,
    /// Inclusive prefix sums over event index of lambda, lambda*zbar,
    /// lambda*zbar zbar', and lambda*vmat.
    pub cum_lambda: Vec<f64>,
    pub cum_lambda_zbar: Vec<DVector<f64>>,
    pub cum_lambda_zz: Vec<DMatrix<f64>>,
    pub cum_lambda_vmat: Vec<DMatrix<f64>>,
    /// Per subject, flattened in cluster order: linear predictor, its exp,
    /// and the index of the last event time <= the subject's observed time
    /// (None when the subject left before the first event).
    pub lin_pred: Vec<f64>,
    pub weight: Vec<f64>,
    pub last_idx: Vec<Option<usize>>,
}

impl EventGrid {
    pub fn build(data: &TrialData, beta: &DVector<f64>) -> Self {
        let p = data.p();
        let subjects: Vec<_> = data.subjects().collect();
        let n_sub = subjects.len();

        let mut lin_pred = Vec::with_capacity(n_sub);
        let mut weight = Vec::with_capacity(n_sub);
        for (_, s) in &subjects {
            let lp = beta.dot(s.covariates());
            lin_pred.push(lp);
            weight.push(lp.exp());
        }

        // Distinct event times ascending, with tie multiplicities.
        let mut event_times: Vec<f64> = subjects
            .iter()
            .filter(|(_, s)| s.event())
            .map(|(_, s)| s.time())
            .collect();
        event_times.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut times: Vec<f64> = Vec::new();
        let mut d: Vec<f64> = Vec::new();
        for t in event_times {
            match times.last() {
                Some(last) if *last == t => *d.last_mut().unwrap() += 1.0,
                _ => {
                    times.push(t);
                    d.push(1.0);
                }
            }
        }
        let n_times = times.len();

        // Descending sweep: subjects enter the accumulators once their
        // observed time reaches the current event time (Y = I(X >= u)).
        let mut order: Vec<usize> = (0..n_sub).collect();
        order.sort_unstable_by(|&a, &b| {
            subjects[b].1.time().partial_cmp(&subjects[a].1.time()).unwrap()
        });
        let mut s0_acc = 0.0;
        let mut s1_acc = DVector::zeros(p);
        let mut s2_acc = DMatrix::zeros(p, p);
        let mut ptr = 0usize;
        let mut s0 = vec![0.0; n_times];
        let mut zbar = vec![DVector::zeros(p); n_times];
        let mut vmat = vec![DMatrix::zeros(p, p); n_times];
        for k in (0..n_times).rev() {
            while ptr < n_sub && subjects[order[ptr]].1.time() >= times[k] {
                let idx = order[ptr];
                let w = weight[idx];
                let z = subjects[idx].1.covariates();
                s0_acc += w;
                s1_acc.axpy(w, z, 1.0);
                s2_acc.ger(w, z, z, 1.0);
                ptr += 1;
            }
            s0[k] = s0_acc;
            let zb = &s1_acc / s0_acc;
            let mut v = &s2_acc / s0_acc;
            v.ger(-1.0, &zb, &zb, 1.0);
            zbar[k] = zb;
            vmat[k] = v;
        }

        let lambda: Vec<f64> = d.iter().zip(&s0).map(|(dk, s)| dk / s).collect();

        let mut cum_lambda = Vec::with_capacity(n_times);
        let mut cum_lambda_zbar = Vec::with_capacity(n_times);
        let mut cum_lambda_zz = Vec::with_capacity(n_times);
        let mut cum_lambda_vmat = Vec::with_capacity(n_times);
        let mut acc_l = 0.0;
        let mut acc_lz = DVector::zeros(p);
        let mut acc_lzz = DMatrix::zeros(p, p);
        let mut acc_lv = DMatrix::zeros(p, p);
        for k in 0..n_times {
            acc_l += lambda[k];
            acc_lz.axpy(lambda[k], &zbar[k], 1.0);
            acc_lzz.ger(lambda[k], &zbar[k], &zbar[k], 1.0);
            acc_lv += &vmat[k] * lambda[k];
            cum_lambda.push(acc_l);
            cum_lambda_zbar.push(acc_lz.clone());
            cum_lambda_zz.push(acc_lzz.clone());
            cum_lambda_vmat.push(acc_lv.clone());
        }

        let last_idx: Vec<Option<usize>> = subjects
            .iter()
            .map(|(_, s)| {
                let x = s.time();
                let k = times.partition_point(|u| *u <= x);
                if k == 0 {
                    None
                } else {
                    Some(k - 1)
                }
            })
            .collect();

        EventGrid {
            times,
            d,
            s0,
            zbar,
            vmat,
            lambda,
            cum_lambda,
            cum_lambda_zbar,
            cum_lambda_zz,
            cum_lambda_vmat,
            lin_pred,
            weight,
            last_idx,
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Score vector U(beta) = sum over events of (Z - zbar at the event time).
    pub fn score(&self, data: &TrialData) -> DVector<f64> {
        let mut u = DVector::zeros(data.p());
        for (idx, (_, s)) in data.subjects().enumerate() {
            if s.event() {
                let k = self.last_idx[idx].expect("event time is on the grid");
                u += s.covariates() - &self.zbar[k];
            }
        }
        u
    }

    /// Observed information: sum over event times of d_k * vmat_k.
    pub fn information(&self, p: usize) -> DMatrix<f64> {
        let mut info = DMatrix::zeros(p, p);
        for k in 0..self.n_times() {
            info += &self.vmat[k] * self.d[k];
        }
        info
    }

    /// Log partial likelihood (Breslow tie handling).
    pub fn log_partial_likelihood(&self, data: &TrialData) -> f64 {
        let mut lpl = 0.0;
        for (idx, (_, s)) in data.subjects().enumerate() {
            if s.event() {
                let k = self.last_idx[idx].expect("event time is on the grid");
                lpl += self.lin_pred[idx] - self.s0[k].ln();
            }
        }
        lpl
    }
}
