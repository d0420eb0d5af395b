use serde::{Deserialize, Serialize};

use super::Dataset;

/// Gaussian naive Bayes with a variance floor of `1e-9 * max feature variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// log prior of class 0 and class 1
    pub log_prior: [f64; 2],
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

impl GaussianNb {
    pub fn dim(&self) -> usize {
        self.mean[0].len()
    }

    pub fn fit(data: &Dataset) -> GaussianNb {
        let d = data.dim();
        let n = data.len() as f64;
        let col_var = |rows: &[usize]| -> (Vec<f64>, Vec<f64>) {
            let m = rows.len() as f64;
            let mut mean = vec![0.0; d];
            for &r in rows {
                for (a, v) in mean.iter_mut().zip(data.row(r)) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= m);
            let mut var = vec![0.0; d];
            for &r in rows {
                for ((a, v), mu) in var.iter_mut().zip(data.row(r)).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|a| *a /= m);
            (mean, var)
        };
        let all: Vec<usize> = (0..data.len()).collect();
        let (_, total_var) = col_var(&all);
        let floor = 1e-9 * total_var.iter().cloned().fold(0.0, f64::max);
        let floor = if floor > 0.0 { floor } else { 1e-9 };
        let by_class = |c: bool| -> Vec<usize> { all.iter().copied().filter(|&i| data.label(i) == c).collect() };
        let (neg, pos) = (by_class(false), by_class(true));
        let (m0, v0) = col_var(&neg);
        let (m1, v1) = col_var(&pos);
        let lift = |v: Vec<f64>| v.into_iter().map(|x| x + floor).collect::<Vec<_>>();
        GaussianNb {
            log_prior: [(neg.len() as f64 / n).ln(), (pos.len() as f64 / n).ln()],
            mean: [m0, m1],
            var: [lift(v0), lift(v1)],
        }
    }

    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        let mut s = self.log_prior[c];
        for ((v, mu), var) in x.iter().zip(&self.mean[c]).zip(&self.var[c]) {
            s -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - mu) * (v - mu) / var);
        }
        s
    }

    /// Posterior of class 1 via log-sum-exp.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let (a, b) = (self.log_joint(0, x), self.log_joint(1, x));
        let m = a.max(b);
        let p = (b - m).exp() / ((a - m).exp() + (b - m).exp());
        if p.is_finite() {
            p
        } else {
            0.5
        }
    }
}
