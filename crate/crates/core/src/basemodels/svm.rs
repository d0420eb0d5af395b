use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, Dataset};

/// Rows used to train the kernel machine; larger sets are subsampled
/// deterministically (the Gram matrix is quadratic in this).
pub const POLY_MAX_ROWS: usize = 2000;

/// Degree-3 polynomial kernel SVM, `K(a, b) = (gamma a.b + coef0)^3`,
/// trained by simplified SMO with the max-|Ei - Ej| second choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySvm {
    pub dim: usize,
    pub gamma: f64,
    pub coef0: f64,
    pub degree: i32,
    /// Support vectors, row-major.
    pub support: Vec<f64>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl PolySvm {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.gamma * dot(a, b) + self.coef0).powi(self.degree)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        if self.dim == 0 {
            return self.bias;
        }
        self.bias
            + self
                .support
                .chunks_exact(self.dim)
                .zip(&self.coef)
                .map(|(sv, c)| c * self.kernel(sv, x))
                .sum::<f64>()
    }

    pub fn fit(data: &Dataset, seed: u64) -> PolySvm {
        let c = 1.0f64;
        let tol = 1e-3;
        let d = data.dim();
        let mut rows: Vec<usize> = (0..data.len()).collect();
        if rows.len() > POLY_MAX_ROWS {
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            rows.truncate(POLY_MAX_ROWS);
            rows.sort_unstable();
        }
        let n = rows.len();
        let mut model = PolySvm {
            dim: d,
            gamma: 1.0 / d as f64,
            coef0: 1.0,
            degree: 3,
            support: Vec::new(),
            coef: Vec::new(),
            bias: 0.0,
        };
        let y: Vec<f64> = rows.iter().map(|&r| if data.label(r) { 1.0 } else { -1.0 }).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let k = model.kernel(data.row(rows[i]), data.row(rows[j]));
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let mut st = Smo { n, c, gram, y, alpha: vec![0.0; n], b: 0.0, err: Vec::new() };
        // error cache: f(x_k) - y_k
        st.err = st.y.iter().map(|v| -v).collect();
        let cap = 10 * n;
        let mut attempts = 0;
        'outer: loop {
            let mut changed = 0;
            for i in 0..n {
                if attempts >= cap {
                    break 'outer;
                }
                attempts += 1;
                let r = st.err[i] * st.y[i];
                if !((r < -tol && st.alpha[i] < c) || (r > tol && st.alpha[i] > 0.0)) {
                    continue;
                }
                let ei = st.err[i];
                let mut j = usize::MAX;
                let mut gap = -1.0;
                for (k, ek) in st.err.iter().enumerate() {
                    if k != i && (ei - ek).abs() > gap {
                        gap = (ei - ek).abs();
                        j = k;
                    }
                }
                // fall back to a sweep over the other rows when the best
                // partner cannot move
                if j != usize::MAX && st.step(i, j) || (1..n).map(|o| (i + o) % n).any(|k| k != j && st.step(i, k)) {
                    changed += 1;
                }
            }
            if changed == 0 {
                break;
            }
        }
        let (alpha, y, b) = (st.alpha, st.y, st.b);
        for (k, &a) in alpha.iter().enumerate() {
            if a > 0.0 {
                model.support.extend_from_slice(data.row(rows[k]));
                model.coef.push(a * y[k]);
            }
        }
        model.bias = b;
        model
    }
}

struct Smo {
    n: usize,
    c: f64,
    gram: Vec<f64>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    b: f64,
    err: Vec<f64>,
}

impl Smo {
    fn k(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n + j]
    }

    /// Joint update of `(alpha_i, alpha_j)`; false when the pair cannot move.
    fn step(&mut self, i: usize, j: usize) -> bool {
        let (c, y) = (self.c, &self.y);
        let (ei, ej) = (self.err[i], self.err[j]);
        let (ai, aj) = (self.alpha[i], self.alpha[j]);
        let (lo, hi) = if y[i] != y[j] {
            ((aj - ai).max(0.0), (c + aj - ai).min(c))
        } else {
            ((ai + aj - c).max(0.0), (ai + aj).min(c))
        };
        if lo >= hi {
            return false;
        }
        let eta = 2.0 * self.k(i, j) - self.k(i, i) - self.k(j, j);
        if eta >= 0.0 {
            return false;
        }
        let aj_new = (aj - y[j] * (ei - ej) / eta).clamp(lo, hi);
        if (aj_new - aj).abs() < 1e-8 {
            return false;
        }
        let ai_new = ai + y[i] * y[j] * (aj - aj_new);
        let (di, dj) = (ai_new - ai, aj_new - aj);
        let b1 = self.b - ei - y[i] * di * self.k(i, i) - y[j] * dj * self.k(i, j);
        let b2 = self.b - ej - y[i] * di * self.k(i, j) - y[j] * dj * self.k(j, j);
        let b_new = if ai_new > 0.0 && ai_new < c {
            b1
        } else if aj_new > 0.0 && aj_new < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;
        let n = self.n;
        let (yi, yj) = (y[i], y[j]);
        for (k, e) in self.err.iter_mut().enumerate() {
            *e += yi * di * self.gram[i * n + k] + yj * dj * self.gram[j * n + k] + db;
        }
        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.b = b_new;
        true
    }
}
