use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, sigmoid, softplus, Dataset};

/// L2-regularized logistic regression; the intercept is not penalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl Logistic {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.weights, x)
    }
}

fn objective(data: &Dataset, lambda: f64, w: &[f64], b: f64) -> f64 {
    let n = data.len() as f64;
    let loss: f64 = (0..data.len())
        .map(|i| {
            let z = b + dot(w, data.row(i));
            softplus(z) - if data.label(i) { z } else { 0.0 }
        })
        .sum();
    loss / n + 0.5 * lambda * dot(w, w)
}

fn gradient(data: &Dataset, lambda: f64, w: &[f64], b: f64, gw: &mut [f64]) -> f64 {
    let n = data.len() as f64;
    gw.iter_mut().for_each(|g| *g = 0.0);
    let mut gb = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        let r = sigmoid(b + dot(w, x)) - if data.label(i) { 1.0 } else { 0.0 };
        gb += r;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
    }
    for (g, wj) in gw.iter_mut().zip(w) {
        *g = *g / n + lambda * wj;
    }
    gb / n
}

/// Full-batch gradient descent with Armijo backtracking, starting from zero.
pub fn fit_logistic(data: &Dataset, lambda: f64, max_iter: usize, tol: f64) -> Logistic {
    let d = data.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut f = objective(data, lambda, &w, b);
    let mut step = 1.0f64;
    let mut iterations = 0;
    for _ in 0..max_iter {
        let gb = gradient(data, lambda, &w, b, &mut gw);
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2.sqrt() < tol {
            break;
        }
        iterations += 1;
        step = (step * 2.0).min(1e4);
        loop {
            for ((t, wj), g) in trial.iter_mut().zip(&w).zip(&gw) {
                *t = wj - step * g;
            }
            let tb = b - step * gb;
            let ft = objective(data, lambda, &trial, tb);
            if ft <= f - 1e-4 * step * gnorm2 {
                std::mem::swap(&mut w, &mut trial);
                b = tb;
                f = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Logistic { weights: w, intercept: b, iterations };
            }
        }
    }
    Logistic { weights: w, intercept: b, iterations }
}

/// Linear soft-margin SVM trained by Pegasos-style stochastic subgradient
/// steps over seeded per-epoch permutations. The bias rides along as a
/// constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + dot(&self.weights, x)
    }

    pub fn fit(data: &Dataset, c: f64, epochs: usize, seed: u64) -> LinearSvm {
        let n = data.len();
        let d = data.dim();
        let lambda = 1.0 / (c * n as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // w = scale * v, last slot is the bias coordinate
        let mut v = vec![0.0; d + 1];
        let mut scale = 1.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut t = 0u64;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let x = data.row(i);
                let y = if data.label(i) { 1.0 } else { -1.0 };
                let m = y * scale * (dot(&v[..d], x) + v[d]);
                let eta = 1.0 / (lambda * t as f64);
                let shrink = 1.0 - 1.0 / t as f64;
                if shrink == 0.0 {
                    v.iter_mut().for_each(|e| *e = 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if m < 1.0 {
                    let k = eta * y / scale;
                    for (e, xv) in v[..d].iter_mut().zip(x) {
                        *e += k * xv;
                    }
                    v[d] += k;
                }
                if scale < 1e-100 {
                    v.iter_mut().for_each(|e| *e *= scale);
                    scale = 1.0;
                }
            }
        }
        let weights = v[..d].iter().map(|e| e * scale).collect();
        LinearSvm { weights, bias: v[d] * scale }
    }
}
