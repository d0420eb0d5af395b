use serde::{Deserialize, Serialize};

use super::Dataset;

/// k-nearest neighbours by Euclidean distance; ties go to the lower training
/// index. Score is `(positive votes + 0.5) / (k + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<bool>,
}

impl Knn {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit(data: &Dataset, k: usize) -> Knn {
        let mut x = Vec::with_capacity(data.len() * data.dim());
        for i in 0..data.len() {
            x.extend_from_slice(data.row(i));
        }
        Knn { k: k.max(1), dim: data.dim(), x, y: data.labels().to_vec() }
    }

    /// Indices of the k nearest rows, nearest first.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        let k = self.k.min(self.y.len());
        // (distance², index) sorted ascending; at most k entries
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.x.chunks_exact(self.dim).enumerate() {
            let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
            let mut s = 0.0;
            let mut pruned = false;
            for (a, b) in row.chunks(16).zip(q.chunks(16)) {
                s += a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                // adding non-negative terms never decreases s
                if s > bound {
                    pruned = true;
                    break;
                }
            }
            if pruned || (best.len() == k && s >= bound) {
                continue;
            }
            let at = best.partition_point(|&(d, _)| d <= s);
            best.insert(at, (s, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, q: &[f64]) -> f64 {
        let nb = self.neighbors(q);
        let votes = nb.iter().filter(|&&i| self.y[i]).count() as f64;
        (votes + 0.5) / (nb.len() as f64 + 1.0)
    }
}
