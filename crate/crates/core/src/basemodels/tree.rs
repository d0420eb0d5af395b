use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    /// Impurity of a node with positive fraction `p`.
    fn impurity(self, p: f64) -> f64 {
        match self {
            Criterion::Gini => 2.0 * p * (1.0 - p),
            Criterion::Entropy => {
                let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
                h(p) + h(1.0 - p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` means all of them.
    pub max_features: Option<usize>,
}

impl TreeParams {
    pub fn cart(criterion: Criterion) -> Self {
        TreeParams { criterion, max_depth: 12, min_leaf: 5, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { p: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

/// CART tree; rows with `x[feature] <= threshold` go left, leaves hold the
/// weighted fraction of positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub dim: usize,
    pub nodes: Vec<Node>,
}

/// Column-major copy of a dataset's features.
pub struct Columns {
    n: usize,
    values: Vec<f64>,
}

impl Columns {
    pub fn new(data: &Dataset) -> Self {
        let n = data.len();
        let mut values = vec![0.0; n * data.dim()];
        for r in 0..n {
            for (f, v) in data.row(r).iter().enumerate() {
                values[f * n + r] = *v;
            }
        }
        Columns { n, values }
    }

    #[inline]
    fn get(&self, r: usize, f: usize) -> f64 {
        self.values[f * self.n + r]
    }
}

struct Builder<'a> {
    data: &'a Dataset,
    cols: &'a Columns,
    weights: &'a [f64],
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    buf: Vec<(f64, f64, f64)>,
}

impl<'a> Builder<'a> {
    fn new(data: &'a Dataset, cols: &'a Columns, weights: &'a [f64], params: &'a TreeParams, seed: u64) -> Self {
        Builder {
            data,
            cols,
            weights,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            buf: Vec::with_capacity(data.len()),
        }
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let (w, wp) = rows.iter().fold((0.0, 0.0), |(a, b), &r| {
            let wr = self.weights[r];
            (a + wr, b + if self.data.label(r) { wr } else { 0.0 })
        });
        let p = if w > 0.0 { wp / w } else { 0.5 };
        self.nodes.push(Node::Leaf { p });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || wp <= 0.0 || wp >= w {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, w, wp) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.cols.get(i, feature) <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id as usize] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Same recursion on per-feature row lists that are already sorted by
    /// that feature; used when every split looks at every feature.
    fn build_sorted(&mut self, lists: &[Vec<u32>], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let rows = &lists[0];
        let (w, wp) = rows.iter().fold((0.0, 0.0), |(a, b), &r| {
            let wr = self.weights[r as usize];
            (a + wr, b + if self.data.label(r as usize) { wr } else { 0.0 })
        });
        let p = if w > 0.0 { wp / w } else { 0.5 };
        self.nodes.push(Node::Leaf { p });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || wp <= 0.0 || wp >= w {
            return id;
        }
        let mut best = None;
        for (f, list) in lists.iter().enumerate() {
            let mut buf = std::mem::take(&mut self.buf);
            buf.clear();
            buf.extend(list.iter().map(|&r| self.item(r as usize, f)));
            self.buf = buf;
            best = self.sweep(f, w, wp, best);
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let cols = self.cols;
        // children at the depth limit only need their row set
        let keep = if depth + 1 >= self.params.max_depth { 1 } else { lists.len() };
        let (l, r): (Vec<Vec<u32>>, Vec<Vec<u32>>) = lists[..keep]
            .iter()
            .map(|list| list.iter().partition(|&&i| cols.get(i as usize, feature) <= threshold))
            .unzip();
        let left = self.build_sorted(&l, depth + 1);
        drop(l);
        let right = self.build_sorted(&r, depth + 1);
        self.nodes[id as usize] = Node::Split { feature, threshold, left, right };
        id
    }

    fn item(&self, r: usize, f: usize) -> (f64, f64, f64) {
        let wr = self.weights[r];
        (self.cols.get(r, f), wr, if self.data.label(r) { wr } else { 0.0 })
    }

    fn best_split(&mut self, rows: &[usize], w: f64, wp: f64) -> Option<(usize, f64)> {
        let d = self.data.dim();
        let k = self.params.max_features.unwrap_or(d).clamp(1, d);
        let mut features = index::sample(&mut self.rng, d, k).into_vec();
        features.sort_unstable();
        let mut best = None;
        for f in features {
            let mut buf = std::mem::take(&mut self.buf);
            buf.clear();
            buf.extend(rows.iter().map(|&r| self.item(r, f)));
            buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            self.buf = buf;
            best = self.sweep(f, w, wp, best);
        }
        best.map(|(_, f, t)| (f, t))
    }

    /// Scan the sorted `buf` of feature `f`; keeps `best` unless strictly
    /// beaten, so earlier features and lower thresholds win ties.
    fn sweep(&self, f: usize, w: f64, wp: f64, mut best: Option<(f64, usize, f64)>) -> Option<(f64, usize, f64)> {
        let crit = self.params.criterion;
        let score = |cw: f64, cp: f64| if cw > 0.0 { cw * crit.impurity((cp / cw).clamp(0.0, 1.0)) } else { 0.0 };
        let min_leaf = self.params.min_leaf.max(1);
        let buf = &self.buf;
        let m = buf.len();
        if m < 2 || buf[0].0 == buf[m - 1].0 {
            return best;
        }
        let (mut lw, mut lp) = (0.0, 0.0);
        for i in 0..m - 1 {
            lw += buf[i].1;
            lp += buf[i].2;
            if i + 1 < min_leaf {
                continue;
            }
            if m - (i + 1) < min_leaf {
                break;
            }
            let (a, b) = (buf[i].0, buf[i + 1].0);
            if a >= b {
                continue;
            }
            let s = score(lw, lp) + score(w - lw, wp - lp);
            if best.is_none_or(|(bs, _, _)| s < bs) {
                let mid = 0.5 * (a + b);
                best = Some((s, f, if mid < b { mid } else { a }));
            }
        }
        best
    }
}

/// Row indices `0..n` sorted by each feature (stable, so ties keep index order).
pub fn presort(cols: &Columns) -> Vec<Vec<u32>> {
    (0..cols.values.len() / cols.n.max(1))
        .map(|f| {
            let mut idx: Vec<u32> = (0..cols.n as u32).collect();
            idx.sort_by(|&a, &b| cols.get(a as usize, f).total_cmp(&cols.get(b as usize, f)));
            idx
        })
        .collect()
}

impl Tree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit(data: &Dataset, params: &TreeParams) -> Tree {
        let weights = vec![1.0; data.len()];
        Tree::fit_weighted(data, &weights, (0..data.len()).collect(), params, 0)
    }

    /// Every feature considered at every split, from lists made by [`presort`]
    /// over all rows of `data`.
    pub fn fit_presorted(data: &Dataset, cols: &Columns, weights: &[f64], sorted: &[Vec<u32>], params: &TreeParams) -> Tree {
        let mut b = Builder::new(data, cols, weights, params, 0);
        b.build_sorted(sorted, 0);
        Tree { dim: data.dim(), nodes: b.nodes }
    }

    /// `rows` may repeat indices (bootstrap); `weights` is indexed by row.
    pub fn fit_weighted(data: &Dataset, weights: &[f64], rows: Vec<usize>, params: &TreeParams, seed: u64) -> Tree {
        Tree::grow(data, &Columns::new(data), weights, rows, params, seed)
    }

    fn grow(data: &Dataset, cols: &Columns, weights: &[f64], rows: Vec<usize>, params: &TreeParams, seed: u64) -> Tree {
        if params.max_features.is_none_or(|k| k >= data.dim()) {
            let sorted: Vec<Vec<u32>> = (0..data.dim())
                .map(|f| {
                    let mut list: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
                    list.sort_by(|&a, &b| cols.get(a as usize, f).total_cmp(&cols.get(b as usize, f)));
                    list
                })
                .collect();
            return Tree::fit_presorted(data, cols, weights, &sorted, params);
        }
        let mut b = Builder::new(data, cols, weights, params, seed);
        b.build(rows, 0);
        Tree { dim: data.dim(), nodes: b.nodes }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p } => return *p,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub tree: TreeParams,
    pub bootstrap: bool,
}

impl ForestParams {
    /// 100 Gini trees of depth 12 on bootstrap rows, sqrt(d) features per split.
    pub fn default_for(dim: usize) -> Self {
        let k = ((dim as f64).sqrt().round() as usize).max(1);
        ForestParams {
            trees: 100,
            tree: TreeParams { max_features: Some(k), ..TreeParams::cart(Criterion::Gini) },
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub dim: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit(data: &Dataset, params: &ForestParams, seed: u64) -> Forest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..params.trees).map(|_| rng.next_u64()).collect();
        let weights = vec![1.0; data.len()];
        let n = data.len();
        let cols = Columns::new(data);
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let mut trng = ChaCha8Rng::seed_from_u64(s);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| trng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                Tree::grow(data, &cols, &weights, rows, &params.tree, trng.next_u64())
            })
            .collect();
        Forest { dim: data.dim(), trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

const ADA_CLIP: f64 = 1e-6;

/// Real AdaBoost (SAMME.R, two classes) over weighted depth-1 stumps. The
/// margin is `sum ln(p / (1 - p))` of the stump leaf probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    pub dim: usize,
    pub stumps: Vec<Tree>,
}

fn half_logit(p: f64) -> f64 {
    let p = p.clamp(ADA_CLIP, 1.0 - ADA_CLIP);
    0.5 * (p / (1.0 - p)).ln()
}

impl AdaBoost {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit(data: &Dataset, rounds: usize) -> AdaBoost {
        let n = data.len();
        let mut w = vec![1.0 / n as f64; n];
        let params = TreeParams { criterion: Criterion::Gini, max_depth: 1, min_leaf: 1, max_features: None };
        let cols = Columns::new(data);
        let sorted = presort(&cols);
        let mut stumps = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let stump = Tree::fit_presorted(data, &cols, &w, &sorted, &params);
            let mut total = 0.0;
            for (i, wi) in w.iter_mut().enumerate() {
                let h = half_logit(stump.predict(data.row(i)));
                let y = if data.label(i) { 1.0 } else { -1.0 };
                *wi *= (-y * h).exp();
                total += *wi;
            }
            stumps.push(stump);
            if !(total > 0.0 && total.is_finite()) {
                break;
            }
            w.iter_mut().for_each(|v| *v /= total);
        }
        AdaBoost { dim: data.dim(), stumps }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| 2.0 * half_logit(s.predict(x))).sum()
    }
}
