//! Pick evaluation: tolerance matching, precision/recall, tolerance sweeps,
//! block cross-validation and k-means over per-station meta weights.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basemodels::mix_seed;
use crate::error::{Error, Result};
use crate::pipeline::{build_training_set, rows_to_dataset, run_stream, Mode, PipelineConfig, RunOptions, TrainingOptions};
use crate::stacking::{train_stack, StackConfig};
use crate::synth::Block;
use crate::waveform::{LabeledArrival, Pick, StationCatalog, Timestamp, TriTrace};

pub const DEFAULT_TOLERANCE_S: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub station_id: String,
    pub pick_time: Timestamp,
    pub label_time: Timestamp,
    /// pick minus label, seconds.
    pub dt_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub tol_s: f64,
    pub n_picks: usize,
    pub n_labels: usize,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_picks: Vec<Pick>,
    pub unmatched_labels: Vec<LabeledArrival>,
}

fn tol_us(tol_s: f64) -> i64 {
    (tol_s * 1e6).round() as i64
}

/// One-to-one matching per station. Candidate pairs with |dt| strictly below
/// the tolerance are taken in ascending |dt| (ties: earlier label, then
/// earlier pick) and accepted when both sides are still free.
pub fn match_picks(picks: &[Pick], labels: &[LabeledArrival], tol_s: f64) -> Matching {
    let tol = tol_us(tol_s);
    let mut by_station: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in picks.iter().enumerate() {
        by_station.entry(&p.station_id).or_default().0.push(i);
    }
    for (i, l) in labels.iter().enumerate() {
        by_station.entry(&l.station_id).or_default().1.push(i);
    }
    let mut pick_used = vec![false; picks.len()];
    let mut label_used = vec![false; labels.len()];
    let mut pairs = Vec::new();
    for (_, (pi, mut li)) in by_station {
        li.sort_by_key(|&j| (labels[j].time, j));
        let mut cand: Vec<(i64, Timestamp, Timestamp, usize, usize)> = Vec::new();
        for &i in &pi {
            let t = picks[i].time;
            let lo = li.partition_point(|&j| labels[j].time.micros() <= t.micros() - tol);
            for &j in &li[lo..] {
                let d = labels[j].time.micros() - t.micros();
                if d >= tol {
                    break;
                }
                cand.push((d.abs(), labels[j].time, t, j, i));
            }
        }
        cand.sort();
        for (_, _, _, j, i) in cand {
            if !pick_used[i] && !label_used[j] {
                pick_used[i] = true;
                label_used[j] = true;
                pairs.push(MatchedPair {
                    station_id: picks[i].station_id.clone(),
                    pick_time: picks[i].time,
                    label_time: labels[j].time,
                    dt_s: picks[i].time.secs_since(labels[j].time),
                });
            }
        }
    }
    pairs.sort_by(|a, b| (&a.station_id, a.label_time).cmp(&(&b.station_id, b.label_time)));
    Matching {
        tol_s,
        n_picks: picks.len(),
        n_labels: labels.len(),
        pairs,
        unmatched_picks: picks.iter().zip(&pick_used).filter(|(_, u)| !**u).map(|(p, _)| p.clone()).collect(),
        unmatched_labels: labels.iter().zip(&label_used).filter(|(_, u)| !**u).map(|(l, _)| l.clone()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl Prf {
    pub fn from_counts(matched: usize, picks: usize, labels: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matched, picks);
        let recall = ratio(matched, labels);
        let f = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f }
    }

    pub fn mean(items: &[Prf]) -> Prf {
        let n = items.len().max(1) as f64;
        Prf {
            precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
            recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
            f: items.iter().map(|p| p.f).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tol_s: f64,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_picks: Vec<Pick>,
    pub unmatched_labels: Vec<LabeledArrival>,
}

impl EvalReport {
    pub fn prf(&self) -> Prf {
        Prf { precision: self.precision, recall: self.recall, f: self.f_score }
    }
}

pub fn prf(m: Matching) -> EvalReport {
    let s = Prf::from_counts(m.pairs.len(), m.n_picks, m.n_labels);
    EvalReport {
        precision: s.precision,
        recall: s.recall,
        f_score: s.f,
        tol_s: m.tol_s,
        pairs: m.pairs,
        unmatched_picks: m.unmatched_picks,
        unmatched_labels: m.unmatched_labels,
    }
}

pub fn evaluate(picks: &[Pick], labels: &[LabeledArrival], tol_s: f64) -> EvalReport {
    prf(match_picks(picks, labels, tol_s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tol: f64,
    pub p: f64,
    pub r: f64,
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("bad grid '{spec}'")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Error::InvalidConfig(format!("grid '{spec}' is not start:stop:step")));
    };
    if !(step > 0.0) || stop < start || start < 0.0 {
        return Err(Error::InvalidConfig(format!("bad grid '{spec}'")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Precision and recall for each tolerance. Larger tolerances only append
/// candidate pairs after all the old ones, so both curves are non-decreasing.
pub fn tolerance_sweep(picks: &[Pick], labels: &[LabeledArrival], grid: &[f64]) -> Vec<SweepPoint> {
    assert!(grid.windows(2).all(|w| w[0] <= w[1]), "tolerance grid must be ascending");
    let out: Vec<SweepPoint> = grid
        .iter()
        .map(|&tol| {
            let r = evaluate(picks, labels, tol);
            SweepPoint { tol, p: r.precision, r: r.recall }
        })
        .collect();
    for w in out.windows(2) {
        assert!(w[1].p >= w[0].p && w[1].r >= w[0].r, "sweep not monotone at tol {}", w[1].tol);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster id per point, renumbered by first appearance.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let n = points.len();
    // k-means++ seeding
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, m) in centroids.iter().enumerate() {
                let d = sq_dist(p, m);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // empty cluster: move it to the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]]).total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                    })
                    .unwrap();
                centroids[c] = points[far].clone();
                labels[far] = c;
            }
        }
    }
    let wcss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    // canonical numbering
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    let mut new_centroids = vec![Vec::new(); k];
    for (old, &new) in remap.iter().enumerate() {
        let slot = if new == usize::MAX {
            next += 1;
            next - 1
        } else {
            new
        };
        new_centroids[slot] = centroids[old].clone();
    }
    KMeans { labels: labels.iter().map(|&l| remap[l]).collect(), centroids: new_centroids, wcss }
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by
/// within-cluster sum of squares (earliest restart wins ties).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeans> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidConfig(format!("k = {k} with {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap() });
    }
    let mut best: Option<KMeans> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64));
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub assignment: BTreeMap<String, usize>,
    pub weights: BTreeMap<String, Vec<f64>>,
    pub wcss: f64,
}

/// Clusters stations by their meta-model weight vectors.
pub fn cluster_station_weights(
    weights: &BTreeMap<String, Vec<f64>>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterReport> {
    let points: Vec<Vec<f64>> = weights.values().cloned().collect();
    let km = kmeans(&points, k, seed, restarts)?;
    Ok(ClusterReport {
        assignment: weights.keys().cloned().zip(km.labels).collect(),
        weights: weights.clone(),
        wcss: km.wcss,
    })
}

fn choose2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ra: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(a.len()).max(1.0);
    let max = (sa + sb) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub block: usize,
    pub train_rows: usize,
    pub report: EvalReport,
}

/// Leave-one-block-out evaluation. For each block: train a stack on
/// candidates whose feature windows lie entirely outside it, run the full
/// pipeline, and score picks and labels that fall inside it.
#[allow(clippy::too_many_arguments)]
pub fn kfold_by_block(
    streams: &[TriTrace],
    labels: &[LabeledArrival],
    catalog: &StationCatalog,
    blocks: &[Block],
    cfg: &PipelineConfig,
    stack: &StackConfig,
    training: &TrainingOptions,
    tol_s: f64,
) -> Result<Vec<FoldReport>> {
    if blocks.len() < 2 {
        return Err(Error::InvalidConfig("need at least two blocks".into()));
    }
    for b in blocks {
        if !labels.iter().any(|l| b.contains(l.time)) {
            return Err(Error::InvalidDataset(format!("block {} has no positive labels", b.index)));
        }
    }
    let (names, rows) = build_training_set(streams, labels, &cfg.trigger, &cfg.feature, training)?;
    let pre = (cfg.feature.pre_s * 1e6).round() as i64;
    let post = (cfg.feature.post_s * 1e6).round() as i64;
    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        let train: Vec<_> = rows
            .iter()
            .filter(|r| r.time.micros() + post < b.start.micros() || r.time.micros() - pre >= b.end.micros())
            .cloned()
            .collect();
        let data = rows_to_dataset(&train)?;
        let bundle = train_stack(&data, names.clone(), cfg.feature.clone(), stack)?;
        let run = run_stream(streams, Some(&bundle), catalog, cfg, RunOptions { mode: Mode::Full, parallel: true, parallel_classifier: false })?;
        let picks: Vec<Pick> = run.picks.into_iter().filter(|p| b.contains(p.time)).collect();
        let held: Vec<LabeledArrival> = labels.iter().filter(|l| b.contains(l.time)).cloned().collect();
        out.push(FoldReport { block: b.index, train_rows: train.len(), report: evaluate(&picks, &held, tol_s) });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub folds: Vec<Prf>,
    pub mean: Prf,
    pub sweep: Vec<SweepPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<ClusterReport>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
