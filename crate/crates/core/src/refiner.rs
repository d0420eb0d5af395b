//! Arrival refinement by a two-segment AIC and multi-station plausibility.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{sort_picks, EventTag, Pick, Stage, StationCatalog, TriTrace};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub aic_half_window_s: f64,
    pub vp_km_s: f64,
    pub min_stations: usize,
    pub guard_s: f64,
    /// AIC spread below which the original time is kept.
    pub low_contrast_range: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig { aic_half_window_s: 1.0, vp_km_s: 5.5, min_stations: 2, guard_s: 0.05, low_contrast_range: 1.0 }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.aic_half_window_s > 0.0 && self.vp_km_s > 0.0 && self.guard_s > 0.0 && self.low_contrast_range >= 0.0) {
            return Err(Error::InvalidConfig("refiner windows and vp must be positive".into()));
        }
        if self.min_stations < 2 {
            return Err(Error::InvalidConfig(format!("min_stations must be >= 2, got {}", self.min_stations)));
        }
        Ok(())
    }
}

pub const AIC_MIN_LEN: usize = 20;

/// `AIC(k) = k ln(var(x[..k]) + eps) + (N - k) ln(var(x[k..]) + eps)` for
/// `guard <= k <= N - guard`, `+inf` elsewhere.
pub fn aic_curve(x: &[f64], guard: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < AIC_MIN_LEN {
        return Err(Error::TooShort { len: n, min: AIC_MIN_LEN });
    }
    let guard = guard.max(1);
    if 2 * guard > n {
        return Err(Error::TooShort { len: n, min: 2 * guard });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        let c = v - mean;
        s1[i + 1] = s1[i] + c;
        s2[i + 1] = s2[i] + c * c;
    }
    let var = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let mu = (s1[b] - s1[a]) / m;
        ((s2[b] - s2[a]) / m - mu * mu).max(0.0)
    };
    Ok((0..n)
        .map(|k| {
            if k < guard || k > n - guard {
                f64::INFINITY
            } else {
                // rearranged so equal segment variances give bitwise-equal values
                let (a, b) = ((var(0, k) + EPS).ln(), (var(k, n) + EPS).ln());
                n as f64 * b + k as f64 * (a - b)
            }
        })
        .collect())
}

/// Earliest index of the smallest value.
pub fn argmin(curve: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in curve.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineOutcome {
    Moved,
    /// AIC too flat; original time kept.
    LowContrast,
    /// Not enough data around the pick; original time kept.
    Uncovered,
}

/// Move `pick` to the AIC minimum of the vertical channel within
/// `±aic_half_window_s`. Kept-time outcomes are marked `low_contrast`.
pub fn refine_pick(stream: &TriTrace, pick: &Pick, cfg: &RefinerConfig) -> (Pick, RefineOutcome) {
    let mut out = pick.clone();
    out.stage = out.stage.max(Stage::Refined);
    let rate = stream.sample_rate_hz();
    let half = (cfg.aic_half_window_s * rate).round() as i64;
    let guard = (cfg.guard_s * rate).round() as usize;
    let center = stream.nearest_index(pick.time);
    let (from, to) = (center - half, center + half + 1);
    if from < 0 || to as usize > stream.len() {
        out.low_contrast = true;
        return (out, RefineOutcome::Uncovered);
    }
    let x = &stream.z().samples()[from as usize..to as usize];
    let Ok(curve) = aic_curve(x, guard) else {
        out.low_contrast = true;
        return (out, RefineOutcome::Uncovered);
    };
    let finite = curve.iter().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    match argmin(&curve) {
        Some(k) if hi - lo >= cfg.low_contrast_range => {
            out.time = stream.time_of(from as usize + k);
            out.low_contrast = false;
            (out, RefineOutcome::Moved)
        }
        _ => {
            out.low_contrast = true;
            (out, RefineOutcome::LowContrast)
        }
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Whether picks on stations `a` and `b` `dt_s` apart may share an event.
pub fn compatible(catalog: &StationCatalog, a: &str, b: &str, dt_s: f64, vp_km_s: f64) -> Result<bool> {
    if a == b {
        return Ok(false);
    }
    let d = catalog.get(a)?.distance_km(catalog.get(b)?);
    Ok(dt_s.abs() <= d / vp_km_s)
}

/// Group picks into events: connected components of the graph linking picks
/// on different stations no further apart in time than distance / vp.
/// Returns the picks in canonical order with `event` set; ids count up in
/// order of each component's earliest pick.
pub fn associate(picks: &[Pick], catalog: &StationCatalog, cfg: &RefinerConfig) -> Result<Vec<Pick>> {
    let mut out = picks.to_vec();
    sort_picks(&mut out);
    for p in &out {
        catalog.get(&p.station_id)?;
    }
    let max_dt = catalog.max_distance_km() / cfg.vp_km_s;
    let mut dsu = Dsu((0..out.len()).collect());
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let dt = out[j].time.secs_since(out[i].time);
            if dt > max_dt {
                break;
            }
            if compatible(catalog, &out[i].station_id, &out[j].station_id, dt, cfg.vp_km_s)? {
                dsu.union(i, j);
            }
        }
    }
    let mut stations: HashMap<usize, BTreeSet<&str>> = HashMap::new();
    for (i, p) in out.iter().enumerate() {
        stations.entry(dsu.find(i)).or_default().insert(&p.station_id);
    }
    let counts: HashMap<usize, usize> = stations.into_iter().map(|(r, s)| (r, s.len())).collect();
    // roots are the smallest member index, i.e. the earliest pick
    let mut ids: HashMap<usize, u64> = HashMap::new();
    let tags: Vec<EventTag> = (0..out.len())
        .map(|i| {
            let r = dsu.find(i);
            let next = ids.len() as u64;
            let id = *ids.entry(r).or_insert(next);
            EventTag { event_id: id, n_stations: counts[&r] }
        })
        .collect();
    for (p, t) in out.iter_mut().zip(tags) {
        p.event = Some(t);
    }
    Ok(out)
}

/// Keep picks whose event spans at least `min_stations` distinct stations.
pub fn prune_singletons(picks: &[Pick], cfg: &RefinerConfig) -> Vec<Pick> {
    picks.iter().filter(|p| p.event.is_some_and(|e| e.n_stations >= cfg.min_stations)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{Station, Timestamp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_regime(seed: u64, n: usize, k0: usize, ratio: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| rng.sample::<f64, _>(StandardNormal) * if i < k0 { 1.0 } else { ratio.sqrt() }).collect()
    }

    #[test]
    fn aic_finds_variance_change() {
        let mut hits = 0;
        for seed in 0..100 {
            let k0 = 150 + (seed as usize * 7) % 100;
            let c = aic_curve(&two_regime(seed, 400, k0, 100.0), 5).unwrap();
            let k = argmin(&c).unwrap();
            hits += usize::from(k.abs_diff(k0) <= 5);
        }
        assert!(hits >= 95, "{hits}");
    }

    #[test]
    fn aic_guard_and_constant() {
        let c = aic_curve(&[3.0; 50], 5).unwrap();
        assert!(c[..5].iter().chain(&c[46..]).all(|v| v.is_infinite()));
        assert!(c[5..=45].iter().all(|&v| v == c[5]));
        assert_eq!(argmin(&c), Some(5));
        assert!(aic_curve(&[1.0; 19], 1).is_err());
        let noise = aic_curve(&two_regime(3, 200, 0, 1.0), 5).unwrap();
        assert!(noise[5..=195].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn aic_matches_direct_evaluation() {
        let x = two_regime(9, 120, 60, 10.0);
        let c = aic_curve(&x, 3).unwrap();
        let var = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s.len() as f64
        };
        for k in 3..=117 {
            let direct = k as f64 * (var(&x[..k]) + EPS).ln() + (120 - k) as f64 * (var(&x[k..]) + EPS).ln();
            assert!((c[k] - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    fn catalog() -> StationCatalog {
        // 0.5 degrees of latitude is about 55.6 km
        StationCatalog::new([
            Station::new("A", 30.0, 103.0).unwrap(),
            Station::new("B", 30.5, 103.0).unwrap(),
            Station::new("C", 31.0, 103.0).unwrap(),
        ])
        .unwrap()
    }

    fn pick(st: &str, t: f64) -> Pick {
        Pick::new(st, Timestamp::from_secs_f64(t), 0.9, Stage::Refined)
    }

    #[test]
    fn association_edges() {
        let cfg = RefinerConfig::default();
        let cat = catalog();
        assert!(compatible(&cat, "A", "B", 5.0, cfg.vp_km_s).unwrap());
        assert!(!compatible(&cat, "A", "B", 15.0, cfg.vp_km_s).unwrap());
        assert!(!compatible(&cat, "A", "A", 0.0, cfg.vp_km_s).unwrap());
        let out = associate(&[pick("A", 100.0), pick("B", 105.0), pick("A", 300.0)], &cat, &cfg).unwrap();
        assert_eq!(out[0].event, Some(EventTag { event_id: 0, n_stations: 2 }));
        assert_eq!(out[1].event, out[0].event);
        assert_eq!(out[2].event, Some(EventTag { event_id: 1, n_stations: 1 }));
        assert!(associate(&[pick("Z", 1.0)], &cat, &cfg).is_err());
    }

    #[test]
    fn association_is_order_independent() {
        let cfg = RefinerConfig::default();
        let cat = catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let picks: Vec<Pick> = (0..60)
            .map(|_| pick(["A", "B", "C"][rng.random_range(0..3)], rng.random_range(0.0..300.0)))
            .collect();
        let a = associate(&picks, &cat, &cfg).unwrap();
        let mut shuffled = picks.clone();
        shuffled.reverse();
        assert_eq!(a, associate(&shuffled, &cat, &cfg).unwrap());
    }

    #[test]
    fn pruning() {
        let cfg = RefinerConfig::default();
        let cat = catalog();
        let picks = vec![pick("A", 10.0), pick("A", 10.5), pick("A", 100.0), pick("B", 104.0), pick("C", 108.0)];
        let grouped = associate(&picks, &cat, &cfg).unwrap();
        let kept = prune_singletons(&grouped, &cfg);
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|p| p.time.as_secs_f64() >= 100.0));
        assert_eq!(prune_singletons(&kept, &cfg), kept);
    }

    fn onset_trace(seed: u64, onset_s: f64) -> TriTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1000;
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                let s = if t >= onset_s { 8.0 * (2.0 * std::f64::consts::PI * 6.0 * (t - onset_s)).sin() } else { 0.0 };
                s + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        TriTrace::from_channels("A", 100.0, Timestamp(0), vec![0.0; n], vec![0.0; n], z).unwrap()
    }

    #[test]
    fn refine_moves_to_onset() {
        let cfg = RefinerConfig::default();
        for seed in 0..10 {
            let tr = onset_trace(seed, 5.0);
            for cand in [4.7, 5.0, 5.4] {
                let (p, how) = refine_pick(&tr, &pick("A", cand), &cfg);
                assert_eq!(how, RefineOutcome::Moved);
                assert!((p.time.as_secs_f64() - 5.0).abs() <= 0.05, "{cand}: {}", p.time);
                assert_eq!(p.stage, Stage::Refined);
                assert_eq!(p.confidence, 0.9);
            }
        }
    }

    #[test]
    fn refine_edges_and_noise() {
        let cfg = RefinerConfig::default();
        let tr = onset_trace(1, 50.0);
        let (p, how) = refine_pick(&tr, &pick("A", 0.5), &cfg);
        assert_eq!(how, RefineOutcome::Uncovered);
        assert!(p.low_contrast);
        assert_eq!(p.time, Timestamp::from_secs_f64(0.5));
        let (p, _) = refine_pick(&tr, &pick("A", 5.0), &cfg);
        assert!((p.time.as_secs_f64() - 5.0).abs() <= 1.0);
        let flat = TriTrace::from_channels("A", 100.0, Timestamp(0), vec![0.0; 500], vec![0.0; 500], vec![1.0; 500]).unwrap();
        let (p, how) = refine_pick(&flat, &pick("A", 2.5), &cfg);
        assert_eq!(how, RefineOutcome::LowContrast);
        assert_eq!(p.time, Timestamp::from_secs_f64(2.5));
    }
}
