//! Multi-band characteristic-function trigger (first, cheap stage).
//!
//! For each band the vertical channel is bandpassed and squared. The short
//! term average of that energy is standardized by the long-term (exponentially
//! decaying) mean and standard deviation of the instantaneous energy, using
//! only past samples. The characteristic function is the maximum over bands.
//!
//! A sample `t` triggers when `CF(t) > s1`, the mean of CF over the following
//! `t_up_s` exceeds `s2`, and no trigger fired within the preceding
//! `refractory_s`. The decision for `t` is final once `t + t_up_s` is seen.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dsp::{BandpassSpec, SosDesign, SosFilter};
use crate::error::{Error, Result};
use crate::waveform::{sample_period_us, Pick, Stage, Timestamp, Trace};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub bands: Vec<BandpassSpec>,
    pub s1: f64,
    pub s2: f64,
    pub t_up_s: f64,
    pub lta_decay_s: f64,
    pub refractory_s: f64,
    /// Time constant of the short-term energy average.
    pub sta_s: f64,
    /// CF is held at zero until this much signal has been seen.
    pub warmup_s: f64,
    /// Energy enters the long-term statistics only after this delay, so an
    /// onset cannot inflate its own reference before it is detected.
    pub lta_gap_s: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            bands: vec![
                BandpassSpec::new(2.5, 5.0),
                BandpassSpec::new(5.0, 10.0),
                BandpassSpec::new(10.0, 20.0),
            ],
            s1: 6.0,
            s2: 2.0,
            t_up_s: 0.3,
            lta_decay_s: 10.0,
            refractory_s: 1.0,
            sta_s: 0.1,
            warmup_s: 5.0,
            lta_gap_s: 1.0,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if !(self.s1 > self.s2 && self.s2 > 0.0) {
            return Err(Error::InvalidConfig(format!("need s1 > s2 > 0, got {} and {}", self.s1, self.s2)));
        }
        if !(self.t_up_s > 0.0) || !(self.lta_decay_s > 0.0) || !(self.sta_s > 0.0) {
            return Err(Error::InvalidConfig("t_up_s, lta_decay_s and sta_s must be positive".into()));
        }
        if !(self.refractory_s >= 0.0) || !(self.warmup_s >= 0.0) || !(self.lta_gap_s >= 0.0) {
            return Err(Error::InvalidConfig("refractory_s, warmup_s and lta_gap_s must be non-negative".into()));
        }
        if self.bands.is_empty() {
            return Err(Error::InvalidConfig("trigger needs at least one band".into()));
        }
        for b in &self.bands {
            b.validate(rate_hz)?;
        }
        Ok(())
    }
}

struct BandState {
    filter: SosFilter,
    sta: f64,
    sum_e: f64,
    sum_e2: f64,
    weight: f64,
    delayed: VecDeque<f64>,
}

/// Sample-by-sample characteristic function.
pub struct CfState {
    bands: Vec<BandState>,
    alpha_sta: f64,
    alpha_lta: f64,
    warmup: u64,
    seen: u64,
    gap: usize,
}

impl CfState {
    pub fn new(cfg: &TriggerConfig, rate_hz: f64) -> Result<Self> {
        cfg.validate(rate_hz)?;
        let gap = (cfg.lta_gap_s * rate_hz).round() as usize;
        let bands = cfg
            .bands
            .iter()
            .map(|b| {
                Ok(BandState {
                    filter: SosDesign::bandpass(b, rate_hz)?.filter(),
                    sta: 0.0,
                    sum_e: 0.0,
                    sum_e2: 0.0,
                    weight: 0.0,
                    delayed: VecDeque::with_capacity(gap + 1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dt = 1.0 / rate_hz;
        Ok(CfState {
            bands,
            alpha_sta: 1.0 - (-dt / cfg.sta_s).exp(),
            alpha_lta: 1.0 - (-dt / cfg.lta_decay_s).exp(),
            warmup: (cfg.warmup_s * rate_hz).round() as u64,
            seen: 0,
            gap,
        })
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let mut cf = f64::NEG_INFINITY;
        for b in &mut self.bands {
            let y = b.filter.step(x);
            let e = y * y;
            b.sta += self.alpha_sta * (e - b.sta);
            let value = if b.weight > 0.0 {
                let mean = b.sum_e / b.weight;
                let var = (b.sum_e2 / b.weight - mean * mean).max(0.0);
                (b.sta - mean) / (var.sqrt() + EPS)
            } else {
                0.0
            };
            cf = cf.max(value);
            b.delayed.push_back(e);
            if b.delayed.len() <= self.gap {
                continue;
            }
            let e = b.delayed.pop_front().unwrap_or(0.0);
            let keep = 1.0 - self.alpha_lta;
            b.sum_e = keep * b.sum_e + self.alpha_lta * e;
            b.sum_e2 = keep * b.sum_e2 + self.alpha_lta * e * e;
            b.weight = keep * b.weight + self.alpha_lta;
        }
        self.seen += 1;
        if self.seen <= self.warmup {
            0.0
        } else {
            cf
        }
    }
}

/// Whole-trace characteristic function.
pub fn characteristic_function(z: &Trace, cfg: &TriggerConfig) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::TooShort { len: z.len(), min: 2 });
    }
    let mut st = CfState::new(cfg, z.sample_rate_hz())?;
    Ok(z.samples().iter().map(|&x| st.step(x)).collect())
}

/// Streaming trigger for one station.
pub struct TriggerDetector {
    station_id: String,
    start: Timestamp,
    period_us: i64,
    cf: CfState,
    s1: f64,
    s2: f64,
    up: usize,
    refractory: u64,
    /// CF values from absolute index `pending_from` onwards.
    pending: VecDeque<f64>,
    pending_from: u64,
    last_trigger: Option<u64>,
}

impl TriggerDetector {
    pub fn new(station_id: &str, rate_hz: f64, start: Timestamp, cfg: &TriggerConfig) -> Result<Self> {
        let period_us = sample_period_us(rate_hz)?;
        Ok(TriggerDetector {
            station_id: station_id.to_string(),
            start,
            period_us,
            cf: CfState::new(cfg, rate_hz)?,
            s1: cfg.s1,
            s2: cfg.s2,
            up: ((cfg.t_up_s * rate_hz).round() as usize).max(1),
            refractory: (cfg.refractory_s * rate_hz).round() as u64,
            pending: VecDeque::new(),
            pending_from: 0,
            last_trigger: None,
        })
    }

    /// Lookahead in samples needed before a decision is final.
    pub fn lookahead(&self) -> usize {
        self.up
    }

    /// Feed the next contiguous samples; returns triggers whose decision became final.
    pub fn push(&mut self, samples: &[f64]) -> Vec<Pick> {
        let mut out = Vec::new();
        for &x in samples {
            let v = self.cf.step(x);
            self.pending.push_back(v);
            while self.pending.len() > self.up {
                let idx = self.pending_from;
                let head = self.pending[0];
                if head > self.s1 && self.last_trigger.is_none_or(|l| idx - l >= self.refractory) {
                    let mean = self.pending.iter().skip(1).take(self.up).sum::<f64>() / self.up as f64;
                    if mean > self.s2 {
                        self.last_trigger = Some(idx);
                        out.push(Pick::new(
                            self.station_id.clone(),
                            self.start + idx as i64 * self.period_us,
                            0.0,
                            Stage::Triggered,
                        ));
                    }
                }
                self.pending.pop_front();
                self.pending_from += 1;
            }
        }
        out
    }
}

/// One-shot trigger over a whole vertical trace.
pub fn detect_triggers(z: &Trace, cfg: &TriggerConfig) -> Result<Vec<Pick>> {
    if z.len() < 2 {
        return Err(Error::TooShort { len: z.len(), min: 2 });
    }
    let mut det = TriggerDetector::new(z.station_id(), z.sample_rate_hz(), z.start_time(), cfg)?;
    Ok(det.push(z.samples()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::Channel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn trace(samples: Vec<f64>) -> Trace {
        Trace::new("ST01", Channel::Z, 100.0, Timestamp(0), samples).unwrap()
    }

    /// Ricker wavelet that starts (to 1e-3 of its peak) at `onset` seconds,
    /// followed by a decaying 1.5 s coda.
    fn add_onset(x: &mut [f64], onset: f64, fc: f64, amp: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = onset + 1.0 / fc;
        let pi2 = std::f64::consts::PI.powi(2);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / 100.0;
            let tau = t - center;
            let a = pi2 * fc * fc * tau * tau;
            *v += amp * (1.0 - 2.0 * a) * (-a).exp();
            if t > center {
                let g: f64 = rng.sample(StandardNormal);
                *v += 0.5 * amp * g * (-(t - center) / 1.5).exp();
            }
        }
    }

    #[test]
    fn zero_signal() {
        let t = trace(vec![0.0; 3000]);
        assert!(characteristic_function(&t, &TriggerConfig::default()).unwrap().iter().all(|&v| v == 0.0));
        assert!(detect_triggers(&t, &TriggerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            characteristic_function(&trace(vec![1.0]), &TriggerConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn invalid_thresholds() {
        let cfg = TriggerConfig { s1: 1.0, s2: 2.0, ..Default::default() };
        assert!(characteristic_function(&trace(vec![0.0; 10]), &cfg).is_err());
    }

    #[test]
    fn noise_cf_is_order_one() {
        let cfg = TriggerConfig::default();
        for seed in 0..5 {
            let cf = characteristic_function(&trace(noise(seed, 60_000)), &cfg).unwrap();
            let after = &cf[2000..];
            let mean = after.iter().sum::<f64>() / after.len() as f64;
            assert!(mean <= 1.0, "seed {seed}: mean CF {mean}");
        }
    }

    #[test]
    fn step_in_one_band_raises_cf() {
        for seed in 0..10 {
            let base = noise(seed, 4000);
            let x: Vec<f64> = (0..4000)
                .map(|i| {
                    let amp = if i >= 3000 { 5.0 } else { 0.5 };
                    base[i] + amp * (2.0 * std::f64::consts::PI * 7.0 * i as f64 / 100.0).sin()
                })
                .collect();
            let cf = characteristic_function(&trace(x), &TriggerConfig::default()).unwrap();
            let peak = cf[3000..=3020].iter().cloned().fold(f64::MIN, f64::max);
            assert!(peak >= 6.0, "seed {seed}: peak {peak}");
        }
    }

    #[test]
    fn single_event_single_trigger() {
        for seed in 0..10 {
            let mut x = noise(seed, 3000);
            add_onset(&mut x, 20.0, 8.0, 10.0, seed + 7);
            let picks = detect_triggers(&trace(x), &TriggerConfig::default()).unwrap();
            let near: Vec<_> = picks
                .iter()
                .filter(|p| (19.8..=20.3).contains(&p.time.as_secs_f64()))
                .collect();
            assert_eq!(near.len(), 1, "seed {seed}: {picks:?}");
            assert!(picks.iter().all(|p| p.stage == Stage::Triggered && p.confidence == 0.0));
        }
    }

    #[test]
    fn refractory_merges_close_events() {
        let mut x = noise(3, 3000);
        add_onset(&mut x, 20.0, 8.0, 10.0, 1);
        add_onset(&mut x, 20.5, 8.0, 10.0, 2);
        let picks = detect_triggers(&trace(x), &TriggerConfig::default()).unwrap();
        let near: Vec<_> = picks.iter().filter(|p| (19.5..21.0).contains(&p.time.as_secs_f64())).collect();
        assert_eq!(near.len(), 1, "{picks:?}");
        assert!(near[0].time.as_secs_f64() < 20.4);
    }

    fn event_trace(seed: u64) -> Trace {
        let mut x = noise(seed, 5000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..4 {
            let amp = rng.random_range(3.0..20.0);
            add_onset(&mut x, 8.0 + 9.0 * k as f64 + rng.random_range(0.0..2.0), rng.random_range(3.0..15.0), amp, seed * 31 + k);
        }
        trace(x)
    }

    #[test]
    fn chunked_equals_one_shot() {
        let cfg = TriggerConfig::default();
        for seed in 0..4 {
            let t = event_trace(seed);
            let whole = detect_triggers(&t, &cfg).unwrap();
            assert!(!whole.is_empty());
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
            let mut det = TriggerDetector::new("ST01", 100.0, Timestamp(0), &cfg).unwrap();
            let mut chunked = Vec::new();
            let mut at = 0;
            while at < t.len() {
                let len = rng.random_range(1..700).min(t.len() - at);
                chunked.extend(det.push(&t.samples()[at..at + len]));
                at += len;
            }
            assert_eq!(whole, chunked);
        }
    }

    #[test]
    fn causal_truncation() {
        let cfg = TriggerConfig::default();
        let t = event_trace(11);
        let whole = detect_triggers(&t, &cfg).unwrap();
        for p in &whole {
            let idx = (p.time.micros() / 10_000) as usize;
            let cut = trace(t.samples()[..idx + 31].to_vec());
            let part = detect_triggers(&cut, &cfg).unwrap();
            assert!(part.contains(p));
        }
        // and truncation never creates triggers that the full run rejects
        for end in (600..t.len()).step_by(397) {
            let part = detect_triggers(&trace(t.samples()[..end].to_vec()), &cfg).unwrap();
            assert!(part.iter().all(|p| whole.contains(p)));
        }
    }

    #[test]
    fn raising_s1_never_adds_triggers() {
        for seed in 0..4 {
            let t = event_trace(seed + 20);
            let mut prev: Option<Vec<Pick>> = None;
            for s1 in [3.0, 6.0, 9.0, 15.0, 40.0] {
                let cfg = TriggerConfig { s1, refractory_s: 0.0, ..Default::default() };
                let picks = detect_triggers(&t, &cfg).unwrap();
                if let Some(p) = &prev {
                    assert!(picks.iter().all(|x| p.contains(x)), "s1={s1}");
                }
                prev = Some(picks);
            }
        }
    }
}
