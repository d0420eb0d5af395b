//! Feature vector for a candidate pick.
//!
//! A window of `[-pre_s, +post_s)` seconds is cut around the candidate and
//! every band of interest is filtered once over the whole window. Four
//! families are computed from those filtered channels and concatenated in a
//! fixed order: amplitude fluctuation, maximal amplitude, spectral waterfall
//! and the remaining ratio/slope/polarization features.
//!
//! Names look like `fluct.2-10.Z.-5_0.mean`; they are unique and stable, and
//! a trained bundle stores them to detect mismatched extractors.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, BandpassSpec, SosDesign};
use crate::error::{Error, Result};
use crate::waveform::{Channel, Timestamp, TriTrace};

static NON_FINITE: AtomicU64 = AtomicU64::new(0);

/// Number of non-finite feature values replaced by 0 since process start.
pub fn non_finite_replaced() -> u64 {
    NON_FINITE.load(Ordering::Relaxed)
}

fn bands(edges: &[f64]) -> Vec<BandpassSpec> {
    edges.windows(2).map(|w| BandpassSpec::new(w[0], w[1])).collect()
}

const LADDER: [f64; 10] = [0.5, 0.833, 1.389, 2.314, 3.858, 6.430, 10.717, 17.816, 29.768, 49.615];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub pre_s: f64,
    /// Post-arrival span (AN).
    pub post_s: f64,
    pub fluct_bands: Vec<BandpassSpec>,
    pub waterfall_bands: Vec<BandpassSpec>,
    pub other_bands: Vec<BandpassSpec>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig::with_post(20.0)
    }
}

impl FeatureConfig {
    pub fn with_post(post_s: f64) -> Self {
        FeatureConfig {
            pre_s: 5.0,
            post_s,
            fluct_bands: vec![BandpassSpec::new(2.0, 10.0), BandpassSpec::new(10.0, 20.0)],
            waterfall_bands: bands(&LADDER),
            other_bands: bands(&LADDER[2..8]),
        }
    }

    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        if self.pre_s != 5.0 {
            return Err(Error::InvalidConfig(format!("pre_s must be 5, got {}", self.pre_s)));
        }
        if !(self.post_s >= 5.0) {
            return Err(Error::InvalidConfig(format!("post_s must be at least 5, got {}", self.post_s)));
        }
        for s in [self.pre_s, self.post_s] {
            let n = s * rate_hz;
            if (n - n.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!("{s} s is not a whole number of samples at {rate_hz} Hz")));
            }
        }
        for b in self.fluct_bands.iter().chain(&self.waterfall_bands).chain(&self.other_bands) {
            b.validate(rate_hz)?;
        }
        Ok(())
    }

    /// Number of 5 s blocks after the arrival.
    pub fn blocks(&self) -> usize {
        (self.post_s / 5.0).floor() as usize
    }

    pub fn window_len(&self, rate_hz: f64) -> usize {
        ((self.pre_s + self.post_s) * rate_hz).round() as usize
    }

    /// `679 + 12 (floor(post_s / 5) - 1)` with the default band lists.
    pub fn feature_count(&self) -> usize {
        let f = self.fluct_bands.len();
        let fluct = (4 + self.blocks()) * f * 3 * 2;
        let maximal = f * 7;
        let waterfall = 10 * self.waterfall_bands.len() * 3 * 2;
        let other = self.other_bands.len() * (3 * 4 + 1);
        fluct + maximal + waterfall + other
    }

    fn fluct_subwindows(&self) -> Vec<(f64, f64)> {
        let mut w = vec![(-5.0, 0.0), (0.0, self.post_s), (-1.0, 0.0), (0.0, 1.0)];
        w.extend((1..=self.blocks()).map(|i| (5.0 * (i - 1) as f64, 5.0 * i as f64)));
        w
    }

    fn waterfall_subwindows() -> Vec<(f64, f64)> {
        (1..=5)
            .flat_map(|k| {
                let d = 0.2 * k as f64;
                [(-d, 0.0), (0.0, d)]
            })
            .collect()
    }

    /// Feature names in vector order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.feature_count());
        let fmt = |v: f64| format!("{}", (v * 1000.0).round() / 1000.0);
        for b in &self.fluct_bands {
            for c in Channel::ALL {
                for (k, (a, z)) in self.fluct_subwindows().into_iter().enumerate() {
                    // 5 s blocks can coincide with (0, AN); keep their names apart
                    let tag = if k < 4 { String::new() } else { format!("blk{}.", k - 3) };
                    for s in ["mean", "var"] {
                        out.push(format!("fluct.{}.{}.{tag}{}_{}.{s}", b.label(), c.as_str(), fmt(a), fmt(z)));
                    }
                }
            }
        }
        for b in &self.fluct_bands {
            for c in [Channel::E, Channel::N] {
                for s in ["max", "mean", "var"] {
                    out.push(format!("maxamp.{}.{}.{s}", b.label(), c.as_str()));
                }
            }
            out.push(format!("maxamp.{}.Z.max", b.label()));
        }
        for b in &self.waterfall_bands {
            for c in Channel::ALL {
                for (a, z) in Self::waterfall_subwindows() {
                    for s in ["mean", "var"] {
                        out.push(format!("wf.{}.{}.{}_{}.{s}", b.label(), c.as_str(), fmt(a), fmt(z)));
                    }
                }
            }
        }
        for b in &self.other_bands {
            for c in Channel::ALL {
                for s in ["rms_ratio", "mean_diff", "env_slope_pre", "env_slope_post"] {
                    out.push(format!("other.{}.{}.{s}", b.label(), c.as_str()));
                }
            }
            out.push(format!("other.{}.polarization", b.label()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    /// Values that came out non-finite and were replaced by 0.
    pub replaced: usize,
}

/// Exact-length window around `t`; sample `pre_s * rate` is the one nearest `t`.
pub fn cut_window(stream: &TriTrace, t: Timestamp, cfg: &FeatureConfig) -> Result<TriTrace> {
    let rate = stream.sample_rate_hz();
    let pre = (cfg.pre_s * rate).round() as i64;
    let len = cfg.window_len(rate);
    let from = stream.nearest_index(t) - pre;
    if from < 0 || from as usize + len > stream.len() {
        return Err(Error::InsufficientCoverage(format!(
            "window [{}, +{} s] around {t} not inside {}..{}",
            -cfg.pre_s,
            cfg.post_s,
            stream.start_time(),
            stream.end_time()
        )));
    }
    stream.slice(from as usize, len)
}

/// Filtered copies of the window, one per distinct band and channel.
struct Bank {
    rate: f64,
    /// Sample index of the arrival.
    origin: usize,
    specs: Vec<BandpassSpec>,
    data: Vec<[Vec<f64>; 3]>,
}

impl Bank {
    fn build(win: &TriTrace, cfg: &FeatureConfig, parallel: bool) -> Result<Self> {
        let rate = win.sample_rate_hz();
        cfg.validate(rate)?;
        if win.len() != cfg.window_len(rate) {
            return Err(Error::WindowSpan(format!(
                "window has {} samples, expected {}",
                win.len(),
                cfg.window_len(rate)
            )));
        }
        let mut specs: Vec<BandpassSpec> = Vec::new();
        for b in cfg.fluct_bands.iter().chain(&cfg.waterfall_bands).chain(&cfg.other_bands) {
            if !specs.contains(b) {
                specs.push(*b);
            }
        }
        let run = |spec: &BandpassSpec| -> Result<[Vec<f64>; 3]> {
            let d = SosDesign::bandpass(spec, rate)?;
            Ok(Channel::ALL.map(|c| d.filter().process(win.channel(c).samples())))
        };
        let data = if parallel {
            specs.par_iter().map(run).collect::<Result<Vec<_>>>()?
        } else {
            specs.iter().map(run).collect::<Result<Vec<_>>>()?
        };
        Ok(Bank { rate, origin: (cfg.pre_s * rate).round() as usize, specs, data })
    }

    fn get(&self, spec: &BandpassSpec, c: Channel) -> &[f64] {
        let i = self.specs.iter().position(|s| s == spec).unwrap_or(0);
        &self.data[i][c as usize]
    }

    /// Sample range of `(a, b)` seconds relative to the arrival.
    fn range(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let at = |s: f64| (self.origin as i64 + (s * self.rate).round() as i64) as usize;
        at(a)..at(b)
    }
}

fn stats_or_zero(x: &[f64]) -> [f64; 2] {
    dsp::window_stats(x).map(|(m, v)| [m, v]).unwrap_or([0.0, 0.0])
}

fn fluctuation(bank: &Bank, cfg: &FeatureConfig) -> Vec<f64> {
    let subs = cfg.fluct_subwindows();
    let mut out = Vec::new();
    for b in &cfg.fluct_bands {
        for c in Channel::ALL {
            let x = bank.get(b, c);
            for &(a, z) in &subs {
                out.extend(stats_or_zero(&x[bank.range(a, z)]));
            }
        }
    }
    out
}

fn maximal(bank: &Bank, cfg: &FeatureConfig) -> Vec<f64> {
    let sub = bank.range(2.0, cfg.post_s);
    let half = bank.rate.round() as usize;
    let mut out = Vec::new();
    for b in &cfg.fluct_bands {
        for c in Channel::ALL {
            let x = &bank.get(b, c)[sub.clone()];
            let (mut best, mut at) = (0.0f64, 0usize);
            for (i, v) in x.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    at = i;
                }
            }
            out.push(best);
            if c != Channel::Z {
                let lo = at.saturating_sub(half);
                let hi = (at + half).min(x.len());
                out.extend(stats_or_zero(&x[lo..hi]));
            }
        }
    }
    out
}

fn waterfall(bank: &Bank, cfg: &FeatureConfig) -> Vec<f64> {
    let subs = FeatureConfig::waterfall_subwindows();
    let mut out = Vec::new();
    for b in &cfg.waterfall_bands {
        for c in Channel::ALL {
            let x = bank.get(b, c);
            for &(a, z) in &subs {
                out.extend(stats_or_zero(&x[bank.range(a, z)]));
            }
        }
    }
    out
}

fn other(bank: &Bank, cfg: &FeatureConfig) -> Vec<f64> {
    let full = bank.range(-5.0, 5.0);
    let post = bank.range(0.0, 5.0);
    let mut out = Vec::new();
    for b in &cfg.other_bands {
        for c in Channel::ALL {
            let x = bank.get(b, c);
            out.push(dsp::rms_amplitude_ratio(&x[post.clone()], &x[full.clone()]).unwrap_or(0.0));
            out.push(dsp::mean_difference(&x[post.clone()], &x[full.clone()]).unwrap_or(0.0));
            let (pre_slope, post_slope) = dsp::envelope_slope(&x[full.clone()], bank.rate).unwrap_or((0.0, 0.0));
            out.push(pre_slope);
            out.push(post_slope);
        }
        let [e, n, z] = Channel::ALL.map(|c| &bank.get(b, c)[full.clone()]);
        out.push(dsp::polarization_slope(e, n, z).unwrap_or(0.0));
    }
    out
}

pub fn amplitude_fluctuation(win: &TriTrace, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    Ok(fluctuation(&Bank::build(win, cfg, false)?, cfg))
}

pub fn maximal_amplitude(win: &TriTrace, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    Ok(maximal(&Bank::build(win, cfg, false)?, cfg))
}

pub fn spectral_waterfall(win: &TriTrace, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    Ok(waterfall(&Bank::build(win, cfg, false)?, cfg))
}

pub fn other_features(win: &TriTrace, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    Ok(other(&Bank::build(win, cfg, false)?, cfg))
}

/// Full feature vector; `parallel` fans filtering and families out on rayon
/// and gives bitwise the same result as the serial path.
pub fn assemble_with(win: &TriTrace, cfg: &FeatureConfig, parallel: bool) -> Result<FeatureVector> {
    let bank = Bank::build(win, cfg, parallel)?;
    let parts = if parallel {
        let ((f, m), (w, o)) = rayon::join(
            || rayon::join(|| fluctuation(&bank, cfg), || maximal(&bank, cfg)),
            || rayon::join(|| waterfall(&bank, cfg), || other(&bank, cfg)),
        );
        [f, m, w, o]
    } else {
        [fluctuation(&bank, cfg), maximal(&bank, cfg), waterfall(&bank, cfg), other(&bank, cfg)]
    };
    let mut values: Vec<f64> = parts.concat();
    let mut replaced = 0;
    for v in values.iter_mut().filter(|v| !v.is_finite()) {
        *v = 0.0;
        replaced += 1;
    }
    if replaced > 0 {
        NON_FINITE.fetch_add(replaced as u64, Ordering::Relaxed);
    }
    Ok(FeatureVector { values, names: cfg.names(), replaced })
}

pub fn assemble(win: &TriTrace, cfg: &FeatureConfig) -> Result<FeatureVector> {
    assemble_with(win, cfg, false)
}

/// One row of a feature matrix dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub station_id: String,
    pub time: Timestamp,
    pub label: Option<bool>,
    pub values: Vec<f64>,
}

/// CSV with columns `station,time_us,label` followed by the feature names.
pub fn write_feature_matrix<W: Write>(names: &[String], rows: &[FeatureRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["station".to_string(), "time_us".into(), "label".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for r in rows {
        if r.values.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.values.len() });
        }
        let mut rec = vec![
            r.station_id.clone(),
            r.time.micros().to_string(),
            r.label.map(|l| if l { "1" } else { "0" }.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_feature_matrix`].
pub fn read_feature_matrix<R: std::io::Read>(source: R) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let mut r = csv::Reader::from_reader(source);
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "station" || &header[1] != "time_us" || &header[2] != "label" {
        return Err(Error::MalformedHeader("expected station,time_us,label,<features...>".into()));
    }
    let names: Vec<String> = header.iter().skip(3).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::MalformedRow { line, msg };
        let time = rec[1].parse::<i64>().map_err(|e| bad(e.to_string()))?;
        let label = match &rec[2] {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => return Err(bad(format!("label {other:?}"))),
        };
        let values = rec
            .iter()
            .skip(3)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow { station_id: rec[0].to_string(), time: Timestamp(time), label, values });
    }
    Ok((names, rows))
}
