//! Synthetic multi-station corpus with known P arrivals.
//!
//! Stations sit around a reference point; events occur as a Poisson process
//! with random epicenters and depths. Each arrival is a Ricker P wavelet,
//! mostly vertical, followed by a decaying coda and an S wavelet on the
//! horizontals. Background is Gaussian noise, optionally AR(1) colored, plus
//! single-station impulsive bursts that look like onsets but belong to no
//! event. Amplitudes fall off as 1/distance.

use std::f64::consts::PI;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodels::mix_seed;
use crate::dsp::{bandpass, BandpassSpec};
use crate::error::{Error, Result};
use crate::waveform::{
    load_labels, load_stations, parse_trace, sample_period_us, write_labels, write_stations, write_trace, LabeledArrival,
    Station, StationCatalog, Timestamp, TraceFormat, TriTrace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Regime {
    /// White background noise, 3-15 Hz wavelets by default.
    #[default]
    A,
    /// Red AR(1) background and wavelets at half the frequency.
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stations: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Stations are placed within this radius of the center.
    pub aperture_km: f64,
    /// Explicit positions; overrides `n_stations` and `aperture_km`.
    pub stations: Vec<StationSpec>,
    pub start_us: i64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub event_rate_per_hour: f64,
    /// Origins closer than this to an earlier draw are redrawn (0 = plain Poisson).
    pub min_separation_s: f64,
    pub depth_km_min: f64,
    pub depth_km_max: f64,
    pub vp_km_s: f64,
    pub vs_km_s: f64,
    /// Event SNR (P peak over noise std at `reference_km`) is log-uniform in this range.
    pub snr_min: f64,
    pub snr_max: f64,
    pub reference_km: f64,
    pub fc_min_hz: f64,
    pub fc_max_hz: f64,
    pub noise_std: f64,
    pub ar1_phi: f64,
    pub burst_rate_per_hour: f64,
    pub burst_snr_min: f64,
    pub burst_snr_max: f64,
    pub blocks: usize,
    pub regime: Regime,
    /// No P arrival earlier than this after the stream start.
    pub lead_s: f64,
    /// No P arrival later than this before the stream end.
    pub tail_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_stations: 4,
            center_lat: 31.0,
            center_lon: 103.4,
            aperture_km: 40.0,
            stations: Vec::new(),
            start_us: 0,
            duration_s: 3600.0,
            sample_rate_hz: 100.0,
            event_rate_per_hour: 20.0,
            min_separation_s: 0.0,
            depth_km_min: 5.0,
            depth_km_max: 15.0,
            vp_km_s: 6.0,
            vs_km_s: 3.2,
            snr_min: 1.0,
            snr_max: 30.0,
            reference_km: 25.0,
            fc_min_hz: 3.0,
            fc_max_hz: 15.0,
            noise_std: 1.0,
            ar1_phi: 0.0,
            burst_rate_per_hour: 0.0,
            burst_snr_min: 3.0,
            burst_snr_max: 30.0,
            blocks: 4,
            regime: Regime::A,
            lead_s: 20.0,
            tail_s: 30.0,
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<SynthConfig> {
        let cfg: SynthConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        sample_period_us(self.sample_rate_hz)?;
        if !(self.vp_km_s > self.vs_km_s && self.vs_km_s > 0.0) {
            return bad("need vp > vs > 0");
        }
        if !(self.event_rate_per_hour >= 0.0 && self.burst_rate_per_hour >= 0.0) {
            return bad("rates must be non-negative");
        }
        let usable = self.duration_s - self.lead_s - self.tail_s;
        if !(self.min_separation_s >= 0.0)
            || self.min_separation_s * self.event_rate_per_hour * self.duration_s / 3600.0 > 0.5 * usable
        {
            return bad("min_separation_s too large for the event rate");
        }
        if !(self.snr_min > 0.0 && self.snr_min <= self.snr_max) || !(self.burst_snr_min > 0.0 && self.burst_snr_min <= self.burst_snr_max) {
            return bad("snr ranges must be positive and ordered");
        }
        if !(self.fc_min_hz > 0.0 && self.fc_min_hz <= self.fc_max_hz && self.fc_max_hz < self.sample_rate_hz / 4.0) {
            return bad("wavelet frequencies must be positive, ordered and below a quarter of the sample rate");
        }
        if !(self.depth_km_min >= 0.0 && self.depth_km_min <= self.depth_km_max) {
            return bad("depth range must be non-negative and ordered");
        }
        if !(self.noise_std > 0.0) || !(self.ar1_phi > -1.0 && self.ar1_phi < 1.0) {
            return bad("noise_std must be positive and |ar1_phi| < 1");
        }
        if self.stations.is_empty() && (self.n_stations == 0 || !(self.aperture_km > 0.0)) {
            return bad("need stations or a positive n_stations and aperture");
        }
        if self.blocks == 0 || !(self.reference_km > 0.0) {
            return bad("blocks and reference_km must be positive");
        }
        if !(self.duration_s > self.lead_s + self.tail_s) || self.lead_s < 0.0 || self.tail_s < 0.0 {
            return bad("duration must exceed lead_s + tail_s");
        }
        Ok(())
    }

    fn fc_range(&self) -> (f64, f64) {
        match self.regime {
            Regime::A => (self.fc_min_hz, self.fc_max_hz),
            Regime::B => (self.fc_min_hz / 2.0, self.fc_max_hz / 2.0),
        }
    }

    fn phi(&self) -> f64 {
        match self.regime {
            Regime::A => self.ar1_phi,
            Regime::B if self.ar1_phi == 0.0 => 0.9,
            Regime::B => self.ar1_phi,
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

/// Kilometres per degree of latitude on a 6371 km sphere.
const KM_PER_DEG: f64 = 6371.0 * PI / 180.0;

fn offset(lat: f64, lon: f64, north_km: f64, east_km: f64) -> (f64, f64) {
    (lat + north_km / KM_PER_DEG, lon + east_km / (KM_PER_DEG * lat.to_radians().cos()))
}

pub fn station_layout(cfg: &SynthConfig) -> Result<StationCatalog> {
    if !cfg.stations.is_empty() {
        return StationCatalog::new(
            cfg.stations.iter().map(|s| Station::new(s.id.clone(), s.lat, s.lon)).collect::<Result<Vec<_>>>()?,
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let n = cfg.n_stations;
    let stations = (0..n)
        .map(|i| {
            // spread azimuths evenly with jitter, radius between 40% and 100%
            let az = 2.0 * PI * (i as f64 + rng.random_range(0.0..0.5)) / n as f64;
            let r = cfg.aperture_km * rng.random_range(0.4..1.0);
            let (lat, lon) = offset(cfg.center_lat, cfg.center_lon, r * az.cos(), r * az.sin());
            Station::new(format!("ST{:02}", i + 1), lat, lon)
        })
        .collect::<Result<Vec<_>>>()?;
    StationCatalog::new(stations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub id: u64,
    pub origin: Timestamp,
    pub lat: f64,
    pub lon: f64,
    pub depth_km: f64,
    /// P peak over noise std at the reference distance.
    pub snr: f64,
    pub fc_hz: f64,
}

/// Per-station outcome of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    pub event_id: u64,
    pub station_id: String,
    pub p_time: Timestamp,
    pub s_time: Timestamp,
    pub distance_km: f64,
    /// P peak over noise std at this station.
    pub snr: f64,
}

pub fn hypocentral_km(station: &Station, ev: &EventParams) -> f64 {
    let epi = crate::waveform::haversine_km(station.latitude_deg, station.longitude_deg, ev.lat, ev.lon);
    (epi * epi + ev.depth_km * ev.depth_km).sqrt()
}

pub fn arrival(cfg: &SynthConfig, station: &Station, ev: &EventParams) -> Arrival {
    let d = hypocentral_km(station, ev);
    Arrival {
        event_id: ev.id,
        station_id: station.station_id.clone(),
        p_time: ev.origin.offset_secs(d / cfg.vp_km_s),
        s_time: ev.origin.offset_secs(d / cfg.vs_km_s),
        distance_km: d,
        snr: ev.snr * cfg.reference_km / d.max(1.0),
    }
}

/// Poisson number of events with P arrivals inside the allowed span.
pub fn draw_events(cfg: &SynthConfig, catalog: &StationCatalog) -> Vec<EventParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let mean = cfg.event_rate_per_hour * cfg.duration_s / 3600.0;
    let count = if mean > 0.0 { Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0) } else { 0 };
    let start = Timestamp(cfg.start_us);
    let (fc_lo, fc_hi) = cfg.fc_range();
    let radius = cfg.aperture_km.max(
        catalog
            .iter()
            .map(|s| crate::waveform::haversine_km(s.latitude_deg, s.longitude_deg, cfg.center_lat, cfg.center_lon))
            .fold(0.0, f64::max),
    );
    let mut events = Vec::with_capacity(count);
    let mut id = 0;
    while events.len() < count {
        let r = radius * rng.random::<f64>().sqrt();
        let az = rng.random_range(0.0..2.0 * PI);
        let (lat, lon) = offset(cfg.center_lat, cfg.center_lon, r * az.cos(), r * az.sin());
        let depth_km = rng.random_range(cfg.depth_km_min..=cfg.depth_km_max);
        let origin_s = rng.random_range(0.0..cfg.duration_s);
        let snr = (rng.random_range(cfg.snr_min.ln()..=cfg.snr_max.ln())).exp();
        let fc_hz = rng.random_range(fc_lo..=fc_hi);
        let ev = EventParams { id, origin: start.offset_secs(origin_s), lat, lon, depth_km, snr, fc_hz };
        let sep = (cfg.min_separation_s * 1e6) as i64;
        let ok = catalog.iter().all(|s| {
            let t = arrival(cfg, s, &ev).p_time.secs_since(start);
            t >= cfg.lead_s && t <= cfg.duration_s - cfg.tail_s
        }) && events.iter().all(|e: &EventParams| (e.origin.micros() - ev.origin.micros()).abs() >= sep);
        if ok {
            events.push(ev);
            id += 1;
        }
    }
    events.sort_by_key(|e| e.origin);
    for (i, e) in events.iter_mut().enumerate() {
        e.id = i as u64;
    }
    events
}

fn ricker(tau: f64, fc: f64) -> f64 {
    let a = (PI * fc * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Unit-std band-limited noise.
fn coda_noise(rng: &mut ChaCha8Rng, len: usize, rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..len + 200).map(|_| rng.sample(StandardNormal)).collect();
    let hi = hi.min(0.45 * rate);
    let lo = lo.min(hi * 0.8);
    let y = bandpass(&white, rate, &BandpassSpec::new(lo, hi)).unwrap_or(white);
    let y = &y[200..];
    let sd = (y.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    y.iter().map(|v| if sd > 0.0 { v / sd } else { 0.0 }).collect()
}

/// Additive contribution of one event at one station over a sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub station_id: String,
    /// Index of the first sample in the station stream.
    pub from: usize,
    pub e: Vec<f64>,
    pub n: Vec<f64>,
    pub z: Vec<f64>,
}

/// Waveform increments and P labels of one event on every station.
pub fn gen_event(cfg: &SynthConfig, catalog: &StationCatalog, ev: &EventParams) -> (Vec<Increment>, Vec<Arrival>) {
    let rate = cfg.sample_rate_hz;
    let start = Timestamp(cfg.start_us);
    let total = cfg.samples();
    let mut incs = Vec::new();
    let mut arrivals = Vec::new();
    for (si, st) in catalog.iter().enumerate() {
        let arr = arrival(cfg, st, ev);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, (ev.id << 16) + si as u64 + 3));
        let amp = arr.snr * cfg.noise_std;
        let fc = ev.fc_hz;
        let tp = arr.p_time.secs_since(start);
        let ts = arr.s_time.secs_since(start);
        let fs = fc * 0.6;
        let from = ((tp - 0.5) * rate).floor().max(0.0) as usize;
        let to = (((ts + 12.0) * rate).ceil() as usize).min(total);
        if from >= to {
            continue;
        }
        let len = to - from;
        // back-azimuth sets the horizontal split of P and the S polarization
        let back_az = {
            let dy = ev.lat - st.latitude_deg;
            let dx = (ev.lon - st.longitude_deg) * st.latitude_deg.to_radians().cos();
            dx.atan2(dy)
        };
        let (pe, pn) = (0.35 * back_az.sin(), 0.35 * back_az.cos());
        let s_rot: f64 = rng.random_range(-0.3..0.3);
        let (se, sn) = ((back_az + PI / 2.0 + s_rot).sin(), (back_az + PI / 2.0 + s_rot).cos());
        let p_center = tp + 0.75 / fc;
        let s_center = ts + 0.75 / fs;
        let p_coda = coda_noise(&mut rng, len, rate, fc * 0.5, fc * 1.5);
        let s_coda = [
            coda_noise(&mut rng, len, rate, fs * 0.5, fs * 1.5),
            coda_noise(&mut rng, len, rate, fs * 0.5, fs * 1.5),
            coda_noise(&mut rng, len, rate, fs * 0.5, fs * 1.5),
        ];
        let (mut e, mut n, mut z) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for k in 0..len {
            let t = (from + k) as f64 / rate;
            let p = amp * ricker(t - p_center, fc);
            let pc_t = t - (tp + 1.0 / fc);
            let pc = if pc_t > 0.0 { 0.3 * amp * (-pc_t / 1.5).exp() * p_coda[k] } else { 0.0 };
            let s_amp = 1.5 * amp;
            let s = s_amp * ricker(t - s_center, fs);
            let sc_t = t - (ts + 1.0 / fs);
            let sc = if sc_t > 0.0 { 0.4 * s_amp * (-sc_t / 2.5).exp() } else { 0.0 };
            z[k] = p + pc + 0.3 * s + 0.3 * sc * s_coda[2][k];
            e[k] = pe * p + 0.5 * pc * pe.signum() + se * s + sc * s_coda[0][k];
            n[k] = pn * p + 0.5 * pc * pn.signum() + sn * s + sc * s_coda[1][k];
        }
        incs.push(Increment { station_id: st.station_id.clone(), from, e, n, z });
        arrivals.push(arr);
    }
    (incs, arrivals)
}

/// An impulsive single-station disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst {
    pub station_id: String,
    pub time: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: usize,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Block {
    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }
}

pub fn blocks(cfg: &SynthConfig) -> Vec<Block> {
    let start = Timestamp(cfg.start_us);
    let span = (cfg.duration_s * 1e6).round() as i64;
    (0..cfg.blocks)
        .map(|i| Block {
            index: i,
            start: start + span * i as i64 / cfg.blocks as i64,
            end: start + span * (i as i64 + 1) / cfg.blocks as i64,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: SynthConfig,
    pub catalog: StationCatalog,
    /// One stream per station, in catalog order.
    pub streams: Vec<TriTrace>,
    pub events: Vec<EventParams>,
    pub arrivals: Vec<Arrival>,
    pub labels: Vec<LabeledArrival>,
    pub bursts: Vec<Burst>,
    pub blocks: Vec<Block>,
}

fn station_noise(cfg: &SynthConfig, seed: u64, len: usize) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = cfg.phi();
    let scale = cfg.noise_std * (1.0 - phi * phi).sqrt();
    std::array::from_fn(|_| {
        let mut prev = 0.0;
        let mut first = true;
        (0..len)
            .map(|_| {
                let w: f64 = rng.sample(StandardNormal);
                prev = if first { w * cfg.noise_std } else { phi * prev + scale * w };
                first = false;
                prev
            })
            .collect()
    })
}

fn station_bursts(cfg: &SynthConfig, seed: u64, station: &str, chans: &mut [Vec<f64>; 3]) -> Vec<Burst> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = cfg.burst_rate_per_hour * cfg.duration_s / 3600.0;
    let count = if mean > 0.0 { Poisson::new(mean).map(|p| p.sample(&mut rng) as usize).unwrap_or(0) } else { 0 };
    let rate = cfg.sample_rate_hz;
    let len = chans[0].len();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t0 = rng.random_range(0.0..cfg.duration_s);
        let f = rng.random_range(4.0..25.0f64).min(0.4 * rate);
        let tau = rng.random_range(0.05..0.4);
        let amp = rng.random_range(cfg.burst_snr_min.ln()..=cfg.burst_snr_max.ln()).exp() * cfg.noise_std;
        // each component rings at its own phase and slightly detuned frequency,
        // so the motion is not rectilinear like a body-wave arrival
        let w: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = (w.iter().map(|v| v * v).sum::<f64>()).sqrt().max(1e-9);
        let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let detune: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.25));
        let from = (t0 * rate).ceil() as usize;
        let to = (((t0 + 6.0 * tau) * rate).ceil() as usize).min(len);
        for k in from..to {
            let t = k as f64 / rate - t0;
            let env = amp * (-t / tau).exp() * 3f64.sqrt() / norm;
            for (c, ch) in chans.iter_mut().enumerate() {
                ch[k] += env * w[c] * (2.0 * PI * f * detune[c] * t + phase[c]).sin();
            }
        }
        out.push(Burst { station_id: station.to_string(), time: Timestamp(cfg.start_us).offset_secs(t0) });
    }
    out
}

pub fn gen_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let catalog = station_layout(cfg)?;
    let events = draw_events(cfg, &catalog);
    let len = cfg.samples();
    let start = Timestamp(cfg.start_us);
    let stations: Vec<&Station> = catalog.iter().collect();
    let per_event: Vec<(Vec<Increment>, Vec<Arrival>)> = events.par_iter().map(|ev| gen_event(cfg, &catalog, ev)).collect();
    let built: Vec<(TriTrace, Vec<Burst>)> = stations
        .par_iter()
        .enumerate()
        .map(|(si, st)| {
            let mut ch = station_noise(cfg, mix_seed(cfg.seed, 1000 + si as u64), len);
            let bursts = station_bursts(cfg, mix_seed(cfg.seed, 2000 + si as u64), &st.station_id, &mut ch);
            for inc in per_event.iter().flat_map(|(i, _)| i).filter(|i| i.station_id == st.station_id) {
                for (dst, src) in ch.iter_mut().zip([&inc.e, &inc.n, &inc.z]) {
                    for (k, v) in src.iter().enumerate() {
                        dst[inc.from + k] += v;
                    }
                }
            }
            let [e, n, z] = ch;
            TriTrace::from_channels(&st.station_id, cfg.sample_rate_hz, start, e, n, z).map(|t| (t, bursts))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut arrivals: Vec<Arrival> = per_event.into_iter().flat_map(|(_, a)| a).collect();
    arrivals.sort_by(|a, b| a.p_time.cmp(&b.p_time).then_with(|| a.station_id.cmp(&b.station_id)));
    let mut labels: Vec<LabeledArrival> =
        arrivals.iter().map(|a| LabeledArrival { station_id: a.station_id.clone(), time: a.p_time }).collect();
    labels.sort();
    labels.dedup();
    let (streams, bursts): (Vec<TriTrace>, Vec<Vec<Burst>>) = built.into_iter().unzip();
    Ok(Corpus {
        config: cfg.clone(),
        catalog,
        streams,
        events,
        arrivals,
        labels,
        bursts: bursts.into_iter().flatten().collect(),
        blocks: blocks(cfg),
    })
}

impl Corpus {
    pub fn stream(&self, station_id: &str) -> Option<&TriTrace> {
        self.streams.iter().find(|s| s.station_id() == station_id)
    }

    pub fn block_of(&self, t: Timestamp) -> Option<usize> {
        self.blocks.iter().find(|b| b.contains(t)).map(|b| b.index)
    }

    /// Writes `stations.csv`, `labels.csv`, `blocks.csv`, `events.csv`,
    /// `synth.toml` and `traces/<station>.<ext>`.
    pub fn write(&self, dir: &Path, format: TraceFormat) -> Result<()> {
        fs::create_dir_all(dir.join("traces"))?;
        write_stations(&self.catalog, BufWriter::new(fs::File::create(dir.join("stations.csv"))?))?;
        write_labels(&self.labels, BufWriter::new(fs::File::create(dir.join("labels.csv"))?))?;
        let mut w = csv::Writer::from_path(dir.join("blocks.csv"))?;
        w.write_record(["block", "start_us", "end_us"])?;
        for b in &self.blocks {
            w.write_record([b.index.to_string(), b.start.micros().to_string(), b.end.micros().to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
        w.write_record(["event_id", "origin_us", "lat", "lon", "depth_km", "snr", "fc_hz"])?;
        for e in &self.events {
            w.write_record([
                e.id.to_string(),
                e.origin.micros().to_string(),
                e.lat.to_string(),
                e.lon.to_string(),
                e.depth_km.to_string(),
                e.snr.to_string(),
                e.fc_hz.to_string(),
            ])?;
        }
        w.flush()?;
        fs::write(
            dir.join("synth.toml"),
            toml::to_string(&self.config).map_err(|e| Error::InvalidConfig(e.to_string()))?,
        )?;
        let ext = match format {
            TraceFormat::Bin => "bin",
            TraceFormat::Csv => "csv",
        };
        for s in &self.streams {
            let f = fs::File::create(dir.join("traces").join(format!("{}.{ext}", s.station_id())))?;
            write_trace(s, format, BufWriter::new(f))?;
        }
        Ok(())
    }
}

/// What a corpus directory holds, without regenerating anything.
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub catalog: StationCatalog,
    pub streams: Vec<TriTrace>,
    pub labels: Vec<LabeledArrival>,
    pub blocks: Vec<Block>,
}

pub fn read_corpus(dir: &Path) -> Result<CorpusFiles> {
    let catalog = load_stations(fs::File::open(dir.join("stations.csv"))?)?;
    let labels = load_labels(fs::File::open(dir.join("labels.csv"))?)?;
    let mut blocks = Vec::new();
    let blocks_path = dir.join("blocks.csv");
    if blocks_path.exists() {
        let mut r = csv::Reader::from_path(blocks_path)?;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |k: usize| {
                rec.get(k)
                    .and_then(|v| v.parse::<i64>().ok())
                    .ok_or_else(|| Error::MalformedRow { line: i + 2, msg: "bad blocks row".into() })
            };
            blocks.push(Block { index: num(0)? as usize, start: Timestamp(num(1)?), end: Timestamp(num(2)?) });
        }
    }
    let mut streams = Vec::new();
    let mut paths: Vec<_> = fs::read_dir(dir.join("traces"))?.collect::<std::io::Result<Vec<_>>>()?;
    paths.sort_by_key(|e| e.path());
    for entry in paths {
        let path = entry.path();
        let f = fs::File::open(&path)?;
        streams.push(parse_trace(std::io::BufReader::new(f), TraceFormat::from_path(&path))?);
    }
    Ok(CorpusFiles { catalog, streams, labels, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { duration_s: 300.0, event_rate_per_hour: 60.0, burst_rate_per_hour: 60.0, ..Default::default() }
    }

    #[test]
    fn deterministic() {
        let a = gen_corpus(&small()).unwrap();
        let b = gen_corpus(&small()).unwrap();
        assert_eq!(a.streams, b.streams);
        assert_eq!(a.labels, b.labels);
        assert!(!a.labels.is_empty());
    }

    #[test]
    fn labels_match_geometry_and_margins() {
        let c = gen_corpus(&small()).unwrap();
        let start = Timestamp(0);
        for a in &c.arrivals {
            let st = c.catalog.get(&a.station_id).unwrap();
            let ev = &c.events[a.event_id as usize];
            let expect = ev.origin.as_secs_f64() + hypocentral_km(st, ev) / c.config.vp_km_s;
            assert!((a.p_time.as_secs_f64() - expect).abs() <= 0.01);
            let t = a.p_time.secs_since(start);
            assert!((20.0..=270.0).contains(&t));
        }
        assert_eq!(c.labels.len(), c.arrivals.len());
    }

    #[test]
    fn p_lag_arithmetic() {
        let cfg = SynthConfig { vp_km_s: 5.5, ..Default::default() };
        let st = Station::new("A", 0.0, 0.0).unwrap();
        let lat = 55.0 / KM_PER_DEG;
        let ev = EventParams { id: 0, origin: Timestamp(0), lat, lon: 0.0, depth_km: 0.0, snr: 5.0, fc_hz: 5.0 };
        let a = arrival(&cfg, &st, &ev);
        assert!((a.p_time.as_secs_f64() - 10.0).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_means_no_labels() {
        let c = gen_corpus(&SynthConfig { event_rate_per_hour: 0.0, ..small() }).unwrap();
        assert!(c.labels.is_empty());
        assert_eq!(c.streams.len(), 4);
        assert!(c.streams.iter().all(|s| s.len() == 30_000));
    }

    #[test]
    fn poisson_count_in_range() {
        // rate x duration = 100 events; generous geometry so no draws are rejected
        for seed in 0..20 {
            let cfg = SynthConfig { seed, duration_s: 3600.0, event_rate_per_hour: 100.0, ..Default::default() };
            let cat = station_layout(&cfg).unwrap();
            let n = draw_events(&cfg, &cat).len();
            assert!((60..=140).contains(&n), "seed {seed}: {n}");
        }
    }

    #[test]
    fn equidistant_stations_share_onset() {
        let cfg = SynthConfig {
            stations: vec![
                StationSpec { id: "A".into(), lat: 31.0, lon: 103.2 },
                StationSpec { id: "B".into(), lat: 31.0, lon: 103.6 },
            ],
            ..Default::default()
        };
        let cat = station_layout(&cfg).unwrap();
        let ev = EventParams { id: 0, origin: Timestamp(60_000_000), lat: 31.3, lon: 103.4, depth_km: 8.0, snr: 10.0, fc_hz: 6.0 };
        let (incs, arr) = gen_event(&cfg, &cat, &ev);
        assert_eq!(arr.len(), 2);
        assert_eq!(arr[0].p_time, arr[1].p_time);
        assert_eq!(incs[0].from, incs[1].from);
    }

    #[test]
    fn s_energy_is_horizontal() {
        let cfg = small();
        let cat = station_layout(&cfg).unwrap();
        let ev = EventParams { id: 0, origin: Timestamp(60_000_000), lat: 31.1, lon: 103.5, depth_km: 8.0, snr: 10.0, fc_hz: 6.0 };
        let (incs, arr) = gen_event(&cfg, &cat, &ev);
        let inc = &incs[0];
        let ts = ((arr[0].s_time.secs_since(Timestamp(0))) * 100.0) as usize - inc.from;
        let peak = |x: &[f64]| x[ts..ts + 100].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak(&inc.e).max(peak(&inc.n)) > 2.0 * peak(&inc.z));
    }

    #[test]
    fn toml_round_trip_and_regime_b() {
        let cfg = SynthConfig { regime: Regime::B, seed: 9, ..small() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SynthConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.phi(), 0.9);
        assert_eq!(cfg.fc_range(), (1.5, 7.5));
        assert!(SynthConfig::from_toml("vp_km_s = 3.0").is_err());
    }

    #[test]
    fn write_and_read_back() {
        let c = gen_corpus(&SynthConfig { duration_s: 120.0, ..small() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write(dir.path(), TraceFormat::Bin).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.labels, c.labels);
        assert_eq!(back.blocks, c.blocks);
        assert_eq!(back.streams.len(), c.streams.len());
        for (a, b) in back.streams.iter().zip(&c.streams) {
            assert_eq!(a.len(), b.len());
        }
    }
}
