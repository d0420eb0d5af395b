//! Waveform and pick data types.
//!
//! Timestamps are integer microseconds since the Unix epoch. Sample rates are
//! restricted to those whose sample period is a whole number of microseconds
//! so that `time_of(i)` is exact for arbitrarily long streams.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_labels, load_stations, parse_trace, read_picks, write_labels, write_picks,
    write_refined_picks, write_stations, write_trace, TraceFormat,
};

/// Absolute time in microseconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_micros(us: i64) -> Self {
        Timestamp(us)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Timestamp((s * 1e6).round() as i64)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    /// Shift by a (possibly negative) number of seconds, rounded to the microsecond.
    pub fn offset_secs(self, s: f64) -> Self {
        Timestamp(self.0 + (s * 1e6).round() as i64)
    }

    /// Signed difference `self - other` in seconds.
    pub fn secs_since(self, other: Timestamp) -> f64 {
        (self.0 - other.0) as f64 * 1e-6
    }
}

impl Add<i64> for Timestamp {
    type Output = Timestamp;
    fn add(self, us: i64) -> Timestamp {
        Timestamp(self.0 + us)
    }
}

impl Sub<i64> for Timestamp {
    type Output = Timestamp;
    fn sub(self, us: i64) -> Timestamp {
        Timestamp(self.0 - us)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    E,
    N,
    Z,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::E, Channel::N, Channel::Z];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::E => "E",
            Channel::N => "N",
            Channel::Z => "Z",
        }
    }
}

/// Sample period in whole microseconds, or an error when the rate does not
/// divide one second into an integral number of microseconds.
pub fn sample_period_us(rate_hz: f64) -> Result<i64> {
    if !rate_hz.is_finite() || rate_hz <= 0.0 {
        return Err(Error::UnsupportedSampleRate(rate_hz));
    }
    let period = 1e6 / rate_hz;
    let rounded = period.round();
    if rounded < 1.0 || (period - rounded).abs() > 1e-6 {
        return Err(Error::UnsupportedSampleRate(rate_hz));
    }
    Ok(rounded as i64)
}

/// A single-channel, gapless, fixed-rate waveform segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    station_id: String,
    channel: Channel,
    sample_rate_hz: f64,
    period_us: i64,
    start: Timestamp,
    samples: Vec<f64>,
}

impl Trace {
    pub fn new(
        station_id: impl Into<String>,
        channel: Channel,
        sample_rate_hz: f64,
        start: Timestamp,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let period_us = sample_period_us(sample_rate_hz)?;
        Ok(Trace {
            station_id: station_id.into(),
            channel,
            sample_rate_hz,
            period_us,
            start,
            samples,
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn period_us(&self) -> i64 {
        self.period_us
    }

    pub fn start_time(&self) -> Timestamp {
        self.start
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_of(&self, i: usize) -> Timestamp {
        self.start + i as i64 * self.period_us
    }

    /// One period past the last sample.
    pub fn end_time(&self) -> Timestamp {
        self.time_of(self.samples.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// Three aligned channels of one station.
#[derive(Debug, Clone, PartialEq)]
pub struct TriTrace {
    e: Trace,
    n: Trace,
    z: Trace,
}

impl TriTrace {
    pub fn new(e: Trace, n: Trace, z: Trace) -> Result<Self> {
        if e.channel != Channel::E || n.channel != Channel::N || z.channel != Channel::Z {
            return Err(Error::ChannelMismatch("expected E, N, Z channels in order".into()));
        }
        if e.station_id != n.station_id || e.station_id != z.station_id {
            return Err(Error::ChannelMismatch(format!(
                "station ids differ: {}, {}, {}",
                e.station_id, n.station_id, z.station_id
            )));
        }
        if e.sample_rate_hz != n.sample_rate_hz || e.sample_rate_hz != z.sample_rate_hz {
            return Err(Error::ChannelMismatch("sample rates differ".into()));
        }
        if e.start != n.start || e.start != z.start {
            return Err(Error::ChannelMismatch("start times differ".into()));
        }
        if e.len() != n.len() || e.len() != z.len() {
            return Err(Error::ChannelLengthMismatch { e: e.len(), n: n.len(), z: z.len() });
        }
        Ok(TriTrace { e, n, z })
    }

    pub fn from_channels(
        station_id: &str,
        sample_rate_hz: f64,
        start: Timestamp,
        e: Vec<f64>,
        n: Vec<f64>,
        z: Vec<f64>,
    ) -> Result<Self> {
        TriTrace::new(
            Trace::new(station_id, Channel::E, sample_rate_hz, start, e)?,
            Trace::new(station_id, Channel::N, sample_rate_hz, start, n)?,
            Trace::new(station_id, Channel::Z, sample_rate_hz, start, z)?,
        )
    }

    pub fn e(&self) -> &Trace {
        &self.e
    }

    pub fn n(&self) -> &Trace {
        &self.n
    }

    pub fn z(&self) -> &Trace {
        &self.z
    }

    pub fn channel(&self, c: Channel) -> &Trace {
        match c {
            Channel::E => &self.e,
            Channel::N => &self.n,
            Channel::Z => &self.z,
        }
    }

    pub fn station_id(&self) -> &str {
        &self.z.station_id
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.z.sample_rate_hz
    }

    pub fn period_us(&self) -> i64 {
        self.z.period_us
    }

    pub fn start_time(&self) -> Timestamp {
        self.z.start
    }

    pub fn end_time(&self) -> Timestamp {
        self.z.end_time()
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.z.duration_s()
    }

    pub fn time_of(&self, i: usize) -> Timestamp {
        self.z.time_of(i)
    }

    /// Index of the sample at exactly `t`, if `t` is on the sample grid and inside the trace.
    pub fn index_of(&self, t: Timestamp) -> Option<usize> {
        let d = t.0 - self.z.start.0;
        if d < 0 || d % self.z.period_us != 0 {
            return None;
        }
        let i = (d / self.z.period_us) as usize;
        (i < self.len()).then_some(i)
    }

    /// Index of the sample nearest to `t` (may lie outside the trace).
    pub fn nearest_index(&self, t: Timestamp) -> i64 {
        let d = t.0 - self.z.start.0;
        let p = self.z.period_us;
        (d + p / 2).div_euclid(p)
    }

    /// Copy of `len` samples starting at `from`.
    pub fn slice(&self, from: usize, len: usize) -> Result<TriTrace> {
        if from + len > self.len() {
            return Err(Error::InsufficientCoverage(format!(
                "slice [{from}, {}) beyond trace length {}",
                from + len,
                self.len()
            )));
        }
        let start = self.time_of(from);
        let cut = |t: &Trace| Trace {
            station_id: t.station_id.clone(),
            channel: t.channel,
            sample_rate_hz: t.sample_rate_hz,
            period_us: t.period_us,
            start,
            samples: t.samples[from..from + len].to_vec(),
        };
        Ok(TriTrace { e: cut(&self.e), n: cut(&self.n), z: cut(&self.z) })
    }

    /// Split into consecutive pieces of at most `chunk_len` samples.
    pub fn chunks(&self, chunk_len: usize) -> Vec<TriTrace> {
        let chunk_len = chunk_len.max(1);
        (0..self.len())
            .step_by(chunk_len)
            .map(|from| {
                self.slice(from, chunk_len.min(self.len() - from))
                    .expect("chunk bounds are in range")
            })
            .collect()
    }

    /// Append a chunk that starts exactly where this trace ends.
    pub fn append(&mut self, next: &TriTrace) -> Result<()> {
        if next.station_id() != self.station_id() || next.sample_rate_hz() != self.sample_rate_hz() {
            return Err(Error::ChannelMismatch("appended chunk from a different stream".into()));
        }
        if next.start_time() != self.end_time() {
            return Err(Error::NonMonotonicTime(format!(
                "chunk starts at {} but stream ends at {}",
                next.start_time(),
                self.end_time()
            )));
        }
        self.e.samples.extend_from_slice(&next.e.samples);
        self.n.samples.extend_from_slice(&next.n.samples);
        self.z.samples.extend_from_slice(&next.z.samples);
        Ok(())
    }

    /// Drop the first `count` samples of every channel.
    pub fn drop_front(&mut self, count: usize) {
        let count = count.min(self.len());
        let start = self.time_of(count);
        for t in [&mut self.e, &mut self.n, &mut self.z] {
            t.samples.drain(..count);
            t.start = start;
        }
    }
}

/// Processing stage that produced a pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Triggered,
    Classified,
    Refined,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Triggered => "Triggered",
            Stage::Classified => "Classified",
            Stage::Refined => "Refined",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Triggered" => Ok(Stage::Triggered),
            "Classified" => Ok(Stage::Classified),
            "Refined" => Ok(Stage::Refined),
            other => Err(Error::MalformedRow { line: 0, msg: format!("unknown stage {other:?}") }),
        }
    }
}

/// Event-group annotation attached by multi-station association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTag {
    pub event_id: u64,
    pub n_stations: usize,
}

/// A tentative or confirmed P-phase arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub station_id: String,
    pub time: Timestamp,
    pub confidence: f64,
    pub stage: Stage,
    #[serde(default)]
    pub low_contrast: bool,
    #[serde(default)]
    pub event: Option<EventTag>,
}

impl Pick {
    pub fn new(station_id: impl Into<String>, time: Timestamp, confidence: f64, stage: Stage) -> Self {
        Pick {
            station_id: station_id.into(),
            time,
            confidence: confidence.clamp(0.0, 1.0),
            stage,
            low_contrast: false,
            event: None,
        }
    }

    /// Move the pick to a later stage.
    pub fn advance(&mut self, to: Stage) -> Result<()> {
        if to < self.stage {
            return Err(Error::StageRegression { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }
}

/// Canonical pick order: time, then station.
pub fn sort_picks(picks: &mut [Pick]) {
    picks.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.station_id.cmp(&b.station_id)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: String,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

const EARTH_RADIUS_KM: f64 = 6371.0;

impl Station {
    pub fn new(station_id: impl Into<String>, latitude_deg: f64, longitude_deg: f64) -> Result<Self> {
        let station_id = station_id.into();
        if !(latitude_deg.abs() <= 90.0) || !(longitude_deg.abs() <= 180.0) {
            return Err(Error::InvalidStation(format!(
                "{station_id}: lat {latitude_deg}, lon {longitude_deg} out of range"
            )));
        }
        Ok(Station { station_id, latitude_deg, longitude_deg })
    }

    /// Great-circle distance on a spherical Earth of radius 6371 km.
    pub fn distance_km(&self, other: &Station) -> f64 {
        haversine_km(self.latitude_deg, self.longitude_deg, other.latitude_deg, other.longitude_deg)
    }
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Station metadata keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationCatalog {
    stations: BTreeMap<String, Station>,
}

impl StationCatalog {
    pub fn new(stations: impl IntoIterator<Item = Station>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in stations {
            if map.contains_key(&s.station_id) {
                return Err(Error::Duplicate(format!("station {}", s.station_id)));
            }
            map.insert(s.station_id.clone(), s);
        }
        Ok(StationCatalog { stations: map })
    }

    pub fn get(&self, id: &str) -> Result<&Station> {
        self.stations.get(id).ok_or_else(|| Error::UnknownStation(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Station> {
        self.stations.values()
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    /// Largest pairwise distance in the catalog.
    pub fn max_distance_km(&self) -> f64 {
        let all: Vec<&Station> = self.stations.values().collect();
        let mut best = 0.0f64;
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                best = best.max(a.distance_km(b));
            }
        }
        best
    }
}

/// An expert (or generator) label of a P arrival.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledArrival {
    pub station_id: String,
    pub time: Timestamp,
}
