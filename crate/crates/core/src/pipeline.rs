//! Streaming Trigger -> Classifier -> Refiner per station, then multi-station
//! association.
//!
//! Each [`StationWorker`] keeps only the samples it may still need. A
//! candidate is handled as soon as its feature window and AIC window are both
//! in the buffer, so results do not depend on how the input is chunked.
//! The [`Associator`] releases an event once no future pick could join it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodels::{mix_seed, Dataset};
use crate::error::{Error, Result};
use crate::features::{assemble_with, cut_window, FeatureConfig, FeatureRow};
use crate::refiner::{associate, refine_pick, RefineOutcome, RefinerConfig};
use crate::stacking::{classify, ModelBundle};
use crate::trigger::{detect_triggers, TriggerConfig, TriggerDetector};
use crate::waveform::{sample_period_us, sort_picks, LabeledArrival, Pick, Stage, StationCatalog, Timestamp, TriTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub trigger: TriggerConfig,
    pub feature: FeatureConfig,
    pub stack_threshold: f64,
    pub refiner: RefinerConfig,
    /// Ingest granularity for [`run_stream`].
    pub chunk_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            trigger: TriggerConfig::default(),
            feature: FeatureConfig::default(),
            stack_threshold: 0.5,
            refiner: RefinerConfig::default(),
            chunk_s: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self, rate_hz: f64) -> Result<()> {
        self.trigger.validate(rate_hz)?;
        self.feature.validate(rate_hz)?;
        self.refiner.validate()?;
        if !(0.0..=1.0).contains(&self.stack_threshold) {
            return Err(Error::InvalidConfig(format!("stack_threshold {} outside [0, 1]", self.stack_threshold)));
        }
        if !(self.chunk_s > 0.0) {
            return Err(Error::InvalidConfig("chunk_s must be positive".into()));
        }
        Ok(())
    }

    /// Seconds after an onset until its pick can no longer change.
    pub fn latency_s(&self) -> f64 {
        self.feature.post_s.max(self.refiner.aic_half_window_s) + self.refiner.aic_half_window_s + self.trigger.t_up_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    Full,
    /// Classifier bypassed: every trigger is refined and associated.
    TriggerRefinerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub samples: u64,
    /// Triggers.
    pub candidates: u64,
    /// Candidates that passed the classifier.
    pub classified: u64,
    /// Classified picks that went through the refiner.
    pub refined: u64,
    pub moved: u64,
    pub low_contrast: u64,
    /// Candidates whose windows ran past either end of the stream.
    pub dropped_edge: u64,
    pub trigger_ns: u64,
    pub classifier_ns: u64,
    pub refiner_ns: u64,
}

impl StageStats {
    fn add(&mut self, o: &StageStats) {
        self.samples += o.samples;
        self.candidates += o.candidates;
        self.classified += o.classified;
        self.refined += o.refined;
        self.moved += o.moved;
        self.low_contrast += o.low_contrast;
        self.dropped_edge += o.dropped_edge;
        self.trigger_ns += o.trigger_ns;
        self.classifier_ns += o.classifier_ns;
        self.refiner_ns += o.refiner_ns;
    }
}

/// Per-station streaming stage chain.
pub struct StationWorker<'a> {
    station_id: String,
    start: Timestamp,
    period_us: i64,
    detector: TriggerDetector,
    buf: Option<TriTrace>,
    buf_from: u64,
    total: u64,
    pending: VecDeque<(u64, Pick)>,
    pre: u64,
    win_len: u64,
    half: u64,
    lookahead: u64,
    mode: Mode,
    bundle: Option<&'a ModelBundle>,
    cfg: &'a PipelineConfig,
    parallel_classifier: bool,
    finished: bool,
    pub stats: StageStats,
}

impl<'a> StationWorker<'a> {
    pub fn new(
        station_id: &str,
        rate_hz: f64,
        start: Timestamp,
        cfg: &'a PipelineConfig,
        bundle: Option<&'a ModelBundle>,
        mode: Mode,
    ) -> Result<Self> {
        cfg.validate(rate_hz)?;
        if mode == Mode::Full {
            let b = bundle.ok_or_else(|| Error::InvalidConfig("full mode needs a model bundle".into()))?;
            check_bundle(b, cfg)?;
        }
        let detector = TriggerDetector::new(station_id, rate_hz, start, &cfg.trigger)?;
        Ok(StationWorker {
            station_id: station_id.to_string(),
            start,
            period_us: sample_period_us(rate_hz)?,
            lookahead: detector.lookahead() as u64,
            detector,
            buf: None,
            buf_from: 0,
            total: 0,
            pending: VecDeque::new(),
            pre: (cfg.feature.pre_s * rate_hz).round() as u64,
            win_len: cfg.feature.window_len(rate_hz) as u64,
            half: (cfg.refiner.aic_half_window_s * rate_hz).round() as u64,
            mode,
            bundle,
            cfg,
            parallel_classifier: false,
            finished: false,
            stats: StageStats::default(),
        })
    }

    pub fn with_parallel_classifier(mut self, on: bool) -> Self {
        self.parallel_classifier = on;
        self
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    fn need_end(&self, idx: u64) -> u64 {
        (idx + self.win_len - self.pre).max(idx + self.half + 1)
    }

    /// Feed the next contiguous chunk; returns refined picks that became final.
    pub fn push(&mut self, chunk: &TriTrace) -> Result<Vec<Pick>> {
        if self.finished {
            return Err(Error::InvalidConfig(format!("station {} already finished", self.station_id)));
        }
        if chunk.station_id() != self.station_id || chunk.period_us() != self.period_us {
            return Err(Error::ChannelMismatch(format!("chunk from {} fed to {}", chunk.station_id(), self.station_id)));
        }
        let expected = self.start + self.total as i64 * self.period_us;
        if chunk.start_time() != expected {
            return Err(Error::NonMonotonicTime(format!("chunk starts at {} but {expected} was expected", chunk.start_time())));
        }
        let t0 = Instant::now();
        let triggers = self.detector.push(chunk.z().samples());
        self.stats.trigger_ns += t0.elapsed().as_nanos() as u64;
        self.stats.samples += chunk.len() as u64;
        self.total += chunk.len() as u64;
        match &mut self.buf {
            Some(b) => b.append(chunk)?,
            None => self.buf = Some(chunk.clone()),
        }
        for p in triggers {
            self.stats.candidates += 1;
            let idx = ((p.time.micros() - self.start.micros()) / self.period_us) as u64;
            if idx < self.pre.max(self.half) {
                self.stats.dropped_edge += 1;
            } else {
                self.pending.push_back((idx, p));
            }
        }
        let mut out = Vec::new();
        while let Some(&(idx, _)) = self.pending.front() {
            if self.need_end(idx) > self.total {
                break;
            }
            let (_, p) = self.pending.pop_front().unwrap();
            if let Some(done) = self.process(p)? {
                out.push(done);
            }
        }
        self.trim();
        Ok(out)
    }

    fn process(&mut self, mut pick: Pick) -> Result<Option<Pick>> {
        let buf = self.buf.as_ref().expect("buffer holds the candidate");
        if self.mode == Mode::Full {
            let t0 = Instant::now();
            let win = cut_window(buf, pick.time, &self.cfg.feature)?;
            let fv = assemble_with(&win, &self.cfg.feature, self.parallel_classifier)?;
            let bundle = self.bundle.expect("checked at construction");
            let conf = bundle.combine(&bundle.base_scores(&fv.values, self.parallel_classifier)?);
            self.stats.classifier_ns += t0.elapsed().as_nanos() as u64;
            if !classify(conf, self.cfg.stack_threshold) {
                return Ok(None);
            }
            pick.confidence = conf;
            pick.advance(Stage::Classified)?;
        } else {
            pick.confidence = 1.0;
        }
        self.stats.classified += 1;
        let t0 = Instant::now();
        let (refined, outcome) = refine_pick(buf, &pick, &self.cfg.refiner);
        self.stats.refiner_ns += t0.elapsed().as_nanos() as u64;
        self.stats.refined += 1;
        match outcome {
            RefineOutcome::Moved => self.stats.moved += 1,
            RefineOutcome::LowContrast | RefineOutcome::Uncovered => self.stats.low_contrast += 1,
        }
        Ok(Some(refined))
    }

    /// Smallest sample index still needed by a pending or future candidate.
    fn oldest_needed(&self) -> u64 {
        let next = self.total.saturating_sub(self.lookahead + 1);
        self.pending.front().map_or(next, |&(i, _)| i.min(next))
    }

    fn trim(&mut self) {
        let keep_from = self.oldest_needed().saturating_sub(self.pre.max(self.half));
        if let Some(b) = &mut self.buf {
            let drop = keep_from.saturating_sub(self.buf_from);
            // drain in large steps only
            if drop as usize > b.len() / 2 {
                b.drop_front(drop as usize);
                self.buf_from += drop;
            }
        }
    }

    /// No pick emitted from now on can be earlier than this.
    pub fn horizon(&self) -> Option<Timestamp> {
        if self.finished {
            return None;
        }
        let idx = self.oldest_needed().saturating_sub(self.half);
        Some(self.start + idx as i64 * self.period_us)
    }

    /// End of stream: candidates without full windows are dropped.
    pub fn finish(&mut self) -> Vec<Pick> {
        self.stats.dropped_edge += self.pending.len() as u64;
        self.pending.clear();
        self.buf = None;
        self.finished = true;
        Vec::new()
    }
}

fn check_bundle(b: &ModelBundle, cfg: &PipelineConfig) -> Result<()> {
    if b.feature_config != cfg.feature {
        return Err(Error::FeatureMismatch(format!(
            "bundle trained with post window {} s, pipeline configured for {} s",
            b.feature_config.post_s, cfg.feature.post_s
        )));
    }
    b.check_names(&cfg.feature.names())
}

/// Streaming association with exact batch semantics: an event is released
/// once its latest pick is more than max distance / vp before the horizon,
/// and only after every event that starts earlier.
pub struct Associator<'a> {
    catalog: &'a StationCatalog,
    cfg: &'a RefinerConfig,
    pending: Vec<Pick>,
    next_id: u64,
    max_dt_us: i64,
}

impl<'a> Associator<'a> {
    pub fn new(catalog: &'a StationCatalog, cfg: &'a RefinerConfig) -> Self {
        Associator {
            catalog,
            cfg,
            pending: Vec::new(),
            next_id: 0,
            max_dt_us: (catalog.max_distance_km() / cfg.vp_km_s * 1e6).ceil() as i64,
        }
    }

    /// Add picks and release closed events. `None` closes everything.
    pub fn offer(&mut self, picks: Vec<Pick>, horizon: Option<Timestamp>) -> Result<Vec<Pick>> {
        self.pending.extend(picks);
        if self.pending.is_empty() {
            return Ok(Vec::new());
        }
        let tagged = associate(&self.pending, self.catalog, self.cfg)?;
        let mut groups: BTreeMap<u64, Vec<Pick>> = BTreeMap::new();
        for p in tagged {
            groups.entry(p.event.expect("associate tags every pick").event_id).or_default().push(p);
        }
        let mut out = Vec::new();
        let mut rest = Vec::new();
        let mut open = false;
        for (_, group) in groups {
            let last = group.iter().map(|p| p.time.micros()).max().unwrap();
            open = open || horizon.is_some_and(|h| last + self.max_dt_us >= h.micros());
            if open {
                rest.extend(group);
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            for mut p in group {
                let tag = p.event.as_mut().unwrap();
                tag.event_id = id;
                if tag.n_stations >= self.cfg.min_stations {
                    out.push(p);
                }
            }
        }
        for p in &mut rest {
            p.event = None;
        }
        self.pending = rest;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub mode: Mode,
    /// Run station workers on the rayon pool.
    pub parallel: bool,
    /// Fan out feature families and base models per candidate.
    pub parallel_classifier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub picks: Vec<Pick>,
    pub stats: StageStats,
    pub per_station: BTreeMap<String, StageStats>,
}

fn check_streams(streams: &[TriTrace], catalog: &StationCatalog) -> Result<()> {
    let Some(first) = streams.first() else { return Ok(()) };
    let mut seen = HashMap::new();
    for s in streams {
        if s.period_us() != first.period_us() {
            return Err(Error::ChannelMismatch(format!(
                "station {} at {} Hz, {} at {} Hz",
                first.station_id(),
                first.sample_rate_hz(),
                s.station_id(),
                s.sample_rate_hz()
            )));
        }
        catalog.get(s.station_id())?;
        if seen.insert(s.station_id(), ()).is_some() {
            return Err(Error::Duplicate(format!("stream for station {}", s.station_id())));
        }
    }
    Ok(())
}

/// Runs the pipeline over complete streams, feeding them in `chunk_s`
/// pieces in lockstep. Picks are identical for any chunk size and for
/// serial or parallel workers.
pub fn run_stream(
    streams: &[TriTrace],
    bundle: Option<&ModelBundle>,
    catalog: &StationCatalog,
    cfg: &PipelineConfig,
    opts: RunOptions,
) -> Result<RunOutput> {
    check_streams(streams, catalog)?;
    let mut workers = streams
        .iter()
        .map(|s| {
            StationWorker::new(s.station_id(), s.sample_rate_hz(), s.start_time(), cfg, bundle, opts.mode)
                .map(|w| w.with_parallel_classifier(opts.parallel_classifier))
        })
        .collect::<Result<Vec<_>>>()?;
    let chunked: Vec<Vec<TriTrace>> = streams
        .iter()
        .map(|s| s.chunks(((cfg.chunk_s * s.sample_rate_hz()).round() as usize).max(1)))
        .collect();
    let rounds = chunked.iter().map(Vec::len).max().unwrap_or(0);
    let mut assoc = Associator::new(catalog, &cfg.refiner);
    let mut picks = Vec::new();
    for r in 0..=rounds {
        let step = |(w, chunks): (&mut StationWorker, &Vec<TriTrace>)| -> Result<Vec<Pick>> {
            match chunks.get(r) {
                Some(c) => w.push(c),
                None if w.horizon().is_some() => Ok(w.finish()),
                None => Ok(Vec::new()),
            }
        };
        let fresh: Vec<Vec<Pick>> = if opts.parallel {
            workers.par_iter_mut().zip(chunked.par_iter()).map(step).collect::<Result<_>>()?
        } else {
            workers.iter_mut().zip(chunked.iter()).map(step).collect::<Result<_>>()?
        };
        let horizon = workers.iter().filter_map(StationWorker::horizon).min();
        picks.extend(assoc.offer(fresh.into_iter().flatten().collect(), horizon)?);
    }
    picks.extend(assoc.offer(Vec::new(), None)?);
    sort_picks(&mut picks);
    let mut stats = StageStats::default();
    let mut per_station = BTreeMap::new();
    for w in &workers {
        stats.add(&w.stats);
        per_station.insert(w.station_id().to_string(), w.stats);
    }
    Ok(RunOutput { picks, stats, per_station })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingOptions {
    /// Triggers this close to a label are positives.
    pub match_tol_s: f64,
    /// At most this many negatives per positive.
    pub neg_ratio: f64,
    /// Add a positive window centered on each label itself.
    pub label_windows: bool,
    pub seed: u64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions { match_tol_s: 0.4, neg_ratio: 5.0, label_windows: true, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    station: usize,
    time: Timestamp,
    label: bool,
}

/// Labeled feature rows for training: label windows and triggers that match
/// a label are positive, other triggers negative (subsampled to the ratio).
/// Rows come out ordered by (station, time).
pub fn build_training_set(
    streams: &[TriTrace],
    labels: &[LabeledArrival],
    trigger: &TriggerConfig,
    feature: &FeatureConfig,
    opts: &TrainingOptions,
) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let tol = (opts.match_tol_s * 1e6).round() as i64;
    let mut by_station: HashMap<&str, Vec<Timestamp>> = HashMap::new();
    for l in labels {
        by_station.entry(&l.station_id).or_default().push(l.time);
    }
    for v in by_station.values_mut() {
        v.sort();
    }
    let per_station: Vec<Vec<Candidate>> = streams
        .par_iter()
        .enumerate()
        .map(|(si, s)| -> Result<Vec<Candidate>> {
            let lab = by_station.get(s.station_id()).map(Vec::as_slice).unwrap_or(&[]);
            let near = |t: Timestamp| {
                let i = lab.partition_point(|l| l.micros() <= t.micros() - tol);
                lab.get(i).is_some_and(|l| (l.micros() - t.micros()).abs() < tol)
            };
            let mut c: Vec<Candidate> = detect_triggers(s.z(), trigger)?
                .into_iter()
                .map(|p| Candidate { station: si, time: p.time, label: near(p.time) })
                .collect();
            if opts.label_windows {
                c.extend(lab.iter().map(|&t| Candidate { station: si, time: t, label: true }));
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let all: Vec<Candidate> = per_station.into_iter().flatten().collect();
    let (pos, mut neg): (Vec<Candidate>, Vec<Candidate>) = all.into_iter().partition(|c| c.label);
    let cap = (opts.neg_ratio * pos.len() as f64).floor() as usize;
    if neg.len() > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 77));
        neg.shuffle(&mut rng);
        neg.truncate(cap);
    }
    let mut chosen: Vec<Candidate> = pos.into_iter().chain(neg).collect();
    chosen.sort_by_key(|c| (c.station, c.time, c.label));
    let rows: Vec<Option<FeatureRow>> = chosen
        .par_iter()
        .map(|c| -> Result<Option<FeatureRow>> {
            let s = &streams[c.station];
            let win = match cut_window(s, c.time, feature) {
                Ok(w) => w,
                Err(Error::InsufficientCoverage(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let fv = assemble_with(&win, feature, false)?;
            Ok(Some(FeatureRow { station_id: s.station_id().to_string(), time: c.time, label: Some(c.label), values: fv.values }))
        })
        .collect::<Result<_>>()?;
    Ok((feature.names(), rows.into_iter().flatten().collect()))
}

/// Training dataset from labeled feature rows.
pub fn rows_to_dataset(rows: &[FeatureRow]) -> Result<Dataset> {
    let y = rows
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::InvalidDataset(format!("row {} at {} has no label", r.station_id, r.time))))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(rows.iter().map(|r| r.values.clone()).collect(), y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: u64,
    pub candidates: u64,
    pub classified: u64,
    pub refined: u64,
    /// Picks kept after association.
    pub associated: u64,
    pub dropped_edge: u64,
    pub trigger_ns_per_sample: f64,
    pub classifier_us_per_candidate: f64,
    pub refiner_us_per_pick: f64,
    pub serial_wall_s: f64,
    pub parallel_wall_s: f64,
    pub threads: usize,
    pub identical: bool,
}

impl BenchReport {
    pub fn monotone(&self) -> bool {
        self.samples >= self.candidates
            && self.candidates >= self.classified
            && self.classified >= self.refined
            && self.refined >= self.associated
    }
}

/// Serial run, then a parallel run on `threads` workers (all cores when
/// `None`); compares the two pick sets.
pub fn bench(
    streams: &[TriTrace],
    bundle: Option<&ModelBundle>,
    catalog: &StationCatalog,
    cfg: &PipelineConfig,
    mode: Mode,
    threads: Option<usize>,
) -> Result<BenchReport> {
    let t0 = Instant::now();
    let serial = run_stream(streams, bundle, catalog, cfg, RunOptions { mode, parallel: false, parallel_classifier: false })?;
    let serial_wall_s = t0.elapsed().as_secs_f64();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let t0 = Instant::now();
    let parallel = pool.install(|| {
        run_stream(streams, bundle, catalog, cfg, RunOptions { mode, parallel: true, parallel_classifier: true })
    })?;
    let parallel_wall_s = t0.elapsed().as_secs_f64();
    let s = serial.stats;
    let per = |ns: u64, n: u64| if n == 0 { 0.0 } else { ns as f64 / n as f64 };
    Ok(BenchReport {
        samples: s.samples,
        candidates: s.candidates,
        classified: s.classified,
        refined: s.refined,
        associated: serial.picks.len() as u64,
        dropped_edge: s.dropped_edge,
        trigger_ns_per_sample: per(s.trigger_ns, s.samples),
        classifier_us_per_candidate: per(s.classifier_ns, s.candidates - s.dropped_edge.min(s.candidates)) / 1e3,
        refiner_us_per_pick: per(s.refiner_ns, s.refined) / 1e3,
        serial_wall_s,
        parallel_wall_s,
        threads: pool.current_num_threads(),
        identical: serial.picks == parallel.picks,
    })
}
