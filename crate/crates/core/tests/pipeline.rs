mod common;

use std::sync::OnceLock;

use common::{corpus_cfg, corpus_with_events, train_bundle};
use proptest::prelude::*;
use quakepick::evalbench::evaluate;
use quakepick::pipeline::{bench, run_stream, Associator, Mode, PipelineConfig, RunOptions, StationWorker};
use quakepick::stacking::ModelBundle;
use quakepick::synth::{Corpus, SynthConfig};
use quakepick::waveform::{sort_picks, Pick};

/// Three stations with events inside the array.
fn compact(seed: u64, duration_s: f64, bursts_per_hour: f64) -> SynthConfig {
    SynthConfig { aperture_km: 25.0, ..corpus_cfg(seed, duration_s, 0.0, bursts_per_hour) }
}

fn bundle() -> &'static ModelBundle {
    static B: OnceLock<ModelBundle> = OnceLock::new();
    B.get_or_init(|| train_bundle(&SynthConfig { event_rate_per_hour: 30.0, ..compact(91, 7200.0, 300.0) }, 10.0))
}

fn corpus() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| corpus_with_events(&compact(500, 1800.0, 120.0), 20))
}

fn config() -> PipelineConfig {
    PipelineConfig { feature: bundle().feature_config.clone(), ..Default::default() }
}

fn full(cfg: &PipelineConfig) -> Vec<Pick> {
    let c = corpus();
    run_stream(&c.streams, Some(bundle()), &c.catalog, cfg, RunOptions { mode: Mode::Full, ..Default::default() })
        .unwrap()
        .picks
}

#[test]
fn three_station_twenty_events_end_to_end() {
    let c = corpus();
    assert_eq!(c.catalog.len(), 3);
    assert_eq!(c.labels.len(), 60);
    let r = evaluate(&full(&config()), &c.labels, 0.4);
    assert!(r.recall >= 0.8 && r.precision >= 0.8, "P {} R {}", r.precision, r.recall);
}

#[test]
fn output_sorted_and_refined() {
    let picks = full(&config());
    let mut sorted = picks.clone();
    sort_picks(&mut sorted);
    assert_eq!(picks, sorted);
    for p in &picks {
        assert!((0.0..=1.0).contains(&p.confidence));
        assert!(p.event.as_ref().is_some_and(|e| e.n_stations >= 2));
    }
}

#[test]
fn serial_parallel_and_bench_agree() {
    let c = corpus();
    let cfg = config();
    let serial = full(&cfg);
    let opts = RunOptions { mode: Mode::Full, parallel: true, parallel_classifier: true };
    let par = run_stream(&c.streams, Some(bundle()), &c.catalog, &cfg, opts).unwrap().picks;
    assert_eq!(serial, par);
    let b = bench(&c.streams, Some(bundle()), &c.catalog, &cfg, Mode::Full, Some(3)).unwrap();
    assert!(b.identical && b.monotone());
    assert!(b.candidates as f64 <= 0.01 * b.samples as f64);
}

#[test]
fn bundle_config_mismatch_rejected() {
    let c = corpus();
    let cfg = PipelineConfig::default(); // 20 s window, bundle has 10 s
    let r = run_stream(&c.streams, Some(bundle()), &c.catalog, &cfg, RunOptions::default());
    assert!(r.is_err());
}

/// Feeds chunks by hand and records, for every emitted pick, how much data
/// each station had delivered at that moment.
#[test]
fn latency_bound() {
    let c = corpus();
    let cfg = config();
    let rate = c.streams[0].sample_rate_hz();
    let chunk = (cfg.chunk_s * rate) as usize;
    let mut workers: Vec<StationWorker> = c
        .streams
        .iter()
        .map(|s| StationWorker::new(s.station_id(), rate, s.start_time(), &cfg, Some(bundle()), Mode::Full).unwrap())
        .collect();
    let chunks: Vec<_> = c.streams.iter().map(|s| s.chunks(chunk)).collect();
    let mut assoc = Associator::new(&c.catalog, &cfg.refiner);
    let max_dt = c.catalog.max_distance_km() / cfg.refiner.vp_km_s;
    let mut emitted = Vec::new();
    for r in 0..chunks[0].len() {
        let mut fresh = Vec::new();
        for (w, ch) in workers.iter_mut().zip(&chunks) {
            fresh.extend(w.push(&ch[r]).unwrap());
        }
        let delivered = chunks[0][r].end_time();
        let horizon = workers.iter().filter_map(StationWorker::horizon).min();
        for p in assoc.offer(fresh, horizon).unwrap() {
            let lag = delivered.secs_since(p.time);
            // refinement can move a pick by at most the AIC half window
            assert!(lag >= cfg.feature.post_s - cfg.refiner.aic_half_window_s, "{p:?} emitted after {lag} s");
            // the event may end max_dt after this pick and closes max_dt after that
            let bound = cfg.latency_s() + cfg.refiner.aic_half_window_s + 2.0 * max_dt + cfg.chunk_s;
            assert!(lag <= bound, "{p:?} held {lag} s > {bound} s");
            emitted.push(p);
        }
    }
    for w in &mut workers {
        w.finish();
    }
    emitted.extend(assoc.offer(Vec::new(), None).unwrap());
    sort_picks(&mut emitted);
    // nothing emitted early was revised later
    assert_eq!(emitted, full(&cfg));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn chunk_size_independence(chunk_s in 0.01f64..60.0) {
        let base = full(&config());
        let cfg = PipelineConfig { chunk_s: (chunk_s * 100.0).round() / 100.0, ..config() };
        prop_assert_eq!(full(&cfg), base);
    }

    #[test]
    fn raising_threshold_never_adds_picks(lo in 0.05f64..0.9, step in 0.0f64..0.5) {
        let hi = (lo + step).min(0.99);
        let low = full(&PipelineConfig { stack_threshold: lo, ..config() });
        let high = full(&PipelineConfig { stack_threshold: hi, ..config() });
        prop_assert!(high.len() <= low.len());
        for p in &high {
            prop_assert!(low.iter().any(|q| q.station_id == p.station_id && q.time == p.time), "{:?} only at {}", p, hi);
        }
    }
}

