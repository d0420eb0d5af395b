#![allow(dead_code)]

use quakepick::features::FeatureConfig;
use quakepick::pipeline::{build_training_set, rows_to_dataset, TrainingOptions};
use quakepick::stacking::{train_stack, ModelBundle, StackConfig};
use quakepick::synth::{gen_corpus, Corpus, SynthConfig};
use quakepick::trigger::TriggerConfig;

pub fn corpus_cfg(seed: u64, duration_s: f64, events_per_hour: f64, bursts_per_hour: f64) -> SynthConfig {
    SynthConfig {
        seed,
        n_stations: 3,
        duration_s,
        event_rate_per_hour: events_per_hour,
        burst_rate_per_hour: bursts_per_hour,
        snr_min: 5.0,
        snr_max: 50.0,
        burst_snr_min: 3.0,
        burst_snr_max: 10.0,
        min_separation_s: 30.0,
        ..SynthConfig::default()
    }
}

/// First corpus at or after `base.seed` with exactly `events` events.
pub fn corpus_with_events(base: &SynthConfig, events: usize) -> Corpus {
    let rate = events as f64 * 3600.0 / base.duration_s;
    (base.seed..base.seed + 1000)
        .map(|seed| gen_corpus(&SynthConfig { seed, event_rate_per_hour: rate, ..base.clone() }).unwrap())
        .find(|c| c.events.len() == events)
        .expect("some seed hits the count")
}

pub fn train_bundle(cfg: &SynthConfig, post_s: f64) -> ModelBundle {
    let c = gen_corpus(cfg).unwrap();
    let fc = FeatureConfig::with_post(post_s);
    let opts = TrainingOptions { seed: cfg.seed, ..Default::default() };
    let (names, rows) = build_training_set(&c.streams, &c.labels, &TriggerConfig::default(), &fc, &opts).unwrap();
    let data = rows_to_dataset(&rows).unwrap();
    train_stack(&data, names, fc, &StackConfig { seed: cfg.seed, ..Default::default() }).unwrap()
}
