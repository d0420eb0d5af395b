mod common;

use std::collections::BTreeMap;

use common::{corpus_cfg, train_bundle};
use proptest::prelude::*;
use quakepick::evalbench::{
    cluster_station_weights, evaluate, kfold_by_block, kmeans, match_picks, prf, tolerance_sweep, Prf, Report,
};
use quakepick::pipeline::{run_stream, Mode, PipelineConfig, RunOptions, TrainingOptions};
use quakepick::stacking::StackConfig;
use quakepick::synth::{gen_corpus, Regime, SynthConfig};
use quakepick::waveform::{LabeledArrival, Pick, Stage, Timestamp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kfold_corpus() -> quakepick::synth::Corpus {
    gen_corpus(&SynthConfig { aperture_km: 25.0, blocks: 4, ..corpus_cfg(21, 2400.0, 30.0, 150.0) }).unwrap()
}

fn pipeline_cfg() -> PipelineConfig {
    PipelineConfig { feature: quakepick::features::FeatureConfig::with_post(10.0), ..Default::default() }
}

#[test]
fn kfold_mean_bounds_and_block_identity() {
    let c = kfold_corpus();
    let cfg = pipeline_cfg();
    let stack = StackConfig::default();
    let training = TrainingOptions::default();
    let folds = kfold_by_block(&c.streams, &c.labels, &c.catalog, &c.blocks, &cfg, &stack, &training, 0.4).unwrap();
    assert_eq!(folds.len(), 4);
    let per: Vec<Prf> = folds.iter().map(|f| f.report.prf()).collect();
    let mean = Prf::mean(&per);
    let (lo, hi) = per.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.f), b.max(p.f)));
    assert!(lo <= mean.f && mean.f <= hi);
    for f in &folds {
        // the held-out block never contributes training rows
        assert!(f.train_rows > 0);
        assert!(f.report.pairs.iter().all(|p| c.blocks[f.block].contains(p.label_time)));
    }

    let mut shuffled = c.blocks.clone();
    shuffled.rotate_left(1);
    shuffled.swap(0, 2);
    let again = kfold_by_block(&c.streams, &c.labels, &c.catalog, &shuffled, &cfg, &stack, &training, 0.4).unwrap();
    for f in &again {
        let orig = folds.iter().find(|o| o.block == f.block).unwrap();
        assert_eq!(f, orig);
    }

    let report = Report { folds: per, mean, sweep: Vec::new(), clusters: None };
    let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(v["folds"].as_array().unwrap().len(), 4);
    assert!(v["mean"]["f"].is_number());
}

#[test]
fn block_without_labels_is_an_error() {
    let c = gen_corpus(&SynthConfig { event_rate_per_hour: 0.0, ..corpus_cfg(22, 600.0, 0.0, 0.0) }).unwrap();
    let r = kfold_by_block(
        &c.streams,
        &c.labels,
        &c.catalog,
        &c.blocks,
        &pipeline_cfg(),
        &StackConfig::default(),
        &TrainingOptions::default(),
        0.4,
    );
    assert!(r.is_err());
}

/// Train on regime A, test on regime B. Only checks that a report comes out.
#[test]
fn regime_transfer_smoke() {
    let bundle = train_bundle(&SynthConfig { aperture_km: 25.0, ..corpus_cfg(23, 2400.0, 30.0, 150.0) }, 10.0);
    let b = gen_corpus(&SynthConfig { aperture_km: 25.0, regime: Regime::B, ..corpus_cfg(24, 1800.0, 30.0, 150.0) }).unwrap();
    let cfg = pipeline_cfg();
    let run = run_stream(&b.streams, Some(&bundle), &b.catalog, &cfg, RunOptions { mode: Mode::Full, ..Default::default() }).unwrap();
    let r = evaluate(&run.picks, &b.labels, 0.4);
    for v in [r.precision, r.recall, r.f_score] {
        assert!((0.0..=1.0).contains(&v));
    }
    println!("A->B transfer: P {:.3} R {:.3} F {:.3}", r.precision, r.recall, r.f_score);
}

#[test]
fn kmeans_restarts_stable_across_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<Vec<f64>> = (0..12).map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let a = kmeans(&points, 4, 1, 50).unwrap();
    let b = kmeans(&points, 4, 2, 50).unwrap();
    assert!((a.wcss - b.wcss).abs() <= 1e-9 * a.wcss.max(1.0));
    assert!(kmeans(&points, 13, 1, 50).is_err());

    let weights: BTreeMap<String, Vec<f64>> = points.iter().enumerate().map(|(i, p)| (format!("S{i:02}"), p.clone())).collect();
    let r = cluster_station_weights(&weights, 12, 0, 5).unwrap();
    assert!(r.wcss.abs() < 1e-12);
    assert_eq!(r.assignment.values().collect::<std::collections::BTreeSet<_>>().len(), 12);
}

fn arb_times() -> impl Strategy<Value = Vec<(u8, i64)>> {
    prop::collection::vec((0u8..2, 0i64..5_000_000), 0..25)
}

fn picks_of(v: &[(u8, i64)]) -> Vec<Pick> {
    v.iter().map(|&(s, t)| Pick::new(format!("S{s}"), Timestamp(t), 1.0, Stage::Refined)).collect()
}

fn labels_of(v: &[(u8, i64)]) -> Vec<LabeledArrival> {
    v.iter().map(|&(s, t)| LabeledArrival { station_id: format!("S{s}"), time: Timestamp(t) }).collect()
}

proptest! {
    #[test]
    fn matching_one_to_one_and_maximal(p in arb_times(), l in arb_times(), tol in 0.0f64..1.5) {
        let (picks, labels) = (picks_of(&p), labels_of(&l));
        let m = match_picks(&picks, &labels, tol);
        prop_assert_eq!(m.pairs.len() + m.unmatched_picks.len(), picks.len());
        prop_assert_eq!(m.pairs.len() + m.unmatched_labels.len(), labels.len());
        let tol_us = (tol * 1e6).round() as i64;
        for pair in &m.pairs {
            prop_assert!((pair.pick_time.micros() - pair.label_time.micros()).abs() < tol_us);
        }
        for up in &m.unmatched_picks {
            for ul in &m.unmatched_labels {
                prop_assert!(up.station_id != ul.station_id || (up.time.micros() - ul.time.micros()).abs() >= tol_us);
            }
        }
        let r = prf(m);
        let expect_f = if r.precision + r.recall > 0.0 { 2.0 * r.precision * r.recall / (r.precision + r.recall) } else { 0.0 };
        prop_assert!((r.f_score - expect_f).abs() < 1e-12);
    }

    #[test]
    fn sweep_monotone(p in arb_times(), l in arb_times(), steps in 2usize..30) {
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        let curve = tolerance_sweep(&picks_of(&p), &labels_of(&l), &grid);
        prop_assert_eq!(curve[0].p, 0.0);
        for w in curve.windows(2) {
            prop_assert!(w[1].p >= w[0].p && w[1].r >= w[0].r);
        }
    }
}
