use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use quakepick::evalbench::{cluster_station_weights, evaluate, parse_grid, tolerance_sweep, Report};
use quakepick::features::{assemble, cut_window, read_feature_matrix, write_feature_matrix, FeatureConfig, FeatureRow};
use quakepick::pipeline::{bench, build_training_set, rows_to_dataset, run_stream, Mode, PipelineConfig, RunOptions, TrainingOptions};
use quakepick::stacking::{train_stack, ModelBundle, StackConfig};
use quakepick::synth::{gen_corpus, SynthConfig};
use quakepick::trigger::detect_triggers;
use quakepick::waveform::{
    load_labels, load_stations, parse_trace, read_picks, write_refined_picks, LabeledArrival, StationCatalog, TraceFormat, TriTrace,
};

#[derive(Parser)]
#[command(name = "quakepick", version, about = "Streaming P-phase picker: trigger, stacked classifier, AIC refiner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a stacked ensemble from a labeled feature matrix.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Post-arrival window in seconds; inferred from the feature names when omitted.
        #[arg(long)]
        post_s: Option<f64>,
    },
    /// Run the pipeline over trace files and write associated picks.
    Pick {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides stack_threshold from the config.
        #[arg(long)]
        threshold: Option<f64>,
        /// Pipeline TOML; the feature section must match the bundle.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Skip the classifier (trigger + refiner only).
        #[arg(long)]
        no_classifier: bool,
    },
    /// Score picks against labels.
    Eval {
        #[arg(long)]
        picks: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        tol_s: f64,
        /// Tolerance grid as start:stop:step.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-station bundles (file stem = station id) to cluster by meta weights.
        #[arg(long, num_args = 1..)]
        station_bundles: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Trace file format: bin or csv.
        #[arg(long, default_value = "bin")]
        format: String,
    },
    /// Export a feature matrix for candidates (a station,time_us CSV or `auto-trigger`).
    Features {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        candidates: String,
        #[arg(long)]
        out: PathBuf,
        /// Labels used to mark rows; with auto-trigger this builds a training set.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        post_s: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        neg_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time each stage, serial and parallel.
    Bench {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Worker threads for the parallel run (all cores when omitted).
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn read_traces(paths: &[PathBuf]) -> Result<Vec<TriTrace>> {
    paths
        .iter()
        .map(|p| {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            parse_trace(BufReader::new(f), TraceFormat::from_path(p)).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

fn read_stations(path: &Path) -> Result<StationCatalog> {
    Ok(load_stations(File::open(path).with_context(|| format!("opening {}", path.display()))?)?)
}

fn read_labels(path: &Path) -> Result<Vec<LabeledArrival>> {
    Ok(load_labels(File::open(path).with_context(|| format!("opening {}", path.display()))?)?)
}

fn read_config(path: Option<&PathBuf>) -> Result<Option<PipelineConfig>> {
    path.map(|p| {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Ok(PipelineConfig::from_toml(&text)?)
    })
    .transpose()
}

/// Pipeline config whose feature section follows the bundle unless a config file sets it.
fn pipeline_config(path: Option<&PathBuf>, bundle: &ModelBundle) -> Result<PipelineConfig> {
    Ok(read_config(path)?.unwrap_or_else(|| PipelineConfig { feature: bundle.feature_config.clone(), ..Default::default() }))
}

fn infer_feature_config(names: &[String]) -> Result<FeatureConfig> {
    let base = FeatureConfig::with_post(5.0).feature_count();
    let per_block = FeatureConfig::with_post(10.0).feature_count() - base;
    if names.len() < base || !(names.len() - base).is_multiple_of(per_block) {
        bail!("cannot infer the post window from {} features; pass --post-s", names.len());
    }
    let cfg = FeatureConfig::with_post(5.0 * (1 + (names.len() - base) / per_block) as f64);
    if cfg.names() != names {
        bail!("feature names do not match the standard layout; pass --post-s");
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { features, out, folds, seed, threshold, post_s } => {
            let f = File::open(&features).with_context(|| format!("opening {}", features.display()))?;
            let (names, rows) = read_feature_matrix(BufReader::new(f))?;
            let fcfg = match post_s {
                Some(s) => FeatureConfig::with_post(s),
                None => infer_feature_config(&names)?,
            };
            let data = rows_to_dataset(&rows)?;
            let cfg = StackConfig { inner_folds: folds, threshold, seed };
            let bundle = train_stack(&data, names, fcfg, &cfg)?;
            bundle.save(&out)?;
            println!("trained on {} rows ({} positive), wrote {}", data.len(), data.positives(), out.display());
            for (m, w) in bundle.base_models.iter().zip(&bundle.meta_weights) {
                println!("  {:<22} {w:+.4}", m.kind().name());
            }
        }
        Cmd::Pick { bundle, stations, inputs, out, threshold, config, no_classifier } => {
            let bundle = ModelBundle::load(&bundle)?;
            let catalog = read_stations(&stations)?;
            let streams = read_traces(&inputs)?;
            let mut cfg = pipeline_config(config.as_ref(), &bundle)?;
            if let Some(t) = threshold {
                cfg.stack_threshold = t;
            }
            let mode = if no_classifier { Mode::TriggerRefinerOnly } else { Mode::Full };
            let run = run_stream(&streams, Some(&bundle), &catalog, &cfg, RunOptions { mode, parallel: true, parallel_classifier: false })?;
            write_refined_picks(&run.picks, BufWriter::new(File::create(&out)?))?;
            let s = run.stats;
            println!(
                "{} samples, {} candidates, {} classified, {} picks after association ({} dropped at stream edges)",
                s.samples,
                s.candidates,
                s.classified,
                run.picks.len(),
                s.dropped_edge
            );
        }
        Cmd::Eval { picks, labels, tol_s, sweep, report, station_bundles, clusters } => {
            let picks = read_picks(File::open(&picks).with_context(|| format!("opening {}", picks.display()))?)?;
            let labels = read_labels(&labels)?;
            let r = evaluate(&picks, &labels, tol_s);
            println!("precision {:.4} recall {:.4} f {:.4} ({} matched, tol {tol_s} s)", r.precision, r.recall, r.f_score, r.pairs.len());
            let sweep = match sweep {
                Some(g) => tolerance_sweep(&picks, &labels, &parse_grid(&g)?),
                None => Vec::new(),
            };
            for p in &sweep {
                println!("  tol {:.3}: P {:.4} R {:.4}", p.tol, p.p, p.r);
            }
            let clusters = if station_bundles.is_empty() {
                None
            } else {
                let mut weights = BTreeMap::new();
                for path in &station_bundles {
                    let id = path.file_stem().and_then(|s| s.to_str()).context("bundle file name")?.to_string();
                    weights.insert(id, ModelBundle::load(path)?.meta_weights);
                }
                let c = cluster_station_weights(&weights, clusters, 0, 50)?;
                for (station, id) in &c.assignment {
                    println!("  {station}: cluster {id}");
                }
                Some(c)
            };
            if let Some(path) = report {
                let rep = Report { folds: vec![r.prf()], mean: r.prf(), sweep, clusters };
                std::fs::write(&path, rep.to_json()?)?;
            }
        }
        Cmd::Synth { config, out_dir, format } => {
            let cfg = match config {
                Some(p) => SynthConfig::from_toml(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => SynthConfig::default(),
            };
            let format = match format.as_str() {
                "bin" => TraceFormat::Bin,
                "csv" => TraceFormat::Csv,
                other => bail!("unknown trace format {other:?} (bin or csv)"),
            };
            let corpus = gen_corpus(&cfg)?;
            corpus.write(&out_dir, format)?;
            println!(
                "{} stations, {} events, {} labels, {} bursts -> {}",
                corpus.catalog.len(),
                corpus.events.len(),
                corpus.labels.len(),
                corpus.bursts.len(),
                out_dir.display()
            );
        }
        Cmd::Features { inputs, candidates, out, labels, post_s, config, neg_ratio, seed } => {
            let streams = read_traces(&inputs)?;
            let cfg = read_config(config.as_ref())?.unwrap_or_default();
            let fcfg = if config.is_some() { cfg.feature.clone() } else { FeatureConfig::with_post(post_s) };
            let labels = labels.as_deref().map(read_labels).transpose()?;
            let (names, rows) = match (candidates.as_str(), &labels) {
                ("auto-trigger", Some(labels)) => {
                    let opts = TrainingOptions { neg_ratio, seed, ..Default::default() };
                    build_training_set(&streams, labels, &cfg.trigger, &fcfg, &opts)?
                }
                (source, _) => {
                    let times: Vec<LabeledArrival> = if source == "auto-trigger" {
                        let mut v = Vec::new();
                        for s in &streams {
                            v.extend(
                                detect_triggers(s.z(), &cfg.trigger)?
                                    .into_iter()
                                    .map(|p| LabeledArrival { station_id: p.station_id, time: p.time }),
                            );
                        }
                        v
                    } else {
                        read_labels(Path::new(source))?
                    };
                    export_rows(&streams, &times, labels.as_deref(), &fcfg)?
                }
            };
            write_feature_matrix(&names, &rows, BufWriter::new(File::create(&out)?))?;
            let pos = rows.iter().filter(|r| r.label == Some(true)).count();
            println!("{} rows ({pos} positive) x {} features -> {}", rows.len(), names.len(), out.display());
        }
        Cmd::Bench { bundle, stations, inputs, report, parallel, config } => {
            let bundle = ModelBundle::load(&bundle)?;
            let catalog = read_stations(&stations)?;
            let streams = read_traces(&inputs)?;
            let cfg = pipeline_config(config.as_ref(), &bundle)?;
            let r = bench(&streams, Some(&bundle), &catalog, &cfg, Mode::Full, parallel)?;
            std::fs::write(&report, serde_json::to_string_pretty(&r)?)?;
            println!(
                "samples {} -> candidates {} -> classified {} -> refined {} -> associated {}",
                r.samples, r.candidates, r.classified, r.refined, r.associated
            );
            println!(
                "trigger {:.1} ns/sample, classifier {:.1} us/candidate, refiner {:.1} us/pick",
                r.trigger_ns_per_sample, r.classifier_us_per_candidate, r.refiner_us_per_pick
            );
            println!(
                "serial {:.2} s, parallel {:.2} s on {} threads, identical picks: {}",
                r.serial_wall_s, r.parallel_wall_s, r.threads, r.identical
            );
        }
    }
    Ok(())
}

/// Feature rows at the given times; rows are labeled when labels are given
/// (positive within 0.4 s of a label). Candidates without full coverage are skipped.
fn export_rows(
    streams: &[TriTrace],
    times: &[LabeledArrival],
    labels: Option<&[LabeledArrival]>,
    fcfg: &FeatureConfig,
) -> Result<(Vec<String>, Vec<FeatureRow>)> {
    let by_id: HashMap<&str, &TriTrace> = streams.iter().map(|s| (s.station_id(), s)).collect();
    let mut rows = Vec::new();
    for c in times {
        let Some(stream) = by_id.get(c.station_id.as_str()) else {
            bail!("no trace for station {}", c.station_id);
        };
        let Ok(win) = cut_window(stream, c.time, fcfg) else { continue };
        let fv = assemble(&win, fcfg)?;
        let label = labels.map(|ls| {
            ls.iter().any(|l| l.station_id == c.station_id && (l.time.micros() - c.time.micros()).abs() < 400_000)
        });
        rows.push(FeatureRow { station_id: c.station_id.clone(), time: c.time, label, values: fv.values });
    }
    Ok((fcfg.names(), rows))
}
