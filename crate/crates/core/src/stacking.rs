//! Stacked ensemble: nine base models judged out-of-fold, combined by a
//! logistic-regression meta model.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodels::{self, fit_logistic, mix_seed, sigmoid, BaseModelKind, Classifier, Dataset, Learner, Logistic, TrainedModel};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureVector};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const META_LAMBDA: f64 = 1e-6;
pub const META_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub inner_folds: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig { inner_folds: 5, threshold: 0.5, seed: 0 }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_folds < 2 {
            return Err(Error::InvalidConfig(format!("inner_folds must be >= 2, got {}", self.inner_folds)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Per-feature z-scoring fitted on training rows; zero spread maps to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Standardizer {
        let (n, d) = (data.len() as f64, data.dim());
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Dataset {
        data.map_values(|j, v| (v - self.mean[j]) / self.std[j])
    }
}

/// Fold index per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InvalidDataset(format!(
                "{} rows of class {class} cannot fill {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

/// Out-of-fold score matrix (row-major, `n x learners`).
#[derive(Debug, Clone, PartialEq)]
pub struct Judgements {
    pub scores: Vec<f64>,
    pub models: usize,
    pub fold: Vec<usize>,
}

impl Judgements {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.models..(i + 1) * self.models]
    }
}

/// Score every row with models trained on the other folds. `data` should
/// already be standardized.
pub fn oof_judgements(data: &Dataset, fold: &[usize], learners: &[&dyn Learner], seed: u64) -> Result<Judgements> {
    let k = fold.iter().max().map_or(0, |m| m + 1);
    let m = learners.len();
    let tasks: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..m).map(move |j| (f, j))).collect();
    let results: Vec<Vec<(usize, f64)>> = tasks
        .par_iter()
        .map(|&(f, j)| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
            let model = learners[j].fit(&data.subset(&train), mix_seed(seed, (f * 64 + j) as u64))?;
            held.iter().map(|&i| Ok((i, model.predict_proba(data.row(i))?))).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![f64::NAN; data.len() * m];
    for (&(f, j), res) in tasks.iter().zip(results) {
        for (i, s) in res {
            debug_assert_eq!(fold[i], f, "judgement must come from the row's own held-out fold");
            scores[i * m + j] = s;
        }
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidDataset("a row received no out-of-fold judgement".into()));
    }
    Ok(Judgements { scores, models: m, fold: fold.to_vec() })
}

pub fn fit_meta(j: &Judgements, labels: &[bool]) -> Result<Logistic> {
    let d = Dataset::from_flat(j.scores.clone(), j.models, labels.to_vec())?;
    Ok(fit_logistic(&d, META_LAMBDA, META_MAX_ITER, 1e-10))
}

/// Standardize, judge out-of-fold and fit the meta model for arbitrary learners.
pub fn meta_model_with(data: &Dataset, cfg: &StackConfig, learners: &[&dyn Learner]) -> Result<(Standardizer, Judgements, Logistic)> {
    cfg.validate()?;
    data.check_fittable()?;
    let standardizer = Standardizer::fit(data);
    let z = standardizer.apply_dataset(data);
    let fold = stratified_folds(z.labels(), cfg.inner_folds, cfg.seed)?;
    let j = oof_judgements(&z, &fold, learners, cfg.seed)?;
    let meta = fit_meta(&j, z.labels())?;
    Ok((standardizer, j, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub feature_config: FeatureConfig,
    pub stack_config: StackConfig,
    pub standardizer: Standardizer,
    pub base_models: Vec<TrainedModel>,
    pub meta_weights: Vec<f64>,
    pub meta_intercept: f64,
}

pub fn train_stack(data: &Dataset, feature_names: Vec<String>, feature_config: FeatureConfig, cfg: &StackConfig) -> Result<ModelBundle> {
    if feature_names.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: feature_names.len() });
    }
    let learners: Vec<&dyn Learner> = BaseModelKind::ALL.iter().map(|k| k as &dyn Learner).collect();
    let (standardizer, _, meta) = meta_model_with(data, cfg, &learners)?;
    let z = standardizer.apply_dataset(data);
    let base_models = BaseModelKind::ALL
        .par_iter()
        .enumerate()
        .map(|(j, &kind)| basemodels::fit(kind, &z, mix_seed(cfg.seed, (1 << 20) + j as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        feature_names,
        feature_config,
        stack_config: cfg.clone(),
        standardizer,
        base_models,
        meta_weights: meta.weights,
        meta_intercept: meta.intercept,
    })
}

impl ModelBundle {
    pub fn threshold(&self) -> f64 {
        self.stack_config.threshold
    }

    /// Base model scores of a raw (unstandardized) row.
    pub fn base_scores(&self, raw: &[f64], parallel: bool) -> Result<Vec<f64>> {
        if raw.len() != self.standardizer.dim() {
            return Err(Error::DimensionMismatch { expected: self.standardizer.dim(), got: raw.len() });
        }
        let z = self.standardizer.apply(raw);
        if parallel {
            self.base_models.par_iter().map(|m| m.predict_proba(&z)).collect()
        } else {
            self.base_models.iter().map(|m| m.predict_proba(&z)).collect()
        }
    }

    pub fn combine(&self, scores: &[f64]) -> f64 {
        sigmoid(self.meta_intercept + self.meta_weights.iter().zip(scores).map(|(w, p)| w * p).sum::<f64>())
    }

    pub fn confidence_row(&self, raw: &[f64]) -> Result<f64> {
        Ok(self.combine(&self.base_scores(raw, false)?))
    }

    /// Meta-model confidence of a feature vector whose names must match.
    pub fn confidence(&self, fv: &FeatureVector) -> Result<f64> {
        self.check_names(&fv.names)?;
        self.confidence_row(&fv.values)
    }

    pub fn check_names(&self, names: &[String]) -> Result<()> {
        if names.len() != self.feature_names.len() {
            return Err(Error::FeatureMismatch(format!(
                "{} features, bundle expects {}",
                names.len(),
                self.feature_names.len()
            )));
        }
        if let Some((a, b)) = names.iter().zip(&self.feature_names).find(|(a, b)| a != b) {
            return Err(Error::FeatureMismatch(format!("got {a}, bundle expects {b}")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::BundleVersion(self.format_version));
        }
        let d = self.feature_names.len();
        if self.standardizer.dim() != d || self.standardizer.std.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.standardizer.dim() });
        }
        if self.meta_weights.len() != self.base_models.len() {
            return Err(Error::DimensionMismatch { expected: self.base_models.len(), got: self.meta_weights.len() });
        }
        if let Some(m) = self.base_models.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: m.dim() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<ModelBundle> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::BundleVersion(probe.format_version));
        }
        let b: ModelBundle = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        ModelBundle::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Strictly-greater acceptance.
pub fn classify(confidence: f64, threshold: f64) -> bool {
    confidence > threshold
}
