//! The nine base classifiers behind one fit / predict-probability interface.
//!
//! Every model is deterministic in `(kind, data, seed)` and scores rows in
//! [0, 1]. Inputs are expected to be standardized already (the stacking layer
//! does that), which matters for the distance and margin based models.

mod knn;
mod linear;
mod nb;
mod svm;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use knn::Knn;
pub use linear::{fit_logistic, LinearSvm, Logistic};
pub use nb::GaussianNb;
pub use svm::PolySvm;
pub use tree::{presort, AdaBoost, Columns, Criterion, Forest, ForestParams, Node, Tree, TreeParams};

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<bool>,
    d: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        Dataset::from_flat(rows.concat(), d, y)
    }

    pub fn from_flat(x: Vec<f64>, d: usize, y: Vec<bool>) -> Result<Self> {
        if x.len() != d * y.len() {
            return Err(Error::InvalidDataset(format!("{} values for {} rows of width {d}", x.len(), y.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Dataset { x, y, d })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> bool {
        self.y[i]
    }

    pub fn labels(&self) -> &[bool] {
        &self.y
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&l| l).count()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        Dataset { x, y: rows.iter().map(|&r| self.y[r]).collect(), d: self.d }
    }

    /// Same rows with every value mapped through `f(column, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Dataset {
        let x = self.x.iter().enumerate().map(|(i, &v)| f(i % self.d, v)).collect();
        Dataset { x, y: self.y.clone(), d: self.d }
    }

    pub fn check_fittable(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidDataset("zero-width feature rows".into()));
        }
        let pos = self.positives();
        if self.len() < 2 || pos == 0 || pos == self.len() {
            return Err(Error::InvalidDataset(format!(
                "need both classes, got {pos} positive of {}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseModelKind {
    SvmLinear,
    SvmPoly,
    TreeGini,
    TreeEntropy,
    Knn,
    RandomForest,
    AdaBoost,
    LogisticRegression,
    GaussianNaiveBayes,
}

impl BaseModelKind {
    pub const ALL: [BaseModelKind; 9] = [
        BaseModelKind::SvmLinear,
        BaseModelKind::SvmPoly,
        BaseModelKind::TreeGini,
        BaseModelKind::TreeEntropy,
        BaseModelKind::Knn,
        BaseModelKind::RandomForest,
        BaseModelKind::AdaBoost,
        BaseModelKind::LogisticRegression,
        BaseModelKind::GaussianNaiveBayes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseModelKind::SvmLinear => "svm_linear",
            BaseModelKind::SvmPoly => "svm_poly",
            BaseModelKind::TreeGini => "tree_gini",
            BaseModelKind::TreeEntropy => "tree_entropy",
            BaseModelKind::Knn => "knn",
            BaseModelKind::RandomForest => "random_forest",
            BaseModelKind::AdaBoost => "adaboost",
            BaseModelKind::LogisticRegression => "logistic_regression",
            BaseModelKind::GaussianNaiveBayes => "gaussian_nb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum TrainedModel {
    SvmLinear(LinearSvm),
    SvmPoly(PolySvm),
    TreeGini(Tree),
    TreeEntropy(Tree),
    Knn(Knn),
    RandomForest(Forest),
    AdaBoost(AdaBoost),
    LogisticRegression(Logistic),
    GaussianNaiveBayes(GaussianNb),
}

pub const LOGISTIC_LAMBDA: f64 = 1e-4;
pub const LOGISTIC_MAX_ITER: usize = 500;
pub const LOGISTIC_TOL: f64 = 1e-8;

/// Fit one base model with the fixed hyperparameters.
pub fn fit(kind: BaseModelKind, data: &Dataset, seed: u64) -> Result<TrainedModel> {
    data.check_fittable()?;
    Ok(match kind {
        BaseModelKind::SvmLinear => TrainedModel::SvmLinear(LinearSvm::fit(data, 1.0, 200, seed)),
        BaseModelKind::SvmPoly => TrainedModel::SvmPoly(PolySvm::fit(data, seed)),
        BaseModelKind::TreeGini => {
            TrainedModel::TreeGini(Tree::fit(data, &TreeParams::cart(Criterion::Gini)))
        }
        BaseModelKind::TreeEntropy => {
            TrainedModel::TreeEntropy(Tree::fit(data, &TreeParams::cart(Criterion::Entropy)))
        }
        BaseModelKind::Knn => TrainedModel::Knn(Knn::fit(data, 5)),
        BaseModelKind::RandomForest => {
            TrainedModel::RandomForest(Forest::fit(data, &ForestParams::default_for(data.dim()), seed))
        }
        BaseModelKind::AdaBoost => TrainedModel::AdaBoost(AdaBoost::fit(data, 50)),
        BaseModelKind::LogisticRegression => TrainedModel::LogisticRegression(fit_logistic(
            data,
            LOGISTIC_LAMBDA,
            LOGISTIC_MAX_ITER,
            LOGISTIC_TOL,
        )),
        BaseModelKind::GaussianNaiveBayes => TrainedModel::GaussianNaiveBayes(GaussianNb::fit(data)),
    })
}

/// Anything that scores a feature row.
pub trait Classifier: Send + Sync {
    fn dim(&self) -> usize;
    /// Score of an already dimension-checked row.
    fn score(&self, x: &[f64]) -> f64;

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.score(x))
    }
}

/// Something that can be trained into a [`Classifier`].
pub trait Learner: Send + Sync {
    fn name(&self) -> String;
    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Classifier>>;
}

impl Learner for BaseModelKind {
    fn name(&self) -> String {
        BaseModelKind::name(*self).to_string()
    }

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Box<dyn Classifier>> {
        Ok(Box::new(fit(*self, data, seed)?))
    }
}

impl TrainedModel {
    pub fn kind(&self) -> BaseModelKind {
        match self {
            TrainedModel::SvmLinear(_) => BaseModelKind::SvmLinear,
            TrainedModel::SvmPoly(_) => BaseModelKind::SvmPoly,
            TrainedModel::TreeGini(_) => BaseModelKind::TreeGini,
            TrainedModel::TreeEntropy(_) => BaseModelKind::TreeEntropy,
            TrainedModel::Knn(_) => BaseModelKind::Knn,
            TrainedModel::RandomForest(_) => BaseModelKind::RandomForest,
            TrainedModel::AdaBoost(_) => BaseModelKind::AdaBoost,
            TrainedModel::LogisticRegression(_) => BaseModelKind::LogisticRegression,
            TrainedModel::GaussianNaiveBayes(_) => BaseModelKind::GaussianNaiveBayes,
        }
    }

    /// Internal margin where the model has one (the score is monotone in it).
    pub fn margin(&self, x: &[f64]) -> Option<f64> {
        match self {
            TrainedModel::SvmLinear(m) => Some(m.margin(x)),
            TrainedModel::SvmPoly(m) => Some(m.margin(x)),
            TrainedModel::LogisticRegression(m) => Some(m.margin(x)),
            TrainedModel::AdaBoost(m) => Some(m.margin(x)),
            _ => None,
        }
    }
}

impl Classifier for TrainedModel {
    fn dim(&self) -> usize {
        match self {
            TrainedModel::SvmLinear(m) => m.dim(),
            TrainedModel::SvmPoly(m) => m.dim(),
            TrainedModel::TreeGini(m) | TrainedModel::TreeEntropy(m) => m.dim(),
            TrainedModel::Knn(m) => m.dim(),
            TrainedModel::RandomForest(m) => m.dim(),
            TrainedModel::AdaBoost(m) => m.dim(),
            TrainedModel::LogisticRegression(m) => m.dim(),
            TrainedModel::GaussianNaiveBayes(m) => m.dim(),
        }
    }

    fn score(&self, x: &[f64]) -> f64 {
        let s = match self {
            TrainedModel::SvmLinear(m) => sigmoid(m.margin(x)),
            TrainedModel::SvmPoly(m) => sigmoid(m.margin(x)),
            TrainedModel::TreeGini(m) | TrainedModel::TreeEntropy(m) => m.predict(x),
            TrainedModel::Knn(m) => m.predict(x),
            TrainedModel::RandomForest(m) => m.predict(x),
            TrainedModel::AdaBoost(m) => sigmoid(m.margin(x)),
            TrainedModel::LogisticRegression(m) => sigmoid(m.margin(x)),
            TrainedModel::GaussianNaiveBayes(m) => m.predict(x),
        };
        s.clamp(0.0, 1.0)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Derive an independent seed for a sub-task.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}
