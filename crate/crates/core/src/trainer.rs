//! Linear score heads `s = W·x + b` trained by mini-batch gradient descent,
//! a synthetic long-tailed dataset generator, and model evaluation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, LabelSet, NodeId};
use crate::inference::{
    hf1_pr_curve, threshold_predict, topdown_predict_marginals, AucMode, InferenceError, PRCurve,
};
use crate::losses::{estimate_prior, Logits, LossError, LossKind, MarginalTable, Smoothing};
use crate::metrics::{evaluate, EvalPair, EvalReport, MacroAveraging, MetricError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: expected {expected} features, got {got}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("sample {index}: {kind} needs single-path leaf labels")]
    IncompatibleLossForDataset { kind: LossKind, index: usize },
    #[error("sample {0}: label set is not closed under ancestors")]
    IncoherentLabels(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model has {got} rows, hierarchy needs {expected}")]
    ModelShape { expected: usize, got: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// One feature vector and its label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub labels: LabelSet,
}

/// Row-major `weight` of shape `rows × dim`, one row per non-root node.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
}

impl LinearModel {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        LinearModel {
            weight: vec![0.0; rows * dim],
            bias: vec![0.0; rows],
            dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weight[k * self.dim..(k + 1) * self.dim]
    }

    pub fn forward(&self, features: &[f64]) -> Result<Logits, TrainError> {
        if features.len() != self.dim {
            return Err(TrainError::DimensionMismatch {
                index: 0,
                expected: self.dim,
                got: features.len(),
            });
        }
        Ok(Logits(
            (0..self.rows())
                .map(|k| {
                    self.row(k)
                        .iter()
                        .zip(features)
                        .fold(self.bias[k], |acc, (w, x)| acc + w * x)
                })
                .collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau_adjust: f64,
    pub lambda_champ: f64,
    pub smoothing: Smoothing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::CondSoftmax,
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            tau_adjust: 1.0,
            lambda_champ: 1.0,
            smoothing: Smoothing::Laplace1,
        }
    }
}

fn check_dataset(data: &[Sample], h: &Hierarchy) -> Result<usize, TrainError> {
    let first = data.first().ok_or(TrainError::EmptyDataset)?;
    let dim = first.features.len();
    for (i, s) in data.iter().enumerate() {
        if s.features.len() != dim {
            return Err(TrainError::DimensionMismatch {
                index: i,
                expected: dim,
                got: s.features.len(),
            });
        }
        if !h.is_coherent(&s.labels) {
            return Err(TrainError::IncoherentLabels(i));
        }
    }
    Ok(dim)
}

/// Trains a linear head from zero initialization. Returns the model and the
/// mean training loss of each epoch, each sample's loss taken just before
/// its batch update.
pub fn train(
    data: &[Sample],
    h: &Hierarchy,
    config: &TrainConfig,
) -> Result<(LinearModel, Vec<f64>), TrainError> {
    let dim = check_dataset(data, h)?;
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "learning rate {}",
            config.learning_rate
        )));
    }
    if config.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size 0".into()));
    }
    let kind = config.loss_kind;
    if kind.requires_single_path() {
        if let Some(index) = data.iter().position(|s| !h.is_single_path_leaf(&s.labels)) {
            return Err(TrainError::IncompatibleLossForDataset { kind, index });
        }
    }
    let prior = if kind == LossKind::CondSoftmaxLa {
        let sets: Vec<LabelSet> = data.iter().map(|s| s.labels.clone()).collect();
        Some(estimate_prior(
            h,
            &sets,
            config.smoothing,
            config.tau_adjust,
        )?)
    } else {
        None
    };

    let rows = h.label_count();
    let mut model = LinearModel::zeros(rows, dim);
    let mut grad_w = vec![0.0; rows * dim];
    let mut grad_b = vec![0.0; rows];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad_w.fill(0.0);
            grad_b.fill(0.0);
            for &i in batch {
                let x = &data[i].features;
                let s = model.forward(x)?;
                let out = kind.loss(h, &s, &data[i].labels, prior.as_ref(), config.lambda_champ)?;
                total += out.value;
                for (k, &g) in out.grad_logits.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[k] += g;
                    for (gw, xv) in grad_w[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                        *gw += g * xv;
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for (w, g) in model.weight.iter_mut().zip(&grad_w) {
                *w -= step * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
        }
        curve.push(total / data.len() as f64);
    }
    Ok((model, curve))
}

/// Generated samples plus the ground truth used to draw them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub samples: Vec<Sample>,
    /// Unit-norm prototype per leaf, in [`Hierarchy::leaves`] order.
    pub prototypes: Vec<Vec<f64>>,
    /// Leaf of each sample.
    pub leaves: Vec<NodeId>,
    /// Leaves from most to least frequent.
    pub frequency_order: Vec<NodeId>,
}

/// Draws `n` single-path samples. Leaves are ranked in a seeded random
/// order and drawn with probability proportional to `rank^-alpha`; each
/// sample is its leaf's prototype plus isotropic noise of standard
/// deviation `noise_sigma`.
///
/// Every node gets a Gaussian direction and a leaf prototype is the
/// normalized sum of the directions along its ancestor chain, so samples
/// under a common ancestor share a component.
pub fn generate_synthetic(
    h: &Hierarchy,
    n: usize,
    d: usize,
    noise_sigma: f64,
    imbalance_alpha: f64,
    seed: u64,
) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = h.leaves();
    let directions: Vec<Vec<f64>> = (0..h.node_count())
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let prototypes: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&leaf| {
            let mut v = vec![0.0; d];
            for z in h.ancestors_unchecked(leaf) {
                for (acc, g) in v.iter_mut().zip(&directions[z]) {
                    *acc += g;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut ranked: Vec<usize> = (0..leaves.len()).collect();
    ranked.shuffle(&mut rng);
    let weights: Vec<f64> = (1..=ranked.len())
        .map(|r| (r as f64).powf(-imbalance_alpha))
        .collect();
    let pick = WeightedIndex::new(&weights).expect("rank weights are positive");

    let mut samples = Vec::with_capacity(n);
    let mut drawn = Vec::with_capacity(n);
    for _ in 0..n {
        let li = ranked[pick.sample(&mut rng)];
        let features = prototypes[li]
            .iter()
            .map(|&p| {
                let z: f64 = StandardNormal.sample(&mut rng);
                p + noise_sigma * z
            })
            .collect();
        let leaf = leaves[li];
        samples.push(Sample {
            features,
            labels: h.ancestors_unchecked(leaf).into_iter().collect(),
        });
        drawn.push(leaf);
    }
    SyntheticData {
        samples,
        prototypes,
        leaves: drawn,
        frequency_order: ranked.into_iter().map(|i| leaves[i]).collect(),
    }
}

/// How predictions are read off the marginals during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inference {
    /// `{y : P(y|x) > tau}`.
    Threshold(f64),
    /// Greedy most-probable-child descent.
    TopDown,
    /// Threshold 0.5 for the report plus the full hF1 precision-recall
    /// sweep.
    Auc,
}

/// Marginals of every sample under `kind`'s prediction-time model.
pub fn predict_marginals(
    model: &LinearModel,
    data: &[Sample],
    h: &Hierarchy,
    kind: LossKind,
) -> Result<Vec<MarginalTable>, TrainError> {
    if model.rows() != h.label_count() {
        return Err(TrainError::ModelShape {
            expected: h.label_count(),
            got: model.rows(),
        });
    }
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            let logits = model.forward(&s.features).map_err(|e| match e {
                TrainError::DimensionMismatch { expected, got, .. } => {
                    TrainError::DimensionMismatch {
                        index: i,
                        expected,
                        got,
                    }
                }
                e => e,
            })?;
            Ok(kind.marginals(h, &logits)?)
        })
        .collect()
}

/// Applies `inference` to precomputed marginals and scores the result.
pub fn evaluate_marginals(
    marginals: &[MarginalTable],
    truths: &[LabelSet],
    h: &Hierarchy,
    inference: Inference,
    averaging: MacroAveraging,
) -> Result<(EvalReport, Option<PRCurve>), TrainError> {
    let pairs: Vec<EvalPair> = marginals
        .iter()
        .zip(truths)
        .map(|(m, t)| {
            let pred = match inference {
                Inference::Threshold(tau) => threshold_predict(m, tau),
                Inference::TopDown => topdown_predict_marginals(m, h),
                Inference::Auc => threshold_predict(m, 0.5),
            };
            EvalPair::new(t.clone(), pred)
        })
        .collect();
    let mut report = evaluate(&pairs, h, averaging)?;
    let curve = match inference {
        Inference::Auc => {
            let c = hf1_pr_curve(h, marginals, truths, AucMode::Trapezoid)?;
            report.h_f1_auc = Some(c.auc);
            Some(c)
        }
        _ => None,
    };
    Ok((report, curve))
}

pub fn evaluate_model(
    model: &LinearModel,
    data: &[Sample],
    h: &Hierarchy,
    kind: LossKind,
    inference: Inference,
) -> Result<(EvalReport, Option<PRCurve>), TrainError> {
    let marginals = predict_marginals(model, data, h, kind)?;
    let truths: Vec<LabelSet> = data.iter().map(|s| s.labels.clone()).collect();
    evaluate_marginals(
        &marginals,
        &truths,
        h,
        inference,
        MacroAveraging::AllClasses,
    )
}

/// Fraction of samples whose greedy top-down path ends at the true leaf.
pub fn leaf_accuracy(
    model: &LinearModel,
    data: &[Sample],
    h: &Hierarchy,
    kind: LossKind,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let marginals = predict_marginals(model, data, h, kind)?;
    let hits = marginals
        .iter()
        .zip(data)
        .filter(|(m, s)| topdown_predict_marginals(m, h) == s.labels)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
