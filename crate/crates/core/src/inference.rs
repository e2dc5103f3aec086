//! Decoding probability tables into label sets.
//!
//! Besides the usual threshold and greedy top-down rules this module scores
//! candidates by their expected hF1 under a leaf distribution, and sweeps
//! every threshold to build a samples-averaged hF1 precision-recall curve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, LabelSet, NodeId, ROOT};
use crate::losses::{CondTable, Logits, LossError, MarginalTable, Prior};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum InferenceError {
    #[error("candidate is not closed under ancestors")]
    IncoherentCandidate,
    #[error("candidate is empty")]
    EmptyCandidate,
    #[error("invalid leaf distribution: {0}")]
    InvalidDistribution(String),
    #[error("{tables} probability tables but {truths} truth sets")]
    MisalignedInputs { tables: usize, truths: usize },
    #[error("no samples")]
    EmptyEvaluation,
    #[error("sample {0}: empty truth label set")]
    EmptyTruth(usize),
    #[error("sample {index}: expected {expected} scores, got {got}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("prior for node {0} must be positive")]
    NonFinitePrior(NodeId),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// `{y : P(y|x) > tau}`. The result is not augmented.
pub fn threshold_predict(m: &MarginalTable, tau: f64) -> LabelSet {
    m.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > tau)
        .map(|(i, _)| i + 1)
        .collect()
}

fn greedy_descent(h: &Hierarchy, score: impl Fn(NodeId) -> f64) -> LabelSet {
    let mut out = LabelSet::new();
    let mut y = ROOT;
    while !h.is_leaf(y) {
        let mut best = h.children(y)[0];
        for &c in h.children(y) {
            let (sc, sb) = (score(c), score(best));
            if sc > sb || (sc == sb && c < best) {
                best = c;
            }
        }
        out.insert(best);
        y = best;
    }
    out
}

/// Greedy root-to-leaf walk, taking the most probable child at each step.
/// Ties go to the smallest id.
pub fn topdown_predict(c: &CondTable, h: &Hierarchy) -> LabelSet {
    greedy_descent(h, |y| c.get(y))
}

/// The same walk driven by marginals. Siblings share a parent marginal,
/// so the argmax child agrees with [`topdown_predict`] on conditionals
/// derived from these marginals.
pub fn topdown_predict_marginals(m: &MarginalTable, h: &Hierarchy) -> LabelSet {
    greedy_descent(h, |y| m.get(y))
}

/// A probability distribution over the leaves, stored in
/// [`Hierarchy::leaves`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDistribution(Vec<f64>);

impl LeafDistribution {
    pub fn new(h: &Hierarchy, p: Vec<f64>) -> Result<Self, InferenceError> {
        if p.len() != h.leaves().len() {
            return Err(InferenceError::InvalidDistribution(format!(
                "expected {} leaf probabilities, got {}",
                h.leaves().len(),
                p.len()
            )));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(InferenceError::InvalidDistribution(format!(
                "invalid probability {v}"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(InferenceError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(LeafDistribution(p))
    }

    /// Reads leaf entries off a marginal table.
    pub fn from_marginals(h: &Hierarchy, m: &MarginalTable) -> Result<Self, InferenceError> {
        Self::new(h, h.leaves().iter().map(|&l| m.get(l)).collect())
    }

    /// All mass on one leaf.
    pub fn point_mass(h: &Hierarchy, leaf: NodeId) -> Result<Self, InferenceError> {
        let p = h
            .leaves()
            .iter()
            .map(|&l| if l == leaf { 1.0 } else { 0.0 })
            .collect();
        Self::new(h, p)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }
}

fn path_hf1(h: &Hierarchy, leaf: NodeId, candidate: &LabelSet) -> f64 {
    let depth = h.depth(leaf).unwrap_or(0);
    let mut overlap = 0usize;
    let mut y = leaf;
    while y != ROOT {
        if candidate.contains(y) {
            overlap += 1;
        }
        y = h.parent(y).unwrap();
    }
    // candidate is coherent, so it equals its own augmentation
    2.0 * overlap as f64 / (candidate.len() + depth) as f64
}

/// `E[hF1(Y, candidate)]` when `Y` is the ancestor chain of a leaf drawn
/// from `d`.
pub fn expected_hf1(
    h: &Hierarchy,
    d: &LeafDistribution,
    candidate: &LabelSet,
) -> Result<f64, InferenceError> {
    if candidate.is_empty() {
        return Err(InferenceError::EmptyCandidate);
    }
    if !h.is_coherent(candidate) {
        return Err(InferenceError::IncoherentCandidate);
    }
    Ok(h.leaves()
        .iter()
        .zip(&d.0)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&l, &p)| p * path_hf1(h, l, candidate))
        .sum())
}

/// Scores every ancestor chain `A(y)` by expected hF1 and returns the best.
/// Ties prefer the deeper candidate, then the smaller id.
pub fn best_prefix_prediction(h: &Hierarchy, d: &LeafDistribution) -> (LabelSet, f64) {
    let mut best: Option<(NodeId, f64)> = None;
    for y in h.labels() {
        let cand: LabelSet = h.ancestors_unchecked(y).into_iter().collect();
        let v = expected_hf1(h, d, &cand).expect("ancestor chains are coherent");
        let better = match best {
            None => true,
            Some((b, bv)) => {
                v > bv
                    || (v == bv
                        && (h.depth(y).unwrap(), std::cmp::Reverse(y))
                            > (h.depth(b).unwrap(), std::cmp::Reverse(b)))
            }
        };
        if better {
            best = Some((y, v));
        }
    }
    let (y, v) = best.expect("hierarchy has at least one label");
    (h.ancestors_unchecked(y).into_iter().collect(), v)
}

/// How the area under the hF1 precision-recall curve is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// Trapezoids between consecutive operating points.
    #[default]
    Trapezoid,
    /// Right-continuous steps at interpolated precision
    /// `max_{j ≥ i} P_j`.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    /// Operating points by strictly decreasing threshold.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

impl PRCurve {
    /// `threshold,hP,hR` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,hP,hR\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }
}

/// Per-sample step function: hP/hR after admitting the `j` highest
/// distinct scores.
struct SampleSteps {
    /// Distinct scores, descending.
    values: Vec<f64>,
    /// `(hP, hR)` with `j` values admitted, `j = 0..=values.len()`.
    steps: Vec<(f64, f64)>,
}

impl SampleSteps {
    fn new(h: &Hierarchy, m: &MarginalTable, truth: &LabelSet) -> Self {
        let mut order: Vec<NodeId> = h.labels().collect();
        order.sort_by(|&a, &b| m.get(b).total_cmp(&m.get(a)).then(a.cmp(&b)));
        let mut values: Vec<f64> = Vec::new();
        let mut steps = vec![(1.0, 0.0)];
        let mut aug = LabelSet::new();
        let mut overlap = 0usize;
        let mut i = 0;
        while i < order.len() {
            let v = m.get(order[i]);
            while i < order.len() && m.get(order[i]) == v {
                let mut y = order[i];
                while y != ROOT && aug.insert(y) {
                    if truth.contains(y) {
                        overlap += 1;
                    }
                    y = h.parent(y).unwrap();
                }
                i += 1;
            }
            values.push(v);
            steps.push((
                overlap as f64 / aug.len() as f64,
                overlap as f64 / truth.len() as f64,
            ));
        }
        SampleSteps { values, steps }
    }

    /// hP/hR of `{y : m(y) > tau}`.
    fn at(&self, tau: f64) -> (f64, f64) {
        let admitted = self.values.partition_point(|&v| v > tau);
        self.steps[admitted]
    }
}

/// Samples-averaged hF1 precision-recall curve over every distinct score.
///
/// Thresholds are the distinct marginal values across the dataset in
/// decreasing order, followed by `0` when every value is positive. Each
/// point predicts `{y : P(y|x) > threshold}`, so the first point (the
/// largest value) predicts nothing and sits at recall 0, precision 1.
pub fn hf1_pr_curve(
    h: &Hierarchy,
    marginal_tables: &[MarginalTable],
    truths: &[LabelSet],
    mode: AucMode,
) -> Result<PRCurve, InferenceError> {
    if marginal_tables.len() != truths.len() {
        return Err(InferenceError::MisalignedInputs {
            tables: marginal_tables.len(),
            truths: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(InferenceError::EmptyEvaluation);
    }
    for (i, (m, t)) in marginal_tables.iter().zip(truths).enumerate() {
        if t.is_empty() {
            return Err(InferenceError::EmptyTruth(i));
        }
        if m.len() != h.label_count() {
            return Err(InferenceError::DimensionMismatch {
                index: i,
                expected: h.label_count(),
                got: m.len(),
            });
        }
    }

    let samples: Vec<SampleSteps> = marginal_tables
        .iter()
        .zip(truths)
        .map(|(m, t)| SampleSteps::new(h, m, t))
        .collect();

    let mut thresholds: Vec<f64> = marginal_tables
        .iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    if thresholds.last().is_some_and(|&v| v > 0.0) {
        thresholds.push(0.0);
    }

    let n = samples.len() as f64;
    let points: Vec<CurvePoint> = thresholds
        .into_iter()
        .map(|tau| {
            let (mut p, mut r) = (0.0, 0.0);
            for s in &samples {
                let (sp, sr) = s.at(tau);
                p += sp;
                r += sr;
            }
            CurvePoint {
                threshold: tau,
                precision: p / n,
                recall: r / n,
            }
        })
        .collect();

    let auc = area(&points, mode);
    Ok(PRCurve { points, auc })
}

fn area(points: &[CurvePoint], mode: AucMode) -> f64 {
    let mut curve = Vec::with_capacity(points.len() + 1);
    curve.push((0.0, 1.0));
    curve.extend(points.iter().map(|p| (p.recall, p.precision)));
    let auc: f64 = match mode {
        AucMode::Trapezoid => curve
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum(),
        AucMode::Step => {
            let mut best_after = vec![0.0; curve.len()];
            let mut running: f64 = 0.0;
            for i in (0..curve.len()).rev() {
                running = running.max(curve[i].1);
                best_after[i] = running;
            }
            curve
                .windows(2)
                .enumerate()
                .map(|(i, w)| (w[1].0 - w[0].0) * best_after[i + 1])
                .sum()
        }
    };
    auc.clamp(0.0, 1.0)
}

/// Leaf maximizing `Σ_{z∈A(leaf)} log P̂(z|x,π(z)) - log ν(z|π(z))`, the
/// balanced-error decision rule. The logits are first normalized within
/// each sibling group, so the rule is the argmax of
/// `P̂(leaf|x) / Π_{z∈A(leaf)} ν(z|π(z))`. Ties go to the smallest id.
pub fn balanced_leaf_rule(
    h: &Hierarchy,
    s: &Logits,
    prior: &Prior,
) -> Result<NodeId, InferenceError> {
    if s.len() != h.label_count() || prior.values().len() != h.label_count() {
        return Err(LossError::DimensionMismatch {
            expected: h.label_count(),
            got: s.len().min(prior.values().len()),
        }
        .into());
    }
    if let Some(i) = prior.values().iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(InferenceError::NonFinitePrior(i + 1));
    }
    let mut path_score = vec![0.0; h.node_count()];
    for p in h.internal_nodes() {
        let kids = h.children(p);
        let max = kids
            .iter()
            .map(|&c| s.get(c))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + kids
                .iter()
                .map(|&c| (s.get(c) - max).exp())
                .sum::<f64>()
                .ln();
        for &c in kids {
            path_score[c] = path_score[p] + (s.get(c) - lse) - prior.nu(c).ln();
        }
    }
    let mut best = h.leaves()[0];
    for &l in h.leaves() {
        if path_score[l] > path_score[best] {
            best = l;
        }
    }
    Ok(best)
}
