//! Probability models over a label tree and their training losses.
//!
//! Every loss takes one logit per non-root node (node `y` at index `y - 1`)
//! and returns its value in nats together with the gradient with respect
//! to those logits. Chaining into model parameters is the trainer's job.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, LabelSet, NodeId, ROOT};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LossError {
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite logit at node {0}")]
    NonFiniteLogits(NodeId),
    #[error("prior for node {0} is zero or invalid but the adjustment is active")]
    NonFinitePrior(NodeId),
    #[error("label set is not the ancestor chain of a single leaf")]
    NotSinglePathLeaf,
    #[error("label set is not closed under ancestors")]
    IncoherentLabels,
    #[error("node {0} was never observed and smoothing is disabled")]
    ZeroCountPrior(NodeId),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("unknown loss kind {0:?}")]
    UnknownKind(String),
}

/// Raw scores, one per non-root node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn zeros(h: &Hierarchy) -> Self {
        Logits(vec![0.0; h.label_count()])
    }

    pub fn get(&self, y: NodeId) -> f64 {
        self.0[y - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn validate(&self, h: &Hierarchy) -> Result<(), LossError> {
        check_len(h, self.0.len())?;
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(LossError::NonFiniteLogits(i + 1)),
            None => Ok(()),
        }
    }
}

fn check_len(h: &Hierarchy, got: usize) -> Result<(), LossError> {
    if got == h.label_count() {
        Ok(())
    } else {
        Err(LossError::DimensionMismatch {
            expected: h.label_count(),
            got,
        })
    }
}

/// Per-node probability of `y` given its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondTable(pub Vec<f64>);

impl CondTable {
    pub fn get(&self, y: NodeId) -> f64 {
        self.0[y - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Marginals by multiplying conditionals down each ancestor chain.
    pub fn to_marginals(&self, h: &Hierarchy) -> MarginalTable {
        let mut marg = vec![0.0; h.label_count()];
        for &y in h.preorder().iter().skip(1) {
            let p = h.parent(y).unwrap();
            let up = if p == ROOT { 1.0 } else { marg[p - 1] };
            marg[y - 1] = up * self.0[y - 1];
        }
        MarginalTable(marg)
    }
}

/// Per-node marginal probability `P(y | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable(pub Vec<f64>);

impl MarginalTable {
    pub fn get(&self, y: NodeId) -> f64 {
        self.0[y - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Estimated `ν(y | π(y))` per non-root node plus the adjustment strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    nu: Vec<f64>,
    tau_adjust: f64,
}

impl Prior {
    /// Wraps explicit prior values. Entries must lie in `[0, 1]`; zeros
    /// are accepted here and rejected when the adjustment is applied.
    pub fn new(h: &Hierarchy, nu: Vec<f64>, tau_adjust: f64) -> Result<Self, LossError> {
        check_len(h, nu.len())?;
        if let Some(i) = nu.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(LossError::NonFinitePrior(i + 1));
        }
        if !(tau_adjust >= 0.0 && tau_adjust.is_finite()) {
            return Err(LossError::NegativeWeight(tau_adjust));
        }
        Ok(Prior { nu, tau_adjust })
    }

    /// `1 / |siblings|` for every node.
    pub fn uniform(h: &Hierarchy, tau_adjust: f64) -> Self {
        let nu = h
            .labels()
            .map(|y| 1.0 / h.children(h.parent(y).unwrap()).len() as f64)
            .collect();
        Prior { nu, tau_adjust }
    }

    pub fn nu(&self, y: NodeId) -> f64 {
        self.nu[y - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.nu
    }

    pub fn tau_adjust(&self) -> f64 {
        self.tau_adjust
    }

    pub fn with_tau(mut self, tau_adjust: f64) -> Self {
        self.tau_adjust = tau_adjust;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Add one pseudo-count to every node.
    #[default]
    Laplace1,
    None,
}

impl FromStr for Smoothing {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "laplace1" => Ok(Smoothing::Laplace1),
            "none" => Ok(Smoothing::None),
            other => Err(LossError::UnknownKind(other.to_owned())),
        }
    }
}

/// Empirical `ν(y | π(y))` from training label sets. Each sibling group is
/// normalized by its own (smoothed) total, which equals the parent count
/// whenever every set is a full leaf path.
pub fn estimate_prior(
    h: &Hierarchy,
    label_sets: &[LabelSet],
    smoothing: Smoothing,
    tau_adjust: f64,
) -> Result<Prior, LossError> {
    let mut counts = vec![0u64; h.node_count()];
    counts[ROOT] = label_sets.len() as u64;
    for s in label_sets {
        if !h.is_coherent(s) {
            return Err(LossError::IncoherentLabels);
        }
        for y in s.iter() {
            counts[y] += 1;
        }
    }
    let alpha = match smoothing {
        Smoothing::Laplace1 => 1.0,
        Smoothing::None => 0.0,
    };
    let mut nu = vec![0.0; h.label_count()];
    for p in h.internal_nodes() {
        let group = h.children(p);
        if alpha == 0.0 {
            if let Some(&c) = group.iter().find(|&&c| counts[c] == 0) {
                return Err(LossError::ZeroCountPrior(c));
            }
        }
        let total: f64 = group.iter().map(|&c| counts[c] as f64 + alpha).sum();
        for &c in group {
            nu[c - 1] = (counts[c] as f64 + alpha) / total;
        }
    }
    Prior::new(h, nu, tau_adjust)
}

/// Gradient and value of a loss with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the children of `parent`, with optional logit adjustment.
/// Returns `(log-sum-exp, adjusted logits)`; conditionals follow as
/// `exp(adjusted - lse)`.
fn group_softmax(
    h: &Hierarchy,
    s: &Logits,
    prior: Option<&Prior>,
    parent: NodeId,
) -> Result<(f64, Vec<f64>), LossError> {
    let group = h.children(parent);
    let mut z = Vec::with_capacity(group.len());
    for &c in group {
        let mut v = s.get(c);
        if let Some(prior) = prior {
            if prior.tau_adjust != 0.0 {
                let nu = prior.nu(c);
                if nu <= 0.0 {
                    return Err(LossError::NonFinitePrior(c));
                }
                v += prior.tau_adjust * nu.ln();
            }
        }
        z.push(v);
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    Ok((max + sum.ln(), z))
}

/// Per-sibling-group softmax conditionals (optionally logit-adjusted by
/// `τ·log ν`) and their marginals.
pub fn cond_softmax_forward(
    h: &Hierarchy,
    s: &Logits,
    prior: Option<&Prior>,
) -> Result<(CondTable, MarginalTable), LossError> {
    s.validate(h)?;
    if let Some(p) = prior {
        check_len(h, p.nu.len())?;
    }
    let mut cond = vec![0.0; h.label_count()];
    for p in h.internal_nodes() {
        let (lse, z) = group_softmax(h, s, prior, p)?;
        let exps: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        // renormalize so each group sums to one up to a single rounding
        let total: f64 = exps.iter().sum();
        for (&c, e) in h.children(p).iter().zip(exps) {
            cond[c - 1] = e / total;
        }
    }
    let cond = CondTable(cond);
    let marg = cond.to_marginals(h);
    Ok((cond, marg))
}

/// Cross-entropy of the leaf path, decomposed as `-Σ_{y∈Y} log P(y|x,π(y))`.
/// The gradient is `P(k|x,π(k)) - 1[k ∈ Y]` on the sibling groups met along
/// the path and zero elsewhere.
pub fn cond_softmax_loss(
    h: &Hierarchy,
    s: &Logits,
    y_set: &LabelSet,
    prior: Option<&Prior>,
) -> Result<LossOutput, LossError> {
    s.validate(h)?;
    if let Some(p) = prior {
        check_len(h, p.nu.len())?;
    }
    if !h.is_single_path_leaf(y_set) {
        return Err(LossError::NotSinglePathLeaf);
    }
    let mut grad = vec![0.0; h.label_count()];
    let mut value = 0.0;
    for z in y_set.iter() {
        let p = h.parent(z).unwrap();
        let (lse, adjusted) = group_softmax(h, s, prior, p)?;
        for (&c, v) in h.children(p).iter().zip(adjusted) {
            let target = if c == z { 1.0 } else { 0.0 };
            if c == z {
                value += lse - v;
            }
            grad[c - 1] = (v - lse).exp() - target;
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: grad,
    })
}

/// Independent sigmoids read as conditionals `P(y|x,π(y))`.
pub fn cond_sigmoid_forward(
    h: &Hierarchy,
    s: &Logits,
) -> Result<(CondTable, MarginalTable), LossError> {
    s.validate(h)?;
    let cond = CondTable(s.0.iter().map(|&v| sigmoid(v)).collect());
    let marg = cond.to_marginals(h);
    Ok((cond, marg))
}

/// Masked binary cross-entropy: only sibling groups of labels in `y_set`
/// contribute. Each group is counted once even when several of its members
/// are labels, and a member that is itself a label is never a negative.
pub fn cond_sigmoid_loss(
    h: &Hierarchy,
    s: &Logits,
    y_set: &LabelSet,
) -> Result<LossOutput, LossError> {
    s.validate(h)?;
    if !h.is_coherent(y_set) {
        return Err(LossError::IncoherentLabels);
    }
    let groups: BTreeSet<NodeId> = y_set.iter().map(|z| h.parent(z).unwrap()).collect();
    let mut grad = vec![0.0; h.label_count()];
    let mut value = 0.0;
    for p in groups {
        for &u in h.children(p) {
            let v = s.get(u);
            if y_set.contains(u) {
                value += softplus(-v);
                grad[u - 1] = sigmoid(v) - 1.0;
            } else {
                value += softplus(v);
                grad[u - 1] = sigmoid(v);
            }
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: grad,
    })
}

/// Independent per-node sigmoids, ignoring the hierarchy.
pub fn bce_forward(h: &Hierarchy, s: &Logits) -> Result<MarginalTable, LossError> {
    s.validate(h)?;
    Ok(MarginalTable(s.0.iter().map(|&v| sigmoid(v)).collect()))
}

fn weighted_bce(
    h: &Hierarchy,
    s: &Logits,
    y_set: &LabelSet,
    negative_weight: Option<&[f64]>,
) -> Result<LossOutput, LossError> {
    s.validate(h)?;
    let mut grad = vec![0.0; h.label_count()];
    let mut value = 0.0;
    for y in h.labels() {
        let v = s.get(y);
        if y_set.contains(y) {
            value += softplus(-v);
            grad[y - 1] = sigmoid(v) - 1.0;
        } else {
            let w = negative_weight.map_or(1.0, |w| w[y - 1]);
            value += w * softplus(v);
            grad[y - 1] = w * sigmoid(v);
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: grad,
    })
}

/// Plain binary cross-entropy summed over every non-root node.
pub fn bce_loss(h: &Hierarchy, s: &Logits, y_set: &LabelSet) -> Result<LossOutput, LossError> {
    weighted_bce(h, s, y_set, None)
}

/// Negative-class weights `1 + λ·d(y, Y ∪ {root}) / diameter`, where `d` is
/// the undirected tree distance. Labels in `y_set` get weight 1.
pub fn champ_weights(h: &Hierarchy, y_set: &LabelSet, lambda_weight: f64) -> Vec<f64> {
    let dist = h.distances_from(std::iter::once(ROOT).chain(y_set.iter()));
    let diameter = h.diameter().max(1) as f64;
    h.labels()
        .map(|y| {
            if y_set.contains(y) {
                1.0
            } else {
                1.0 + lambda_weight * dist[y] as f64 / diameter
            }
        })
        .collect()
}

/// BCE whose false-positive terms grow with the node's distance to the
/// target labels. This is a distance-weighted stand-in for CHAMP, not its
/// published formula. `lambda_weight = 0` reproduces [`bce_loss`] exactly.
pub fn champ_loss(
    h: &Hierarchy,
    s: &Logits,
    y_set: &LabelSet,
    lambda_weight: f64,
) -> Result<LossOutput, LossError> {
    if lambda_weight.is_nan() || lambda_weight < 0.0 {
        return Err(LossError::NegativeWeight(lambda_weight));
    }
    let w = champ_weights(h, y_set, lambda_weight);
    weighted_bce(h, s, y_set, Some(&w))
}

fn leaf_log_softmax(h: &Hierarchy, s: &Logits) -> (f64, Vec<f64>) {
    let leaves = h.leaves();
    let max = leaves
        .iter()
        .map(|&l| s.get(l))
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = leaves.iter().map(|&l| (s.get(l) - max).exp()).sum();
    let lse = max + sum.ln();
    (lse, leaves.iter().map(|&l| s.get(l) - lse).collect())
}

/// Softmax over leaves only; internal marginals are sums over their
/// leaves. Logits of internal nodes are ignored.
pub fn leaf_softmax_forward(h: &Hierarchy, s: &Logits) -> Result<MarginalTable, LossError> {
    s.validate(h)?;
    let (_, logp) = leaf_log_softmax(h, s);
    let mut mass = vec![0.0; h.node_count()];
    for (&l, lp) in h.leaves().iter().zip(logp) {
        mass[l] = lp.exp();
    }
    for &y in h.preorder().iter().rev() {
        if !h.is_leaf(y) {
            mass[y] = h.children(y).iter().map(|&c| mass[c]).sum();
        }
    }
    Ok(MarginalTable(mass[1..].to_vec()))
}

/// Flat cross-entropy over leaves. The gradient is zero on internal nodes.
pub fn leaf_softmax_loss(
    h: &Hierarchy,
    s: &Logits,
    y_set: &LabelSet,
) -> Result<LossOutput, LossError> {
    s.validate(h)?;
    let target = h
        .single_path_leaf(y_set)
        .ok_or(LossError::NotSinglePathLeaf)?;
    let (lse, logp) = leaf_log_softmax(h, s);
    let mut grad = vec![0.0; h.label_count()];
    for (&l, lp) in h.leaves().iter().zip(logp) {
        grad[l - 1] = lp.exp() - if l == target { 1.0 } else { 0.0 };
    }
    Ok(LossOutput {
        value: lse - s.get(target),
        grad_logits: grad,
    })
}

/// The six trainable probability models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Champ,
    LeafSoftmax,
    CondSoftmax,
    CondSoftmaxLa,
    CondSigmoid,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Bce,
        LossKind::Champ,
        LossKind::LeafSoftmax,
        LossKind::CondSoftmax,
        LossKind::CondSoftmaxLa,
        LossKind::CondSigmoid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Champ => "champ",
            LossKind::LeafSoftmax => "leaf_softmax",
            LossKind::CondSoftmax => "cond_softmax",
            LossKind::CondSoftmaxLa => "cond_softmax_la",
            LossKind::CondSigmoid => "cond_sigmoid",
        }
    }

    /// Whether every training label set must be a full leaf path.
    pub fn requires_single_path(self) -> bool {
        matches!(
            self,
            LossKind::LeafSoftmax | LossKind::CondSoftmax | LossKind::CondSoftmaxLa
        )
    }

    /// Prediction-time marginals. The logit-adjusted model predicts with
    /// its raw logits, which target the class-balanced conditionals.
    pub fn marginals(self, h: &Hierarchy, s: &Logits) -> Result<MarginalTable, LossError> {
        match self {
            LossKind::Bce | LossKind::Champ => bce_forward(h, s),
            LossKind::LeafSoftmax => leaf_softmax_forward(h, s),
            LossKind::CondSoftmax | LossKind::CondSoftmaxLa => {
                cond_softmax_forward(h, s, None).map(|(_, m)| m)
            }
            LossKind::CondSigmoid => cond_sigmoid_forward(h, s).map(|(_, m)| m),
        }
    }

    /// Training loss. `prior` is only read by the logit-adjusted model and
    /// `lambda_weight` only by the distance-weighted BCE.
    pub fn loss(
        self,
        h: &Hierarchy,
        s: &Logits,
        y_set: &LabelSet,
        prior: Option<&Prior>,
        lambda_weight: f64,
    ) -> Result<LossOutput, LossError> {
        match self {
            LossKind::Bce => bce_loss(h, s, y_set),
            LossKind::Champ => champ_loss(h, s, y_set, lambda_weight),
            LossKind::LeafSoftmax => leaf_softmax_loss(h, s, y_set),
            LossKind::CondSoftmax => cond_softmax_loss(h, s, y_set, None),
            LossKind::CondSoftmaxLa => cond_softmax_loss(h, s, y_set, prior),
            LossKind::CondSigmoid => cond_sigmoid_loss(h, s, y_set),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LossError::UnknownKind(s.to_owned()))
    }
}
