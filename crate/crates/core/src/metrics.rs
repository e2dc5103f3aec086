//! Evaluation metrics over (truth, prediction) label-set pairs.
//!
//! Multi-label metrics treat every non-root node as an independent binary
//! class. Hierarchical metrics first augment the prediction with all of its
//! ancestors. Path-constrained metrics only credit a predicted node when its
//! whole ancestor chain is predicted as well.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError, LabelSet, NodeId, ROOT};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no evaluation pairs")]
    EmptyEvaluation,
    #[error("pair {0}: truth label set is empty")]
    EmptyTruth(usize),
    #[error("pair {0}: truth label set carries no information")]
    ZeroInformationTruth(usize),
    #[error("expected {expected} train counts, got {got}")]
    TrainCountsMismatch { expected: usize, got: usize },
    #[error("bucket count must be positive")]
    ZeroBuckets,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Target and predicted labels of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub truth: LabelSet,
    pub pred: LabelSet,
}

impl EvalPair {
    pub fn new(truth: LabelSet, pred: LabelSet) -> Self {
        EvalPair { truth, pred }
    }
}

/// True positives, false positives and false negatives of one pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: LabelSet,
    pub fp: LabelSet,
    pub fn_: LabelSet,
}

pub fn confusion(pair: &EvalPair) -> Confusion {
    Confusion {
        tp: pair.pred.intersection(&pair.truth),
        fp: pair.pred.difference(&pair.truth),
        fn_: pair.truth.difference(&pair.pred),
    }
}

/// Confusion where a predicted node is valid only if all its ancestors are
/// predicted too. Invalid predictions count as false positives, and a true
/// label predicted invalidly is still a false negative.
pub fn constrained_confusion(pair: &EvalPair, h: &Hierarchy) -> Confusion {
    let valid: LabelSet = pair
        .pred
        .iter()
        .filter(|&y| {
            let mut z = y;
            while let Some(p) = h.parent(z) {
                if p == ROOT {
                    return true;
                }
                if !pair.pred.contains(p) {
                    return false;
                }
                z = p;
            }
            false
        })
        .collect();
    let tp = valid.intersection(&pair.truth);
    Confusion {
        fp: pair.pred.difference(&tp),
        fn_: pair.truth.difference(&valid),
        tp,
    }
}

/// How macro averaging treats classes that never occur in truth nor in
/// prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MacroAveraging {
    /// Absent classes score 0 and are averaged in.
    #[default]
    AllClasses,
    /// Absent classes are left out of the average.
    SkipAbsent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }
}

/// F1 from pooled counts: `2·overlap / (|pred| + |truth|)`, 0 when both are 0.
fn f1_from_sizes(overlap: u64, pred: u64, truth: u64) -> f64 {
    if pred + truth == 0 {
        0.0
    } else {
        2.0 * overlap as f64 / (pred + truth) as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn nonempty(pairs: &[EvalPair]) -> Result<(), MetricError> {
    if pairs.is_empty() {
        Err(MetricError::EmptyEvaluation)
    } else {
        Ok(())
    }
}

fn class_counts<F>(pairs: &[EvalPair], h: &Hierarchy, conf: F) -> Vec<Counts>
where
    F: Fn(&EvalPair) -> Confusion,
{
    let mut counts = vec![Counts::default(); h.label_count()];
    for pair in pairs {
        let c = conf(pair);
        for y in c.tp.iter() {
            counts[y - 1].tp += 1;
        }
        for y in c.fp.iter() {
            counts[y - 1].fp += 1;
        }
        for y in c.fn_.iter() {
            counts[y - 1].fn_ += 1;
        }
    }
    counts
}

fn per_class(counts: &[Counts], averaging: MacroAveraging) -> BTreeMap<NodeId, f64> {
    counts
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match (c.f1(), averaging) {
            (Some(f), _) => Some((i + 1, f)),
            (None, MacroAveraging::AllClasses) => Some((i + 1, 0.0)),
            (None, MacroAveraging::SkipAbsent) => None,
        })
        .collect()
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        n += 1;
        sum += v;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-class F1 keyed by node id. Under [`MacroAveraging::SkipAbsent`]
/// classes that never occur are omitted.
pub fn per_class_f1(
    pairs: &[EvalPair],
    h: &Hierarchy,
    averaging: MacroAveraging,
) -> BTreeMap<NodeId, f64> {
    per_class(&class_counts(pairs, h, confusion), averaging)
}

pub fn micro_f1(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let (mut tp, mut pred, mut truth) = (0u64, 0u64, 0u64);
    for p in pairs {
        tp += p.pred.intersection_len(&p.truth) as u64;
        pred += p.pred.len() as u64;
        truth += p.truth.len() as u64;
    }
    Ok(f1_from_sizes(tp, pred, truth))
}

pub fn macro_f1(
    pairs: &[EvalPair],
    h: &Hierarchy,
    averaging: MacroAveraging,
) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    Ok(mean(per_class_f1(pairs, h, averaging).into_values()))
}

pub fn samples_f1(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    Ok(mean(pairs.iter().map(|p| {
        f1_from_sizes(
            p.pred.intersection_len(&p.truth) as u64,
            p.pred.len() as u64,
            p.truth.len() as u64,
        )
    })))
}

/// Fraction of misclassified (sample, label) cells; the root is not a label.
pub fn hamming_loss(pairs: &[EvalPair], h: &Hierarchy) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let wrong: usize = pairs
        .iter()
        .map(|p| p.pred.len() + p.truth.len() - 2 * p.pred.intersection_len(&p.truth))
        .sum();
    Ok(wrong as f64 / (pairs.len() * h.label_count()) as f64)
}

/// Hierarchical precision and recall of one pair. An empty prediction has
/// precision 1 and recall 0.
pub fn h_precision_recall(pair: &EvalPair, h: &Hierarchy) -> Result<(f64, f64), MetricError> {
    if pair.truth.is_empty() {
        return Err(MetricError::EmptyTruth(0));
    }
    let aug = h.augment(&pair.pred);
    if aug.is_empty() {
        return Ok((1.0, 0.0));
    }
    let overlap = aug.intersection_len(&pair.truth) as f64;
    Ok((
        overlap / aug.len() as f64,
        overlap / pair.truth.len() as f64,
    ))
}

pub fn h_f1(pair: &EvalPair, h: &Hierarchy) -> Result<f64, MetricError> {
    let (p, r) = h_precision_recall(pair, h)?;
    Ok(harmonic(p, r))
}

fn indexed<T>(i: usize, r: Result<T, MetricError>) -> Result<T, MetricError> {
    r.map_err(|e| match e {
        MetricError::EmptyTruth(_) => MetricError::EmptyTruth(i),
        MetricError::ZeroInformationTruth(_) => MetricError::ZeroInformationTruth(i),
        other => other,
    })
}

/// Mean of per-pair hF1.
pub fn h_f1_samples(pairs: &[EvalPair], h: &Hierarchy) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let scores = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| indexed(i, h_f1(p, h)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(scores))
}

/// hF1 from counts pooled over all pairs.
pub fn h_f1_micro(pairs: &[EvalPair], h: &Hierarchy) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let (mut overlap, mut pred, mut truth) = (0u64, 0u64, 0u64);
    for (i, p) in pairs.iter().enumerate() {
        if p.truth.is_empty() {
            return Err(MetricError::EmptyTruth(i));
        }
        let aug = h.augment(&p.pred);
        overlap += aug.intersection_len(&p.truth) as u64;
        pred += aug.len() as u64;
        truth += p.truth.len() as u64;
    }
    Ok(f1_from_sizes(overlap, pred, truth))
}

/// Information content in bits: `log2|L| - log2|L ∩ D(y)|`.
pub fn info_content(h: &Hierarchy, y: NodeId) -> Result<f64, MetricError> {
    let under = h.leaves_under(y)?.len();
    Ok(ic(h.leaves().len(), under))
}

fn ic(total_leaves: usize, under: usize) -> f64 {
    (total_leaves as f64).log2() - (under as f64).log2()
}

/// Information content of a set of nodes, by the lca recursion
/// `I({y1..yn}) = I(y1) + I({y2..yn}) - I(∪_{i≥2} {lca(y1, yi)})`.
/// Members are sorted ascending before recursing so the result does not
/// depend on the caller's order.
pub fn info_content_set(h: &Hierarchy, s: &[NodeId]) -> Result<f64, MetricError> {
    for &y in s {
        if !h.contains(y) {
            return Err(HierarchyError::UnknownNode(y).into());
        }
    }
    let leaf_count = leaf_counts(h);
    let mut key = s.to_vec();
    key.sort_unstable();
    key.dedup();
    let mut memo = HashMap::new();
    Ok(set_ic(h, &leaf_count, &key, &mut memo))
}

fn leaf_counts(h: &Hierarchy) -> Vec<usize> {
    let mut counts = vec![0usize; h.node_count()];
    for &y in h.preorder().iter().rev() {
        counts[y] = if h.is_leaf(y) {
            1
        } else {
            h.children(y).iter().map(|&c| counts[c]).sum()
        };
    }
    counts
}

fn set_ic(
    h: &Hierarchy,
    leaf_count: &[usize],
    sorted: &[NodeId],
    memo: &mut HashMap<Vec<NodeId>, f64>,
) -> f64 {
    match sorted {
        [] => 0.0,
        [y] => ic(leaf_count[ROOT], leaf_count[*y]),
        [first, rest @ ..] => {
            if let Some(&v) = memo.get(sorted) {
                return v;
            }
            let mut lcas: Vec<NodeId> = rest.iter().map(|&y| h.lca_unchecked(*first, y)).collect();
            lcas.sort_unstable();
            lcas.dedup();
            let v = ic(leaf_count[ROOT], leaf_count[*first]) + set_ic(h, leaf_count, rest, memo)
                - set_ic(h, leaf_count, &lcas, memo);
            memo.insert(sorted.to_vec(), v);
            v
        }
    }
}

/// Information-based hierarchical F1 of one pair.
pub fn ih_f1(pair: &EvalPair, h: &Hierarchy) -> Result<f64, MetricError> {
    if pair.truth.is_empty() {
        return Err(MetricError::EmptyTruth(0));
    }
    let leaf_count = leaf_counts(h);
    let mut memo = HashMap::new();
    let mut info = |s: &LabelSet| {
        let v: Vec<NodeId> = s.iter().collect();
        set_ic(h, &leaf_count, &v, &mut memo)
    };
    let truth_info = info(&pair.truth);
    if truth_info <= 0.0 {
        return Err(MetricError::ZeroInformationTruth(0));
    }
    let aug = h.augment(&pair.pred);
    let overlap = info(&aug.intersection(&pair.truth));
    let aug_info = info(&aug);
    // an empty (or uninformative) prediction asserts nothing false
    let precision = if aug_info > 0.0 {
        overlap / aug_info
    } else {
        1.0
    };
    let recall = overlap / truth_info;
    Ok(harmonic(precision, recall))
}

pub fn ih_f1_samples(pairs: &[EvalPair], h: &Hierarchy) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let scores = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| indexed(i, ih_f1(p, h)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(scores))
}

/// Micro F1 over path-constrained confusion counts.
pub fn c_micro_f1(pairs: &[EvalPair], h: &Hierarchy) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for p in pairs {
        let c = constrained_confusion(p, h);
        tp += c.tp.len() as u64;
        fp += c.fp.len() as u64;
        fn_ += c.fn_.len() as u64;
    }
    Ok(f1_from_sizes(tp, tp + fp, tp + fn_))
}

pub fn c_macro_f1(
    pairs: &[EvalPair],
    h: &Hierarchy,
    averaging: MacroAveraging,
) -> Result<f64, MetricError> {
    nonempty(pairs)?;
    let counts = class_counts(pairs, h, |p| constrained_confusion(p, h));
    Ok(mean(per_class(&counts, averaging).into_values()))
}

/// Macro F1 restricted to the classes of each depth.
pub fn macro_f1_by_depth(
    pairs: &[EvalPair],
    h: &Hierarchy,
    averaging: MacroAveraging,
) -> Result<BTreeMap<usize, f64>, MetricError> {
    nonempty(pairs)?;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (y, f) in per_class_f1(pairs, h, averaging) {
        groups.entry(h.depth(y)?).or_default().push(f);
    }
    Ok(groups.into_iter().map(|(d, v)| (d, mean(v))).collect())
}

/// Macro F1 per training-frequency bucket. `train_counts[y - 1]` is the
/// training count of node `y`. Classes are ranked by (count, id) and rank
/// `r` of `n` goes to bucket `floor(r · buckets / n)`, so buckets hold
/// near-equal numbers of classes and bucket 0 holds the rarest.
pub fn macro_f1_by_quantile(
    pairs: &[EvalPair],
    h: &Hierarchy,
    train_counts: &[u64],
    buckets: usize,
    averaging: MacroAveraging,
) -> Result<BTreeMap<usize, f64>, MetricError> {
    nonempty(pairs)?;
    if buckets == 0 {
        return Err(MetricError::ZeroBuckets);
    }
    if train_counts.len() != h.label_count() {
        return Err(MetricError::TrainCountsMismatch {
            expected: h.label_count(),
            got: train_counts.len(),
        });
    }
    let mut ranked: Vec<NodeId> = h.labels().collect();
    ranked.sort_by_key(|&y| (train_counts[y - 1], y));
    let n = ranked.len();
    let bucket_of: HashMap<NodeId, usize> = ranked
        .iter()
        .enumerate()
        .map(|(r, &y)| (y, r * buckets / n))
        .collect();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (y, f) in per_class_f1(pairs, h, averaging) {
        groups.entry(bucket_of[&y]).or_default().push(f);
    }
    Ok(groups.into_iter().map(|(b, v)| (b, mean(v))).collect())
}

/// The full metric bundle. All values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hamming: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub samples_f1: f64,
    pub h_f1_micro: f64,
    pub h_f1_samples: f64,
    pub ih_f1_samples: f64,
    pub c_micro_f1: f64,
    pub c_macro_f1: f64,
    pub per_class_f1: BTreeMap<NodeId, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h_f1_auc: Option<f64>,
}

pub fn evaluate(
    pairs: &[EvalPair],
    h: &Hierarchy,
    averaging: MacroAveraging,
) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        hamming: hamming_loss(pairs, h)?,
        micro_f1: micro_f1(pairs)?,
        macro_f1: macro_f1(pairs, h, averaging)?,
        samples_f1: samples_f1(pairs)?,
        h_f1_micro: h_f1_micro(pairs, h)?,
        h_f1_samples: h_f1_samples(pairs, h)?,
        ih_f1_samples: ih_f1_samples(pairs, h)?,
        c_micro_f1: c_micro_f1(pairs, h)?,
        c_macro_f1: c_macro_f1(pairs, h, averaging)?,
        per_class_f1: per_class_f1(pairs, h, averaging),
        h_f1_auc: None,
    })
}
