//! File formats: JSON-lines datasets and score files, leaf distributions,
//! binary model checkpoints and fixed-precision JSON reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError, LabelSet, NodeId};
use crate::inference::{InferenceError, LeafDistribution};
use crate::losses::{LossKind, MarginalTable};
use crate::metrics::EvalReport;
use crate::trainer::{LinearModel, Sample};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown label {name:?}")]
    UnknownLabel { line: usize, name: String },
    #[error("line {line}: empty label set")]
    EmptyLabels { line: usize },
    #[error("line {line}: label set is not closed under ancestors")]
    Incoherent { line: usize },
    #[error("line {line}: label set is not a single leaf path")]
    NotSinglePath { line: usize },
    #[error("line {line}: missing features")]
    MissingFeatures { line: usize },
    #[error("line {line}: expected {expected} values, got {got}")]
    Dimension {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: score {value} outside [0, 1]")]
    ScoreRange { line: usize, value: f64 },
    #[error("{truth} truth lines but {scores} score lines")]
    LineCount { truth: usize, scores: usize },
    #[error("leaf distribution: {0}")]
    LeafDistribution(String),
    #[error("model file: {0}")]
    Model(String),
}

impl IoError {
    /// Short machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            IoError::Json { .. } => "json",
            IoError::UnknownLabel { .. } => "unknown_label",
            IoError::EmptyLabels { .. } => "empty_labels",
            IoError::Incoherent { .. } => "incoherent_labels",
            IoError::NotSinglePath { .. } => "not_single_path",
            IoError::MissingFeatures { .. } => "missing_features",
            IoError::Dimension { .. } => "dimension_mismatch",
            IoError::ScoreRange { .. } => "score_range",
            IoError::LineCount { .. } => "line_count_mismatch",
            IoError::LeafDistribution(_) => "leaf_distribution",
            IoError::Model(_) => "model_format",
        }
    }

    /// 1-based line number, when the error concerns one line.
    pub fn line(&self) -> Option<usize> {
        match *self {
            IoError::Json { line, .. }
            | IoError::UnknownLabel { line, .. }
            | IoError::EmptyLabels { line }
            | IoError::Incoherent { line }
            | IoError::NotSinglePath { line }
            | IoError::MissingFeatures { line }
            | IoError::Dimension { line, .. }
            | IoError::ScoreRange { line, .. } => Some(line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DatasetOptions {
    /// Close incoherent label sets under ancestors instead of rejecting.
    pub augment: bool,
    pub require_single_path: bool,
    pub require_features: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub line: usize,
    pub labels: LabelSet,
    pub features: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawRow {
    labels: Vec<String>,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    scores: Vec<f64>,
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a JSON-lines dataset. Blank lines are skipped but still counted
/// for line numbers. Unknown fields are ignored.
pub fn parse_dataset(
    text: &str,
    h: &Hierarchy,
    opts: DatasetOptions,
) -> Result<Vec<DatasetRow>, IoError> {
    let mut rows: Vec<DatasetRow> = Vec::new();
    let mut dim = None;
    for (line, body) in numbered_lines(text) {
        let raw: RawRow = serde_json::from_str(body).map_err(|e| IoError::Json {
            line,
            message: e.to_string(),
        })?;
        if raw.labels.is_empty() {
            return Err(IoError::EmptyLabels { line });
        }
        let mut labels = LabelSet::new();
        for name in &raw.labels {
            match h.id(name) {
                Ok(y) if y != h.root() => {
                    labels.insert(y);
                }
                _ => {
                    return Err(IoError::UnknownLabel {
                        line,
                        name: name.clone(),
                    })
                }
            }
        }
        if !h.is_coherent(&labels) {
            if opts.augment {
                labels = h.augment(&labels);
            } else {
                return Err(IoError::Incoherent { line });
            }
        }
        if opts.require_single_path && !h.is_single_path_leaf(&labels) {
            return Err(IoError::NotSinglePath { line });
        }
        match (&raw.features, dim) {
            (None, _) if opts.require_features => return Err(IoError::MissingFeatures { line }),
            (Some(f), Some(d)) if f.len() != d => {
                return Err(IoError::Dimension {
                    line,
                    expected: d,
                    got: f.len(),
                })
            }
            (Some(f), None) => dim = Some(f.len()),
            _ => {}
        }
        rows.push(DatasetRow {
            line,
            labels,
            features: raw.features,
        });
    }
    Ok(rows)
}

/// Rows as training samples. Every row must carry features.
pub fn rows_to_samples(rows: &[DatasetRow]) -> Result<Vec<Sample>, IoError> {
    rows.iter()
        .map(|r| {
            Ok(Sample {
                features: r
                    .features
                    .clone()
                    .ok_or(IoError::MissingFeatures { line: r.line })?,
                labels: r.labels.clone(),
            })
        })
        .collect()
}

/// One JSON-lines dataset row per sample, labels by name.
pub fn write_dataset(samples: &[Sample], h: &Hierarchy) -> String {
    let mut out = String::new();
    for s in samples {
        let names: Vec<&str> = s.labels.iter().map(|y| h.name(y)).collect();
        let row = json!({ "labels": names, "features": s.features });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    out
}

/// Parses `{"scores": [...]}` lines, one marginal per non-root node.
pub fn parse_scores(text: &str, h: &Hierarchy) -> Result<Vec<MarginalTable>, IoError> {
    numbered_lines(text)
        .map(|(line, body)| {
            let row: ScoreRow = serde_json::from_str(body).map_err(|e| IoError::Json {
                line,
                message: e.to_string(),
            })?;
            if row.scores.len() != h.label_count() {
                return Err(IoError::Dimension {
                    line,
                    expected: h.label_count(),
                    got: row.scores.len(),
                });
            }
            if let Some(&value) = row.scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(IoError::ScoreRange { line, value });
            }
            Ok(MarginalTable(row.scores))
        })
        .collect()
}

pub fn write_scores(tables: &[MarginalTable]) -> String {
    let mut out = String::new();
    for t in tables {
        let row = ScoreRow {
            scores: t.as_slice().to_vec(),
        };
        out.push_str(&serde_json::to_string(&row).expect("finite scores serialize"));
        out.push('\n');
    }
    out
}

/// Reads a JSON object mapping leaf names to probabilities. Leaves that are
/// not listed get probability zero.
pub fn parse_leaf_distribution(text: &str, h: &Hierarchy) -> Result<LeafDistribution, IoError> {
    let map: BTreeMap<String, f64> =
        serde_json::from_str(text).map_err(|e| IoError::LeafDistribution(e.to_string()))?;
    let mut p = vec![0.0; h.leaves().len()];
    for (name, v) in map {
        let pos = h
            .id(&name)
            .ok()
            .and_then(|y| h.leaves().iter().position(|&l| l == y))
            .ok_or_else(|| IoError::LeafDistribution(format!("{name:?} is not a leaf")))?;
        p[pos] = v;
    }
    LeafDistribution::new(h, p).map_err(|e| match e {
        InferenceError::InvalidDistribution(m) => IoError::LeafDistribution(m),
        e => IoError::LeafDistribution(e.to_string()),
    })
}

const MAGIC: &[u8; 8] = b"HCLSMDL\0";
const VERSION: u32 = 1;

/// Serializes a model with its hierarchy: magic, version, loss kind,
/// feature dimension, node names and parents, then `W` row-major and `b`,
/// all little-endian.
pub fn encode_model(h: &Hierarchy, kind: LossKind, model: &LinearModel) -> Vec<u8> {
    fn put_str(out: &mut Vec<u8>, s: &str) {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, kind.as_str());
    out.extend_from_slice(&(model.dim as u64).to_le_bytes());
    out.extend_from_slice(&(h.node_count() as u64).to_le_bytes());
    for y in 0..h.node_count() {
        put_str(&mut out, h.name(y));
        let p = h.parent(y).map_or(u64::MAX, |p| p as u64);
        out.extend_from_slice(&p.to_le_bytes());
    }
    for v in model.weight.iter().chain(&model.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IoError::Model("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, IoError> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or_else(|| IoError::Model(format!("implausible length {n}")))
    }

    fn string(&mut self) -> Result<String, IoError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IoError::Model("name is not UTF-8".into()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(Hierarchy, LossKind, LinearModel), IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(IoError::Model("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(IoError::Model(format!("unsupported version {version}")));
    }
    let kind: LossKind = r
        .string()?
        .parse()
        .map_err(|e: crate::losses::LossError| IoError::Model(e.to_string()))?;
    let dim = r.len()?;
    let n = r.len()?;
    let mut names = Vec::with_capacity(n);
    let mut parents = Vec::with_capacity(n);
    for _ in 0..n {
        names.push(r.string()?);
        let p = r.u64()?;
        parents.push(if p == u64::MAX {
            None
        } else {
            Some(p as NodeId)
        });
    }
    let h = Hierarchy::from_parents(names, parents)
        .map_err(|e: HierarchyError| IoError::Model(e.to_string()))?;
    let rows = h.label_count();
    let count = rows
        .checked_mul(dim)
        .filter(|&c| c <= bytes.len())
        .ok_or_else(|| IoError::Model("implausible dimensions".into()))?;
    let weight = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let bias = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(IoError::Model("trailing bytes".into()));
    }
    Ok((h, kind, LinearModel { weight, bias, dim }))
}

/// Every report field, per-class F1 keyed by node name.
pub fn report_value(report: &EvalReport, h: &Hierarchy) -> Value {
    let per_class: Map<String, Value> = report
        .per_class_f1
        .iter()
        .map(|(&y, &v)| (h.name(y).to_owned(), json!(v)))
        .collect();
    let mut out = json!({
        "hamming": report.hamming,
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
        "samples_f1": report.samples_f1,
        "h_f1_micro": report.h_f1_micro,
        "h_f1_samples": report.h_f1_samples,
        "ih_f1_samples": report.ih_f1_samples,
        "c_micro_f1": report.c_micro_f1,
        "c_macro_f1": report.c_macro_f1,
        "per_class_f1": per_class,
    });
    if let Some(auc) = report.h_f1_auc {
        out["h_f1_auc"] = json!(auc);
    }
    out
}

/// Hamming loss in per mille, micro and macro F1, and hF1 AUC.
pub fn summary_report_value(report: &EvalReport) -> Value {
    let mut out = json!({
        "hamming_permille": report.hamming * 1000.0,
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
    });
    if let Some(auc) = report.h_f1_auc {
        out["h_f1_auc"] = json!(auc);
    }
    out
}

/// Pretty JSON with every floating-point number at 6 decimal places.
pub fn render_fixed(value: &Value) -> String {
    let mut out = String::new();
    render_into(value, 0, &mut out);
    out.push('\n');
    out
}

fn render_into(value: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match value {
        Value::Number(n) if n.is_f64() => out.push_str(&format!("{:.6}", n.as_f64().unwrap())),
        Value::Object(map) if !map.is_empty() => {
            out.push_str("{\n");
            for (i, (k, v)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                render_into(v, indent + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) if !items.is_empty() => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_into(v, indent, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::fixtures::{ids, t5};
    use crate::hierarchy::parse_taxonomy;

    #[test]
    fn dataset_rows_resolve_names() {
        let h = t5();
        let text = "{\"labels\": [\"1\", \"3\"], \"features\": [0.5, 1]}\n\n{\"labels\": [\"2\"], \"token\": \"x\", \"features\": [1, 2]}\n";
        let rows = parse_dataset(text, &h, DatasetOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].labels, ids(&h, &["1", "3"]));
        assert_eq!(rows[1].line, 3);
        assert_eq!(rows[1].features, Some(vec![1.0, 2.0]));
    }

    #[test]
    fn dataset_errors_cite_lines() {
        let h = t5();
        let opts = DatasetOptions::default();
        let err =
            parse_dataset("{\"labels\": [\"1\"]}\n{\"labels\": [\"9\"]}", &h, opts).unwrap_err();
        assert_eq!(
            err,
            IoError::UnknownLabel {
                line: 2,
                name: "9".into()
            }
        );
        let err = parse_dataset("{\"labels\": [\"r\"]}", &h, opts).unwrap_err();
        assert_eq!(err.line(), Some(1));
        let err = parse_dataset("{\"labels\": [\"3\"]}", &h, opts).unwrap_err();
        assert_eq!(err, IoError::Incoherent { line: 1 });
        let rows = parse_dataset(
            "{\"labels\": [\"3\"]}",
            &h,
            DatasetOptions {
                augment: true,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(rows[0].labels, ids(&h, &["1", "3"]));

        let single = DatasetOptions {
            require_single_path: true,
            ..opts
        };
        let err = parse_dataset(
            "{\"labels\": [\"1\", \"3\"]}\n{\"labels\": [\"1\", \"3\", \"5\"]}",
            &h,
            single,
        )
        .unwrap_err();
        assert_eq!(err, IoError::NotSinglePath { line: 2 });
        let err = parse_dataset("{\"labels\": [\"1\"]}", &h, single).unwrap_err();
        assert_eq!(err, IoError::NotSinglePath { line: 1 });

        let err = parse_dataset(
            "{\"labels\": [\"2\"], \"features\": [1]}\n{\"labels\": [\"2\"], \"features\": [1, 2]}",
            &h,
            opts,
        )
        .unwrap_err();
        assert_eq!(err.code(), "dimension_mismatch");
        let err = parse_dataset(
            "{\"labels\": [\"2\"]}",
            &h,
            DatasetOptions {
                require_features: true,
                ..opts
            },
        )
        .unwrap_err();
        assert_eq!(err, IoError::MissingFeatures { line: 1 });
        assert!(matches!(
            parse_dataset("{\"labels\": \"2\"}", &h, opts),
            Err(IoError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn scores_round_trip_exactly() {
        let h = t5();
        let tables = vec![
            MarginalTable(vec![0.1, 0.9, 1.0 / 3.0, 0.0, 1.0]),
            MarginalTable(vec![0.123456789012345, 0.5, 0.25, 2e-17, 0.75]),
        ];
        let text = write_scores(&tables);
        assert_eq!(parse_scores(&text, &h).unwrap(), tables);
        assert!(matches!(
            parse_scores("{\"scores\": [0.1]}", &h),
            Err(IoError::Dimension { .. })
        ));
        assert!(matches!(
            parse_scores("{\"scores\": [0.1, 0.2, 0.3, 0.4, 1.5]}", &h),
            Err(IoError::ScoreRange { .. })
        ));
    }

    #[test]
    fn leaf_distribution_by_name() {
        let h = t5();
        let d = parse_leaf_distribution("{\"2\": 0.25, \"3\": 0.2, \"4\": 0.2, \"5\": 0.35}", &h)
            .unwrap();
        assert_eq!(d.probabilities(), &[0.25, 0.2, 0.2, 0.35]);
        let d = parse_leaf_distribution("{\"5\": 1.0}", &h).unwrap();
        assert_eq!(d.probabilities(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(parse_leaf_distribution("{\"1\": 1.0}", &h).is_err());
        assert!(parse_leaf_distribution("{\"5\": 0.5}", &h).is_err());
    }

    #[test]
    fn model_round_trip() {
        let h = parse_taxonomy("top\tx\ty\nx\tx1\tx2").unwrap();
        let model = LinearModel {
            weight: (0..8).map(|i| i as f64 * 0.1 - 0.3).collect(),
            bias: vec![1.0, -2.0, 0.5, f64::MIN_POSITIVE],
            dim: 2,
        };
        let bytes = encode_model(&h, LossKind::CondSoftmaxLa, &model);
        let (h2, kind, m2) = decode_model(&bytes).unwrap();
        assert_eq!(h2.to_tsv(), h.to_tsv());
        assert_eq!(kind, LossKind::CondSoftmaxLa);
        assert_eq!(m2, model);
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_model(b"nonsense").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
    }

    #[test]
    fn fixed_rendering() {
        let v = json!({"b": 0.5, "a": {"n": 3, "x": 1.0 / 3.0}, "l": [0.25, 1.0]});
        assert_eq!(
            render_fixed(&v),
            "{\n  \"a\": {\n    \"n\": 3,\n    \"x\": 0.333333\n  },\n  \"b\": 0.500000,\n  \"l\": [0.250000, 1.000000]\n}\n"
        );
    }
}
