//! Hierarchical multi-label classification toolkit.
//!
//! * [`hierarchy`]: label trees, ancestor/descendant queries, coherence and
//!   augmentation of label sets.
//! * [`metrics`]: multi-label, hierarchical (hF1, ihF1) and path-constrained
//!   metrics.
//! * [`losses`]: BCE, distance-weighted BCE, leaf softmax, conditional
//!   softmax (optionally logit-adjusted) and conditional sigmoid, each with
//!   analytic gradients with respect to the logits.
//! * [`inference`]: threshold and top-down decoding, expected hF1 and
//!   risk-minimizing prefix search, hF1 precision-recall curves.
//! * [`trainer`]: linear score heads trained by mini-batch gradient descent
//!   and a synthetic imbalanced dataset generator.
//! * [`io`]: dataset, score and model file formats used by the CLI.

pub mod hierarchy;
pub mod inference;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod trainer;

pub use hierarchy::{parse_taxonomy, Hierarchy, HierarchyError, LabelSet, NodeId, ROOT};
