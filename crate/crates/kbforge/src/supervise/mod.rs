//! Weak supervision: labeling functions, LF metrics, and the generative
//! label model.
//!
//! Labeling functions map a candidate to +1 (true), -1 (false), or 0
//! (abstain); applying l of them to k candidates yields the k-by-l label
//! matrix. The label model treats LFs as conditionally independent given the
//! latent truth, estimates a per-LF accuracy by expectation-maximization, and
//! produces a marginal probability per candidate for noise-aware training.

mod model;

pub use model::{
    fit_label_model, marginals, posterior, LabelModel, LabelModelConfig, SupervisionError,
};

use crate::cand::Candidate;
use crate::doc::Document;
use crate::sparse::{Representation, SparseMatrix};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("labeling function failure: {0}")]
pub struct LfFailure(pub String);

/// A labeling function: candidate in, vote out.
pub trait LabelingFunction: Send + Sync {
    fn name(&self) -> &str;
    fn label(&self, doc: &Document, candidate: &Candidate) -> Result<i8, LfFailure>;
}

/// The k-by-l matrix of LF votes with the LF names column order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub matrix: SparseMatrix,
    pub lf_names: Vec<String>,
}

impl LabelMatrix {
    pub fn num_candidates(&self) -> usize {
        self.matrix.shape().0
    }

    pub fn num_lfs(&self) -> usize {
        self.lf_names.len()
    }

    /// Votes per candidate as (lf index, vote) pairs in a dense row list.
    pub fn rows(&self) -> Vec<Vec<(usize, i8)>> {
        let mut rows = vec![Vec::new(); self.num_candidates()];
        for (r, c, v) in self.matrix.triples() {
            rows[r].push((c, v as i8));
        }
        rows
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ApplyStats {
    /// Per-LF counts of failures (exceptions or out-of-range votes), which
    /// are recorded as abstains.
    pub failures: Vec<u64>,
}

/// Apply LFs to candidates, producing the label matrix in the requested
/// representation (COO during development, LIL in production). Erroring LFs
/// abstain and bump their failure counter.
pub fn apply_lfs(
    lfs: &[&dyn LabelingFunction],
    docs: &HashMap<String, Document>,
    candidates: &[Candidate],
    repr: Representation,
) -> (LabelMatrix, ApplyStats) {
    let mut stats = ApplyStats { failures: vec![0; lfs.len()] };
    let mut triples = Vec::new();
    for (i, cand) in candidates.iter().enumerate() {
        let doc = docs
            .get(cand.doc_id())
            .unwrap_or_else(|| panic!("candidate references unknown document {:?}", cand.doc_id()));
        for (j, lf) in lfs.iter().enumerate() {
            match lf.label(doc, cand) {
                Ok(v @ (-1 | 0 | 1)) => {
                    if v != 0 {
                        triples.push((i, j, v as f64));
                    }
                }
                Ok(other) => {
                    stats.failures[j] += 1;
                    log::warn!("lf {} returned out-of-range vote {}", lf.name(), other);
                }
                Err(e) => {
                    stats.failures[j] += 1;
                    log::warn!("lf {} failed: {}", lf.name(), e);
                }
            }
        }
    }
    let matrix = SparseMatrix::from_triples(candidates.len(), lfs.len(), repr, triples);
    let lf_names = lfs.iter().map(|lf| lf.name().to_string()).collect();
    (LabelMatrix { matrix, lf_names }, stats)
}

/// Per-LF coverage, overlap, and conflict fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct LfMetrics {
    pub name: String,
    /// Fraction of candidates receiving a non-zero label from this LF.
    pub coverage: f64,
    /// Fraction also labeled by at least one other LF.
    pub overlap: f64,
    /// Fraction labeled with the opposite sign by some other LF.
    pub conflict: f64,
}

pub fn lf_metrics(labels: &LabelMatrix) -> Vec<LfMetrics> {
    let k = labels.num_candidates();
    let l = labels.num_lfs();
    let mut covered = vec![0usize; l];
    let mut overlapped = vec![0usize; l];
    let mut conflicted = vec![0usize; l];
    for row in labels.rows() {
        for &(j, v) in &row {
            covered[j] += 1;
            if row.len() > 1 {
                overlapped[j] += 1;
            }
            if row.iter().any(|&(_, v2)| v2 == -v) {
                conflicted[j] += 1;
            }
        }
    }
    let frac = |n: usize| if k == 0 { 0.0 } else { n as f64 / k as f64 };
    (0..l)
        .map(|j| LfMetrics {
            name: labels.lf_names[j].clone(),
            coverage: frac(covered[j]),
            overlap: frac(overlapped[j]),
            conflict: frac(conflicted[j]),
        })
        .collect()
}
