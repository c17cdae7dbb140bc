//! The generative label model: per-LF accuracies fitted by EM under the
//! conditional-independence assumption, yielding a marginal per candidate.
//!
//! With prior pi on the positive class and accuracy `a_j` for LF j, a
//! candidate's posterior is
//!
//! ```text
//! p = sigmoid( logit(pi) + sum_j vote_j * ln(a_j / (1 - a_j)) )
//! ```
//!
//! over its non-abstaining votes. The M-step re-estimates each accuracy as
//! the posterior-weighted agreement rate over the LF's non-abstains, clamped
//! away from 0 and 1; abstains are uninformative.

use super::LabelMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("degenerate input: label matrix has no non-abstain entries")]
    DegenerateInput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub const ACCURACY_CLAMP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelModelConfig {
    pub prior: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub init_accuracy: f64,
}

impl Default for LabelModelConfig {
    fn default() -> Self {
        LabelModelConfig { prior: 0.5, max_iters: 100, tol: 1e-6, seed: 0, init_accuracy: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    /// Accuracy a_j per LF, in (0.01, 0.99) after clamping.
    pub accuracies: Vec<f64>,
    /// Class prior pi for the positive class.
    pub prior: f64,
    /// Empirical coverage beta_j: the observed non-abstain rate per LF.
    pub coverages: Vec<f64>,
    /// Observed-data log-likelihood after each EM iteration (non-decreasing).
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

impl LabelModel {
    /// Uninformed fallback used when fitting is impossible.
    pub fn uniform(num_lfs: usize, config: &LabelModelConfig) -> Self {
        LabelModel {
            accuracies: vec![config.init_accuracy; num_lfs],
            prior: config.prior,
            coverages: vec![0.0; num_lfs],
            log_likelihood: Vec::new(),
            iterations: 0,
        }
    }

    /// Reliabilities gamma_j = 2 * a_j - 1.
    pub fn reliabilities(&self) -> Vec<f64> {
        self.accuracies.iter().map(|a| 2.0 * a - 1.0).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Posterior probability of the positive class for one candidate row of
/// (lf index, vote) pairs; abstains contribute nothing.
pub fn posterior(model: &LabelModel, row: &[(usize, i8)]) -> f64 {
    let mut logit = (model.prior / (1.0 - model.prior)).ln();
    for &(j, vote) in row {
        if vote == 0 {
            continue;
        }
        let a = model.accuracies[j];
        logit += f64::from(vote) * (a / (1.0 - a)).ln();
    }
    sigmoid(logit)
}

/// Marginals for every candidate row of the label matrix.
pub fn marginals(model: &LabelModel, labels: &LabelMatrix) -> Vec<f64> {
    labels.rows().iter().map(|row| posterior(model, row)).collect()
}

fn log_likelihood(rows: &[Vec<(usize, i8)>], accuracies: &[f64], prior: f64) -> f64 {
    let mut total = 0.0;
    for row in rows {
        // log( pi * prod agree(+) + (1 - pi) * prod agree(-) ), stably.
        let mut pos = prior.ln();
        let mut neg = (1.0 - prior).ln();
        for &(j, vote) in row {
            let a = accuracies[j];
            match vote {
                1 => {
                    pos += a.ln();
                    neg += (1.0 - a).ln();
                }
                -1 => {
                    pos += (1.0 - a).ln();
                    neg += a.ln();
                }
                _ => {}
            }
        }
        let m = pos.max(neg);
        total += m + ((pos - m).exp() + (neg - m).exp()).ln();
    }
    total
}

/// Fit per-LF accuracies by expectation-maximization.
///
/// Deterministic: accuracies start at `init_accuracy` and the update order is
/// fixed, so identical inputs yield identical models. Iteration stops when
/// the largest accuracy change falls below `tol` or after `max_iters`.
pub fn fit_label_model(
    labels: &LabelMatrix,
    config: &LabelModelConfig,
) -> Result<LabelModel, SupervisionError> {
    if !(config.prior > 0.0 && config.prior < 1.0) {
        return Err(SupervisionError::InvalidConfig(format!(
            "prior must lie in (0, 1), got {}",
            config.prior
        )));
    }
    let k = labels.num_candidates();
    let l = labels.num_lfs();
    let rows = labels.rows();
    let nnz: usize = rows.iter().map(Vec::len).sum();
    if nnz == 0 {
        return Err(SupervisionError::DegenerateInput);
    }

    let clamp = |a: f64| a.clamp(ACCURACY_CLAMP.0, ACCURACY_CLAMP.1);
    let mut accuracies = vec![clamp(config.init_accuracy); l];
    let mut fires = vec![0usize; l];
    for row in &rows {
        for &(j, _) in row {
            fires[j] += 1;
        }
    }
    let coverages: Vec<f64> =
        fires.iter().map(|&n| if k == 0 { 0.0 } else { n as f64 / k as f64 }).collect();

    let mut trajectory = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        // E-step: posteriors under current accuracies.
        let model = LabelModel {
            accuracies: accuracies.clone(),
            prior: config.prior,
            coverages: coverages.clone(),
            log_likelihood: Vec::new(),
            iterations,
        };
        let posteriors: Vec<f64> = rows.iter().map(|row| posterior(&model, row)).collect();

        // M-step: posterior-weighted agreement per LF over its non-abstains.
        let mut agree = vec![0.0f64; l];
        for (row, &p) in rows.iter().zip(&posteriors) {
            for &(j, vote) in row {
                agree[j] += if vote == 1 { p } else { 1.0 - p };
            }
        }
        let mut delta: f64 = 0.0;
        for j in 0..l {
            if fires[j] == 0 {
                continue;
            }
            let updated = clamp(agree[j] / fires[j] as f64);
            delta = delta.max((updated - accuracies[j]).abs());
            accuracies[j] = updated;
        }
        trajectory.push(log_likelihood(&rows, &accuracies, config.prior));
        if delta < config.tol {
            break;
        }
    }

    Ok(LabelModel {
        accuracies,
        prior: config.prior,
        coverages,
        log_likelihood: trajectory,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{Representation, SparseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix_from(k: usize, votes: Vec<(usize, usize, i8)>, l: usize) -> LabelMatrix {
        let triples = votes.into_iter().map(|(r, c, v)| (r, c, v as f64));
        LabelMatrix {
            matrix: SparseMatrix::from_triples(k, l, Representation::Coo, triples),
            lf_names: (0..l).map(|j| format!("lf{j}")).collect(),
        }
    }

    /// Plant a model, sample votes, and return (matrix, truth).
    pub(crate) fn planted(
        k: usize,
        accs: &[f64],
        coverage: f64,
        prior: f64,
        seed: u64,
    ) -> (LabelMatrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = accs.len();
        let mut votes = Vec::new();
        let mut truth = Vec::new();
        for i in 0..k {
            let y = rng.gen_bool(prior);
            truth.push(y);
            for (j, &a) in accs.iter().enumerate() {
                if !rng.gen_bool(coverage) {
                    continue;
                }
                let correct = rng.gen_bool(a);
                let vote = if correct == y { 1 } else { -1 };
                votes.push((i, j, vote));
            }
        }
        (matrix_from(k, votes, l), truth)
    }

    #[test]
    fn posterior_analytics() {
        let model = LabelModel {
            accuracies: vec![0.8, 0.8],
            prior: 0.5,
            coverages: vec![1.0, 1.0],
            log_likelihood: vec![],
            iterations: 0,
        };
        assert_eq!(posterior(&model, &[]), 0.5, "all abstain falls back to the prior");
        assert!((posterior(&model, &[(0, 1)]) - 0.8).abs() < 1e-12);
        assert!((posterior(&model, &[(0, 1), (1, -1)]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_matrix_is_rejected() {
        let labels = matrix_from(5, vec![], 2);
        assert!(matches!(
            fit_label_model(&labels, &LabelModelConfig::default()),
            Err(SupervisionError::DegenerateInput)
        ));
        let fallback = LabelModel::uniform(2, &LabelModelConfig::default());
        assert_eq!(posterior(&fallback, &[]), 0.5);
    }

    #[test]
    fn planted_accuracies_are_recovered() {
        let accs = [0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.62];
        let (labels, truth) = planted(1000, &accs, 0.4, 0.5, 1234);
        let model = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        for (j, &a) in accs.iter().enumerate() {
            assert!(
                (model.accuracies[j] - a).abs() <= 0.05,
                "lf{j}: fitted {} vs planted {a}",
                model.accuracies[j]
            );
        }
        for (j, &beta) in model.coverages.iter().enumerate() {
            assert!((beta - 0.4).abs() < 0.08, "lf{j} coverage {beta}");
        }
        // Marginals order the truth well; check a simple threshold accuracy.
        let ps = marginals(&model, &labels);
        let correct = ps
            .iter()
            .zip(&truth)
            .filter(|&(p, &y)| (*p > 0.5) == y && *p != 0.5)
            .count();
        assert!(correct as f64 / truth.len() as f64 > 0.8);
        let gammas = model.reliabilities();
        assert!((gammas[6] - (2.0 * model.accuracies[6] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn unanimous_lfs_hit_the_upper_clamp() {
        let votes: Vec<(usize, usize, i8)> =
            (0..50).flat_map(|i| [(i, 0usize, 1i8), (i, 1usize, 1i8)]).collect();
        let labels = matrix_from(50, votes, 2);
        let model = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        assert_eq!(model.accuracies, vec![ACCURACY_CLAMP.1; 2]);
    }

    #[test]
    fn em_log_likelihood_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let k = rng.gen_range(20..80);
            let l = rng.gen_range(2..6);
            let mut votes = Vec::new();
            for i in 0..k {
                for j in 0..l {
                    let r: f64 = rng.gen();
                    if r < 0.3 {
                        votes.push((i, j, 1));
                    } else if r < 0.5 {
                        votes.push((i, j, -1));
                    }
                }
            }
            if votes.is_empty() {
                continue;
            }
            let labels = matrix_from(k, votes, l);
            let model = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
            for w in model.log_likelihood.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "trial {trial}: log-likelihood decreased {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn column_permutation_equivariance() {
        let accs = [0.6, 0.75, 0.9];
        let (labels, _) = planted(200, &accs, 0.5, 0.5, 7);
        let model = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        // Permute columns 0 and 2.
        let permuted_triples: Vec<(usize, usize, f64)> = labels
            .matrix
            .triples()
            .into_iter()
            .map(|(r, c, v)| (r, match c { 0 => 2, 2 => 0, c => c }, v))
            .collect();
        let permuted = LabelMatrix {
            matrix: SparseMatrix::from_triples(200, 3, Representation::Coo, permuted_triples),
            lf_names: vec!["lf2".into(), "lf1".into(), "lf0".into()],
        };
        let pm = fit_label_model(&permuted, &LabelModelConfig::default()).unwrap();
        assert!((pm.accuracies[0] - model.accuracies[2]).abs() < 1e-12);
        assert!((pm.accuracies[2] - model.accuracies[0]).abs() < 1e-12);
        assert!((pm.accuracies[1] - model.accuracies[1]).abs() < 1e-12);
        let a = marginals(&model, &labels);
        let b = marginals(&pm, &permuted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn vote_flip_symmetry() {
        let accs = [0.7, 0.85];
        let (labels, _) = planted(150, &accs, 0.6, 0.4, 21);
        let cfg = LabelModelConfig { prior: 0.4, ..Default::default() };
        let model = fit_label_model(&labels, &cfg).unwrap();
        let flipped_triples: Vec<(usize, usize, f64)> =
            labels.matrix.triples().into_iter().map(|(r, c, v)| (r, c, -v)).collect();
        let flipped = LabelMatrix {
            matrix: SparseMatrix::from_triples(150, 2, Representation::Coo, flipped_triples),
            lf_names: labels.lf_names.clone(),
        };
        let cfg_flip = LabelModelConfig { prior: 0.6, ..Default::default() };
        let fm = fit_label_model(&flipped, &cfg_flip).unwrap();
        let a = marginals(&model, &labels);
        let b = marginals(&fm, &flipped);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - (1.0 - y)).abs() < 1e-9, "{x} vs 1-{y}");
        }
    }

    #[test]
    fn extra_positive_vote_is_monotone() {
        let model = LabelModel {
            accuracies: vec![0.7, 0.8, 0.55],
            prior: 0.5,
            coverages: vec![1.0; 3],
            log_likelihood: vec![],
            iterations: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let base: Vec<(usize, i8)> = (0..2)
                .filter_map(|j| {
                    let r: f64 = rng.gen();
                    if r < 0.4 {
                        Some((j, 1))
                    } else if r < 0.7 {
                        Some((j, -1))
                    } else {
                        None
                    }
                })
                .collect();
            let before = posterior(&model, &base);
            let mut extended = base.clone();
            extended.push((2, 1));
            let after = posterior(&model, &extended);
            assert!(after >= before, "adding a +1 vote from an above-chance LF lowered p");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (labels, _) = planted(300, &[0.6, 0.8, 0.9], 0.5, 0.5, 13);
        let a = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        let b = fit_label_model(&labels, &LabelModelConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
