//! Noise-aware training: mini-batch gradient descent on the expected
//! cross-entropy against label-model marginals, with global-norm clipping.
//! All parameters (embeddings, both LSTM directions, attention, head) are
//! updated jointly. Single-threaded and deterministic given the seed.

use super::net::{backward_example, example_loss, forward_example, Gradients};
use super::{Example, LearnError, MultimodalModel, TrainConfig, Vocabulary};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: MultimodalModel,
    /// Mean loss after each epoch.
    pub loss_trajectory: Vec<f64>,
}

/// Mean expected cross-entropy over a set of examples (forward only).
pub fn batch_loss(model: &MultimodalModel, examples: &[Example]) -> Result<f64, LearnError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for e in examples {
        let cache = forward_example(model, e)?;
        total += example_loss(cache.logit, e.target);
    }
    Ok(total / examples.len() as f64)
}

/// Accumulate mean-loss gradients for a batch into `grads`; returns the loss.
pub(super) fn batch_backward(
    model: &MultimodalModel,
    examples: &[Example],
    grads: &mut Gradients,
) -> Result<f64, LearnError> {
    let weight = 1.0 / examples.len() as f64;
    let mut total = 0.0;
    for e in examples {
        let cache = forward_example(model, e)?;
        total += example_loss(cache.logit, e.target);
        backward_example(model, e, &cache, weight, grads);
    }
    Ok(total * weight)
}

fn apply_update(model: &mut MultimodalModel, grads: &Gradients, lr: f64) {
    let gs = grads.tensors();
    for ((_, mut param), (_, grad)) in model.tensors_mut().into_iter().zip(gs) {
        let n = param.len();
        for idx in 0..n {
            *param.flat_mut(idx) -= lr * grad.flat(idx);
        }
    }
}

/// Train a fresh model on the examples.
pub fn train(
    config: &TrainConfig,
    vocab: Vocabulary,
    arity: usize,
    num_features: usize,
    examples: &[Example],
) -> Result<TrainedModel, LearnError> {
    config.validate()?;
    let mut model = MultimodalModel::init(config.clone(), vocab, arity, num_features)?;
    let mut trajectory = Vec::with_capacity(config.epochs);
    if examples.is_empty() {
        return Ok(TrainedModel { model, loss_trajectory: trajectory });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let mut grads = Gradients::zeros_like(&model);
            let loss = batch_backward(&model, &batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(LearnError::NonFiniteLoss { epoch, batch: batch_idx, loss });
            }
            let norm = grads.squared_norm().sqrt();
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            apply_update(&mut model, &grads, config.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        trajectory.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(TrainedModel { model, loss_trajectory: trajectory })
}

/// Marginal prediction for one example (its target is ignored).
pub fn predict(model: &MultimodalModel, example: &Example) -> Result<f64, LearnError> {
    Ok(forward_example(model, example)?.q)
}
