//! Gradient checking: analytic backpropagation against central finite
//! differences of the forward-only loss, tensor by tensor.

use super::net::Gradients;
use super::train::batch_loss;
use super::{Example, LearnError, MultimodalModel};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensor: &'static str,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a guard for near-zero pairs.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = (a.abs() + n.abs()).max(1e-8);
    (a - n).abs() / denom
}

/// Compare analytic gradients of the mean batch loss with central finite
/// differences for every coordinate of every parameter tensor.
pub fn check_gradients(
    model: &mut MultimodalModel,
    examples: &[Example],
    epsilon: f64,
) -> Result<Vec<GradCheckReport>, LearnError> {
    let mut grads = Gradients::zeros_like(model);
    super::train::batch_backward(model, examples, &mut grads)?;
    let analytic = grads.tensors();

    let mut reports = Vec::new();
    let names: Vec<&'static str> = model.tensors().iter().map(|(n, _)| *n).collect();
    for (tensor_idx, name) in names.iter().enumerate() {
        let len = model.tensors()[tensor_idx].1.len();
        let mut max_rel = 0.0f64;
        for flat in 0..len {
            let orig = {
                let mut ts = model.tensors_mut();
                let v = *ts[tensor_idx].1.flat_mut(flat);
                *ts[tensor_idx].1.flat_mut(flat) = v + epsilon;
                v
            };
            let plus = batch_loss(model, examples)?;
            {
                let mut ts = model.tensors_mut();
                *ts[tensor_idx].1.flat_mut(flat) = orig - epsilon;
            }
            let minus = batch_loss(model, examples)?;
            {
                let mut ts = model.tensors_mut();
                *ts[tensor_idx].1.flat_mut(flat) = orig;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[tensor_idx].1.flat(flat);
            if a.abs() < 1e-12 && numeric.abs() < 1e-12 {
                continue;
            }
            max_rel = max_rel.max(rel_err(a, numeric));
        }
        reports.push(GradCheckReport { tensor: name, max_rel_err: max_rel, checked: len });
    }
    Ok(reports)
}
