//! Forward and backward passes through the Bi-LSTM, attention pooling, and
//! the softmax head. Backpropagation is hand-derived; its correctness is
//! certified against central finite differences in [`super::check`].

use super::{AttentionParams, Example, HeadParams, LearnError, LstmParams, MultimodalModel};
use ndarray::{Array1, Array2};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            m[(i, j)] = ai * bj;
        }
    }
    m
}

/// One LSTM cell update: gates from sigmoid, candidate cell from tanh,
/// c_t = f o c_prev + i o tanh(...), h_t = o o tanh(c_t).
pub fn lstm_step(
    params: &LstmParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>), LearnError> {
    let d_h = params.b_i.len();
    let d_in = params.w_i.ncols();
    if x.len() != d_in || h_prev.len() != d_h || c_prev.len() != d_h {
        return Err(LearnError::ShapeMismatch(format!(
            "lstm_step expects x of {d_in}, h/c of {d_h}; got {}, {}, {}",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let cache = step_forward(params, x, h_prev, c_prev);
    let h = &cache.o * &cache.tanh_c;
    Ok((h, cache.c))
}

pub(super) struct StepCache {
    pub token: usize,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub o: Array1<f64>,
    pub g: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
}

fn step_forward(params: &LstmParams, x: &Array1<f64>, h_prev: &Array1<f64>, c_prev: &Array1<f64>) -> StepCache {
    let gate = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>| w.dot(x) + u.dot(h_prev) + b;
    let i = gate(&params.w_i, &params.u_i, &params.b_i).mapv(sigmoid);
    let f = gate(&params.w_f, &params.u_f, &params.b_f).mapv(sigmoid);
    let o = gate(&params.w_o, &params.u_o, &params.b_o).mapv(sigmoid);
    let g = gate(&params.w_c, &params.u_c, &params.b_c).mapv(f64::tanh);
    let c = &f * c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    StepCache {
        token: usize::MAX,
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
    }
}

/// Bidirectional encoding: per position, the concatenation of the forward
/// state (reading left to right) and the backward state (right to left).
pub fn bilstm(
    forward: &LstmParams,
    backward: &LstmParams,
    embeddings: &Array2<f64>,
    tokens: &[usize],
) -> Result<Vec<Array1<f64>>, LearnError> {
    if tokens.is_empty() {
        return Err(LearnError::EmptySequence);
    }
    let (hs, _, _) = bilstm_cached(forward, backward, embeddings, tokens);
    Ok(hs)
}

pub(super) fn bilstm_cached(
    forward: &LstmParams,
    backward: &LstmParams,
    embeddings: &Array2<f64>,
    tokens: &[usize],
) -> (Vec<Array1<f64>>, Vec<StepCache>, Vec<StepCache>) {
    let d_h = forward.b_i.len();
    let t = tokens.len();
    let mut fwd_caches = Vec::with_capacity(t);
    let mut h = Array1::zeros(d_h);
    let mut c = Array1::zeros(d_h);
    for &tok in tokens {
        let x = embeddings.row(tok).to_owned();
        let mut cache = step_forward(forward, &x, &h, &c);
        cache.token = tok;
        h = &cache.o * &cache.tanh_c;
        c = cache.c.clone();
        fwd_caches.push(cache);
    }
    let mut bwd_caches = Vec::with_capacity(t);
    let mut h = Array1::zeros(d_h);
    let mut c = Array1::zeros(d_h);
    for &tok in tokens.iter().rev() {
        let x = embeddings.row(tok).to_owned();
        let mut cache = step_forward(backward, &x, &h, &c);
        cache.token = tok;
        h = &cache.o * &cache.tanh_c;
        c = cache.c.clone();
        bwd_caches.push(cache);
    }
    // bwd_caches[k] processed tokens[t-1-k]; stitch per text position.
    let mut hs = Vec::with_capacity(t);
    for k in 0..t {
        let hf = &fwd_caches[k].o * &fwd_caches[k].tanh_c;
        let bc = &bwd_caches[t - 1 - k];
        let hb = &bc.o * &bc.tanh_c;
        let mut both = Array1::zeros(2 * d_h);
        both.slice_mut(ndarray::s![..d_h]).assign(&hf);
        both.slice_mut(ndarray::s![d_h..]).assign(&hb);
        hs.push(both);
    }
    (hs, fwd_caches, bwd_caches)
}

pub(super) struct AttentionCache {
    pub us: Vec<Array1<f64>>,
    pub alphas: Array1<f64>,
}

/// Attention over hidden states: u_k = tanh(W h_k + b), weights from the
/// softmax of u_k . u_w, pooled as t = sum alpha_k u_k (the hidden
/// representations u are pooled, not the h states).
pub fn attention_pool(
    params: &AttentionParams,
    hs: &[Array1<f64>],
) -> Result<(Array1<f64>, Array1<f64>), LearnError> {
    if hs.is_empty() {
        return Err(LearnError::EmptySequence);
    }
    let (t, cache) = attention_forward(params, hs);
    Ok((t, cache.alphas))
}

pub(super) fn attention_forward(
    params: &AttentionParams,
    hs: &[Array1<f64>],
) -> (Array1<f64>, AttentionCache) {
    let us: Vec<Array1<f64>> =
        hs.iter().map(|h| (params.w_w.dot(h) + &params.b_w).mapv(f64::tanh)).collect();
    let scores: Vec<f64> = us.iter().map(|u| u.dot(&params.u_w)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let alphas = Array1::from_iter(exps.into_iter().map(|e| e / z));
    let mut t = Array1::zeros(params.u_w.len());
    for (u, &a) in us.iter().zip(alphas.iter()) {
        t = t + u * a;
    }
    (t, AttentionCache { us, alphas })
}

/// Gradient accumulator mirroring [`MultimodalModel`]'s tensors.
pub struct Gradients {
    pub embeddings: Array2<f64>,
    pub forward_lstm: LstmParams,
    pub backward_lstm: LstmParams,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl Gradients {
    pub fn zeros_like(model: &MultimodalModel) -> Self {
        let c = &model.config;
        Gradients {
            embeddings: Array2::zeros(model.embeddings.dim()),
            forward_lstm: LstmParams::zeros(c.d_h, c.d_emb),
            backward_lstm: LstmParams::zeros(c.d_h, c.d_emb),
            attention: AttentionParams::zeros(c.d_a, 2 * c.d_h),
            head: HeadParams::zeros(model.text_width(), model.num_features),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, super::TensorRef<'_>)> {
        use super::TensorRef::*;
        let mut v = vec![("embeddings", M(&self.embeddings))];
        for (prefix, p) in [("fwd", &self.forward_lstm), ("bwd", &self.backward_lstm)] {
            v.extend(super::lstm_tensor_refs(prefix, p));
        }
        v.push(("attn.w_w", M(&self.attention.w_w)));
        v.push(("attn.b_w", V(&self.attention.b_w)));
        v.push(("attn.u_w", V(&self.attention.u_w)));
        v.push(("head.w_text", M(&self.head.w_text)));
        v.push(("head.w_feat", M(&self.head.w_feat)));
        v.push(("head.bias", V(&self.head.bias)));
        v
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| match t {
                super::TensorRef::M(a) => a.iter().map(|v| v * v).sum::<f64>(),
                super::TensorRef::V(a) => a.iter().map(|v| v * v).sum::<f64>(),
            })
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut_internal() {
            match t {
                super::TensorMut::M(a) => a.mapv_inplace(|v| v * s),
                super::TensorMut::V(a) => a.mapv_inplace(|v| v * s),
            }
        }
    }

    fn tensors_mut_internal(&mut self) -> Vec<super::TensorMut<'_>> {
        use super::TensorMut::*;
        let Gradients { embeddings, forward_lstm, backward_lstm, attention, head } = self;
        let mut v = vec![M(embeddings)];
        for p in [forward_lstm, backward_lstm] {
            let LstmParams { w_i, u_i, b_i, w_f, u_f, b_f, w_o, u_o, b_o, w_c, u_c, b_c } = p;
            v.extend([M(w_i), M(u_i), V(b_i), M(w_f), M(u_f), V(b_f), M(w_o), M(u_o), V(b_o), M(w_c), M(u_c), V(b_c)]);
        }
        v.extend([M(&mut attention.w_w), V(&mut attention.b_w), V(&mut attention.u_w)]);
        v.extend([M(&mut head.w_text), M(&mut head.w_feat), V(&mut head.bias)]);
        v
    }
}

pub(super) struct ForwardCache {
    pub slot_hs: Vec<Vec<Array1<f64>>>,
    pub slot_attn: Vec<AttentionCache>,
    pub fwd_caches: Vec<Vec<StepCache>>,
    pub bwd_caches: Vec<Vec<StepCache>>,
    pub t_concat: Array1<f64>,
    /// Logit difference z1 - z0.
    pub logit: f64,
    /// P(true): sigmoid of the logit difference.
    pub q: f64,
}

/// Forward pass for one example. Validates feature columns against the
/// model's registry width.
pub(super) fn forward_example(
    model: &MultimodalModel,
    example: &Example,
) -> Result<ForwardCache, LearnError> {
    for &col in &example.feature_cols {
        if col >= model.num_features {
            return Err(LearnError::RegistryMismatch { column: col, width: model.num_features });
        }
    }
    if example.sequences.len() != model.arity {
        return Err(LearnError::ShapeMismatch(format!(
            "example has {} sequences, model arity is {}",
            example.sequences.len(),
            model.arity
        )));
    }
    let d_a = model.config.d_a;
    let mut t_concat = Array1::zeros(model.arity * d_a);
    let mut slot_hs = Vec::new();
    let mut slot_attn = Vec::new();
    let mut fwd_caches = Vec::new();
    let mut bwd_caches = Vec::new();
    if model.config.use_textual {
        for (slot, tokens) in example.sequences.iter().enumerate() {
            if tokens.is_empty() {
                return Err(LearnError::EmptySequence);
            }
            let (hs, fc, bc) =
                bilstm_cached(&model.forward_lstm, &model.backward_lstm, &model.embeddings, tokens);
            let (t, attn) = attention_forward(&model.attention, &hs);
            t_concat.slice_mut(ndarray::s![slot * d_a..(slot + 1) * d_a]).assign(&t);
            slot_hs.push(hs);
            slot_attn.push(attn);
            fwd_caches.push(fc);
            bwd_caches.push(bc);
        }
    }
    let mut logits = model.head.w_text.dot(&t_concat) + &model.head.bias;
    for &col in &example.feature_cols {
        logits[0] += model.head.w_feat[(0, col)];
        logits[1] += model.head.w_feat[(1, col)];
    }
    let logit = logits[1] - logits[0];
    Ok(ForwardCache { slot_hs, slot_attn, fwd_caches, bwd_caches, t_concat, logit, q: sigmoid(logit) })
}

/// Expected cross-entropy against the marginal target, from the logit
/// difference: -[p ln q + (1-p) ln(1-q)] with q = sigmoid(d).
pub(super) fn example_loss(d: f64, target: f64) -> f64 {
    softplus(-d) * target + softplus(d) * (1.0 - target)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        0.0
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// Backward pass for one example, accumulating parameter gradients scaled by
/// `weight` (1/batch for mean loss).
pub(super) fn backward_example(
    model: &MultimodalModel,
    example: &Example,
    cache: &ForwardCache,
    weight: f64,
    grads: &mut Gradients,
) {
    let d1 = (cache.q - example.target) * weight;
    // Two-logit softmax with cross-entropy: dL/dz1 = q - p, dL/dz0 = -(q - p).
    let dz = [-d1, d1];
    for (row, &dzr) in dz.iter().enumerate() {
        for (j, &t) in cache.t_concat.iter().enumerate() {
            grads.head.w_text[(row, j)] += dzr * t;
        }
        grads.head.bias[row] += dzr;
        for &col in &example.feature_cols {
            grads.head.w_feat[(row, col)] += dzr;
        }
    }
    if !model.config.use_textual {
        return;
    }
    let d_a = model.config.d_a;
    let d_h = model.config.d_h;
    let dt_concat: Array1<f64> =
        model.head.w_text.row(1).to_owned() * dz[1] + model.head.w_text.row(0).to_owned() * dz[0];

    for slot in 0..model.arity {
        let dt = dt_concat.slice(ndarray::s![slot * d_a..(slot + 1) * d_a]).to_owned();
        let attn = &cache.slot_attn[slot];
        let hs = &cache.slot_hs[slot];
        let t_len = hs.len();

        // Attention backward: t = sum_k alpha_k u_k, scores s_k = u_k . u_w.
        let dalpha: Vec<f64> = attn.us.iter().map(|u| dt.dot(u)).collect();
        let weighted: f64 = attn.alphas.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
        let ds: Vec<f64> =
            attn.alphas.iter().zip(&dalpha).map(|(a, da)| a * (da - weighted)).collect();
        let mut dhs: Vec<Array1<f64>> = vec![Array1::zeros(2 * d_h); t_len];
        for k in 0..t_len {
            let du = &dt * attn.alphas[k] + &model.attention.u_w * ds[k];
            grads.attention.u_w = &grads.attention.u_w + &(&attn.us[k] * ds[k]);
            let dz_u = &du * &attn.us[k].mapv(|u| 1.0 - u * u);
            grads.attention.w_w = &grads.attention.w_w + &outer(&dz_u, &hs[k]);
            grads.attention.b_w = &grads.attention.b_w + &dz_u;
            dhs[k] = model.attention.w_w.t().dot(&dz_u);
        }

        // Forward direction BPTT over positions T-1..0.
        let fwd = &cache.fwd_caches[slot];
        let mut dh_next = Array1::zeros(d_h);
        let mut dc_next = Array1::zeros(d_h);
        for k in (0..t_len).rev() {
            let dh = dhs[k].slice(ndarray::s![..d_h]).to_owned() + &dh_next;
            let (dh_prev, dc_prev) = step_backward(
                &model.forward_lstm,
                &model.embeddings,
                &fwd[k],
                &dh,
                &dc_next,
                &mut grads.forward_lstm,
                &mut grads.embeddings,
            );
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        // Backward direction: caches run right-to-left over the text, so
        // BPTT runs over processing order reversed.
        let bwd = &cache.bwd_caches[slot];
        let mut dh_next = Array1::zeros(d_h);
        let mut dc_next = Array1::zeros(d_h);
        for k in (0..t_len).rev() {
            let pos = t_len - 1 - k;
            let dh = dhs[pos].slice(ndarray::s![d_h..]).to_owned() + &dh_next;
            let (dh_prev, dc_prev) = step_backward(
                &model.backward_lstm,
                &model.embeddings,
                &bwd[k],
                &dh,
                &dc_next,
                &mut grads.backward_lstm,
                &mut grads.embeddings,
            );
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn step_backward(
    params: &LstmParams,
    embeddings: &Array2<f64>,
    cache: &StepCache,
    dh: &Array1<f64>,
    dc_in: &Array1<f64>,
    grads: &mut LstmParams,
    demb: &mut Array2<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let do_ = dh * &cache.tanh_c;
    let dc = dc_in + &(dh * &cache.o * &cache.tanh_c.mapv(|t| 1.0 - t * t));
    let df = &dc * &cache.c_prev;
    let di = &dc * &cache.g;
    let dg = &dc * &cache.i;
    let dc_prev = &dc * &cache.f;

    let dzi = &di * &cache.i.mapv(|v| v * (1.0 - v));
    let dzf = &df * &cache.f.mapv(|v| v * (1.0 - v));
    let dzo = &do_ * &cache.o.mapv(|v| v * (1.0 - v));
    let dzg = &dg * &cache.g.mapv(|v| 1.0 - v * v);

    let x = embeddings.row(cache.token).to_owned();
    grads.w_i = &grads.w_i + &outer(&dzi, &x);
    grads.u_i = &grads.u_i + &outer(&dzi, &cache.h_prev);
    grads.b_i = &grads.b_i + &dzi;
    grads.w_f = &grads.w_f + &outer(&dzf, &x);
    grads.u_f = &grads.u_f + &outer(&dzf, &cache.h_prev);
    grads.b_f = &grads.b_f + &dzf;
    grads.w_o = &grads.w_o + &outer(&dzo, &x);
    grads.u_o = &grads.u_o + &outer(&dzo, &cache.h_prev);
    grads.b_o = &grads.b_o + &dzo;
    grads.w_c = &grads.w_c + &outer(&dzg, &x);
    grads.u_c = &grads.u_c + &outer(&dzg, &cache.h_prev);
    grads.b_c = &grads.b_c + &dzg;

    let dx = params.w_i.t().dot(&dzi)
        + params.w_f.t().dot(&dzf)
        + params.w_o.t().dot(&dzo)
        + params.w_c.t().dot(&dzg);
    for (j, v) in dx.iter().enumerate() {
        demb[(cache.token, j)] += v;
    }
    let dh_prev = params.u_i.t().dot(&dzi)
        + params.u_f.t().dot(&dzf)
        + params.u_o.t().dot(&dzo)
        + params.u_c.t().dot(&dzg);
    (dh_prev, dc_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{TrainConfig, Vocabulary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arr(v: &[f64]) -> Array1<f64> {
        Array1::from_vec(v.to_vec())
    }

    #[test]
    fn zero_params_halve_everything() {
        let p = LstmParams::zeros(3, 2);
        let x = arr(&[0.7, -0.3]);
        let c_prev = arr(&[1.0, -2.0, 0.5]);
        let h_prev = arr(&[0.0, 0.0, 0.0]);
        let (h, c) = lstm_step(&p, &x, &h_prev, &c_prev).unwrap();
        // Gates are sigmoid(0) = 0.5, candidate tanh(0) = 0; c = 0.5 c_prev.
        for (k, &cp) in c_prev.iter().enumerate() {
            assert!((c[k] - 0.5 * cp).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * cp).tanh()).abs() < 1e-15);
        }
        let (h0, c0) = lstm_step(&p, &arr(&[0.0, 0.0]), &h_prev, &arr(&[0.0, 0.0, 0.0])).unwrap();
        assert!(h0.iter().all(|&v| v == 0.0));
        assert!(c0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_step_matches_reference_equations() {
        // An independently coded scalar evaluation of the gate equations.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (d_h, d_in) = (3, 3);
        let mut p = LstmParams::zeros(d_h, d_in);
        for t in [
            &mut p.w_i, &mut p.u_i, &mut p.w_f, &mut p.u_f, &mut p.w_o, &mut p.u_o, &mut p.w_c,
            &mut p.u_c,
        ] {
            t.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        for b in [&mut p.b_i, &mut p.b_f, &mut p.b_o, &mut p.b_c] {
            b.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        let x = arr(&[0.3, -0.8, 0.1]);
        let h_prev = arr(&[0.2, 0.0, -0.4]);
        let c_prev = arr(&[-0.5, 1.2, 0.7]);
        let (h, c) = lstm_step(&p, &x, &h_prev, &c_prev).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..d_h {
            let pre = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>| {
                let mut s = b[k];
                for j in 0..d_in {
                    s += w[(k, j)] * x[j];
                }
                for j in 0..d_h {
                    s += u[(k, j)] * h_prev[j];
                }
                s
            };
            let ik = sig(pre(&p.w_i, &p.u_i, &p.b_i));
            let fk = sig(pre(&p.w_f, &p.u_f, &p.b_f));
            let ok = sig(pre(&p.w_o, &p.u_o, &p.b_o));
            let gk = pre(&p.w_c, &p.u_c, &p.b_c).tanh();
            let ck = fk * c_prev[k] + ik * gk;
            assert!((c[k] - ck).abs() < 1e-12);
            assert!((h[k] - ok * ck.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_step_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 2);
        let err = lstm_step(&p, &arr(&[1.0]), &arr(&[0.0; 3]), &arr(&[0.0; 3]));
        assert!(matches!(err, Err(LearnError::ShapeMismatch(_))));
    }

    fn tiny_model(seed: u64) -> MultimodalModel {
        let vocab = Vocabulary::build(
            1,
            [vec!["a".to_string(), "b".to_string(), "c".to_string()]].iter().map(|v| v.as_slice()),
        );
        let config = TrainConfig { d_emb: 4, d_h: 3, d_a: 2, seed, ..Default::default() };
        MultimodalModel::init(config, vocab, 1, 4).unwrap()
    }

    #[test]
    fn bilstm_shapes_and_t1() {
        let m = tiny_model(1);
        let hs = bilstm(&m.forward_lstm, &m.backward_lstm, &m.embeddings, &[1, 2, 3]).unwrap();
        assert_eq!(hs.len(), 3);
        assert!(hs.iter().all(|h| h.len() == 6));
        let single = bilstm(&m.forward_lstm, &m.backward_lstm, &m.embeddings, &[2]).unwrap();
        // With one token, position 0 is both first and last: each direction
        // runs exactly one step from the zero state.
        let x = m.embeddings.row(2).to_owned();
        let zero = Array1::zeros(3);
        let (hf, _) = lstm_step(&m.forward_lstm, &x, &zero, &zero).unwrap();
        let (hb, _) = lstm_step(&m.backward_lstm, &x, &zero, &zero).unwrap();
        for k in 0..3 {
            assert!((single[0][k] - hf[k]).abs() < 1e-15);
            assert!((single[0][k + 3] - hb[k]).abs() < 1e-15);
        }
        assert!(matches!(
            bilstm(&m.forward_lstm, &m.backward_lstm, &m.embeddings, &[]),
            Err(LearnError::EmptySequence)
        ));
    }

    #[test]
    fn palindrome_with_tied_directions_mirrors() {
        let mut m = tiny_model(2);
        m.backward_lstm = m.forward_lstm.clone();
        let hs = bilstm(&m.forward_lstm, &m.backward_lstm, &m.embeddings, &[1, 2, 1]).unwrap();
        let d_h = 3;
        for k in 0..3 {
            let mirrored = 2 - k;
            for j in 0..d_h {
                assert!(
                    (hs[k][j] - hs[mirrored][d_h + j]).abs() < 1e-12,
                    "forward state at {k} equals backward state at {mirrored}"
                );
            }
        }
    }

    #[test]
    fn hidden_coordinates_stay_in_unit_interval() {
        let m = tiny_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let len = rng.gen_range(1..12);
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..m.vocab.len())).collect();
            let hs = bilstm(&m.forward_lstm, &m.backward_lstm, &m.embeddings, &tokens).unwrap();
            for h in hs {
                assert!(h.iter().all(|&v| v > -1.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn attention_weights_normalize() {
        let m = tiny_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let len = rng.gen_range(1..10);
            let hs: Vec<Array1<f64>> =
                (0..len).map(|_| Array1::from_iter((0..6).map(|_| rng.gen_range(-2.0..2.0)))).collect();
            let (_, alphas) = attention_pool(&m.attention, &hs).unwrap();
            assert!(alphas.iter().all(|&a| a >= 0.0));
            assert!((alphas.sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn attention_single_and_uniform_cases() {
        let m = tiny_model(5);
        let h = Array1::from_iter((0..6).map(|i| 0.1 * i as f64));
        let (t, alphas) = attention_pool(&m.attention, std::slice::from_ref(&h)).unwrap();
        assert_eq!(alphas.len(), 1);
        assert!((alphas[0] - 1.0).abs() < 1e-15);
        let u = (m.attention.w_w.dot(&h) + &m.attention.b_w).mapv(f64::tanh);
        for k in 0..2 {
            assert!((t[k] - u[k]).abs() < 1e-15, "T=1 pools u_1 itself");
        }
        // Identical states at every position: uniform weights.
        let hs = vec![h.clone(), h.clone(), h.clone()];
        let (_, alphas) = attention_pool(&m.attention, &hs).unwrap();
        for &a in alphas.iter() {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(matches!(attention_pool(&m.attention, &[]), Err(LearnError::EmptySequence)));
    }

    #[test]
    fn attention_matches_reference_softmax_weighted_sum() {
        let m = tiny_model(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hs: Vec<Array1<f64>> =
            (0..4).map(|_| Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0)))).collect();
        let (t, alphas) = attention_pool(&m.attention, &hs).unwrap();
        // Reference: direct softmax over scores, then the weighted sum.
        let us: Vec<Array1<f64>> =
            hs.iter().map(|h| (m.attention.w_w.dot(h) + &m.attention.b_w).mapv(f64::tanh)).collect();
        let scores: Vec<f64> = us.iter().map(|u| u.dot(&m.attention.u_w)).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for k in 0..4 {
            assert!((alphas[k] - scores[k].exp() / z).abs() < 1e-12);
        }
        let mut expect: Array1<f64> = Array1::zeros(2);
        for k in 0..4 {
            expect = expect + &us[k] * alphas[k];
        }
        for j in 0..2 {
            assert!((t[j] - expect[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn marker_position_changes_representation() {
        let m = tiny_model(7);
        // Same bag of tokens, marker in different spots.
        let a = Example { sequences: vec![vec![1, 3, 2, 4]], feature_cols: vec![], target: 1.0 };
        let b = Example { sequences: vec![vec![3, 1, 2, 4]], feature_cols: vec![], target: 1.0 };
        let ca = forward_example(&m, &a).unwrap();
        let cb = forward_example(&m, &b).unwrap();
        let diff: f64 =
            ca.t_concat.iter().zip(cb.t_concat.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "textual representation ignores token order");
    }

    #[test]
    fn zero_head_outputs_one_half() {
        let m = tiny_model(8);
        let e = Example { sequences: vec![vec![1, 2]], feature_cols: vec![2], target: 0.5 };
        let c = forward_example(&m, &e).unwrap();
        assert_eq!(c.q, 0.5, "zero-initialized head gives equal logits");
        let mut grads = Gradients::zeros_like(&m);
        backward_example(&m, &e, &c, 1.0, &mut grads);
        assert!(grads.head.bias.iter().all(|&b| b == 0.0), "0.5 target at 0.5 output: zero bias gradient");
    }

    #[test]
    fn registry_mismatch_detected() {
        let m = tiny_model(9);
        let e = Example { sequences: vec![vec![1]], feature_cols: vec![99], target: 1.0 };
        assert!(matches!(
            forward_example(&m, &e),
            Err(LearnError::RegistryMismatch { column: 99, width: 4 })
        ));
    }
}
