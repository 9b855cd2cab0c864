//! Variational auto-encoder training of the organic model.

use super::{
    bounds::{elbo_bouchard_grads_stats, elbo_logconcave_grads_stats, elbo_reparam_grads_stats},
    em::optimize_bouchard_state,
    Bound, DiagGaussianPosterior, EncoderKind, OrganicParams, OrganicTrainConfig, SessionStats,
};
use crate::math::{Matrix, RngStream};
use crate::sim::OrganicSession;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear amortized encoder: μ = W_μ x + b_μ, log σ² = W_v x + b_v over the
/// session's item-count vector x. Exactly 2K(P+1) parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearEncoder {
    pub weight_mu: Matrix,
    pub bias_mu: Vec<f64>,
    pub weight_logvar: Matrix,
    pub bias_logvar: Vec<f64>,
}

impl LinearEncoder {
    pub fn init(p: usize, k: usize, rng: &mut RngStream) -> Self {
        let sd = 0.01;
        LinearEncoder {
            weight_mu: Matrix::from_fn(k, p, |_, _| sd * rng.standard_normal()),
            bias_mu: vec![0.0; k],
            weight_logvar: Matrix::from_fn(k, p, |_, _| sd * rng.standard_normal()),
            bias_logvar: vec![0.0; k],
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.weight_mu.rows() * (self.weight_mu.cols() + 1)
    }

    fn encode(&self, counts: &[(usize, f64)]) -> DiagGaussianPosterior {
        let k = self.bias_mu.len();
        let mut mu = self.bias_mu.clone();
        let mut logvar = self.bias_logvar.clone();
        for &(item, c) in counts {
            for i in 0..k {
                mu[i] += c * self.weight_mu[(i, item)];
                logvar[i] += c * self.weight_logvar[(i, item)];
            }
        }
        DiagGaussianPosterior { mu, var: logvar.iter().map(|v| v.exp()).collect() }
    }
}

/// Deep encoder: three rectifier layers of K units feeding linear μ and
/// log σ² heads. Same interface as the linear encoder; optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepEncoder {
    /// First layer is K x P; the two following are K x K.
    pub layers: Vec<(Matrix, Vec<f64>)>,
    pub head_mu: Matrix,
    pub bias_mu: Vec<f64>,
    pub head_logvar: Matrix,
    pub bias_logvar: Vec<f64>,
}

impl DeepEncoder {
    pub fn init(p: usize, k: usize, rng: &mut RngStream) -> Self {
        let sd = 0.01;
        let mut layers = Vec::new();
        layers.push((Matrix::from_fn(k, p, |_, _| sd * rng.standard_normal()), vec![0.0; k]));
        for _ in 0..2 {
            layers.push((Matrix::from_fn(k, k, |_, _| sd * rng.standard_normal()), vec![0.0; k]));
        }
        DeepEncoder {
            layers,
            head_mu: Matrix::from_fn(k, k, |_, _| sd * rng.standard_normal()),
            bias_mu: vec![0.0; k],
            head_logvar: Matrix::from_fn(k, k, |_, _| sd * rng.standard_normal()),
            bias_logvar: vec![0.0; k],
        }
    }

    /// Forward pass keeping the per-layer activations for backprop.
    fn forward(&self, x: &[(usize, f64)], p: usize) -> (Vec<Vec<f64>>, DiagGaussianPosterior) {
        let k = self.bias_mu.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        // first layer consumes the sparse count vector
        let (w0, b0) = &self.layers[0];
        debug_assert_eq!(w0.cols(), p);
        let mut h = b0.clone();
        for &(item, c) in x {
            for i in 0..k {
                h[i] += c * w0[(i, item)];
            }
        }
        for v in h.iter_mut() {
            *v = v.max(0.0);
        }
        acts.push(h);
        for (w, b) in &self.layers[1..] {
            let prev = acts.last().unwrap();
            let mut h: Vec<f64> = w.matvec(prev);
            for (v, bb) in h.iter_mut().zip(b) {
                *v += bb;
                *v = v.max(0.0);
            }
            acts.push(h);
        }
        let top = acts.last().unwrap();
        let mut mu = self.head_mu.matvec(top);
        for (v, b) in mu.iter_mut().zip(&self.bias_mu) {
            *v += b;
        }
        let mut logvar = self.head_logvar.matvec(top);
        for (v, b) in logvar.iter_mut().zip(&self.bias_logvar) {
            *v += b;
        }
        let post = DiagGaussianPosterior { mu, var: logvar.iter().map(|v| v.exp()).collect() };
        (acts, post)
    }
}

/// Either encoder behind one interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Linear(LinearEncoder),
    Deep(DeepEncoder),
}

impl Encoder {
    pub fn init(kind: EncoderKind, p: usize, k: usize, rng: &mut RngStream) -> Self {
        match kind {
            EncoderKind::Linear => Encoder::Linear(LinearEncoder::init(p, k, rng)),
            EncoderKind::Deep => Encoder::Deep(DeepEncoder::init(p, k, rng)),
        }
    }

    pub(crate) fn encode_stats(&self, stats: &SessionStats, p: usize) -> DiagGaussianPosterior {
        match self {
            Encoder::Linear(e) => e.encode(&stats.counts),
            Encoder::Deep(e) => e.forward(&stats.counts, p).1,
        }
    }

    /// Encode a raw item list.
    pub fn encode(&self, items: &[u32], p: usize) -> Result<DiagGaussianPosterior> {
        let stats = SessionStats::from_items(items, p)?;
        Ok(self.encode_stats(&stats, p))
    }
}

/// A trained organic model: decoder parameters, amortization encoder and the
/// per-epoch training-bound trace.
#[derive(Debug, Clone)]
pub struct TrainedOrganic {
    pub params: OrganicParams,
    pub encoder: Encoder,
    pub elbo_trace: Vec<f64>,
}

// RMSProp with decay 0.9 and epsilon 1e-8, ascending.
struct RmsProp {
    cache: Vec<f64>,
    lr: f64,
}

impl RmsProp {
    fn new(n: usize, lr: f64) -> Self {
        RmsProp { cache: vec![0.0; n], lr }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(theta.len(), grad.len());
        for i in 0..theta.len() {
            self.cache[i] = 0.9 * self.cache[i] + 0.1 * grad[i] * grad[i];
            theta[i] += self.lr * grad[i] / (self.cache[i].sqrt() + 1e-8);
        }
    }
}

/// Fit the organic model on sessions with the configured bound.
///
/// One reparameterization sample per session per step; RMSProp updates per
/// mini-batch; L2 applied to all weights. `epochs = 0` returns the untouched
/// initialization.
pub fn fit_vae(
    sessions: &[OrganicSession],
    p: usize,
    cfg: &OrganicTrainConfig,
    rng: &mut RngStream,
) -> Result<TrainedOrganic> {
    if sessions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate(p)?;
    let k = cfg.k;
    let stats: Vec<SessionStats> = sessions
        .iter()
        .map(|s| SessionStats::from_items(&s.items, p))
        .collect::<Result<_>>()?;

    let mut init_rng = rng.fork(0);
    let mut params = OrganicParams {
        psi: Matrix::from_fn(p, k, |_, _| 0.01 * init_rng.standard_normal()),
        rho: vec![0.0; p],
    };
    let mut encoder = Encoder::init(cfg.encoder, p, k, &mut init_rng);

    let n_model = p * k + p;
    let mut opt_model = RmsProp::new(n_model, cfg.learning_rate);
    let n_enc = encoder_param_len(&encoder);
    let mut opt_enc = RmsProp::new(n_enc, cfg.learning_rate);

    let mut order: Vec<usize> = (0..sessions.len()).collect();
    let mut epoch_rng = rng.fork(1);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        epoch_rng.shuffle(&mut order);
        let mut epoch_bound = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g_model = vec![0.0; n_model];
            let mut g_enc = vec![0.0; n_enc];
            for &idx in batch {
                let st = &stats[idx];
                let value = accumulate_session_grads(
                    &params,
                    &encoder,
                    st,
                    cfg,
                    &mut epoch_rng,
                    &mut g_model,
                    &mut g_enc,
                )?;
                epoch_bound += value;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in g_model.iter_mut() {
                *g *= scale;
            }
            for g in g_enc.iter_mut() {
                *g *= scale;
            }
            if cfg.l2 > 0.0 {
                apply_l2(&params, &encoder, cfg.l2, &mut g_model, &mut g_enc);
            }
            step_model(&mut params, &mut opt_model, &g_model);
            step_encoder(&mut encoder, &mut opt_enc, &g_enc);
        }
        let mean_bound = epoch_bound / sessions.len() as f64;
        if !mean_bound.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "epoch bound became {mean_bound}"
            )));
        }
        trace.push(mean_bound);
    }

    Ok(TrainedOrganic { params, encoder, elbo_trace: trace })
}

/// Gradient of the chosen bound for one session, pushed through the encoder.
fn accumulate_session_grads(
    params: &OrganicParams,
    encoder: &Encoder,
    st: &SessionStats,
    cfg: &OrganicTrainConfig,
    rng: &mut RngStream,
    g_model: &mut [f64],
    g_enc: &mut [f64],
) -> Result<f64> {
    let p = params.p();
    let post = encoder.encode_stats(st, p);
    let (value, d_mu, d_logvar, d_psi, d_rho) = match cfg.bound {
        Bound::Reparam => {
            let eps = rng.standard_normal_vec(cfg.k);
            let g = elbo_reparam_grads_stats(params, &post, st, &eps)?;
            (g.value, g.d_mu, g.d_logvar, g.d_psi, g.d_rho)
        }
        Bound::Bouchard => {
            let bstate = optimize_bouchard_state(params, &post.mu, &post.var, 3);
            let negs = if cfg.neg_samples == 0 {
                None
            } else {
                Some(rng.sample_without_replacement(p, cfg.neg_samples))
            };
            let g = elbo_bouchard_grads_stats(params, &post, &bstate, st, negs.as_deref())?;
            (g.value, g.d_mu, g.d_logvar, g.d_psi, g.d_rho)
        }
        Bound::LogConcave => {
            let phi = super::bounds::optimal_phi(params, &post);
            let (g, _d_logphi) = elbo_logconcave_grads_stats(params, &post, phi, st)?;
            (g.value, g.d_mu, g.d_logvar, g.d_psi, g.d_rho)
        }
    };

    // model gradients are laid out [psi row-major | rho]
    let k = params.k();
    for r in 0..p {
        for c in 0..k {
            g_model[r * k + c] += d_psi[(r, c)];
        }
    }
    for r in 0..p {
        g_model[p * k + r] += d_rho[r];
    }

    backprop_encoder(encoder, st, p, &d_mu, &d_logvar, g_enc);
    Ok(value)
}

fn encoder_param_len(encoder: &Encoder) -> usize {
    match encoder {
        Encoder::Linear(e) => e.param_count(),
        Encoder::Deep(e) => {
            let mut n = 0;
            for (w, b) in &e.layers {
                n += w.rows() * w.cols() + b.len();
            }
            n += 2 * (e.head_mu.rows() * e.head_mu.cols() + e.bias_mu.len());
            n
        }
    }
}

/// Chain rule from (dL/dμ, dL/d logvar) into encoder weights.
fn backprop_encoder(
    encoder: &Encoder,
    st: &SessionStats,
    p: usize,
    d_mu: &[f64],
    d_logvar: &[f64],
    g_enc: &mut [f64],
) {
    match encoder {
        Encoder::Linear(e) => {
            let k = e.bias_mu.len();
            // layout: [W_mu | b_mu | W_lv | b_lv]
            let (wmu, rest) = g_enc.split_at_mut(k * p);
            let (bmu, rest) = rest.split_at_mut(k);
            let (wlv, blv) = rest.split_at_mut(k * p);
            for &(item, c) in &st.counts {
                for i in 0..k {
                    wmu[i * p + item] += c * d_mu[i];
                    wlv[i * p + item] += c * d_logvar[i];
                }
            }
            for i in 0..k {
                bmu[i] += d_mu[i];
                blv[i] += d_logvar[i];
            }
        }
        Encoder::Deep(e) => {
            let k = e.bias_mu.len();
            let (acts, _) = e.forward(&st.counts, p);
            let top = acts.last().unwrap();
            // head gradients and the delta flowing into the top activation
            let mut delta: Vec<f64> = vec![0.0; k];
            let mut off = 0;
            for (w, b) in &e.layers {
                off += w.rows() * w.cols() + b.len();
            }
            let (layer_space, head_space) = g_enc.split_at_mut(off);
            let (hmu, rest) = head_space.split_at_mut(k * k);
            let (bmu, rest) = rest.split_at_mut(k);
            let (hlv, blv) = rest.split_at_mut(k * k);
            for i in 0..k {
                for j in 0..k {
                    hmu[i * k + j] += d_mu[i] * top[j];
                    hlv[i * k + j] += d_logvar[i] * top[j];
                    delta[j] += d_mu[i] * e.head_mu[(i, j)] + d_logvar[i] * e.head_logvar[(i, j)];
                }
                bmu[i] += d_mu[i];
                blv[i] += d_logvar[i];
            }
            // walk layers backwards through the ReLUs
            let mut offsets = Vec::with_capacity(e.layers.len());
            let mut o = 0;
            for (w, b) in &e.layers {
                offsets.push(o);
                o += w.rows() * w.cols() + b.len();
            }
            for li in (0..e.layers.len()).rev() {
                let (w, _b) = &e.layers[li];
                let act = &acts[li];
                // ReLU gate
                for j in 0..k {
                    if act[j] <= 0.0 {
                        delta[j] = 0.0;
                    }
                }
                let o = offsets[li];
                let cols = w.cols();
                let (wg, bg) = layer_space[o..o + k * cols + k].split_at_mut(k * cols);
                if li == 0 {
                    for &(item, c) in &st.counts {
                        for i in 0..k {
                            wg[i * cols + item] += delta[i] * c;
                        }
                    }
                    for i in 0..k {
                        bg[i] += delta[i];
                    }
                } else {
                    let below = &acts[li - 1];
                    let mut new_delta = vec![0.0; k];
                    for i in 0..k {
                        for j in 0..cols {
                            wg[i * cols + j] += delta[i] * below[j];
                            new_delta[j] += delta[i] * w[(i, j)];
                        }
                        bg[i] += delta[i];
                    }
                    delta = new_delta;
                }
            }
        }
    }
}

fn apply_l2(
    params: &OrganicParams,
    encoder: &Encoder,
    l2: f64,
    g_model: &mut [f64],
    g_enc: &mut [f64],
) {
    let (p, k) = (params.p(), params.k());
    for r in 0..p {
        for c in 0..k {
            g_model[r * k + c] -= l2 * params.psi[(r, c)];
        }
    }
    for r in 0..p {
        g_model[p * k + r] -= l2 * params.rho[r];
    }
    let flat = encoder_params_flat(encoder);
    for (g, w) in g_enc.iter_mut().zip(flat) {
        *g -= l2 * w;
    }
}

fn encoder_params_flat(encoder: &Encoder) -> Vec<f64> {
    match encoder {
        Encoder::Linear(e) => {
            let mut v = e.weight_mu.data().to_vec();
            v.extend_from_slice(&e.bias_mu);
            v.extend_from_slice(e.weight_logvar.data());
            v.extend_from_slice(&e.bias_logvar);
            v
        }
        Encoder::Deep(e) => {
            let mut v = Vec::new();
            for (w, b) in &e.layers {
                v.extend_from_slice(w.data());
                v.extend_from_slice(b);
            }
            v.extend_from_slice(e.head_mu.data());
            v.extend_from_slice(&e.bias_mu);
            v.extend_from_slice(e.head_logvar.data());
            v.extend_from_slice(&e.bias_logvar);
            v
        }
    }
}

fn step_model(params: &mut OrganicParams, opt: &mut RmsProp, grad: &[f64]) {
    let (p, k) = (params.p(), params.k());
    let mut flat = params.psi.data().to_vec();
    flat.extend_from_slice(&params.rho);
    opt.step(&mut flat, grad);
    params.psi = Matrix::from_vec(p, k, flat[..p * k].to_vec());
    params.rho = flat[p * k..].to_vec();
}

fn step_encoder(encoder: &mut Encoder, opt: &mut RmsProp, grad: &[f64]) {
    let mut flat = encoder_params_flat(encoder);
    opt.step(&mut flat, grad);
    match encoder {
        Encoder::Linear(e) => {
            let k = e.bias_mu.len();
            let p = e.weight_mu.cols();
            let mut off = 0;
            e.weight_mu = Matrix::from_vec(k, p, flat[off..off + k * p].to_vec());
            off += k * p;
            e.bias_mu = flat[off..off + k].to_vec();
            off += k;
            e.weight_logvar = Matrix::from_vec(k, p, flat[off..off + k * p].to_vec());
            off += k * p;
            e.bias_logvar = flat[off..off + k].to_vec();
        }
        Encoder::Deep(e) => {
            let mut off = 0;
            for (w, b) in e.layers.iter_mut() {
                let (r, c) = (w.rows(), w.cols());
                *w = Matrix::from_vec(r, c, flat[off..off + r * c].to_vec());
                off += r * c;
                let blen = b.len();
                b.copy_from_slice(&flat[off..off + blen]);
                off += blen;
            }
            let k = e.bias_mu.len();
            e.head_mu = Matrix::from_vec(k, k, flat[off..off + k * k].to_vec());
            off += k * k;
            e.bias_mu.copy_from_slice(&flat[off..off + k]);
            off += k;
            e.head_logvar = Matrix::from_vec(k, k, flat[off..off + k * k].to_vec());
            off += k * k;
            e.bias_logvar.copy_from_slice(&flat[off..off + k]);
        }
    }
}
