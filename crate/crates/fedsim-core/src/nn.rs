//! Two-hidden-layer ReLU MLP with a main classification head and an
//! auxiliary classification head, plus exact manual backpropagation.
//!
//! Architecture (all math in `f64`, inputs row-major `batch x input_dim`):
//!
//! ```text
//! x --W1,b1--> z1 --relu--> a1 --W2,b2--> z2 --relu--> a2 --W3,b3--> main logits
//!                           |
//!                           +--Wa,ba--> auxiliary logits
//! ```
//!
//! `a1` is the shared backbone feature; the auxiliary head reads it
//! directly so shallow layers receive their own classification signal.
//! The training loss is any weighted combination of cross-entropy on the
//! main head, cross-entropy on the auxiliary head, and
//! `KL(main(tau) || aux(tau))` between temperature-sharpened heads; targets
//! in a [`LossSpec`] are plain numbers and therefore constants under
//! differentiation (detached). [`finite_diff_grad`] provides the
//! central-difference oracle used to pin the analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Predicted probabilities are clamped to this floor inside the log of
/// [`cross_entropy`], bounding the loss for (near-)zero predictions.
pub const PROB_FLOOR: f64 = 1e-12;

/// Layer widths of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub num_classes: usize,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::config("model layer widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("model needs at least 2 classes"));
        }
        Ok(())
    }

    /// Total number of scalar parameters across all eight blocks.
    pub fn param_count(&self) -> usize {
        let ModelShape {
            input_dim: d,
            hidden1: h1,
            hidden2: h2,
            num_classes: c,
        } = *self;
        h1 * d + h1 + h2 * h1 + h2 + c * h2 + c + c * h1 + c
    }
}

/// All trainable parameters. Weight blocks are row-major
/// `(out_dim x in_dim)`; flattening order is
/// `w1, b1, w2, b2, w3, b3, wa, ba`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub shape: ModelShape,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub wa: Vec<f64>,
    pub ba: Vec<f64>,
}

/// Gradients share the exact block layout of the parameters.
pub type Gradients = MlpParams;

impl MlpParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let ModelShape {
            input_dim: d,
            hidden1: h1,
            hidden2: h2,
            num_classes: c,
        } = shape;
        MlpParams {
            shape,
            w1: vec![0.0; h1 * d],
            b1: vec![0.0; h1],
            w2: vec![0.0; h2 * h1],
            b2: vec![0.0; h2],
            w3: vec![0.0; c * h2],
            b3: vec![0.0; c],
            wa: vec![0.0; c * h1],
            ba: vec![0.0; c],
        }
    }

    /// He-uniform initialization: each weight drawn from
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases zero. Blocks are filled
    /// in the order `w1, w2, w3, wa` so the stream consumption is fixed.
    pub fn seeded_init(shape: ModelShape, rng: &mut Rng) -> Self {
        let mut p = MlpParams::zeros(shape);
        let fills: [(&mut Vec<f64>, usize); 4] = [
            (&mut p.w1, shape.input_dim),
            (&mut p.w2, shape.hidden1),
            (&mut p.w3, shape.hidden2),
            (&mut p.wa, shape.hidden1),
        ];
        for (block, fan_in) in fills {
            let limit = libm::sqrt(6.0 / fan_in as f64);
            for w in block.iter_mut() {
                *w = rng.uniform_in(-limit, limit);
            }
        }
        p
    }

    /// Immutable views of the eight blocks in flattening order.
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.wa, &self.ba,
        ]
    }

    /// Mutable views of the eight blocks in flattening order.
    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        let MlpParams {
            shape: _,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            wa,
            ba,
        } = self;
        [w1, b1, w2, b2, w3, b3, wa, ba]
    }

    /// Concatenates all blocks into one vector (order `w1..ba`).
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.shape.param_count());
        for block in self.blocks() {
            flat.extend_from_slice(block);
        }
        flat
    }

    /// Rebuilds parameters from a flat vector produced by [`flatten`].
    ///
    /// [`flatten`]: MlpParams::flatten
    pub fn from_flat(shape: ModelShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter vector",
                expected: shape.param_count(),
                found: flat.len(),
            });
        }
        let mut p = MlpParams::zeros(shape);
        let mut offset = 0;
        for block in p.blocks_mut() {
            let len = block.len();
            block.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(p)
    }

    /// Adds `scale * delta` (flat layout) to the parameters in place.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) -> Result<()> {
        if delta.len() != self.shape.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter delta",
                expected: self.shape.param_count(),
                found: delta.len(),
            });
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v += scale * delta[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Every intermediate activation of one forward pass, row-major per batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub z1: Vec<f64>,
    /// Backbone features (post-ReLU first hidden layer), `batch x hidden1`.
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub main_logits: Vec<f64>,
    pub aux_logits: Vec<f64>,
    pub main_probs: Vec<f64>,
    pub aux_probs: Vec<f64>,
}

impl ForwardTrace {
    /// Backbone feature row for sample `i`.
    pub fn feature(&self, i: usize, shape: &ModelShape) -> &[f64] {
        &self.a1[i * shape.hidden1..(i + 1) * shape.hidden1]
    }

    /// Main-head probability row for sample `i`.
    pub fn main_prob(&self, i: usize, shape: &ModelShape) -> &[f64] {
        &self.main_probs[i * shape.num_classes..(i + 1) * shape.num_classes]
    }
}

/// `out[i] = bias + W * x[i]` for a row-major batch.
fn affine(x: &[f64], batch: usize, in_dim: usize, w: &[f64], bias: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * out_dim];
    for i in 0..batch {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        let oi = &mut out[i * out_dim..(i + 1) * out_dim];
        for (r, o) in oi.iter_mut().enumerate() {
            let wr = &w[r * in_dim..(r + 1) * in_dim];
            let mut acc = bias[r];
            for (wv, xv) in wr.iter().zip(xi) {
                acc += wv * xv;
            }
            *o = acc;
        }
    }
    out
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Numerically stable softmax of one row into `out`; outputs are strictly
/// positive and sum to 1 (exp values are floored at 1e-300 before
/// normalization so extreme logit spreads cannot produce exact zeros).
fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| if v > m { v } else { m });
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = libm::exp(v - max).max(1e-300);
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn softmax_rows(logits: &[f64], batch: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * width];
    for i in 0..batch {
        softmax_row_into(&logits[i * width..(i + 1) * width], &mut out[i * width..(i + 1) * width]);
    }
    out
}

/// Temperature-sharpened distribution `softmax(logits / tau)` of one logit
/// vector. `tau = 1` is plain softmax; large `tau` flattens toward uniform.
pub fn sharpen(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::config("sharpening temperature must be positive"));
    }
    if logits.is_empty() {
        return Err(Error::Empty("logit vector"));
    }
    let scaled: Vec<f64> = logits.iter().map(|&v| v / tau).collect();
    let mut out = vec![0.0; logits.len()];
    softmax_row_into(&scaled, &mut out);
    Ok(out)
}

/// Cross-entropy `H(target, predicted) = -sum target * ln(predicted)` with
/// predictions clamped at [`PROB_FLOOR`] inside the log.
pub fn cross_entropy(target: &[f64], predicted: &[f64]) -> f64 {
    assert_eq!(target.len(), predicted.len(), "distribution widths differ");
    let mut h = 0.0;
    for (&t, &p) in target.iter().zip(predicted) {
        h -= t * libm::log(p.max(PROB_FLOOR));
    }
    h
}

/// `KL(p || q) = sum p * ln(p / q)`; terms with `p = 0` contribute zero, and
/// `q` is floored at the smallest positive double to keep the value finite.
pub fn kl_div(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distribution widths differ");
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * libm::log(pi / qi.max(f64::MIN_POSITIVE));
        }
    }
    kl
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs the network on a row-major batch.
pub fn forward(params: &MlpParams, inputs: &[f64]) -> Result<ForwardTrace> {
    let ModelShape {
        input_dim: d,
        hidden1: h1,
        hidden2: h2,
        num_classes: c,
    } = params.shape;
    if inputs.is_empty() {
        return Err(Error::Empty("input batch"));
    }
    if inputs.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            what: "input batch",
            expected: d,
            found: inputs.len(),
        });
    }
    let batch = inputs.len() / d;
    let z1 = affine(inputs, batch, d, &params.w1, &params.b1, h1);
    let a1 = relu(&z1);
    let z2 = affine(&a1, batch, h1, &params.w2, &params.b2, h2);
    let a2 = relu(&z2);
    let main_logits = affine(&a2, batch, h2, &params.w3, &params.b3, c);
    let aux_logits = affine(&a1, batch, h1, &params.wa, &params.ba, c);
    let main_probs = softmax_rows(&main_logits, batch, c);
    let aux_probs = softmax_rows(&aux_logits, batch, c);
    Ok(ForwardTrace {
        batch,
        z1,
        a1,
        z2,
        a2,
        main_logits,
        aux_logits,
        main_probs,
        aux_probs,
    })
}

/// One cross-entropy term of a [`LossSpec`]: per-sample target
/// distributions (`batch x num_classes`, row-major) and a scalar weight.
#[derive(Debug, Clone, Copy)]
pub struct CeTerm<'a> {
    pub targets: &'a [f64],
    pub weight: f64,
}

/// Selects which loss terms the scalar training loss contains. All terms
/// are batch means; targets are constants under differentiation.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    /// Cross-entropy on the main head.
    pub main_ce: Option<CeTerm<'a>>,
    /// Cross-entropy on the auxiliary head.
    pub aux_ce: Option<CeTerm<'a>>,
    /// Weight of `KL(main(tau) || aux(tau))`; `0` disables the term.
    pub self_kl_weight: f64,
    /// Temperature for the KL term (must be positive when the term is on).
    pub tau: f64,
}

impl<'a> LossSpec<'a> {
    /// Plain cross-entropy training on the main head.
    pub fn main_only(targets: &'a [f64]) -> Self {
        LossSpec {
            main_ce: Some(CeTerm { targets, weight: 1.0 }),
            aux_ce: None,
            self_kl_weight: 0.0,
            tau: 1.0,
        }
    }

    fn validate(&self, batch: usize, classes: usize) -> Result<()> {
        for term in [&self.main_ce, &self.aux_ce].into_iter().flatten() {
            if term.targets.len() != batch * classes {
                return Err(Error::DimensionMismatch {
                    what: "loss targets",
                    expected: batch * classes,
                    found: term.targets.len(),
                });
            }
        }
        if self.self_kl_weight != 0.0 && !(self.tau > 0.0) {
            return Err(Error::config("KL temperature must be positive"));
        }
        Ok(())
    }
}

/// Scalar loss selected by `spec`, averaged over the batch. This is the
/// exact function [`backward`] differentiates and [`finite_diff_grad`]
/// probes.
pub fn loss_value(params: &MlpParams, inputs: &[f64], spec: &LossSpec) -> Result<f64> {
    let trace = forward(params, inputs)?;
    let c = params.shape.num_classes;
    let b = trace.batch;
    spec.validate(b, c)?;
    let mut total = 0.0;
    for i in 0..b {
        let row = i * c..(i + 1) * c;
        if let Some(term) = &spec.main_ce {
            total += term.weight * cross_entropy(&term.targets[row.clone()], &trace.main_probs[row.clone()]);
        }
        if let Some(term) = &spec.aux_ce {
            total += term.weight * cross_entropy(&term.targets[row.clone()], &trace.aux_probs[row.clone()]);
        }
        if spec.self_kl_weight != 0.0 {
            let p_t = sharpen(&trace.main_logits[row.clone()], spec.tau)?;
            let q_t = sharpen(&trace.aux_logits[row.clone()], spec.tau)?;
            total += spec.self_kl_weight * kl_div(&p_t, &q_t);
        }
    }
    Ok(total / b as f64)
}

/// Exact analytic gradients of [`loss_value`] with respect to every
/// parameter block, averaged over the batch.
///
/// Logit-space derivatives: for a soft-target cross-entropy term with
/// targets `t` and probabilities `p = softmax(u)`,
/// `dL/du_j = (sum_i t_i) * p_j - t_j`. For the KL term with
/// `p = softmax(u/tau)`, `q = softmax(v/tau)`,
/// `dKL/du_j = p_j (ln(p_j/q_j) - KL) / tau` and
/// `dKL/dv_j = (q_j - p_j) / tau`; gradients flow through both heads into
/// the shared backbone. The ReLU subgradient at exactly zero is taken as 0.
pub fn backward(params: &MlpParams, inputs: &[f64], spec: &LossSpec) -> Result<Gradients> {
    let trace = forward(params, inputs)?;
    let ModelShape {
        input_dim: d,
        hidden1: h1,
        hidden2: h2,
        num_classes: c,
    } = params.shape;
    let b = trace.batch;
    spec.validate(b, c)?;

    let inv_b = 1.0 / b as f64;
    let mut d_main = vec![0.0; b * c];
    let mut d_aux = vec![0.0; b * c];

    if let Some(term) = &spec.main_ce {
        accumulate_ce_logit_grad(&mut d_main, term, &trace.main_probs, b, c, inv_b);
    }
    if let Some(term) = &spec.aux_ce {
        accumulate_ce_logit_grad(&mut d_aux, term, &trace.aux_probs, b, c, inv_b);
    }
    if spec.self_kl_weight != 0.0 {
        let scale = spec.self_kl_weight * inv_b / spec.tau;
        for i in 0..b {
            let row = i * c..(i + 1) * c;
            let p_t = sharpen(&trace.main_logits[row.clone()], spec.tau)?;
            let q_t = sharpen(&trace.aux_logits[row.clone()], spec.tau)?;
            let kl = kl_div(&p_t, &q_t);
            for j in 0..c {
                let log_ratio = libm::log(p_t[j] / q_t[j].max(f64::MIN_POSITIVE));
                d_main[i * c + j] += scale * p_t[j] * (log_ratio - kl);
                d_aux[i * c + j] += scale * (q_t[j] - p_t[j]);
            }
        }
    }

    let mut g = MlpParams::zeros(params.shape);
    let mut da2 = vec![0.0; h2];
    let mut dz2 = vec![0.0; h2];
    let mut da1 = vec![0.0; h1];
    let mut dz1 = vec![0.0; h1];
    for i in 0..b {
        let xi = &inputs[i * d..(i + 1) * d];
        let a1i = &trace.a1[i * h1..(i + 1) * h1];
        let a2i = &trace.a2[i * h2..(i + 1) * h2];
        let z1i = &trace.z1[i * h1..(i + 1) * h1];
        let z2i = &trace.z2[i * h2..(i + 1) * h2];
        let dui = &d_main[i * c..(i + 1) * c];
        let dvi = &d_aux[i * c..(i + 1) * c];

        // Main head: u = W3 a2 + b3.
        for j in 0..c {
            g.b3[j] += dui[j];
            for r in 0..h2 {
                g.w3[j * h2 + r] += dui[j] * a2i[r];
            }
        }
        // Auxiliary head: v = Wa a1 + ba.
        for j in 0..c {
            g.ba[j] += dvi[j];
            for r in 0..h1 {
                g.wa[j * h1 + r] += dvi[j] * a1i[r];
            }
        }
        // Back through the second hidden layer.
        for r in 0..h2 {
            let mut acc = 0.0;
            for j in 0..c {
                acc += params.w3[j * h2 + r] * dui[j];
            }
            da2[r] = acc;
            dz2[r] = if z2i[r] > 0.0 { acc } else { 0.0 };
        }
        for r in 0..h2 {
            g.b2[r] += dz2[r];
            for s in 0..h1 {
                g.w2[r * h1 + s] += dz2[r] * a1i[s];
            }
        }
        // Into the backbone: contributions from both the deep path and the
        // auxiliary head.
        for s in 0..h1 {
            let mut acc = 0.0;
            for r in 0..h2 {
                acc += params.w2[r * h1 + s] * dz2[r];
            }
            for j in 0..c {
                acc += params.wa[j * h1 + s] * dvi[j];
            }
            da1[s] = acc;
            dz1[s] = if z1i[s] > 0.0 { acc } else { 0.0 };
        }
        for s in 0..h1 {
            g.b1[s] += dz1[s];
            for t in 0..d {
                g.w1[s * d + t] += dz1[s] * xi[t];
            }
        }
    }
    Ok(g)
}

/// Adds the logit gradient of one weighted soft-target CE term.
fn accumulate_ce_logit_grad(
    d_logits: &mut [f64],
    term: &CeTerm,
    probs: &[f64],
    batch: usize,
    classes: usize,
    inv_b: f64,
) {
    for i in 0..batch {
        let base = i * classes;
        let mut target_sum = 0.0;
        for j in 0..classes {
            target_sum += term.targets[base + j];
        }
        for j in 0..classes {
            d_logits[base + j] +=
                term.weight * inv_b * (target_sum * probs[base + j] - term.targets[base + j]);
        }
    }
}

/// Central-difference gradient oracle:
/// `(L(theta + eps e_k) - L(theta - eps e_k)) / (2 eps)` per coordinate.
/// Independent of [`backward`] by construction — it only calls
/// [`loss_value`].
pub fn finite_diff_grad(
    params: &MlpParams,
    inputs: &[f64],
    spec: &LossSpec,
    eps: f64,
) -> Result<Gradients> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut flat = params.flatten();
    let mut grad = vec![0.0; flat.len()];
    for k in 0..flat.len() {
        let saved = flat[k];
        flat[k] = saved + eps;
        let up = loss_value(&MlpParams::from_flat(params.shape, &flat)?, inputs, spec)?;
        flat[k] = saved - eps;
        let down = loss_value(&MlpParams::from_flat(params.shape, &flat)?, inputs, spec)?;
        flat[k] = saved;
        grad[k] = (up - down) / (2.0 * eps);
    }
    MlpParams::from_flat(params.shape, &grad)
}

/// SGD hyperparameters; defaults follow the standard recipe used by the
/// simulator (lr 0.01, momentum 0.9, weight decay 1e-5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        SgdHyper {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
        }
    }
}

impl SgdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter block.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: MlpParams,
}

impl OptimizerState {
    pub fn zeros(shape: ModelShape) -> Self {
        OptimizerState {
            velocity: MlpParams::zeros(shape),
        }
    }
}

/// One SGD step with momentum and weight decay folded into the gradient:
/// `v <- momentum v + g + weight_decay p; p <- p - lr v`.
pub fn sgd_step(params: &mut MlpParams, grads: &Gradients, state: &mut OptimizerState, hp: &SgdHyper) {
    assert_eq!(params.shape, grads.shape, "gradient shape differs from parameters");
    assert_eq!(params.shape, state.velocity.shape, "optimizer state shape differs");
    let g_blocks = grads.blocks();
    let v_blocks = state.velocity.blocks_mut();
    let p_blocks = params.blocks_mut();
    for ((p, g), v) in p_blocks.into_iter().zip(g_blocks).zip(v_blocks) {
        for ((pv, &gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vv = hp.momentum * *vv + gv + hp.weight_decay * *pv;
            *pv -= hp.lr * *vv;
        }
    }
}
