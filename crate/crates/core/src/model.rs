//! Two-layer graph attention encoder, inner-product decoder and reconstruction loss.
//!
//! Each layer projects its input `G = H·W`, scores every pair in the proximity support
//! with `e_ij = LeakyReLU(M_ij · (a_selfᵀ g_i + a_nbrᵀ g_j))`, normalizes the scores per
//! row with a softmax, and aggregates `U_i = Σ_j α_ij g_j` before the layer activation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::kernels::{
    axpy, dot, for_each_row_mut, leaky_relu_grad_scalar, leaky_relu_scalar, masked_row_softmax,
    masked_row_softmax_backward, matmul, matmul_a_bt, matmul_at_b, sigmoid_scalar, softplus,
    xavier_init, Activation, KernelError, ParamStore, Tensor, LEAKY_SLOPE,
};
use crate::proximity::ProximityMatrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("reconstruction loss needs at least one edge")]
    NoEdges,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node {0} has an empty attention neighborhood")]
    EmptyNeighborhood(usize),
}

/// Where attention coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Each layer scores its own input with its own `W` and `a`.
    PerLayer,
    /// Coefficients computed once from the attributes (first layer) and reused by the
    /// second layer; the second attention vector is unused.
    SharedAttribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub attention: AttentionMode,
    /// Inverted dropout on each layer's input; 0 disables it.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            embed_dim: 16,
            hidden_activation: Activation::LeakyRelu,
            output_activation: Activation::Identity,
            attention: AttentionMode::PerLayer,
            dropout: 0.0,
        }
    }
}

/// Forward intermediates of one attention layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Dropout-masked input; `None` when the raw input was used.
    masked_input: Option<Tensor>,
    /// Dropout scaling per input entry (0 or 1/(1-p)); `None` without dropout.
    mask: Option<Vec<f64>>,
    /// `H · W`
    projected: Tensor,
    /// `M_ij · c_ij` per proximity entry, before LeakyReLU.
    scores: Vec<f64>,
    pre_activation: Tensor,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub hidden: Tensor,
    pub embedding: Tensor,
    /// Attention values aligned with the proximity matrix's stored entries.
    pub alpha: [Vec<f64>; 2],
    caches: [LayerCache; 2],
}

/// Parameter slots inside the model's store.
pub const W0: usize = 0;
pub const W1: usize = 1;
pub const A0: usize = 2;
pub const A1: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GatAutoencoder {
    pub config: EncoderConfig,
    pub params: ParamStore,
    input_dim: usize,
}

impl GatAutoencoder {
    /// Creates the parameter set `W0: m×hidden`, `W1: hidden×embed`, `a0: 2·hidden`,
    /// `a1: 2·embed`, Xavier-initialized from `seed`.
    pub fn new(input_dim: usize, config: EncoderConfig, seed: u64) -> Self {
        let mut params = ParamStore::new(seed);
        let h = config.hidden_dim;
        let d = config.embed_dim;
        params.add("w0", Tensor::zeros(input_dim, h)).unwrap();
        params.add("w1", Tensor::zeros(h, d)).unwrap();
        params.add("a0", Tensor::zeros(2 * h, 1)).unwrap();
        params.add("a1", Tensor::zeros(2 * d, 1)).unwrap();
        xavier_init(&mut params, seed);
        Self {
            config,
            params,
            input_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Runs the encoder. `dropout_rng` must be provided for dropout to take effect.
    pub fn forward(
        &self,
        x: &Tensor,
        prox: &ProximityMatrix,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOutput, ModelError> {
        if x.cols() != self.input_dim || x.rows() != prox.n() {
            return Err(ModelError::Shape(format!(
                "attributes {:?} for a model with input width {} on {} nodes",
                x.shape(),
                self.input_dim,
                prox.n()
            )));
        }
        let p = self.config.dropout;

        let (masked0, mask0) = apply_dropout(x, p, dropout_rng.as_deref_mut());
        let input0 = masked0.as_ref().unwrap_or(x);
        let g0 = matmul(input0, self.params.value(W0))?;
        let (scores0, alpha0) = score_and_normalize(&g0, self.params.value(A0).data(), prox)?;
        let u0 = aggregate(&alpha0, &g0, prox);
        let hidden = activate(&u0, self.config.hidden_activation);

        let (masked1, mask1) = apply_dropout(&hidden, p, dropout_rng);
        let input1 = masked1.as_ref().unwrap_or(&hidden);
        let g1 = matmul(input1, self.params.value(W1))?;
        let (scores1, alpha1) = match self.config.attention {
            AttentionMode::PerLayer => {
                score_and_normalize(&g1, self.params.value(A1).data(), prox)?
            }
            AttentionMode::SharedAttribute => (Vec::new(), alpha0.clone()),
        };
        let u1 = aggregate(&alpha1, &g1, prox);
        let embedding = activate(&u1, self.config.output_activation);

        Ok(EncoderOutput {
            hidden,
            embedding,
            alpha: [alpha0, alpha1],
            caches: [
                LayerCache {
                    masked_input: masked0,
                    mask: mask0,
                    projected: g0,
                    scores: scores0,
                    pre_activation: u0,
                },
                LayerCache {
                    masked_input: masked1,
                    mask: mask1,
                    projected: g1,
                    scores: scores1,
                    pre_activation: u1,
                },
            ],
        })
    }

    /// Accumulates `∂L/∂θ` into the parameter gradients given `∂L/∂Z`.
    pub fn backward(
        &mut self,
        x: &Tensor,
        prox: &ProximityMatrix,
        out: &EncoderOutput,
        d_embedding: &Tensor,
    ) -> Result<(), ModelError> {
        if d_embedding.shape() != out.embedding.shape() {
            return Err(ModelError::Shape("embedding gradient".into()));
        }
        let shared = self.config.attention == AttentionMode::SharedAttribute;
        let [c0, c1] = &out.caches;

        // Second layer.
        let d_u1 = activation_backward(&c1.pre_activation, d_embedding, self.config.output_activation);
        let (mut d_g1, d_alpha1) = aggregate_backward(&out.alpha[1], &c1.projected, &d_u1, prox);
        let mut carried_alpha_grad = None;
        if shared {
            carried_alpha_grad = Some(d_alpha1);
        } else {
            let da1 = attention_backward(
                &out.alpha[1],
                &c1.scores,
                &d_alpha1,
                &c1.projected,
                self.params.value(A1).data(),
                prox,
                &mut d_g1,
            );
            self.params
                .accumulate_grad(A1, &Tensor::from_vec(da1.len(), 1, da1)?)?;
        }
        let input1 = c1.masked_input.as_ref().unwrap_or(&out.hidden);
        let d_w1 = matmul_at_b(input1, &d_g1)?;
        self.params.accumulate_grad(W1, &d_w1)?;
        let mut d_hidden = matmul_a_bt(&d_g1, self.params.value(W1))?;
        if let Some(mask) = &c1.mask {
            for (g, m) in d_hidden.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }

        // First layer.
        let d_u0 = activation_backward(&c0.pre_activation, &d_hidden, self.config.hidden_activation);
        let (mut d_g0, mut d_alpha0) = aggregate_backward(&out.alpha[0], &c0.projected, &d_u0, prox);
        if let Some(extra) = carried_alpha_grad {
            for (a, b) in d_alpha0.iter_mut().zip(extra) {
                *a += b;
            }
        }
        let da0 = attention_backward(
            &out.alpha[0],
            &c0.scores,
            &d_alpha0,
            &c0.projected,
            self.params.value(A0).data(),
            prox,
            &mut d_g0,
        );
        self.params
            .accumulate_grad(A0, &Tensor::from_vec(da0.len(), 1, da0)?)?;
        let input0 = c0.masked_input.as_ref().unwrap_or(x);
        let d_w0 = matmul_at_b(input0, &d_g0)?;
        self.params.accumulate_grad(W0, &d_w0)?;
        Ok(())
    }
}

fn apply_dropout(
    x: &Tensor,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Option<Tensor>, Option<Vec<f64>>) {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask: Vec<f64> = (0..x.data().len())
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect();
            let mut masked = x.clone();
            for (v, m) in masked.data_mut().iter_mut().zip(&mask) {
                *v *= m;
            }
            (Some(masked), Some(mask))
        }
        _ => (None, None),
    }
}

fn activate(u: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Identity => u.clone(),
        _ => u.map(|v| act.apply(v)),
    }
}

fn activation_backward(u: &Tensor, d_out: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Identity => d_out.clone(),
        _ => {
            let data = u
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(&x, &g)| g * act.grad(x))
                .collect();
            Tensor::from_vec(u.rows(), u.cols(), data).expect("same shape")
        }
    }
}

/// Per-node halves of the attention logit: `(a_selfᵀ g_i, a_nbrᵀ g_i)`.
fn logit_halves(projected: &Tensor, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = projected.cols();
    let (a_self, a_nbr) = a.split_at(d);
    projected
        .iter_rows()
        .map(|g| (dot(a_self, g), dot(a_nbr, g)))
        .unzip()
}

/// Returns the pre-LeakyReLU scores `M_ij · c_ij` and the normalized coefficients.
fn score_and_normalize(
    projected: &Tensor,
    a: &[f64],
    prox: &ProximityMatrix,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    if a.len() != 2 * projected.cols() {
        return Err(ModelError::Shape(format!(
            "attention vector of length {} for layer width {}",
            a.len(),
            projected.cols()
        )));
    }
    let (s, r) = logit_halves(projected, a);
    let m = prox.matrix();
    let mut scores = vec![0.0; m.nnz()];
    let mut activated = vec![0.0; m.nnz()];
    for i in 0..prox.n() {
        let range = m.row_range(i);
        if range.is_empty() {
            return Err(ModelError::EmptyNeighborhood(i));
        }
        for k in range {
            let j = m.col_idx()[k];
            let score = m.values()[k] * (s[i] + r[j]);
            scores[k] = score;
            activated[k] = leaky_relu_scalar(score, LEAKY_SLOPE);
        }
    }
    let alpha = masked_row_softmax(m.row_ptr(), &activated)?;
    Ok((scores, alpha))
}

/// Attention coefficients of one layer given its input, weight and attention vector.
pub fn attention_coefficients(
    input: &Tensor,
    weight: &Tensor,
    a: &[f64],
    prox: &ProximityMatrix,
) -> Result<Vec<f64>, ModelError> {
    let projected = matmul(input, weight)?;
    Ok(score_and_normalize(&projected, a, prox)?.1)
}

/// `U_i = Σ_{j ∈ N_i} α_ij g_j`
fn aggregate(alpha: &[f64], projected: &Tensor, prox: &ProximityMatrix) -> Tensor {
    let m = prox.matrix();
    let mut out = Tensor::zeros(projected.rows(), projected.cols());
    for_each_row_mut(&mut out, |i, row| {
        for k in m.row_range(i) {
            axpy(row, alpha[k], projected.row(m.col_idx()[k]));
        }
    });
    out
}

/// Returns `(∂L/∂G, ∂L/∂α)` for `U = α·G`.
fn aggregate_backward(
    alpha: &[f64],
    projected: &Tensor,
    d_u: &Tensor,
    prox: &ProximityMatrix,
) -> (Tensor, Vec<f64>) {
    let m = prox.matrix();
    let mut d_g = Tensor::zeros(projected.rows(), projected.cols());
    for_each_row_mut(&mut d_g, |j, row| {
        for &(i, k) in prox.column_entries(j) {
            axpy(row, alpha[k], d_u.row(i));
        }
    });
    let d_alpha: Vec<f64> = (0..prox.n())
        .into_par_iter()
        .flat_map_iter(|i| {
            let du = d_u.row(i);
            m.row_range(i)
                .map(move |k| dot(du, projected.row(m.col_idx()[k])))
        })
        .collect();
    (d_g, d_alpha)
}

/// Backpropagates through the softmax, LeakyReLU and logit. Adds the logit's
/// contribution to `d_projected` and returns `∂L/∂a`.
fn attention_backward(
    alpha: &[f64],
    scores: &[f64],
    d_alpha: &[f64],
    projected: &Tensor,
    a: &[f64],
    prox: &ProximityMatrix,
    d_projected: &mut Tensor,
) -> Vec<f64> {
    let m = prox.matrix();
    let d_activated = masked_row_softmax_backward(m.row_ptr(), alpha, d_alpha);
    let n = prox.n();
    let d = projected.cols();
    let mut d_self = vec![0.0; n];
    let mut d_nbr = vec![0.0; n];
    for i in 0..n {
        for k in m.row_range(i) {
            let dc = d_activated[k] * leaky_relu_grad_scalar(scores[k], LEAKY_SLOPE) * m.values()[k];
            d_self[i] += dc;
            d_nbr[m.col_idx()[k]] += dc;
        }
    }
    let (a_self, a_nbr) = a.split_at(d);
    let mut d_a = vec![0.0; 2 * d];
    {
        let (da_self, da_nbr) = d_a.split_at_mut(d);
        for i in 0..n {
            let g = projected.row(i);
            axpy(da_self, d_self[i], g);
            axpy(da_nbr, d_nbr[i], g);
        }
    }
    for_each_row_mut(d_projected, |i, row| {
        axpy(row, d_self[i], a_self);
        axpy(row, d_nbr[i], a_nbr);
    });
    d_a
}

/// Dense reconstruction `Â_ij = sigmoid(z_iᵀ z_j)`.
pub fn decode(z: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(z.rows(), z.rows());
    for_each_row_mut(&mut out, |i, row| {
        let zi = z.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = sigmoid_scalar(dot(zi, z.row(j)));
        }
    });
    out
}

/// Weight on positive (edge) pairs: zero entries of A over one entries.
pub fn positive_weight(g: &Graph) -> Result<f64, ModelError> {
    let n = g.n() as f64;
    let ones = 2.0 * g.num_edges() as f64;
    if ones == 0.0 {
        return Err(ModelError::NoEdges);
    }
    Ok((n * n - ones) / ones)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub loss: f64,
    pub d_embedding: Tensor,
}

/// Class-weighted binary cross-entropy between `A` and `sigmoid(Z Zᵀ)`, averaged over
/// all n² ordered pairs, with its gradient w.r.t. `Z`. Evaluated on logits.
pub fn reconstruction_loss(g: &Graph, z: &Tensor) -> Result<Reconstruction, ModelError> {
    if z.rows() != g.n() {
        return Err(ModelError::Shape("embedding rows".into()));
    }
    let w_pos = positive_weight(g)?;
    let n = g.n();
    let scale = 1.0 / (n as f64 * n as f64);
    let d = z.cols();

    let mut d_z = Tensor::zeros(n, d);
    let mut row_loss = vec![0.0; n];
    let body = |i: usize, dz_row: &mut [f64], loss: &mut f64| {
        let zi = z.row(i);
        let nbrs = g.neighbors(i);
        let mut next = 0;
        let mut acc = 0.0;
        for j in 0..n {
            let zj = z.row(j);
            let x = dot(zi, zj);
            let is_edge = next < nbrs.len() && nbrs[next] == j;
            let grad = if is_edge {
                next += 1;
                acc += w_pos * softplus(-x);
                w_pos * (sigmoid_scalar(x) - 1.0)
            } else {
                acc += softplus(x);
                sigmoid_scalar(x)
            };
            // x_ij = x_ji, so each pair contributes twice to ∂/∂z_i.
            axpy(dz_row, 2.0 * scale * grad, zj);
        }
        *loss = acc;
    };
    if d == 0 {
        (0..n).for_each(|i| body(i, &mut [], &mut row_loss[i]));
    } else {
        d_z.data_mut()
            .par_chunks_mut(d)
            .zip(row_loss.par_iter_mut())
            .enumerate()
            .for_each(|(i, (dz_row, loss))| body(i, dz_row, loss));
    }
    let loss = row_loss.iter().sum::<f64>() * scale;
    Ok(Reconstruction {
        loss,
        d_embedding: d_z,
    })
}

/// Same objective as [`reconstruction_loss`] evaluated from an explicit `Â`.
/// Probabilities are clamped away from 0 and 1 before taking logs.
pub fn reconstruction_loss_from_probs(g: &Graph, a_hat: &Tensor) -> Result<f64, ModelError> {
    if a_hat.shape() != (g.n(), g.n()) {
        return Err(ModelError::Shape("reconstruction matrix".into()));
    }
    let w_pos = positive_weight(g)?;
    let n = g.n();
    let tiny = 1e-15;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = a_hat.get(i, j).clamp(tiny, 1.0 - tiny);
            total += if g.has_edge(i, j) {
                -w_pos * p.ln()
            } else {
                -(1.0 - p).ln()
            };
        }
    }
    Ok(total / (n as f64 * n as f64))
}

/// Unbiased sampled estimate of [`reconstruction_loss`]: every positive pair plus an
/// equal number of uniformly drawn non-edge pairs.
pub fn reconstruction_loss_sampled(
    g: &Graph,
    z: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Reconstruction, ModelError> {
    if z.rows() != g.n() {
        return Err(ModelError::Shape("embedding rows".into()));
    }
    let n = g.n();
    let ones = 2 * g.num_edges();
    if ones == 0 {
        return Err(ModelError::NoEdges);
    }
    let total_pairs = (n * n) as f64;
    // Full loss = (n² − e)/n² · (mean over positives + mean over negatives).
    let scale = (total_pairs - ones as f64) / total_pairs / ones as f64;
    let mut d_z = Tensor::zeros(n, z.cols());
    let mut loss = 0.0;
    let mut push = |i: usize, j: usize, positive: bool, d_z: &mut Tensor| {
        let x = dot(z.row(i), z.row(j));
        let grad = if positive {
            loss += softplus(-x);
            sigmoid_scalar(x) - 1.0
        } else {
            loss += softplus(x);
            sigmoid_scalar(x)
        };
        let zj = z.row(j).to_vec();
        let zi = z.row(i).to_vec();
        axpy(d_z.row_mut(i), scale * grad, &zj);
        axpy(d_z.row_mut(j), scale * grad, &zi);
    };
    for &(a, b) in g.edges() {
        push(a, b, true, &mut d_z);
        push(b, a, true, &mut d_z);
    }
    let mut drawn = 0;
    while drawn < ones {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if g.has_edge(i, j) {
            continue;
        }
        push(i, j, false, &mut d_z);
        drawn += 1;
    }
    Ok(Reconstruction {
        loss: loss * scale,
        d_embedding: d_z,
    })
}
