//! Layers built from tape primitives.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::{AutodiffError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map over the trailing axis, `y = x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    /// Registers `{prefix}.weight` `[in, out]` and `{prefix}.bias` `[out]`,
    /// both uniform in `±1/sqrt(in)`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.register_uniform(&format!("{prefix}.weight"), &[input, output], bound, rng)?;
        let bias = store.register_uniform(&format!("{prefix}.bias"), &[output], bound, rng)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        linear(tape, x, w, b)
    }
}

pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self, AutodiffError> {
        let gain = store.register(&format!("{prefix}.gain"), Tensor::filled(&[dim], 1.0))?;
        let bias = store.register(&format!("{prefix}.bias"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// Sinusoidal encoding, `[len, dim]`; `dim` must be even.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor, AutodiffError> {
    if !dim.is_multiple_of(2) || dim == 0 {
        return Err(AutodiffError::InvalidConfig(format!(
            "positional encoding needs an even model dim, got {dim}"
        )));
    }
    let mut data = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[t * dim + 2 * i] = angle.sin();
            data[t * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, dim], data)
}

/// Scaled dot-product attention with `heads` heads and no causal mask.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    /// `[B, S, d]`
    pub output: Var,
    /// `[B * heads, S, S]`, rows sum to one.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(AutodiffError::InvalidConfig(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{prefix}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{prefix}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{prefix}.value"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{prefix}.output"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// Inputs are `[B, S, d]`; attention runs independently per batch row.
    pub fn forward(&self, tape: &mut Tape, q_in: Var, k_in: Var, v_in: Var) -> Result<AttentionOutput, AutodiffError> {
        let shape = tape.shape(q_in).to_vec();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(AutodiffError::ShapeMismatch(format!(
                "attention input {:?}, model dim {}",
                shape, self.dim
            )));
        }
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let kshape = tape.shape(k_in).to_vec();
        if tape.shape(v_in) != kshape.as_slice() || kshape.len() != 3 || kshape[0] != b || kshape[2] != d {
            return Err(AutodiffError::ShapeMismatch(format!(
                "attention key/value {:?} vs query {:?}",
                kshape, shape
            )));
        }
        let sk = kshape[1];
        let h = self.heads;
        let dh = d / h;

        let q = self.query.forward(tape, q_in)?;
        let k = self.key.forward(tape, k_in)?;
        let v = self.value.forward(tape, v_in)?;
        let q = split_heads(tape, q, b, s, h, dh)?;
        let k = split_heads(tape, k, b, sk, h, dh)?;
        let v = split_heads(tape, v, b, sk, h, dh)?;

        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax(scores);
        let ctx = tape.bmm(weights, v, false)?;

        let ctx = tape.reshape(ctx, &[b, h, s, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, s, d])?;
        let output = self.output.forward(tape, ctx)?;
        Ok(AttentionOutput { output, weights })
    }
}

fn split_heads(tape: &mut Tape, x: Var, b: usize, s: usize, h: usize, dh: usize) -> Result<Var, AutodiffError> {
    let x = tape.reshape(x, &[b, s, h, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * h, s, dh])
}

/// `linear(d -> hidden) -> relu -> linear(hidden -> d)`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            inner: Linear::new(store, &format!("{prefix}.inner"), dim, hidden, rng)?,
            outer: Linear::new(store, &format!("{prefix}.outer"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let hidden = self.inner.forward(tape, x)?;
        let hidden = tape.relu(hidden);
        self.outer.forward(tape, hidden)
    }
}

pub fn mse_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var, AutodiffError> {
    tape.mse(pred, truth)
}
