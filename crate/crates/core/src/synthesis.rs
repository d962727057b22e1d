//! The content synthesis network.
//!
//! The target and its `K` references are embedded into `K + 1` tracks of
//! `T x d` (target last). Each block attends across tracks at every step,
//! then across steps within every track, then applies a feed-forward layer;
//! each sub-layer is wrapped as `LayerNorm(x + f(x))`. An MLP over the
//! target track produces the completed `T x v` snippet.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    positional_encoding, AutodiffError, Checkpoint, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore,
    Tape, Tensor, Var,
};
use crate::data::{Mask, Snippet};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub d: usize,
    /// Number of aggregation blocks `L`.
    pub blocks: usize,
    pub heads: usize,
    pub k: usize,
    pub t: usize,
    pub v: usize,
    pub d_ff: usize,
}

impl SynthesisConfig {
    /// `d_ff` defaults to `4d`.
    pub fn new(d: usize, blocks: usize, heads: usize, k: usize, t: usize, v: usize) -> Self {
        Self { d, blocks, heads, k, t, v, d_ff: 4 * d }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let bad = |m: String| Err(AutodiffError::InvalidConfig(m));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad(format!("d = {} must be even and positive", self.d));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} not divisible by {} heads", self.d, self.heads));
        }
        if self.blocks == 0 {
            return bad("at least one block required".into());
        }
        if self.t == 0 || self.v == 0 || self.d_ff == 0 {
            return bad(format!("t = {}, v = {}, d_ff = {} must be positive", self.t, self.v, self.d_ff));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub content: MultiHeadAttention,
    pub content_norm: LayerNorm,
    pub temporal: MultiHeadAttention,
    pub temporal_norm: LayerNorm,
    pub feed_forward: FeedForward,
    pub ff_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct SynthesisModel {
    config: SynthesisConfig,
    store: ParamStore,
    target_proj: Linear,
    /// Shared by every reference; absent when `k = 0`.
    ref_proj: Option<Linear>,
    input_norm: LayerNorm,
    blocks: Vec<Block>,
    out_hidden: Linear,
    out_final: Linear,
    pe: Tensor,
}

impl SynthesisModel {
    pub fn new(config: SynthesisConfig, seed: u64) -> Result<Self, AutodiffError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, v) = (config.d, config.v);
        let target_proj = Linear::new(&mut store, "input.target", v, d, &mut rng)?;
        let ref_proj = match config.k {
            0 => None,
            _ => Some(Linear::new(&mut store, "input.reference", v, d, &mut rng)?),
        };
        let input_norm = LayerNorm::new(&mut store, "input.norm", d)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            let p = format!("block{l}");
            blocks.push(Block {
                content: MultiHeadAttention::new(&mut store, &format!("{p}.content"), d, config.heads, &mut rng)?,
                content_norm: LayerNorm::new(&mut store, &format!("{p}.content_norm"), d)?,
                temporal: MultiHeadAttention::new(&mut store, &format!("{p}.temporal"), d, config.heads, &mut rng)?,
                temporal_norm: LayerNorm::new(&mut store, &format!("{p}.temporal_norm"), d)?,
                feed_forward: FeedForward::new(&mut store, &format!("{p}.ff"), d, config.d_ff, &mut rng)?,
                ff_norm: LayerNorm::new(&mut store, &format!("{p}.ff_norm"), d)?,
            });
        }
        let out_hidden = Linear::new(&mut store, "output.hidden", d, d, &mut rng)?;
        let out_final = Linear::new(&mut store, "output.final", d, v, &mut rng)?;
        let pe = positional_encoding(config.t, d)?;
        Ok(Self { config, store, target_proj, ref_proj, input_norm, blocks, out_hidden, out_final, pe })
    }

    pub fn config(&self) -> &SynthesisConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.store)
    }

    fn check_input(&self, x: &Tensor, what: &str) -> Result<(), AutodiffError> {
        if x.shape() != [self.config.t, self.config.v] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{what} has shape {:?}, model expects [{}, {}]",
                x.shape(),
                self.config.t,
                self.config.v
            )));
        }
        Ok(())
    }

    /// Target `[T, v]` and `K` references `[T, v]` to `Ĥ` of `[K + 1, T, d]`.
    pub fn input_embed(&self, tape: &mut Tape, target: Var, refs: &[Var]) -> Result<Var, AutodiffError> {
        let SynthesisConfig { t, d, k, .. } = self.config;
        if refs.len() != k {
            return Err(AutodiffError::ShapeMismatch(format!("{} references for a K = {k} model", refs.len())));
        }
        self.check_input(tape.value(target), "target")?;
        for &r in refs {
            self.check_input(tape.value(r), "reference")?;
        }
        let h_target = self.target_proj.forward(tape, target)?;
        let h_target = tape.reshape(h_target, &[1, t, d])?;
        let stacked = match &self.ref_proj {
            Some(proj) => {
                let r = tape.concat0(refs)?;
                let r = tape.reshape(r, &[k, t, self.config.v])?;
                let h_refs = proj.forward(tape, r)?;
                tape.concat0(&[h_refs, h_target])?
            }
            None => h_target,
        };
        let mut pe = Vec::with_capacity((k + 1) * t * d);
        for _ in 0..=k {
            pe.extend_from_slice(self.pe.data());
        }
        let pe = tape.constant(Tensor::new(vec![k + 1, t, d], pe)?);
        let h = tape.add(stacked, pe)?;
        self.input_norm.forward(tape, h)
    }

    /// Attention across the `K + 1` tracks at each step. Returns the output and
    /// the attention weights `[T * heads, K + 1, K + 1]`.
    pub fn content_attention(&self, tape: &mut Tape, block: &Block, h: Var) -> Result<(Var, Var), AutodiffError> {
        let by_step = tape.permute(h, &[1, 0, 2])?;
        let att = block.content.forward(tape, by_step, by_step, by_step)?;
        let out = tape.permute(att.output, &[1, 0, 2])?;
        let res = tape.add(h, out)?;
        Ok((block.content_norm.forward(tape, res)?, att.weights))
    }

    /// Attention across the `T` steps within each track.
    pub fn temporal_attention(&self, tape: &mut Tape, block: &Block, z: Var) -> Result<(Var, Var), AutodiffError> {
        let att = block.temporal.forward(tape, z, z, z)?;
        let res = tape.add(z, att.output)?;
        Ok((block.temporal_norm.forward(tape, res)?, att.weights))
    }

    pub fn aggregation_block(&self, tape: &mut Tape, block: &Block, h: Var) -> Result<Var, AutodiffError> {
        let (z, _) = self.content_attention(tape, block, h)?;
        let (z, _) = self.temporal_attention(tape, block, z)?;
        let f = block.feed_forward.forward(tape, z)?;
        let res = tape.add(z, f)?;
        block.ff_norm.forward(tape, res)
    }

    /// MLP `d -> d -> v` over the target track only; `[T, v]`.
    pub fn output_project(&self, tape: &mut Tape, h: Var) -> Result<Var, AutodiffError> {
        let target = tape.select0(h, self.config.k)?;
        let hidden = self.out_hidden.forward(tape, target)?;
        let hidden = tape.relu(hidden);
        self.out_final.forward(tape, hidden)
    }

    /// Full network on tape inputs. The target must already be masked.
    pub fn forward_vars(&self, tape: &mut Tape, target: Var, refs: &[Var]) -> Result<Var, AutodiffError> {
        let mut h = self.input_embed(tape, target, refs)?;
        for block in &self.blocks {
            h = self.aggregation_block(tape, block, h)?;
        }
        self.output_project(tape, h)
    }

    /// Records the forward pass for raw row-major `[T, v]` inputs.
    pub fn forward_values(&self, tape: &mut Tape, masked_target: &[f64], refs: &[&[f64]]) -> Result<Var, AutodiffError> {
        let shape = vec![self.config.t, self.config.v];
        let x = tape.constant(Tensor::new(shape.clone(), masked_target.to_vec())?);
        let rs = refs
            .iter()
            .map(|r| Ok(tape.constant(Tensor::new(shape.clone(), r.to_vec())?)))
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        self.forward_vars(tape, x, &rs)
    }

    /// Completes `target` (normalized) given its mask and references: the mask
    /// is applied first so unobserved values never reach the network.
    pub fn forward(&self, target: &Snippet, mask: &Mask, refs: &[Snippet]) -> Result<Snippet, AutodiffError> {
        let masked = mask.apply(target).map_err(|e| AutodiffError::ShapeMismatch(e.to_string()))?;
        let ref_values: Vec<&[f64]> = refs.iter().map(|r| r.values.as_slice()).collect();
        let mut tape = self.tape();
        let y = self.forward_values(&mut tape, &masked.values, &ref_values)?;
        Ok(target.with_values(tape.value(y).data().to_vec()))
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        Checkpoint::from_store(&self.store, &self.config)?.save(path)
    }

    /// Rebuilds a model from a checkpoint; its own stored config decides the shape.
    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let ckpt = Checkpoint::load(path)?;
        let config: SynthesisConfig = ckpt.config()?;
        let mut model = Self::new(config, 0)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }

    /// Like `load` but rejects checkpoints trained under a different config.
    pub fn load_expecting(path: &Path, expected: &SynthesisConfig) -> Result<Self, AutodiffError> {
        let ckpt = Checkpoint::load(path)?;
        ckpt.verify_config(expected)?;
        let mut model = Self::new(expected.clone(), 0)?;
        ckpt.restore_into(&mut model.store)?;
        Ok(model)
    }
}


/// Finite-difference check of every parameter of a model, shared by the
/// unit tests and the acceptance suite.
#[doc(hidden)]
pub mod gradcheck {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::SynthesisModel;
    use crate::autodiff::{ParamStore, Tape, Tensor};

    const H: f64 = 1e-5;

    /// Maximum relative error between backprop and central differences over
    /// all parameters and reference inputs, for a random masked-MSE loss.
    #[allow(clippy::needless_range_loop)]
    pub fn whole_model_max_rel_err(model: &SynthesisModel, seed: u64) -> f64 {
        let cfg = model.config().clone();
        let n = cfg.t * cfg.v;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
        let target = draw();
        let refs: Vec<Vec<f64>> = (0..cfg.k).map(|_| draw()).collect();
        let truth = draw();

        let loss_of = |store: &ParamStore, refs: &[Vec<f64>], record: bool| {
            let mut tape = Tape::new(store);
            let x = tape.constant(Tensor::new(vec![cfg.t, cfg.v], target.clone()).unwrap());
            let rs: Vec<_> = refs
                .iter()
                .map(|r| {
                    let t = Tensor::new(vec![cfg.t, cfg.v], r.clone()).unwrap();
                    if record { tape.var(t) } else { tape.constant(t) }
                })
                .collect();
            let y = model.forward_vars(&mut tape, x, &rs).unwrap();
            let truth = tape.constant(Tensor::new(vec![cfg.t, cfg.v], truth.clone()).unwrap());
            let loss = tape.mse(y, truth).unwrap();
            let value = tape.value(loss).item();
            let grads = record.then(|| {
                let g = tape.backward(loss).unwrap();
                let refs: Vec<Vec<f64>> = rs.iter().map(|&v| g.wrt(v).unwrap().to_vec()).collect();
                (g.params(), refs)
            });
            (value, grads)
        };

        // route parameter values through a scratch store
        let mut store = model.params().clone();
        let (_, grads) = loss_of(&store, &refs, true);
        let (pgrads, rgrads) = grads.unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs() + b.abs()).max(1e-6);
        let mut worst = 0.0f64;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let analytic = pgrads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; store.value(id).len()]);
            for i in 0..analytic.len() {
                let orig = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + H;
                let plus = loss_of(&store, &refs, false).0;
                store.get_mut(id).value.data_mut()[i] = orig - H;
                let minus = loss_of(&store, &refs, false).0;
                store.get_mut(id).value.data_mut()[i] = orig;
                worst = worst.max(rel((plus - minus) / (2.0 * H), analytic[i]));
            }
        }
        for (j, g) in rgrads.iter().enumerate() {
            for i in 0..n {
                let mut rp = refs.clone();
                rp[j][i] += H;
                let mut rm = refs.clone();
                rm[j][i] -= H;
                let fd = (loss_of(&store, &rp, false).0 - loss_of(&store, &rm, false).0) / (2.0 * H);
                worst = worst.max(rel(fd, g[i]));
            }
        }
        worst
    }
}
