//! Minimal reverse-mode autodiff over `f64` tensors: the primitives the
//! synthesis network needs, an Adam optimizer and JSON checkpoints.

mod adam;
mod checkpoint;
mod nn;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{config_hash, Checkpoint, StoredTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use nn::{
    linear, mse_loss, positional_encoding, AttentionOutput, FeedForward, LayerNorm, Linear, MultiHeadAttention,
    LAYER_NORM_EPS,
};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not match model: {0}")]
    ConfigMismatch(String),
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Central finite differences of `f` w.r.t. every entry of every input,
    /// compared against the tape gradient.
    fn check_inputs<F>(inputs: &[Tensor], f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        check_inputs_with(None, inputs, f, tol)
    }

    fn check_inputs_with<F>(store: Option<&ParamStore>, inputs: &[Tensor], f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let fresh = || store.map_or_else(Tape::default, Tape::new);
        let mut tape = fresh();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let eval = |ins: &[Tensor]| {
            let mut t = fresh();
            let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
            let l = f(&mut t, &vs);
            t.value(l).item()
        };
        for (which, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[which]).map(|g| g.to_vec()).unwrap_or(vec![0.0; input.len()]);
            for i in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[which].data_mut()[i] += H;
                let mut minus = inputs.to_vec();
                minus[which].data_mut()[i] -= H;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
                assert!(
                    rel_err(fd, analytic[i]) < tol,
                    "input {which}[{i}]: fd {fd} vs analytic {}",
                    analytic[i]
                );
            }
        }
    }

    /// Weighted sum of the output so gradients are not all identical.
    fn probe(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tape.shape(y).to_vec();
        let w = tape.constant(rand_tensor(&mut rng, &shape));
        let target = tape.constant(Tensor::zeros(&shape));
        let shifted = tape.add(y, w).unwrap();
        tape.mse(shifted, target).unwrap()
    }

    #[test]
    fn linear_identity_and_arithmetic() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let zero = tape.constant(Tensor::zeros(&[3]));
        let y = linear(&mut tape, x, eye, zero).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let x = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::zeros(&[2, 3]));
        let w = tape.var(Tensor::zeros(&[4, 2]));
        assert!(matches!(tape.matmul(x, w), Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (lead, inp, out) in [(vec![3], 4, 2), (vec![2, 3], 3, 5), (vec![1], 1, 1), (vec![4, 1, 2], 2, 3), (vec![5], 6, 4)] {
            let mut xs = lead.clone();
            xs.push(inp);
            let inputs = [rand_tensor(&mut rng, &xs), rand_tensor(&mut rng, &[inp, out]), rand_tensor(&mut rng, &[out])];
            check_inputs(&inputs, |t, v| {
                let y = linear(t, v[0], v[1], v[2]).unwrap();
                probe(t, y, 11)
            }, 1e-6);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::filled(&[2, 4], 3.0));
        let g = tape.constant(Tensor::filled(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::default();
        let x = tape.var(Tensor::from_fn(&[3, 16], |_| rng.random_range(-50.0..50.0)));
        let g = tape.constant(Tensor::filled(&[16], 1.0));
        let b = tape.constant(Tensor::zeros(&[16]));
        let y = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        for row in tape.value(y).data().chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_width_one_returns_bias() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::new(vec![3, 1], vec![1.0, -4.0, 9.0]).unwrap());
        let g = tape.constant(Tensor::filled(&[1], 2.0));
        let b = tape.constant(Tensor::filled(&[1], 0.25));
        let y = tape.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, 0.25, 0.25]);
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shape in [vec![2, 4], vec![3, 2], vec![1, 8], vec![2, 2, 3], vec![5, 5]] {
            let d = *shape.last().unwrap();
            let inputs = [rand_tensor(&mut rng, &shape), rand_tensor(&mut rng, &[d]), rand_tensor(&mut rng, &[d])];
            check_inputs(&inputs, |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap();
                probe(t, y, 5)
            }, 1e-5);
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(6, 8).unwrap();
        assert_eq!(&pe.data()[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[8] - 1f64.sin()).abs() < 1e-12);
        assert!((pe.data()[8] - 0.841471).abs() < 1e-6);
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(positional_encoding(4, 7).is_err());
    }

    #[test]
    fn softmax_basic_properties() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::filled(&[4], 0.3));
        let y = tape.softmax(x);
        assert!(tape.value(y).data().iter().all(|v| (v - 0.25).abs() < 1e-15));

        let logits = Tensor::new(vec![3], vec![0.1, -2.0, 1.5]).unwrap();
        let shifted = Tensor::new(vec![3], logits.data().iter().map(|v| v + 17.0).collect()).unwrap();
        let a = tape.var(logits);
        let b = tape.var(shifted);
        let ya = tape.softmax(a);
        let yb = tape.softmax(b);
        assert!(tape.value(ya).max_abs_diff(tape.value(yb)) < 1e-12);

        let big = tape.var(Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap());
        let y = tape.softmax(big);
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for shape in [vec![4], vec![2, 3], vec![3, 1], vec![2, 2, 5], vec![6, 2]] {
            let inputs = [rand_tensor(&mut rng, &shape)];
            check_inputs(&inputs, |t, v| {
                let y = t.softmax(v[0]);
                probe(t, y, 7)
            }, 1e-5);
        }
    }

    fn attention_fixture(dim: usize, heads: usize, seed: u64) -> (ParamStore, MultiHeadAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "attn", dim, heads, &mut rng).unwrap();
        (store, mha)
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(MultiHeadAttention::new(&mut store, "a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn attention_single_key_passes_value_through() {
        let (store, mha) = attention_fixture(4, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_tensor(&mut rng, &[3, 1, 4]);
        let mut tape = Tape::new(&store);
        let xv = tape.var(x);
        let out = mha.forward(&mut tape, xv, xv, xv).unwrap();
        assert!(tape.value(out.weights).data().iter().all(|w| *w == 1.0));
        // expected: output(value(x))
        let v = mha.value.forward(&mut tape, xv).unwrap();
        let expected = mha.output.forward(&mut tape, v).unwrap();
        assert!(tape.value(out.output).max_abs_diff(tape.value(expected)) < 1e-12);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (store, mha) = attention_fixture(8, 4, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new(&store);
        let x = tape.var(Tensor::from_fn(&[2, 5, 8], |_| rng.random_range(-3.0..3.0)));
        let out = mha.forward(&mut tape, x, x, x).unwrap();
        let w = tape.value(out.weights);
        assert_eq!(w.shape(), &[8, 5, 5]);
        for row in w.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    /// Finite differences w.r.t. every parameter of a store.
    fn check_params<F>(store: &mut ParamStore, f: F, tol: f64)
    where
        F: Fn(&mut Tape) -> Var,
    {
        let grads = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss).unwrap().params()
        };
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or(vec![0.0; store.value(id).len()]);
            for i in 0..store.value(id).len() {
                let orig = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + H;
                let plus = { let mut t = Tape::new(store); let l = f(&mut t); t.value(l).item() };
                store.get_mut(id).value.data_mut()[i] = orig - H;
                let minus = { let mut t = Tape::new(store); let l = f(&mut t); t.value(l).item() };
                store.get_mut(id).value.data_mut()[i] = orig;
                let fd = (plus - minus) / (2.0 * H);
                assert!(
                    rel_err(fd, analytic[i]) < tol,
                    "{}[{i}]: fd {fd} vs analytic {}",
                    store.get(id).name,
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let (mut store, mha) = attention_fixture(4, 2, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = rand_tensor(&mut rng, &[1, 3, 4]);
        let kv = rand_tensor(&mut rng, &[1, 3, 4]);
        check_params(&mut store, |t| {
            let v = t.constant(x.clone());
            let out = mha.forward(t, v, v, v).unwrap();
            probe(t, out.output, 16)
        }, 1e-5);
        // inputs, with distinct query and key/value sources
        check_inputs_with(Some(&store), &[x, kv], |t, v| {
            let out = mha.forward(t, v[0], v[1], v[1]).unwrap();
            probe(t, out.output, 17)
        }, 1e-5);
    }

    #[test]
    fn feed_forward_behaviour_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut store = ParamStore::new();
        let ff = FeedForward::new(&mut store, "ff", 4, 8, &mut rng).unwrap();
        // kill every pre-activation
        let mut dead = store.clone();
        for v in dead.get_mut(ff.inner.weight).value.data_mut() {
            *v = 0.0;
        }
        for v in dead.get_mut(ff.inner.bias).value.data_mut() {
            *v = -1.0;
        }
        let mut tape = Tape::new(&dead);
        let x = tape.var(rand_tensor(&mut rng, &[2, 3, 4]));
        let y = ff.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3, 4]);
        let bias = dead.value(ff.outer.bias).data();
        for row in tape.value(y).data().chunks(4) {
            assert_eq!(row, bias);
        }

        let x = rand_tensor(&mut rng, &[3, 4]);
        check_params(&mut store, |t| {
            let v = t.constant(x.clone());
            let y = ff.forward(t, v).unwrap();
            probe(t, y, 19)
        }, 1e-5);
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut tape = Tape::default();
        let a = tape.var(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let z = tape.constant(Tensor::zeros(&[2]));
        let l = mse_loss(&mut tape, a, z).unwrap();
        assert_eq!(tape.value(l).item(), 2.5);
        let l0 = mse_loss(&mut tape, a, a).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
        let bad = tape.constant(Tensor::zeros(&[3]));
        assert!(mse_loss(&mut tape, a, bad).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let inputs = [rand_tensor(&mut rng, &[3, 2]), rand_tensor(&mut rng, &[3, 2])];
        check_inputs(&inputs, |t, v| t.mse(v[0], v[1]).unwrap(), 1e-7);
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::default();
        let x = tape.var(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::default();
        let x = tape.var(Tensor::new(vec![1], vec![3.0]).unwrap());
        let z = tape.constant(Tensor::zeros(&[1]));
        let l = tape.mse(x, z).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);

        assert!(tape.backward(x).is_ok());
        let v = tape.var(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(v), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let inputs = [rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[1, 3, 4])];
        check_inputs(&inputs, |t, v| {
            let c = t.concat0(&[v[0], v[1]]).unwrap();
            let p = t.permute(c, &[1, 2, 0]).unwrap();
            let r = t.reshape(p, &[12, 3]).unwrap();
            let s = t.select0(c, 2).unwrap();
            let r2 = t.relu(r);
            let a = t.scale(r2, 1.7);
            let l1 = probe(t, a, 22);
            let l2 = probe(t, s, 23);
            let l1 = t.reshape(l1, &[1]).unwrap();
            let l2 = t.reshape(l2, &[1]).unwrap();
            let both = t.concat0(&[l1, l2]).unwrap();
            t.sum(both)
        }, 1e-5);
    }

    #[test]
    fn bmm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let inputs = [rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[2, 4, 5]), rand_tensor(&mut rng, &[2, 5, 4])];
        check_inputs(&inputs, |t, v| {
            let a = t.bmm(v[0], v[1], false).unwrap();
            let b = t.bmm(v[0], v[2], true).unwrap();
            let la = probe(t, a, 25);
            let lb = probe(t, b, 26);
            let la = t.reshape(la, &[1]).unwrap();
            let lb = t.reshape(lb, &[1]).unwrap();
            let c = t.concat0(&[la, lb]).unwrap();
            t.sum(c)
        }, 1e-5);
    }

    #[test]
    fn adam_updates() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::filled(&[2], 1.0)).unwrap();
        let b = store.register("b", Tensor::filled(&[2], 1.0)).unwrap();
        let mut adam = Adam::new(0.001, &store);
        assert!(matches!(adam.step(&mut store), Err(AutodiffError::MissingGradient(_))));

        store.get_mut(a).grad = Some(vec![0.0, 0.0]);
        store.get_mut(b).grad = Some(vec![0.0, 0.0]);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(a).data(), &[1.0, 1.0]);

        let mut store2 = ParamStore::new();
        let a = store2.register("a", Tensor::filled(&[1], 1.0)).unwrap();
        let b = store2.register("b", Tensor::filled(&[1], -3.0)).unwrap();
        let mut adam = Adam::new(0.001, &store2);
        store2.get_mut(a).grad = Some(vec![1.0]);
        store2.get_mut(b).grad = Some(vec![1.0]);
        adam.step(&mut store2).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = 0.001 / (1.0 + 1e-8);
        assert!((1.0 - store2.value(a).item() - expected).abs() < 1e-15);
        assert!((-3.0 - store2.value(b).item() - expected).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let w = store.register("w", Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        for _ in 0..2 {
            let grads = {
                let mut tape = Tape::new(&store);
                let wv = tape.param(w);
                let l = tape.sum(wv);
                tape.backward(l).unwrap().params()
            };
            store.accumulate(&grads, 1.0);
        }
        assert_eq!(store.get(w).grad.as_deref(), Some(&[2.0][..]));
        store.zero_grad();
        assert!(store.get(w).grad.is_none());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let (store, mha) = attention_fixture(8, 2, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = rand_tensor(&mut rng, &[3, 4, 8]);
        let run = || {
            let mut t = Tape::new(&store);
            let v = t.constant(x.clone());
            let out = mha.forward(&mut t, v, v, v).unwrap();
            t.value(out.output).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut store = ParamStore::new();
        Linear::new(&mut store, "lin", 3, 2, &mut rng).unwrap();
        let cfg = serde_json::json!({"d": 3});
        Checkpoint::from_store(&store, &cfg).unwrap().save(&path).unwrap();

        let ckpt = Checkpoint::load(&path).unwrap();
        ckpt.verify_config(&cfg).unwrap();
        assert!(matches!(ckpt.verify_config(&serde_json::json!({"d": 4})), Err(AutodiffError::ConfigMismatch(_))));
        let mut fresh = ParamStore::new();
        Linear::new(&mut fresh, "lin", 3, 2, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        ckpt.restore_into(&mut fresh).unwrap();
        for (a, b) in store.iter().zip(fresh.iter()) {
            assert_eq!(a.value, b.value);
        }
        let mut wrong = ParamStore::new();
        Linear::new(&mut wrong, "lin", 3, 3, &mut rng).unwrap();
        assert!(ckpt.restore_into(&mut wrong).is_err());

        // tampered config
        let text = std::fs::read_to_string(&path).unwrap().replace("\"d\":3", "\"d\":5");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(AutodiffError::ConfigMismatch(_))));
    }
}
