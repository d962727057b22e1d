//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends one node to the tape; nodes are therefore already in
//! topological order and the backward pass is a single reverse sweep.
//! Parameters are read from a borrowed [`ParamStore`] instead of being
//! copied onto the tape, and gradients are handed back as [`ParamGrads`]
//! so several tapes can be reduced before touching the store.

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{inverse_perm, permute_data};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    AddBias { x: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Relu { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    Select0 { x: Var, index: usize },
    Concat0 { xs: Vec<Var> },
    Mse { pred: Var, truth: Var, weights: Option<Vec<f64>>, denom: f64 },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node>,
}


fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params: Some(params), param_nodes: vec![None; params.len()], nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.expect("param node without store").value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input leaf.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(id.0).copied().flatten() {
            return v;
        }
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        if id.0 >= self.param_nodes.len() {
            self.param_nodes.resize(id.0 + 1, None);
        }
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.ndim() != 2 || ta.ndim() == 0 || ta.last_dim() != tb.shape()[0] {
            return Err(mismatch(format!("matmul {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let k = ta.last_dim();
        let n = tb.shape()[1];
        let m = ta.len() / k;
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched product over the leading axis: `[B, m, k] x [B, k, n]`, or
    /// `[B, m, k] x [B, n, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 3 || tb.ndim() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(mismatch(format!("bmm {:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (batch, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (kb, n) = if trans_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if kb != k {
            return Err(mismatch(format!("bmm inner {k} vs {kb}")));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a0 = bi * m * k;
            let b0 = bi * k * n;
            let o0 = bi * m * n;
            for i in 0..m {
                let arow = &ad[a0 + i * k..a0 + (i + 1) * k];
                if trans_b {
                    for j in 0..n {
                        let brow = &bd[b0 + j * k..b0 + (j + 1) * k];
                        out[o0 + i * n + j] = dot(arow, brow);
                    }
                } else {
                    let row = &mut out[o0 + i * n..o0 + (i + 1) * n];
                    for (p, &av) in arow.iter().enumerate() {
                        let brow = &bd[b0 + p * n..b0 + (p + 1) * n];
                        for (o, bv) in row.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b },
            rg,
        ))
    }

    /// Adds a `[n]` bias across the trailing axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tx.last_dim();
        if tb.len() != n {
            return Err(mismatch(format!("bias {:?} for {:?}", tb.shape(), tx.shape())));
        }
        let bd = tb.data();
        let out: Vec<f64> = tx.data().iter().enumerate().map(|(i, v)| v + bd[i % n]).collect();
        let shape = tx.shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias { x, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, s }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v.max(0.0)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    /// Softmax along the trailing axis with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Softmax { x }, rg)
    }

    /// Standardizes the trailing axis, then applies `gain * xhat + bias`.
    ///
    /// With a trailing axis of size 1 the deviation is identically zero and
    /// the output is just `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.len() != d || tb.len() != d {
            return Err(mismatch(format!(
                "layer_norm gain {:?} bias {:?} for {:?}",
                tg.shape(),
                tb.shape(),
                tx.shape()
            )));
        }
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        let (xd, gd, bd) = (tx.data(), tg.data(), tb.data());
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        let shape = tx.shape().to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if perm.len() != tx.ndim() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(mismatch(format!("permute {:?} on {:?}", perm, tx.shape())));
        }
        let (data, shape) = permute_data(tx.data(), tx.shape(), perm);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// `x[index]` along the leading axis.
    pub fn select0(&mut self, x: Var, index: usize) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        if tx.ndim() == 0 || index >= tx.shape()[0] {
            return Err(mismatch(format!("select {index} from {:?}", tx.shape())));
        }
        let block = tx.len() / tx.shape()[0];
        let data = tx.data()[index * block..(index + 1) * block].to_vec();
        let shape = tx.shape()[1..].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Select0 { x, index }, rg))
    }

    /// Concatenates along the leading axis; trailing axes must agree.
    pub fn concat0(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = xs.first() else {
            return Err(mismatch("concat of zero tensors".into()));
        };
        let tail = self.value(first).shape().get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for &x in xs {
            let t = self.value(x);
            if t.ndim() == 0 || t.shape()[1..] != tail[..] {
                return Err(mismatch(format!("concat {:?} with tail {:?}", t.shape(), tail)));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
            rg |= self.rg(x);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat0 { xs: xs.to_vec() }, rg))
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, truth: Var) -> Result<Var, AutodiffError> {
        self.mse_inner(pred, truth, None)
    }

    /// Squared error averaged over entries with weight 1 (weights are 0/1).
    pub fn masked_mse(&mut self, pred: Var, truth: Var, weights: Vec<f64>) -> Result<Var, AutodiffError> {
        self.mse_inner(pred, truth, Some(weights))
    }

    fn mse_inner(&mut self, pred: Var, truth: Var, weights: Option<Vec<f64>>) -> Result<Var, AutodiffError> {
        let (tp, tt) = (self.value(pred), self.value(truth));
        if tp.shape() != tt.shape() {
            return Err(mismatch(format!("mse {:?} vs {:?}", tp.shape(), tt.shape())));
        }
        if let Some(w) = &weights {
            if w.len() != tp.len() {
                return Err(mismatch(format!("mse weights {} for {} entries", w.len(), tp.len())));
            }
        }
        let mut total = 0.0;
        for (i, (p, t)) in tp.data().iter().zip(tt.data()).enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            total += w * (p - t) * (p - t);
        }
        let denom = match &weights {
            Some(w) => w.iter().sum::<f64>(),
            None => tp.len() as f64,
        };
        let loss = if denom > 0.0 { total / denom } else { 0.0 };
        let rg = self.rg(pred) || self.rg(truth);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, truth, weights, denom }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let param_of = self
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect();
        let n_params = self.params.map_or(0, |p| p.len());
        Ok(Gradients { grads, param_of, n_params })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let da = acc(grads, *a, m * k);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] += dot(grow, brow);
                        }
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let db = acc(grads, *b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
            Op::BatchMatMul { a, b, batch, m, k, n, trans_b } => {
                let (batch, m, k, n, tb) = (*batch, *m, *k, *n, *trans_b);
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let (sa, sb, sg) = (m * k, k * n, m * n);
                if self.rg(*a) {
                    let da = acc(grads, *a, batch * sa);
                    for bi in 0..batch {
                        let (gb, bb, dab) = (&g[bi * sg..][..sg], &bd[bi * sb..][..sb], &mut da[bi * sa..][..sa]);
                        for r in 0..m {
                            let grow = &gb[r * n..][..n];
                            let drow = &mut dab[r * k..][..k];
                            if tb {
                                // b is [n, k]: da[r] += sum_j g[r, j] b[j]
                                for (j, &gv) in grow.iter().enumerate() {
                                    axpy(drow, gv, &bb[j * k..][..k]);
                                }
                            } else {
                                for (p, d) in drow.iter_mut().enumerate() {
                                    *d += dot(grow, &bb[p * n..][..n]);
                                }
                            }
                        }
                    }
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, batch * sb);
                    for bi in 0..batch {
                        let (gb, ab, dbb) = (&g[bi * sg..][..sg], &ad[bi * sa..][..sa], &mut db[bi * sb..][..sb]);
                        for r in 0..m {
                            let grow = &gb[r * n..][..n];
                            let arow = &ab[r * k..][..k];
                            if tb {
                                for (j, &gv) in grow.iter().enumerate() {
                                    axpy(&mut dbb[j * k..][..k], gv, arow);
                                }
                            } else {
                                for (p, &av) in arow.iter().enumerate() {
                                    axpy(&mut dbb[p * n..][..n], av, grow);
                                }
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, b } => {
                let n = self.value(*b).len();
                if self.rg(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
                if self.rg(*b) {
                    let db = acc(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Scale { x, s } => {
                if self.rg(*x) {
                    for (d, gv) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += s * gv;
                    }
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let y = node.value.as_ref().unwrap().data();
                    for ((d, gv), yv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                        if *yv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if self.rg(*x) {
                    let y = node.value.as_ref().unwrap();
                    let n = y.last_dim();
                    let yd = y.data();
                    let dx = acc(grads, *x, g.len());
                    for r in 0..yd.len() / n {
                        let ys = &yd[r * n..(r + 1) * n];
                        let gs = &g[r * n..(r + 1) * n];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = self.value(*gain).len();
                let gd = self.value(*gain).data();
                if self.rg(*gain) {
                    let dg = acc(grads, *gain, d);
                    for (r, row) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            dg[j] += row[j] * xhat[r * d + j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let db = acc(grads, *bias, d);
                    for row in g.chunks(d) {
                        add_into(db, row);
                    }
                }
                if self.rg(*x) {
                    let dx = acc(grads, *x, g.len());
                    for (r, row) in g.chunks(d).enumerate() {
                        let h = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<f64> = row.iter().zip(gd).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhh = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Permute { x, perm } => {
                if self.rg(*x) {
                    let out_shape = node.value.as_ref().unwrap().shape();
                    let (back, _) = permute_data(g, out_shape, &inverse_perm(perm));
                    add_into(acc(grads, *x, g.len()), &back);
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
            }
            Op::Select0 { x, index } => {
                if self.rg(*x) {
                    let total = self.value(*x).len();
                    let block = g.len();
                    let dx = acc(grads, *x, total);
                    add_into(&mut dx[index * block..(index + 1) * block], g);
                }
            }
            Op::Concat0 { xs } => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).len();
                    if self.rg(x) {
                        add_into(acc(grads, x, len), &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Mse { pred, truth, weights, denom } => {
                if *denom <= 0.0 {
                    return;
                }
                let pd = self.value(*pred).data();
                let td = self.value(*truth).data();
                let c = 2.0 * g[0] / denom;
                let local: Vec<f64> = pd
                    .iter()
                    .zip(td)
                    .enumerate()
                    .map(|(i, (p, t))| c * weights.as_ref().map_or(1.0, |w| w[i]) * (p - t))
                    .collect();
                if self.rg(*pred) {
                    add_into(acc(grads, *pred, local.len()), &local);
                }
                if self.rg(*truth) {
                    for (d, l) in acc(grads, *truth, local.len()).iter_mut().zip(&local) {
                        *d -= l;
                    }
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    for d in acc(grads, *x, self.value(*x).len()).iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Four independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `y += alpha * x`
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_of: Vec<Option<ParamId>>,
    n_params: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter the loss reached.
    pub fn params(&self) -> ParamGrads {
        let mut out = ParamGrads::empty(self.n_params);
        for (g, p) in self.grads.iter().zip(&self.param_of) {
            if let (Some(g), Some(id)) = (g, p) {
                out.0[id.0] = Some(g.clone());
            }
        }
        out
    }
}
