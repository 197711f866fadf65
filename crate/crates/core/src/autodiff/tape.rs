//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation executed in a forward pass together
//! with whatever it needs for the backward pass. Calling
//! [`Tape::backward`] walks the record in reverse exactly once and returns
//! the gradient of a scalar loss with respect to every parameter that
//! requires one. Nodes whose inputs carry no gradient are never visited.
//!
//! ```
//! use srl_core::autodiff::{Init, ParamStore, Tape, Tensor};
//!
//! let mut params = ParamStore::new(0);
//! let w = params.add("w", &[1, 2], Init::Constant(1.5));
//! let mut tape = Tape::new(&params);
//! let wv = tape.param(w);
//! let x = tape.constant(Tensor::new(&[2, 1], vec![2.0, -1.0]).unwrap());
//! let y = tape.matmul(wv, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[2.0, -1.0]);
//! ```

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axis_split, matmul_a_bt_acc, matmul_at_b_acc, matmul_raw, permute_raw, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulConst(Var, Tensor),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Embedding(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    rng: Option<ChaCha8Rng>,
    consumed: bool,
}

type Res = Result<Var, AutodiffError>;

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl<'p> Tape<'p> {
    /// A tape in evaluation mode: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            rng: None,
            consumed: false,
        }
    }

    /// A tape in training mode; dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Tape {
            rng: Some(rng),
            ..Tape::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// The node for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let p = self.params.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.requires_grad);
        self.param_nodes.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    /// `a[..., m] + bias[m]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(shape_err("add_bias", format!("{sa:?} + {sb:?}")));
        }
        let m = sb[0];
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(a).clone();
        for chunk in v.data_mut().chunks_mut(m) {
            for (x, y) in chunk.iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(v, Op::AddBias(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(v, Op::Shift(a), ng)
    }

    /// Elementwise product with a constant tensor (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Res {
        if self.shape(a) != c.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs {:?}", self.shape(a), c.shape()),
            ));
        }
        let v = self.value(a).zip_map(c, |x, y| x * y);
        let ng = self.ng(a);
        Ok(self.push(v, Op::MulConst(a, c.clone()), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(&[m, n], data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Matmul(a, b), ng))
    }

    /// Batched product `a[B,m,k] · b[B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("bmm", format!("{sa:?} · {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bs * m * n);
        for t in 0..bs {
            out.extend(matmul_raw(
                &ad[t * m * k..(t + 1) * m * k],
                &bd[t * k * n..(t + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let v = Tensor::new(&[bs, m, n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Bmm(a, b), ng))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Res {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err(
                "permute",
                format!("{perm:?} is not a permutation of {nd} axes"),
            ));
        }
        let v = permute_raw(self.value(a), perm);
        let ng = self.ng(a);
        Ok(self.push(v, Op::Permute(a, perm.to_vec()), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Res {
        if self.shape(a).len() != 2 {
            return Err(shape_err("transpose", format!("{:?}", self.shape(a))));
        }
        self.permute(a, &[1, 0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Res {
        let v = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Res {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let v = Tensor::new(&out_shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// `a[..., start..end, ...]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Res {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(shape_err("slice", format!("{s:?} axis {axis} [{start}..{end})")));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let width = (end - start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut out_shape = s;
        out_shape[axis] = end - start;
        let v = Tensor::new(&out_shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Slice(a, axis, start), ng))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Res {
        if axis >= self.shape(a).len() {
            return Err(shape_err("softmax", format!("axis {axis} for {:?}", self.shape(a))));
        }
        let v = softmax_along(self.value(a), axis, false);
        let ng = self.ng(a);
        Ok(self.push(v, Op::Softmax(a, axis), ng))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Res {
        if axis >= self.shape(a).len() {
            return Err(shape_err("log_softmax", format!("axis {axis} for {:?}", self.shape(a))));
        }
        let v = softmax_along(self.value(a), axis, true);
        let ng = self.ng(a);
        Ok(self.push(v, Op::LogSoftmax(a, axis), ng))
    }

    /// Rows of a `[vocab, dim]` table, one per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Res {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(shape_err("embedding", format!("table {s:?}")));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= s[0]) {
            return Err(shape_err("embedding", format!("id {bad} outside table {s:?}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * s[1]);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(&[ids.len(), s[1]], data)?;
        let ng = self.ng(table);
        Ok(self.push(v, Op::Embedding(table, ids.to_vec()), ng))
    }

    /// Picks entries by flat (row-major) index into a 1-D result.
    pub fn gather(&mut self, a: Var, flat: &[usize]) -> Res {
        let n = self.value(a).len();
        if let Some(bad) = flat.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} outside {:?}", self.shape(a))));
        }
        let src = self.value(a).data();
        let v = Tensor::new(&[flat.len()], flat.iter().map(|&i| src[i]).collect())?;
        let ng = self.ng(a);
        Ok(self.push(v, Op::Gather(a, flat.to_vec()), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    /// Mean over all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = if t.is_empty() { 0.0 } else { t.sum() / t.len() as f64 };
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    /// A keep-mask scaled by `1/(1-p)`, or `None` when dropout is inactive.
    pub fn dropout_mask(&mut self, shape: &[usize], p: f64) -> Option<Tensor> {
        assert!((0.0..1.0).contains(&p), "dropout rate {p} outside [0,1)");
        let rng = self.rng.as_mut()?;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        let n = shape.iter().product();
        let data = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        Some(Tensor::new(shape, data).expect("mask shape"))
    }

    /// Inverted dropout; the identity outside training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        let shape = self.shape(a).to_vec();
        match self.dropout_mask(&shape, p) {
            Some(mask) => self.mul_const(a, &mask).expect("mask built from input shape"),
            None => a,
        }
    }

    /// One LSTM step. `x` is `[1, in]`, `h`/`c` are `[1, hidden]`,
    /// `w_ih` is `[in, 4·hidden]`, `w_hh` is `[hidden, 4·hidden]` and
    /// `bias` is `[4·hidden]`; gates are ordered input, forget, cell, output.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let xw = self.matmul(x, w_ih)?;
        let xw = self.add_bias(xw, bias)?;
        self.lstm_step(xw, h, c, w_hh)
    }

    /// LSTM step from precomputed input projections `x·w_ih + bias`.
    pub fn lstm_step(&mut self, x_proj: Var, h: Var, c: Var, w_hh: Var) -> Result<(Var, Var), AutodiffError> {
        let hidden = self.shape(h)[1];
        if self.shape(x_proj) != [1, 4 * hidden] || self.shape(c) != [1, hidden] {
            return Err(shape_err(
                "lstm_cell",
                format!(
                    "gates {:?}, h {:?}, c {:?}",
                    self.shape(x_proj),
                    self.shape(h),
                    self.shape(c)
                ),
            ));
        }
        let hw = self.matmul(h, w_hh)?;
        let gates = self.add(x_proj, hw)?;
        let gi = self.slice(gates, 1, 0, hidden)?;
        let gf = self.slice(gates, 1, hidden, 2 * hidden)?;
        let gg = self.slice(gates, 1, 2 * hidden, 3 * hidden)?;
        let go = self.slice(gates, 1, 3 * hidden, 4 * hidden)?;
        let i = self.sigmoid(gi);
        let f = self.sigmoid(gf);
        let g = self.tanh(gg);
        let o = self.sigmoid(go);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Gradients of the scalar `loss` with respect to every parameter
    /// that requires one. A tape can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::new(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, t: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.set(*id, g),
            Op::Add(a, b) => {
                acc(*b, g.clone());
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|x| -x));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddBias(a, b) => {
                let m = val(*b).len();
                let mut gb = vec![0.0; m];
                for chunk in g.data().chunks(m) {
                    for (s, x) in gb.iter_mut().zip(chunk) {
                        *s += x;
                    }
                }
                acc(*b, Tensor::new(&[m], gb).unwrap());
                acc(*a, g);
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Shift(a) => acc(*a, g),
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)),
            Op::Matmul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt_acc(g.data(), bv.data(), m, n, k, &mut ga);
                    acc(*a, Tensor::new(&[m, k], ga).unwrap());
                }
                if nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b_acc(av.data(), g.data(), m, k, n, &mut gb);
                    acc(*b, Tensor::new(&[k, n], gb).unwrap());
                }
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; bs * m * k];
                    for t in 0..bs {
                        matmul_a_bt_acc(
                            &g.data()[t * m * n..(t + 1) * m * n],
                            &bv.data()[t * k * n..(t + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut ga[t * m * k..(t + 1) * m * k],
                        );
                    }
                    acc(*a, Tensor::new(&[bs, m, k], ga).unwrap());
                }
                if nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; bs * k * n];
                    for t in 0..bs {
                        matmul_at_b_acc(
                            &av.data()[t * m * k..(t + 1) * m * k],
                            &g.data()[t * m * n..(t + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut gb[t * k * n..(t + 1) * k * n],
                        );
                    }
                    acc(*b, Tensor::new(&[bs, k, n], gb).unwrap());
                }
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inv[p] = d;
                }
                acc(*a, permute_raw(&g, &inv));
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, g.reshaped(&shape).unwrap());
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |x, y| x / y)),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(*a, g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { s * x }))
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*a, g.zip_map(val(*a), |x, y| if y >= lo && y <= hi { x } else { 0.0 }))
            }
            Op::Concat(parts, axis) => {
                let out_shape = node.value.shape();
                let (outer, _, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                let total = out_shape[*axis] * inner;
                for &p in parts {
                    let pshape = val(p).shape().to_vec();
                    let len = pshape[*axis] * inner;
                    if nodes[p.0].needs_grad {
                        let mut gp = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * total + offset;
                            gp.extend_from_slice(&g.data()[base..base + len]);
                        }
                        acc(p, Tensor::new(&pshape, gp).unwrap());
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let in_shape = val(*a).shape().to_vec();
                let (outer, len, inner) = axis_split(&in_shape, *axis);
                let width = node.value.shape()[*axis] * inner;
                let mut ga = Tensor::zeros(&in_shape);
                let dst = ga.data_mut();
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    dst[base..base + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                acc(*a, ga);
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |r: usize| (o * len + r) * inner + i;
                        let dot: f64 = (0..len).map(|r| g.data()[at(r)] * y.data()[at(r)]).sum();
                        for r in 0..len {
                            ga[at(r)] = y.data()[at(r)] * (g.data()[at(r)] - dot);
                        }
                    }
                }
                acc(*a, Tensor::new(y.shape(), ga).unwrap());
            }
            Op::LogSoftmax(a, axis) => {
                let y = &node.value;
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |r: usize| (o * len + r) * inner + i;
                        let gsum: f64 = (0..len).map(|r| g.data()[at(r)]).sum();
                        for r in 0..len {
                            ga[at(r)] = g.data()[at(r)] - y.data()[at(r)].exp() * gsum;
                        }
                    }
                }
                acc(*a, Tensor::new(y.shape(), ga).unwrap());
            }
            Op::Embedding(table, ids) => {
                let shape = val(*table).shape().to_vec();
                let dim = shape[1];
                let mut gt = Tensor::zeros(&shape);
                let dst = gt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for (d, x) in dst[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&g.data()[r * dim..(r + 1) * dim])
                    {
                        *d += x;
                    }
                }
                acc(*table, gt);
            }
            Op::Gather(a, flat) => {
                let mut ga = Tensor::zeros(val(*a).shape());
                let dst = ga.data_mut();
                for (&i, x) in flat.iter().zip(g.data()) {
                    dst[i] += x;
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(*a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                let s = g.item() / n;
                acc(*a, Tensor::full(val(*a).shape(), s));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_along(t: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, len, inner) = axis_split(t.shape(), axis);
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |r: usize| (o * len + r) * inner + i;
            let max = (0..len).map(|r| src[at(r)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|r| (src[at(r)] - max).exp()).sum();
            for r in 0..len {
                out[at(r)] = if log {
                    src[at(r)] - max - z.ln()
                } else {
                    (src[at(r)] - max).exp() / z
                };
            }
        }
    }
    Tensor::new(t.shape(), out).unwrap()
}
