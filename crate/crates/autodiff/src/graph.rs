//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values are kept on
//! the tape, so [`Graph::backward`] can replay the ops in reverse without any
//! recomputation other than im2col buffers. Parameters are read from a
//! borrowed [`ParamSet`] and their gradients are returned as [`Gradients`].

use std::collections::HashMap;

use crate::conv::{from_channel_major, gemm, to_channel_major, Conv2dSpec, Patches};
use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Clamp applied to BCE probabilities so that `ln` stays finite.
pub const BCE_EPS: f32 = 1e-7;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f32),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Reshape(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SelectRows {
        a: Var,
        b: Var,
        mask: Vec<bool>,
    },
    AffineRows {
        x: Var,
        mats: Vec<f32>,
    },
    BceSum {
        p: Var,
        target: Tensor,
    },
    MseSum(Var, Var),
    KldSum {
        mean: Var,
        logvar: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, for every tape node that needed one.
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
    param_vars: HashMap<ParamId, Var>,
    n_params: usize,
}

impl GradStore {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn into_param_grads(mut self) -> Gradients {
        let mut out = vec![None; self.n_params];
        for (pid, var) in &self.param_vars {
            out[pid.index()] = self.grads[var.0].take();
        }
        Gradients::new(out)
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    let rows = t.dim(0);
    (rows, t.len() / rows)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The tape variable for a parameter; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::from_fn(ta.shape(), |i| f(ta.data()[i], tb.data()[i]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return shape_err(
                "mul_const",
                format!("{:?} vs {:?}", self.value(a).shape(), c.shape()),
            );
        }
        let ta = self.value(a);
        let out = Tensor::from_fn(ta.shape(), |i| ta.data()[i] * c.data()[i]);
        let ng = self.needs(a);
        Ok(self.push(out, Op::MulConst(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s as f32), Op::Sum(a), ng)
    }

    /// `x [N, in] · wᵀ + b` with `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(1) {
            return shape_err("linear", format!("x {:?}, w {:?}", tx.shape(), tw.shape()));
        }
        let (n, inp, outp) = (tx.dim(0), tx.dim(1), tw.dim(0));
        let mut out = Tensor::zeros(&[n, outp]);
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.shape() != [outp] {
                return shape_err("linear", format!("bias {:?} for {outp} outputs", tb.shape()));
            }
            for row in out.data_mut().chunks_mut(outp) {
                row.copy_from_slice(tb.data());
            }
        }
        gemm(n, inp, outp, tx.data(), false, tw.data(), true, 1.0, out.data_mut());
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// 2D convolution of `x [B, C, H, W]` with `w [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 4
            || tw.rank() != 4
            || tx.dim(1) != tw.dim(1)
            || (tw.dim(2), tw.dim(3)) != spec.kernel
        {
            return shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}, {spec:?}", tx.shape(), tw.shape()),
            );
        }
        let (bsz, c, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let o = tw.dim(0);
        let (oh, ow) = spec.output_hw(h, wd)?;
        let p = Patches {
            channels: c,
            h,
            w: wd,
            out_h: oh,
            out_w: ow,
            spec,
        };
        let (rows, n) = (p.rows(), p.cols());
        let mut out = Tensor::zeros(&[bsz, o, oh, ow]);
        let chunk = p.chunk(bsz);
        let mut cols = vec![0.0; rows * chunk * n];
        let mut y = vec![0.0; o * chunk * n];
        let in_stride = c * h * wd;
        for s0 in (0..bsz).step_by(chunk) {
            let nb = chunk.min(bsz - s0);
            let ld = nb * n;
            for j in 0..nb {
                let bi = s0 + j;
                p.im2col(&tx.data()[bi * in_stride..(bi + 1) * in_stride], &mut cols, ld, j * n);
            }
            gemm(o, rows, ld, tw.data(), false, &cols, false, 0.0, &mut y);
            from_channel_major(&y, s0, nb, o, n, out.data_mut());
        }
        if let Some(b) = b {
            add_channel_bias(self.value(b), "conv2d", &mut out, o, n)?;
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, ng))
    }

    /// Transposed convolution of `x [B, Cin, H, W]` with `w [Cin, Cout, kh, kw]`;
    /// output extent `(H - 1)·stride - 2·pad + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 4
            || tw.rank() != 4
            || tx.dim(1) != tw.dim(0)
            || (tw.dim(2), tw.dim(3)) != spec.kernel
        {
            return shape_err(
                "conv_transpose2d",
                format!("input {:?}, kernel {:?}, {spec:?}", tx.shape(), tw.shape()),
            );
        }
        let (bsz, cin, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let cout = tw.dim(1);
        let (oh, ow) = spec.transpose_output_hw(h, wd)?;
        // The adjoint conv maps the [Cout, oh, ow] output back onto [h, wd].
        let p = Patches {
            channels: cout,
            h: oh,
            w: ow,
            out_h: h,
            out_w: wd,
            spec,
        };
        debug_assert_eq!(spec.output_hw(oh, ow).ok(), Some((h, wd)));
        let (rows, n) = (p.rows(), p.cols());
        let mut out = Tensor::zeros(&[bsz, cout, oh, ow]);
        let chunk = p.chunk(bsz);
        let mut cols = vec![0.0; rows * chunk * n];
        let mut xb = vec![0.0; cin * chunk * n];
        let out_stride = cout * oh * ow;
        for s0 in (0..bsz).step_by(chunk) {
            let nb = chunk.min(bsz - s0);
            let ld = nb * n;
            to_channel_major(tx.data(), s0, nb, cin, n, &mut xb);
            gemm(rows, cin, ld, tw.data(), true, &xb, false, 0.0, &mut cols);
            for j in 0..nb {
                let bi = s0 + j;
                p.col2im(&cols, ld, j * n, &mut out.data_mut()[bi * out_stride..(bi + 1) * out_stride]);
            }
        }
        if let Some(b) = b {
            add_channel_bias(self.value(b), "conv_transpose2d", &mut out, cout, oh * ow)?;
        }
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, spec }, ng))
    }

    /// Rows `idx` of `x` viewed as `[N, rest]`; output `[idx.len(), rest...]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let tx = self.value(x);
        let (n, d) = rows_cols(tx);
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return shape_err("gather_rows", format!("indices out of range for {n} rows"));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            data.extend_from_slice(&tx.data()[i * d..(i + 1) * d]);
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = idx.len();
        let out = Tensor::new(&shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::GatherRows(x, idx), ng))
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let tail = self.value(first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != tail[..] {
                return shape_err("concat_rows", format!("{:?} vs tail {:?}", t.shape(), tail));
            }
            rows += t.dim(0);
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(&shape, data)?;
        let ng = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::ConcatRows(xs.to_vec()), ng))
    }

    /// Columns `[start, start + len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || len == 0 || start + len > tx.dim(1) {
            return shape_err(
                "slice_cols",
                format!("{}..{} of {:?}", start, start + len, tx.shape()),
            );
        }
        let (n, d) = (tx.dim(0), tx.dim(1));
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&tx.data()[r * d + start..r * d + start + len]);
        }
        let out = Tensor::new(&[n, len], data)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let n = self.value(first).dim(0);
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let t = self.value(v);
            if t.rank() != 2 || t.dim(0) != n {
                return shape_err("concat_cols", format!("{:?} with {n} rows", t.shape()));
            }
            widths.push(t.dim(1));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&v, &wd) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(v).data()[r * wd..(r + 1) * wd]);
            }
        }
        let out = Tensor::new(&[n, total], data)?;
        let ng = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(out, Op::ConcatCols(xs.to_vec()), ng))
    }

    /// Row `i` comes from `a` where `mask[i]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, mask: Vec<bool>) -> Result<Var> {
        self.same_shape("select_rows", a, b)?;
        let (n, d) = rows_cols(self.value(a));
        if mask.len() != n {
            return shape_err("select_rows", format!("mask of {} for {n} rows", mask.len()));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = tb.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.data_mut()[r * d..(r + 1) * d].copy_from_slice(&ta.data()[r * d..(r + 1) * d]);
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::SelectRows { a, b, mask }, ng))
    }

    /// Per-row affine map `y_i = M_i x_i + s_i` on `x [N, d]`, with constant
    /// row-major `mats [N, d, d]` and `shifts [N, d]`.
    pub fn affine_rows(&mut self, x: Var, mats: Vec<f32>, shifts: &[f32]) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return shape_err("affine_rows", format!("{:?}", tx.shape()));
        }
        let (n, d) = (tx.dim(0), tx.dim(1));
        if mats.len() != n * d * d || shifts.len() != n * d {
            return shape_err(
                "affine_rows",
                format!("{} matrix / {} shift values for {n}x{d}", mats.len(), shifts.len()),
            );
        }
        let mut out = Tensor::zeros(&[n, d]);
        for r in 0..n {
            let m = &mats[r * d * d..(r + 1) * d * d];
            let xr = &tx.data()[r * d..(r + 1) * d];
            for i in 0..d {
                let mut acc = shifts[r * d + i];
                for j in 0..d {
                    acc += m[i * d + j] * xr[j];
                }
                out.data_mut()[r * d + i] = acc;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::AffineRows { x, mats }, ng))
    }

    /// `-Σ[t·ln p + (1-t)·ln(1-p)]` with `p` clamped to `[ε, 1-ε]`.
    pub fn bce_sum(&mut self, p: Var, target: Tensor) -> Result<Var> {
        let tp = self.value(p);
        if tp.shape() != target.shape() {
            return shape_err("bce_sum", format!("{:?} vs {:?}", tp.shape(), target.shape()));
        }
        let loss = bce_value(tp.data(), target.data());
        let ng = self.needs(p);
        Ok(self.push(Tensor::scalar(loss as f32), Op::BceSum { p, target }, ng))
    }

    /// `Σ(a-b)²`.
    pub fn mse_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse_sum", a, b)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s as f32), Op::MseSum(a, b), ng))
    }

    /// KL divergence of `N(mean, exp(logvar))` from the standard normal,
    /// summed over all elements.
    pub fn kld_sum(&mut self, mean: Var, logvar: Var) -> Result<Var> {
        self.same_shape("kld_sum", mean, logvar)?;
        let s: f64 = self
            .value(mean)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .map(|(&m, &lv)| 0.5 * ((m * m) as f64 + (lv as f64).exp() - lv as f64 - 1.0))
            .sum();
        let ng = self.needs(mean) || self.needs(logvar);
        Ok(self.push(Tensor::scalar(s as f32), Op::KldSum { mean, logvar }, ng))
    }

    /// Sum of the elements of `v`, re-accumulated in `f64` through the
    /// reductions and losses that produced it. Finite-difference checks use
    /// this to avoid the rounding of the stored `f32` scalar.
    pub fn sum_f64(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        let f64_sum = |t: &Tensor| t.data().iter().map(|&x| x as f64).sum::<f64>();
        match &node.op {
            Op::Sum(a) | Op::Reshape(a) => self.sum_f64(*a),
            Op::Add(a, b) => self.sum_f64(*a) + self.sum_f64(*b),
            Op::Sub(a, b) => self.sum_f64(*a) - self.sum_f64(*b),
            Op::Scale(a, s) => *s as f64 * self.sum_f64(*a),
            Op::ConcatRows(xs) => xs.iter().map(|&x| self.sum_f64(x)).sum(),
            Op::MulConst(a, c) => self
                .value(*a)
                .data()
                .iter()
                .zip(c.data())
                .map(|(&x, &y)| x as f64 * y as f64)
                .sum(),
            Op::BceSum { p, target } => bce_value(self.value(*p).data(), target.data()),
            Op::MseSum(a, b) => self
                .value(*a)
                .data()
                .iter()
                .zip(self.value(*b).data())
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum(),
            Op::KldSum { mean, logvar } => self
                .value(*mean)
                .data()
                .iter()
                .zip(self.value(*logvar).data())
                .map(|(&m, &lv)| 0.5 * ((m as f64).powi(2) + (lv as f64).exp() - lv as f64 - 1.0))
                .sum(),
            _ => f64_sum(&node.value),
        }
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradStore> {
        if self.value(loss).len() != 1 {
            return shape_err("backward", format!("loss of shape {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(GradStore {
            grads,
            param_vars: self.param_vars.clone(),
            n_params: self.params.len(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, Tensor::from_fn(g.shape(), |i| g.data()[i] * tb.data()[i]));
                acc(*b, Tensor::from_fn(g.shape(), |i| g.data()[i] * ta.data()[i]));
            }
            Op::MulConst(a, c) => {
                acc(*a, Tensor::from_fn(g.shape(), |i| g.data()[i] * c.data()[i]));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(
                    *a,
                    Tensor::from_fn(g.shape(), |i| if ta.data()[i] > 0.0 { g.data()[i] } else { 0.0 }),
                );
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(
                    *a,
                    Tensor::from_fn(g.shape(), |i| g.data()[i] * (1.0 - y.data()[i] * y.data()[i])),
                );
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(
                    *a,
                    Tensor::from_fn(g.shape(), |i| {
                        let s = y.data()[i];
                        g.data()[i] * s * (1.0 - s)
                    }),
                );
            }
            Op::Exp(a) => {
                let y = &node.value;
                acc(*a, Tensor::from_fn(g.shape(), |i| g.data()[i] * y.data()[i]));
            }
            Op::Reshape(a) => {
                acc(*a, g.clone().reshape(self.value(*a).shape())?);
            }
            Op::Sum(a) => {
                acc(*a, Tensor::full(self.value(*a).shape(), g.item()));
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, inp, outp) = (tx.dim(0), tx.dim(1), tw.dim(0));
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(tx.shape());
                    gemm(n, outp, inp, g.data(), false, tw.data(), false, 0.0, dx.data_mut());
                    acc(*x, dx);
                }
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(tw.shape());
                    gemm(outp, n, inp, g.data(), true, tx.data(), false, 0.0, dw.data_mut());
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    let mut db = Tensor::zeros(&[outp]);
                    for row in g.data().chunks(outp) {
                        for (d, &v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (bsz, c, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
                let o = tw.dim(0);
                let (oh, ow) = (node.value.dim(2), node.value.dim(3));
                let p = Patches {
                    channels: c,
                    h,
                    w: wd,
                    out_h: oh,
                    out_w: ow,
                    spec: *spec,
                };
                let (rows, n) = (p.rows(), p.cols());
                let chunk = p.chunk(bsz);
                let mut cols = vec![0.0; rows * chunk * n];
                let mut gy = vec![0.0; o * chunk * n];
                let mut dw = Tensor::zeros(tw.shape());
                let need_x = self.needs(*x);
                let need_w = self.needs(*w);
                let mut dx = need_x.then(|| Tensor::zeros(tx.shape()));
                let in_stride = c * h * wd;
                for s0 in (0..bsz).step_by(chunk) {
                    let nb = chunk.min(bsz - s0);
                    let ld = nb * n;
                    to_channel_major(g.data(), s0, nb, o, n, &mut gy);
                    if need_w {
                        for j in 0..nb {
                            let bi = s0 + j;
                            p.im2col(&tx.data()[bi * in_stride..(bi + 1) * in_stride], &mut cols, ld, j * n);
                        }
                        gemm(o, ld, rows, &gy, false, &cols, true, 1.0, dw.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(rows, o, ld, tw.data(), true, &gy, false, 0.0, &mut cols);
                        for j in 0..nb {
                            let bi = s0 + j;
                            p.col2im(&cols, ld, j * n, &mut dx.data_mut()[bi * in_stride..(bi + 1) * in_stride]);
                        }
                    }
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if need_w {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, channel_sums(g, o, n));
                }
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (bsz, cin, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
                let cout = tw.dim(1);
                let (oh, ow) = (node.value.dim(2), node.value.dim(3));
                let p = Patches {
                    channels: cout,
                    h: oh,
                    w: ow,
                    out_h: h,
                    out_w: wd,
                    spec: *spec,
                };
                let (rows, n) = (p.rows(), p.cols());
                let chunk = p.chunk(bsz);
                let mut cols = vec![0.0; rows * chunk * n];
                let mut xb = vec![0.0; cin * chunk * n];
                let mut dw = Tensor::zeros(tw.shape());
                let need_x = self.needs(*x);
                let need_w = self.needs(*w);
                let mut dx = need_x.then(|| Tensor::zeros(tx.shape()));
                let out_stride = cout * oh * ow;
                for s0 in (0..bsz).step_by(chunk) {
                    let nb = chunk.min(bsz - s0);
                    let ld = nb * n;
                    for j in 0..nb {
                        let bi = s0 + j;
                        p.im2col(&g.data()[bi * out_stride..(bi + 1) * out_stride], &mut cols, ld, j * n);
                    }
                    if need_w {
                        to_channel_major(tx.data(), s0, nb, cin, n, &mut xb);
                        gemm(cin, ld, rows, &xb, false, &cols, true, 1.0, dw.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(cin, rows, ld, tw.data(), false, &cols, false, 0.0, &mut xb);
                        from_channel_major(&xb, s0, nb, cin, n, dx.data_mut());
                    }
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if need_w {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    acc(*b, channel_sums(g, cout, oh * ow));
                }
            }
            Op::GatherRows(x, idx) => {
                let tx = self.value(*x);
                let (_, d) = rows_cols(tx);
                let mut dx = Tensor::zeros(tx.shape());
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g.data()[r * d..(r + 1) * d];
                    for (dst, &v) in dx.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
                        *dst += v;
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let t = self.value(v);
                    let n = t.len();
                    acc(v, Tensor::new(t.shape(), g.data()[offset..offset + n].to_vec())?);
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let (n, d) = (tx.dim(0), tx.dim(1));
                let len = g.dim(1);
                let mut dx = Tensor::zeros(tx.shape());
                for r in 0..n {
                    dx.data_mut()[r * d + start..r * d + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(xs) => {
                let n = g.dim(0);
                let total = g.dim(1);
                let mut offset = 0;
                for &v in xs {
                    let wd = self.value(v).dim(1);
                    let mut part = Vec::with_capacity(n * wd);
                    for r in 0..n {
                        part.extend_from_slice(&g.data()[r * total + offset..r * total + offset + wd]);
                    }
                    acc(v, Tensor::new(&[n, wd], part)?);
                    offset += wd;
                }
            }
            Op::SelectRows { a, b, mask } => {
                let (_, d) = rows_cols(g);
                let mut ga = Tensor::zeros(g.shape());
                let mut gb = Tensor::zeros(g.shape());
                for (r, &m) in mask.iter().enumerate() {
                    let dst = if m { &mut ga } else { &mut gb };
                    dst.data_mut()[r * d..(r + 1) * d].copy_from_slice(&g.data()[r * d..(r + 1) * d]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AffineRows { x, mats } => {
                let (n, d) = (g.dim(0), g.dim(1));
                let mut dx = Tensor::zeros(&[n, d]);
                for r in 0..n {
                    let m = &mats[r * d * d..(r + 1) * d * d];
                    for j in 0..d {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += m[i * d + j] * g.data()[r * d + i];
                        }
                        dx.data_mut()[r * d + j] = s;
                    }
                }
                acc(*x, dx);
            }
            Op::BceSum { p, target } => {
                let tp = self.value(*p);
                let gs = g.item();
                acc(
                    *p,
                    Tensor::from_fn(tp.shape(), |i| {
                        let pc = tp.data()[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                        let t = target.data()[i];
                        gs * ((1.0 - t) / (1.0 - pc) - t / pc)
                    }),
                );
            }
            Op::MseSum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let gs = 2.0 * g.item();
                let d = Tensor::from_fn(ta.shape(), |i| gs * (ta.data()[i] - tb.data()[i]));
                acc(*b, d.map(|x| -x));
                acc(*a, d);
            }
            Op::KldSum { mean, logvar } => {
                let gs = g.item();
                let (tm, tl) = (self.value(*mean), self.value(*logvar));
                acc(*mean, tm.map(|m| gs * m));
                acc(*logvar, tl.map(|lv| gs * 0.5 * (lv.exp() - 1.0)));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy with the same clamping as [`Graph::bce_sum`].
pub fn bce_value(p: &[f32], target: &[f32]) -> f64 {
    p.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS) as f64;
            let t = t as f64;
            -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
        })
        .sum()
}

fn add_channel_bias(
    bias: &Tensor,
    op: &'static str,
    out: &mut Tensor,
    channels: usize,
    plane: usize,
) -> Result<()> {
    if bias.shape() != [channels] {
        return shape_err(op, format!("bias {:?} for {channels} channels", bias.shape()));
    }
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let v = bias.data()[i % channels];
        chunk.iter_mut().for_each(|x| *x += v);
    }
    Ok(())
}

fn channel_sums(g: &Tensor, channels: usize, plane: usize) -> Tensor {
    let mut db = Tensor::zeros(&[channels]);
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        db.data_mut()[i % channels] += chunk.iter().sum::<f32>();
    }
    db
}
