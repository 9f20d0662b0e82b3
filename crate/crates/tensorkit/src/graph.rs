//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value; nodes are therefore in
//! topological order and [`Graph::backward`] is a single reverse sweep. A graph
//! is built fresh per loss evaluation and dropped afterwards.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom, PadMode, PlaneStats};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: Var,
        stats: PlaneStats<T>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    Reshape {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    MeanSqDiff {
        a: Var,
        b: Var,
    },
    MseTarget {
        x: Var,
        target: T,
    },
    Mean {
        x: Var,
    },
    BceLogits {
        x: Var,
        target: T,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    /// Whether any differentiable leaf or parameter reaches this node.
    tracked: bool,
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    params: HashMap<ParamId, Vec<T>>,
    leaves: HashMap<Var, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    pub fn leaf(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    no_grad: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        })
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            no_grad: false,
        }
    }

    /// Graph in which nothing is tracked: parameters and leaves enter as
    /// constants. Used for evaluation.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    /// Inserts a value that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Inserts a leaf; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad() && !self.no_grad;
        self.push(t, Op::Leaf, tracked)
    }

    /// Untracked copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Inserts (once per graph) the parameter `id` from `store`. Parameters of a
    /// frozen store enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let src = store.get(id);
        let value = Tensor::new(src.shape().to_vec(), src.data().to_vec()).expect("shape preserved");
        let tracked = !store.is_frozen() && !self.no_grad;
        let v = self.push(value, if tracked { Op::Param(id) } else { Op::Leaf }, tracked);
        self.param_vars.insert(id, v);
        v
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = xv.dims4("conv2d")?;
        let (o, ci, kh, kw) = wv.dims4("conv2d")?;
        if ci != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: xv.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        if let Some(b) = b {
            same_shape("conv2d bias", self.shape(b), &[o])?;
        }
        xv.ensure_finite("conv2d")?;
        let geom = ConvGeom::new(c, h, wd, kh, kw, stride, pad, mode)?;
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![T::zero(); n * rows * ncols];
        let mut out = vec![T::zero(); n * o * ncols];
        let plane_in = c * h * wd;
        for s in 0..n {
            let col = &mut cols[s * rows * ncols..(s + 1) * rows * ncols];
            geom.im2col(&xv.data()[s * plane_in..(s + 1) * plane_in], col);
            let dst = &mut out[s * o * ncols..(s + 1) * o * ncols];
            T::gemm(o, rows, ncols, T::one(), wv.data(), false, col, false, T::zero(), dst);
            if let Some(b) = b {
                let bias = self.value(b).data();
                for (oc, chunk) in dst.chunks_exact_mut(ncols).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias[oc]);
                }
            }
        }
        let value = Tensor::new([n, o, geom.out_h, geom.out_w], out)?;
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, tracked))
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (_, _, h, w) = xv.dims4("instance_norm")?;
        if h * w < 2 {
            return Err(TensorError::invalid(
                "instance_norm",
                format!("spatial plane {h}x{w} has a single element; std undefined"),
            ));
        }
        let mut out = vec![T::zero(); xv.numel()];
        let stats = kernels::instance_norm_forward(xv.data(), h * w, T::lit(eps), &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::InstanceNorm { x, stats }, tracked))
    }

    /// `x * gamma + beta` with `gamma`, `beta` of shape `[N, C]` broadcast over space.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("channel_affine")?;
        same_shape("channel_affine gamma", self.shape(gamma), &[n, c])?;
        same_shape("channel_affine beta", self.shape(beta), &[n, c])?;
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let plane = h * w;
        let mut out = xv.data().to_vec();
        for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = *v * g[i] + b[i]);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(value, Op::ChannelAffine { x, gamma, beta }, tracked))
    }

    /// Adaptive instance normalization: `gamma * (z - mu(z)) / sigma(z) + beta`.
    pub fn adain(&mut self, z: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, _, _) = self.value(z).dims4("adain")?;
        for p in [gamma, beta] {
            if self.shape(p) != [n, c] {
                return Err(TensorError::ShapeMismatch {
                    op: "adain",
                    left: vec![n, c],
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let normed = self.instance_norm(z, eps)?;
        self.channel_affine(normed, gamma, beta)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(TensorError::invalid("upsample_nearest", "factor must be >= 1"));
        }
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("upsample_nearest")?;
        let mut out = vec![T::zero(); n * c * h * w * factor * factor];
        kernels::upsample_nearest_forward(xv.data(), n * c, h, w, factor, &mut out);
        let value = Tensor::new([n, c, h * factor, w * factor], out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Upsample { x, factor }, tracked))
    }

    /// Non-overlapping `k x k` average pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("avg_pool")?;
        if k == 0 || h < k || w < k {
            return Err(TensorError::invalid(
                "avg_pool",
                format!("window {k} does not fit input {h}x{w}"),
            ));
        }
        let mut out = vec![T::zero(); n * c * (h / k) * (w / k)];
        kernels::avg_pool_forward(xv.data(), n * c, h, w, k, &mut out);
        let value = Tensor::new([n, c, h / k, w / k], out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::AvgPool { x, k }, tracked))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::lit(plane as f64);
        let out = xv
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new([n, c], out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::GlobalAvgPool { x }, tracked))
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]` -> `x w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fin) = self.value(x).dims2("linear")?;
        let (fout, win) = self.value(w).dims2("linear")?;
        if win != fin {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: self.shape(x).to_vec(),
                right: self.shape(w).to_vec(),
            });
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            same_shape("linear bias", self.shape(b), &[fout])?;
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(fout) {
                row.iter_mut().zip(bias).for_each(|(v, &bb)| *v += bb);
            }
        }
        let value = Tensor::new([n, fout], out)?;
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(value, Op::Linear { x, w, b }, tracked))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let tracked = self.tracked(x);
        self.push(value, op, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.map_unary(
            x,
            move |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu { x, slope: s },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| v.tanh(), Op::Tanh { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add { a, b }, tracked))
    }

    /// `sum_i c_i * x_i` over same-shaped operands.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| TensorError::invalid("weighted_sum", "no terms"))?
            .0;
        let shape = self.shape(first).to_vec();
        let mut out = vec![T::zero(); self.value(first).numel()];
        let mut typed = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            same_shape("weighted_sum", &shape, self.shape(v))?;
            let c = T::lit(c);
            for (o, &x) in out.iter_mut().zip(self.value(v).data()) {
                *o += c * x;
            }
            typed.push((v, c));
        }
        let tracked = typed.iter().any(|&(v, _)| self.tracked(v));
        Ok(self.push(Tensor::new(shape, out)?, Op::WeightedSum { terms: typed }, tracked))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.weighted_sum(&[(x, c)])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::Reshape { x }, tracked))
    }

    /// Columns `start..start+len` of a `[N, F]` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, f) = self.value(x).dims2("slice_cols")?;
        if start + len > f {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("range {start}..{} exceeds {f} columns", start + len),
            ));
        }
        let data = self.value(x).data();
        let out = (0..n)
            .flat_map(|r| data[r * f + start..r * f + start + len].iter().copied())
            .collect();
        let value = Tensor::new([n, len], out)?;
        let tracked = self.tracked(x);
        Ok(self.push(value, Op::SliceCols { x, start }, tracked))
    }

    fn scalar_node(&mut self, v: T, op: Op<T>, tracked: bool) -> Var {
        self.push(Tensor::scalar(v), op, tracked)
    }

    /// Mean absolute difference (L1) over all elements.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mean_abs_diff", self.shape(a), self.shape(b))?;
        let v = self.value(a).mean_abs_diff(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.scalar_node(v, Op::MeanAbsDiff { a, b }, tracked))
    }

    /// Mean squared difference over all elements.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mean_sq_diff", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let v = s / T::lit(av.numel() as f64);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.scalar_node(v, Op::MeanSqDiff { a, b }, tracked))
    }

    /// `mean((x - target)^2)`.
    pub fn mse_target(&mut self, x: Var, target: f64) -> Result<Var> {
        let t = T::lit(target);
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(TensorError::invalid("mse_target", "empty input"));
        }
        let s: T = xv.data().iter().map(|&v| (v - t) * (v - t)).sum();
        let v = s / T::lit(xv.numel() as f64);
        let tracked = self.tracked(x);
        Ok(self.scalar_node(v, Op::MseTarget { x, target: t }, tracked))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(TensorError::invalid("mean", "empty input"));
        }
        let v = xv.mean();
        let tracked = self.tracked(x);
        Ok(self.scalar_node(v, Op::Mean { x }, tracked))
    }

    /// Mean binary cross-entropy of logits `x` against a constant target.
    pub fn bce_with_logits(&mut self, x: Var, target: f64) -> Result<Var> {
        let t = T::lit(target);
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(TensorError::invalid("bce_with_logits", "empty input"));
        }
        let s: T = xv
            .data()
            .iter()
            .map(|&v| v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln())
            .sum();
        let v = s / T::lit(xv.numel() as f64);
        let tracked = self.tracked(x);
        Ok(self.scalar_node(v, Op::BceLogits { x, target: t }, tracked))
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![n, k],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let probs = softmax_rows(self.value(logits).data(), k);
        let loss: T = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -(probs[r * k + l].max(T::lit(1e-30))).ln())
            .sum::<T>()
            / T::lit(n as f64);
        let tracked = self.tracked(logits);
        Ok(self.scalar_node(
            loss,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.backprop_node(node, &gy, &mut grads);
            match node.op {
                Op::Param(id) => {
                    out.params.insert(id, gy);
                }
                Op::Leaf => {
                    out.leaves.insert(Var(i), gy);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Runs [`Graph::backward`] and accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads);
        Ok(grads)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.tracked(v) {
            return None;
        }
        let len = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom, cols } => {
                let (n, c_out) = (node.value.shape()[0], node.value.shape()[1]);
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let plane_in = geom.c_in * geom.h * geom.w;
                let wv = self.value(*w).data();
                if let Some(db) = b.and_then(|b| self.slot(grads, b)) {
                    for s in 0..n {
                        let gs = &gy[s * c_out * ncols..(s + 1) * c_out * ncols];
                        for (oc, chunk) in gs.chunks_exact(ncols).enumerate() {
                            db[oc] += chunk.iter().copied().sum::<T>();
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for s in 0..n {
                        let gs = &gy[s * c_out * ncols..(s + 1) * c_out * ncols];
                        let col = &cols[s * rows * ncols..(s + 1) * rows * ncols];
                        T::gemm(c_out, ncols, rows, T::one(), gs, false, col, true, T::one(), dw);
                    }
                }
                if self.tracked(*x) {
                    let mut dcol = vec![T::zero(); rows * ncols];
                    let dx = self.slot(grads, *x).expect("tracked");
                    for s in 0..n {
                        let gs = &gy[s * c_out * ncols..(s + 1) * c_out * ncols];
                        T::gemm(rows, c_out, ncols, T::one(), wv, true, gs, false, T::zero(), &mut dcol);
                        geom.col2im(&dcol, &mut dx[s * plane_in..(s + 1) * plane_in]);
                    }
                }
            }
            Op::InstanceNorm { x, stats } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = node.value.shape();
                    kernels::instance_norm_backward(y, gy, stats, s[2] * s[3], dx);
                }
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let s = node.value.shape();
                let plane = s[2] * s[3];
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (i, (gs, xs)) in gy.chunks_exact(plane).zip(xv.chunks_exact(plane)).enumerate() {
                        dg[i] += gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for (i, gs) in gy.chunks_exact(plane).enumerate() {
                        db[i] += gs.iter().copied().sum::<T>();
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for (i, (d, gs)) in dx.chunks_exact_mut(plane).zip(gy.chunks_exact(plane)).enumerate() {
                        d.iter_mut().zip(gs).for_each(|(o, &g)| *o += g * gv[i]);
                    }
                }
            }
            Op::Upsample { x, factor } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = self.value(*x).shape();
                    kernels::upsample_nearest_backward(gy, s[0] * s[1], s[2], s[3], *factor, dx);
                }
            }
            Op::AvgPool { x, k } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = self.value(*x).shape();
                    kernels::avg_pool_backward(gy, s[0] * s[1], s[2], s[3], *k, dx);
                }
            }
            Op::GlobalAvgPool { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = self.value(*x).shape();
                    let plane = s[2] * s[3];
                    let inv = T::one() / T::lit(plane as f64);
                    for (d, &g) in dx.chunks_exact_mut(plane).zip(gy) {
                        d.iter_mut().for_each(|o| *o += g * inv);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = node.value.shape()[1];
                if let Some(db) = b.and_then(|b| self.slot(grads, b)) {
                    for row in gy.chunks_exact(fout) {
                        db.iter_mut().zip(row).for_each(|(o, &g)| *o += g);
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    let xv = self.value(*x).data();
                    T::gemm(fout, n, fin, T::one(), gy, true, xv, false, T::one(), dw);
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let wv = self.value(*w).data();
                    T::gemm(n, fout, fin, T::one(), gy, false, wv, false, T::one(), dx);
                }
            }
            Op::Relu { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &g), &yv) in dx.iter_mut().zip(gy).zip(y) {
                        if yv > T::zero() {
                            *o += g;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &g), &xi) in dx.iter_mut().zip(gy).zip(xv) {
                        *o += if xi > T::zero() { g } else { g * *slope };
                    }
                }
            }
            Op::Tanh { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, &g), &yv) in dx.iter_mut().zip(gy).zip(y) {
                        *o += g * (T::one() - yv * yv);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(gy).for_each(|(o, &g)| *o += g);
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(gy).for_each(|(o, &g)| *o += c * g);
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(gy).for_each(|(o, &g)| *o += g);
                }
            }
            Op::SliceCols { x, start } => {
                let f = self.shape(*x)[1];
                let len = node.value.shape()[1];
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, row) in gy.chunks_exact(len).enumerate() {
                        let d = &mut dx[r * f + start..r * f + start + len];
                        d.iter_mut().zip(row).for_each(|(o, &g)| *o += g);
                    }
                }
            }
            Op::MeanAbsDiff { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = gy[0] / T::lit(av.len() as f64);
                let sign = |d: T| {
                    if d > T::zero() {
                        T::one()
                    } else if d < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                if let Some(da) = self.slot(grads, *a) {
                    for ((o, &x), &z) in da.iter_mut().zip(av).zip(bv) {
                        *o += scale * sign(x - z);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((o, &x), &z) in db.iter_mut().zip(av).zip(bv) {
                        *o -= scale * sign(x - z);
                    }
                }
            }
            Op::MeanSqDiff { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = gy[0] * T::lit(2.0) / T::lit(av.len() as f64);
                if let Some(da) = self.slot(grads, *a) {
                    for ((o, &x), &z) in da.iter_mut().zip(av).zip(bv) {
                        *o += scale * (x - z);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((o, &x), &z) in db.iter_mut().zip(av).zip(bv) {
                        *o -= scale * (x - z);
                    }
                }
            }
            Op::MseTarget { x, target } => {
                let xv = self.value(*x).data();
                let scale = gy[0] * T::lit(2.0) / T::lit(xv.len() as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(xv).for_each(|(o, &v)| *o += scale * (v - *target));
                }
            }
            Op::Mean { x } => {
                let len = self.value(*x).numel();
                let g = gy[0] / T::lit(len as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|o| *o += g);
                }
            }
            Op::BceLogits { x, target } => {
                let xv = self.value(*x).data();
                let scale = gy[0] / T::lit(xv.len() as f64);
                if let Some(dx) = self.slot(grads, *x) {
                    for (o, &v) in dx.iter_mut().zip(xv) {
                        let sig = T::one() / (T::one() + (-v).exp());
                        *o += scale * (sig - *target);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.shape(*logits)[1];
                let scale = gy[0] / T::lit(labels.len() as f64);
                if let Some(dx) = self.slot(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { T::one() } else { T::zero() };
                            dx[r * k + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise softmax of a `[N, k]` buffer.
pub fn softmax_rows<T: Element>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}
