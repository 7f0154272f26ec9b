//! Define-by-run tape. Every op evaluates eagerly and records enough to
//! replay its adjoint in [`Graph::backward`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::conv::{self, ConvGeometry};
use crate::float::Float;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How [`Graph::style_distance`] evaluates `‖S_a − S_b‖_F`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleRoute {
    /// Pick the cheaper of the two exact routes per call.
    Auto,
    /// Materialize both `P×P` spatial matrices.
    Spatial,
    /// Expand the squared norm through `C×C` channel products.
    Channel,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        out_channels: usize,
    },
    Relu(Var),
    Abs(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Reshape(Var),
    SliceItems {
        x: Var,
        start: usize,
    },
    Softmax(Var),
    GridScale {
        x: Var,
        w: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    RowDistance {
        a: Var,
        b: Var,
    },
    StyleDistance {
        a: Var,
        b: Var,
        spatial: bool,
    },
    StyleMatrix(Var),
    GramMatrix(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// 2-D convolution, `x: [N, C, H, W]`, `w: [Co, C, k, k]`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err(format!("conv2d: input {xs:?} vs kernel {ws:?}")));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(shape_err(format!("conv2d: kernel {ws:?} too large for {xs:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("conv2d: bias length"));
            }
        }
        let geom = ConvGeometry {
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let co = ws[0];
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let mut out = Tensor::zeros(&[xs[0], co, ho, wo]);
        let mut cols = vec![T::zero(); geom.patch_len() * geom.out_positions()];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            let out_len = co * ho * wo;
            for (n, dst) in out.data_mut().chunks_mut(out_len).enumerate() {
                conv::conv_forward(xv.item(n), wv, bv, co, &geom, &mut cols, dst);
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels: co,
            },
            &inputs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(shape_err(format!("max_pool2: input {xs:?}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let mut out = Tensor::zeros(&[n, c, h / 2, w / 2]);
        let per = c * (h / 2) * (w / 2);
        let mut argmax = vec![0u32; n * per];
        {
            let xv = self.value(x);
            for i in 0..n {
                conv::maxpool2_forward(
                    xv.item(i),
                    c,
                    h,
                    w,
                    &mut out.data_mut()[i * per..(i + 1) * per],
                    &mut argmax[i * per..(i + 1) * per],
                );
            }
        }
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, &[x]))
    }

    /// `[N, C, H, W] → [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("global_avg_pool: input {xs:?}")));
        }
        let hw = xs[2] * xs[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![xs[0], xs[1]], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// `y = x·wᵀ + b`, `x: [N, D]`, `w: [O, D]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?} vs weight {ws:?}")));
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        let mut data = matmul_bt(self.value(x).data(), self.value(w).data(), n, d, o);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(shape_err("linear: bias length"));
            }
            for row in data.chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let out = Tensor::new(vec![n, o], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), Error> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.same_shape(a, b, "sub")?;
        let bv = self.value(b).data();
        let data = self.value(a).data().iter().zip(bv).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, Error> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Items `start..start + len` along axis 0.
    pub fn slice_items(&mut self, x: Var, start: usize, len: usize) -> Result<Var, Error> {
        let xv = self.value(x);
        if start + len > xv.dim(0) {
            return Err(shape_err(format!("slice {start}..{} of {:?}", start + len, xv.shape())));
        }
        let idx: Vec<usize> = (start..start + len).collect();
        let out = xv.select_items(&idx);
        Ok(self.push(out, Op::SliceItems { x, start }, &[x]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let k = *xv.shape().last().unwrap();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Multiplies every pixel of `x: [N, C, H, W]` by the weight of its grid
    /// cell. `w: [N, R·K]` holds one weight per cell, row-major; `rows` and
    /// `cols` are the `R+1` / `K+1` cell boundaries.
    pub fn grid_scale(&mut self, x: Var, w: Var, rows: &[usize], cols: &[usize]) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let cells = (rows.len() - 1) * (cols.len() - 1);
        if xs.len() != 4 || ws != [xs[0], cells] || rows.last() != Some(&xs[2]) || cols.last() != Some(&xs[3]) {
            return Err(shape_err(format!(
                "grid_scale: input {xs:?}, weights {ws:?}, grid {rows:?}×{cols:?}"
            )));
        }
        let cell_of = grid_cells(rows, cols, xs[2], xs[3]);
        let (c, hw) = (xs[1], xs[2] * xs[3]);
        let mut out = self.value(x).clone();
        let wv = self.value(w).data();
        for (n, item) in out.data_mut().chunks_mut(c * hw).enumerate() {
            let wn = &wv[n * cells..(n + 1) * cells];
            for plane in item.chunks_mut(hw) {
                for (v, &cell) in plane.iter_mut().zip(&cell_of) {
                    *v *= wn[cell];
                }
            }
        }
        Ok(self.push(
            out,
            Op::GridScale {
                x,
                w,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
            },
            &[x, w],
        ))
    }

    /// Per-item Euclidean distance, `[N, ...] × [N, ...] → [N]`.
    pub fn row_distance(&mut self, a: Var, b: Var) -> Result<Var, Error> {
        self.same_shape(a, b, "row_distance")?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.dim(0);
        let data = (0..n)
            .map(|i| {
                av.item(i)
                    .iter()
                    .zip(bv.item(i))
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum::<T>()
                    .sqrt()
            })
            .collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::RowDistance { a, b }, &[a, b]))
    }

    /// Per-item Frobenius distance between spatially-normalized style
    /// matrices `S = FᵀF / (H·W)` of two `[N, C, H, W]` feature maps, where
    /// `F` is the `[C, H·W]` view of one item.
    pub fn style_distance(&mut self, a: Var, b: Var, route: StyleRoute) -> Result<Var, Error> {
        self.same_shape(a, b, "style_distance")?;
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 {
            return Err(shape_err(format!("style_distance: input {shape:?}")));
        }
        let (n, c, p) = (shape[0], shape[1], shape[2] * shape[3]);
        let spatial = match route {
            StyleRoute::Auto => p <= c,
            StyleRoute::Spatial => true,
            StyleRoute::Channel => false,
        };
        let s = T::one() / T::from_usize(p).unwrap();
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..n)
            .map(|i| {
                let (fa, fb) = (av.item(i), bv.item(i));
                if spatial {
                    spatial_style_diff(fa, fb, c, p, s)
                        .iter()
                        .map(|&v| v * v)
                        .sum::<T>()
                        .sqrt()
                } else {
                    let gaa = matmul_bt(fa, fa, c, p, c);
                    let gbb = matmul_bt(fb, fb, c, p, c);
                    let gab = matmul_bt(fa, fb, c, p, c);
                    let sq = |g: &[T]| g.iter().map(|&v| v * v).sum::<T>();
                    let two = T::one() + T::one();
                    let d2 = s * s * (sq(&gaa) - two * sq(&gab) + sq(&gbb));
                    d2.max(T::zero()).sqrt()
                }
            })
            .collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::StyleDistance { a, b, spatial }, &[a, b]))
    }

    /// Unnormalized style matrix `FᵀF`, `[N, C, H, W] → [N, H·W, H·W]`.
    pub fn style_matrix(&mut self, x: Var) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("style_matrix: input {xs:?}")));
        }
        let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * p * p);
        for i in 0..n {
            let f = xv.item(i);
            data.extend(matmul_at(f, f, p, c, p));
        }
        let out = Tensor::new(vec![n, p, p], data)?;
        Ok(self.push(out, Op::StyleMatrix(x), &[x]))
    }

    /// Gram matrix `FFᵀ`, `[N, C, H, W] → [N, C, C]`.
    pub fn gram_matrix(&mut self, x: Var) -> Result<Var, Error> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("gram_matrix: input {xs:?}")));
        }
        let (n, c, p) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x);
        let mut data = Vec::with_capacity(n * c * c);
        for i in 0..n {
            let f = xv.item(i);
            data.extend(matmul_bt(f, f, c, p, c));
        }
        let out = Tensor::new(vec![n, c, c], data)?;
        Ok(self.push(out, Op::GramMatrix(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / T::from_usize(xv.len()).unwrap());
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, Error> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() || ls[0] == 0 {
            return Err(shape_err(format!(
                "cross_entropy: logits {ls:?} vs {} labels",
                labels.len()
            )));
        }
        let k = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(shape_err(format!("cross_entropy: label {bad} ≥ {k} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let shifted = row[label] - m;
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
            // −log p = ln s − (z − m)
            total += s.ln() - shifted;
        }
        let n = T::from_usize(labels.len()).unwrap();
        let out = Tensor::scalar(total / n);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Hash of every piecewise-linear branch taken by the current forward
    /// pass (ReLU signs, pool argmaxes, |·| signs). Two evaluations with the
    /// same signature lie on the same smooth piece of the loss.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    for &v in self.value(*x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, Error> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let n = xv.dim(0);
                let mut gw = self.wants(*w).then(|| Tensor::zeros(wv.shape()));
                let mut gb = b.filter(|b| self.wants(*b)).map(|_| Tensor::zeros(&[*out_channels]));
                let mut gx = self.wants(*x).then(|| Tensor::zeros(xv.shape()));
                let mut cols = vec![T::zero(); geom.patch_len() * geom.out_positions()];
                let out_len = out.item_len();
                let in_len = xv.item_len();
                for i in 0..n {
                    conv::conv_backward(
                        xv.item(i),
                        wv.data(),
                        &g.data()[i * out_len..(i + 1) * out_len],
                        *out_channels,
                        geom,
                        &mut cols,
                        gw.as_mut().map(|t| t.data_mut()),
                        gb.as_mut().map(|t| t.data_mut()),
                        gx.as_mut().map(|t| &mut t.data_mut()[i * in_len..(i + 1) * in_len]),
                    );
                }
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data).unwrap());
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data).unwrap());
            }
            Op::MaxPool2 { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let in_len = xv.item_len();
                let out_len = out.item_len();
                for (o, (&src, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                    let item = o / out_len;
                    gx.data_mut()[item * in_len + src as usize] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(*x);
                let hw = xv.dim(2) * xv.dim(3);
                let inv = T::one() / T::from_usize(hw).unwrap();
                let mut gx = Tensor::zeros(xv.shape());
                for (plane, &gv) in gx.data_mut().chunks_mut(hw).zip(g.data()) {
                    plane.fill(gv * inv);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, d, o) = (xv.dim(0), xv.dim(1), wv.dim(0));
                if self.wants(*x) {
                    let gx = matmul(g.data(), wv.data(), n, o, d);
                    self.accumulate(grads, *x, Tensor::new(vec![n, d], gx).unwrap());
                }
                if self.wants(*w) {
                    let gw = matmul_at(g.data(), xv.data(), o, n, d);
                    self.accumulate(grads, *w, Tensor::new(vec![o, d], gw).unwrap());
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![T::zero(); o];
                        for row in g.data().chunks(o) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::new(vec![o], gb).unwrap());
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, g.map(|v| v * f));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x)).unwrap();
                self.accumulate(grads, *x, gx);
            }
            Op::SliceItems { x, start } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let len = xv.item_len();
                gx.data_mut()[start * len..start * len + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let k = *out.shape().last().unwrap();
                let mut gx = out.clone();
                for (yr, gr) in gx.data_mut().chunks_mut(k).zip(g.data().chunks(k)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    for (y, &gv) in yr.iter_mut().zip(gr) {
                        *y *= gv - dot;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GridScale { x, w, rows, cols } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (c, h, wd) = (xv.dim(1), xv.dim(2), xv.dim(3));
                let hw = h * wd;
                let cells = wv.dim(1);
                let cell_of = grid_cells(rows, cols, h, wd);
                if self.wants(*x) {
                    let mut gx = g.clone();
                    for (n, item) in gx.data_mut().chunks_mut(c * hw).enumerate() {
                        let wn = &wv.data()[n * cells..(n + 1) * cells];
                        for plane in item.chunks_mut(hw) {
                            for (v, &cell) in plane.iter_mut().zip(&cell_of) {
                                *v *= wn[cell];
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = Tensor::zeros(wv.shape());
                    for n in 0..xv.dim(0) {
                        let xi = xv.item(n);
                        let gi = &g.data()[n * c * hw..(n + 1) * c * hw];
                        let gwn = &mut gw.data_mut()[n * cells..(n + 1) * cells];
                        for ch in 0..c {
                            for (p, &cell) in cell_of.iter().enumerate() {
                                gwn[cell] += xi[ch * hw + p] * gi[ch * hw + p];
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::RowDistance { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let len = av.item_len();
                let mut ga = Tensor::zeros(av.shape());
                for i in 0..av.dim(0) {
                    let d = out.data()[i];
                    if d <= T::zero() {
                        continue;
                    }
                    let coef = g.data()[i] / d;
                    let dst = &mut ga.data_mut()[i * len..(i + 1) * len];
                    for ((o, &x), &y) in dst.iter_mut().zip(av.item(i)).zip(bv.item(i)) {
                        *o = (x - y) * coef;
                    }
                }
                let gb = ga.map(|v| -v);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::StyleDistance { a, b, spatial } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (c, p) = (av.dim(1), av.dim(2) * av.dim(3));
                let s = T::one() / T::from_usize(p).unwrap();
                let two = T::one() + T::one();
                let len = c * p;
                let mut ga = Tensor::zeros(av.shape());
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..av.dim(0) {
                    let d = out.data()[i];
                    if d <= T::zero() {
                        continue;
                    }
                    let (fa, fb) = (av.item(i), bv.item(i));
                    let (da, db) = if *spatial {
                        // dD/dF_a = 2s·F_a·M/D, dD/dF_b = −2s·F_b·M/D
                        let m = spatial_style_diff(fa, fb, c, p, s);
                        let coef = two * s * g.data()[i] / d;
                        let mut da = matmul(fa, &m, c, p, p);
                        let mut db = matmul(fb, &m, c, p, p);
                        da.iter_mut().for_each(|v| *v *= coef);
                        db.iter_mut().for_each(|v| *v *= -coef);
                        (da, db)
                    } else {
                        // dD²/dF_a = 4s²(G_aa·F_a − G_ab·F_b), dD²/dF_b = 4s²(G_bb·F_b − G_abᵀ·F_a)
                        let gaa = matmul_bt(fa, fa, c, p, c);
                        let gbb = matmul_bt(fb, fb, c, p, c);
                        let gab = matmul_bt(fa, fb, c, p, c);
                        let coef = two * s * s * g.data()[i] / d;
                        let mut da = matmul(&gaa, fa, c, c, p);
                        let cross_a = matmul(&gab, fb, c, c, p);
                        let mut db = matmul(&gbb, fb, c, c, p);
                        let cross_b = matmul_at(&gab, fa, c, c, p);
                        for (v, &x) in da.iter_mut().zip(&cross_a) {
                            *v = (*v - x) * coef;
                        }
                        for (v, &x) in db.iter_mut().zip(&cross_b) {
                            *v = (*v - x) * coef;
                        }
                        (da, db)
                    };
                    ga.data_mut()[i * len..(i + 1) * len].copy_from_slice(&da);
                    gb.data_mut()[i * len..(i + 1) * len].copy_from_slice(&db);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::StyleMatrix(x) => {
                // d(FᵀF) with upstream Ḡ: dF = F·(Ḡ + Ḡᵀ)
                let xv = self.value(*x);
                let (c, p) = (xv.dim(1), xv.dim(2) * xv.dim(3));
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..xv.dim(0) {
                    let gi = &g.data()[i * p * p..(i + 1) * p * p];
                    let mut sym = vec![T::zero(); p * p];
                    for r in 0..p {
                        for q in 0..p {
                            sym[r * p + q] = gi[r * p + q] + gi[q * p + r];
                        }
                    }
                    let d = matmul(xv.item(i), &sym, c, p, p);
                    gx.data_mut()[i * c * p..(i + 1) * c * p].copy_from_slice(&d);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GramMatrix(x) => {
                // d(FFᵀ) with upstream Ḡ: dF = (Ḡ + Ḡᵀ)·F
                let xv = self.value(*x);
                let (c, p) = (xv.dim(1), xv.dim(2) * xv.dim(3));
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..xv.dim(0) {
                    let gi = &g.data()[i * c * c..(i + 1) * c * c];
                    let mut sym = vec![T::zero(); c * c];
                    for r in 0..c {
                        for q in 0..c {
                            sym[r * c + q] = gi[r * c + q] + gi[q * c + r];
                        }
                    }
                    let d = matmul(&sym, xv.item(i), c, c, p);
                    gx.data_mut()[i * c * p..(i + 1) * c * p].copy_from_slice(&d);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).len()).unwrap();
                let gv = g.data()[0] / n;
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let shape = self.shape(*logits).to_vec();
                let k = shape[1];
                let scale = g.data()[0] / T::from_usize(labels.len()).unwrap();
                let mut gx = probs.clone();
                for (row, &label) in gx.chunks_mut(k).zip(labels) {
                    row[label] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, Tensor::new(shape, gx).unwrap());
            }
        }
    }
}

/// `s·(F_aᵀF_a − F_bᵀF_b)` for `[C, P]` feature views.
fn spatial_style_diff<T: Float>(fa: &[T], fb: &[T], c: usize, p: usize, s: T) -> Vec<T> {
    let mut m = matmul_at(fa, fa, p, c, p);
    let sb = matmul_at(fb, fb, p, c, p);
    for (v, &x) in m.iter_mut().zip(&sb) {
        *v = (*v - x) * s;
    }
    m
}

/// Row-major cell index of every pixel for the given boundaries.
fn grid_cells(rows: &[usize], cols: &[usize], h: usize, w: usize) -> Vec<usize> {
    let ncols = cols.len() - 1;
    let mut cells = vec![0usize; h * w];
    for (r, rb) in rows.windows(2).enumerate() {
        for (k, cb) in cols.windows(2).enumerate() {
            for y in rb[0]..rb[1] {
                for x in cb[0]..cb[1] {
                    cells[y * w + x] = r * ncols + k;
                }
            }
        }
    }
    cells
}
