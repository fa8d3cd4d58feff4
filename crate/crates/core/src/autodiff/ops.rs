//! Primitive operations and their reverse-mode rules.

use super::conv::{self, Geometry, Padding};
use super::{GateKind, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

/// Per-channel batch normalization parameters kept outside the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(momentum),
            eps: T::lit(eps),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn scalar_shaped<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.numel() != 1 {
        return Err(Error::shape(op, format!("expected a scalar, got {:?}", t.shape())));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

impl<T: Scalar> Graph<T> {
    fn conv_impl(&mut self, name: &'static str, x: Var, k: Var, stride: usize, padding: Padding, depthwise: bool) -> Result<Var> {
        let xs = self.value(x).nchw(name)?;
        let ks = self.value(k).nchw(name)?;
        let geom = Geometry::new(name, xs, ks, depthwise, stride, padding)?;
        let out = conv::forward(&geom, depthwise, self.value(x).data(), self.value(k).data());
        let value = Tensor::new(geom.out_shape(), out)?;
        self.record(name, value, Op::Conv { x, k, geom, depthwise }, &[x, k])
    }

    /// Cross-correlation of an NCHW input with an OIHW kernel.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.conv_impl("conv2d", x, kernel, stride, padding, false)
    }

    /// Per-channel cross-correlation with a `C x 1 x KH x KW` kernel.
    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        self.conv_impl("depthwise_conv2d", x, kernel, stride, padding, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}"))),
        };
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.record("matmul", value, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.record("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.record("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.record("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Tensor times a single-element tensor.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_shaped("scale", self.value(s))?;
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        self.record("scale", value, Op::Scale { x, s }, &[x, s])
    }

    /// `a * x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: T, b: T) -> Result<Var> {
        let value = self.value(x).map(|v| a * v + b);
        self.record("affine", value, Op::Affine { x, a }, &[x])
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::one())
    }

    /// Adds a per-channel bias `[C]` to an NCHW tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw("add_channel_bias")?;
        if self.value(b).shape() != [c] {
            return Err(Error::shape("add_channel_bias", format!("bias {:?} for {c} channels", self.value(b).shape())));
        }
        let bd = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, chunk) in value.data_mut().chunks_mut(h * w).enumerate() {
            let bv = bd[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        debug_assert_eq!(value.numel(), n * c * h * w);
        self.record("add_channel_bias", value, Op::ChannelBias { x, b }, &[x, b])
    }

    /// Adds a row bias `[F]` to an `[N, F]` matrix.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let f = match self.value(x).shape() {
            [_, f] => *f,
            s => return Err(Error::shape("add_row_bias", format!("expected [N, F], got {s:?}"))),
        };
        if self.value(b).shape() != [f] {
            return Err(Error::shape("add_row_bias", format!("bias {:?} for {f} features", self.value(b).shape())));
        }
        let bd = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(f) {
            row.iter_mut().zip(&bd).for_each(|(v, b)| *v += *b);
        }
        self.record("add_row_bias", value, Op::RowBias { x, b }, &[x, b])
    }

    /// Scales each `(n, c)` plane of an NCHW tensor by `gate[n, c]`.
    pub fn mul_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw("mul_channels")?;
        if self.value(gate).shape() != [n, c] {
            return Err(Error::shape("mul_channels", format!("gate {:?} for [{n}, {c}]", self.value(gate).shape())));
        }
        let gd = self.value(gate).data().to_vec();
        let mut value = self.value(x).clone();
        for (plane, gv) in value.data_mut().chunks_mut(h * w).zip(gd) {
            plane.iter_mut().for_each(|v| *v *= gv);
        }
        self.record("mul_channels", value, Op::MulChannels { x, gate }, &[x, gate])
    }

    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        let six = T::lit(6.0);
        let value = self.value(x).map(|v| v.max(T::zero()).min(six));
        self.record("relu6", value, Op::Relu6(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(Scalar::sigmoid);
        self.record("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let value = self.value(x).map(T::ln);
        self.record("log", value, Op::Log(x), &[x])
    }

    /// Mean over spatial positions: NCHW -> `[N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw("global_avg_pool")?;
        let inv = T::one() / T::count(h * w);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        self.record("global_avg_pool", value, Op::GlobalAvgPool(x), &[x])
    }

    /// Batch normalization over N, H, W per channel.
    ///
    /// With `train` set, batch statistics are used and the running averages
    /// in `state` are updated (outside the graph); otherwise the running
    /// averages normalize the input.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState<T>, train: bool) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw("batchnorm")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] || state.channels() != c {
            return Err(Error::shape("batchnorm", format!("affine parameters do not match {c} channels")));
        }
        let hw = h * w;
        let count = n * hw;
        let xd = self.value(x).data();
        let (mut mean, mut var) = (vec![T::zero(); c], vec![T::zero(); c]);
        if train {
            let inv_count = T::one() / T::count(count);
            for ch in 0..c {
                let mut s = T::zero();
                for s_i in 0..n {
                    s += xd[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let m = s * inv_count;
                let mut sq = T::zero();
                for s_i in 0..n {
                    for &v in &xd[(s_i * c + ch) * hw..(s_i * c + ch + 1) * hw] {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq * inv_count;
            }
        } else {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (i, (&v, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / hw) % c;
            *xh = (v - mean[ch]) * inv_std[ch];
            *o = gd[ch] * *xh + bd[ch];
        }
        if train {
            let mom = state.momentum;
            let unbias = if count > 1 {
                T::count(count) / T::count(count - 1)
            } else {
                T::one()
            };
            for ch in 0..c {
                state.running_mean[ch] = (T::one() - mom) * state.running_mean[ch] + mom * mean[ch];
                state.running_var[ch] = (T::one() - mom) * state.running_var[ch] + mom * var[ch] * unbias;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.record(
            "batchnorm",
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: train,
            },
            &[x, gamma, beta],
        )
    }

    /// Zeroes the elements outside `mask`.
    pub fn mask(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(Error::shape("mask", format!("mask {:?} for tensor {:?}", mask.shape(), self.value(x).shape())));
        }
        let value = mask.apply(self.value(x));
        self.record("mask", value, Op::Mask { x, mask: mask.clone() }, &[x])
    }

    /// Squared L2 norm of the masked subset divided by the subset size.
    pub fn group_lasso_sq_norm(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(Error::shape("group_lasso_sq_norm", format!("mask {:?} for tensor {:?}", mask.shape(), self.value(x).shape())));
        }
        let count = mask.count();
        if count == 0 {
            return Err(Error::shape("group_lasso_sq_norm", "empty subset"));
        }
        let sum: T = self
            .value(x)
            .data()
            .iter()
            .zip(mask.bits())
            .filter(|(_, &b)| b)
            .map(|(&v, _)| v * v)
            .sum();
        let value = Tensor::scalar(sum / T::count(count));
        self.record("group_lasso_sq_norm", value, Op::GroupLasso { x, mask: mask.clone() }, &[x])
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = match self.value(logits).shape() {
            [n, k] => (*n, *k),
            s => return Err(Error::shape("cross_entropy", format!("expected [N, K] logits, got {s:?}"))),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows of {k} classes", labels.len())));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &ld[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - mx).exp() / z;
            }
            total += z.ln() + mx - row[label];
        }
        let value = Tensor::scalar(total / T::count(n));
        self.record(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Thresholded indicator `1(x > t)` under the chosen relaxation.
    pub fn gate(&mut self, x: Var, t: Var, kind: GateKind) -> Result<Var> {
        scalar_shaped("gate", self.value(x))?;
        scalar_shaped("gate", self.value(t))?;
        let (xv, tv) = (self.value(x).item(), self.value(t).item());
        let out = match kind {
            GateKind::Hard | GateKind::StraightThrough => {
                if xv > tv {
                    T::one()
                } else {
                    T::zero()
                }
            }
            GateKind::Sigmoid { beta } => {
                if beta <= 0.0 {
                    return Err(Error::Config(format!("sigmoid steepness must be positive, got {beta}")));
                }
                (T::lit(beta) * (xv - tv)).sigmoid()
            }
        };
        self.record("gate", Tensor::scalar(out), Op::Gate { x, t, kind }, &[x, t])
    }

    /// Softmax over a one-dimensional tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.value(x).shape().len() != 1 {
            return Err(Error::shape("softmax", format!("expected a vector, got {:?}", self.value(x).shape())));
        }
        let d = self.value(x).data();
        let mx = d.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = d.iter().map(|&v| (v - mx).exp()).collect();
        let z: T = e.iter().copied().sum();
        let value = Tensor::new(vec![d.len()], e.into_iter().map(|v| v / z).collect())?;
        self.record("softmax", value, Op::Softmax(x), &[x])
    }

    /// Single element of a tensor (flat index) as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let Some(&v) = self.value(x).data().get(index) else {
            return Err(Error::shape("select", format!("index {index} out of {:?}", self.value(x).shape())));
        };
        self.record("select", Tensor::scalar(v), Op::Select { x, index }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.record("reshape", value, Op::Reshape(x), &[x])
    }

    /// Pushes the gradient `up` of node `i` onto its inputs.
    pub(super) fn backprop(&self, i: usize, up: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, k, geom, depthwise } => {
                let (dx, dk) = conv::backward(geom, *depthwise, val(*x), val(*k), up, rg(*x), rg(*k));
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dk) = dk {
                    accumulate(grads, *k, dk);
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if rg(*a) {
                    let bd = val(*b);
                    let mut da = vec![T::zero(); m * k];
                    for r in 0..m {
                        for p in 0..k {
                            da[r * k + p] = up[r * n..(r + 1) * n]
                                .iter()
                                .zip(&bd[p * n..(p + 1) * n])
                                .map(|(&u, &bv)| u * bv)
                                .sum();
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if rg(*b) {
                    let ad = val(*a);
                    let mut db = vec![T::zero(); k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let av = ad[r * k + p];
                            for (d, &u) in db[p * n..(p + 1) * n].iter_mut().zip(&up[r * n..(r + 1) * n]) {
                                *d += av * u;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, up.to_vec());
                }
                if rg(*b) {
                    accumulate(grads, *b, up.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, up.to_vec());
                }
                if rg(*b) {
                    accumulate(grads, *b, up.iter().map(|&u| -u).collect());
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, up.iter().zip(val(*b)).map(|(&u, &v)| u * v).collect());
                }
                if rg(*b) {
                    accumulate(grads, *b, up.iter().zip(val(*a)).map(|(&u, &v)| u * v).collect());
                }
            }
            Op::Scale { x, s } => {
                if rg(*x) {
                    let sv = val(*s)[0];
                    accumulate(grads, *x, up.iter().map(|&u| u * sv).collect());
                }
                if rg(*s) {
                    let ds: T = up.iter().zip(val(*x)).map(|(&u, &v)| u * v).sum();
                    accumulate(grads, *s, vec![ds]);
                }
            }
            Op::Affine { x, a } => {
                accumulate(grads, *x, up.iter().map(|&u| u * *a).collect());
            }
            Op::ChannelBias { x, b } => {
                if rg(*x) {
                    accumulate(grads, *x, up.to_vec());
                }
                if rg(*b) {
                    let [_, c, h, w] = self.nodes[x.0].value.nchw("add_channel_bias").expect("recorded shape");
                    let mut db = vec![T::zero(); c];
                    for (p, plane) in up.chunks(h * w).enumerate() {
                        db[p % c] += plane.iter().copied().sum::<T>();
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::RowBias { x, b } => {
                if rg(*x) {
                    accumulate(grads, *x, up.to_vec());
                }
                if rg(*b) {
                    let f = val(*b).len();
                    let mut db = vec![T::zero(); f];
                    for row in up.chunks(f) {
                        db.iter_mut().zip(row).for_each(|(d, &u)| *d += u);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::MulChannels { x, gate } => {
                let [_, _, h, w] = self.nodes[x.0].value.nchw("mul_channels").expect("recorded shape");
                let hw = h * w;
                if rg(*x) {
                    let gd = val(*gate);
                    let mut dx = up.to_vec();
                    for (plane, &gv) in dx.chunks_mut(hw).zip(gd) {
                        plane.iter_mut().for_each(|v| *v *= gv);
                    }
                    accumulate(grads, *x, dx);
                }
                if rg(*gate) {
                    let dg = up
                        .chunks(hw)
                        .zip(val(*x).chunks(hw))
                        .map(|(u, xv)| u.iter().zip(xv).map(|(&a, &b)| a * b).sum())
                        .collect();
                    accumulate(grads, *gate, dg);
                }
            }
            Op::Relu6(x) => {
                let six = T::lit(6.0);
                let dx = up
                    .iter()
                    .zip(val(*x))
                    .map(|(&u, &v)| if v > T::zero() && v < six { u } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = up
                    .iter()
                    .zip(node.value.data())
                    .map(|(&u, &s)| u * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Log(x) => {
                accumulate(grads, *x, up.iter().zip(val(*x)).map(|(&u, &v)| u / v).collect());
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.nodes[x.0].value.nchw("global_avg_pool").expect("recorded shape");
                let inv = T::one() / T::count(h * w);
                let mut dx = Vec::with_capacity(up.len() * h * w);
                for &u in up {
                    dx.extend(std::iter::repeat_n(u * inv, h * w));
                }
                accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = self.nodes[x.0].value.nchw("batchnorm").expect("recorded shape");
                let hw = h * w;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for (i, (&u, &xh)) in up.iter().zip(xhat).enumerate() {
                    let ch = (i / hw) % c;
                    dbeta[ch] += u;
                    dgamma[ch] += u * xh;
                }
                if rg(*x) {
                    let gd = val(*gamma);
                    let count = T::count(n * hw);
                    let dx = up
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(i, (&u, &xh))| {
                            let ch = (i / hw) % c;
                            if *batch_stats {
                                gd[ch] * inv_std[ch] / count * (count * u - dbeta[ch] - xh * dgamma[ch])
                            } else {
                                gd[ch] * inv_std[ch] * u
                            }
                        })
                        .collect();
                    accumulate(grads, *x, dx);
                }
                if rg(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if rg(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Mask { x, mask } => {
                let dx = up
                    .iter()
                    .zip(mask.bits())
                    .map(|(&u, &b)| if b { u } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::GroupLasso { x, mask } => {
                let scale = T::lit(2.0) * up[0] / T::count(mask.count());
                let dx = val(*x)
                    .iter()
                    .zip(mask.bits())
                    .map(|(&v, &b)| if b { scale * v } else { T::zero() })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let s = up[0] / T::count(n);
                let mut d: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= s;
                }
                accumulate(grads, *logits, d);
            }
            Op::Gate { x, t, kind } => {
                let (dx, dt) = match kind {
                    GateKind::Hard => (T::zero(), T::zero()),
                    GateKind::StraightThrough => (up[0], -up[0]),
                    GateKind::Sigmoid { beta } => {
                        let s = node.value.item();
                        let d = up[0] * T::lit(*beta) * s * (T::one() - s);
                        (d, -d)
                    }
                };
                if rg(*x) {
                    accumulate(grads, *x, vec![dx]);
                }
                if rg(*t) {
                    accumulate(grads, *t, vec![dt]);
                }
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let dot: T = up.iter().zip(p).map(|(&u, &pv)| u * pv).sum();
                accumulate(grads, *x, up.iter().zip(p).map(|(&u, &pv)| pv * (u - dot)).collect());
            }
            Op::Select { x, index } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                dx[*index] = up[0];
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![up[0]; val(*x).len()]);
            }
            Op::Reshape(x) => accumulate(grads, *x, up.to_vec()),
        }
    }
}
