use super::kernels::{
    batch_major_to_channel_major, channel_major_to_batch_major, col2im, gemm, im2col, ConvGeom,
};
use super::params::BnStats;
use super::{dim_err, Element, EngineError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Train/eval switch for batch normalization and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of [`Tape::batch_norm2d`]. `stats` carries the batch mean and
/// unbiased variance in train mode so the caller can fold them into the
/// running estimates.
#[derive(Debug)]
pub struct BatchNormOut<T = f32> {
    pub out: Var,
    pub stats: Option<BnStats<T>>,
}

enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, k: Var, geom: ConvGeom, batch: usize, cols: Option<Vec<T>> },
    Deconv2d { x: Var, k: Var, b: Option<Var>, geom: ConvGeom, batch: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    LogSoftmax(Var),
    Dropout { x: Var, mask: Vec<T> },
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    ClampLog { x: Var, min: T },
    Square(Var),
    Exp(Var),
    Affine { x: Var, scale: T },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Mean(Var),
    Sum(Var),
}

/// Records a forward computation in topological order and replays it in
/// reverse to produce gradients.
pub struct Tape<T = f32> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    requires: Vec<bool>,
    ops: Vec<Op<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self { values: Vec::new(), grads: Vec::new(), requires: Vec::new(), ops: Vec::new() }
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        self.ops.push(Op::Leaf);
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Accumulated gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite(name));
        }
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Ok(Var(self.values.len() - 1))
    }

    /// `out[b,o] = Σ_i x[b,i]·w[i,o] + bias[o]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, EngineError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(dim_err("linear", format!("input {xs:?} against weight {ws:?}")));
        }
        let (batch, inner, outer) = (xs[0], xs[1], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [outer] {
                return Err(dim_err("linear", format!("bias {:?} for {outer} outputs", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); batch * outer];
        gemm(batch, inner, outer, self.value(x).data(), false, self.value(w).data(), false, &mut out, false);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(outer) {
                row.iter_mut().zip(bd).for_each(|(o, b)| *o += *b);
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        self.push(Tensor::new(vec![batch, outer], out)?, Op::Linear { x, w, b: bias }, &inputs, "linear")
    }

    /// Zero-padded strided cross-correlation without bias. `k` is
    /// `[out_channels, in_channels, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, EngineError> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(dim_err("conv2d", format!("input {xs:?} against kernel {ks:?}")));
        }
        if stride == 0 {
            return Err(EngineError::Parameter("conv2d stride must be positive".into()));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(dim_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let cols = im2col(self.value(x).data(), batch, &geom);
        let n = batch * geom.out_len();
        let mut out_cm = vec![T::zero(); cout * n];
        gemm(cout, geom.rows(), n, self.value(k).data(), false, &cols, false, &mut out_cm, false);
        let out = channel_major_to_batch_major(&out_cm, batch, cout, geom.out_len());
        let keep_cols = self.requires[k.0];
        let value = Tensor::new(vec![batch, cout, geom.out_h, geom.out_w], out)?;
        self.push(
            value,
            Op::Conv2d { x, k, geom, batch, cols: keep_cols.then_some(cols) },
            &[x, k],
            "conv2d",
        )
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`] with the same
    /// stride and padding. `k` is `[in_channels, out_channels, kh, kw]`; the
    /// output extent is `(H−1)·stride − 2·pad + kh`.
    pub fn deconv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, EngineError> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[0] {
            return Err(dim_err("deconv2d", format!("input {xs:?} against kernel {ks:?}")));
        }
        if stride == 0 {
            return Err(EngineError::Parameter("deconv2d stride must be positive".into()));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ks[1], ks[2], ks[3]);
        let out_h = ((h - 1) * stride + kh) as isize - 2 * pad as isize;
        let out_w = ((w - 1) * stride + kw) as isize - 2 * pad as isize;
        if out_h <= 0 || out_w <= 0 {
            return Err(dim_err("deconv2d", format!("computed output extent {out_h}x{out_w}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(dim_err("deconv2d", format!("bias {:?} for {cout} channels", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            channels: cout,
            height: out_h as usize,
            width: out_w as usize,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let x_cm = batch_major_to_channel_major(self.value(x).data(), batch, cin, h * w);
        let n = batch * h * w;
        let mut cols = vec![T::zero(); geom.rows() * n];
        gemm(geom.rows(), cin, n, self.value(k).data(), true, &x_cm, false, &mut cols, false);
        let mut out = vec![T::zero(); batch * cout * geom.in_len()];
        col2im(&cols, batch, &geom, &mut out);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for (i, plane) in out.chunks_mut(geom.in_len()).enumerate() {
                let bv = bd[i % cout];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(vec![batch, cout, geom.height, geom.width], out)?;
        let inputs: Vec<Var> = [Some(x), Some(k), bias].into_iter().flatten().collect();
        self.push(value, Op::Deconv2d { x, k, b: bias, geom, batch }, &inputs, "deconv2d")
    }

    /// Per-channel batch normalization over `[B, C]` or `[B, C, H, W]`.
    ///
    /// In train mode the batch statistics are used and returned; in eval mode
    /// `running` (mean, variance) is used instead.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: (&[T], &[T]),
        eps: T,
    ) -> Result<BatchNormOut<T>, EngineError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 && xs.len() != 4 {
            return Err(dim_err("batch_norm2d", format!("expected rank 2 or 4, got {xs:?}")));
        }
        let (batch, c) = (xs[0], xs[1]);
        let l: usize = xs[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err("batch_norm2d", format!("affine parameters must be [{c}]")));
        }
        let n = batch * l;
        let xd = self.value(x).data();
        let (mean, var, stats) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(EngineError::DegenerateBatch("batch_norm2d"));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..batch {
                        s += xd[(b * c + ch) * l..][..l].iter().map(|&v| f(v)).sum::<f64>();
                    }
                    let m = s / n as f64;
                    let mut q = 0.0f64;
                    for b in 0..batch {
                        q += xd[(b * c + ch) * l..][..l].iter().map(|&v| (f(v) - m).powi(2)).sum::<f64>();
                    }
                    mean[ch] = T::of(m);
                    var[ch] = T::of(q / n as f64);
                }
                let unbiased = var.iter().map(|&v| T::of(f(v) * n as f64 / (n - 1) as f64)).collect();
                let stats = BnStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            Mode::Eval => {
                let (rm, rv) = running;
                if rm.len() != c || rv.len() != c {
                    return Err(dim_err("batch_norm2d", format!("running statistics must be [{c}]")));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                for i in off..off + l {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let op = Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats: mode == Mode::Train };
        let out = self.push(Tensor::new(xs, out)?, op, &[x, gamma, beta], "batch_norm2d")?;
        Ok(BatchNormOut { out, stats })
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>, name: &'static str) -> Result<Var, EngineError> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, op, &[x], name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(x, |a| a.max(T::zero()), Op::Relu(x), "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, EngineError> {
        self.unary(x, |a| if a > T::zero() { a } else { slope * a }, Op::LeakyRelu(x, slope), "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, EngineError> {
        let v = self.value(x);
        let width = *v.shape().last().expect("rank >= 1");
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + T::of(row.iter().map(|&a| f(a - max).exp()).sum::<f64>().ln());
            row.iter_mut().for_each(|a| *a -= lse);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push(t, Op::LogSoftmax(x), &[x], "log_softmax")
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut impl rand::Rng) -> Result<Var, EngineError> {
        if !(0.0..1.0).contains(&p) {
            return Err(EngineError::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return self.reshape(x, self.shape(x).to_vec());
        }
        let scale = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(x).numel()).map(|_| if rng.random::<f64>() < p { T::zero() } else { scale }).collect();
        self.dropout_with_mask(x, mask)
    }

    /// Applies a precomputed (already scaled) dropout mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var, EngineError> {
        let v = self.value(x);
        if mask.len() != v.numel() {
            return Err(dim_err("dropout", format!("mask of {} for {} values", mask.len(), v.numel())));
        }
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { x, mask }, &[x], "dropout")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, EngineError> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    /// Columns `start..end` of a `[B, C]` tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, EngineError> {
        let s = self.shape(x);
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(dim_err("slice_cols", format!("columns {start}..{end} of {s:?}")));
        }
        let (rows, width) = (s[0], s[1]);
        let data: Vec<T> =
            self.value(x).data().chunks(width).flat_map(|r| r[start..end].iter().copied()).collect();
        let t = Tensor::new(vec![rows, end - start], data)?;
        self.push(t, Op::SliceCols { x, start }, &[x], "slice_cols")
    }

    /// Picks `x[b, idx[b]]` from a `[B, C]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, EngineError> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != idx.len() || idx.iter().any(|&i| i >= s[1]) {
            return Err(dim_err("gather", format!("{} indices into {s:?}", idx.len())));
        }
        let width = s[1];
        let data = idx.iter().enumerate().map(|(b, &i)| self.value(x).data()[b * width + i]).collect();
        let t = Tensor::new(vec![idx.len()], data)?;
        self.push(t, Op::Gather { x, idx: idx.to_vec() }, &[x], "gather")
    }

    /// `ln(max(x, min))`; the gradient is zero where the clamp is active.
    pub fn clamp_log(&mut self, x: Var, min: T) -> Result<Var, EngineError> {
        self.unary(x, |a| a.max(min).ln(), Op::ClampLog { x, min }, "clamp_log")
    }

    pub fn square(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(x, |a| a * a, Op::Square(x), "square")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, EngineError> {
        self.unary(x, |a| a.exp(), Op::Exp(x), "exp")
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var, EngineError> {
        self.unary(x, |a| scale * a + shift, Op::Affine { x, scale }, "affine")
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, name: &'static str) -> Result<Var, EngineError> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(name, format!("{:?} against {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, EngineError> {
        let v = self.value(x);
        let m = v.data().iter().map(|&a| f(a)).sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(T::of(m)), Op::Mean(x), &[x], "mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, EngineError> {
        let s = self.value(x).data().iter().map(|&a| f(a)).sum::<f64>();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(x), &[x], "sum")
    }

    /// Accumulates `∂loss/∂leaf` into every leaf that requires a gradient.
    /// Repeated calls add to leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), EngineError> {
        if self.value(loss).numel() != 1 {
            return Err(EngineError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires[loss.0] {
            return Err(EngineError::Contract("loss does not depend on any gradient-carrying leaf".into()));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if !matches!(op, Op::Leaf) {
                self.grads[i] = None;
            }
        }
        accum(&mut self.grads, &self.requires, loss, &[T::one()]);
        let (values, ops, requires) = (&self.values, &self.ops, &self.requires);
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            if !requires[i] || matches!(ops[i], Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| values[v.0].data();
            let needs = |v: Var| requires[v.0];
            match &ops[i] {
                Op::Leaf => unreachable!(),
                Op::Linear { x, w, b } => {
                    let (batch, inner) = (values[x.0].shape()[0], values[x.0].shape()[1]);
                    let outer = values[w.0].shape()[1];
                    if needs(*x) {
                        let mut dx = vec![T::zero(); batch * inner];
                        gemm(batch, outer, inner, &g, false, val(*w), true, &mut dx, false);
                        accum_owned(grads, requires, *x, dx);
                    }
                    if needs(*w) {
                        let mut dw = vec![T::zero(); inner * outer];
                        gemm(inner, batch, outer, val(*x), true, &g, false, &mut dw, false);
                        accum_owned(grads, requires, *w, dw);
                    }
                    if let Some(b) = b.filter(|b| needs(*b)) {
                        let mut db = vec![T::zero(); outer];
                        for row in g.chunks(outer) {
                            db.iter_mut().zip(row).for_each(|(d, r)| *d += *r);
                        }
                        accum_owned(grads, requires, b, db);
                    }
                }
                Op::Conv2d { x, k, geom, batch, cols } => {
                    let cout = values[k.0].shape()[0];
                    let n = batch * geom.out_len();
                    let g_cm = batch_major_to_channel_major(&g, *batch, cout, geom.out_len());
                    if needs(*k) {
                        let cols = cols.as_ref().expect("columns saved when kernel needs a gradient");
                        let mut dk = vec![T::zero(); cout * geom.rows()];
                        gemm(cout, n, geom.rows(), &g_cm, false, cols, true, &mut dk, false);
                        accum_owned(grads, requires, *k, dk);
                    }
                    if needs(*x) {
                        let mut dcols = vec![T::zero(); geom.rows() * n];
                        gemm(geom.rows(), cout, n, val(*k), true, &g_cm, false, &mut dcols, false);
                        let mut dx = vec![T::zero(); values[x.0].numel()];
                        col2im(&dcols, *batch, geom, &mut dx);
                        accum_owned(grads, requires, *x, dx);
                    }
                }
                Op::Deconv2d { x, k, b, geom, batch } => {
                    let cin = values[x.0].shape()[1];
                    let lin = geom.out_len();
                    let n = batch * lin;
                    let dcols = im2col(&g, *batch, geom);
                    if needs(*x) {
                        let mut dx_cm = vec![T::zero(); cin * n];
                        gemm(cin, geom.rows(), n, val(*k), false, &dcols, false, &mut dx_cm, false);
                        let dx = channel_major_to_batch_major(&dx_cm, *batch, cin, lin);
                        accum_owned(grads, requires, *x, dx);
                    }
                    if needs(*k) {
                        let x_cm = batch_major_to_channel_major(val(*x), *batch, cin, lin);
                        let mut dk = vec![T::zero(); cin * geom.rows()];
                        gemm(cin, n, geom.rows(), &x_cm, false, &dcols, true, &mut dk, false);
                        accum_owned(grads, requires, *k, dk);
                    }
                    if let Some(b) = b.filter(|b| needs(*b)) {
                        let cout = geom.channels;
                        let mut db = vec![T::zero(); cout];
                        for (j, plane) in g.chunks(geom.in_len()).enumerate() {
                            db[j % cout] += T::of(plane.iter().map(|&v| f(v)).sum::<f64>());
                        }
                        accum_owned(grads, requires, b, db);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let s = values[x.0].shape();
                    let (batch, c) = (s[0], s[1]);
                    let l: usize = s[2..].iter().product();
                    let n = (batch * l) as f64;
                    let mut sum_g = vec![0.0f64; c];
                    let mut sum_gx = vec![0.0f64; c];
                    for b in 0..batch {
                        for ch in 0..c {
                            let off = (b * c + ch) * l;
                            for idx in off..off + l {
                                sum_g[ch] += f(g[idx]);
                                sum_gx[ch] += f(g[idx] * xhat[idx]);
                            }
                        }
                    }
                    if needs(*x) {
                        let gd = val(*gamma);
                        let mut dx = vec![T::zero(); g.len()];
                        for b in 0..batch {
                            for ch in 0..c {
                                let off = (b * c + ch) * l;
                                let scale = gd[ch] * inv_std[ch];
                                for idx in off..off + l {
                                    dx[idx] = if *batch_stats {
                                        let t = n * f(g[idx]) - sum_g[ch] - f(xhat[idx]) * sum_gx[ch];
                                        T::of(f(scale) * t / n)
                                    } else {
                                        scale * g[idx]
                                    };
                                }
                            }
                        }
                        accum_owned(grads, requires, *x, dx);
                    }
                    if needs(*gamma) {
                        accum_owned(grads, requires, *gamma, sum_gx.iter().map(|&v| T::of(v)).collect());
                    }
                    if needs(*beta) {
                        accum_owned(grads, requires, *beta, sum_g.iter().map(|&v| T::of(v)).collect());
                    }
                }
                Op::Relu(x) => {
                    let dx = g.iter().zip(val(*x)).map(|(&g, &a)| if a > T::zero() { g } else { T::zero() }).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let dx = g.iter().zip(val(*x)).map(|(&g, &a)| if a > T::zero() { g } else { *slope * g }).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = values[i].data();
                    let dx = g.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::LogSoftmax(x) => {
                    let y = values[i].data();
                    let width = *values[i].shape().last().expect("rank >= 1");
                    let mut dx = vec![T::zero(); g.len()];
                    for ((dr, gr), yr) in dx.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let s: f64 = gr.iter().map(|&v| f(v)).sum();
                        for ((d, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = gv - T::of(f(yv.exp()) * s);
                        }
                    }
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Reshape(x) => accum_owned(grads, requires, *x, g),
                Op::SliceCols { x, start } => {
                    let width = values[x.0].shape()[1];
                    let part = values[i].shape()[1];
                    let mut dx = vec![T::zero(); values[x.0].numel()];
                    for (dr, gr) in dx.chunks_mut(width).zip(g.chunks(part)) {
                        dr[*start..*start + part].copy_from_slice(gr);
                    }
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Gather { x, idx } => {
                    let width = values[x.0].shape()[1];
                    let mut dx = vec![T::zero(); values[x.0].numel()];
                    for (b, &j) in idx.iter().enumerate() {
                        dx[b * width + j] = g[b];
                    }
                    accum_owned(grads, requires, *x, dx);
                }
                Op::ClampLog { x, min } => {
                    let dx = g.iter().zip(val(*x)).map(|(&g, &a)| if a > *min { g / a } else { T::zero() }).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Square(x) => {
                    let dx = g.iter().zip(val(*x)).map(|(&g, &a)| (a + a) * g).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Exp(x) => {
                    let dx = g.iter().zip(values[i].data()).map(|(&g, &y)| g * y).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Affine { x, scale } => {
                    let dx = g.iter().map(|&g| *scale * g).collect();
                    accum_owned(grads, requires, *x, dx);
                }
                Op::Add(a, b) => {
                    accum(grads, requires, *a, &g);
                    accum_owned(grads, requires, *b, g);
                }
                Op::Sub(a, b) => {
                    accum(grads, requires, *a, &g);
                    accum_owned(grads, requires, *b, g.iter().map(|&v| -v).collect());
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(val(*b)).map(|(&g, &y)| g * y).collect();
                    let db = g.iter().zip(val(*a)).map(|(&g, &x)| g * x).collect();
                    accum_owned(grads, requires, *a, da);
                    accum_owned(grads, requires, *b, db);
                }
                Op::Mean(x) => {
                    let n = values[x.0].numel();
                    accum_owned(grads, requires, *x, vec![g[0] / T::of(n as f64); n]);
                }
                Op::Sum(x) => {
                    let n = values[x.0].numel();
                    accum_owned(grads, requires, *x, vec![g[0]; n]);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Element>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn f<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn accum<T: Element>(grads: &mut [Option<Vec<T>>], requires: &[bool], v: Var, g: &[T]) {
    if !requires[v.0] {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accum_owned<T: Element>(grads: &mut [Option<Vec<T>>], requires: &[bool], v: Var, g: Vec<T>) {
    if !requires[v.0] {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        slot @ None => *slot = Some(g),
    }
}
