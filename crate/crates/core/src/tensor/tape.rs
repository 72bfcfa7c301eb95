//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so inputs always precede their consumers and a reverse
//! sweep visits them in a valid order.

use std::rc::Rc;

use rustfft::num_complex::Complex;

use super::conv::{self, ConvGeom, Padding};
use super::fft::apply_spectral_filter;
use super::resample::{Interpolation, Resample2d};
use super::{Real, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary<T> {
    Relu,
    LeakyRelu(T),
    ClipMin1,
    Abs,
    Square,
    Sqrt,
    Scale(T),
    Shift,
}

enum Op<T: Real> {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary<T>, Var),
    Concat(Vec<Var>),
    SliceChannels { input: Var, start: usize },
    Reshape(Var),
    Pad(Var, Padding),
    Conv { input: Var, weight: Var, geom: ConvGeom },
    Resample(Var, Box<Resample2d>),
    UpsampleNearest(Var),
    Spectral(Var, Rc<Vec<Vec<Complex<T>>>>),
    Sum(Var),
    Mean(Var),
    MeanAbs(Var),
    Tv(Var),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Recorded computation; confined to one thread.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            _ if da == db => da,
            (1, d) | (d, 1) => d,
            _ => {
                return Err(dim_err!(
                    "shapes {:?} and {:?} are not broadcast-compatible",
                    a,
                    b
                ))
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` laid against `out`, with 0 for broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Source offsets of every output element under broadcasting.
fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let numel: usize = out.iter().product();
    let mut idx = vec![0usize; out.len()];
    let mut offsets = Vec::with_capacity(numel);
    let mut off = 0usize;
    for _ in 0..numel {
        offsets.push(off);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    offsets
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert!(
            value.is_finite() || !inputs.iter().all(|v| self.value(*v).is_finite()),
            "non-finite output from finite inputs"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
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

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn dims4(&self, v: Var) -> Result<(usize, usize, usize, usize)> {
        self.value(v).dims4()
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(va.shape(), data)?
        } else {
            let shape = broadcast_shape(va.shape(), vb.shape())?;
            let ia = broadcast_index(va.shape(), &shape);
            let ib = broadcast_index(vb.shape(), &shape);
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| f(va.data()[i], vb.data()[j]))
                .collect();
            Tensor::new(&shape, data)?
        };
        Ok(self.push(value, Op::Binary(kind, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary<T>, a: Var, shift: T) -> Var {
        let value = self.value(a).map(|x| match kind {
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * s
                }
            }
            Unary::ClipMin1 => x.min(T::one()),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Scale(s) => x * s,
            Unary::Shift => x + shift,
        });
        self.push(value, Op::Unary(kind, a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a, T::zero())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(Unary::LeakyRelu(slope), a, T::zero())
    }

    /// `min(v, 1)`, the sensor saturation nonlinearity.
    pub fn clip_min1(&mut self, a: Var) -> Var {
        self.unary(Unary::ClipMin1, a, T::zero())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a, T::zero())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a, T::zero())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a, T::zero())
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Var {
        self.unary(Unary::Scale(s), a, T::zero())
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(Unary::Shift, a, s)
    }

    // ---- structural -------------------------------------------------------

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let (b, _, h, w) = self.dims4(first)?;
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.dims4(p)?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(dim_err!(
                    "concat extents mismatch: {:?} vs {:?}",
                    self.shape(p),
                    self.shape(first)
                ));
            }
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for &p in parts {
                let c = self.shape(p)[1];
                let src = self.value(p).data();
                data.extend_from_slice(&src[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[b, channels, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        if start + len > c || len == 0 {
            return Err(dim_err!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            ));
        }
        let plane = h * w;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let base = (bi * c + start) * plane;
            data.extend_from_slice(&src[base..base + len * plane]);
        }
        let value = Tensor::new(&[b, len, h, w], data)?;
        Ok(self.push(value, Op::SliceChannels { input: a, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn pad(&mut self, a: Var, padding: Padding) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        conv::check_padding(h, w, padding)?;
        let p = padding.size();
        let data = conv::pad_forward(self.value(a).data(), b * c, h, w, padding);
        let value = Tensor::new(&[b, c, h + 2 * p, w + 2 * p], data)?;
        Ok(self.push(value, Op::Pad(a, padding), &[a]))
    }

    /// Cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, padding: Padding) -> Result<Var> {
        let input = if padding.size() > 0 {
            self.pad(input, padding)?
        } else {
            input
        };
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride)?;
        let data = conv::conv_forward(&geom, self.value(input).data(), self.value(weight).data());
        let value = Tensor::new(&geom.out_shape(), data)?;
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                geom,
            },
            &[input, weight],
        ))
    }

    /// Resample by 0.5 or 2.0 along both spatial axes.
    pub fn resample(&mut self, a: Var, scale: f64, method: Interpolation) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        let op = Resample2d::new(h, w, scale, method)?;
        let data = op.forward(self.value(a).data(), b * c);
        let value = Tensor::new(&[b, c, op.rows.out_len, op.cols.out_len], data)?;
        Ok(self.push(value, Op::Resample(a, Box::new(op)), &[a]))
    }

    pub fn resample_bicubic(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.resample(a, scale, Interpolation::Bicubic)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample_nearest(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        let src = self.value(a).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut data = vec![T::zero(); b * c * h2 * w2];
        for (s, d) in src.chunks(h * w).zip(data.chunks_mut(h2 * w2)) {
            for y in 0..h2 {
                for x in 0..w2 {
                    d[y * w2 + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let value = Tensor::new(&[b, c, h2, w2], data)?;
        Ok(self.push(value, Op::UpsampleNearest(a), &[a]))
    }

    /// Per-item linear filter in the Fourier domain: each `H×W` plane of batch
    /// item `i` becomes `Re F⁻¹(spectra[i] ⊙ F(plane))`. The spectra are
    /// constants; the adjoint applies their conjugates.
    pub fn spectral_filter(&mut self, a: Var, spectra: Rc<Vec<Vec<Complex<T>>>>) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        if spectra.len() != b || spectra.iter().any(|s| s.len() != h * w) {
            return Err(contract_err!(
                "spectral filter needs {b} spectra of {h}x{w}, got {} (first len {:?})",
                spectra.len(),
                spectra.first().map(Vec::len)
            ));
        }
        let data = apply_spectral_filter(self.value(a).data(), h, w, c, &spectra, false);
        let value = Tensor::new(&[b, c, h, w], data)?;
        Ok(self.push(value, Op::Spectral(a, spectra), &[a]))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        self.push(value, Op::Mean(a), &[a])
    }

    /// Mean absolute value.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().map(|x| x.abs()).sum();
        let value = Tensor::scalar(s / T::of(v.numel() as f64));
        self.push(value, Op::MeanAbs(a), &[a])
    }

    /// Sum of absolute values.
    pub fn abs_sum(&mut self, a: Var) -> Var {
        let abs = self.abs(a);
        self.sum(abs)
    }

    /// Anisotropic total variation: the mean of `|∂h x|` and `|∂v x|` pooled
    /// over all forward differences (last row/column excluded).
    pub fn tv(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.dims4(a)?;
        let count = b * c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
        let mut acc = T::zero();
        for plane in self.value(a).data().chunks(h * w) {
            for y in 0..h {
                for x in 0..w {
                    let v = plane[y * w + x];
                    if x + 1 < w {
                        acc = acc + (plane[y * w + x + 1] - v).abs();
                    }
                    if y + 1 < h {
                        acc = acc + (plane[(y + 1) * w + x] - v).abs();
                    }
                }
            }
        }
        let value = if count == 0 {
            T::zero()
        } else {
            acc / T::of(count as f64)
        };
        Ok(self.push(Tensor::scalar(value), Op::Tv(a), &[a]))
    }

    // ---- backward ---------------------------------------------------------

    /// Clear gradients so [`Tape::backward`] may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Populate gradients of every trainable leaf with respect to `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(contract_err!(
                "backward already ran on this tape; call reset_grads first"
            ));
        }
        if self.nodes.is_empty() {
            return Err(contract_err!("backward on an empty tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::new(&shape, g)?);
                continue;
            }
            for (input, contribution) in self.node_backward(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match grads[input.0].as_mut() {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a = *a + *c;
                        }
                    }
                    None => grads[input.0] = Some(contribution),
                }
            }
        }
        for n in &mut self.nodes {
            if n.requires_grad && matches!(n.op, Op::Leaf) && n.grad.is_none() {
                n.grad = Some(Tensor::zeros(n.value.shape()));
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let shape = node.value.shape();
                let same = va.shape() == shape && vb.shape() == shape;
                let (ia, ib) = if same {
                    (Vec::new(), Vec::new())
                } else {
                    (
                        broadcast_index(va.shape(), shape),
                        broadcast_index(vb.shape(), shape),
                    )
                };
                let at = |idx: &Vec<usize>, k: usize| if same { k } else { idx[k] };
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); va.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        let (ja, jb) = (at(&ia, k), at(&ib, k));
                        let d = match kind {
                            Binary::Add | Binary::Sub => gk,
                            Binary::Mul => gk * vb.data()[jb],
                            Binary::Div => gk / vb.data()[jb],
                        };
                        ga[ja] = ga[ja] + d;
                    }
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); vb.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        let (ja, jb) = (at(&ia, k), at(&ib, k));
                        let d = match kind {
                            Binary::Add => gk,
                            Binary::Sub => -gk,
                            Binary::Mul => gk * va.data()[ja],
                            Binary::Div => {
                                let y = vb.data()[jb];
                                -gk * va.data()[ja] / (y * y)
                            }
                        };
                        gb[jb] = gb[jb] + d;
                    }
                    out.push((*b, gb));
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let two = T::of(2.0);
                let half = T::of(0.5);
                let ga: Vec<T> = g
                    .iter()
                    .enumerate()
                    .map(|(k, &gk)| match kind {
                        Unary::Relu => {
                            if x[k] > T::zero() {
                                gk
                            } else {
                                T::zero()
                            }
                        }
                        Unary::LeakyRelu(s) => {
                            if x[k] > T::zero() {
                                gk
                            } else {
                                gk * *s
                            }
                        }
                        Unary::ClipMin1 => {
                            if x[k] <= T::one() {
                                gk
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Abs => {
                            if x[k] > T::zero() {
                                gk
                            } else if x[k] < T::zero() {
                                -gk
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Square => gk * two * x[k],
                        Unary::Sqrt => {
                            if y[k] > T::zero() {
                                gk * half / y[k]
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Scale(s) => gk * *s,
                        Unary::Shift => gk,
                    })
                    .collect();
                out.push((*a, ga));
            }
            Op::Concat(parts) => {
                let (b, _, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                let channels: usize = node.value.shape()[1];
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut gp = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            let base = (bi * channels + offset) * plane;
                            gp.extend_from_slice(&g[base..base + c * plane]);
                        }
                        out.push((p, gp));
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { input, start } => {
                let (b, c, h, w) = self.dims4(*input)?;
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut ga = vec![T::zero(); b * c * plane];
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    ga[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                out.push((*input, ga));
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Pad(a, padding) => {
                let (b, c, h, w) = self.dims4(*a)?;
                out.push((*a, conv::pad_backward(g, b * c, h, w, *padding)));
            }
            Op::Conv {
                input,
                weight,
                geom,
            } => {
                let (dx, dw) = conv::conv_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    self.wants(*input),
                    self.wants(*weight),
                );
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if let Some(dw) = dw {
                    out.push((*weight, dw));
                }
            }
            Op::Resample(a, op) => {
                let (b, c, _, _) = self.dims4(*a)?;
                out.push((*a, op.backward(g, b * c)));
            }
            Op::UpsampleNearest(a) => {
                let (_, _, h, w) = self.dims4(*a)?;
                let (h2, w2) = (2 * h, 2 * w);
                let mut ga = vec![T::zero(); self.value(*a).numel()];
                for (s, d) in g.chunks(h2 * w2).zip(ga.chunks_mut(h * w)) {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            let idx = (y / 2) * w + x / 2;
                            d[idx] = d[idx] + s[y * w2 + x];
                        }
                    }
                }
                out.push((*a, ga));
            }
            Op::Spectral(a, spectra) => {
                let (_, c, h, w) = self.dims4(*a)?;
                out.push((*a, apply_spectral_filter(g, h, w, c, spectra, true)));
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; self.value(*a).numel()])),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                out.push((*a, vec![g[0] / T::of(n as f64); n]));
            }
            Op::MeanAbs(a) => {
                let x = self.value(*a).data();
                let scale = g[0] / T::of(x.len() as f64);
                let ga = x
                    .iter()
                    .map(|&v| {
                        if v > T::zero() {
                            scale
                        } else if v < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                out.push((*a, ga));
            }
            Op::Tv(a) => {
                let (b, c, h, w) = self.dims4(*a)?;
                let count = b * c * (h * w.saturating_sub(1) + h.saturating_sub(1) * w);
                let mut ga = vec![T::zero(); b * c * h * w];
                if count > 0 {
                    let scale = g[0] / T::of(count as f64);
                    let sign = |d: T| {
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    };
                    for (plane, gp) in self.value(*a).data().chunks(h * w).zip(ga.chunks_mut(h * w)) {
                        for y in 0..h {
                            for x in 0..w {
                                let i0 = y * w + x;
                                if x + 1 < w {
                                    let s = sign(plane[i0 + 1] - plane[i0]);
                                    gp[i0 + 1] = gp[i0 + 1] + s;
                                    gp[i0] = gp[i0] - s;
                                }
                                if y + 1 < h {
                                    let s = sign(plane[i0 + w] - plane[i0]);
                                    gp[i0 + w] = gp[i0 + w] + s;
                                    gp[i0] = gp[i0] - s;
                                }
                            }
                        }
                    }
                }
                out.push((*a, ga));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 5.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.backward(s).is_err());
        tape.reset_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(crate::Error::Contract(_))
        ));
        let mut empty = Tape::<f64>::new();
        let mut other = Tape::<f64>::new();
        let v = other.constant(Tensor::scalar(1.0));
        assert!(empty.backward(v).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.leaf(t(&[2], &[3.0, 4.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn elementwise_semantics() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[-2.0, 3.0, 1.3, 0.5]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0, 1.3, 0.5]);
        let c = tape.clip_min1(x);
        assert_eq!(tape.value(c).data(), &[-2.0, 1.0, 1.0, 0.5]);
        let cc = tape.clip_min1(c);
        assert_eq!(tape.value(cc).data(), tape.value(c).data());
        let l = tape.leaky_relu(x, 0.2);
        assert_eq!(tape.value(l).data()[0], -0.4);
    }

    #[test]
    fn clip_gradient_is_indicator() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[-2.0, 1.0, 1.3, 0.5]));
        let c = tape.clip_min1(x);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcasting_add_and_grad() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t(&[3], &[10.0, 20.0, 30.0]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[10.0, 40.0, 90.0, 40.0, 100.0, 180.0]);
        let s = tape.sum(c);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(
            tape.grad(a).unwrap().data(),
            &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]
        );
        let bad = tape.constant(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.add(a, bad), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn concat_shape_contract() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3, 4, 4]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 16, 4, 4]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[2, 19, 4, 4]);
        let d = tape.constant(Tensor::<f64>::zeros(&[2, 1, 5, 4]));
        assert!(tape.concat_channels(&[a, d]).is_err());
    }

    #[test]
    fn tv_step_stencil() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[0.0, 1.0, 0.0, 1.0]));
        let v = tape.tv(x).unwrap();
        assert_eq!(tape.item(v), 0.5);
    }

    #[test]
    fn scalar_kernel_conv_doubles() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let w = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let y = tape.conv2d(x, w, 1, Padding::None).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn delta_kernel_conv_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 2, 5, 6], |i| (i as f64 * 0.7).sin()));
        let mut w = Tensor::zeros(&[2, 2, 3, 3]);
        w.data_mut()[4] = 1.0;
        w.data_mut()[9 + 9 + 9 + 4] = 1.0;
        let w = tape.constant(w);
        let y = tape.conv2d(x, w, 1, Padding::Symmetric(1)).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_padding_must_be_smaller_than_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 3]));
        assert!(tape.conv2d(x, w, 1, Padding::Zero(3)).is_err());
    }
}
