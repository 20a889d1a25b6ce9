use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};

use super::graph::{Op, Values};
use super::kernels::{self, split_axis, ConvGeom, ConvSpec};
use super::{Scalar, Tensor};

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn need_rank<T: Scalar>(t: &Tensor<T>, min: usize, what: &str) -> Result<()> {
    if t.shape().len() < min {
        return Err(Error::shape(format!(
            "{what} needs rank >= {min}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Tensor<T> {
        let v: Vec<T> = self.values().iter().map(|&x| f(x)).collect();
        self.graph().push(v, self.shape().to_vec(), op, &[self])
    }

    fn binary(&self, other: &Tensor<T>, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(self, other, what)?;
        let (a, b) = (self.values(), other.values());
        let v = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.graph().push(v, self.shape().to_vec(), op, &[self, other]))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary(Op::Scale(c), |x| x * c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(Op::AddScalar, |x| x + c)
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self).expect("a tensor always matches its own shape")
    }

    /// Square root. Its derivative is taken as zero where the value is zero.
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Op::Sqrt, |x| x.max(T::zero()).sqrt())
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        self.unary(Op::LeakyRelu(slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.values().iter().copied().sum();
        self.graph().push(vec![s], vec![], Op::SumAll, &[self])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_f64(self.numel().max(1) as f64);
        self.sum_all().scale(T::one() / n)
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "only one-element tensors broadcast, got {:?}",
                self.shape()
            )));
        }
        let n = shape.iter().product();
        Ok(self
            .graph()
            .push(vec![self.item(); n], shape.to_vec(), Op::BroadcastAll, &[self]))
    }

    /// Sums everything except the leading axis: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&self) -> Result<Tensor<T>> {
        need_rank(self, 1, "sum_per_sample")?;
        let n = self.shape()[0];
        let v = self.values();
        let per = if n == 0 { 0 } else { v.len() / n };
        let s = (0..n).map(|i| v[i * per..(i + 1) * per].iter().copied().sum()).collect();
        Ok(self.graph().push(s, vec![n], Op::SumPerSample, &[self]))
    }

    pub fn mean_per_sample(&self) -> Result<Tensor<T>> {
        let per = self.shape().get(1..).map_or(1, |s| s.iter().product::<usize>());
        Ok(self.sum_per_sample()?.scale(T::one() / T::from_f64(per.max(1) as f64)))
    }

    /// Inverse of [`Tensor::sum_per_sample`]'s reduction: `[N] -> shape`.
    pub fn broadcast_per_sample(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if self.shape().len() != 1 || shape.first() != Some(&self.shape()[0]) {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} per sample to {shape:?}",
                self.shape()
            )));
        }
        let n = shape[0];
        let per: usize = shape[1..].iter().product();
        let v = self.values();
        let out = (0..n * per).map(|i| v[i / per.max(1)]).collect();
        Ok(self
            .graph()
            .push(out, shape.to_vec(), Op::BroadcastPerSample, &[self]))
    }

    /// Adds a per-channel bias `[C]` to an `[N, C, ...]` tensor.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        need_rank(self, 2, "add_channel_bias")?;
        let (n, c, inner) = split_axis(self.shape(), 1);
        if bias.shape() != [c] {
            return Err(Error::shape(format!(
                "bias {:?} does not match {c} channels",
                bias.shape()
            )));
        }
        let (x, b) = (self.values(), bias.values());
        let mut v = x.as_ref().clone();
        for s in 0..n {
            for ch in 0..c {
                for e in &mut v[(s * c + ch) * inner..(s * c + ch + 1) * inner] {
                    *e = *e + b[ch];
                }
            }
        }
        Ok(self
            .graph()
            .push(v, self.shape().to_vec(), Op::AddChannelBias, &[self, bias]))
    }

    /// Sums an `[N, C, ...]` tensor to `[C]`.
    pub fn channel_sum(&self) -> Result<Tensor<T>> {
        need_rank(self, 2, "channel_sum")?;
        let (n, c, inner) = split_axis(self.shape(), 1);
        let x = self.values();
        let mut v = vec![T::zero(); c];
        for s in 0..n {
            for (ch, acc) in v.iter_mut().enumerate() {
                let part: T = x[(s * c + ch) * inner..(s * c + ch + 1) * inner].iter().copied().sum();
                *acc = *acc + part;
            }
        }
        Ok(self.graph().push(v, vec![c], Op::ChannelSum, &[self]))
    }

    /// Repeats `[C]` over an `[N, C, ...]` shape.
    pub fn broadcast_channel(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.len() < 2 || self.shape() != [shape[1]] {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} over channels of {shape:?}",
                self.shape()
            )));
        }
        let (n, c, inner) = split_axis(shape, 1);
        let b = self.values();
        let mut v = Vec::with_capacity(n * c * inner);
        for _ in 0..n {
            for &bc in b.iter() {
                v.extend(std::iter::repeat(bc).take(inner));
            }
        }
        Ok(self
            .graph()
            .push(v, shape.to_vec(), Op::BroadcastChannel, &[self]))
    }

    /// Multiplies each channel of `[N, C, ...]` by a constant factor.
    pub fn channel_scale(&self, scale: &[T]) -> Result<Tensor<T>> {
        self.channel_scale_shared(Rc::new(scale.to_vec()))
    }

    pub(crate) fn channel_scale_shared(&self, scale: Values<T>) -> Result<Tensor<T>> {
        need_rank(self, 2, "channel_scale")?;
        let (n, c, inner) = split_axis(self.shape(), 1);
        if scale.len() != c {
            return Err(Error::shape(format!("{} scales for {c} channels", scale.len())));
        }
        let x = self.values();
        let mut v = x.as_ref().clone();
        for s in 0..n {
            for ch in 0..c {
                for e in &mut v[(s * c + ch) * inner..(s * c + ch + 1) * inner] {
                    *e = *e * scale[ch];
                }
            }
        }
        Ok(self
            .graph()
            .push(v, self.shape().to_vec(), Op::ChannelScale(scale), &[self]))
    }

    /// 2-D cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&self, kernel: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
        let geom = ConvGeom::new(self.shape(), kernel.shape(), spec)?;
        self.conv_geom(kernel, geom)
    }

    pub(crate) fn conv_geom(&self, kernel: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
        if self.shape() != geom.input_shape() || kernel.shape() != geom.kernel_shape() {
            return Err(Error::shape("convolution operands do not match geometry"));
        }
        let exec = self.graph().exec();
        let y = kernels::conv2d_forward(exec, &geom, &self.values(), &kernel.values());
        Ok(self
            .graph()
            .push(y, geom.output_shape(), Op::Conv(geom), &[self, kernel]))
    }

    /// Transposed convolution of an output-shaped `self` back to the input grid.
    pub(crate) fn conv_input_grad(&self, kernel: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
        if self.shape() != geom.output_shape() || kernel.shape() != geom.kernel_shape() {
            return Err(Error::shape("transposed convolution operands do not match geometry"));
        }
        let exec = self.graph().exec();
        let dx = kernels::conv2d_input_grad(exec, &geom, &self.values(), &kernel.values());
        Ok(self
            .graph()
            .push(dx, geom.input_shape(), Op::ConvInputGrad(geom), &[self, kernel]))
    }

    /// Kernel gradient of a convolution, with `self` output-shaped.
    pub(crate) fn conv_kernel_grad(&self, input: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
        if self.shape() != geom.output_shape() || input.shape() != geom.input_shape() {
            return Err(Error::shape("kernel gradient operands do not match geometry"));
        }
        let exec = self.graph().exec();
        let dw = kernels::conv2d_kernel_grad(exec, &geom, &self.values(), &input.values());
        Ok(self
            .graph()
            .push(dw, geom.kernel_shape(), Op::ConvKernelGrad(geom), &[self, input]))
    }

    /// `[N, C·r², H, W] -> [N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || s[1] % (r * r) != 0 {
            return Err(Error::shape(format!("cannot pixel-shuffle {s:?} by {r}")));
        }
        let out = vec![s[0], s[1] / (r * r), s[2] * r, s[3] * r];
        let v = kernels::pixel_shuffle(&self.values(), s, r);
        Ok(self.graph().push(v, out, Op::PixelShuffle(r), &[self]))
    }

    /// `[N, C, H·r, W·r] -> [N, C·r², H, W]`.
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || r == 0 || s[2] % r != 0 || s[3] % r != 0 {
            return Err(Error::shape(format!("cannot pixel-unshuffle {s:?} by {r}")));
        }
        let out = vec![s[0], s[1] * r * r, s[2] / r, s[3] / r];
        let v = kernels::pixel_unshuffle(&self.values(), s, r);
        Ok(self.graph().push(v, out, Op::PixelUnshuffle(r), &[self]))
    }

    fn with_hw(&self, h: usize, w: usize) -> Vec<usize> {
        let mut s = self.shape().to_vec();
        let r = s.len();
        s[r - 2] = h;
        s[r - 1] = w;
        s
    }

    /// Bilinear upsampling of the last two axes (align-corners off).
    pub fn bilinear_upsample(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
        need_rank(self, 2, "bilinear")?;
        let r = self.shape().len();
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        if out_h < h || out_w < w {
            return Err(Error::shape(format!("bilinear cannot downscale {h}x{w} to {out_h}x{out_w}")));
        }
        if self.numel() == 0 {
            return Err(Error::shape("bilinear resize of an empty grid"));
        }
        let v = kernels::bilinear(&self.values(), self.shape(), out_h, out_w);
        Ok(self
            .graph()
            .push(v, self.with_hw(out_h, out_w), Op::Bilinear, &[self]))
    }

    pub(crate) fn bilinear_adjoint(&self, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
        let v = kernels::bilinear_adjoint(&self.values(), self.shape(), in_h, in_w);
        Ok(self
            .graph()
            .push(v, self.with_hw(in_h, in_w), Op::BilinearAdjoint, &[self]))
    }

    pub fn avg_pool2(&self) -> Result<Tensor<T>> {
        need_rank(self, 2, "avg_pool2")?;
        let r = self.shape().len();
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs even sides, got {h}x{w}")));
        }
        let v = kernels::avg_pool2(&self.values(), self.shape());
        Ok(self
            .graph()
            .push(v, self.with_hw(h / 2, w / 2), Op::AvgPool2, &[self]))
    }

    pub(crate) fn avg_pool2_adjoint(&self) -> Result<Tensor<T>> {
        let r = self.shape().len();
        let (h, w) = (self.shape()[r - 2], self.shape()[r - 1]);
        let v = kernels::avg_pool2_adjoint(&self.values(), self.shape());
        Ok(self
            .graph()
            .push(v, self.with_hw(h * 2, w * 2), Op::AvgPool2Adjoint, &[self]))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape(format!("concat axis {axis} on rank {rank}")));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let vals: Vec<Values<T>> = parts.iter().map(|p| p.values()).collect();
        let mut v = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, pv) in parts.iter().zip(&vals) {
                let block = p.shape()[axis] * inner;
                v.extend_from_slice(&pv[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(first.graph().push(v, shape, Op::Concat(axis), parts))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.shape().len() || start + len > self.shape()[axis] {
            return Err(Error::shape(format!(
                "slice {start}..{} of axis {axis} in {:?}",
                start + len,
                self.shape()
            )));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let x = self.values();
        let mut v = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            v.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(self.graph().push(v, shape, Op::Slice { axis, start }, &[self]))
    }

    /// Zero padding of `axis` with `before` and `after` entries.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Tensor<T>> {
        if axis >= self.shape().len() {
            return Err(Error::shape(format!("pad axis {axis} on {:?}", self.shape())));
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let full = before + len + after;
        let x = self.values();
        let mut v = vec![T::zero(); outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + before) * inner;
            v[dst..dst + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = full;
        Ok(self.graph().push(v, shape, Op::Pad { axis, before }, &[self]))
    }

    /// Normalises every `(sample, channel)` plane of `[N, C, ...]` to zero mean
    /// and unit variance. Returns the output and the per-plane (mean, var).
    pub fn instance_norm(&self, eps: f64) -> Result<(Tensor<T>, Vec<(f64, f64)>)> {
        need_rank(self, 3, "instance_norm")?;
        let plane: usize = self.shape()[2..].iter().product();
        let x = self.values();
        let moments = kernels::plane_moments(&x, plane);
        let (y, inv_std) = kernels::instance_norm(&x, plane, eps);
        let op = Op::InstanceNorm {
            inv_std: Rc::new(inv_std),
        };
        Ok((self.graph().push(y, self.shape().to_vec(), op, &[self]), moments))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.shape().len() {
            return Err(Error::shape(format!("softmax axis {axis} on {:?}", self.shape())));
        }
        let y = kernels::softmax(&self.values(), self.shape(), axis);
        Ok(self
            .graph()
            .push(y, self.shape().to_vec(), Op::Softmax(axis), &[self]))
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1/(1-p)`. Identity outside training.
    pub fn dropout<R: Rng>(&self, p: f64, train: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Precondition(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.mul_const(&mask)
    }

    /// Elementwise product with a constant.
    pub fn mul_const(&self, c: &[T]) -> Result<Tensor<T>> {
        let k = self.graph().constant(c.to_vec(), self.shape())?;
        self.mul(&k)
    }
}
