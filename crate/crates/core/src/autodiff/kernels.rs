//! Slice-level numeric kernels behind the tape operations.
//!
//! Layout is always row-major NCHW. Nothing in here knows about the graph.

use crate::error::{Error, Result};
use crate::exec::Exec;

use super::Scalar;

/// Stride, zero padding and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// Unit stride with "same" padding for an odd `kernel` at `dilation`.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation * (kernel - 1) / 2, dilation)
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

/// Fully resolved convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output length of one convolved axis, or `None` when it would be empty.
pub fn conv_out_len(len: usize, kernel: usize, spec: ConvSpec) -> Option<usize> {
    let span = spec.dilation * (kernel - 1) + 1;
    let padded = len + 2 * spec.padding;
    if kernel == 0 || spec.stride == 0 || spec.dilation == 0 || padded < span {
        return None;
    }
    Some((padded - span) / spec.stride + 1)
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], spec: ConvSpec) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects rank-4 input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if input[1] != kernel[1] {
            return Err(Error::shape(format!(
                "conv2d input has {} channels but kernel expects {}",
                input[1], kernel[1]
            )));
        }
        let out_h = conv_out_len(input[2], kernel[2], spec);
        let out_w = conv_out_len(input[3], kernel[3], spec);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape(format!(
                "conv2d of {input:?} with kernel {kernel:?} and {spec:?} has empty output"
            )));
        };
        Ok(Self {
            batch: input[0],
            in_c: input[1],
            in_h: input[2],
            in_w: input[3],
            out_c: kernel[0],
            kh: kernel[2],
            kw: kernel[3],
            stride: spec.stride,
            pad: spec.padding,
            dilation: spec.dilation,
            out_h,
            out_w,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_c, self.in_h, self.in_w]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_c, self.in_c, self.kh, self.kw]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_c, self.out_h, self.out_w]
    }

    fn in_plane(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    /// 1×1, unit stride, no padding: the input already is its own column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output-column range `[lo, hi)` for kernel column offset `off`.
    fn col_range(&self, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let w = self.in_w as isize;
        // smallest ox with ox*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest ox with ox*s + off <= w - 1
        let hi = if w - 1 - off < 0 {
            0
        } else {
            (w - 1 - off) / s + 1
        };
        let lo = (lo as usize).min(self.out_w);
        let hi = (hi.max(0) as usize).min(self.out_w);
        (lo, hi.max(lo))
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let opix = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * opix..(row + 1) * opix];
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (lo, hi) = g.col_range(off_x);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (lo as isize + off_x) as usize;
                        line[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            line[ox] = src[(ox as isize * g.stride as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let opix = g.out_pixels();
    x.fill(T::zero());
    for c in 0..g.in_c {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * opix..(row + 1) * opix];
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (lo, hi) = g.col_range(off_x);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in lo..hi {
                        let ix = (ox as isize * g.stride as isize + off_x) as usize;
                        dst[ix] = dst[ix] + line[ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation `y[n] = W · im2col(x[n])`.
pub fn conv2d_forward<T: Scalar>(exec: Exec, g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let opix = g.out_pixels();
    let out_plane = g.out_c * opix;
    let mut out = vec![T::zero(); g.batch * out_plane];
    let (patch, in_plane) = (g.patch(), g.in_plane());
    exec.for_each_chunk(&mut out, out_plane, |n, y| {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            let mut buf = vec![T::zero(); patch * opix];
            im2col(g, xn, &mut buf);
            owned = buf;
            &owned
        };
        T::gemm(
            g.out_c,
            patch,
            opix,
            w,
            (patch as isize, 1),
            cols,
            (opix as isize, 1),
            T::zero(),
            y,
            (opix as isize, 1),
        );
    });
    out
}

/// Gradient of the convolution with respect to its input (a transposed convolution).
pub fn conv2d_input_grad<T: Scalar>(exec: Exec, g: &ConvGeom, dy: &[T], w: &[T]) -> Vec<T> {
    let opix = g.out_pixels();
    let (patch, in_plane) = (g.patch(), g.in_plane());
    let out_plane = g.out_c * opix;
    let mut dx = vec![T::zero(); g.batch * in_plane];
    exec.for_each_chunk(&mut dx, in_plane, |n, dxn| {
        let dyn_ = &dy[n * out_plane..(n + 1) * out_plane];
        if g.is_pointwise() {
            T::gemm(
                patch,
                g.out_c,
                opix,
                w,
                (1, patch as isize),
                dyn_,
                (opix as isize, 1),
                T::zero(),
                dxn,
                (opix as isize, 1),
            );
        } else {
            let mut cols = vec![T::zero(); patch * opix];
            T::gemm(
                patch,
                g.out_c,
                opix,
                w,
                (1, patch as isize),
                dyn_,
                (opix as isize, 1),
                T::zero(),
                &mut cols,
                (opix as isize, 1),
            );
            col2im(g, &cols, dxn);
        }
    });
    dx
}

/// Gradient of the convolution with respect to its kernel, summed over the batch.
pub fn conv2d_kernel_grad<T: Scalar>(exec: Exec, g: &ConvGeom, dy: &[T], x: &[T]) -> Vec<T> {
    let opix = g.out_pixels();
    let (patch, in_plane) = (g.patch(), g.in_plane());
    let out_plane = g.out_c * opix;
    let partials = exec.map(g.batch, |n| {
        let xn = &x[n * in_plane..(n + 1) * in_plane];
        let dyn_ = &dy[n * out_plane..(n + 1) * out_plane];
        let owned;
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            let mut buf = vec![T::zero(); patch * opix];
            im2col(g, xn, &mut buf);
            owned = buf;
            &owned
        };
        let mut part = vec![T::zero(); g.out_c * patch];
        T::gemm(
            g.out_c,
            opix,
            patch,
            dyn_,
            (opix as isize, 1),
            cols,
            (1, opix as isize),
            T::zero(),
            &mut part,
            (patch as isize, 1),
        );
        part
    });
    // Summed in batch order so both execution modes agree bit for bit.
    let mut it = partials.into_iter();
    let mut acc = it.next().unwrap_or_else(|| vec![T::zero(); g.out_c * patch]);
    for part in it {
        for (a, p) in acc.iter_mut().zip(part) {
            *a = *a + p;
        }
    }
    acc
}

/// `[N, C·r², H, W] -> [N, C, H·r, W·r]`, channel `c·r² + i·r + j` feeding sub-pixel `(i, j)`.
pub fn pixel_shuffle<T: Scalar>(x: &[T], shape: &[usize], r: usize) -> Vec<T> {
    let (n, cin, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let c = cin / (r * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let src_c = ch * r * r + i * r + j;
                    let src = &x[((b * cin + src_c) * h) * w..][..h * w];
                    let dst_base = (b * c + ch) * h * r * w * r;
                    for y in 0..h {
                        let dst_row = dst_base + (y * r + i) * w * r;
                        for xx in 0..w {
                            out[dst_row + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; `shape` is the shuffled (large) shape.
pub fn pixel_unshuffle<T: Scalar>(x: &[T], shape: &[usize], r: usize) -> Vec<T> {
    let (n, c, hr, wr) = (shape[0], shape[1], shape[2], shape[3]);
    let (h, w) = (hr / r, wr / r);
    let cout = c * r * r;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let dst_c = ch * r * r + i * r + j;
                    let dst = ((b * cout + dst_c) * h) * w;
                    let src_base = (b * c + ch) * hr * wr;
                    for y in 0..h {
                        let src_row = src_base + (y * r + i) * wr;
                        for xx in 0..w {
                            out[dst + y * w + xx] = x[src_row + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Two-tap interpolation weights along one axis (align-corners = false).
pub fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let l = src - i0 as f64;
            (i0, i1, 1.0 - l, l)
        })
        .collect()
}

fn planes(shape: &[usize]) -> usize {
    shape[..shape.len() - 2].iter().product()
}

/// Bilinear resampling of the last two axes of `x` to `(out_h, out_w)`.
pub fn bilinear<T: Scalar>(x: &[T], shape: &[usize], out_h: usize, out_w: usize) -> Vec<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let np = planes(shape);
    let mut out = vec![T::zero(); np * out_h * out_w];
    for p in 0..np {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                let top = src[y0 * w + x0] * wx0 + src[y0 * w + x1] * wx1;
                let bot = src[y1 * w + x0] * wx0 + src[y1 * w + x1] * wx1;
                dst[oy * out_w + ox] = top * wy0 + bot * wy1;
            }
        }
    }
    out
}

/// Adjoint of [`bilinear`]: scatters `dy` (shape `dy_shape`) back onto an `(in_h, in_w)` grid.
pub fn bilinear_adjoint<T: Scalar>(dy: &[T], dy_shape: &[usize], in_h: usize, in_w: usize) -> Vec<T> {
    let r = dy_shape.len();
    let (out_h, out_w) = (dy_shape[r - 2], dy_shape[r - 1]);
    let ty = linear_taps(in_h, out_h);
    let tx = linear_taps(in_w, out_w);
    let np = planes(dy_shape);
    let mut dx = vec![T::zero(); np * in_h * in_w];
    for p in 0..np {
        let src = &dy[p * out_h * out_w..(p + 1) * out_h * out_w];
        let dst = &mut dx[p * in_h * in_w..(p + 1) * in_h * in_w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64(wy0), T::from_f64(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64(wx0), T::from_f64(wx1));
                let g = src[oy * out_w + ox];
                dst[y0 * in_w + x0] = dst[y0 * in_w + x0] + g * wy0 * wx0;
                dst[y0 * in_w + x1] = dst[y0 * in_w + x1] + g * wy0 * wx1;
                dst[y1 * in_w + x0] = dst[y1 * in_w + x0] + g * wy1 * wx0;
                dst[y1 * in_w + x1] = dst[y1 * in_w + x1] + g * wy1 * wx1;
            }
        }
    }
    dx
}

/// Non-overlapping 2×2 mean pooling of the last two axes.
pub fn avg_pool2<T: Scalar>(x: &[T], shape: &[usize]) -> Vec<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (oh, ow) = (h / 2, w / 2);
    let np = planes(shape);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); np * oh * ow];
    for p in 0..np {
        let src = &x[p * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1];
                let b = src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                out[p * oh * ow + y * ow + xx] = (a + b) * quarter;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]: each pooled gradient spread over its 2×2 source cell.
pub fn avg_pool2_adjoint<T: Scalar>(dy: &[T], dy_shape: &[usize]) -> Vec<T> {
    let r = dy_shape.len();
    let (oh, ow) = (dy_shape[r - 2], dy_shape[r - 1]);
    let (h, w) = (oh * 2, ow * 2);
    let np = planes(dy_shape);
    let quarter = T::from_f64(0.25);
    let mut out = vec![T::zero(); np * h * w];
    for p in 0..np {
        for y in 0..h {
            for xx in 0..w {
                out[p * h * w + y * w + xx] = dy[p * oh * ow + (y / 2) * ow + xx / 2] * quarter;
            }
        }
    }
    out
}

/// Per-plane mean and biased variance over the trailing two axes.
pub fn plane_moments<T: Scalar>(x: &[T], plane: usize) -> Vec<(f64, f64)> {
    x.chunks(plane)
        .map(|p| {
            let n = p.len() as f64;
            let mean = p.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = p.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

/// Instance normalisation; returns the output and the per-plane inverse std.
pub fn instance_norm<T: Scalar>(x: &[T], plane: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let moments = plane_moments(x, plane);
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(moments.len());
    for ((src, dst), &(mean, var)) in x.chunks(plane).zip(y.chunks_mut(plane)).zip(&moments) {
        let is = 1.0 / (var + eps).sqrt();
        inv.push(T::from_f64(is));
        for (d, s) in dst.iter_mut().zip(src) {
            *d = T::from_f64((s.as_f64() - mean) * is);
        }
    }
    (y, inv)
}

/// Backward of [`instance_norm`] given its output `y`.
pub fn instance_norm_backward<T: Scalar>(dy: &[T], y: &[T], inv_std: &[T], plane: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let n = plane as f64;
    for (p, ((g, yy), out)) in dy
        .chunks(plane)
        .zip(y.chunks(plane))
        .zip(dx.chunks_mut(plane))
        .enumerate()
    {
        let mean_g = g.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        let mean_gy = g.iter().zip(yy).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / n;
        let is = inv_std[p].as_f64();
        for ((o, gv), yv) in out.iter_mut().zip(g).zip(yy) {
            *o = T::from_f64(is * (gv.as_f64() - mean_g - yv.as_f64() * mean_gy));
        }
    }
    dx
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                y[at(k)] = e;
                sum = sum + e;
            }
            for k in 0..len {
                y[at(k)] = y[at(k)] / sum;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(dy: &[T], y: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = split_axis(shape, axis);
    let mut dx = vec![T::zero(); dy.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| dy[at(k)] * y[at(k)]).sum();
            for k in 0..len {
                dx[at(k)] = y[at(k)] * (dy[at(k)] - dot);
            }
        }
    }
    dx
}
