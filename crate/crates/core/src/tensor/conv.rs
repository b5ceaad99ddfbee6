//! Stride-1 3×3 cross-correlation over BHWC tensors.
//!
//! Summation order (bit-reproducible, independent of thread count and of the
//! SIMD width picked at runtime): each output value starts from `0.0` and
//! accumulates `w[o][ci][ky][kx] * x[y+ky-p][x+kx-p][ci]` with `ky` outermost,
//! then `kx`, then `ci`, skipping taps that fall outside the input; the bias
//! is added last. Every lane performs a separate multiply and add, so wider
//! vectors never change the result.
//!
//! The input gradient is the same correlation applied to `grad_out` with the
//! flipped, transposed kernel (`ky` and `kx` descending, then `o`). Weight
//! gradients sum over batch items in ascending order, and within one item
//! over output rows then columns.

use rayon::prelude::*;

use super::Tensor;
use crate::{Error, Result};

const TAPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Implicit zeros around the input; output has the input's extent.
    ZeroSame,
    /// No padding; output shrinks by 2 in each spatial dimension.
    Valid,
}

impl Padding {
    fn offset(self) -> usize {
        match self {
            Padding::ZeroSame => 1,
            Padding::Valid => 0,
        }
    }

    /// Output extent for an input extent, `None` when the input is too small.
    pub fn output_extent(self, n: usize) -> Option<usize> {
        match self {
            Padding::ZeroSame if n >= 1 => Some(n),
            Padding::Valid if n >= 3 => Some(n - 2),
            _ => None,
        }
    }
}

/// A 3×3 convolution: weights shaped `(out_channels, in_channels, 3, 3)`
/// plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
    bias: Vec<f32>,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Vec<f32>) -> Result<Self> {
        match weights.shape() {
            &[o, _, 3, 3] if o == bias.len() => {}
            shape => {
                return Err(Error::ShapeMismatch {
                    context: "kernel weights (out, in, 3, 3) vs bias length",
                    left: shape.to_vec(),
                    right: vec![bias.len()],
                })
            }
        }
        if let Some(i) = bias.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite bias at index {i}")));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            weights: Tensor::zeros(&[out_channels, in_channels, 3, 3]),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Flat `(out, in, ky, kx)` weight storage.
    pub fn weights_mut(&mut self) -> &mut [f32] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    /// Weights and biases borrowed together.
    pub fn params_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (self.weights.data_mut(), &mut self.bias)
    }

    pub fn weight(&self, o: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weights.data()[self.index(o, ci, ky, kx)]
    }

    pub fn set_weight(&mut self, o: usize, ci: usize, ky: usize, kx: usize, value: f32) {
        let i = self.index(o, ci, ky, kx);
        self.weights.data_mut()[i] = value;
    }

    fn index(&self, o: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels() + ci) * 3 + ky) * 3 + kx
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `(tap, ci, o)` layout for the forward correlation.
    fn pack_forward(&self) -> Vec<f32> {
        let (co, ci_n) = (self.out_channels(), self.in_channels());
        let w = self.weights.data();
        let mut packed = vec![0.0; TAPS * ci_n * co];
        for o in 0..co {
            for ci in 0..ci_n {
                for tap in 0..TAPS {
                    packed[(tap * ci_n + ci) * co + o] = w[(o * ci_n + ci) * TAPS + tap];
                }
            }
        }
        packed
    }

    /// Flipped taps in `(tap, o, ci)` layout for the input gradient.
    fn pack_adjoint(&self) -> Vec<f32> {
        let (co, ci_n) = (self.out_channels(), self.in_channels());
        let w = self.weights.data();
        let mut packed = vec![0.0; TAPS * ci_n * co];
        for o in 0..co {
            for ci in 0..ci_n {
                for tap in 0..TAPS {
                    packed[((TAPS - 1 - tap) * co + o) * ci_n + ci] = w[(o * ci_n + ci) * TAPS + tap];
                }
            }
        }
        packed
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f32>,
}

fn check_input(input: &Tensor, kernel: &ConvKernel, padding: Padding) -> Result<([usize; 4], usize, usize)> {
    let [nb, h, w, c] = input.bhwc()?;
    if c != kernel.in_channels() {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels vs kernel in_channels",
            left: input.shape().to_vec(),
            right: kernel.weights.shape().to_vec(),
        });
    }
    match (padding.output_extent(h), padding.output_extent(w)) {
        (Some(oh), Some(ow)) => Ok(([nb, h, w, c], oh, ow)),
        _ => Err(Error::invalid(format!(
            "input {h}x{w} too small for {padding:?} 3x3 convolution"
        ))),
    }
}

/// Stride-1 3×3 cross-correlation plus bias.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel, padding: Padding) -> Result<Tensor> {
    let (dims, oh, ow) = check_input(input, kernel, padding)?;
    let co = kernel.out_channels();
    let mut out = correlate(input.data(), dims, &kernel.pack_forward(), co, (oh, ow), padding.offset());
    for px in out.chunks_exact_mut(co) {
        for (v, b) in px.iter_mut().zip(&kernel.bias) {
            *v += *b;
        }
    }
    Ok(Tensor::from_parts(vec![dims[0], oh, ow, co], out))
}

/// Adjoints of [`conv2d`] for the cotangent `grad_out`.
pub fn conv2d_backward(input: &Tensor, kernel: &ConvKernel, grad_out: &Tensor, padding: Padding) -> Result<ConvGrads> {
    let (weights, bias) = conv2d_param_grads(input, kernel, grad_out, padding)?;
    let input_grad = conv2d_input_grad(input.shape(), kernel, grad_out, padding)?;
    Ok(ConvGrads {
        input: input_grad,
        weights,
        bias,
    })
}

fn check_grad_out(input_dims: [usize; 4], oh: usize, ow: usize, co: usize, grad_out: &Tensor) -> Result<()> {
    let expected = [input_dims[0], oh, ow, co];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward grad_out vs conv2d output",
            left: grad_out.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    Ok(())
}

/// Weight and bias gradients only.
pub(crate) fn conv2d_param_grads(
    input: &Tensor,
    kernel: &ConvKernel,
    grad_out: &Tensor,
    padding: Padding,
) -> Result<(Tensor, Vec<f32>)> {
    let (dims, oh, ow) = check_input(input, kernel, padding)?;
    let co = kernel.out_channels();
    check_grad_out(dims, oh, ow, co, grad_out)?;
    let [nb, h, w, ci_n] = dims;
    let offset = padding.offset();
    let src = input.data();
    let g = grad_out.data();

    let partials: Vec<Vec<f32>> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0f32; TAPS * ci_n * co];
            dispatch_weight_item(src, g, [h, w, ci_n], [oh, ow, co], offset, b, &mut acc);
            acc
        })
        .collect();
    let mut packed = vec![0.0f32; TAPS * ci_n * co];
    for part in &partials {
        for (t, p) in packed.iter_mut().zip(part) {
            *t += *p;
        }
    }

    let mut weights = Tensor::zeros(&[co, ci_n, 3, 3]);
    let wd = weights.data_mut();
    for o in 0..co {
        for ci in 0..ci_n {
            for tap in 0..TAPS {
                wd[(o * ci_n + ci) * TAPS + tap] = packed[(tap * ci_n + ci) * co + o];
            }
        }
    }

    let mut bias = vec![0.0f32; co];
    for px in g.chunks_exact(co) {
        for (acc, v) in bias.iter_mut().zip(px) {
            *acc += *v;
        }
    }
    Ok((weights, bias))
}

/// Input gradient only.
pub(crate) fn conv2d_input_grad(
    input_shape: &[usize],
    kernel: &ConvKernel,
    grad_out: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    let dims: [usize; 4] = input_shape.try_into().map_err(|_| {
        Error::invalid(format!("expected a rank-4 input shape, got {input_shape:?}"))
    })?;
    if dims[3] != kernel.in_channels() {
        return Err(Error::ShapeMismatch {
            context: "conv2d input channels vs kernel in_channels",
            left: input_shape.to_vec(),
            right: kernel.weights.shape().to_vec(),
        });
    }
    let (oh, ow) = match (padding.output_extent(dims[1]), padding.output_extent(dims[2])) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::invalid(format!(
                "input {}x{} too small for {padding:?} 3x3 convolution",
                dims[1], dims[2]
            )))
        }
    };
    let co = kernel.out_channels();
    check_grad_out(dims, oh, ow, co, grad_out)?;
    let src_dims = [dims[0], oh, ow, co];
    let data = correlate(
        grad_out.data(),
        src_dims,
        &kernel.pack_adjoint(),
        dims[3],
        (dims[1], dims[2]),
        2 - padding.offset(),
    );
    Ok(Tensor::from_parts(dims.to_vec(), data))
}

/// `out[b][y][x] = Σ_{ty,tx} src[b][y+ty-offset][x+tx-offset] · K[ty][tx]`, where
/// `K[tap]` is a `src_c × cout` matrix in `packed`. Out-of-range taps are skipped.
fn correlate(src: &[f32], src_dims: [usize; 4], packed: &[f32], cout: usize, out_hw: (usize, usize), offset: usize) -> Vec<f32> {
    let [nb, sh, sw, cin] = src_dims;
    let (oh, ow) = out_hw;
    let mut out = vec![0.0f32; nb * oh * ow * cout];
    let geom = RowGeometry {
        sh,
        sw,
        cin,
        cout,
        ow,
        offset,
    };
    out.par_chunks_mut(ow * cout).enumerate().for_each(|(row, out_row)| {
        let (b, y) = (row / oh, row % oh);
        dispatch_row(src, packed, &geom, b, y, out_row);
    });
    out
}

struct RowGeometry {
    sh: usize,
    sw: usize,
    cin: usize,
    cout: usize,
    ow: usize,
    offset: usize,
}

/// Columns `x` of an output row for which `x + tap - offset` lies in `0..n`.
#[inline(always)]
fn tap_columns(tap: usize, offset: usize, n: usize, out_n: usize) -> std::ops::Range<usize> {
    let lo = offset.saturating_sub(tap);
    let hi = (n + offset).saturating_sub(tap).min(out_n);
    lo..hi.max(lo)
}

#[inline(always)]
fn correlate_row(src: &[f32], packed: &[f32], g: &RowGeometry, b: usize, y: usize, out_row: &mut [f32]) {
    let (cin, cout) = (g.cin, g.cout);
    for ty in 0..3 {
        let iy = y + ty;
        if iy < g.offset || iy - g.offset >= g.sh {
            continue;
        }
        let iy = iy - g.offset;
        let src_row = &src[(b * g.sh + iy) * g.sw * cin..][..g.sw * cin];
        for tx in 0..3 {
            let taps = &packed[(ty * 3 + tx) * cin * cout..][..cin * cout];
            let cols = tap_columns(tx, g.offset, g.sw, g.ow);
            // Source column of output column x is x + tx - offset.
            let src_tap = &src_row[(cols.start + tx - g.offset) * cin..];
            let out_tap = &mut out_row[cols.start * cout..];
            let n = cols.len();
            let mut o0 = 0;
            while o0 + 16 <= cout {
                correlate_block::<16>(src_tap, taps, out_tap, n, o0, cin, cout);
                o0 += 16;
            }
            if o0 + 8 <= cout {
                correlate_block::<8>(src_tap, taps, out_tap, n, o0, cin, cout);
                o0 += 8;
            }
            while o0 < cout {
                correlate_block::<1>(src_tap, taps, out_tap, n, o0, cin, cout);
                o0 += 1;
            }
        }
    }
}

/// Output channels `o0..o0 + OC` of `n` consecutive columns.
#[inline(always)]
fn correlate_block<const OC: usize>(src: &[f32], taps: &[f32], out: &mut [f32], n: usize, o0: usize, cin: usize, cout: usize) {
    let mut x = 0;
    while x + 4 <= n {
        correlate_tile::<4, OC>(src, taps, out, x, o0, cin, cout);
        x += 4;
    }
    while x < n {
        correlate_tile::<1, OC>(src, taps, out, x, o0, cin, cout);
        x += 1;
    }
}

/// Register tile of `PX` columns × `OC` channels. Accumulates over `ci` in
/// ascending order on top of what earlier taps left in `out`.
#[inline(always)]
fn correlate_tile<const PX: usize, const OC: usize>(
    src: &[f32],
    taps: &[f32],
    out: &mut [f32],
    x0: usize,
    o0: usize,
    cin: usize,
    cout: usize,
) {
    let mut acc = [[0.0f32; OC]; PX];
    let mut rows: [&[f32]; PX] = [&[]; PX];
    for p in 0..PX {
        acc[p].copy_from_slice(&out[(x0 + p) * cout + o0..][..OC]);
        rows[p] = &src[(x0 + p) * cin..][..cin];
    }
    for ci in 0..cin {
        let w: &[f32; OC] = taps[ci * cout + o0..][..OC].try_into().unwrap();
        for p in 0..PX {
            let v = rows[p][ci];
            for o in 0..OC {
                acc[p][o] += v * w[o];
            }
        }
    }
    for p in 0..PX {
        out[(x0 + p) * cout + o0..][..OC].copy_from_slice(&acc[p]);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn correlate_row_avx2(src: &[f32], packed: &[f32], g: &RowGeometry, b: usize, y: usize, out_row: &mut [f32]) {
    correlate_row(src, packed, g, b, y, out_row)
}

fn dispatch_row(src: &[f32], packed: &[f32], g: &RowGeometry, b: usize, y: usize, out_row: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { correlate_row_avx2(src, packed, g, b, y, out_row) };
    }
    correlate_row(src, packed, g, b, y, out_row)
}

#[inline(always)]
fn weight_item(src: &[f32], grad: &[f32], in_dims: [usize; 3], out_dims: [usize; 3], offset: usize, b: usize, acc: &mut [f32]) {
    let [h, w, cin] = in_dims;
    let [oh, ow, cout] = out_dims;
    for y in 0..oh {
        let g_row = &grad[(b * oh + y) * ow * cout..][..ow * cout];
        for ty in 0..3 {
            let iy = y + ty;
            if iy < offset || iy - offset >= h {
                continue;
            }
            let src_row = &src[(b * h + iy - offset) * w * cin..][..w * cin];
            for tx in 0..3 {
                let tap_acc = &mut acc[(ty * 3 + tx) * cin * cout..][..cin * cout];
                let cols = tap_columns(tx, offset, w, ow);
                let src_tap = &src_row[(cols.start + tx - offset) * cin..];
                let g_tap = &g_row[cols.start * cout..];
                let n = cols.len();
                let mut c0 = 0;
                while c0 + 4 <= cin {
                    weight_block::<4>(src_tap, g_tap, tap_acc, n, c0, cin, cout);
                    c0 += 4;
                }
                while c0 < cin {
                    weight_block::<1>(src_tap, g_tap, tap_acc, n, c0, cin, cout);
                    c0 += 1;
                }
            }
        }
    }
}

#[inline(always)]
fn weight_block<const CI: usize>(src: &[f32], g: &[f32], acc: &mut [f32], n: usize, c0: usize, cin: usize, cout: usize) {
    let mut o0 = 0;
    while o0 + 16 <= cout {
        weight_tile::<CI, 16>(src, g, acc, n, c0, o0, cin, cout);
        o0 += 16;
    }
    if o0 + 8 <= cout {
        weight_tile::<CI, 8>(src, g, acc, n, c0, o0, cin, cout);
        o0 += 8;
    }
    while o0 < cout {
        weight_tile::<CI, 1>(src, g, acc, n, c0, o0, cin, cout);
        o0 += 1;
    }
}

/// Register tile of `CI` input × `OC` output channels, summed over `n`
/// columns in ascending order.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn weight_tile<const CI: usize, const OC: usize>(
    src: &[f32],
    g: &[f32],
    acc: &mut [f32],
    n: usize,
    c0: usize,
    o0: usize,
    cin: usize,
    cout: usize,
) {
    let mut tile = [[0.0f32; OC]; CI];
    for c in 0..CI {
        tile[c].copy_from_slice(&acc[(c0 + c) * cout + o0..][..OC]);
    }
    for x in 0..n {
        let gv: &[f32; OC] = g[x * cout + o0..][..OC].try_into().unwrap();
        let s: &[f32; CI] = src[x * cin + c0..][..CI].try_into().unwrap();
        for c in 0..CI {
            let v = s[c];
            for o in 0..OC {
                tile[c][o] += v * gv[o];
            }
        }
    }
    for c in 0..CI {
        acc[(c0 + c) * cout + o0..][..OC].copy_from_slice(&tile[c]);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn weight_item_avx2(src: &[f32], grad: &[f32], in_dims: [usize; 3], out_dims: [usize; 3], offset: usize, b: usize, acc: &mut [f32]) {
    weight_item(src, grad, in_dims, out_dims, offset, b, acc)
}

fn dispatch_weight_item(src: &[f32], grad: &[f32], in_dims: [usize; 3], out_dims: [usize; 3], offset: usize, b: usize, acc: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { weight_item_avx2(src, grad, in_dims, out_dims, offset, b, acc) };
    }
    weight_item(src, grad, in_dims, out_dims, offset, b, acc)
}
