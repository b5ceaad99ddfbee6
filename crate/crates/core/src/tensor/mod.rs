//! Dense `f32` tensors and the primitives the network is built from.
//!
//! Tensors are row-major with up to four extents. Image-like tensors use the
//! `(batch, height, width, channels)` layout, channels innermost.

pub(crate) mod conv;
mod dump;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvKernel, Padding};
pub use dump::{decode_dump, encode_dump, read_dump, write_dump, DUMP_MAGIC};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking rank (1..=4), extents (all >= 1), length
    /// and finiteness.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let len = checked_len(shape)?;
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = checked_len(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Rank-4 tensor filled from a closure over `(b, y, x, c)`.
    pub fn from_fn_bhwc(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let [nb, h, w, c] = dims;
        let mut t = Self::zeros(&dims);
        let mut i = 0;
        for b in 0..nb {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        t.data[i] = f(b, y, x, ch);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    /// Internal constructor for buffers whose length is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(checked_len(&shape).ok(), Some(data.len()));
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Extents as `[batch, height, width, channels]`; the tensor must be rank 4.
    pub fn bhwc(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, h, w, c] => Ok([b, h, w, c]),
            _ => Err(Error::invalid(format!(
                "expected a rank-4 (batch, height, width, channels) tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn get4(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        let [_, h, w, ch] = self.bhwc().expect("get4 on non rank-4 tensor");
        self.data[((b * h + y) * w + x) * ch + c]
    }

    pub fn set4(&mut self, b: usize, y: usize, x: usize, c: usize, value: f32) {
        let [_, h, w, ch] = self.bhwc().expect("set4 on non rank-4 tensor");
        self.data[((b * h + y) * w + x) * ch + c] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Bitwise equality of shape and every value (distinguishes `0.0`/`-0.0`).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Elementwise `self += other` in place.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.expect_same_shape(other, "sub")?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        ))
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Spatial crop of a BHWC tensor.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let [nb, h, w, c] = self.bhwc()?;
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({top},{left}) does not fit in {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(nb * height * width * c);
        for b in 0..nb {
            for y in top..top + height {
                let start = ((b * h + y) * w + left) * c;
                data.extend_from_slice(&self.data[start..start + width * c]);
            }
        }
        Ok(Self::from_parts(vec![nb, height, width, c], data))
    }

    /// Extracts channel `channel` of a BHWC tensor as a BHW1 tensor.
    pub fn channel(&self, channel: usize) -> Result<Self> {
        let [nb, h, w, c] = self.bhwc()?;
        if channel >= c {
            return Err(Error::invalid(format!("channel {channel} out of range for {c} channels")));
        }
        let data = self.data.iter().skip(channel).step_by(c).copied().collect();
        Ok(Self::from_parts(vec![nb, h, w, 1], data))
    }

    /// Batch item `index` of a BHWC tensor, keeping a batch extent of 1.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let [nb, h, w, c] = self.bhwc()?;
        if index >= nb {
            return Err(Error::invalid(format!("batch index {index} out of range for {nb}")));
        }
        let n = h * w * c;
        Ok(Self::from_parts(vec![1, h, w, c], self.data[index * n..(index + 1) * n].to_vec()))
    }

    /// Stacks equally shaped BHWC tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let [_, h, w, c] = first.bhwc()?;
        let mut nb = 0;
        let mut data = Vec::new();
        for t in items {
            let [b, th, tw, tc] = t.bhwc()?;
            if (th, tw, tc) != (h, w, c) {
                return Err(Error::ShapeMismatch {
                    context: "stack",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            nb += b;
            data.extend_from_slice(&t.data);
        }
        Ok(Self::from_parts(vec![nb, h, w, c], data))
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::invalid(format!("tensor rank must be 1..=4, got {}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`]: passes `grad_out` where `x > 0`, zero elsewhere
/// (including exactly at zero).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    x.expect_same_shape(grad_out, "relu_backward")?;
    Ok(Tensor::from_parts(
        x.shape.clone(),
        x.data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    ))
}

/// Source index for position `j` of an axis of length `n` padded by `border`
/// with edge-inclusive reflection: `... b a | a b c | c b ...`.
#[inline]
fn reflect(j: usize, border: usize, n: usize) -> usize {
    let j = j as isize - border as isize;
    let n = n as isize;
    let src = if j < 0 {
        -j - 1
    } else if j >= n {
        2 * n - j - 1
    } else {
        j
    };
    src as usize
}

/// Mirrors `border` pixels onto every side of a BHWC tensor. The pixel at
/// distance `d` outside the edge copies the one at distance `d - 1` inside,
/// so the edge row/column appears twice.
pub fn symmetric_pad(image: &Tensor, border: usize) -> Result<Tensor> {
    let [nb, h, w, c] = image.bhwc()?;
    if border > h || border > w {
        return Err(Error::invalid(format!(
            "symmetric pad border {border} exceeds image extent {h}x{w}"
        )));
    }
    let (ph, pw) = (h + 2 * border, w + 2 * border);
    let mut data = Vec::with_capacity(nb * ph * pw * c);
    for b in 0..nb {
        for y in 0..ph {
            let sy = reflect(y, border, h);
            for x in 0..pw {
                let sx = reflect(x, border, w);
                let start = ((b * h + sy) * w + sx) * c;
                data.extend_from_slice(&image.data[start..start + c]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![nb, ph, pw, c], data))
}
