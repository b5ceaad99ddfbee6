//! Image ingestion, noise synthesis, patch sampling and dataset splits.
//!
//! Pixels live in the normalized domain `v / 255 - 0.5`, so an 8-bit image
//! maps onto `[-0.5, 0.5]`. Noise levels are always given on the 8-bit scale.

pub(crate) mod image;
mod manifest;
pub mod synthetic;

pub use image::{decode_gray, encode_gray_png, encode_gray_pgm, load_gray, save_gray, GrayImage};
pub use manifest::{parse_manifest, read_manifest, ManifestEntry};

use crate::rng::{self, CounterRng};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Maps an 8-bit level onto the normalized domain.
pub fn normalize(level: f32) -> f32 {
    level / 255.0 - 0.5
}

/// Nearest 8-bit level of a normalized value, clipped to `0..=255`.
pub fn denormalize(value: f32) -> u8 {
    ((value as f64 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Adds white Gaussian noise of standard deviation `sigma_8bit / 255`.
///
/// Element `i` (row-major) receives `sigma_8bit / 255 * rng::normal_at(seed, i)`,
/// added in `f64` and rounded once to `f32`. The result is not clipped.
pub fn add_gaussian_noise(clean: &Tensor, sigma_8bit: f64, seed: u64) -> Result<Tensor> {
    check_sigma(sigma_8bit)?;
    if sigma_8bit == 0.0 {
        return Ok(clean.clone());
    }
    let scale = sigma_8bit / 255.0;
    let mut z = vec![0.0f64; clean.len()];
    rng::fill_normal(seed, &mut z);
    let data = clean
        .data()
        .iter()
        .zip(&z)
        .map(|(&v, &n)| (v as f64 + scale * n) as f32)
        .collect();
    Tensor::new(clean.shape(), data)
}

/// The quantized setting: noise is added on the `[0, 255]` scale (same draws
/// as [`add_gaussian_noise`]), the result is clipped to `[0, 255]`, rounded to
/// the nearest level (halves away from zero) and renormalized.
pub fn add_quantized_noise(clean: &Tensor, sigma_8bit: f64, seed: u64) -> Result<Tensor> {
    check_sigma(sigma_8bit)?;
    let mut z = vec![0.0f64; clean.len()];
    if sigma_8bit > 0.0 {
        rng::fill_normal(seed, &mut z);
    }
    let data = clean
        .data()
        .iter()
        .zip(&z)
        .map(|(&v, &n)| {
            let level = ((v as f64 + 0.5) * 255.0 + sigma_8bit * n).clamp(0.0, 255.0).round();
            normalize(level as f32)
        })
        .collect();
    Tensor::new(clean.shape(), data)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Square `size × size` crop at `(top, left)`, optionally mirrored left-right.
pub fn crop_patch(img: &GrayImage, top: usize, left: usize, size: usize, flip: bool) -> Result<Tensor> {
    if size == 0 || top + size > img.height() || left + size > img.width() {
        return Err(Error::invalid(format!(
            "patch {size}x{size} at ({top},{left}) does not fit in {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut data = Vec::with_capacity(size * size);
    for y in top..top + size {
        let row = &img.row(y)[left..left + size];
        if flip {
            data.extend(row.iter().rev());
        } else {
            data.extend_from_slice(row);
        }
    }
    Ok(Tensor::from_parts(vec![1, size, size, 1], data))
}

/// Random training patch: draws `top = below(H - size + 1)`, then
/// `left = below(W - size + 1)`, then one coin for the left-right flip.
pub fn sample_patch(img: &GrayImage, size: usize, rng: &mut CounterRng) -> Result<Tensor> {
    if size == 0 || img.height() < size || img.width() < size {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than patch size {size}",
            img.height(),
            img.width()
        )));
    }
    let top = rng.below((img.height() - size + 1) as u64) as usize;
    let left = rng.below((img.width() - size + 1) as u64) as usize;
    let flip = rng.coin();
    crop_patch(img, top, left, size, flip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub fractions: (f64, f64, f64),
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Shuffles `ids` with `CounterRng::new(seed)` and cuts the result into
/// train, validation and test parts. Validation and test sizes are
/// `floor(n · fraction)`; the remainder goes to train.
pub fn split_dataset<T: Clone>(ids: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit<T>> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    let (ft, fv, fs) = fractions;
    let valid = |f: f64| (0.0..=1.0).contains(&f);
    if !(valid(ft) && valid(fv) && valid(fs)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions must lie in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = ids.len();
    // Products like 0.2 * 10 land a hair above the integer; never below it.
    let part = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let (n_val, n_test) = (part(fv), part(fs));
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    CounterRng::new(seed).shuffle(&mut order);
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| ids[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(0..n_train),
        val: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..n),
        fractions,
    })
}
