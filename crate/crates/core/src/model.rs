//! The residual denoising network.
//!
//! Every layer is one 3×3 convolution. In each non-final layer, output
//! channel 0 is a linear noise component and channels `1..=F` are features
//! that go through ReLU into the next layer. The final layer emits only the
//! noise component. The denoised image is the noisy input plus all noise
//! components, summed in ascending layer order.

use std::path::{Path, PathBuf};

use crate::rng;
use crate::tensor::{self, conv2d, ConvKernel, Padding, Tensor};
use crate::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"DNET";
pub const MODEL_FORMAT_VERSION: u16 = 1;

/// Symmetric border added around an image before inference.
pub const TEST_PAD: usize = 21;

/// Length of the fixed `DNET` header in bytes.
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub depth: usize,
    pub feature_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 20,
            feature_channels: 63,
        }
    }
}

impl ModelConfig {
    pub fn new(depth: usize, feature_channels: usize) -> Result<Self> {
        let config = Self {
            depth,
            feature_channels,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.feature_channels == 0 {
            return Err(Error::invalid(format!(
                "model depth and feature channels must be >= 1, got depth {} features {}",
                self.depth, self.feature_channels
            )));
        }
        Ok(())
    }

    /// Side length of the square input region one output pixel depends on.
    pub fn receptive_field(&self) -> usize {
        2 * self.depth + 1
    }

    /// `(out_channels, in_channels)` of layer `index` (0-based).
    pub fn layer_shape(&self, index: usize) -> (usize, usize) {
        let input = if index == 0 { 1 } else { self.feature_channels };
        let output = if index + 1 == self.depth {
            1
        } else {
            self.feature_channels + 1
        };
        (output, input)
    }

    /// Total weights and biases, `None` on overflow.
    pub fn checked_param_count(&self) -> Option<usize> {
        (0..self.depth).try_fold(0usize, |acc, i| {
            let (o, c) = self.layer_shape(i);
            o.checked_mul(c)?
                .checked_mul(9)?
                .checked_add(o)
                .and_then(|n| acc.checked_add(n))
        })
    }

    pub fn param_count(&self) -> usize {
        self.checked_param_count().expect("parameter count overflows usize")
    }
}

/// One single-channel noise component per layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDecomposition {
    pub residuals: Vec<Tensor>,
}

impl NoiseDecomposition {
    pub fn depth(&self) -> usize {
        self.residuals.len()
    }

    /// `noisy + r_1 + ... + r_k`, accumulated left to right.
    pub fn partial_sum(&self, noisy: &Tensor, k: usize) -> Result<Tensor> {
        if k > self.depth() {
            return Err(Error::invalid(format!(
                "partial sum depth {k} exceeds layer count {}",
                self.depth()
            )));
        }
        let mut acc = noisy.clone();
        for r in &self.residuals[..k] {
            acc.add_assign(r)?;
        }
        Ok(acc)
    }

    /// Writes `residual_XX.tnsr` raw dumps plus an `index.csv` listing
    /// `layer,file,shape` into `out_dir`.
    pub fn write_dumps(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut written = Vec::with_capacity(self.depth() + 1);
        let mut index = String::from("layer,file,shape\n");
        for (i, r) in self.residuals.iter().enumerate() {
            let name = format!("residual_{:02}.tnsr", i + 1);
            let path = out_dir.join(&name);
            tensor::write_dump(r, &path)?;
            let shape: Vec<String> = r.shape().iter().map(ToString::to_string).collect();
            index.push_str(&format!("{},{name},{}\n", i + 1, shape.join("x")));
            written.push(path);
        }
        let path = out_dir.join("index.csv");
        std::fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub denoised: Tensor,
    pub decomposition: Option<NoiseDecomposition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseNet {
    config: ModelConfig,
    layers: Vec<ConvKernel>,
}

impl DenoiseNet {
    /// A network whose weights and biases are all zero; it returns its input.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.depth)
            .map(|i| {
                let (o, c) = config.layer_shape(i);
                ConvKernel::zeros(o, c)
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Random initialization. Weights are `N(0, 2 / (9 · in_channels))`; the
    /// noise-component output channel of every layer is further scaled by
    /// 0.1; biases are zero. Weight `j` (flat `(out, in, ky, kx)` order) of
    /// layer `i` is normal number `j` of the stream `derive_key(seed, i)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let key = rng::derive_key(seed, i as u64);
            let fan_in = 9 * layer.in_channels();
            let std = (2.0 / fan_in as f64).sqrt();
            let per_output = fan_in;
            for (j, w) in layer.weights_mut().iter_mut().enumerate() {
                let scale = if j / per_output == 0 { 0.1 } else { 1.0 };
                *w = (rng::normal_at(key, j as u64) * std * scale) as f32;
            }
        }
        Ok(model)
    }

    pub fn from_layers(config: ModelConfig, layers: Vec<ConvKernel>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.depth {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                config.depth,
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (o, c) = config.layer_shape(i);
            if (layer.out_channels(), layer.in_channels()) != (o, c) {
                return Err(Error::ShapeMismatch {
                    context: "layer kernel vs model config",
                    left: layer.weights().shape().to_vec(),
                    right: vec![o, c, 3, 3],
                });
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn layers(&self) -> &[ConvKernel] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvKernel] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvKernel::param_count).sum()
    }

    /// Bitwise equality of every parameter.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights().bit_eq(b.weights())
                    && a.bias().iter().zip(b.bias()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    fn check_input(&self, noisy: &Tensor) -> Result<()> {
        let [_, h, w, c] = noisy.bhwc()?;
        if c != 1 {
            return Err(Error::invalid(format!("network input must have 1 channel, got {c}")));
        }
        if h < 3 || w < 3 {
            return Err(Error::invalid(format!("network input {h}x{w} smaller than 3x3")));
        }
        Ok(())
    }

    /// Runs every layer. Returns the noise components and, when `keep` is
    /// set, the input of every layer (whose positivity is also the ReLU mask
    /// of the previous layer's features).
    fn run(&self, noisy: &Tensor, keep: bool) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        self.check_input(noisy)?;
        let mut residuals = Vec::with_capacity(self.layers.len());
        let mut inputs = Vec::new();
        let mut x = noisy.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = conv2d(&x, layer, Padding::ZeroSame)?;
            let last = i + 1 == self.layers.len();
            let (residual, features) = split_noise_and_features(&z, !last);
            residuals.push(residual);
            let done = std::mem::replace(&mut x, features.unwrap_or_else(|| Tensor::zeros(&[1])));
            if keep {
                inputs.push(done);
            }
        }
        Ok((residuals, inputs))
    }

    /// Forward pass over a BHW1 batch in the normalized `[-0.5, 0.5]` domain.
    pub fn forward(&self, noisy: &Tensor, capture: bool) -> Result<ForwardOutput> {
        let (residuals, _) = self.run(noisy, false)?;
        let denoised = sum_residuals(noisy, &residuals)?;
        if !denoised.data().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("forward pass overflowed to non-finite values"));
        }
        Ok(ForwardOutput {
            denoised,
            decomposition: capture.then_some(NoiseDecomposition { residuals }),
        })
    }

    /// Mean squared error over the central region left after removing
    /// `crop_border` pixels from each side, and its exact gradient with
    /// respect to every layer's weights and biases. A non-finite loss is
    /// reported as [`Error::NonFiniteLoss`] with step 0.
    pub fn backward(&self, noisy: &Tensor, target: &Tensor, crop_border: usize) -> Result<(f64, Vec<ConvKernel>)> {
        noisy.expect_same_shape(target, "backward noisy vs target")?;
        let [nb, h, w, _] = noisy.bhwc()?;
        if 2 * crop_border >= h || 2 * crop_border >= w {
            return Err(Error::invalid(format!(
                "crop border {crop_border} leaves no pixels of a {h}x{w} input"
            )));
        }
        let (residuals, inputs) = self.run(noisy, true)?;
        let denoised = sum_residuals(noisy, &residuals)?;
        drop(residuals);

        let count = (nb * (h - 2 * crop_border) * (w - 2 * crop_border)) as f64;
        let mut loss = 0.0f64;
        let mut grad_denoised = Tensor::zeros(&[nb, h, w, 1]);
        {
            let (den, tgt, g) = (denoised.data(), target.data(), grad_denoised.data_mut());
            for b in 0..nb {
                for y in crop_border..h - crop_border {
                    for x in crop_border..w - crop_border {
                        let i = (b * h + y) * w + x;
                        let diff = den[i] as f64 - tgt[i] as f64;
                        loss += diff * diff;
                        g[i] = (2.0 * diff / count) as f32;
                    }
                }
            }
        }
        loss /= count;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0, loss });
        }

        let depth = self.layers.len();
        let mut grads = vec![None; depth];
        let mut grad_features: Option<Tensor> = None;
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let grad_z = match grad_features.take() {
                None => grad_denoised.clone(),
                Some(gf) => join_noise_and_features(&grad_denoised, &gf, &inputs[i + 1]),
            };
            let (gw, gb) = tensor::conv::conv2d_param_grads(&inputs[i], layer, &grad_z, Padding::ZeroSame)?;
            if i > 0 {
                grad_features = Some(tensor::conv::conv2d_input_grad(
                    inputs[i].shape(),
                    layer,
                    &grad_z,
                    Padding::ZeroSame,
                )?);
            }
            grads[i] = Some(ConvKernel::new(gw, gb)?);
        }
        Ok((loss, grads.into_iter().map(|g| g.expect("every layer visited")).collect()))
    }

    /// Denoises full images: symmetric padding by [`TEST_PAD`], forward pass,
    /// central crop, clamp to `[-0.5, 0.5]`.
    pub fn denoise_image(&self, noisy: &Tensor) -> Result<Tensor> {
        let [_, h, w, _] = noisy.bhwc()?;
        let padded = tensor::symmetric_pad(noisy, TEST_PAD)?;
        let out = self.forward(&padded, false)?.denoised;
        Ok(out.crop(TEST_PAD, TEST_PAD, h, w)?.map(|v| v.clamp(-0.5, 0.5)))
    }

    /// Serializes to the `DNET` format: magic, `u16` version, `u16` depth,
    /// `u16` feature channels, then for each layer its weights in
    /// `(out, in, ky, kx)` order followed by its biases, all little-endian.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let depth = u16::try_from(self.config.depth)
            .map_err(|_| Error::invalid(format!("depth {} does not fit the format", self.config.depth)))?;
        let features = u16::try_from(self.config.feature_channels).map_err(|_| {
            Error::invalid(format!(
                "feature channels {} do not fit the format",
                self.config.feature_channels
            ))
        })?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.param_count());
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&depth.to_le_bytes());
        out.extend_from_slice(&features.to_le_bytes());
        for layer in &self.layers {
            for v in layer.weights().data().iter().chain(layer.bias()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a `DNET` byte stream. Truncation inside the payload reports the
    /// 1-based index of the first incomplete layer.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: MODEL_MAGIC,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedHeader {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let field = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]);
        let version = field(4);
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        let config = ModelConfig::new(field(6) as usize, field(8) as usize)?;

        let mut payload = &bytes[HEADER_LEN..];
        // Validate the payload length before allocating.
        let mut remaining = payload.len();
        for i in 0..config.depth {
            let (o, c) = config.layer_shape(i);
            let need = (o * c * 9 + o) * 4;
            if remaining < need {
                return Err(Error::TruncatedPayload { layer: i + 1 });
            }
            remaining -= need;
        }
        if remaining > 0 {
            return Err(Error::TrailingBytes(remaining));
        }

        let mut take = |n: usize| -> Vec<f32> {
            let (head, rest) = payload.split_at(4 * n);
            payload = rest;
            head.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let mut layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let (o, c) = config.layer_shape(i);
            let weights = Tensor::new(&[o, c, 3, 3], take(o * c * 9))?;
            layers.push(ConvKernel::new(weights, take(o))?);
        }
        Self::from_layers(config, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// `noisy + r_1 + ... + r_D`, accumulated left to right.
fn sum_residuals(noisy: &Tensor, residuals: &[Tensor]) -> Result<Tensor> {
    let mut acc = noisy.clone();
    for r in residuals {
        acc.add_assign(r)?;
    }
    Ok(acc)
}

/// Splits a layer output into its noise channel and (optionally) its
/// ReLU-activated feature channels.
fn split_noise_and_features(z: &Tensor, with_features: bool) -> (Tensor, Option<Tensor>) {
    let dims = z.shape();
    let c = dims[3];
    let pixels = z.len() / c;
    let mut residual = Vec::with_capacity(pixels);
    let mut features = Vec::with_capacity(if with_features { pixels * (c - 1) } else { 0 });
    for px in z.data().chunks_exact(c) {
        residual.push(px[0]);
        if with_features {
            features.extend(px[1..].iter().map(|v| v.max(0.0)));
        }
    }
    let residual = Tensor::from_parts(vec![dims[0], dims[1], dims[2], 1], residual);
    let features = with_features.then(|| Tensor::from_parts(vec![dims[0], dims[1], dims[2], c - 1], features));
    (residual, features)
}

/// Layer-output cotangent: channel 0 from the denoised image, the feature
/// channels from the next layer's input gradient gated by the ReLU mask.
fn join_noise_and_features(grad_noise: &Tensor, grad_features: &Tensor, activated: &Tensor) -> Tensor {
    let dims = grad_features.shape();
    let f = dims[3];
    let mut out = Vec::with_capacity(grad_noise.len() * (f + 1));
    for ((gn, gf), act) in grad_noise
        .data()
        .iter()
        .zip(grad_features.data().chunks_exact(f))
        .zip(activated.data().chunks_exact(f))
    {
        out.push(*gn);
        out.extend(gf.iter().zip(act).map(|(&g, &a)| if a > 0.0 { g } else { 0.0 }));
    }
    Tensor::from_parts(vec![dims[0], dims[1], dims[2], f + 1], out)
}
