//! ADAM and the training / fine-tuning loops.

use crate::data::{self, GrayImage};
use crate::model::{DenoiseNet, ModelConfig};
use crate::rng::{derive_key, CounterRng};
use crate::tensor::{ConvKernel, Tensor};
use crate::{Error, Result};

/// Stream tags under the training seed.
const PATCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub crop_border: usize,
    /// Number of minibatches.
    pub steps: usize,
    /// Noise standard deviation on the 8-bit scale.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            patch_size: 128,
            crop_border: 21,
            steps: 160_000,
            noise_sigma: 25.0,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if self.patch_size <= 2 * self.crop_border || self.patch_size < 3 {
            return Err(Error::invalid(format!(
                "patch size {} must exceed twice the crop border {} (and be >= 3)",
                self.patch_size, self.crop_border
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// First and second moments per parameter buffer, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments for buffers of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f32>> = lengths.into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// Zero state matching a model's parameter buffers (weights then bias,
    /// layer by layer).
    pub fn for_model(model: &DenoiseNet) -> Self {
        Self::new(
            model
                .layers()
                .iter()
                .flat_map(|l| [l.weights().len(), l.bias().len()]),
        )
    }
}

/// One bias-corrected ADAM update over parallel parameter/gradient buffers:
///
/// ```text
/// t += 1
/// m = β1 m + (1 - β1) g
/// v = β2 v + (1 - β2) g²
/// θ -= α · (m / (1 - β1^t)) / (sqrt(v / (1 - β2^t)) + ε)
/// ```
///
/// Moments are stored in `f32`; each update is evaluated in `f64`.
pub fn adam_step(params: &mut [&mut [f32]], grads: &[&[f32]], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam buffer count mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch {
                context: "adam parameter vs gradient vs moment length",
                left: vec![p.len(), g.len()],
                right: vec![state.m[i].len()],
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powf(state.t as f64);
    let bc2 = 1.0 - b2.powf(state.t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = config.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + config.epsilon);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Applies one ADAM step to every layer of `model`.
pub fn adam_step_model(model: &mut DenoiseNet, grads: &[ConvKernel], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != model.layers().len() {
        return Err(Error::invalid(format!(
            "{} gradient layers for a {}-layer model",
            grads.len(),
            model.layers().len()
        )));
    }
    let mut params: Vec<&mut [f32]> = Vec::with_capacity(2 * grads.len());
    for layer in model.layers_mut() {
        let (w, b) = layer.params_mut();
        params.push(w);
        params.push(b);
    }
    let grad_bufs: Vec<&[f32]> = grads
        .iter()
        .flat_map(|g| [g.weights().data(), g.bias()])
        .collect();
    adam_step(&mut params, &grad_bufs, state, config)
}

/// Receives per-step progress from [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, _step: usize, _loss: f64) {}

    /// Called every `checkpoint_every` steps with the current weights.
    fn on_checkpoint(&mut self, _step: usize, _model: &DenoiseNet) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiseNet,
    /// One loss per step, in order.
    pub history: Vec<f64>,
}

/// Builds minibatch `step`: for each slot, an image index `below(n)` and a
/// patch from the patch stream, then Gaussian noise keyed by
/// `derive_key(derive_key(seed, 2), step · batch + slot)`.
pub fn make_batch(
    images: &[GrayImage],
    config: &TrainConfig,
    step: usize,
    patch_rng: &mut CounterRng,
) -> Result<(Tensor, Tensor)> {
    let noise_root = derive_key(config.seed, NOISE_STREAM);
    let mut clean = Vec::with_capacity(config.batch_size);
    let mut noisy = Vec::with_capacity(config.batch_size);
    for slot in 0..config.batch_size {
        let index = patch_rng.below(images.len() as u64) as usize;
        let patch = data::sample_patch(&images[index], config.patch_size, patch_rng)?;
        let key = derive_key(noise_root, (step * config.batch_size + slot) as u64);
        noisy.push(data::add_gaussian_noise(&patch, config.noise_sigma, key)?);
        clean.push(patch);
    }
    Ok((Tensor::stack(&noisy)?, Tensor::stack(&clean)?))
}

/// Trains `model` for `config.steps` minibatches. Deterministic for a given
/// seed, image list and starting model.
pub fn train(model: DenoiseNet, images: &[GrayImage], config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if let Some(small) = images
        .iter()
        .position(|im| im.height() < config.patch_size || im.width() < config.patch_size)
    {
        return Err(Error::invalid(format!(
            "training image {small} ({}x{}) is smaller than the {} patch size",
            images[small].height(),
            images[small].width(),
            config.patch_size
        )));
    }
    let mut model = model;
    let mut state = AdamState::for_model(&model);
    let mut patch_rng = CounterRng::new(derive_key(config.seed, PATCH_STREAM));
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (noisy, clean) = make_batch(images, config, step, &mut patch_rng)?;
        let (loss, grads) = model
            .backward(&noisy, &clean, config.crop_border)
            .map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { step: step + 1, loss },
                e => e,
            })?;
        adam_step_model(&mut model, &grads, &mut state, config)?;
        history.push(loss);
        observer.on_step(step + 1, loss);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            observer.on_checkpoint(step + 1, &model)?;
        }
    }
    Ok(TrainOutcome { model, history })
}

/// Continues training a pretrained model on class-specific images with a
/// fresh optimizer state. The model must have the `expected` architecture.
pub fn finetune(
    pretrained: DenoiseNet,
    expected: ModelConfig,
    images: &[GrayImage],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    if pretrained.config() != expected {
        return Err(Error::invalid(format!(
            "pretrained model has {:?}, expected {:?}",
            pretrained.config(),
            expected
        )));
    }
    train(pretrained, images, config, observer)
}
