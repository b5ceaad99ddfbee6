//! Flat run configuration: JSON file first, command-line overrides on top.

use std::path::PathBuf;

use clap::Args;
use denoisenet::model::ModelConfig;
use denoisenet::optim::TrainConfig;
use serde::{Deserialize, Serialize};

/// Every key a run can set. JSON files use these names verbatim; each key
/// is also a `--key value` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub depth: usize,
    pub feature_channels: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub crop_border: usize,
    pub steps: usize,
    pub noise_sigma: f64,
    pub checkpoint_every: usize,
    /// Console progress cadence in steps.
    pub log_every: usize,
    pub seed: Option<u64>,
    /// Dataset manifest for `train` and `finetune`.
    pub train_manifest: Option<PathBuf>,
    /// Restricts `finetune` to manifest entries of this class.
    pub class: Option<String>,
    /// Input model for `finetune`, `denoise` and `diagnose`.
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Noisy image for `denoise` and `diagnose`.
    pub input: Option<PathBuf>,
    /// Denoised image written by `denoise`.
    pub output: Option<PathBuf>,
    /// Ground truth for `diagnose`.
    pub clean: Option<PathBuf>,
    /// Ground-truth directory for `eval`.
    pub clean_dir: Option<PathBuf>,
    /// Ground-truth manifest with class labels for `eval`.
    pub eval_manifest: Option<PathBuf>,
    /// Directories of denoised images for `eval`, one per denoiser, matched
    /// to ground truth by file name. `name=path` sets the denoiser id.
    pub denoised_dirs: Vec<String>,
    /// Denoiser and baseline ids of the `eval` performance profile.
    pub profile_denoiser: Option<String>,
    pub profile_baseline: Option<String>,
    /// Also write raw tensor dumps in `diagnose`.
    pub dump_tensors: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            depth: m.depth,
            feature_channels: m.feature_channels,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            crop_border: t.crop_border,
            steps: t.steps,
            noise_sigma: t.noise_sigma,
            checkpoint_every: t.checkpoint_every,
            log_every: 100,
            seed: None,
            train_manifest: None,
            class: None,
            model: None,
            out_dir: None,
            input: None,
            output: None,
            clean: None,
            clean_dir: None,
            eval_manifest: None,
            denoised_dirs: Vec::new(),
            profile_denoiser: None,
            profile_baseline: None,
            dump_tensors: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            feature_channels: self.feature_channels,
        }
    }

    /// Training hyperparameters; `seed` must already be resolved.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            crop_border: self.crop_border,
            steps: self.steps,
            noise_sigma: self.noise_sigma,
            seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

/// Command-line overrides, one per [`RunConfig`] key.
#[derive(Debug, Clone, Default, Args)]
#[command(rename_all = "snake_case")]
pub struct Overrides {
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub feature_channels: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub crop_border: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// Repeatable; replaces the configured list.
    #[arg(long)]
    pub denoised_dirs: Vec<String>,
    #[arg(long)]
    pub profile_denoiser: Option<String>,
    #[arg(long)]
    pub profile_baseline: Option<String>,
    #[arg(long)]
    pub dump_tensors: Option<bool>,
}

impl Overrides {
    pub fn apply(self, config: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),* ; $($opt:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
                $(if let Some(v) = self.$opt { config.$opt = Some(v); })*
            };
        }
        set!(
            depth, feature_channels, learning_rate, beta1, beta2, epsilon, batch_size, patch_size,
            crop_border, steps, noise_sigma, checkpoint_every, log_every, dump_tensors;
            seed, train_manifest, class, model, out_dir, input, output, clean, clean_dir,
            eval_manifest, profile_denoiser, profile_baseline
        );
        if !self.denoised_dirs.is_empty() {
            config.denoised_dirs = self.denoised_dirs;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"learnig_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learnig_rate"), "{err}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut config = RunConfig::from_json(r#"{"steps": 10, "seed": 3, "denoised_dirs": ["a"]}"#).unwrap();
        Overrides {
            steps: Some(20),
            denoised_dirs: vec!["b".into(), "c".into()],
            ..Overrides::default()
        }
        .apply(&mut config);
        assert_eq!(config.steps, 20);
        assert_eq!(config.seed, Some(3));
        assert_eq!(config.denoised_dirs, ["b", "c"]);
    }

    #[test]
    fn floats_survive_a_json_round_trip() {
        let config = RunConfig::from_json(r#"{"learning_rate": 5E90, "beta1": 0.30000000000000004}"#).unwrap();
        let again = RunConfig::from_json(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(again, config);
        assert_eq!(config.learning_rate, "5e90".parse::<f64>().unwrap());
    }

    #[test]
    fn defaults_mirror_the_library() {
        let c = RunConfig::default();
        assert_eq!(c.model_config(), ModelConfig::default());
        assert_eq!(c.train_config(0), TrainConfig::default());
    }
}
