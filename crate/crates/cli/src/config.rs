//! Flat run configuration: built-in defaults, then the TOML file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use pointloc::data::{ScanConfig, Split, SynthConfig};
use pointloc::eval::Aggregate;
use pointloc::model::{AttentionMode, ModelScale, PointLocConfig};
use pointloc::optim::{GradcheckConfig, TrainConfig};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory holding `manifest.csv`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint read by eval and infer; defaults to the final training
    /// checkpoint inside `out_dir`.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,

    pub frames: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub beams: usize,
    pub azimuth_steps: usize,
    pub noise_sigma: f64,
    pub half_fov_deg: f64,

    /// "full" or "tiny".
    pub model_scale: String,
    /// "learned", "forced_ones" or "disabled".
    pub attention: String,
    /// Seed of the per-frame resampling to the network input size.
    pub resample_seed: u64,

    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    /// 0 means no limit.
    pub max_steps: u64,

    pub split: String,
    pub aggregate: String,

    pub gradcheck_scale: String,
    pub gradcheck_eps: f64,
    pub gradcheck_coords: usize,
    pub gradcheck_samples: usize,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let gc = GradcheckConfig::default();
        Self {
            data_dir: "data".into(),
            out_dir: "out".into(),
            checkpoint: None,
            seed: 0,
            frames: synth.frames,
            train_fraction: synth.split_fractions[0],
            val_fraction: synth.split_fractions[1],
            test_fraction: synth.split_fractions[2],
            beams: synth.scan.beams,
            azimuth_steps: synth.scan.azimuth_steps,
            noise_sigma: synth.scan.noise_sigma,
            half_fov_deg: synth.scan.half_fov_deg,
            model_scale: "full".into(),
            attention: "learned".into(),
            resample_seed: 0,
            epochs: train.epochs,
            lr: train.lr,
            batch_size: train.batch_size,
            checkpoint_every: train.checkpoint_every,
            max_steps: 0,
            split: "test".into(),
            aggregate: "median".into(),
            gradcheck_scale: "tiny".into(),
            gradcheck_eps: gc.eps,
            gradcheck_coords: gc.coords_per_tensor,
            gradcheck_samples: 2,
            gradcheck_tolerance: gc.tolerance,
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    anyhow!(UsageError(msg))
}

fn scale_named(name: &str) -> anyhow::Result<ModelScale> {
    ModelScale::by_name(name).ok_or_else(|| usage(format!("unknown model scale {name:?} (expected full or tiny)")))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Rejects values no command can run with.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.scale()?;
        self.attention_mode()?;
        self.split()?;
        self.aggregate()?;
        scale_named(&self.gradcheck_scale)?;
        if self.batch_size == 0 || self.gradcheck_samples == 0 {
            return Err(usage("batch_size and gradcheck_samples must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.gradcheck_eps > 0.0) {
            return Err(usage("lr and gradcheck_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> anyhow::Result<ModelScale> {
        scale_named(&self.model_scale)
    }

    pub fn network(&self) -> anyhow::Result<PointLocConfig> {
        Ok(PointLocConfig::from_scale(&self.scale()?))
    }

    pub fn attention_mode(&self) -> anyhow::Result<AttentionMode> {
        match self.attention.as_str() {
            "learned" => Ok(AttentionMode::Learned),
            "forced_ones" => Ok(AttentionMode::ForcedOnes),
            "disabled" => Ok(AttentionMode::Disabled),
            other => Err(usage(format!(
                "unknown attention mode {other:?} (expected learned, forced_ones or disabled)"
            ))),
        }
    }

    pub fn split(&self) -> anyhow::Result<Split> {
        self.split.parse().map_err(usage)
    }

    pub fn aggregate(&self) -> anyhow::Result<Aggregate> {
        self.aggregate.parse().map_err(usage)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            frames: self.frames,
            seed: self.seed,
            scan: ScanConfig {
                beams: self.beams,
                azimuth_steps: self.azimuth_steps,
                noise_sigma: self.noise_sigma,
                half_fov_deg: self.half_fov_deg,
            },
            split_fractions: [self.train_fraction, self.val_fraction, self.test_fraction],
        }
    }

    pub fn train(&self) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed: self.seed,
            model_scale: self.scale()?,
            checkpoint_every: self.checkpoint_every,
            attention: self.attention_mode()?,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
        })
    }

    pub fn gradcheck(&self) -> GradcheckConfig {
        GradcheckConfig {
            eps: self.gradcheck_eps,
            coords_per_tensor: self.gradcheck_coords,
            seed: self.seed,
            tolerance: self.gradcheck_tolerance,
            ..GradcheckConfig::default()
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join(crate::commands::FINAL_CHECKPOINT))
    }
}
