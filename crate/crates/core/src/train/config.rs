use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mixture::TrainSampling;
use crate::model::{EncoderKind, SeparatorConfig};
use crate::signal::SAMPLE_RATE_HZ;

/// Optimization and data-schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Freshly synthesized batches per epoch when training on the stream.
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub phase1_noise_db: (f64, f64),
    pub finetune_noise_db: (f64, f64),
    pub finetune_epoch: usize,
    /// `None` trains on full-length mixtures.
    pub crop_s: Option<f64>,
    pub include_steth: bool,
    pub seed: u64,
    /// Writes `<prefix>.best` and `<prefix>.last` when set.
    pub checkpoint_prefix: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            steps_per_epoch: 250,
            lr: 1e-4,
            weight_decay: 0.1,
            clip_norm: 5.0,
            scheduler_factor: 0.5,
            scheduler_patience: 4,
            phase1_noise_db: (-20.0, 0.0),
            finetune_noise_db: (-10.0, 10.0),
            finetune_epoch: 20,
            crop_s: Some(8.0),
            include_steth: false,
            seed: 0,
            checkpoint_prefix: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos("lr", self.lr)?;
        pos("clip_norm", self.clip_norm)?;
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::invalid("epochs, batch_size and steps_per_epoch must be positive"));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::invalid("scheduler_factor must lie in (0, 1)"));
        }
        if self.finetune_epoch > self.epochs {
            return Err(Error::invalid("finetune_epoch beyond the last epoch"));
        }
        for (lo, hi) in [self.phase1_noise_db, self.finetune_noise_db] {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("empty noise range [{lo}, {hi}]")));
            }
        }
        if let Some(c) = self.crop_s {
            pos("crop_s", c)?;
        }
        Ok(())
    }

    /// Sampling rules in force during `epoch` (zero-based).
    pub fn sampling(&self, epoch: usize) -> TrainSampling {
        TrainSampling {
            noise_db: if epoch >= self.finetune_epoch { self.finetune_noise_db } else { self.phase1_noise_db },
            crop_len: self.crop_s.map(|c| (c * SAMPLE_RATE_HZ as f64).round() as usize),
            include_steth: self.include_steth,
        }
    }
}

/// Single-variable departures from the baseline recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    NoCrop,
    WideSnr,
    WithSteth,
    StftEncoder,
    Kernel(usize),
    Feature(usize),
    NoConv,
}

impl Ablation {
    pub const ALL: [Ablation; 10] = [
        Ablation::Baseline,
        Ablation::NoCrop,
        Ablation::WideSnr,
        Ablation::WithSteth,
        Ablation::StftEncoder,
        Ablation::Kernel(256),
        Ablation::Kernel(1024),
        Ablation::Feature(256),
        Ablation::Feature(1024),
        Ablation::NoConv,
    ];

    /// Applies the override to copies of the training and model settings.
    pub fn apply(self, train: &TrainConfig, model: &SeparatorConfig) -> (TrainConfig, SeparatorConfig) {
        let (mut t, mut m) = (train.clone(), model.clone());
        match self {
            Ablation::Baseline => {}
            Ablation::NoCrop => t.crop_s = None,
            Ablation::WideSnr => t.phase1_noise_db = t.finetune_noise_db,
            Ablation::WithSteth => t.include_steth = true,
            Ablation::StftEncoder => m.encoder_kind = EncoderKind::StftBaseline,
            Ablation::Kernel(k) => {
                m.kernel_size = k;
                m.stride = k / 2;
            }
            Ablation::Feature(f) => m.feature_size = f,
            Ablation::NoConv => m.use_conv_blocks = false,
        }
        (t, m)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::Baseline => f.write_str("baseline"),
            Ablation::NoCrop => f.write_str("no-crop"),
            Ablation::WideSnr => f.write_str("wide-snr"),
            Ablation::WithSteth => f.write_str("with-steth"),
            Ablation::StftEncoder => f.write_str("stft"),
            Ablation::Kernel(k) => write!(f, "kernel-{k}"),
            Ablation::Feature(n) => write!(f, "feature-{n}"),
            Ablation::NoConv => f.write_str("no-conv"),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation {s:?}")))
    }
}
