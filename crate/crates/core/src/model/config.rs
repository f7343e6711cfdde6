use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    LearnedConv,
    StftBaseline,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::LearnedConv => "learned_conv",
            EncoderKind::StftBaseline => "stft_baseline",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned_conv" => Ok(EncoderKind::LearnedConv),
            "stft_baseline" => Ok(EncoderKind::StftBaseline),
            _ => Err(Error::invalid(format!("unknown encoder kind {s:?}"))),
        }
    }
}

/// Architecture hyperparameters of the separator.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorConfig {
    pub encoder_kind: EncoderKind,
    pub kernel_size: usize,
    pub stride: usize,
    pub feature_size: usize,
    pub mask_feature_size: usize,
    pub conv_kernel: usize,
    pub conv_layers: usize,
    pub num_heads: usize,
    pub transformer_depth: usize,
    pub num_sources: usize,
    pub use_conv_blocks: bool,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            encoder_kind: EncoderKind::LearnedConv,
            kernel_size: 512,
            stride: 256,
            feature_size: 512,
            mask_feature_size: 256,
            conv_kernel: 3,
            conv_layers: 6,
            num_heads: 4,
            transformer_depth: 4,
            num_sources: 2,
            use_conv_blocks: true,
        }
    }
}

const KEYS: [&str; 11] = [
    "encoder_kind",
    "kernel_size",
    "stride",
    "feature_size",
    "mask_feature_size",
    "conv_kernel",
    "conv_layers",
    "num_heads",
    "transformer_depth",
    "num_sources",
    "use_conv_blocks",
];

impl SeparatorConfig {
    /// Narrow, shallow mask generator used for CPU-scale training runs; the
    /// encoder keeps its full width.
    pub fn reduced() -> Self {
        Self {
            mask_feature_size: 128,
            transformer_depth: 2,
            ..Self::default()
        }
    }

    /// Number of feature channels the mask generator sees and produces.
    pub fn feature_bins(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::LearnedConv => self.feature_size,
            EncoderKind::StftBaseline => self.kernel_size / 2 + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.kernel_size < 2 {
            return bad(format!("kernel_size {} too small", self.kernel_size));
        }
        if self.stride == 0 || self.stride > self.kernel_size {
            return bad(format!("stride {} must lie in 1..={}", self.stride, self.kernel_size));
        }
        if self.encoder_kind == EncoderKind::LearnedConv && (self.feature_size == 0 || self.feature_size % 2 != 0) {
            return bad(format!("feature_size {} must be even and positive", self.feature_size));
        }
        if self.mask_feature_size == 0 || self.mask_feature_size % 2 != 0 {
            return bad(format!("mask_feature_size {} must be even and positive", self.mask_feature_size));
        }
        if self.num_heads == 0 || self.mask_feature_size % self.num_heads != 0 {
            return bad(format!(
                "mask_feature_size {} not divisible by {} heads",
                self.mask_feature_size, self.num_heads
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd for same padding", self.conv_kernel));
        }
        if self.num_sources != 2 {
            return bad(format!("exactly 2 sources are supported, got {}", self.num_sources));
        }
        if self.transformer_depth == 0 {
            return bad("transformer_depth must be positive".into());
        }
        if self.encoder_kind == EncoderKind::StftBaseline {
            crate::signal::StftPlan::new(self.kernel_size, self.stride)?;
        }
        Ok(())
    }

    /// Padded length and frame count for an input of `len` samples.
    pub fn frames_for(&self, len: usize) -> Result<(usize, usize)> {
        if len < self.kernel_size {
            return Err(Error::invalid(format!(
                "input of {len} samples is shorter than the {}-sample kernel",
                self.kernel_size
            )));
        }
        let frames = (len - self.kernel_size).div_ceil(self.stride) + 1;
        Ok(((frames - 1) * self.stride + self.kernel_size, frames))
    }

    pub fn to_kv(&self) -> String {
        let vals = [
            self.encoder_kind.to_string(),
            self.kernel_size.to_string(),
            self.stride.to_string(),
            self.feature_size.to_string(),
            self.mask_feature_size.to_string(),
            self.conv_kernel.to_string(),
            self.conv_layers.to_string(),
            self.num_heads.to_string(),
            self.transformer_depth.to_string(),
            self.num_sources.to_string(),
            self.use_conv_blocks.to_string(),
        ];
        KEYS.iter().zip(vals).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::invalid(format!("{key}: expected an integer, got {v:?}")))
        }
        match key {
            "encoder_kind" => self.encoder_kind = value.parse()?,
            "kernel_size" => self.kernel_size = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "feature_size" => self.feature_size = num(key, value)?,
            "mask_feature_size" => self.mask_feature_size = num(key, value)?,
            "conv_kernel" => self.conv_kernel = num(key, value)?,
            "conv_layers" => self.conv_layers = num(key, value)?,
            "num_heads" => self.num_heads = num(key, value)?,
            "transformer_depth" => self.transformer_depth = num(key, value)?,
            "num_sources" => self.num_sources = num(key, value)?,
            "use_conv_blocks" => {
                self.use_conv_blocks = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("use_conv_blocks: expected true/false, got {value:?}")))?
            }
            _ => return Err(Error::invalid(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    pub fn is_model_key(key: &str) -> bool {
        KEYS.contains(&key)
    }

    /// Parses the text produced by [`to_kv`](Self::to_kv); every key is required.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line without '=': {line:?}")))?;
            let k = k.trim();
            cfg.set(k, v.trim()).map_err(|e| Error::Format(e.to_string()))?;
            seen.push(k.to_string());
        }
        if let Some(missing) = KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(Error::Format(format!("config block lacks {missing}")));
        }
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }
}
