use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mixture::{DatasetParams, NoiseGroup, Partition};
use crate::model::SeparatorConfig;
use crate::train::{Ablation, TrainConfig};

/// Keys accepted outside the `model.` namespace.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "config",
    "model",
    "manifest",
    "out",
    "partition",
    "noise",
    "batch_size",
    "threads",
    "in",
    "out_heart",
    "out_lung",
    "reference",
    "ablation",
    "count",
    "export_dir",
    "train.epochs",
    "train.steps_per_epoch",
    "train.lr",
    "train.weight_decay",
    "train.clip_norm",
    "train.scheduler_factor",
    "train.scheduler_patience",
    "train.finetune_epoch",
    "train.crop_s",
    "train.include_steth",
    "model.preset",
    "data.duration_s",
    "data.subjects",
    "data.cry_recordings",
    "data.steth_recordings",
    "data.bubble_devices",
    "data.vent_devices",
    "data.mixtures_per_cell",
    "data.val_count",
];

fn is_known(key: &str) -> bool {
    CONFIG_KEYS.contains(&key) || key.strip_prefix("model.").is_some_and(SeparatorConfig::is_model_key)
}

/// Flat `key = value` settings from a config file and command-line flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim()).map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets or replaces one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::invalid(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies every entry of `other` over `self`.
    pub fn overlay(&mut self, other: &RunConfig) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}"))))
            .transpose()
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.parsed("seed")?.unwrap_or(0))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::invalid(format!("missing required setting --{}", key.replace('_', "-"))))
    }

    pub fn partition(&self) -> Result<Option<Partition>> {
        self.parsed("partition")
    }

    pub fn noise(&self) -> Result<Option<NoiseGroup>> {
        self.get("noise")
            .map(|v| match v {
                "none" => Ok(NoiseGroup::NoNoise),
                "general" => Ok(NoiseGroup::General),
                "resp" => Ok(NoiseGroup::RespSupport),
                _ => Err(Error::invalid(format!("noise: expected none, general or resp, got {v:?}"))),
            })
            .transpose()
    }

    pub fn threads(&self) -> Result<Option<usize>> {
        self.parsed("threads")
    }

    pub fn batch_size(&self) -> Result<Option<usize>> {
        self.parsed("batch_size")
    }

    pub fn count(&self) -> Result<Option<usize>> {
        self.parsed("count")
    }

    pub fn ablation(&self) -> Result<Option<Ablation>> {
        self.parsed("ablation")
    }

    /// Model settings: `model.preset` (`default` or `reduced`) then `model.<key>` overrides.
    pub fn separator_config(&self) -> Result<SeparatorConfig> {
        let mut c = match self.get("model.preset") {
            None | Some("default") => SeparatorConfig::default(),
            Some("reduced") => SeparatorConfig::reduced(),
            Some(p) => return Err(Error::invalid(format!("model.preset: unknown preset {p:?}"))),
        };
        for (k, v) in &self.values {
            if let Some(m) = k.strip_prefix("model.").filter(|m| *m != "preset") {
                c.set(m, v)?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig { seed: self.seed()?, ..TrainConfig::default() };
        if let Some(v) = self.batch_size()? {
            c.batch_size = v;
        }
        macro_rules! take {
            ($($key:literal => $field:ident),*) => {
                $(if let Some(v) = self.parsed($key)? { c.$field = v; })*
            };
        }
        take!(
            "train.epochs" => epochs,
            "train.steps_per_epoch" => steps_per_epoch,
            "train.lr" => lr,
            "train.weight_decay" => weight_decay,
            "train.clip_norm" => clip_norm,
            "train.scheduler_factor" => scheduler_factor,
            "train.scheduler_patience" => scheduler_patience,
            "train.finetune_epoch" => finetune_epoch,
            "train.include_steth" => include_steth
        );
        match self.get("train.crop_s") {
            Some("none") => c.crop_s = None,
            Some(_) => c.crop_s = self.parsed("train.crop_s")?,
            None => {}
        }
        c.validate()?;
        Ok(c)
    }

    pub fn dataset_params(&self) -> Result<DatasetParams> {
        let mut p = DatasetParams { seed: self.seed()?, ..DatasetParams::default() };
        fn triple(key: &str, v: &str) -> Result<[u32; 3]> {
            let parts: Vec<u32> = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("{key}: expected three integers, got {v:?}")))?;
            parts.try_into().map_err(|_| Error::invalid(format!("{key}: expected three integers, got {v:?}")))
        }
        if let Some(v) = self.parsed("data.duration_s")? {
            p.duration_s = v;
        }
        for (key, field) in [
            ("data.subjects", &mut p.subjects),
            ("data.cry_recordings", &mut p.cry_recordings),
            ("data.steth_recordings", &mut p.steth_recordings),
        ] {
            if let Some(v) = self.get(key) {
                *field = triple(key, v)?;
            }
        }
        if let Some(v) = self.parsed("data.bubble_devices")? {
            p.bubble_devices = v;
        }
        if let Some(v) = self.parsed("data.vent_devices")? {
            p.vent_devices = v;
        }
        if let Some(v) = self.parsed("data.mixtures_per_cell")? {
            p.mixtures_per_cell = v;
        }
        if let Some(v) = self.parsed("data.val_count")? {
            p.val_count = v;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let c = RunConfig::parse("# header\nseed = 7  # trailing\n\nmodel.feature_size=64\n").unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        assert_eq!(c.separator_config().unwrap().feature_size, 64);
        assert!(RunConfig::parse("sede = 7").is_err());
        assert!(RunConfig::parse("model.nonsense = 1").is_err());
        assert!(RunConfig::parse("seed 7").is_err());
    }

    #[test]
    fn overlay_wins() {
        let mut file = RunConfig::parse("seed = 1\nnoise = resp\n").unwrap();
        let mut flags = RunConfig::default();
        flags.set("seed", "9").unwrap();
        file.overlay(&flags);
        assert_eq!(file.seed().unwrap(), 9);
        assert_eq!(file.noise().unwrap(), Some(NoiseGroup::RespSupport));
    }

    #[test]
    fn typed_sections() {
        let c = RunConfig::parse(
            "model.preset = reduced\ntrain.crop_s = none\ntrain.lr = 0.001\nbatch_size = 4\ndata.subjects = 4, 2, 3\n",
        )
        .unwrap();
        assert_eq!(c.separator_config().unwrap(), SeparatorConfig::reduced());
        let t = c.train_config().unwrap();
        assert_eq!((t.crop_s, t.lr, t.batch_size), (None, 0.001, 4));
        assert_eq!(c.dataset_params().unwrap().subjects, [4, 2, 3]);
        assert!(RunConfig::parse("data.subjects = 1,2").unwrap().dataset_params().is_err());
        assert!(RunConfig::parse("train.lr = -1").unwrap().train_config().is_err());
    }
}
