//! WAV files, run configuration files and dataset export.

mod config;
mod wav;

use std::path::{Path, PathBuf};

pub use config::{RunConfig, CONFIG_KEYS};
pub use wav::{wav_read, wav_write, wav_write_pcm16};

use crate::error::Result;
use crate::mixture::MixtureSample;

/// Writes `<stem>_{mixture,heart,lung,noise}.wav` into `dir` and returns the paths.
pub fn export_sample(dir: impl AsRef<Path>, stem: &str, x: &MixtureSample) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.as_ref())?;
    let mut out = Vec::with_capacity(4);
    for (name, w) in [("mixture", &x.mixture), ("heart", &x.target_heart), ("lung", &x.target_lung), ("noise", &x.noise)] {
        let p = dir.as_ref().join(format!("{stem}_{name}.wav"));
        wav_write(&p, w)?;
        out.push(p);
    }
    Ok(out)
}
