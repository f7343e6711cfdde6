use std::fmt;
use std::ops::{Range, RangeInclusive};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::{normalize_power, rescale_relative_db, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixingMode {
    Additive,
    Convolutive,
}

impl fmt::Display for MixingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixingMode::Additive => "additive",
            MixingMode::Convolutive => "convolutive",
        })
    }
}

impl FromStr for MixingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(MixingMode::Additive),
            "convolutive" => Ok(MixingMode::Convolutive),
            _ => Err(Error::invalid(format!("unknown mixing mode {s:?}"))),
        }
    }
}

/// Gaussian coefficients scaled to unit energy, with a length drawn
/// uniformly from `len_range`.
pub fn random_unit_fir<R: Rng + ?Sized>(len_range: RangeInclusive<usize>, rng: &mut R) -> Vec<f64> {
    let len = rng.gen_range(len_range);
    loop {
        let a: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let e: f64 = a.iter().map(|v| v * v).sum();
        if e > 1e-12 {
            let s = e.sqrt();
            return a.into_iter().map(|v| v / s).collect();
        }
    }
}

/// `(a * x)(t) = sum_k a[k] x[t-k]`, truncated to the length of `x`.
pub fn convolve_causal(x: &[f64], a: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| a.iter().enumerate().take(t + 1).map(|(k, ak)| ak * x[t - k]).sum())
        .collect()
}

/// The three source contributions and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub mixture: Waveform,
    pub heart: Waveform,
    pub lung: Waveform,
    /// All zeros when there is no noise source.
    pub noise: Waveform,
}

/// Noise input to [`mix`]: the raw recording plus, for a stethoscope
/// disconnect, the interval over which heart and lung are silenced.
#[derive(Debug, Clone, Copy)]
pub struct NoiseInput<'a> {
    pub wave: &'a Waveform,
    pub rel_db: f64,
    pub silence: Option<&'a Range<usize>>,
}

/// Power-normalizes every source, scales lung and noise relative to the
/// heart, optionally filters each with its FIR and sums.
pub fn mix(
    heart: &Waveform,
    lung: &Waveform,
    rel_db_lung: f64,
    noise: Option<NoiseInput<'_>>,
    firs: Option<&[Vec<f64>; 3]>,
) -> Result<Mixed> {
    let n = heart.len();
    if lung.len() != n || noise.is_some_and(|z| z.wave.len() != n) {
        return Err(Error::invalid(format!(
            "source lengths differ: heart {n}, lung {}, noise {:?}",
            lung.len(),
            noise.map(|z| z.wave.len())
        )));
    }
    let rate = heart.sample_rate_hz();
    let mut h = normalize_power(heart)?.into_samples();
    let mut l = rescale_relative_db(&normalize_power(lung)?, rel_db_lung).into_samples();
    let mut z = match noise {
        Some(zi) => rescale_relative_db(&normalize_power(zi.wave)?, zi.rel_db).into_samples(),
        None => vec![0.0; n],
    };
    let silence = noise.and_then(|zi| zi.silence.cloned());
    let zero = |v: &mut Vec<f64>| {
        if let Some(iv) = &silence {
            let end = iv.end.min(v.len());
            v[iv.start.min(end)..end].iter_mut().for_each(|s| *s = 0.0);
        }
    };
    zero(&mut h);
    zero(&mut l);
    if let Some([ah, al, az]) = firs {
        h = convolve_causal(&h, ah);
        l = convolve_causal(&l, al);
        z = convolve_causal(&z, az);
        zero(&mut h);
        zero(&mut l);
    }
    let m: Vec<f64> = (0..n).map(|i| h[i] + l[i] + z[i]).collect();
    Ok(Mixed {
        mixture: Waveform::new(m, rate)?,
        heart: Waveform::new(h, rate)?,
        lung: Waveform::new(l, rate)?,
        noise: Waveform::new(z, rate)?,
    })
}
