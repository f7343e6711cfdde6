use crate::error::{Error, Result};

/// Canonical processing rate for every model-facing signal.
pub const SAMPLE_RATE_HZ: u32 = 4000;

/// A mono sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("waveform sample {i}"),
            });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Waveform at the canonical 4 kHz rate.
    pub fn at_canonical_rate(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz: sample_rate_hz.max(1),
        }
    }

    pub fn from_f32(samples: &[f32], sample_rate_hz: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&v| v as f64).collect(), sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&v| v as f32).collect()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn require_non_empty(&self, op: &str) -> Result<()> {
        if self.samples.is_empty() {
            Err(Error::invalid(format!("{op}: empty waveform")))
        } else {
            Ok(())
        }
    }

    /// Same rate, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Scales `x` to unit mean-squared amplitude.
pub fn normalize_power(x: &Waveform) -> Result<Waveform> {
    x.require_non_empty("normalize_power")?;
    let p = x.power();
    if p <= 0.0 {
        return Err(Error::DegenerateInput(
            "cannot normalize the power of an all-zero signal".into(),
        ));
    }
    let g = p.sqrt().recip();
    Ok(x.with_samples(x.samples.iter().map(|v| v * g).collect()))
}

/// Rescales a power-normalized signal to a power of `10^(rel_db/10)`.
pub fn rescale_relative_db(x: &Waveform, rel_db: f64) -> Waveform {
    let g = db_to_amplitude(rel_db);
    x.with_samples(x.samples.iter().map(|v| v * g).collect())
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 4000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn constant_two_normalizes_to_one() {
        let w = Waveform::at_canonical_rate(vec![2.0; 100]).unwrap();
        let n = normalize_power(&w).unwrap();
        assert!(n.samples().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn sine_normalizes_to_sqrt2_amplitude() {
        // 250 Hz at 4 kHz: an exact number of periods in 4000 samples.
        let a = 0.3;
        let x: Vec<f64> = (0..4000)
            .map(|n| a * (2.0 * std::f64::consts::PI * 250.0 * n as f64 / 4000.0).sin())
            .collect();
        let n = normalize_power(&Waveform::at_canonical_rate(x).unwrap()).unwrap();
        assert!((n.peak() - 2f64.sqrt()).abs() < 1e-9);
        assert!((n.power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let w = Waveform::zeros(10, 4000);
        assert!(matches!(
            normalize_power(&w),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn relative_db_scaling() {
        let w = normalize_power(&Waveform::at_canonical_rate(vec![1.0, -3.0, 2.0]).unwrap()).unwrap();
        assert_eq!(rescale_relative_db(&w, 0.0), w);
        assert!((rescale_relative_db(&w, 10.0).power() - 10.0).abs() < 1e-6);
        assert!((rescale_relative_db(&w, -20.0).power() - 0.01).abs() < 1e-8);
    }
}
