use std::f64::consts::PI;

use super::waveform::Waveform;
use crate::error::{Error, Result};

pub const DECIMATOR_TAPS: usize = 64;

/// Hamming-windowed sinc low-pass with unit DC gain. `cutoff` is in
/// cycles per input sample.
fn windowed_sinc(taps: usize, cutoff: f64) -> Vec<f64> {
    let centre = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - centre;
            let sinc = if t == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * t).sin() / (PI * t)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Integer-factor downsampling behind a 64-tap anti-alias filter whose
/// cutoff sits at 0.45 of the output sampling rate.
pub fn resample_decimate(x: &Waveform, factor: usize) -> Result<Waveform> {
    if factor == 0 {
        return Err(Error::invalid("decimation factor must be at least 1"));
    }
    if x.sample_rate_hz() as usize % factor != 0 {
        return Err(Error::invalid(format!(
            "rate {} Hz is not divisible by factor {factor}",
            x.sample_rate_hz()
        )));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let h = windowed_sinc(DECIMATOR_TAPS, 0.45 / factor as f64);
    let src = x.samples();
    let delay = DECIMATOR_TAPS / 2;
    let out_len = src.len() / factor;
    let out: Vec<f64> = (0..out_len)
        .map(|i| {
            // Centred (non-causal) FIR evaluated only at kept samples.
            let n = i * factor + delay;
            h.iter()
                .enumerate()
                .filter_map(|(k, hk)| n.checked_sub(k).and_then(|j| src.get(j)).map(|v| hk * v))
                .sum()
        })
        .collect();
    Waveform::new(out, x.sample_rate_hz() / factor as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: u32, len: usize) -> Waveform {
        Waveform::new(
            (0..len)
                .map(|n| (2.0 * PI * freq * n as f64 / fs as f64).sin())
                .collect(),
            fs,
        )
        .unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn factor_one_is_identity() {
        let x = sine(100.0, 16000, 1000);
        assert_eq!(resample_decimate(&x, 1).unwrap(), x);
    }

    #[test]
    fn factor_zero_rejected() {
        assert!(resample_decimate(&sine(1.0, 4000, 10), 0).is_err());
    }

    #[test]
    fn passband_sine_preserved() {
        let x = sine(100.0, 16000, 64000);
        let y = resample_decimate(&x, 4).unwrap();
        assert_eq!(y.sample_rate_hz(), 4000);
        assert_eq!(y.len(), 16000);
        // Compare against a directly generated 4 kHz sine, away from the edges.
        let reference = sine(100.0, 4000, 16000);
        let got = rms(&y.samples()[100..15900]);
        let want = rms(&reference.samples()[100..15900]);
        assert!((got / want - 1.0).abs() < 0.02);
        let err: Vec<f64> = y.samples()[100..15900]
            .iter()
            .zip(&reference.samples()[100..15900])
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&err) < 0.03 * want);
    }

    #[test]
    fn aliasing_tone_suppressed() {
        let x = sine(3500.0, 16000, 64000);
        let y = resample_decimate(&x, 4).unwrap();
        assert!(rms(&y.samples()[50..]) < 0.05 * rms(x.samples()));
    }
}
