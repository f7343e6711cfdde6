use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::series::RateSeries;
use crate::error::{Error, Result};
use crate::signal::{design_butterworth_bandpass, design_butterworth_lowpass, power, Waveform};

pub const HR_BAND_HZ: (f64, f64) = (50.0, 250.0);
pub const HR_ENVELOPE_LOWPASS_HZ: f64 = 20.0;
pub const HR_ENVELOPE_RATE_HZ: u32 = 400;
pub const HR_WINDOW_S: usize = 5;
pub const HR_MIN_BPM: f64 = 70.0;
pub const HR_MAX_BPM: f64 = 220.0;
/// Minimum share of window power inside the heart band.
pub const HR_MIN_BAND_FRACTION: f64 = 0.05;
/// Minimum normalized autocorrelation at the selected lag.
pub const HR_MIN_PERIODICITY: f64 = 0.3;

/// Magnitude of the analytic signal.
fn analytic_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *b *= gain / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Band-limited signal and its smoothed envelope at `HR_ENVELOPE_RATE_HZ`.
pub fn heart_envelope(x: &Waveform) -> Result<(Vec<f64>, Vec<f64>)> {
    let fs = x.sample_rate_hz();
    if fs % HR_ENVELOPE_RATE_HZ != 0 {
        return Err(Error::invalid(format!("sample rate {fs} Hz is not a multiple of {HR_ENVELOPE_RATE_HZ}")));
    }
    let fs_f = fs as f64;
    let band = design_butterworth_bandpass(4, HR_BAND_HZ.0, HR_BAND_HZ.1, fs_f)?.process(x.samples());
    let env = design_butterworth_lowpass(4, HR_ENVELOPE_LOWPASS_HZ, fs_f)?.process(&analytic_magnitude(&band));
    let step = (fs / HR_ENVELOPE_RATE_HZ) as usize;
    Ok((band, env.into_iter().step_by(step).collect()))
}

/// Lag of the dominant period in `[lo, hi]`, refined by parabolic
/// interpolation, and its normalized autocorrelation.
fn dominant_lag(e: &[f64], lo: usize, hi: usize) -> Option<(f64, f64)> {
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let c: Vec<f64> = e.iter().map(|v| v - mean).collect();
    let r0: f64 = c.iter().map(|v| v * v).sum();
    if r0 == 0.0 || hi + 1 >= c.len() {
        return None;
    }
    let ac = |k: usize| c[..c.len() - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / r0;
    let r: Vec<f64> = (lo - 1..=hi + 1).map(ac).collect();
    let at = |lag: usize| r[lag + 1 - lo];
    let peaks: Vec<usize> = (lo..=hi).filter(|&k| at(k) > at(k - 1) && at(k) >= at(k + 1)).collect();
    let &best = peaks.iter().max_by(|&&a, &&b| at(a).total_cmp(&at(b)))?;
    // Prefer the fundamental when a strong peak sits near half the lag.
    let half = peaks
        .iter()
        .copied()
        .filter(|&k| (k as f64 - best as f64 / 2.0).abs() <= 0.1 * best as f64 / 2.0 && at(k) >= 0.7 * at(best))
        .max_by(|&a, &b| at(a).total_cmp(&at(b)));
    let k = half.unwrap_or(best);
    let (ym, y0, yp) = (at(k - 1), at(k), at(k + 1));
    let den = ym - 2.0 * y0 + yp;
    let delta = if den < 0.0 { (0.5 * (ym - yp) / den).clamp(-0.5, 0.5) } else { 0.0 };
    Some((k as f64 + delta, y0))
}

/// Start second of the analysis window reported at second `k`.
pub(super) fn window_start(k: usize, total_s: usize, window_s: usize) -> usize {
    k.saturating_sub(window_s / 2).min(total_s - window_s)
}

/// Beats per minute for every elapsed second, from the envelope
/// autocorrelation over a 5 s window centred on that second.
pub fn estimate_heart_rate(x: &Waveform) -> Result<RateSeries> {
    let fs = x.sample_rate_hz() as usize;
    let total_s = x.len() / fs;
    if total_s < HR_WINDOW_S {
        return Err(Error::invalid(format!("need at least {HR_WINDOW_S} s, got {:.2} s", x.duration_s())));
    }
    let (band, env) = heart_envelope(x)?;
    let efs = HR_ENVELOPE_RATE_HZ as f64;
    let lo = (60.0 * efs / HR_MAX_BPM).ceil() as usize;
    let hi = (60.0 * efs / HR_MIN_BPM).floor() as usize;
    let ew = HR_WINDOW_S * HR_ENVELOPE_RATE_HZ as usize;
    let rates = (0..total_s)
        .map(|k| {
            let s = window_start(k, total_s, HR_WINDOW_S);
            let raw = &x.samples()[s * fs..(s + HR_WINDOW_S) * fs];
            let p = power(raw);
            if p == 0.0 || power(&band[s * fs..(s + HR_WINDOW_S) * fs]) < HR_MIN_BAND_FRACTION * p {
                return None;
            }
            let e0 = s * HR_ENVELOPE_RATE_HZ as usize;
            let (lag, strength) = dominant_lag(&env[e0..(e0 + ew).min(env.len())], lo, hi)?;
            (strength >= HR_MIN_PERIODICITY).then(|| 60.0 * efs / lag)
        })
        .collect();
    Ok(RateSeries::new(rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{synth_source, SourceKind, SourceSpec};

    fn heart(bpm: f64, seed: u64, subject: u32) -> Waveform {
        let mut s = SourceSpec::new(SourceKind::Heart, subject, seed);
        s.heart_bpm = bpm;
        s.duration_s = 12.0;
        synth_source(&s).unwrap()
    }

    #[test]
    fn synthetic_heart_rate_recovered() {
        for (seed, subject) in [(1, 1000), (2, 2003), (3, 3007)] {
            let r = estimate_heart_rate(&heart(144.0, seed, subject)).unwrap();
            assert_eq!(r.len(), 12);
            assert!(r.valid_count() >= 10, "{r:?}");
            for v in r.valid_values() {
                assert!((v - 144.0).abs() <= 2.0, "{v}");
            }
        }
    }

    #[test]
    fn impulse_train_at_120() {
        let mut x = vec![0.0; 4000 * 10];
        for i in (0..x.len()).step_by(2000) {
            x[i] = 1.0;
        }
        let r = estimate_heart_rate(&Waveform::at_canonical_rate(x).unwrap()).unwrap();
        assert!(r.valid_count() >= 8, "{r:?}");
        for v in r.valid_values() {
            assert!((v - 120.0).abs() <= 1.0, "{v}");
        }
    }

    #[test]
    fn lung_alone_is_mostly_invalid() {
        for seed in 0..4 {
            let mut s = SourceSpec::new(SourceKind::Lung, 1000 + seed as u32, seed);
            s.duration_s = 12.0;
            let r = estimate_heart_rate(&synth_source(&s).unwrap()).unwrap();
            assert!(r.valid_count() * 2 < r.len(), "{r:?}");
        }
    }

    #[test]
    fn scale_invariant() {
        let x = heart(130.0, 9, 1001);
        let base = estimate_heart_rate(&x).unwrap();
        for c in [0.1, 10.0] {
            let y = Waveform::at_canonical_rate(x.samples().iter().map(|v| c * v).collect()).unwrap();
            let r = estimate_heart_rate(&y).unwrap();
            for (a, b) in r.rates.iter().zip(&base.rates) {
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6),
                    (None, None) => {}
                    _ => panic!("validity changed with scale"),
                }
            }
        }
    }

    #[test]
    fn short_input_rejected() {
        assert!(estimate_heart_rate(&Waveform::zeros(4 * 4000, 4000)).is_err());
    }

    #[test]
    fn analytic_magnitude_of_tone_is_flat() {
        let x: Vec<f64> = (0..4000).map(|i| 2.0 * (2.0 * std::f64::consts::PI * 100.0 * i as f64 / 4000.0).cos()).collect();
        let m = analytic_magnitude(&x);
        assert!(m.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }
}
