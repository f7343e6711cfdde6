use super::heart::window_start;
use super::series::RateSeries;
use crate::error::{Error, Result};
use crate::signal::{design_butterworth_bandpass, Waveform};

pub const BR_BAND_HZ: (f64, f64) = (300.0, 450.0);
/// Frame rate of the band-power envelope.
pub const BR_ENVELOPE_RATE_HZ: usize = 20;
pub const BR_WINDOW_S: usize = 60;
pub const BR_MIN_SPACING_S: f64 = 0.6;
/// Peak prominence threshold in units of the envelope standard deviation.
pub const BR_PROMINENCE_STD: f64 = 0.75;
/// Minimum coefficient of variation of the envelope in a window.
pub const BR_MIN_MODULATION: f64 = 0.5;
const MIN_LEN_S: usize = 15;
const SMOOTH_FRAMES: usize = 5;

/// Band power in frames of twice the hop, smoothed by a short moving average.
pub fn breathing_envelope(x: &Waveform) -> Result<Vec<f64>> {
    let fs = x.sample_rate_hz() as usize;
    if fs % BR_ENVELOPE_RATE_HZ != 0 {
        return Err(Error::invalid(format!("sample rate {fs} Hz is not a multiple of {BR_ENVELOPE_RATE_HZ}")));
    }
    let band = design_butterworth_bandpass(4, BR_BAND_HZ.0, BR_BAND_HZ.1, fs as f64)?.process(x.samples());
    let hop = fs / BR_ENVELOPE_RATE_HZ;
    let frames = band.len() / hop;
    let raw: Vec<f64> = (0..frames)
        .map(|f| {
            let s = (f * hop).saturating_sub(hop / 2);
            let e = (s + 2 * hop).min(band.len());
            band[s..e].iter().map(|v| v * v).sum::<f64>() / (e - s) as f64
        })
        .collect();
    let h = SMOOTH_FRAMES / 2;
    Ok((0..frames)
        .map(|i| {
            let (s, e) = (i.saturating_sub(h), (i + h + 1).min(frames));
            raw[s..e].iter().sum::<f64>() / (e - s) as f64
        })
        .collect())
}

/// Local maxima at least `distance` apart (taller peaks win) whose
/// topographic prominence is at least `min_prominence`.
pub fn find_peaks(x: &[f64], distance: usize, min_prominence: f64) -> Vec<usize> {
    let n = x.len();
    let mut cand = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                cand.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let mut order = cand.clone();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut keep = vec![false; n];
    let mut taken: Vec<usize> = Vec::new();
    for p in order {
        if taken.iter().all(|&q| p.abs_diff(q) >= distance) {
            taken.push(p);
            keep[p] = true;
        }
    }
    let prominence = |p: usize| {
        let mut lmin = x[p];
        for k in (0..p).rev() {
            if x[k] > x[p] {
                break;
            }
            lmin = lmin.min(x[k]);
        }
        let mut rmin = x[p];
        for &v in &x[p + 1..] {
            if v > x[p] {
                break;
            }
            rmin = rmin.min(v);
        }
        x[p] - lmin.max(rmin)
    };
    cand.into_iter()
        .filter(|&p| keep[p] && prominence(p) >= min_prominence)
        .collect()
}

/// Breaths per minute for every elapsed second, from envelope peaks inside a
/// window of up to 60 s centred on that second.
pub fn estimate_breathing_rate(x: &Waveform) -> Result<RateSeries> {
    let fs = x.sample_rate_hz() as usize;
    let total_s = x.len() / fs;
    if total_s < MIN_LEN_S {
        return Err(Error::invalid(format!("need at least {MIN_LEN_S} s, got {:.2} s", x.duration_s())));
    }
    let env = breathing_envelope(x)?;
    let win = BR_WINDOW_S.min(total_s);
    let distance = (BR_MIN_SPACING_S * BR_ENVELOPE_RATE_HZ as f64).round() as usize;
    let mut cache: Vec<(usize, Option<f64>)> = Vec::new();
    let rates = (0..total_s)
        .map(|k| {
            let s = window_start(k, total_s, win);
            if let Some(&(_, r)) = cache.iter().find(|(c, _)| *c == s) {
                return r;
            }
            let seg = &env[s * BR_ENVELOPE_RATE_HZ..((s + win) * BR_ENVELOPE_RATE_HZ).min(env.len())];
            let r = window_rate(seg, distance);
            cache.push((s, r));
            r
        })
        .collect();
    Ok(RateSeries::new(rates))
}

fn window_rate(seg: &[f64], distance: usize) -> Option<f64> {
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / n;
    let std = (seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(mean > 0.0) || std / mean < BR_MIN_MODULATION {
        return None;
    }
    let peaks = find_peaks(seg, distance, BR_PROMINENCE_STD * std);
    if peaks.len() < 3 {
        return None;
    }
    let span = (peaks[peaks.len() - 1] - peaks[0]) as f64 / BR_ENVELOPE_RATE_HZ as f64;
    Some(60.0 * (peaks.len() - 1) as f64 / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{synth_source, SourceKind, SourceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lung(bpm: f64, seed: u64, subject: u32) -> Waveform {
        let mut s = SourceSpec::new(SourceKind::Lung, subject, seed);
        s.breath_bpm = bpm;
        s.duration_s = 30.0;
        synth_source(&s).unwrap()
    }

    fn band_noise(secs: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..secs * 4000).map(|_| r.gen_range(-1.0..1.0)).collect();
        design_butterworth_bandpass(4, 250.0, 500.0, 4000.0).unwrap().process(&w)
    }

    #[test]
    fn synthetic_lung_rate_recovered() {
        for (seed, subject) in [(1, 1000), (2, 2001), (3, 3002), (4, 1003)] {
            let r = estimate_breathing_rate(&lung(48.0, seed, subject)).unwrap();
            assert_eq!(r.len(), 30);
            assert_eq!(r.valid_count(), 30, "{r:?}");
            for v in r.valid_values() {
                assert!((v - 48.0).abs() <= 4.0, "{v}");
            }
        }
    }

    #[test]
    fn lung_rate_across_neonatal_range() {
        for (i, bpm) in [32.0, 40.0, 55.0, 65.0, 78.0].into_iter().enumerate() {
            let r = estimate_breathing_rate(&lung(bpm, 20 + i as u64, 1010 + i as u32)).unwrap();
            let m = r.median().unwrap();
            assert!((m - bpm).abs() <= 0.1 * bpm, "{bpm}: {m}");
        }
    }

    #[test]
    fn modulated_noise_at_half_hertz() {
        let x: Vec<f64> = band_noise(30, 3)
            .into_iter()
            .enumerate()
            .map(|(i, v)| v * (std::f64::consts::PI * 0.5 * i as f64 / 4000.0).sin().powi(2))
            .collect();
        let r = estimate_breathing_rate(&Waveform::at_canonical_rate(x).unwrap()).unwrap();
        assert!(r.valid_count() > 0);
        for v in r.valid_values() {
            assert!((v - 30.0).abs() <= 3.0, "{v}");
        }
    }

    #[test]
    fn flat_noise_is_invalid() {
        let r = estimate_breathing_rate(&Waveform::at_canonical_rate(band_noise(20, 5)).unwrap()).unwrap();
        assert_eq!(r.valid_count(), 0, "{r:?}");
    }

    #[test]
    fn scale_invariant() {
        let x = lung(40.0, 8, 1002);
        let base = estimate_breathing_rate(&x).unwrap();
        for c in [0.1, 10.0] {
            let y = Waveform::at_canonical_rate(x.samples().iter().map(|v| c * v).collect()).unwrap();
            let r = estimate_breathing_rate(&y).unwrap();
            assert_eq!(r.len(), base.len());
            for (a, b) in r.rates.iter().zip(&base.rates) {
                assert_eq!(a.is_some(), b.is_some());
                if let (Some(a), Some(b)) = (a, b) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn peak_picking_rules() {
        let x = [0.0, 1.0, 0.0, 0.5, 0.0, 3.0, 2.9, 3.0, 0.0];
        assert_eq!(find_peaks(&x, 1, 0.0), vec![1, 3, 5, 7]);
        assert_eq!(find_peaks(&x, 3, 0.0), vec![1, 5]);
        assert_eq!(find_peaks(&x, 1, 0.6), vec![1, 5, 7]);
        assert_eq!(find_peaks(&[0.0, 2.0, 2.0, 2.0, 0.0], 1, 0.0), vec![2]);
    }

    #[test]
    fn short_input_rejected() {
        assert!(estimate_breathing_rate(&Waveform::zeros(14 * 4000, 4000)).is_err());
    }
}
