//! Synthetic stand-ins for the reference chest and noise recordings.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::seed::mix64;
use crate::error::{Error, Result};
use crate::signal::{
    design_butterworth_bandpass, design_butterworth_highpass, design_butterworth_lowpass, Waveform, SAMPLE_RATE_HZ,
};

const FS: f64 = SAMPLE_RATE_HZ as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Heart,
    Lung,
    Cry,
    CpapBubble,
    CpapVent,
    StethRub,
    StethDisconnect,
}

impl SourceKind {
    pub const ALL: [SourceKind; 7] = [
        SourceKind::Heart,
        SourceKind::Lung,
        SourceKind::Cry,
        SourceKind::CpapBubble,
        SourceKind::CpapVent,
        SourceKind::StethRub,
        SourceKind::StethDisconnect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Heart => "heart",
            SourceKind::Lung => "lung",
            SourceKind::Cry => "cry",
            SourceKind::CpapBubble => "cpap_bubble",
            SourceKind::CpapVent => "cpap_vent",
            SourceKind::StethRub => "steth_rub",
            SourceKind::StethDisconnect => "steth_disconnect",
        }
    }

    pub fn is_noise(self) -> bool {
        !matches!(self, SourceKind::Heart | SourceKind::Lung)
    }

    pub fn is_stethoscope(self) -> bool {
        matches!(self, SourceKind::StethRub | SourceKind::StethDisconnect)
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown source kind {s:?}")))
    }
}

/// Parameters for one synthetic recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Baby for heart/lung, recording or device id for noise.
    pub subject_id: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub heart_bpm: f64,
    pub breath_bpm: f64,
}

/// Fixed per-subject characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectProfile {
    pub heart_bpm: f64,
    pub breath_bpm: f64,
    pub s1_hz: f64,
    pub s2_hz: f64,
    pub s2_gain: f64,
    pub inspiration_fraction: f64,
}

impl SubjectProfile {
    pub fn of(subject_id: u32) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(mix64(0x5EED_50B1, subject_id as u64));
        let s1_hz = r.gen_range(60.0..110.0);
        Self {
            heart_bpm: r.gen_range(110.0..180.0),
            breath_bpm: r.gen_range(35.0..70.0),
            s1_hz,
            s2_hz: r.gen_range(s1_hz + 10.0..150.0),
            s2_gain: r.gen_range(0.5..0.85),
            inspiration_fraction: r.gen_range(0.35..0.45),
        }
    }
}

impl SourceSpec {
    /// Spec using the subject's typical rates.
    pub fn new(kind: SourceKind, subject_id: u32, seed: u64) -> Self {
        let p = SubjectProfile::of(subject_id);
        Self {
            kind,
            subject_id,
            seed,
            duration_s: 10.0,
            heart_bpm: p.heart_bpm,
            breath_bpm: p.breath_bpm,
        }
    }

    pub fn len(&self) -> usize {
        (self.duration_s * FS).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || self.len() < 64 {
            return Err(Error::invalid(format!("duration {} s too short", self.duration_s)));
        }
        if !(100.0..=200.0).contains(&self.heart_bpm) {
            return Err(Error::invalid(format!("heart rate {} bpm outside [100, 200]", self.heart_bpm)));
        }
        if !(30.0..=80.0).contains(&self.breath_bpm) {
            return Err(Error::invalid(format!("breathing rate {} outside [30, 80]", self.breath_bpm)));
        }
        Ok(())
    }
}

/// Samples `[start, end)` during which a stethoscope disconnect is active.
pub fn disconnect_interval(spec: &SourceSpec) -> Option<Range<usize>> {
    if spec.kind != SourceKind::StethDisconnect {
        return None;
    }
    let n = spec.len();
    let mut r = ChaCha8Rng::seed_from_u64(mix64(spec.seed, 0xD15C));
    let max_len = (3.0 * FS).min(n as f64 * 0.5);
    let min_len = (1.0 * FS).min(max_len);
    let len = r.gen_range(min_len..=max_len).round() as usize;
    let start = r.gen_range(0..=n - len);
    Some(start..start + len)
}

pub fn synth_source(spec: &SourceSpec) -> Result<Waveform> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.len();
    let x = match spec.kind {
        SourceKind::Heart => heart(spec, n, &mut rng)?,
        SourceKind::Lung => lung(spec, n, &mut rng)?,
        SourceKind::Cry => cry(spec.subject_id, n, &mut rng)?,
        SourceKind::CpapBubble => cpap_bubble(spec.subject_id, n, &mut rng)?,
        SourceKind::CpapVent => cpap_vent(spec.subject_id, n, &mut rng)?,
        SourceKind::StethRub => steth_rub(n, &mut rng)?,
        SourceKind::StethDisconnect => {
            let iv = disconnect_interval(spec).expect("disconnect kind has an interval");
            steth_disconnect(n, iv, &mut rng)?
        }
    };
    Waveform::at_canonical_rate(x)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| gauss(rng)).collect()
}

/// Event times with period `period_s` and relative jitter.
fn cycle_onsets(n: usize, period_s: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dur = n as f64 / FS;
    let jit = Normal::new(0.0, jitter).unwrap();
    let mut t = -rng.gen_range(0.0..period_s);
    let mut out = Vec::new();
    while t < dur + period_s {
        out.push(t);
        t += period_s * (1.0 + jit.sample(rng)).max(0.5);
    }
    out
}

/// Adds `amp * exp(-(t-c)^2 / 2 sigma^2) * sin(2 pi f (t-c) + phase)`.
fn add_tone_burst(x: &mut [f64], center_s: f64, sigma_s: f64, freq: f64, amp: f64, phase: f64) {
    let lo = ((center_s - 4.0 * sigma_s) * FS).floor().max(0.0) as usize;
    let hi = (((center_s + 4.0 * sigma_s) * FS).ceil().max(0.0) as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let dt = i as f64 / FS - center_s;
        *v += amp * (-0.5 * (dt / sigma_s).powi(2)).exp() * (2.0 * PI * freq * dt + phase).sin();
    }
}

fn heart(spec: &SourceSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let p = SubjectProfile::of(spec.subject_id);
    let period = 60.0 / spec.heart_bpm;
    let mut x = vec![0.0; n];
    let f1 = p.s1_hz * rng.gen_range(0.95..1.05);
    let f2 = p.s2_hz * rng.gen_range(0.95..1.05);
    for t in cycle_onsets(n, period, 0.01, rng) {
        let a1 = 1.0 + 0.1 * gauss(rng);
        let a2 = p.s2_gain * (1.0 + 0.1 * gauss(rng));
        let ph = rng.gen_range(0.0..2.0 * PI);
        add_tone_burst(&mut x, t, 0.012, f1, a1, ph);
        add_tone_burst(&mut x, t + 0.004, 0.010, 1.6 * f1, 0.4 * a1, ph);
        add_tone_burst(&mut x, t + 0.45 * period, 0.009, f2, a2, rng.gen_range(0.0..2.0 * PI));
    }
    let bp = design_butterworth_bandpass(4, 50.0, 250.0, FS)?;
    Ok(bp.process(&x))
}

/// Gaussian noise with power spectrum `1/f` confined to `[lo, hi]` Hz by
/// a raised-cosine taper of width `taper` Hz.
fn pink_band(n: usize, lo: f64, hi: f64, taper: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = white(n, rng).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k) as f64;
        let f = kk * FS / n as f64;
        let edge = |d: f64| {
            if d >= taper {
                1.0
            } else if d <= 0.0 {
                0.0
            } else {
                0.5 - 0.5 * (PI * d / taper).cos()
            }
        };
        let g = if f <= 0.0 { 0.0 } else { edge(f - (lo - taper)) * edge(hi + taper - f) / f.sqrt() };
        *c *= g;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re / n as f64).collect()
}

fn lung(spec: &SourceSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let p = SubjectProfile::of(spec.subject_id);
    let noise = pink_band(n, 200.0, 1000.0, 20.0, rng);
    let bp = design_butterworth_bandpass(4, 200.0, 1000.0, FS)?;
    let noise = bp.process(&noise);
    let period = 60.0 / spec.breath_bpm;
    let insp = p.inspiration_fraction;
    let onsets = cycle_onsets(n, period, 0.03, rng);
    let mut env = vec![0.03; n];
    for w in onsets.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let depth = 1.0 + 0.1 * gauss(rng);
        let lo = (t0 * FS).max(0.0) as usize;
        let hi = ((t1 * FS).max(0.0) as usize).min(n);
        for (i, e) in env.iter_mut().enumerate().take(hi).skip(lo) {
            let phi = (i as f64 / FS - t0) / (t1 - t0);
            *e += depth
                * if phi < insp {
                    (PI * phi / insp).sin().powi(2)
                } else {
                    0.3 * (PI * (phi - insp) / (1.0 - insp)).sin().powi(2)
                };
        }
    }
    Ok(noise.iter().zip(&env).map(|(a, b)| a * b).collect())
}

fn cry(cry_id: u32, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut id_rng = ChaCha8Rng::seed_from_u64(mix64(0xC41, cry_id as u64));
    let f0_base = id_rng.gen_range(350.0..550.0);
    let vib_hz = id_rng.gen_range(5.0..7.0);
    let vib_depth = id_rng.gen_range(0.01..0.04);
    let contour_s = rng.gen_range(0.8..1.6);
    let contour_phase = rng.gen_range(0.0..2.0 * PI);
    let mut phase = 0.0;
    let mut x = Vec::with_capacity(n);
    let breath = white(n, rng);
    for (i, b) in breath.iter().enumerate() {
        let t = i as f64 / FS;
        let contour = 1.0 + 0.08 * (2.0 * PI * t / contour_s + contour_phase).sin();
        let f0 = f0_base * contour * (1.0 + vib_depth * (2.0 * PI * vib_hz * t).sin());
        phase += 2.0 * PI * f0 / FS;
        let am = 0.8 + 0.2 * (2.0 * PI * t / contour_s).sin();
        let mut v = 0.0;
        for k in 1..=8 {
            if f0 * k as f64 >= FS / 2.0 {
                break;
            }
            v += (k as f64 * phase).sin() / k as f64;
        }
        x.push(am * v + 0.05 * b);
    }
    let hp = design_butterworth_highpass(2, 300.0, FS)?;
    Ok(hp.process(&x))
}

fn add_hum(x: &mut [f64], f: f64, harmonics: &[f64], rng: &mut ChaCha8Rng) {
    let phases: Vec<f64> = harmonics.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / FS;
        for (h, (&a, &ph)) in harmonics.iter().zip(&phases).enumerate() {
            *v += a * (2.0 * PI * f * (h + 1) as f64 * t + ph).sin();
        }
    }
}

fn cpap_bubble(device: u32, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut d = ChaCha8Rng::seed_from_u64(mix64(0xB0B, device as u64));
    let hum_hz = d.gen_range(80.0..160.0);
    let rate = d.gen_range(15.0..40.0);
    let (bf_lo, bf_hi) = (d.gen_range(200.0..400.0), d.gen_range(500.0..900.0));
    let mut x = vec![0.0; n];
    add_hum(&mut x, hum_hz, &[0.3, 0.15, 0.05], rng);
    let gaps = Exp::new(rate).unwrap();
    let mut t = gaps.sample(rng);
    while t < n as f64 / FS {
        let f = rng.gen_range(bf_lo..bf_hi);
        let tau = rng.gen_range(0.005..0.015);
        let amp = rng.gen_range(0.5..1.5);
        let start = (t * FS) as usize;
        let len = ((5.0 * tau * FS) as usize).min(n - start);
        for j in 0..len {
            let dt = j as f64 / FS;
            x[start + j] += amp * (-dt / tau).exp() * (2.0 * PI * f * dt).sin();
        }
        t += gaps.sample(rng);
    }
    let lp = design_butterworth_lowpass(2, 1500.0, FS)?;
    let hiss = lp.process(&white(n, rng));
    Ok(x.iter().zip(&hiss).map(|(a, b)| a + 0.15 * b).collect())
}

fn cpap_vent(device: u32, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut d = ChaCha8Rng::seed_from_u64(mix64(0x7E47, device as u64));
    let hum_hz = d.gen_range(50.0..120.0);
    let hiss_cut = d.gen_range(120.0..250.0);
    let mut x = vec![0.0; n];
    add_hum(&mut x, hum_hz, &[0.5, 0.3, 0.2, 0.1], rng);
    let hp = design_butterworth_highpass(2, hiss_cut, FS)?;
    let hiss = hp.process(&white(n, rng));
    Ok(x.iter().zip(&hiss).map(|(a, b)| a + 0.4 * b).collect())
}

fn add_burst(x: &mut [f64], start: usize, len: usize, amp: f64, rng: &mut ChaCha8Rng) {
    let len = len.min(x.len().saturating_sub(start));
    let mut prev = 0.0;
    let smooth = rng.gen_range(0.0..0.8);
    for j in 0..len {
        let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / len.max(2) as f64).cos();
        prev = smooth * prev + (1.0 - smooth) * gauss(rng);
        x[start + j] += amp * w * prev;
    }
}

fn steth_rub(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let rate = rng.gen_range(0.5..2.0);
    let gaps = Exp::new(rate).unwrap();
    let mut x = vec![0.0; n];
    let mut t = gaps.sample(rng);
    while t < n as f64 / FS {
        let len = (rng.gen_range(0.04..0.2) * FS) as usize;
        let amp = rng.gen_range(0.5..1.5);
        add_burst(&mut x, (t * FS) as usize, len, amp, rng);
        t += gaps.sample(rng);
    }
    if x.iter().all(|&v| v == 0.0) {
        let len = (0.1 * FS) as usize;
        add_burst(&mut x, rng.gen_range(0..n - len), len, 1.0, rng);
    }
    Ok(x)
}

fn steth_disconnect(n: usize, iv: Range<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let lp = design_butterworth_lowpass(2, 300.0, FS)?;
    let rumble = lp.process(&white(n, rng));
    let mut x = vec![0.0; n];
    for i in iv.clone() {
        x[i] = 0.3 * rumble[i];
    }
    let pop = (0.02 * FS) as usize;
    add_burst(&mut x, iv.start, pop, 2.0, rng);
    add_burst(&mut x, iv.end.saturating_sub(pop), pop, 2.0, rng);
    for (i, v) in x.iter_mut().enumerate() {
        if !iv.contains(&i) {
            *v = 0.0;
        }
    }
    Ok(x)
}
