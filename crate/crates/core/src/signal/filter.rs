//! Butterworth design as cascaded second-order sections.
//!
//! Analog prototype poles are frequency-transformed, mapped through the
//! bilinear transform with pre-warped edges, and grouped into conjugate
//! pairs, one pair per section. Each section is gain-normalized at the
//! passband reference frequency so the cascade has unit passband gain.

use std::f64::consts::PI;

use num_traits::Zero;
use rustfft::num_complex::Complex64;

use super::waveform::Waveform;
use crate::error::{Error, Result};

const STABILITY_MARGIN: f64 = 1e-9;

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Largest pole magnitude of `1 + a1 z^-1 + a2 z^-2`.
    pub fn max_pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-self.a1 + r) / 2.0).abs().max(((-self.a1 - r) / 2.0).abs())
        }
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = Complex64::new(self.b0, 0.0) + z1 * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z1 * self.a1 + z2 * self.a2;
        num / den
    }

    fn scaled(self, g: f64) -> Self {
        Biquad {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }
}

/// A stable cascade of biquads applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Result<Self> {
        for (i, s) in sections.iter().enumerate() {
            let coeffs = [s.b0, s.b1, s.b2, s.a1, s.a2];
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("section {i} has non-finite coefficients")));
            }
            let r = s.max_pole_radius();
            if r >= 1.0 - STABILITY_MARGIN {
                return Err(Error::invalid(format!(
                    "section {i} is unstable (pole radius {r})"
                )));
            }
        }
        Ok(Self { sections })
    }

    pub fn identity() -> Self {
        Self {
            sections: vec![Biquad::IDENTITY],
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Magnitude response at `freq_hz` for sampling rate `fs_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs_hz;
        self.sections
            .iter()
            .map(|s| s.response(w))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Zero-state filtering of a sample slice (transposed direct form II).
    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let inp = *v;
                let out = s.b0 * inp + z1;
                z1 = s.b1 * inp - s.a1 * out + z2;
                z2 = s.b2 * inp - s.a2 * out;
                *v = out;
            }
        }
        y
    }
}

/// Applies `cascade` to `x` from zero initial state; output has the input length.
pub fn filter_apply(cascade: &BiquadCascade, x: &Waveform) -> Waveform {
    x.with_samples(cascade.process(x.samples()))
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > 8 {
        return Err(Error::invalid(format!("filter order {order} outside 1..=8")));
    }
    Ok(())
}

fn check_freq(f: f64, fs_hz: f64, what: &str) -> Result<()> {
    if !(f > 0.0 && f < fs_hz / 2.0) {
        return Err(Error::invalid(format!(
            "{what} {f} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs_hz / 2.0
        )));
    }
    Ok(())
}

/// Left-half-plane poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn prewarp(f: f64, fs_hz: f64) -> f64 {
    2.0 * fs_hz * (PI * f / fs_hz).tan()
}

fn bilinear(s: Complex64, fs_hz: f64) -> Complex64 {
    let k = Complex64::new(2.0 * fs_hz, 0.0);
    (k + s) / (k - s)
}

/// Groups z-plane poles into real-coefficient denominators `(a1, a2)`.
fn pair_poles(mut poles: Vec<Complex64>) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut reals = Vec::new();
    poles.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    for p in poles {
        if p.im > 1e-12 {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= 1e-12 {
            reals.push(p.re);
        }
    }
    for pair in reals.chunks(2) {
        match *pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

/// Band-pass Butterworth. `order` follows the usual convention: the band-pass
/// has `2 * order` poles and `order` sections.
pub fn design_butterworth_bandpass(
    order: usize,
    lo_hz: f64,
    hi_hz: f64,
    fs_hz: f64,
) -> Result<BiquadCascade> {
    check_order(order)?;
    check_freq(lo_hz, fs_hz, "lower band edge")?;
    check_freq(hi_hz, fs_hz, "upper band edge")?;
    if lo_hz >= hi_hz {
        return Err(Error::invalid(format!(
            "band edges out of order: {lo_hz} >= {hi_hz}"
        )));
    }
    let w1 = prewarp(lo_hz, fs_hz);
    let w2 = prewarp(hi_hz, fs_hz);
    let bw = w2 - w1;
    let w0sq = w1 * w2;
    let mut zpoles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let b = p * bw;
        let disc = (b * b - 4.0 * w0sq).sqrt();
        for s in [(b + disc) / 2.0, (b - disc) / 2.0] {
            zpoles.push(bilinear(s, fs_hz));
        }
    }
    // Reference frequency: digital image of the analog centre.
    let center_hz = fs_hz / PI * (w0sq.sqrt() / (2.0 * fs_hz)).atan();
    let wc = 2.0 * PI * center_hz / fs_hz;
    let sections = pair_poles(zpoles)
        .into_iter()
        .map(|(a1, a2)| {
            let raw = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1,
                a2,
            };
            raw.scaled(raw.response(wc).norm().recip())
        })
        .collect();
    BiquadCascade::new(sections)
}

pub fn design_butterworth_highpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<BiquadCascade> {
    check_order(order)?;
    check_freq(cutoff_hz, fs_hz, "cutoff")?;
    let wc = prewarp(cutoff_hz, fs_hz);
    let zpoles = prototype_poles(order)
        .into_iter()
        .map(|p| bilinear(Complex64::new(wc, 0.0) / p, fs_hz))
        .collect();
    let sections = pair_poles(zpoles)
        .into_iter()
        .map(|(a1, a2)| {
            let raw = if a2.is_zero() {
                Biquad { b0: 1.0, b1: -1.0, b2: 0.0, a1, a2 }
            } else {
                Biquad { b0: 1.0, b1: -2.0, b2: 1.0, a1, a2 }
            };
            raw.scaled(raw.response(PI).norm().recip())
        })
        .collect();
    BiquadCascade::new(sections)
}

pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<BiquadCascade> {
    check_order(order)?;
    check_freq(cutoff_hz, fs_hz, "cutoff")?;
    let wc = prewarp(cutoff_hz, fs_hz);
    let zpoles = prototype_poles(order)
        .into_iter()
        .map(|p| bilinear(p * wc, fs_hz))
        .collect();
    let sections = pair_poles(zpoles)
        .into_iter()
        .map(|(a1, a2)| {
            let raw = if a2.is_zero() {
                Biquad { b0: 1.0, b1: 1.0, b2: 0.0, a1, a2 }
            } else {
                Biquad { b0: 1.0, b1: 2.0, b2: 1.0, a1, a2 }
            };
            raw.scaled(raw.response(0.0).norm().recip())
        })
        .collect();
    BiquadCascade::new(sections)
}
