//! Short-time Fourier transform with a periodic Hann analysis window and
//! plain overlap-add synthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::waveform::Waveform;
use crate::error::{Error, Result};

/// Complex bins stored frame-major: `bins[frame * n_bins + k]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    bins: Vec<Complex64>,
    n_bins: usize,
    n_frames: usize,
    window_len: usize,
    hop: usize,
    sample_rate_hz: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn bin(&self, k: usize, frame: usize) -> Complex64 {
        self.bins[frame * self.n_bins + k]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.bins[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [Complex64] {
        let n = self.n_bins;
        &mut self.bins[frame * n..(frame + 1) * n]
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Returns the constant overlap-add sum of `window` at `hop`, or an error
/// when the shifted windows do not sum to a constant.
pub fn cola_constant(window: &[f64], hop: usize) -> Result<f64> {
    let n = window.len();
    if hop == 0 || hop > n {
        return Err(Error::invalid(format!("hop {hop} must lie in 1..={n}")));
    }
    let sums: Vec<f64> = (0..hop)
        .map(|i| window.iter().skip(i).step_by(hop).sum())
        .collect();
    let c = sums[0];
    if c <= 0.0 || sums.iter().any(|s| (s - c).abs() > 1e-9 * c) {
        return Err(Error::invalid(format!(
            "window of length {n} is not COLA at hop {hop}"
        )));
    }
    Ok(c)
}

/// Number of full frames in a signal of `len` samples.
pub fn frame_count(len: usize, window_len: usize, hop: usize) -> usize {
    if len < window_len {
        0
    } else {
        (len - window_len) / hop + 1
    }
}

/// Shared FFT plans for one window length.
pub struct StftPlan {
    window: Vec<f64>,
    hop: usize,
    cola: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("window_len", &self.window.len())
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(window_len: usize, hop: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::invalid("STFT window must have at least 2 samples"));
        }
        let window = hann_periodic(window_len);
        let cola = cola_constant(&window, hop)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(window_len),
            inverse: planner.plan_fft_inverse(window_len),
            window,
            hop,
            cola,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Overlap-add gain of the analysis window at this hop.
    pub fn cola(&self) -> f64 {
        self.cola
    }

    pub fn n_bins(&self) -> usize {
        self.window.len() / 2 + 1
    }

    pub fn analyze(&self, x: &[f64], sample_rate_hz: u32) -> Spectrogram {
        let n = self.window.len();
        let n_bins = self.n_bins();
        let n_frames = frame_count(x.len(), n, self.hop);
        let mut bins = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..n_frames {
            let seg = &x[m * self.hop..m * self.hop + n];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * w, 0.0);
            }
            self.forward.process(&mut buf);
            bins.extend_from_slice(&buf[..n_bins]);
        }
        Spectrogram {
            bins,
            n_bins,
            n_frames,
            window_len: n,
            hop: self.hop,
            sample_rate_hz,
            signal_len: x.len(),
        }
    }

    /// Real inverse DFT of one half-spectrum frame (length `window_len`).
    pub fn inverse_frame(&self, half: &[Complex64], out: &mut [f64]) {
        let n = self.window.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half.len()].copy_from_slice(half);
        for k in 1..(n - half.len() + 1) {
            buf[n - k] = half[k].conj();
        }
        // DC and Nyquist bins of a real signal are real.
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }

    /// Overlap-add synthesis normalized by the COLA constant.
    pub fn synthesize(&self, s: &Spectrogram) -> Vec<f64> {
        let n = self.window.len();
        let full = if s.n_frames == 0 {
            0
        } else {
            (s.n_frames - 1) * self.hop + n
        };
        let mut y = vec![0.0; full.max(s.signal_len)];
        let mut frame = vec![0.0; n];
        for m in 0..s.n_frames {
            self.inverse_frame(s.frame(m), &mut frame);
            for (o, f) in y[m * self.hop..m * self.hop + n].iter_mut().zip(&frame) {
                *o += f / self.cola;
            }
        }
        y.truncate(s.signal_len);
        y
    }

    /// Adjoint of [`Self::synthesize`] with respect to per-bin magnitudes
    /// when phases are held fixed: given `dL/dy`, returns `dL/d|X[k,m]|`
    /// frame-major.
    pub fn synthesis_magnitude_adjoint(&self, phase: &[Complex64], n_frames: usize, grad_y: &[f64]) -> Vec<f64> {
        let n = self.window.len();
        let n_bins = self.n_bins();
        let mut out = vec![0.0; n_frames * n_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..n_frames {
            for (t, b) in buf.iter_mut().enumerate() {
                let idx = m * self.hop + t;
                let g = if idx < grad_y.len() { grad_y[idx] } else { 0.0 };
                *b = Complex64::new(g / self.cola, 0.0);
            }
            // sum_t g[t] e^{+j 2 pi k t / n} = conj(FFT(g))[k] for real g.
            self.forward.process(&mut buf);
            for k in 0..n_bins {
                let c = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                let u = phase[m * n_bins + k];
                out[m * n_bins + k] = c / n as f64 * (u * buf[k].conj()).re;
            }
        }
        out
    }
}

pub fn stft(x: &Waveform, window_len: usize, hop: usize) -> Result<Spectrogram> {
    x.require_non_empty("stft")?;
    let plan = StftPlan::new(window_len, hop)?;
    if x.len() < window_len {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            x.len()
        )));
    }
    Ok(plan.analyze(x.samples(), x.sample_rate_hz()))
}

pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    let plan = StftPlan::new(s.window_len, s.hop)?;
    Waveform::new(plan.synthesize(s), s.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..4000)
            .map(|n| (2.0 * PI * 250.0 * n as f64 / 4000.0).sin())
            .collect();
        let s = stft(&Waveform::at_canonical_rate(x).unwrap(), 512, 256).unwrap();
        assert_eq!(s.n_bins(), 257);
        let frame = s.frame(3);
        let argmax = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm().partial_cmp(&frame[b].norm()).unwrap())
            .unwrap();
        assert_eq!(argmax, 32);
    }

    #[test]
    fn round_trip_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..40000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::at_canonical_rate(x.clone()).unwrap();
        let y = istft(&stft(&w, 512, 256).unwrap()).unwrap();
        let peak = w.peak();
        let covered = frame_count(x.len(), 512, 256) * 256;
        for i in 256..covered {
            assert!((y.samples()[i] - x[i]).abs() < 1e-6 * peak);
        }
    }

    #[test]
    fn zero_signal_gives_zero_bins() {
        let s = stft(&Waveform::zeros(2048, 4000), 512, 256).unwrap();
        assert!((0..s.n_frames()).all(|m| s.frame(m).iter().all(|c| c.norm() == 0.0)));
    }

    #[test]
    fn non_cola_hop_rejected() {
        assert!(StftPlan::new(512, 200).is_err());
        assert!(StftPlan::new(512, 128).is_ok());
    }

    #[test]
    fn magnitude_adjoint_matches_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let plan = StftPlan::new(16, 8).unwrap();
        let n_frames = 5;
        let len = (n_frames - 1) * 8 + 16;
        let nb = plan.n_bins();
        let phase: Vec<Complex64> = (0..n_frames * nb)
            .map(|_| Complex64::from_polar(1.0, rng.gen_range(-PI..PI)))
            .collect();
        let mags: Vec<f64> = (0..n_frames * nb).map(|_| rng.gen_range(0.0..1.0)).collect();
        let spec = Spectrogram {
            bins: mags.iter().zip(&phase).map(|(a, p)| p * *a).collect(),
            n_bins: nb,
            n_frames,
            window_len: 16,
            hop: 8,
            sample_rate_hz: 4000,
            signal_len: len,
        };
        let y = plan.synthesize(&spec);
        let g: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = plan.synthesis_magnitude_adjoint(&phase, n_frames, &g);
        let rhs: f64 = adj.iter().zip(&mags).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
