//! Butterworth band-pass design, edge attenuation, STFT round trip and
//! decimation.
//!
//! ```bash
//! cargo run --example filter_design
//! ```

use chestsep::signal::{design_butterworth_bandpass, frame_count, istft, resample_decimate, stft, Waveform};

fn main() -> chestsep::Result<()> {
    let fs = 4000.0;
    for (name, lo, hi) in [("heart", 50.0, 250.0), ("lung", 200.0, 1000.0), ("breath", 300.0, 450.0)] {
        let bp = design_butterworth_bandpass(4, lo, hi, fs)?;
        let db = |f: f64| 20.0 * bp.magnitude(f, fs).log10();
        println!(
            "{name:>6} {lo:>4}-{hi:<4} Hz: {} sections, edges {:.2} / {:.2} dB, centre {:.2} dB",
            bp.sections().len(),
            db(lo),
            db(hi),
            db((lo * hi).sqrt())
        );
    }

    let x: Vec<f64> = (0..8000).map(|i| (i as f64 * 0.013).sin() + 0.3 * (i as f64 * 0.41).cos()).collect();
    let w = Waveform::at_canonical_rate(x)?;
    let y = istft(&stft(&w, 512, 256)?)?;
    let covered = frame_count(w.len(), 512, 256) * 256;
    let err = (256..covered).map(|i| (w.samples()[i] - y.samples()[i]).abs()).fold(0.0, f64::max);
    println!("stft 512/256 round trip: max interior error {err:.2e}");

    let hi_rate: Vec<f64> = (0..16000).map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / 16000.0).sin()).collect();
    let d = resample_decimate(&Waveform::new(hi_rate, 16000)?, 4)?;
    println!("16 kHz -> {} Hz: {} samples", d.sample_rate_hz(), d.len());
    Ok(())
}
