//! Heart and breathing rate tracking on synthetic sounds, before and after
//! an idealised separation.
//!
//! ```bash
//! cargo run --release --example vitals
//! ```

use chestsep::mixture::{synth_source, SourceKind, SourceSpec};
use chestsep::signal::Waveform;
use chestsep::vitals::{estimate_breathing_rate, estimate_heart_rate, recording_error, ImprovementStats, RateSeries};

fn main() -> chestsep::Result<()> {
    let mut heart = SourceSpec::new(SourceKind::Heart, 1000, 1);
    heart.heart_bpm = 144.0;
    heart.duration_s = 30.0;
    let mut lung = SourceSpec::new(SourceKind::Lung, 1000, 2);
    lung.breath_bpm = 48.0;
    lung.duration_s = 30.0;
    let mut cry = SourceSpec::new(SourceKind::Cry, 1000, 3);
    cry.duration_s = 30.0;
    let (h, l, n) = (synth_source(&heart)?, synth_source(&lung)?, synth_source(&cry)?);
    let mix = Waveform::at_canonical_rate(
        h.samples().iter().zip(l.samples()).zip(n.samples()).map(|((a, b), c)| a + b + c).collect(),
    )?;

    let hr_ref = RateSeries::constant(144.0, 30);
    let br_ref = RateSeries::constant(48.0, 30);
    let hr_mix = estimate_heart_rate(&mix)?;
    let hr_clean = estimate_heart_rate(&h)?;
    let br_mix = estimate_breathing_rate(&mix)?;
    let br_clean = estimate_breathing_rate(&l)?;
    println!("heart: median {:?} bpm on mixture, {:?} bpm on clean heart", hr_mix.median(), hr_clean.median());
    println!("lung:  median {:?} /min on mixture, {:?} /min on clean lung", br_mix.median(), br_clean.median());

    let err = |e: &RateSeries, r: &RateSeries| recording_error(e, r).unwrap_or(f64::NAN);
    let stats = ImprovementStats::from_errors(&[err(&hr_mix, &hr_ref)], &[err(&hr_clean, &hr_ref)])?;
    println!("heart-rate error {:.2} -> {:.2} bpm (improvement {:.2})", stats.error_before[0], stats.error_after[0], stats.mean);
    let stats = ImprovementStats::from_errors(&[err(&br_mix, &br_ref)], &[err(&br_clean, &br_ref)])?;
    println!("breathing-rate error {:.2} -> {:.2} /min (improvement {:.2})", stats.error_before[0], stats.error_after[0], stats.mean);
    Ok(())
}
