//! Heart-rate and breathing-rate estimation from chest sounds, and the
//! before/after separation improvement statistics.

mod breathing;
mod heart;
mod series;

pub use breathing::{
    breathing_envelope, estimate_breathing_rate, find_peaks, BR_BAND_HZ, BR_ENVELOPE_RATE_HZ, BR_MIN_MODULATION,
    BR_MIN_SPACING_S, BR_PROMINENCE_STD, BR_WINDOW_S,
};
pub use heart::{
    estimate_heart_rate, heart_envelope, HR_BAND_HZ, HR_ENVELOPE_LOWPASS_HZ, HR_ENVELOPE_RATE_HZ,
    HR_MAX_BPM, HR_MIN_BAND_FRACTION, HR_MIN_BPM, HR_MIN_PERIODICITY, HR_WINDOW_S,
};
pub use series::{
    read_reference_csv, recording_error, write_reference_csv, ImprovementStats, RateSeries,
};

/// Pluggable per-second rate estimator.
pub trait RateEstimator {
    fn estimate(&self, x: &crate::signal::Waveform) -> crate::Result<RateSeries>;
}

/// Envelope-autocorrelation heart-rate estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnvelopeHeartRate;

impl RateEstimator for EnvelopeHeartRate {
    fn estimate(&self, x: &crate::signal::Waveform) -> crate::Result<RateSeries> {
        estimate_heart_rate(x)
    }
}

/// Band-power peak-picking breathing-rate estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnvelopeBreathingRate;

impl RateEstimator for EnvelopeBreathingRate {
    fn estimate(&self, x: &crate::signal::Waveform) -> crate::Result<RateSeries> {
        estimate_breathing_rate(x)
    }
}
