//! Deterministic DSP primitives: Butterworth biquads, STFT, decimation and
//! power scaling.

mod filter;
mod resample;
mod stft;
mod waveform;

pub use filter::{
    design_butterworth_bandpass, design_butterworth_highpass, design_butterworth_lowpass,
    filter_apply, Biquad, BiquadCascade,
};
pub use resample::{resample_decimate, DECIMATOR_TAPS};
pub use stft::{cola_constant, frame_count, hann_periodic, istft, stft, Spectrogram, StftPlan};
pub use waveform::{
    db_to_amplitude, normalize_power, power, rescale_relative_db, Waveform, SAMPLE_RATE_HZ,
};
