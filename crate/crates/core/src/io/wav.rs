use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::{resample_decimate, Waveform, SAMPLE_RATE_HZ};

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io)
            if matches!(io.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            Error::Format(format!("truncated or malformed WAV file: {io}"))
        }
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

/// Reads a mono PCM (8–32 bit) or 32-bit float WAV. Integer samples map
/// to `[-1, 1)` by `1 / 2^(bits-1)`. Rates that are integer multiples of
/// 4 kHz are decimated to 4 kHz.
pub fn wav_read(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut r = WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>(),
        (SampleFormat::Int, b @ 8..=32) => {
            let scale = 1.0 / (1u64 << (b - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect()
        }
        (f, b) => return Err(Error::Format(format!("unsupported sample format {f:?} with {b} bits"))),
    }
    .map_err(wav_err)?;
    let w = Waveform::new(samples, spec.sample_rate)?;
    match spec.sample_rate {
        SAMPLE_RATE_HZ => Ok(w),
        fs if fs % SAMPLE_RATE_HZ == 0 => resample_decimate(&w, (fs / SAMPLE_RATE_HZ) as usize),
        fs => Err(Error::Format(format!("sample rate {fs} Hz is not an integer multiple of {SAMPLE_RATE_HZ} Hz"))),
    }
}

/// Writes mono 32-bit float at the waveform's rate. Samples outside
/// `[-1, 1]` are written unchanged with a warning.
pub fn wav_write(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate_hz(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let over = x.samples().iter().filter(|v| v.abs() > 1.0).count();
    if over > 0 {
        log::warn!("{}: {over} samples outside [-1, 1] written unclipped", path.display());
    }
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in x.samples() {
        w.write_sample(v as f32).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Writes 16-bit PCM, clamping to the representable range.
pub fn wav_write_pcm16(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for &v in x.samples() {
        w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
