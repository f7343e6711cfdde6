//! Splits a WAV into heart and lung estimates.
//!
//! With no arguments a synthetic mixture and a randomly initialised model
//! are used, so the output is only a shape demonstration.
//!
//! ```bash
//! cargo run --release --example separate_wav -- model.ckpt chest.wav
//! ```

use chestsep::cli::load_model;
use chestsep::io::{wav_read, wav_write};
use chestsep::metrics::si_sdr;
use chestsep::mixture::{DatasetParams, NoiseGroup};
use chestsep::model::{Separator, SeparatorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = match args.first() {
        Some(p) => load_model(p)?,
        None => Separator::<f32>::new(SeparatorConfig::reduced(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let (mixture, truth) = match args.get(1) {
        Some(p) => (wav_read(p)?, None),
        None => {
            let x = DatasetParams::default().test_manifest(NoiseGroup::General)?.samples[0].render()?;
            (x.mixture.clone(), Some(x))
        }
    };
    let [heart, lung] = model.separate(&mixture)?;
    println!("{} samples in, {} / {} out", mixture.len(), heart.len(), lung.len());
    if let Some(x) = truth {
        println!("heart SI-SDR {:.2} dB", si_sdr(heart.samples(), x.target_heart.samples())?);
        println!("lung  SI-SDR {:.2} dB", si_sdr(lung.samples(), x.target_lung.samples())?);
    }
    wav_write("heart_estimate.wav", &heart)?;
    wav_write("lung_estimate.wav", &lung)?;
    Ok(())
}
