//! Saves a model, reloads it and checks the outputs are bit-identical;
//! then shows that corruption is detected.
//!
//! ```bash
//! cargo run --release --example checkpoint
//! ```

use chestsep::model::{Checkpoint, Separator, SeparatorConfig};
use chestsep::signal::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Separator::<f32>::new(SeparatorConfig::reduced(), &mut rng)?;
    let path = std::env::temp_dir().join("chestsep_example.ckpt");
    model.save(&path)?;
    let back = Separator::<f32>::load(&path)?;
    let x = Waveform::at_canonical_rate((0..8000).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (a, b) = (model.separate(&x)?, back.separate(&x)?);
    println!("{} bytes, {} tensors, outputs identical: {}", std::fs::metadata(&path)?.len(), back.params().len(), a == b);
    print!("{}", back.config().to_kv());

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    println!("flipped one bit: {}", Checkpoint::from_bytes(&bytes).unwrap_err());
    Ok(())
}
