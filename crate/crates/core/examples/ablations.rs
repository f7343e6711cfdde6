//! Lists the supported single-variable ablations with their model sizes,
//! then runs a very short one.
//!
//! ```bash
//! cargo run --release --example ablations
//! ```

use chestsep::mixture::{DatasetParams, NoiseGroup};
use chestsep::model::{Separator, SeparatorConfig};
use chestsep::train::{ablation_run, Ablation, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let (tc, mc) = (TrainConfig::default(), SeparatorConfig::default());
    for a in Ablation::ALL {
        let (t, m) = a.apply(&tc, &mc);
        let n = Separator::<f32>::new(m, &mut ChaCha8Rng::seed_from_u64(0))?.num_parameters();
        println!("{:>12}: {:5.2} M parameters, crop {:?}, phase-1 noise {:?} dB", a.to_string(), n as f64 / 1e6, t.crop_s, t.phase1_noise_db);
    }

    let short = TrainConfig { epochs: 1, steps_per_epoch: 2, batch_size: 2, finetune_epoch: 1, ..tc };
    let small = SeparatorConfig { feature_size: 32, mask_feature_size: 32, transformer_depth: 1, ..mc };
    let data = DatasetParams { val_count: 4, ..DatasetParams::default() };
    let test: Vec<_> = data.test_manifest(NoiseGroup::NoNoise)?.samples.into_iter().take(6).collect();
    let r = ablation_run(Ablation::NoConv, &short, &small, &data, &test)?;
    println!("{}: {} parameters, validation loss {:.2}", r.ablation, r.num_parameters, r.log.epochs[0].val_loss);
    print!("{}", r.report.to_csv());
    Ok(())
}
