//! Trains a narrow separator for a few epochs on a handful of fixed
//! mixtures, writing `.best` and `.last` checkpoints, then resumes.
//!
//! ```bash
//! cargo run --release --example train_tiny
//! ```

use chestsep::mixture::{DatasetParams, TrainSampling, TrainStream};
use chestsep::model::{Checkpoint, Separator, SeparatorConfig};
use chestsep::train::{suffixed, TrainConfig, TrainData, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> chestsep::Result<()> {
    let dir = std::env::temp_dir().join("chestsep_train_tiny");
    std::fs::create_dir_all(&dir)?;
    let prefix = dir.join("tiny");
    let stream = TrainStream::new(DatasetParams::default(), 0, TrainSampling { crop_len: Some(8000), ..TrainSampling::default() })?;
    let set: Vec<_> = (0..4).map(|i| stream.sample(i)).collect::<chestsep::Result<_>>()?;
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 2,
        lr: 1e-3,
        finetune_epoch: 6,
        checkpoint_prefix: Some(prefix.clone()),
        ..TrainConfig::default()
    };
    let model_cfg = SeparatorConfig { feature_size: 64, mask_feature_size: 64, transformer_depth: 1, ..SeparatorConfig::reduced() };
    let model = Separator::<f32>::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", model.num_parameters());

    let data = TrainData::Fixed(set.clone());
    let mut trainer = Trainer::new(model, TrainConfig { epochs: 3, ..cfg.clone() })?;
    for _ in 0..3 {
        let r = trainer.run_epoch(&data, &set)?;
        println!("epoch {} train {:.2} val {:.2} lr {:.1e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }

    let resumed = Trainer::resume(&Checkpoint::load(suffixed(&prefix, "last"))?, cfg)?;
    let out = resumed.run(&data, &set)?;
    print!("{}", out.log.to_csv());
    println!("best validation loss {:.2}; checkpoints under {}", out.best_val_loss, dir.display());
    Ok(())
}
