use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, TrainConfig};
use super::trainer::{train, validation_set, TrainData, TrainLog};
use crate::error::Result;
use crate::metrics::{evaluate_testset, MetricsReport};
use crate::mixture::{mix64, DatasetParams, SampleDescriptor};
use crate::model::{Separator, SeparatorConfig};

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub ablation: Ablation,
    pub num_parameters: usize,
    pub log: TrainLog,
    pub report: MetricsReport,
}

/// Trains a fresh model with one override applied and scores its best
/// checkpoint on `test`.
pub fn ablation_run(
    ablation: Ablation,
    train_cfg: &TrainConfig,
    model_cfg: &SeparatorConfig,
    data: &DatasetParams,
    test: &[SampleDescriptor],
) -> Result<AblationResult> {
    let (tc, mc) = ablation.apply(train_cfg, model_cfg);
    let model = Separator::<f32>::new(mc, &mut ChaCha8Rng::seed_from_u64(mix64(tc.seed, 0x1417)))?;
    let num_parameters = model.num_parameters();
    let val = validation_set(data)?;
    let out = train(model, &TrainData::Stream(data.clone()), &val, tc)?;
    let report = evaluate_testset(&out.best, test)?;
    Ok(AblationResult { ablation, num_parameters, log: out.log, report })
}
