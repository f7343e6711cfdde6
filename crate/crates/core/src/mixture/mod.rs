//! Synthetic neonatal chest-sound sources, mixing and dataset manifests.

mod dataset;
mod mix;
mod seed;
mod synth;

pub use dataset::{
    crop_at, random_crop, DatasetManifest, DatasetParams, MixtureSample, NoiseGroup, Partition, SampleDescriptor,
    TrainSampling, TrainStream, TEST_DB_GRID,
};
pub use mix::{convolve_causal, mix, random_unit_fir, Mixed, MixingMode, NoiseInput};
pub use seed::{mix64, splitmix64};
pub use synth::{disconnect_interval, synth_source, SourceKind, SourceSpec, SubjectProfile};
