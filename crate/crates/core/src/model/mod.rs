//! The separation network: learned (or STFT) encoder, mask generator and
//! decoder, plus checkpoint serialization.

mod checkpoint;
mod config;
mod separator;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{EncoderKind, SeparatorConfig};
pub use separator::{Bound, Encoding, MaskSet, Separator, SOURCE_NAMES};
