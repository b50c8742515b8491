//! Activation-cache format, readers and writers, and synthetic suites.

mod cache;
mod format;
mod synth;

pub use cache::{names, ActivationCache, Manifest, ManifestEntry, MANIFEST_FILE};
pub use format::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, Dtype, TensorData, TensorRecord,
    MAGIC, VERSION,
};
pub use synth::{generate_synthetic_suite, suite_spec_of, SyntheticSuiteSpec, DAYS_PER_YEAR};
pub(crate) use synth::argmax_lowest;
