//! Rare-disease detection from medical-code sequences.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`synthgen`] generates seeded synthetic patient cohorts with a planted
//!   disease motif and therapeutic-area structure.
//! * [`vocab`] builds the min-count filtered code vocabulary and its one-hot map.
//! * [`embedder`] trains code embeddings with skip-gram negative sampling.
//! * [`encoder`] turns a patient's code sequence into a fixed-length feature
//!   vector (LSTM, masked max-pool over time, age and gender, min-max scaling).
//! * [`ssgan`] is the semi-supervised GAN classifier over those feature vectors.
//! * [`eval`] holds the precision-recall metrics and the supervised baselines.
//!
//! [`numerics`] is the small differentiable engine everything above trains with.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration and
//! the command line live in the `raregan` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;

pub mod embedder;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod ssgan;
pub mod synthgen;
pub mod vocab;

pub use error::{Error, Result};

pub use embedder::{EmbeddingMatrix, SgnsConfig};
pub use encoder::{EncoderConfig, FeatureEncoder, FeatureScaler};
pub use eval::PrCurve;
pub use ssgan::{GanModel, GanTrainConfig, LossBreakdown};
pub use synthgen::{CohortConfig, Label, PatientRecord};
pub use vocab::{CodeKind, MedicalCode, Vocabulary};

/// Deterministic RNG used across the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Mixes a stream id into a seed so that independent stages get
/// decorrelated RNG streams from one user seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
