//! Sense-dictionary knowledge distillation for decoder-only language models,
//! at desk scale.
//!
//! The pipeline: generate a synthetic corpus with planted polysemy and
//! lexical relations ([`corpus`]), train a toy teacher ([`toylm`]), collect
//! its last-layer contextual embeddings ([`embed_store`]), cluster them into
//! per-token sense embeddings ([`sensedict`]), expand synonym/antonym pairs
//! with morphological negation ([`lexicon`]), compose senses of multi-token
//! words ([`composer`]) and finally train a truncated student with the
//! knowledge-distillation plus semantic-consistency objective ([`distill`]).

pub mod composer;
pub mod corpus;
pub mod distill;
pub mod embed_store;
pub mod error;
pub mod eval;
mod io;
pub mod kmeans;
pub mod lexicon;
pub mod sensedict;
pub mod toylm;

pub use error::{Error, Result};

/// Derives an independent 64-bit seed from `seed` and `salt` (splitmix64 finalizer).
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
