//! Language information in multilingual encoder token embeddings.
//!
//! The crate is organised bottom-up:
//!
//! - [`embedstore`]: binary dumps of per-layer token embeddings, manifests
//!   and vocabularies.
//! - [`langrep`]: language means, zero-mean and mean-difference shifts.
//! - [`retrieval`]: mean-pooled sentence embeddings, exact cosine retrieval,
//!   Tatoeba accuracy, BUCC-style precision/recall/F1 and cosine diagnostics.
//! - [`tokentrans`]: nearest-token decoding of shifted embeddings, BLEU-1,
//!   conversion rate and alpha/layer sweeps.
//! - [`synthlab`]: a synthetic bilingual corpus with known language offsets
//!   and the sensitivity experiment run on it.
//! - [`report`]: JSON/CSV report envelopes and the end-to-end pipeline.

pub mod embedstore;
pub mod error;
pub mod langrep;
pub mod report;
pub mod retrieval;
pub mod synthlab;
pub mod tokentrans;

pub use error::{Error, Result};
