//! Training and evaluation toolkit for a multi-label cosine classifier head
//! over precomputed image features, aimed at human-object interaction (HOI)
//! recognition.
//!
//! The pipeline: class vocabulary ([`labelspace`]) → matrices on disk
//! ([`dataio`]) → split and oversampled epochs ([`sampler`]) → cosine
//! logits ([`classifier`]) → LSE-Sign or baseline loss ([`losses`]) →
//! Adam with warm-restart cosine schedule ([`optim`]) → mAP and weight
//! structure analysis ([`metrics`]). [`harness`] wires these together.

pub mod classifier;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod labelspace;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod numdiff;
pub mod optim;
pub mod sampler;

pub use error::{Error, Result};
pub use matrix::Matrix;
