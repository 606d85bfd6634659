//! Desk-scale toolkit for two paralinguistic speech tasks: detecting
//! whether a speaker wears a surgical mask (binary classification on
//! one-second chunks) and regressing a respiratory-belt signal from
//! spontaneous speech.
//!
//! The crate is organized around the processing stages:
//!
//! - [`dsp`]: WAV ingestion, log mel-filterbank features, resampling,
//!   frame stacking, feature normalization and feature files.
//! - [`augment`]: speed perturbation, time/frequency masking and random
//!   erasing with a fully deterministic, documented RNG.
//! - [`nnet`]: a small tensor engine with hand-written backward passes,
//!   a residual embedding classifier with parallel average/deviation
//!   pooling, a stacked Bi-LSTM regressor, losses, optimizers and
//!   checkpointing.
//! - [`svm`]: RBF-kernel SVM trained by SMO, Platt-calibrated
//!   probabilities, probability fusion across systems.
//! - [`metrics`]: unweighted average recall, Pearson correlation,
//!   confusion matrices and report emission.
//! - [`pipeline`]: manifests, configuration, synthetic corpora, the two
//!   end-to-end training flows and experiment orchestration.

pub mod augment;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod rng;
pub mod svm;

pub use error::{Error, Result};
pub use rng::Rng;
