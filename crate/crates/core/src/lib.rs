//! Multi-modal multi-view device-directed speech detection.
//!
//! An utterance arrives as a pair of feature sequences: acoustic frames and
//! transcript token features. The model pools and encodes each modality,
//! classifies the audio, the text and their concatenation with three separate
//! heads, and projects both modalities into a shared space where a contrastive
//! objective teaches it whether the transcript matches the audio. At inference
//! time this yields four scores per utterance; two decision policies turn
//! them into a final device-directed verdict that stays robust when the
//! transcript is wrong.
//!
//! Crate layout follows the pipeline:
//!
//! - [`numerics`]: tensors, layers, Adam, gradient checking, seeded RNG
//! - [`data`]: utterance pairs, JSONL I/O, splits, batching, synthetic data
//! - [`encoders`]: pooling and per-modality projections
//! - [`model`]: fusion, view heads, contrastive projections, scoring
//! - [`losses`]: cross-entropy per view, InfoNCE, fixed or learned weighting
//! - [`training`]: the optimization loop and checkpoints
//! - [`policy`]: threshold calibration, branch policy, SVM fusion policy
//! - [`metrics`]: accuracy, ROC, EER and evaluation reports
//! - [`cli`]: the `m3v` command-line front end

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod policy;
pub mod training;
mod util;

pub use error::{M3vError, Result};
