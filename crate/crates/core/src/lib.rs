//! EEG band-power machine-learning pipeline.
//!
//! The crate covers the full path from raw multichannel EEG to an
//! interpretable subject-level classifier:
//!
//! ```text
//! EDF / CSV ──ingest──▶ Recording
//!   ──dsp──▶ standardize (select 14 ch, notch 50, bandpass 0.5–45, avg ref, 128 Hz) + epoch
//!   ──features──▶ Welch PSD ▶ 20 band×region log powers per epoch
//!   ──gbt──▶ gradient-boosted trees (binary logistic / softmax, early stopping)
//!   ──evaluate──▶ leave-one-subject-out folds, per-class AUC, confusion
//!   ──explain──▶ exact tree-Shapley attributions + importance ranking
//!   ──stressguard──▶ stress screening and band-power adjustment
//! ```
//!
//! [`synthgen`] produces seeded synthetic cohorts with class-conditioned
//! band-power profiles so the whole chain can be exercised without
//! clinical data.
//!
//! Built with the `parallel` feature (default), epoch featurization, LOSO
//! folds, split search and Shapley batches run on rayon; without it every
//! code path is sequential. Results are identical either way.

// `!(x > 0.0)` is used throughout validation so that NaN fails the check;
// rewriting it as `x <= 0.0` would silently accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod features;
pub mod gbt;
pub mod ingest;
mod parallel;
pub mod stressguard;
pub mod synthgen;

pub use error::{Error, Result};
pub use ingest::{DatasetManifest, ManifestEntry, Recording};
