//! Auditory attention decoding from single-channel EEG.
//!
//! Speech envelopes and EEG are conditioned to a common analysis rate
//! ([`preprocess`]), a temporal response function (TRF) is tracked per
//! speaker and trial ([`estimation`]), N1–P2 markers are read off each TRF
//! ([`markers`]) and a linear SVM with Platt scaling turns the marker pair
//! into an attention probability ([`classify`]). [`pipeline`] runs the
//! init/train/test protocol on a recording, [`synth`] builds dual-speaker
//! scenes with known ground truth, and [`cli`], [`io`] and [`plot`] provide
//! the command-line surface and file formats.

pub mod classify;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod io;
pub mod markers;
pub mod pipeline;
pub mod plot;
pub mod preprocess;
pub mod synth;

pub use error::{AadError, Result};
