//! Zero-shot voice conversion with a cycle-consistent autoencoder.
//!
//! The crate covers the full desk-scale workflow: log-mel front end and
//! cepstral math ([`dsp`]), the speaker-encoder input perturbation
//! ([`perturb`]), a label-smoothed speaker encoder ([`speaker_encoder`]), the
//! conversion network ([`vc_model`]), cycle training ([`trainer`]), MCD
//! evaluation and ablations ([`eval`]) and synthetic corpora ([`corpus`]).

pub mod checkpoint;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nn;
pub mod perturb;
pub mod speaker_encoder;
pub mod trainer;
pub mod vc_model;

pub use error::{Error, Result};
