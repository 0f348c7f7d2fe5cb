//! Speaker-encoder input perturbation: chunk shuffling plus channel stacking.
//!
//! Frames are grouped into consecutive chunks, the chunk order is permuted,
//! and the frames inside each chunk are laid side by side along the channel
//! axis. Word order is destroyed while every frame vector survives intact,
//! so utterance-level statistics are unchanged.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub chunk_len_frames: usize,
    pub rng_seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            chunk_len_frames: DEFAULT_CHUNK_LEN,
            rng_seed: 0,
        }
    }
}

/// Seeded uniform permutation of `0..n`.
pub fn chunk_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn check_len(mel: &MelSpectrogram, chunk_len: usize) -> Result<usize> {
    if chunk_len == 0 {
        return Err(Error::InvalidArgument(
            "chunk_len_frames must be >= 1".into(),
        ));
    }
    if mel.frames() < chunk_len {
        return Err(Error::TooShortToPerturb {
            frames: mel.frames(),
            chunk_len,
        });
    }
    Ok(mel.frames() / chunk_len)
}

/// Stacks chunks in the given order. `order` must be a permutation of
/// `0..frames / chunk_len`.
pub fn stack_in_order(
    mel: &MelSpectrogram,
    chunk_len: usize,
    order: &[usize],
) -> Result<MelSpectrogram> {
    let chunks = check_len(mel, chunk_len)?;
    if order.len() != chunks {
        return Err(Error::DimensionMismatch(format!(
            "order has {} entries for {chunks} chunks",
            order.len()
        )));
    }
    let bins = mel.mel_bins();
    let src = mel.values();
    let mut out = Array2::zeros((chunks, chunk_len * bins));
    for (row, &chunk) in order.iter().enumerate() {
        for j in 0..chunk_len {
            let frame = src.row(chunk * chunk_len + j);
            out.slice_mut(ndarray::s![row, j * bins..(j + 1) * bins])
                .assign(&frame);
        }
    }
    MelSpectrogram::new(
        out,
        mel.sample_rate_hz(),
        mel.hop_length_samples() * chunk_len,
    )
}

/// Stacking without shuffling: chunk order is preserved.
pub fn stack_only(mel: &MelSpectrogram, chunk_len: usize) -> Result<MelSpectrogram> {
    let chunks = check_len(mel, chunk_len)?;
    stack_in_order(mel, chunk_len, &(0..chunks).collect::<Vec<_>>())
}

/// Drops the tail, permutes chunks with `cfg.rng_seed`, and stacks each
/// chunk's frames along the channel axis. Output is
/// `(frames / chunk_len, chunk_len * mel_bins)`.
pub fn shuffle_stack(mel: &MelSpectrogram, cfg: &PerturbConfig) -> Result<MelSpectrogram> {
    let chunks = check_len(mel, cfg.chunk_len_frames)?;
    let order = chunk_permutation(chunks, cfg.rng_seed);
    stack_in_order(mel, cfg.chunk_len_frames, &order)
}
