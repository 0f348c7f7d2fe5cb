//! Convolution-bank speaker encoder.
//!
//! The encoder reads a chunk-shuffled, channel-stacked mel (see
//! [`crate::perturb`]), runs a bank of parallel convolutions of several
//! kernel widths, max-pools, averages over time and projects to a unit-norm
//! embedding. It is trained as a K-way speaker classifier against
//! label-smoothed targets and frozen afterwards.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::corpus::{CorpusHandle, Split};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv1d, Graph, Linear, ParamGrads, Params, Var};
use crate::perturb::{shuffle_stack, stack_in_order, stack_only, PerturbConfig, DEFAULT_CHUNK_LEN};

pub const CHECKPOINT_KIND: &str = "speaker_encoder";
pub const DEFAULT_EMBED_DIM: usize = 256;

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    values: Array1<f64>,
}

impl SpeakerEmbedding {
    /// Normalizes `values` to unit length.
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding must be non-empty and finite".into(),
            ));
        }
        let norm = values.dot(&values).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("embedding has zero norm".into()));
        }
        Ok(Self {
            values: values / norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        self.values.dot(&other.values)
    }

    pub fn as_row(&self) -> Array2<f64> {
        self.values.clone().insert_axis(Axis(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedLabel {
    pub num_classes: usize,
    pub alpha: f64,
    pub values: Vec<f64>,
}

impl SmoothedLabel {
    /// Shannon entropy in nats; the floor of the cross-entropy against this target.
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// `(1 - alpha)` on the true class plus `alpha / K` everywhere.
pub fn smooth_labels(class_index: usize, num_classes: usize, alpha: f64) -> Result<SmoothedLabel> {
    if class_index >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "class index {class_index} out of range for {num_classes} classes"
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1)"
        )));
    }
    let off = alpha / num_classes as f64;
    let mut values = vec![off; num_classes];
    values[class_index] = (1.0 - alpha) + off;
    Ok(SmoothedLabel {
        num_classes,
        alpha,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerEncoderConfig {
    pub mel_bins: usize,
    pub chunk_len: usize,
    pub kernel_widths: Vec<usize>,
    pub bank_channels: usize,
    pub pool_width: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    /// Global input normalization, applied before the bank.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for SpeakerEncoderConfig {
    fn default() -> Self {
        Self {
            mel_bins: 80,
            chunk_len: DEFAULT_CHUNK_LEN,
            kernel_widths: vec![1, 3, 5, 7],
            bank_channels: 128,
            pool_width: 2,
            hidden_dim: 256,
            embed_dim: DEFAULT_EMBED_DIM,
            num_classes: 4,
            input_mean: 0.0,
            input_std: 1.0,
        }
    }
}

impl SpeakerEncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.kernel_widths.is_empty() || self.kernel_widths.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument(
                "kernel widths must be odd and non-empty".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::TooFewSpeakers(self.num_classes));
        }
        if self.chunk_len == 0 || self.pool_width == 0 || self.input_std <= 0.0 {
            return Err(Error::InvalidArgument(
                "chunk_len, pool_width and input_std must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerEncoderNet {
    config: SpeakerEncoderConfig,
    params: Params,
    bank: Vec<Conv1d>,
    proj1: Linear,
    proj2: Linear,
    classifier: Linear,
}

impl SpeakerEncoderNet {
    /// Randomly initialized network.
    pub fn new(config: SpeakerEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let inputs = config.chunk_len * config.mel_bins;
        let bank = config
            .kernel_widths
            .iter()
            .map(|&k| {
                Conv1d::new(
                    &mut params,
                    &mut rng,
                    &format!("bank{k}"),
                    inputs,
                    config.bank_channels,
                    k,
                )
            })
            .collect();
        let bank_out = config.bank_channels * config.kernel_widths.len();
        let proj1 = Linear::new(&mut params, &mut rng, "proj1", bank_out, config.hidden_dim);
        let proj2 = Linear::new(
            &mut params,
            &mut rng,
            "proj2",
            config.hidden_dim,
            config.embed_dim,
        );
        let classifier = Linear::new(
            &mut params,
            &mut rng,
            "classifier",
            config.embed_dim,
            config.num_classes,
        );
        Ok(Self {
            config,
            params,
            bank,
            proj1,
            proj2,
            classifier,
        })
    }

    pub fn config(&self) -> &SpeakerEncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_input(&self, stacked: &Array2<f64>) -> Result<()> {
        let want = self.config.chunk_len * self.config.mel_bins;
        if stacked.ncols() != want || stacked.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "stacked input has {:?}, encoder expects (_, {want})",
                stacked.dim()
            )));
        }
        Ok(())
    }

    fn bank_graph(&self, g: &mut Graph, x: Var) -> Var {
        let std = self.config.input_std;
        let x = g.affine(x, 1.0 / std, -self.config.input_mean / std);
        let outs: Vec<Var> = self
            .bank
            .iter()
            .map(|conv| {
                let y = conv.forward(g, &self.params, x);
                g.relu(y)
            })
            .collect();
        g.concat_cols(&outs)
    }

    /// Embedding node `(1, embed_dim)`, unit norm.
    pub fn embed_graph(&self, g: &mut Graph, stacked: Var) -> Var {
        let bank = self.bank_graph(g, stacked);
        let pooled = g.max_pool_rows(bank, self.config.pool_width);
        let mean = g.mean_rows(pooled);
        let h = self.proj1.forward(g, &self.params, mean);
        let h = g.relu(h);
        let e = self.proj2.forward(g, &self.params, h);
        g.l2_normalize_rows(e)
    }

    pub fn logits_graph(&self, g: &mut Graph, embedding: Var) -> Var {
        self.classifier.forward(g, &self.params, embedding)
    }

    /// Time-averaged bank activations, before pooling and projection.
    pub fn mean_bank_output(&self, stacked: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_input(stacked)?;
        let mut g = Graph::new();
        let x = g.constant(stacked.clone());
        let bank = self.bank_graph(&mut g, x);
        Ok(g.value(bank).mean_axis(Axis(0)).expect("non-empty"))
    }

    /// Embedding of an already perturbed input.
    pub fn embed_stacked(&self, stacked: &Array2<f64>) -> Result<SpeakerEmbedding> {
        self.check_input(stacked)?;
        let mut g = Graph::new();
        let x = g.constant(stacked.clone());
        let e = self.embed_graph(&mut g, x);
        SpeakerEmbedding::new(g.value(e).row(0).to_owned())
    }

    /// Class probabilities for an embedding.
    pub fn classify(&self, embedding: &SpeakerEmbedding) -> Array1<f64> {
        let mut g = Graph::new();
        let e = g.constant(embedding.as_row());
        let logits = self.logits_graph(&mut g, e);
        let row = g.value(logits).row(0).to_owned();
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp = row.mapv(|v| (v - max).exp());
        let sum = exp.sum();
        exp / sum
    }

    pub fn predict(&self, mel: &MelSpectrogram) -> Result<usize> {
        let probs = self.classify(&embed(self, mel, &PerturbConfig::default(), true)?);
        Ok(argmax(probs.as_slice().unwrap()))
    }

    pub fn save(&self, path: &Path, seed: u64, epochs: u64) -> Result<()> {
        save_checkpoint(
            path,
            CHECKPOINT_KIND,
            &self.config,
            seed,
            epochs,
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path, CHECKPOINT_KIND)?;
        let config: SpeakerEncoderConfig = ckpt.config(path)?;
        let mut net =
            Self::new(config, 0).map_err(|e| crate::Error::format(path, e.to_string()))?;
        ckpt.restore_into(path, &mut net.params)?;
        Ok(net)
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Speaker embedding of `mel`. In eval mode chunks are stacked in their
/// original order; otherwise they are shuffled with `cfg.rng_seed`.
pub fn embed(
    net: &SpeakerEncoderNet,
    mel: &MelSpectrogram,
    cfg: &PerturbConfig,
    eval_mode: bool,
) -> Result<SpeakerEmbedding> {
    let chunk = net.config.chunk_len;
    let stacked = if eval_mode {
        stack_only(mel, chunk)?
    } else {
        shuffle_stack(
            mel,
            &PerturbConfig {
                chunk_len_frames: chunk,
                rng_seed: cfg.rng_seed,
            },
        )?
    };
    net.embed_stacked(stacked.values())
}

/// Embedding with an explicit chunk order (eval-mode stacking, permuted).
pub fn embed_in_order(
    net: &SpeakerEncoderNet,
    mel: &MelSpectrogram,
    order: &[usize],
) -> Result<SpeakerEmbedding> {
    let stacked = stack_in_order(mel, net.config.chunk_len, order)?;
    net.embed_stacked(stacked.values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    /// Chunk shuffling during training; stacking alone when off.
    pub shuffle: bool,
    pub seed: u64,
    pub chunk_len: usize,
    pub kernel_widths: Vec<usize>,
    pub bank_channels: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for SpeakerTrainConfig {
    fn default() -> Self {
        let net = SpeakerEncoderConfig::default();
        Self {
            epochs: 15,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            alpha: 0.1,
            batch_size: 8,
            crop_frames: 128,
            shuffle: true,
            seed: 0,
            chunk_len: net.chunk_len,
            kernel_widths: net.kernel_widths,
            bank_channels: net.bank_channels,
            hidden_dim: net.hidden_dim,
            embed_dim: net.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Fraction of `split` utterances whose predicted speaker is correct.
pub fn accuracy(net: &SpeakerEncoderNet, corpus: &CorpusHandle, split: Split) -> Result<f64> {
    let mut total = 0;
    let mut correct = 0;
    for u in corpus.split(split) {
        total += 1;
        if net.predict(&u.mel)? == u.speaker {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptySet);
    }
    Ok(correct as f64 / total as f64)
}

fn random_crop(mel: &MelSpectrogram, frames: usize, rng: &mut impl Rng) -> Result<MelSpectrogram> {
    if mel.frames() <= frames {
        return Ok(mel.clone());
    }
    let start = rng.gen_range(0..=mel.frames() - frames);
    mel.slice_frames(start, frames)
}

/// Trains the encoder as a speaker classifier with soft-label cross-entropy.
/// With `epochs == 0` the randomly initialized network is returned.
pub fn train_speaker_encoder(
    corpus: &CorpusHandle,
    cfg: &SpeakerTrainConfig,
) -> Result<(SpeakerEncoderNet, SpeakerTrainLog)> {
    let k = corpus.num_speakers();
    if k < 2 {
        return Err(Error::TooFewSpeakers(k));
    }
    if cfg.lr <= 0.0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "lr and batch_size must be positive".into(),
        ));
    }
    let train: Vec<_> = corpus.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptySet);
    }
    let mel_bins = train[0].mel.mel_bins();
    let (input_mean, input_std) = corpus.train_mel_stats();
    let net_cfg = SpeakerEncoderConfig {
        mel_bins,
        chunk_len: cfg.chunk_len,
        kernel_widths: cfg.kernel_widths.clone(),
        bank_channels: cfg.bank_channels,
        pool_width: 2,
        hidden_dim: cfg.hidden_dim,
        embed_dim: cfg.embed_dim,
        num_classes: k,
        input_mean,
        input_std,
    };
    let mut net = SpeakerEncoderNet::new(net_cfg, cfg.seed)?;
    let mut adam = Adam::new(&net.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let targets: Vec<SmoothedLabel> = (0..k)
        .map(|c| smooth_labels(c, k, cfg.alpha))
        .collect::<Result<_>>()?;
    let has_test = corpus.count(Split::Test) > 0;

    let mut log = SpeakerTrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ParamGrads::zeros_like(&net.params);
            for &i in batch {
                let utt = train[i];
                let crop = random_crop(&utt.mel, cfg.crop_frames, &mut rng)?;
                let perturb_seed: u64 = rng.gen();
                let stacked = if cfg.shuffle {
                    shuffle_stack(
                        &crop,
                        &PerturbConfig {
                            chunk_len_frames: cfg.chunk_len,
                            rng_seed: perturb_seed,
                        },
                    )?
                } else {
                    stack_only(&crop, cfg.chunk_len)?
                };
                let mut g = Graph::new();
                let x = g.constant(stacked.into_values());
                let e = net.embed_graph(&mut g, x);
                let logits = net.logits_graph(&mut g, e);
                let loss = g.soft_cross_entropy(logits, &targets[utt.speaker].values);
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged { iteration: epoch });
                }
                loss_sum += value;
                grads.accumulate(
                    &g.backward(loss, net.params.len()),
                    1.0 / batch.len() as f64,
                );
            }
            adam.step(&mut net.params, &grads);
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / train.len() as f64,
            train_accuracy: accuracy(&net, corpus, Split::Train)?,
            test_accuracy: if has_test {
                accuracy(&net, corpus, Split::Test)?
            } else {
                f64::NAN
            },
        };
        log::info!(
            "speaker encoder epoch {}: loss {:.4} train acc {:.3} test acc {:.3}",
            stats.epoch,
            stats.mean_loss,
            stats.train_accuracy,
            stats.test_accuracy
        );
        log.epochs.push(stats);
    }
    Ok((net, log))
}
