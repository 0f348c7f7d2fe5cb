//! Cycle training of the conversion network.
//!
//! Each step runs the self-reconstruction path `x1 -> x1` and the cycle path
//! `x1 -> x2 -> x1` and minimizes
//! `l_id + l_psnt + λ_code·l_code + λ_cycle·l_cycle + λ_mfcc·l_mfcc`.
//! The speaker encoder stays frozen throughout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Split, Utterance};
use crate::dsp::{dct2_matrix, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, ParamGrads, Var};
use crate::perturb::PerturbConfig;
use crate::speaker_encoder::{embed, SpeakerEncoderNet};
use crate::vc_model::{pad_value, VcConfig, VcNet};

pub const LOSS_LOG: &str = "loss_log.csv";
pub const CHECKPOINT_FILE: &str = "vc.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_code: f64,
    pub lambda_cycle: f64,
    pub lambda_mfcc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_code: 1.0,
            lambda_cycle: 1.0,
            lambda_mfcc: 0.1,
        }
    }
}

impl LossWeights {
    /// The cycle pass is skipped entirely when neither cycle term is weighted.
    pub fn uses_cycle_path(&self) -> bool {
        self.lambda_cycle > 0.0 || self.lambda_mfcc > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_code, self.lambda_cycle, self.lambda_mfcc];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_id: f64,
    pub l_psnt: f64,
    pub l_code: f64,
    pub l_cycle: f64,
    pub l_mfcc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The weighted total recomputed from the individual terms.
    pub fn recomputed_total(&self, w: &LossWeights) -> f64 {
        self.l_id
            + self.l_psnt
            + w.lambda_code * self.l_code
            + w.lambda_cycle * self.l_cycle
            + w.lambda_mfcc * self.l_mfcc
    }

    fn is_finite(&self) -> bool {
        [
            self.l_id,
            self.l_psnt,
            self.l_code,
            self.l_cycle,
            self.l_mfcc,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    fn scaled_add(&mut self, other: &LossBreakdown, s: f64) {
        self.l_id += s * other.l_id;
        self.l_psnt += s * other.l_psnt;
        self.l_code += s * other.l_code;
        self.l_cycle += s * other.l_cycle;
        self.l_mfcc += s * other.l_mfcc;
        self.total += s * other.total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VcTrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Cepstral coefficients in the MFCC loss; all of them when unset.
    pub mfcc_coeffs: Option<usize>,
    /// Checkpoint interval in iterations; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub model: VcConfig,
}

impl Default for VcTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 2,
            crop_frames: 128,
            weights: LossWeights::default(),
            seed: 0,
            mfcc_coeffs: None,
            checkpoint_every: 500,
            model: VcConfig::default(),
        }
    }
}

impl VcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.model.validate()?;
        if self.lr.is_nan() || self.lr <= 0.0 || self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "lr, iterations and batch_size must be positive".into(),
            ));
        }
        if self.crop_frames == 0 || !self.crop_frames.is_multiple_of(self.model.downsample) {
            return Err(Error::InvalidArgument(format!(
                "crop_frames {} must be a positive multiple of downsample {}",
                self.crop_frames, self.model.downsample
            )));
        }
        Ok(())
    }
}

/// Loss nodes of one training example.
pub struct LossVars {
    pub l_id: Var,
    pub l_psnt: Var,
    pub l_code: Var,
    pub l_cycle: Option<Var>,
    pub l_mfcc: Option<Var>,
    pub total: Var,
}

/// Builds the full objective for `x1` (speaker embedding `e1`) converted
/// through `e2`. Both embeddings are `(1, spk_dim)` constants.
pub fn loss_graph(
    g: &mut Graph,
    net: &VcNet,
    x1: &MelSpectrogram,
    e1: Var,
    e2: Var,
    w: &LossWeights,
    mfcc_coeffs: Option<usize>,
) -> LossVars {
    let x = g.constant(x1.values().clone());
    let c1 = net.encode_graph(g, x);
    let recon = net.decode_graph(g, c1, e1);
    let l_id = g.mse(x, recon.pre);
    let l_psnt = g.mse(x, recon.post);

    let (l_code, l_cycle, l_mfcc) = if w.uses_cycle_path() {
        let x12 = net.decode_graph(g, c1, e2).post;
        let c12 = net.encode_graph(g, x12);
        let x121 = net.decode_graph(g, c12, e1).post;
        let c121 = net.encode_graph(g, x121);
        let l_cycle = g.mse(x, x121);
        let bins = x1.mel_bins();
        let dct = g.constant(dct2_matrix(bins, mfcc_coeffs.unwrap_or(bins).min(bins)));
        let m_ref = g.matmul(x, dct);
        let m_cyc = g.matmul(x121, dct);
        let l_mfcc = g.l1(m_ref, m_cyc);
        let l_code = g.l1(c1, c121);
        (l_code, Some(l_cycle), Some(l_mfcc))
    } else {
        let c_post = net.encode_graph(g, recon.post);
        (g.l1(c1, c_post), None, None)
    };

    let mut terms = vec![(l_id, 1.0), (l_psnt, 1.0), (l_code, w.lambda_code)];
    if let (Some(c), Some(m)) = (l_cycle, l_mfcc) {
        terms.push((c, w.lambda_cycle));
        terms.push((m, w.lambda_mfcc));
    }
    let total = g.weighted_sum(&terms);
    LossVars {
        l_id,
        l_psnt,
        l_code,
        l_cycle,
        l_mfcc,
        total,
    }
}

fn breakdown(g: &Graph, v: &LossVars) -> LossBreakdown {
    LossBreakdown {
        l_id: g.scalar(v.l_id),
        l_psnt: g.scalar(v.l_psnt),
        l_code: g.scalar(v.l_code),
        l_cycle: v.l_cycle.map_or(0.0, |c| g.scalar(c)),
        l_mfcc: v.l_mfcc.map_or(0.0, |m| g.scalar(m)),
        total: g.scalar(v.total),
    }
}

fn check_pair(net: &VcNet, x1: &MelSpectrogram, x2: &MelSpectrogram) -> Result<()> {
    if x1.values().dim() != x2.values().dim() {
        return Err(Error::DimensionMismatch(format!(
            "x1 is {:?}, x2 is {:?}",
            x1.values().dim(),
            x2.values().dim()
        )));
    }
    if x1.mel_bins() != net.config().mel_bins {
        return Err(Error::DimensionMismatch(format!(
            "mels have {} bins, network expects {}",
            x1.mel_bins(),
            net.config().mel_bins
        )));
    }
    if x1.frames() == 0 || !x1.frames().is_multiple_of(net.config().downsample) {
        return Err(Error::FramesNotAligned {
            frames: x1.frames(),
            factor: net.config().downsample,
        });
    }
    Ok(())
}

fn pair_graph(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    x1: &MelSpectrogram,
    x2: &MelSpectrogram,
    w: &LossWeights,
    mfcc_coeffs: Option<usize>,
) -> Result<(Graph, LossVars, LossBreakdown)> {
    check_pair(net, x1, x2)?;
    w.validate()?;
    let perturb = PerturbConfig::default();
    let e1 = embed(se, x1, &perturb, true)?;
    let e2 = embed(se, x2, &perturb, true)?;
    let mut g = Graph::new();
    let e1 = g.constant(e1.as_row());
    let e2 = g.constant(e2.as_row());
    let vars = loss_graph(&mut g, net, x1, e1, e2, w, mfcc_coeffs);
    let losses = breakdown(&g, &vars);
    if !losses.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    Ok((g, vars, losses))
}

/// Loss terms for one `(x1, x2)` pair of equal, aligned length.
pub fn cycle_losses(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    x1: &MelSpectrogram,
    x2: &MelSpectrogram,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(pair_graph(net, se, x1, x2, w, None)?.2)
}

/// Loss terms and parameter gradients of the weighted total.
pub fn cycle_losses_with_grads(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    x1: &MelSpectrogram,
    x2: &MelSpectrogram,
    w: &LossWeights,
    mfcc_coeffs: Option<usize>,
) -> Result<(LossBreakdown, ParamGrads)> {
    let (g, vars, losses) = pair_graph(net, se, x1, x2, w, mfcc_coeffs)?;
    let grads = g.backward(vars.total, net.params().len());
    Ok((losses, grads))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VcTrainLog {
    /// Batch-mean losses, one entry per iteration.
    pub steps: Vec<LossBreakdown>,
}

impl VcTrainLog {
    /// Mean total over iterations `start..end` (0-based, clamped).
    pub fn mean_total(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.steps.len());
        let slice = &self.steps[start.min(end)..end];
        slice.iter().map(|s| s.total).sum::<f64>() / slice.len().max(1) as f64
    }
}

pub fn loss_csv_header() -> &'static str {
    "iteration,l_id,l_psnt,l_code,l_cycle,l_mfcc,total"
}

pub fn loss_csv_row(iteration: usize, l: &LossBreakdown) -> String {
    format!(
        "{iteration},{},{},{},{},{},{}",
        l.l_id, l.l_psnt, l.l_code, l.l_cycle, l.l_mfcc, l.total
    )
}

/// Random `frames`-long window, right-padded with the log floor when the
/// utterance is shorter.
pub fn random_crop(
    mel: &MelSpectrogram,
    frames: usize,
    rng: &mut impl Rng,
) -> Result<MelSpectrogram> {
    if mel.frames() >= frames {
        let start = rng.gen_range(0..=mel.frames() - frames);
        return mel.slice_frames(start, frames);
    }
    let padded = mel.pad_to_multiple(frames, pad_value());
    padded.slice_frames(0, frames)
}

struct PairSampler<'a> {
    by_speaker: Vec<Vec<&'a Utterance>>,
}

impl<'a> PairSampler<'a> {
    fn new(corpus: &'a CorpusHandle) -> Result<Self> {
        let by_speaker: Vec<Vec<&Utterance>> = (0..corpus.num_speakers())
            .map(|s| corpus.of_speaker(s, Split::Train))
            .filter(|v| !v.is_empty())
            .collect();
        if by_speaker.len() < 2 {
            return Err(Error::TooFewSpeakers(by_speaker.len()));
        }
        Ok(Self { by_speaker })
    }

    fn sample(&self, rng: &mut impl Rng) -> (&'a Utterance, &'a Utterance) {
        let n = self.by_speaker.len();
        let s1 = rng.gen_range(0..n);
        let s2 = (s1 + rng.gen_range(1..n)) % n;
        let pick = |s: usize, rng: &mut dyn rand::RngCore| {
            let list = &self.by_speaker[s];
            list[rng.gen_range(0..list.len())]
        };
        (pick(s1, rng), pick(s2, rng))
    }
}

/// Output files of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
}

impl TrainOutputs {
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    pub fn loss_log(&self) -> PathBuf {
        self.dir.join(LOSS_LOG)
    }
}

/// Loads the speaker encoder from `se_ckpt` and trains a conversion network.
pub fn train_vc(
    corpus: &CorpusHandle,
    se_ckpt: &Path,
    cfg: &VcTrainConfig,
    out: Option<&TrainOutputs>,
) -> Result<(VcNet, VcTrainLog)> {
    if !se_ckpt.exists() {
        return Err(Error::format(
            se_ckpt,
            "speaker encoder checkpoint not found",
        ));
    }
    let se = SpeakerEncoderNet::load(se_ckpt)?;
    train_vc_with_encoder(corpus, &se, cfg, out)
}

/// Trains a conversion network against a frozen speaker encoder.
///
/// The network's input normalization, mel width and embedding width are
/// taken from the corpus and the encoder, overriding `cfg.model`.
pub fn train_vc_with_encoder(
    corpus: &CorpusHandle,
    se: &SpeakerEncoderNet,
    cfg: &VcTrainConfig,
    out: Option<&TrainOutputs>,
) -> Result<(VcNet, VcTrainLog)> {
    cfg.validate()?;
    let sampler = PairSampler::new(corpus)?;
    let (mean, std) = corpus.train_mel_stats();
    let model = VcConfig {
        mel_bins: se.config().mel_bins,
        spk_dim: se.config().embed_dim,
        mel_mean: mean,
        mel_std: std,
        ..cfg.model.clone()
    };
    let mut net = VcNet::new(model, cfg.seed)?;
    let mut adam = Adam::new(net.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let mut csv = match out {
        Some(o) => {
            fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.loss_log();
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{}", loss_csv_header()).map_err(|e| Error::io(&path, e))?;
            Some((w, path))
        }
        None => None,
    };

    let perturb = PerturbConfig::default();
    let mut log = VcTrainLog::default();
    for it in 0..cfg.iterations {
        let mut grads = ParamGrads::zeros_like(net.params());
        let mut step = LossBreakdown::default();
        let scale = 1.0 / cfg.batch_size as f64;
        for _ in 0..cfg.batch_size {
            let (u1, u2) = sampler.sample(&mut rng);
            let x1 = random_crop(&u1.mel, cfg.crop_frames, &mut rng)?;
            let x2 = random_crop(&u2.mel, cfg.crop_frames, &mut rng)?;
            let e1 = embed(se, &x1, &perturb, true)?;
            let e2 = embed(se, &x2, &perturb, true)?;
            let mut g = Graph::new();
            let e1 = g.constant(e1.as_row());
            let e2 = g.constant(e2.as_row());
            let vars = loss_graph(&mut g, &net, &x1, e1, e2, &cfg.weights, cfg.mfcc_coeffs);
            let losses = breakdown(&g, &vars);
            if !losses.is_finite() {
                return Err(Error::Diverged { iteration: it + 1 });
            }
            step.scaled_add(&losses, scale);
            grads.accumulate(&g.backward(vars.total, net.params().len()), scale);
        }
        adam.step(net.params_mut(), &grads);
        if let Some((w, path)) = csv.as_mut() {
            writeln!(w, "{}", loss_csv_row(it + 1, &step)).map_err(|e| Error::io(&*path, e))?;
        }
        if it % 100 == 0 || it + 1 == cfg.iterations {
            log::info!("vc iteration {}: total {:.4}", it + 1, step.total);
        }
        log.steps.push(step);
        if let Some(o) = out {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                net.save(&o.checkpoint(), cfg.seed, (it + 1) as u64)?;
            }
        }
    }
    if let Some((mut w, path)) = csv {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(o) = out {
        net.save(&o.checkpoint(), cfg.seed, cfg.iterations as u64)?;
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_arithmetic() {
        let w = LossWeights::default();
        let l = LossBreakdown {
            l_id: 1.0,
            l_psnt: 1.0,
            l_code: 1.0,
            l_cycle: 1.0,
            l_mfcc: 1.0,
            total: 0.0,
        };
        assert!((l.recomputed_total(&w) - 4.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = VcTrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.crop_frames = 100;
        assert!(cfg.validate().is_err());
        let cfg = VcTrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_toml_rejects_unknown_keys() {
        let cfg: VcTrainConfig = toml::from_str(
            "iterations = 5\n[weights]\nlambda_code = 1.0\nlambda_cycle = 0.0\nlambda_mfcc = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.iterations, 5);
        assert!(!cfg.weights.uses_cycle_path());
        assert!(toml::from_str::<VcTrainConfig>("iterations = 5\nbogus = 1\n").is_err());
    }

    #[test]
    fn crop_pads_short_input() {
        let mel = MelSpectrogram::from_values(ndarray::Array2::zeros((5, 3))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = random_crop(&mel, 8, &mut rng).unwrap();
        assert_eq!(out.frames(), 8);
        assert_eq!(out.values()[[7, 0]], pad_value());
    }
}
