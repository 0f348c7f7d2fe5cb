//! Objective evaluation: reconstruction and conversion MCD, the speaker
//! embedding probe, and bottleneck/loss ablation sweeps.
//!
//! Conversion MCD has no parallel reference, so it is measured on the round
//! trip `x -> target -> x` against `x`. Reconstruction is the same chain with
//! `x` as its only target.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusHandle, Split, Utterance};
use crate::dsp::{dct2_mfcc, mcd, MelSpectrogram};
use crate::error::{Error, Result};
use crate::perturb::PerturbConfig;
use crate::speaker_encoder::{
    embed, train_speaker_encoder, SpeakerEmbedding, SpeakerEncoderNet, SpeakerTrainConfig,
};
use crate::trainer::{train_vc_with_encoder, VcTrainConfig, VcTrainLog};
use crate::vc_model::VcNet;

/// Anything that can embed a speaker and render a mel in that speaker's voice.
pub trait Converter {
    fn embed(&self, mel: &MelSpectrogram) -> Result<SpeakerEmbedding>;
    fn convert(&self, source: &MelSpectrogram, spk: &SpeakerEmbedding) -> Result<MelSpectrogram>;
}

/// A trained conversion network paired with its frozen speaker encoder.
pub struct VoiceConverter<'a> {
    pub net: &'a VcNet,
    pub se: &'a SpeakerEncoderNet,
}

impl Converter for VoiceConverter<'_> {
    fn embed(&self, mel: &MelSpectrogram) -> Result<SpeakerEmbedding> {
        embed(self.se, mel, &PerturbConfig::default(), true)
    }

    fn convert(&self, source: &MelSpectrogram, spk: &SpeakerEmbedding) -> Result<MelSpectrogram> {
        self.net.convert_with_embedding(source, spk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McdMode {
    Recon,
    Conv,
}

impl McdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            McdMode::Recon => "recon",
            McdMode::Conv => "conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMcd {
    pub source_utt: String,
    pub target_utt: String,
    pub mode: McdMode,
    pub mcd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdReport {
    pub per_pair: Vec<PairMcd>,
    pub recon_avg: f64,
    pub conv_avg: f64,
    /// Mean of `recon_avg` and `conv_avg`.
    pub overall_avg: f64,
}

impl McdReport {
    pub fn from_pairs(per_pair: Vec<PairMcd>) -> Result<Self> {
        let avg = |mode: McdMode| {
            let v: Vec<f64> = per_pair
                .iter()
                .filter(|p| p.mode == mode)
                .map(|p| p.mcd)
                .collect();
            if v.is_empty() {
                Err(Error::EmptySet)
            } else {
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let recon_avg = avg(McdMode::Recon)?;
        let conv_avg = avg(McdMode::Conv)?;
        Ok(Self {
            per_pair,
            recon_avg,
            conv_avg,
            overall_avg: (recon_avg + conv_avg) / 2.0,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_utt,target_utt,mode,mcd\n");
        for p in &self.per_pair {
            writeln!(
                out,
                "{},{},{},{}",
                p.source_utt,
                p.target_utt,
                p.mode.as_str(),
                p.mcd
            )
            .unwrap();
        }
        writeln!(out, "#recon_avg,{}", self.recon_avg).unwrap();
        writeln!(out, "#conv_avg,{}", self.conv_avg).unwrap();
        writeln!(out, "#overall_avg,{}", self.overall_avg).unwrap();
        out
    }

    pub fn render(&self) -> String {
        format!(
            "{:<8}{:>10}\n{:<8}{:>10.3}\n{:<8}{:>10.3}\n{:<8}{:>10.3}\n",
            "", "MCD", "Recon.", self.recon_avg, "Conv.", self.conv_avg, "Avg.", self.overall_avg
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Passes `x` through `convert` once per entry of `targets`, in order.
pub fn conversion_chain(
    conv: &impl Converter,
    x: &MelSpectrogram,
    targets: &[&SpeakerEmbedding],
) -> Result<MelSpectrogram> {
    let mut y = x.clone();
    for spk in targets {
        y = conv.convert(&y, spk)?;
    }
    Ok(y)
}

/// MCD between two mels over all cepstral coefficients, truncating to the shorter.
pub fn mel_mcd(reference: &MelSpectrogram, synthesized: &MelSpectrogram) -> Result<f64> {
    let frames = reference.frames().min(synthesized.frames());
    let bins = reference.mel_bins();
    let a = dct2_mfcc(reference, bins)?.truncated(frames);
    let b = dct2_mfcc(synthesized, bins)?.truncated(frames);
    mcd(&a, &b)
}

/// Cross-speaker `(source, target)` test pairs: each test utterance is
/// paired with one test utterance of every other speaker, chosen by
/// position so every target utterance is used.
pub fn cross_speaker_pairs(corpus: &CorpusHandle) -> Vec<(&Utterance, &Utterance)> {
    let by_speaker: Vec<Vec<&Utterance>> = (0..corpus.num_speakers())
        .map(|s| corpus.of_speaker(s, Split::Test))
        .collect();
    let mut pairs = Vec::new();
    for (s, utts) in by_speaker.iter().enumerate() {
        for (i, src) in utts.iter().enumerate() {
            for (t, targets) in by_speaker.iter().enumerate() {
                if t != s && !targets.is_empty() {
                    pairs.push((*src, targets[i % targets.len()]));
                }
            }
        }
    }
    pairs
}

struct EmbeddingCache<'c, C: Converter> {
    conv: &'c C,
    cache: HashMap<(usize, String), SpeakerEmbedding>,
}

impl<'c, C: Converter> EmbeddingCache<'c, C> {
    fn new(conv: &'c C) -> Self {
        Self {
            conv,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, u: &Utterance) -> Result<SpeakerEmbedding> {
        let key = (u.speaker, u.id.clone());
        if let Some(e) = self.cache.get(&key) {
            return Ok(e.clone());
        }
        let e = self.conv.embed(&u.mel)?;
        self.cache.insert(key, e.clone());
        Ok(e)
    }
}

/// Reconstruction and round-trip conversion MCD over the test split.
pub fn evaluate_mcd_with(conv: &impl Converter, test_set: &CorpusHandle) -> Result<McdReport> {
    let test: Vec<&Utterance> = test_set.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut embeds = EmbeddingCache::new(conv);
    let mut pairs = Vec::new();
    for u in &test {
        let own = embeds.get(u)?;
        let y = conversion_chain(conv, &u.mel, &[&own])?;
        pairs.push(PairMcd {
            source_utt: u.id.clone(),
            target_utt: u.id.clone(),
            mode: McdMode::Recon,
            mcd: mel_mcd(&u.mel, &y)?,
        });
    }
    for (src, tgt) in cross_speaker_pairs(test_set) {
        let own = embeds.get(src)?;
        let other = embeds.get(tgt)?;
        let y = conversion_chain(conv, &src.mel, &[&other, &own])?;
        pairs.push(PairMcd {
            source_utt: src.id.clone(),
            target_utt: tgt.id.clone(),
            mode: McdMode::Conv,
            mcd: mel_mcd(&src.mel, &y)?,
        });
    }
    McdReport::from_pairs(pairs)
}

pub fn evaluate_mcd(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    test_set: &CorpusHandle,
) -> Result<McdReport> {
    evaluate_mcd_with(&VoiceConverter { net, se }, test_set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub pairs: usize,
    pub successes: usize,
    pub rate: f64,
}

/// Fraction of cross-speaker conversions whose output embedding is closer
/// to the target utterance than to the source utterance.
pub fn speaker_probe_with(conv: &impl Converter, test_set: &CorpusHandle) -> Result<ProbeResult> {
    let pairs = cross_speaker_pairs(test_set);
    if pairs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut embeds = EmbeddingCache::new(conv);
    let mut successes = 0;
    for (src, tgt) in &pairs {
        let e_src = embeds.get(src)?;
        let e_tgt = embeds.get(tgt)?;
        let converted = conv.convert(&src.mel, &e_tgt)?;
        let e_out = conv.embed(&converted)?;
        if e_out.cosine(&e_tgt) > e_out.cosine(&e_src) {
            successes += 1;
        }
    }
    Ok(ProbeResult {
        pairs: pairs.len(),
        successes,
        rate: successes as f64 / pairs.len() as f64,
    })
}

pub fn speaker_probe(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    test_set: &CorpusHandle,
) -> Result<ProbeResult> {
    speaker_probe_with(&VoiceConverter { net, se }, test_set)
}

// ---------------------------------------------------------------------------
// Ablations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationToggle {
    LabelSmoothing,
    MfccLoss,
    CycleLoss,
    Shuffle,
}

impl AblationToggle {
    pub fn name(self) -> &'static str {
        match self {
            AblationToggle::LabelSmoothing => "label_smoothing",
            AblationToggle::MfccLoss => "mfcc_loss",
            AblationToggle::CycleLoss => "cycle_loss",
            AblationToggle::Shuffle => "shuffle",
        }
    }

    fn column(self) -> &'static str {
        match self {
            AblationToggle::LabelSmoothing => "w/o LS",
            AblationToggle::MfccLoss => "w/o MFCC",
            AblationToggle::CycleLoss => "w/o Cycle",
            AblationToggle::Shuffle => "w/o Shuffle",
        }
    }

    fn needs_own_encoder(self) -> bool {
        matches!(
            self,
            AblationToggle::LabelSmoothing | AblationToggle::Shuffle
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub bottleneck_sizes: Vec<usize>,
    /// Components switched off one at a time, each at the largest bottleneck.
    pub toggles: Vec<AblationToggle>,
    pub iterations: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            bottleneck_sizes: vec![16, 64, 128],
            toggles: vec![
                AblationToggle::LabelSmoothing,
                AblationToggle::MfccLoss,
                AblationToggle::CycleLoss,
                AblationToggle::Shuffle,
            ],
            iterations: 2000,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bottleneck_sizes.is_empty() || self.bottleneck_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "bottleneck sizes must be non-empty and positive".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "iterations per cell must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

pub struct AblationCell {
    pub bottleneck: usize,
    pub disabled: Option<AblationToggle>,
    pub report: McdReport,
    pub net: VcNet,
    pub log: VcTrainLog,
    /// Wall time spent training this cell's conversion network.
    pub train_secs: f64,
}

impl AblationCell {
    pub fn label(&self) -> String {
        match self.disabled {
            None => format!("full/{}", self.bottleneck),
            Some(t) => format!("{}/{}", t.column(), self.bottleneck),
        }
    }
}

pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn full_cells(&self) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(|c| c.disabled.is_none())
    }

    pub fn cell(
        &self,
        bottleneck: usize,
        disabled: Option<AblationToggle>,
    ) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.bottleneck == bottleneck && c.disabled == disabled)
    }

    /// `(max - min) / min` of overall MCD across the full-model cells.
    pub fn bottleneck_spread(&self) -> f64 {
        let v: Vec<f64> = self.full_cells().map(|c| c.report.overall_avg).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        (max - min) / min
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,bottleneck,disabled,recon_avg,conv_avg,overall_avg\n");
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.label(),
                c.bottleneck,
                c.disabled.map_or("none", |t| t.name()),
                c.report.recon_avg,
                c.report.conv_avg,
                c.report.overall_avg
            )
            .unwrap();
        }
        out
    }

    /// Rows `Recon.`, `Conv.`, `Avg.`; one column per cell.
    pub fn render(&self) -> String {
        let mut out = format!("{:<8}", "");
        for c in &self.cells {
            let head = match c.disabled {
                None => c.bottleneck.to_string(),
                Some(t) => t.column().to_owned(),
            };
            write!(out, "{head:>12}").unwrap();
        }
        out.push('\n');
        type Column = fn(&McdReport) -> f64;
        let rows: [(&str, Column); 3] = [
            ("Recon.", |r| r.recon_avg),
            ("Conv.", |r| r.conv_avg),
            ("Avg.", |r| r.overall_avg),
        ];
        for (name, f) in rows {
            write!(out, "{name:<8}").unwrap();
            for c in &self.cells {
                write!(out, "{:>12.3}", f(&c.report)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates one model per cell: the full model at every
/// bottleneck size, then each toggle disabled at the largest size. All cells
/// share `base_cfg.seed` and therefore the same data order.
///
/// `base_se` is used for cells that keep the speaker encoder unchanged; it is
/// trained from `se_cfg` when absent. Disabling label smoothing or shuffling
/// retrains the encoder with that component off.
pub fn run_ablation(
    corpus: &CorpusHandle,
    spec: &AblationSpec,
    base_cfg: &VcTrainConfig,
    se_cfg: &SpeakerTrainConfig,
    base_se: Option<&SpeakerEncoderNet>,
) -> Result<AblationTable> {
    spec.validate()?;
    let trained;
    let base_se = match base_se {
        Some(se) => se,
        None => {
            trained = train_speaker_encoder(corpus, se_cfg)?.0;
            &trained
        }
    };
    let mut cells_todo: Vec<(usize, Option<AblationToggle>)> =
        spec.bottleneck_sizes.iter().map(|&b| (b, None)).collect();
    let largest = *spec
        .bottleneck_sizes
        .iter()
        .max()
        .expect("validated non-empty");
    cells_todo.extend(spec.toggles.iter().map(|&t| (largest, Some(t))));

    let mut cells = Vec::with_capacity(cells_todo.len());
    for (bottleneck, disabled) in cells_todo {
        let mut cfg = base_cfg.clone();
        cfg.iterations = spec.iterations;
        cfg.model.bottleneck = bottleneck;
        let mut se_cell = se_cfg.clone();
        match disabled {
            Some(AblationToggle::MfccLoss) => cfg.weights.lambda_mfcc = 0.0,
            Some(AblationToggle::CycleLoss) => {
                cfg.weights.lambda_cycle = 0.0;
                cfg.weights.lambda_mfcc = 0.0;
            }
            Some(AblationToggle::LabelSmoothing) => se_cell.alpha = 0.0,
            Some(AblationToggle::Shuffle) => se_cell.shuffle = false,
            None => {}
        }
        let own_se;
        let se = if disabled.is_some_and(AblationToggle::needs_own_encoder) {
            own_se = train_speaker_encoder(corpus, &se_cell)?.0;
            &own_se
        } else {
            base_se
        };
        log::info!("ablation cell bottleneck {bottleneck}, disabled {disabled:?}");
        let started = Instant::now();
        let (net, log) = train_vc_with_encoder(corpus, se, &cfg, None)?;
        let train_secs = started.elapsed().as_secs_f64();
        let report = evaluate_mcd(&net, se, corpus)?;
        cells.push(AblationCell {
            bottleneck,
            disabled,
            report,
            net,
            log,
            train_secs,
        });
    }
    Ok(AblationTable { cells })
}
