//! Corpora: synthetic speaker generation, silence trimming, audio ingestion,
//! train/test splitting and the on-disk directory layout.
//!
//! A corpus directory holds `manifest.txt` with one tab-separated line per
//! utterance (`speaker_id`, relative mel path, `train`/`test`, frame count),
//! the referenced mel files, and optionally an `audio/<speaker_id>/*.wav`
//! tree that is ingested on load.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    read_mel, write_mel, MelConfig, MelExtractor, MelSpectrogram, Waveform, DEFAULT_SAMPLE_RATE,
};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const DEFAULT_TEST_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// Index into [`CorpusHandle::speakers`].
    pub speaker: usize,
    pub split: Split,
    pub mel: Arc<MelSpectrogram>,
}

/// An immutable set of labeled utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHandle {
    speakers: Vec<String>,
    utterances: Vec<Utterance>,
}

impl CorpusHandle {
    pub fn new(speakers: Vec<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let mut ids = HashSet::new();
        for u in &utterances {
            if u.speaker >= speakers.len() {
                return Err(Error::InvalidArgument(format!(
                    "utterance {} references speaker index {}",
                    u.id, u.speaker
                )));
            }
            if !ids.insert((u.speaker, u.id.as_str())) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate utterance id {}",
                    u.id
                )));
            }
        }
        Ok(Self {
            speakers,
            utterances,
        })
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Utterances of one speaker in one split, in corpus order.
    pub fn of_speaker(&self, speaker: usize, split: Split) -> Vec<&Utterance> {
        self.split(split).filter(|u| u.speaker == speaker).collect()
    }

    /// Mean and standard deviation of every training mel value.
    pub fn train_mel_stats(&self) -> (f64, f64) {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        for u in self.split(Split::Train) {
            for &v in u.mel.values().iter() {
                n += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
        if n == 0 {
            return (0.0, 1.0);
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        (mean, var.sqrt().max(1e-3))
    }
}

/// Per-speaker seeded split: `round(n * test_ratio)` test utterances, at
/// least one train utterance. Returns a split for each index in `0..n`.
pub fn assign_split(n: usize, test_ratio: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_ratio).round() as usize).min(n.saturating_sub(1));
    let mut out = vec![Split::Train; n];
    for &i in &order[..n_test] {
        out[i] = Split::Test;
    }
    out
}

// ---------------------------------------------------------------------------
// Silence trimming and pitch

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub win: usize,
    pub hop: usize,
    /// Frames quieter than the loudest frame by more than this are "low energy".
    pub energy_threshold_db: f64,
    /// Normalized autocorrelation peak needed to call a frame voiced.
    pub voicing_threshold: f64,
    pub min_pitch_hz: f64,
    pub max_pitch_hz: f64,
}

impl Default for TrimConfig {
    fn default() -> Self {
        Self {
            win: 1024,
            hop: 256,
            energy_threshold_db: 40.0,
            voicing_threshold: 0.3,
            min_pitch_hz: 60.0,
            max_pitch_hz: 400.0,
        }
    }
}

/// Best normalized autocorrelation over the pitch lag range and its lag.
/// A zero-energy frame yields `(0.0, 0)`.
pub fn autocorrelation_peak(
    frame: &[f64],
    sample_rate: u32,
    min_hz: f64,
    max_hz: f64,
) -> (f64, usize) {
    let min_lag = ((sample_rate as f64 / max_hz).floor() as usize).max(1);
    let max_lag =
        ((sample_rate as f64 / min_hz).ceil() as usize).min(frame.len().saturating_sub(1));
    let mut scores = Vec::with_capacity(max_lag + 1);
    for lag in min_lag..=max_lag {
        let (a, b) = (&frame[..frame.len() - lag], &frame[lag..]);
        let mut cross = 0.0;
        let mut ea = 0.0;
        let mut eb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cross += x * y;
            ea += x * x;
            eb += y * y;
        }
        let denom = (ea * eb).sqrt();
        scores.push((if denom > 0.0 { cross / denom } else { 0.0 }, lag));
    }
    let best = scores.iter().map(|s| s.0).fold(0.0, f64::max);
    if best <= 0.0 {
        return (0.0, 0);
    }
    // Shortest lag close to the best score avoids octave-down errors.
    scores
        .into_iter()
        .find(|s| s.0 >= 0.9 * best)
        .expect("best is attained")
}

/// Median pitch (Hz) over voiced frames, sampling every `stride`-th frame.
pub fn estimate_pitch(wave: &Waveform, cfg: &TrimConfig, stride: usize) -> Option<f64> {
    let samples = wave.samples();
    if samples.len() < cfg.win {
        return None;
    }
    let frames = (samples.len() - cfg.win) / cfg.hop + 1;
    let mut pitches: Vec<f64> = (0..frames)
        .step_by(stride.max(1))
        .filter_map(|t| {
            let frame = &samples[t * cfg.hop..t * cfg.hop + cfg.win];
            let (score, lag) = autocorrelation_peak(
                frame,
                wave.sample_rate_hz(),
                cfg.min_pitch_hz,
                cfg.max_pitch_hz,
            );
            (score >= cfg.voicing_threshold && lag > 0)
                .then(|| wave.sample_rate_hz() as f64 / lag as f64)
        })
        .collect();
    if pitches.is_empty() {
        return None;
    }
    pitches.sort_by(f64::total_cmp);
    Some(pitches[pitches.len() / 2])
}

/// Drops hop-sized segments that are both low-energy and unvoiced, and
/// concatenates what remains.
pub fn trim_silence(wave: &Waveform, cfg: &TrimConfig) -> Result<Waveform> {
    let samples = wave.samples();
    if samples.iter().all(|&s| s == 0.0) {
        return Err(Error::NoSpeechContent);
    }
    let half = cfg.win / 2;
    let window = |i: usize| {
        let center = i * cfg.hop + cfg.hop / 2;
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(samples.len());
        &samples[lo..hi]
    };
    let energies: Vec<f64> = samples
        .chunks(cfg.hop)
        .map(|seg| seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64)
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(-cfg.energy_threshold_db / 10.0);

    let mut kept = Vec::with_capacity(samples.len());
    for (i, &e) in energies.iter().enumerate() {
        let keep = e >= floor
            || e > 0.0 && {
                let w = window(i);
                let (score, _) = autocorrelation_peak(
                    w,
                    wave.sample_rate_hz(),
                    cfg.min_pitch_hz,
                    cfg.max_pitch_hz,
                );
                score >= cfg.voicing_threshold
            };
        if keep {
            let lo = i * cfg.hop;
            kept.extend_from_slice(&samples[lo..(lo + cfg.hop).min(samples.len())]);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoSpeechContent);
    }
    Waveform::new(kept, wave.sample_rate_hz())
}

/// Linear-interpolation resampling.
pub fn resample_linear(wave: &Waveform, target_hz: u32) -> Result<Waveform> {
    if wave.sample_rate_hz() == target_hz {
        return Ok(wave.clone());
    }
    let ratio = wave.sample_rate_hz() as f64 / target_hz as f64;
    let src = wave.samples();
    let n = ((src.len() as f64) / ratio).floor().max(1.0) as usize;
    let out = (0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = src[j.min(src.len() - 1)];
            let b = src[(j + 1).min(src.len() - 1)];
            a + (b - a) * frac
        })
        .collect();
    Waveform::new(out, target_hz)
}

// ---------------------------------------------------------------------------
// Synthetic speakers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpeakerSpec {
    pub base_pitch_hz: f64,
    /// Maximum relative pitch excursion of the random intonation walk.
    pub pitch_jitter: f64,
    /// Harmonic amplitude slope in dB per octave.
    pub formant_tilt: f64,
    pub harmonic_count: usize,
    pub noise_floor: f64,
    pub rng_seed: u64,
}

impl SynthSpeakerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(60.0..=400.0).contains(&self.base_pitch_hz) {
            return Err(Error::InvalidArgument(format!(
                "base_pitch_hz {} outside [60, 400]",
                self.base_pitch_hz
            )));
        }
        if self.harmonic_count == 0 {
            return Err(Error::InvalidArgument("harmonic_count must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.pitch_jitter) || !(0.0..0.1).contains(&self.noise_floor) {
            return Err(Error::InvalidArgument(
                "pitch_jitter or noise_floor out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Default speaker design: well-separated pitches and spectral tilts.
pub fn default_speakers(n: usize) -> Vec<SynthSpeakerSpec> {
    const PITCHES: [f64; 4] = [110.0, 150.0, 210.0, 280.0];
    const TILTS: [f64; 4] = [-3.0, -9.0, -5.0, -12.0];
    (0..n)
        .map(|i| {
            let (pitch, tilt) = if n <= PITCHES.len() {
                (PITCHES[i], TILTS[i])
            } else {
                let f = i as f64 / (n - 1) as f64;
                (
                    100.0 * 3.2f64.powf(f),
                    -3.0 - 9.0 * ((i * 7) % n) as f64 / (n - 1) as f64,
                )
            };
            SynthSpeakerSpec {
                base_pitch_hz: pitch,
                pitch_jitter: 0.04,
                formant_tilt: tilt,
                harmonic_count: (5000.0 / pitch) as usize,
                noise_floor: 0.001,
                rng_seed: 1000 + i as u64,
            }
        })
        .collect()
}

/// Vowel-like formant pairs (Hz) shared by every synthetic speaker; they carry
/// the time-varying "content".
const VOWELS: [(f64, f64); 5] = [
    (730.0, 1090.0),
    (270.0, 2290.0),
    (530.0, 1840.0),
    (300.0, 870.0),
    (640.0, 1190.0),
];

fn formant_gain(freq: f64, vowel: (f64, f64)) -> f64 {
    let bump = |center: f64, width: f64| (-((freq - center) / width).powi(2)).exp();
    1.0 + 6.0 * bump(vowel.0, 120.0) + 4.0 * bump(vowel.1, 180.0)
}

/// Harmonic-plus-noise waveform for utterance `index` of `spec`.
pub fn synthesize_utterance(
    spec: &SynthSpeakerSpec,
    index: usize,
    seconds: f64,
    sample_rate: u32,
) -> Result<Waveform> {
    spec.validate()?;
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "utterance duration must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64),
    );

    let lead = (0.1 * sr) as usize;
    let voiced = n.saturating_sub(2 * lead).max(1);

    // Syllables: (start, len, vowel, peak amplitude)
    let mut syllables = Vec::new();
    let mut pos = 0usize;
    while pos < voiced {
        let len = ((rng.gen_range(0.12..0.30) * sr) as usize)
            .min(voiced - pos)
            .max(1);
        syllables.push((
            pos,
            len,
            VOWELS[rng.gen_range(0..VOWELS.len())],
            rng.gen_range(0.5..1.0),
        ));
        pos += len;
    }

    // Smooth intonation walk in [-1, 1], updated every 64 samples.
    const BLOCK: usize = 64;
    let blocks = voiced.div_ceil(BLOCK);
    let mut walk = Vec::with_capacity(blocks);
    let (mut w, mut vel) = (0.0f64, 0.0f64);
    for _ in 0..blocks {
        vel = 0.95 * vel + rng.gen_range(-0.02..0.02);
        w = (w + vel).clamp(-1.0, 1.0);
        if w.abs() >= 1.0 {
            vel = -vel;
        }
        walk.push(w);
    }

    let nyquist_guard = 0.45 * sr;
    let norm: f64 = (1..=spec.harmonic_count)
        .map(|k| 10f64.powf(spec.formant_tilt * (k as f64).log2() / 20.0))
        .sum::<f64>()
        .max(1.0);

    let mut out = vec![0.0; n];
    let mut phase = 0.0f64;
    let mut amps = vec![0.0; spec.harmonic_count];
    for (start, len, vowel, peak) in &syllables {
        for i in *start..start + len {
            let block = i / BLOCK;
            let f0 = spec.base_pitch_hz * (1.0 + spec.pitch_jitter * walk[block]);
            if i % BLOCK == 0 || i == *start {
                for (k, a) in amps.iter_mut().enumerate() {
                    let h = (k + 1) as f64;
                    let f = h * f0;
                    *a = if f < nyquist_guard {
                        10f64.powf(spec.formant_tilt * h.log2() / 20.0) * formant_gain(f, *vowel)
                    } else {
                        0.0
                    };
                }
            }
            let rel = (i - start) as f64 / *len as f64;
            let env = peak * (0.2 + 0.8 * (PI * rel).sin().powi(2));

            phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
            // sin(kφ) by the Chebyshev recurrence
            let (s1, c1) = phase.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            for a in &amps {
                acc += a * cur;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
            }
            out[lead + i] = 0.25 * env * acc / norm;
        }
    }
    for s in out.iter_mut() {
        *s = (*s + spec.noise_floor * rng.gen_range(-1.0..1.0)).clamp(-1.0, 1.0);
    }
    Waveform::new(out, sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub mel: MelConfig,
    pub trim: TrimConfig,
    pub test_ratio: f64,
    pub split_seed: u64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            mel: MelConfig::default(),
            trim: TrimConfig::default(),
            test_ratio: DEFAULT_TEST_RATIO,
            split_seed: 0,
        }
    }
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:02}")
}

/// Synthesizes, trims and featurizes `utts_per_speaker` utterances for each
/// spec, with mels rounded to on-disk precision.
pub fn generate_synthetic_corpus(
    specs: &[SynthSpeakerSpec],
    utts_per_speaker: usize,
    utt_seconds: f64,
) -> Result<CorpusHandle> {
    generate_synthetic_corpus_with(
        specs,
        utts_per_speaker,
        utt_seconds,
        &CorpusOptions::default(),
    )
}

pub fn generate_synthetic_corpus_with(
    specs: &[SynthSpeakerSpec],
    utts_per_speaker: usize,
    utt_seconds: f64,
    opts: &CorpusOptions,
) -> Result<CorpusHandle> {
    if specs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 speaker specs".into(),
        ));
    }
    if utts_per_speaker == 0 {
        return Err(Error::InvalidArgument(
            "need at least 1 utterance per speaker".into(),
        ));
    }
    let mut seeds = HashSet::new();
    for s in specs {
        s.validate()?;
        if !seeds.insert(s.rng_seed) {
            return Err(Error::InvalidArgument(format!(
                "duplicate speaker seed {}",
                s.rng_seed
            )));
        }
    }
    let extractor = MelExtractor::new(opts.mel)?;
    let mut utterances = Vec::with_capacity(specs.len() * utts_per_speaker);
    for (si, spec) in specs.iter().enumerate() {
        let splits = assign_split(
            utts_per_speaker,
            opts.test_ratio,
            opts.split_seed ^ si as u64,
        );
        for (ui, split) in splits.into_iter().enumerate() {
            let wave = synthesize_utterance(spec, ui, utt_seconds, opts.mel.sample_rate_hz)?;
            let wave = trim_silence(&wave, &opts.trim)?;
            let mel = extractor.compute(&wave)?.quantized();
            utterances.push(Utterance {
                id: format!("{}_{ui:04}", speaker_name(si)),
                speaker: si,
                split,
                mel: Arc::new(mel),
            });
        }
    }
    CorpusHandle::new((0..specs.len()).map(speaker_name).collect(), utterances)
}

// ---------------------------------------------------------------------------
// Directory layout

fn mel_rel_path(speaker: &str, id: &str) -> String {
    format!("mels/{speaker}/{id}.mel")
}

pub fn save_corpus(handle: &CorpusHandle, dir: &Path) -> Result<()> {
    let mut manifest = String::from("# speaker_id\tmel_path\tsplit\tframes\n");
    for u in handle.utterances() {
        let speaker = &handle.speakers()[u.speaker];
        let rel = mel_rel_path(speaker, &u.id);
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_mel(&path, &u.mel, Some(speaker))?;
        writeln!(
            manifest,
            "{speaker}\t{rel}\t{}\t{}",
            u.split.as_str(),
            u.mel.frames()
        )
        .unwrap();
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads `manifest.txt` (if present) and ingests any `audio/<speaker>/*.wav`
/// files not already listed.
pub fn load_corpus(dir: &Path) -> Result<CorpusHandle> {
    load_corpus_with(dir, &CorpusOptions::default())
}

pub fn load_corpus_with(dir: &Path, opts: &CorpusOptions) -> Result<CorpusHandle> {
    let mut speakers: Vec<String> = Vec::new();
    let mut utterances = Vec::new();
    let speaker_index = |name: &str, speakers: &mut Vec<String>| {
        speakers.iter().position(|s| s == name).unwrap_or_else(|| {
            speakers.push(name.to_owned());
            speakers.len() - 1
        })
    };

    let manifest = dir.join(MANIFEST);
    let has_manifest = manifest.exists();
    if has_manifest {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |message: String| Error::Manifest {
                path: manifest.clone(),
                line: line_no,
                message,
            };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            let [speaker, rel, split, frames] = fields[..] else {
                return Err(bad(format!(
                    "expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            };
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(format!("unknown split {other:?}"))),
            };
            let frames: usize = frames
                .parse()
                .map_err(|_| bad(format!("frame count {frames:?} is not an integer")))?;
            let mel_path = dir.join(rel);
            if !mel_path.exists() {
                return Err(bad(format!("missing mel file {}", mel_path.display())));
            }
            let (mel, _) = read_mel(&mel_path)?;
            if mel.frames() != frames {
                return Err(bad(format!(
                    "{} has {} frames, manifest says {frames}",
                    mel_path.display(),
                    mel.frames()
                )));
            }
            let id = Path::new(rel)
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| bad(format!("bad mel path {rel:?}")))?
                .to_owned();
            let speaker = speaker_index(speaker, &mut speakers);
            utterances.push(Utterance {
                id,
                speaker,
                split,
                mel: Arc::new(mel),
            });
        }
    }

    let audio_root = dir.join("audio");
    if audio_root.is_dir() {
        let extractor = MelExtractor::new(opts.mel)?;
        let mut by_speaker: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for entry in read_dir_sorted(&audio_root)? {
            if !entry.is_dir() {
                continue;
            }
            let name = entry
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            let wavs = read_dir_sorted(&entry)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                .collect();
            by_speaker.insert(name, wavs);
        }
        for (si, (name, wavs)) in by_speaker.into_iter().enumerate() {
            let speaker = speaker_index(&name, &mut speakers);
            let fresh: Vec<PathBuf> = wavs
                .into_iter()
                .filter(|p| {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    !utterances
                        .iter()
                        .any(|u| u.speaker == speaker && u.id == stem)
                })
                .collect();
            let splits = assign_split(fresh.len(), opts.test_ratio, opts.split_seed ^ si as u64);
            for (path, split) in fresh.into_iter().zip(splits) {
                let wave = read_wav(&path)?;
                let wave = resample_linear(&wave, opts.mel.sample_rate_hz)?;
                let wave = trim_silence(&wave, &opts.trim)?;
                let mel = extractor.compute(&wave)?.quantized();
                utterances.push(Utterance {
                    id: path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or_default()
                        .to_owned(),
                    speaker,
                    split,
                    mel: Arc::new(mel),
                });
            }
        }
    }

    if !has_manifest && utterances.is_empty() {
        return Err(Error::format(dir, "no manifest.txt and no audio/ files"));
    }
    CorpusHandle::new(speakers, utterances)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Reads a WAV file, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    let channels = spec.channels.max(1) as usize;
    let mono = raw
        .chunks(channels)
        .map(|c| (c.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    Waveform::new(mono, spec.sample_rate).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes 16-bit mono PCM.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::format(path, e.to_string()))?;
    for &s in wave.samples() {
        writer
            .write_sample((s * 32767.0).round() as i16)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Pitch of a default-rate waveform; convenience for tests and probes.
pub fn utterance_pitch(wave: &Waveform) -> Option<f64> {
    debug_assert_eq!(wave.sample_rate_hz(), DEFAULT_SAMPLE_RATE);
    estimate_pitch(wave, &TrimConfig::default(), 4)
}
