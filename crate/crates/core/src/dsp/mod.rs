//! Signal-processing math shared by every other module.
//!
//! The log-mel spectrogram is the exchange format between the corpus, the
//! models and the evaluation harness. MFCCs are the DCT-II of each log-mel
//! frame (unnormalized, with the leading factor of two) and mel-cepstral
//! distortion is the root-mean-square per-frame Euclidean distance between
//! two MFCC sequences.

mod melfile;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub use melfile::{read_mel, write_mel, MelSidecar, MEL_MAGIC, MEL_VERSION};

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;
pub const DEFAULT_MEL_BINS: usize = 80;
pub const DEFAULT_WIN: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
/// Energies below this are clamped before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

/// `10·√2 / ln 10`, the constant conventionally applied to MCD to express it in dB.
pub const MCD_DB_CONSTANT: f64 = 6.141_851_463_713_754;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Log-mel energies, shape `(frames, mel_bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Array2<f64>,
    sample_rate_hz: u32,
    hop_length_samples: usize,
}

impl MelSpectrogram {
    pub fn new(
        values: Array2<f64>,
        sample_rate_hz: u32,
        hop_length_samples: usize,
    ) -> Result<Self> {
        let (frames, bins) = values.dim();
        if frames == 0 || bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "mel spectrogram must be non-empty, got {frames}x{bins}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "mel spectrogram contains non-finite values".into(),
            ));
        }
        if sample_rate_hz == 0 || hop_length_samples == 0 {
            return Err(Error::InvalidArgument(
                "sample rate and hop length must be positive".into(),
            ));
        }
        Ok(Self {
            values,
            sample_rate_hz,
            hop_length_samples,
        })
    }

    /// Wraps values with the default front-end metadata (22050 Hz, hop 256).
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        Self::new(values, DEFAULT_SAMPLE_RATE, DEFAULT_HOP)
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn mel_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn hop_length_samples(&self) -> usize {
        self.hop_length_samples
    }

    /// Same metadata, new values.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        Self::new(values, self.sample_rate_hz, self.hop_length_samples)
    }

    /// Rounds every value to `f32` precision, the precision of the on-disk format.
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.mapv(|v| v as f32 as f64),
            ..self.clone()
        }
    }

    /// Frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::InvalidArgument(format!(
                "frame range {start}..{} out of bounds for {} frames",
                start + len,
                self.frames()
            )));
        }
        self.with_values(
            self.values
                .slice(ndarray::s![start..start + len, ..])
                .to_owned(),
        )
    }

    /// Right-pads with `fill` until the frame count is a multiple of `factor`.
    pub fn pad_to_multiple(&self, factor: usize, fill: f64) -> Self {
        let frames = self.frames();
        let padded = frames.div_ceil(factor) * factor;
        if padded == frames {
            return self.clone();
        }
        let mut values = Array2::from_elem((padded, self.mel_bins()), fill);
        values
            .slice_mut(ndarray::s![..frames, ..])
            .assign(&self.values);
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Cepstral coefficients per frame, shape `(frames, num_coeffs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    values: Array2<f64>,
}

impl MfccSequence {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("MFCC values must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_coeffs(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// First `frames` frames.
    pub fn truncated(&self, frames: usize) -> Self {
        Self {
            values: self
                .values
                .slice(ndarray::s![..frames.min(self.frames()), ..])
                .to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub mel_bins: usize,
    pub win: usize,
    pub hop: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            mel_bins: DEFAULT_MEL_BINS,
            win: DEFAULT_WIN,
            hop: DEFAULT_HOP,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// STFT power spectrum followed by a triangular mel filterbank and natural log.
pub struct MelExtractor {
    cfg: MelConfig,
    /// `(n_freqs, mel_bins)` so a power-spectrum row times this is a mel row.
    filters: Array2<f64>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        if cfg.mel_bins == 0 {
            return Err(Error::InvalidArgument("mel_bins must be >= 1".into()));
        }
        if cfg.win < 2 || cfg.hop == 0 || cfg.hop > cfg.win {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop <= win, got hop {} win {}",
                cfg.hop, cfg.win
            )));
        }
        let nyquist = cfg.sample_rate_hz as f64 / 2.0;
        if !(cfg.f_min >= 0.0 && cfg.f_min < cfg.f_max) {
            return Err(Error::InvalidArgument("need 0 <= f_min < f_max".into()));
        }
        let f_max = cfg.f_max.min(nyquist);
        let n_freqs = cfg.win / 2 + 1;

        let mel_lo = hz_to_mel(cfg.f_min);
        let mel_hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();

        let mut filters = Array2::zeros((n_freqs, cfg.mel_bins));
        for k in 0..n_freqs {
            let f = k as f64 * cfg.sample_rate_hz as f64 / cfg.win as f64;
            for m in 0..cfg.mel_bins {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let rising = (f - lo) / (center - lo);
                let falling = (hi - f) / (hi - center);
                filters[[k, m]] = rising.min(falling).max(0.0);
            }
        }

        let window = (0..cfg.win)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / cfg.win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.win);
        Ok(Self {
            cfg,
            filters,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center frequency (Hz) of mel filter `m`.
    pub fn center_frequency(&self, m: usize) -> f64 {
        let nyquist = self.cfg.sample_rate_hz as f64 / 2.0;
        let mel_lo = hz_to_mel(self.cfg.f_min);
        let mel_hi = hz_to_mel(self.cfg.f_max.min(nyquist));
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) as f64 / (self.cfg.mel_bins + 1) as f64)
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let cfg = &self.cfg;
        let samples = wave.samples();
        if samples.len() < cfg.win {
            return Err(Error::InputTooShort(format!(
                "{} samples, window is {}",
                samples.len(),
                cfg.win
            )));
        }
        let frames = (samples.len() - cfg.win) / cfg.hop + 1;
        let n_freqs = cfg.win / 2 + 1;
        let mut power = Array2::<f64>::zeros((frames, n_freqs));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.win];
        for (t, mut row) in power.axis_iter_mut(Axis(0)).enumerate() {
            let start = t * cfg.hop;
            for ((b, &s), &w) in buf
                .iter_mut()
                .zip(&samples[start..start + cfg.win])
                .zip(&self.window)
            {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in row.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
        }
        let mel = power.dot(&self.filters).mapv(|e| e.max(LOG_FLOOR).ln());
        MelSpectrogram::new(mel, wave.sample_rate_hz(), cfg.hop)
    }
}

/// Log-mel spectrogram with no padding: `frames = (len - win) / hop + 1`.
pub fn melspectrogram(
    wave: &Waveform,
    mel_bins: usize,
    hop: usize,
    win: usize,
) -> Result<MelSpectrogram> {
    let cfg = MelConfig {
        sample_rate_hz: wave.sample_rate_hz(),
        mel_bins,
        hop,
        win,
        ..MelConfig::default()
    };
    MelExtractor::new(cfg)?.compute(wave)
}

/// `(n, num_coeffs)` matrix with entries `2·cos(πk(2n+1)/(2N))`.
pub fn dct2_matrix(n: usize, num_coeffs: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, num_coeffs), |(i, k)| {
        2.0 * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
    })
}

/// Unnormalized DCT-II of every frame, keeping the first `num_coeffs` coefficients.
pub fn dct2_mfcc(mel: &MelSpectrogram, num_coeffs: usize) -> Result<MfccSequence> {
    let n = mel.mel_bins();
    if num_coeffs == 0 || num_coeffs > n {
        return Err(Error::InvalidArgument(format!(
            "num_coeffs must be in 1..={n}, got {num_coeffs}"
        )));
    }
    MfccSequence::new(mel.values().dot(&dct2_matrix(n, num_coeffs)))
}

/// Mel-cepstral distortion without the dB constant.
pub fn mcd(reference: &MfccSequence, synthesized: &MfccSequence) -> Result<f64> {
    mcd_with_scale(reference, synthesized, false)
}

/// Mel-cepstral distortion, optionally multiplied by [`MCD_DB_CONSTANT`].
pub fn mcd_with_scale(
    reference: &MfccSequence,
    synthesized: &MfccSequence,
    conventional_constant: bool,
) -> Result<f64> {
    if reference.values.dim() != synthesized.values.dim() {
        return Err(Error::Unaligned(format!(
            "{:?} vs {:?}",
            reference.values.dim(),
            synthesized.values.dim()
        )));
    }
    if reference.frames() == 0 {
        return Err(Error::Unaligned("sequences have no frames".into()));
    }
    let sum_sq: f64 = reference
        .values
        .iter()
        .zip(synthesized.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let value = (sum_sq / reference.frames() as f64).sqrt();
    Ok(if conventional_constant {
        value * MCD_DB_CONSTANT
    } else {
        value
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sine(freq: f64, amp: f64, seconds: f64) -> Waveform {
        let sr = DEFAULT_SAMPLE_RATE as f64;
        let n = (seconds * sr) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin())
                .collect(),
            DEFAULT_SAMPLE_RATE,
        )
        .unwrap()
    }

    #[test]
    fn silence_floors_everywhere() {
        let wave = Waveform::new(vec![0.0; 22050], DEFAULT_SAMPLE_RATE).unwrap();
        let mel = melspectrogram(&wave, 80, 256, 1024).unwrap();
        assert_eq!(mel.frames(), (22050 - 1024) / 256 + 1);
        assert_eq!(mel.mel_bins(), 80);
        assert!(mel.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn short_input_is_rejected() {
        let wave = Waveform::new(vec![0.1; 1000], DEFAULT_SAMPLE_RATE).unwrap();
        assert!(matches!(
            melspectrogram(&wave, 80, 256, 1024),
            Err(Error::InputTooShort(_))
        ));
    }

    #[test]
    fn sine_peaks_in_its_filter() {
        let extractor = MelExtractor::new(MelConfig::default()).unwrap();
        // Filter center computed independently from the HTK mel formula.
        let mel_hi = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        for target in [30usize, 45, 60] {
            let center_mel = mel_hi * (target + 1) as f64 / 81.0;
            let center_hz = 700.0 * (10f64.powf(center_mel / 2595.0) - 1.0);
            let mel = extractor.compute(&sine(center_hz, 0.5, 0.5)).unwrap();
            for row in mel.values().rows() {
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(argmax, target);
            }
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let quiet = melspectrogram(&sine(440.0, 0.2, 0.3), 80, 256, 1024).unwrap();
        let loud = melspectrogram(&sine(440.0, 0.4, 0.3), 80, 256, 1024).unwrap();
        let floor = LOG_FLOOR.ln();
        let mut checked = 0;
        for (q, l) in quiet.values().iter().zip(loud.values().iter()) {
            if *q > floor {
                assert!((l - q - 4f64.ln()).abs() < 1e-9, "{l} - {q}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn dct_examples() {
        let ones = MelSpectrogram::from_values(array![[1.0, 1.0, 1.0, 1.0]]).unwrap();
        let c = dct2_mfcc(&ones, 4).unwrap();
        assert!((c.values()[[0, 0]] - 8.0).abs() < 1e-12);
        for k in 1..4 {
            assert!(c.values()[[0, k]].abs() < 1e-12);
        }

        let impulse = MelSpectrogram::from_values(array![[1.0, 0.0, 0.0, 0.0]]).unwrap();
        let c = dct2_mfcc(&impulse, 4).unwrap();
        let expected = [
            2.0,
            1.847_759_065_022_573_5,
            std::f64::consts::SQRT_2,
            0.765_366_864_730_179_8,
        ];
        for (got, want) in c.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_coefficient_range() {
        let mel = MelSpectrogram::from_values(Array2::zeros((2, 4))).unwrap();
        assert!(dct2_mfcc(&mel, 0).is_err());
        assert!(dct2_mfcc(&mel, 5).is_err());
        assert_eq!(dct2_mfcc(&mel, 2).unwrap().num_coeffs(), 2);
    }

    #[test]
    fn mcd_examples() {
        let a = MfccSequence::new(array![[1.0, 2.0]]).unwrap();
        let b = MfccSequence::new(array![[4.0, 6.0]]).unwrap();
        assert_eq!(mcd(&a, &a).unwrap(), 0.0);
        assert!((mcd(&a, &b).unwrap() - 5.0).abs() < 1e-12);

        // squared norms 2 and 8
        let c = MfccSequence::new(array![[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let d = MfccSequence::new(array![[1.0, 1.0], [2.0, 2.0]]).unwrap();
        assert!((mcd(&c, &d).unwrap() - 5f64.sqrt()).abs() < 1e-12);

        let scaled = mcd_with_scale(&a, &b, true).unwrap();
        assert!((scaled - 5.0 * 10.0 * 2f64.sqrt() / 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mcd_rejects_unaligned() {
        let a = MfccSequence::new(Array2::zeros((3, 2))).unwrap();
        let b = MfccSequence::new(Array2::zeros((2, 2))).unwrap();
        let c = MfccSequence::new(Array2::zeros((3, 3))).unwrap();
        assert!(matches!(mcd(&a, &b), Err(Error::Unaligned(_))));
        assert!(matches!(mcd(&a, &c), Err(Error::Unaligned(_))));
    }

    #[test]
    fn waveform_validation() {
        assert!(Waveform::new(vec![], 22050).is_err());
        assert!(Waveform::new(vec![1.5], 22050).is_err());
        assert!(Waveform::new(vec![f64::NAN], 22050).is_err());
        assert!(Waveform::new(vec![-1.0, 1.0], 22050).is_ok());
    }

    #[test]
    fn pad_to_multiple_fills_tail() {
        let mel = MelSpectrogram::from_values(Array2::ones((5, 2))).unwrap();
        let padded = mel.pad_to_multiple(4, -3.0);
        assert_eq!(padded.frames(), 8);
        assert_eq!(padded.values()[[4, 1]], 1.0);
        assert_eq!(padded.values()[[7, 0]], -3.0);
        assert_eq!(mel.pad_to_multiple(5, 0.0), mel);
    }
}
