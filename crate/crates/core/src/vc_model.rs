//! Conversion network: instance-normalized content encoder with a
//! down-sampled bottleneck, a speaker-conditioned decoder and a residual
//! postnet.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dsp::{MelSpectrogram, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{instance_norm_forward, Conv1d, Graph, Linear, Lstm, Params, Var};
use crate::perturb::PerturbConfig;
use crate::speaker_encoder::{embed, SpeakerEmbedding, SpeakerEncoderNet};

pub const CHECKPOINT_KIND: &str = "vc_net";
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel standardization over time, without learned affine.
pub fn instance_norm(features: &Array2<f64>, eps: f64) -> Array2<f64> {
    instance_norm_forward(features, eps).0
}

/// Log-mel value used for alignment padding.
pub fn pad_value() -> f64 {
    LOG_FLOOR.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcConfig {
    pub mel_bins: usize,
    pub spk_dim: usize,
    pub enc_channels: usize,
    pub enc_kernel: usize,
    pub enc_layers: usize,
    /// Content-code width; split evenly between the two LSTM directions.
    pub bottleneck: usize,
    pub downsample: usize,
    pub dec_lstm: usize,
    pub dec_channels: usize,
    pub dec_kernel: usize,
    pub dec_conv_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,
    pub postnet_layers: usize,
    /// Global log-mel normalization applied at the input and undone at the output.
    pub mel_mean: f64,
    pub mel_std: f64,
}

impl Default for VcConfig {
    /// Reduced widths that train in minutes on one CPU core.
    fn default() -> Self {
        Self {
            mel_bins: 80,
            spk_dim: 256,
            enc_channels: 64,
            enc_kernel: 5,
            enc_layers: 3,
            bottleneck: 128,
            downsample: 16,
            dec_lstm: 128,
            dec_channels: 64,
            dec_kernel: 5,
            dec_conv_layers: 3,
            postnet_channels: 64,
            postnet_kernel: 5,
            postnet_layers: 5,
            mel_mean: 0.0,
            mel_std: 1.0,
        }
    }
}

impl VcConfig {
    /// Full-size widths of the original autoencoder scaffold.
    pub fn full_size() -> Self {
        Self {
            enc_channels: 512,
            dec_lstm: 1024,
            dec_channels: 512,
            postnet_channels: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.bottleneck < 2 || !self.bottleneck.is_multiple_of(2) {
            return bad("bottleneck must be even and >= 2");
        }
        if self.downsample == 0 {
            return bad("downsample must be >= 1");
        }
        if [self.enc_kernel, self.dec_kernel, self.postnet_kernel]
            .iter()
            .any(|k| k % 2 == 0)
        {
            return bad("kernel sizes must be odd");
        }
        if self.enc_layers == 0 || self.postnet_layers == 0 {
            return bad("encoder and postnet need at least one layer");
        }
        if self.mel_std <= 0.0 || !self.mel_mean.is_finite() {
            return bad("mel_std must be positive");
        }
        Ok(())
    }
}

/// Down-sampled content representation, `(frames / downsample, bottleneck)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCode {
    values: Array2<f64>,
}

impl ContentCode {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("content code must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct VcNet {
    config: VcConfig,
    params: Params,
    enc_convs: Vec<Conv1d>,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    dec_lstm: Lstm,
    dec_convs: Vec<Conv1d>,
    dec_out: Linear,
    postnet: Vec<Conv1d>,
}

/// Decoder outputs in log-mel units.
pub struct DecodeVars {
    pub pre: Var,
    pub post: Var,
}

impl VcNet {
    pub fn new(config: VcConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        let mut enc_convs = Vec::new();
        for i in 0..c.enc_layers {
            let inputs = if i == 0 { c.mel_bins } else { c.enc_channels };
            enc_convs.push(Conv1d::new(
                &mut p,
                &mut rng,
                &format!("enc.conv{i}"),
                inputs,
                c.enc_channels,
                c.enc_kernel,
            ));
        }
        let half = c.bottleneck / 2;
        let enc_fwd = Lstm::new(
            &mut p,
            &mut rng,
            "enc.lstm_fwd",
            c.enc_channels,
            half,
            false,
        );
        let enc_bwd = Lstm::new(&mut p, &mut rng, "enc.lstm_bwd", c.enc_channels, half, true);
        let dec_lstm = Lstm::new(
            &mut p,
            &mut rng,
            "dec.lstm",
            c.bottleneck + c.spk_dim,
            c.dec_lstm,
            false,
        );
        let mut dec_convs = Vec::new();
        for i in 0..c.dec_conv_layers {
            let inputs = if i == 0 { c.dec_lstm } else { c.dec_channels };
            dec_convs.push(Conv1d::new(
                &mut p,
                &mut rng,
                &format!("dec.conv{i}"),
                inputs,
                c.dec_channels,
                c.dec_kernel,
            ));
        }
        let dec_in = if c.dec_conv_layers == 0 {
            c.dec_lstm
        } else {
            c.dec_channels
        };
        let dec_out = Linear::new(&mut p, &mut rng, "dec.out", dec_in, c.mel_bins);
        let mut postnet = Vec::new();
        for i in 0..c.postnet_layers {
            let inputs = if i == 0 {
                c.mel_bins
            } else {
                c.postnet_channels
            };
            let outputs = if i + 1 == c.postnet_layers {
                c.mel_bins
            } else {
                c.postnet_channels
            };
            postnet.push(Conv1d::new(
                &mut p,
                &mut rng,
                &format!("postnet.conv{i}"),
                inputs,
                outputs,
                c.postnet_kernel,
            ));
        }
        Ok(Self {
            config,
            params: p,
            enc_convs,
            enc_fwd,
            enc_bwd,
            dec_lstm,
            dec_convs,
            dec_out,
            postnet,
        })
    }

    pub fn config(&self) -> &VcConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn normalize(&self, g: &mut Graph, x: Var) -> Var {
        let (m, s) = (self.config.mel_mean, self.config.mel_std);
        g.affine(x, 1.0 / s, -m / s)
    }

    fn denormalize(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(x, self.config.mel_std, self.config.mel_mean)
    }

    /// Content code node for a `(frames, mel_bins)` input whose frame count
    /// is a multiple of the downsample factor.
    pub fn encode_graph(&self, g: &mut Graph, mel: Var) -> Var {
        let d = self.config.downsample;
        let frames = g.value(mel).nrows();
        let mut h = self.normalize(g, mel);
        for conv in &self.enc_convs {
            let y = conv.forward(g, &self.params, h);
            let y = g.instance_norm(y, INSTANCE_NORM_EPS);
            h = g.relu(y);
        }
        let fwd = self.enc_fwd.forward(g, &self.params, h);
        let bwd = self.enc_bwd.forward(g, &self.params, h);
        let steps = frames / d;
        let fwd = g.gather_rows(fwd, (0..steps).map(|k| k * d + d - 1).collect());
        let bwd = g.gather_rows(bwd, (0..steps).map(|k| k * d).collect());
        g.concat_cols(&[fwd, bwd])
    }

    /// Decoder and postnet outputs for a code node and a `(1, spk_dim)` embedding.
    pub fn decode_graph(&self, g: &mut Graph, code: Var, spk: Var) -> DecodeVars {
        let d = self.config.downsample;
        let steps = g.value(code).nrows();
        let frames = steps * d;
        // Same as running the LSTM on [upsampled code | broadcast embedding],
        // with the input projection applied before upsampling.
        let b = self.config.bottleneck;
        let w_ih = g.param(&self.params, self.dec_lstm.w_ih);
        let w_code = g.slice_rows(w_ih, 0, b);
        let w_spk = g.slice_rows(w_ih, b, b + self.config.spk_dim);
        let code_proj = g.matmul(code, w_code);
        let spk_proj = g.matmul(spk, w_spk);
        let up = g.gather_rows(code_proj, (0..frames).map(|t| t / d).collect());
        let xp = g.add_row(up, spk_proj);
        let bias = g.param(&self.params, self.dec_lstm.b);
        let xp = g.add_row(xp, bias);
        let w_hh = g.param(&self.params, self.dec_lstm.w_hh);
        let mut h = g.lstm_projected(xp, w_hh, false);
        for conv in &self.dec_convs {
            let y = conv.forward(g, &self.params, h);
            h = g.relu(y);
        }
        let pre_n = self.dec_out.forward(g, &self.params, h);
        let mut r = pre_n;
        for (i, conv) in self.postnet.iter().enumerate() {
            r = conv.forward(g, &self.params, r);
            if i + 1 < self.postnet.len() {
                r = g.tanh(r);
            }
        }
        let post_n = g.add(pre_n, r);
        DecodeVars {
            pre: self.denormalize(g, pre_n),
            post: self.denormalize(g, post_n),
        }
    }

    fn check_mel(&self, mel: &MelSpectrogram) -> Result<()> {
        if mel.mel_bins() != self.config.mel_bins {
            return Err(Error::DimensionMismatch(format!(
                "mel has {} bins, network expects {}",
                mel.mel_bins(),
                self.config.mel_bins
            )));
        }
        if !mel.frames().is_multiple_of(self.config.downsample) {
            return Err(Error::FramesNotAligned {
                frames: mel.frames(),
                factor: self.config.downsample,
            });
        }
        Ok(())
    }

    pub fn encode_content(&self, mel: &MelSpectrogram) -> Result<ContentCode> {
        self.check_mel(mel)?;
        let mut g = Graph::new();
        let x = g.constant(mel.values().clone());
        let code = self.encode_graph(&mut g, x);
        ContentCode::new(g.value(code).clone())
    }

    /// Output of the first encoder instance normalization, before its ReLU.
    pub fn first_norm_activation(&self, mel: &MelSpectrogram) -> Result<Array2<f64>> {
        self.check_mel(mel)?;
        let mut g = Graph::new();
        let x = g.constant(mel.values().clone());
        let h = self.normalize(&mut g, x);
        let y = self.enc_convs[0].forward(&mut g, &self.params, h);
        let y = g.instance_norm(y, INSTANCE_NORM_EPS);
        Ok(g.value(y).clone())
    }

    /// Returns `(mel_pre, mel_post)`.
    pub fn decode(
        &self,
        code: &ContentCode,
        spk: &SpeakerEmbedding,
    ) -> Result<(MelSpectrogram, MelSpectrogram)> {
        if code.dim() != self.config.bottleneck || spk.dim() != self.config.spk_dim {
            return Err(Error::DimensionMismatch(format!(
                "code dim {} / embedding dim {}, network expects {} / {}",
                code.dim(),
                spk.dim(),
                self.config.bottleneck,
                self.config.spk_dim
            )));
        }
        if code.steps() == 0 {
            return Err(Error::InvalidArgument("empty content code".into()));
        }
        let mut g = Graph::new();
        let c = g.constant(code.values().clone());
        let s = g.constant(spk.as_row());
        let out = self.decode_graph(&mut g, c, s);
        Ok((
            MelSpectrogram::from_values(g.value(out.pre).clone())?,
            MelSpectrogram::from_values(g.value(out.post).clone())?,
        ))
    }

    /// Pads to a multiple of the downsample factor, converts with `spk`, and
    /// crops back to the source length.
    pub fn convert_with_embedding(
        &self,
        source: &MelSpectrogram,
        spk: &SpeakerEmbedding,
    ) -> Result<MelSpectrogram> {
        if source.frames() == 0 {
            return Err(Error::InputTooShort("empty source mel".into()));
        }
        let padded = source.pad_to_multiple(self.config.downsample, pad_value());
        let code = self.encode_content(&padded)?;
        let (_, post) = self.decode(&code, spk)?;
        let cropped = post.slice_frames(0, source.frames())?;
        source.with_values(cropped.into_values())
    }

    pub fn save(&self, path: &Path, seed: u64, iterations: u64) -> Result<()> {
        save_checkpoint(
            path,
            CHECKPOINT_KIND,
            &self.config,
            seed,
            iterations,
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path, CHECKPOINT_KIND)?;
        let config: VcConfig = ckpt.config(path)?;
        let mut net = Self::new(config, 0).map_err(|e| Error::format(path, e.to_string()))?;
        ckpt.restore_into(path, &mut net.params)?;
        Ok(net)
    }
}

/// Source content rendered with the target's voice. The output has the
/// source's frame count.
pub fn convert(
    net: &VcNet,
    se: &SpeakerEncoderNet,
    source: &MelSpectrogram,
    target: &MelSpectrogram,
) -> Result<MelSpectrogram> {
    let spk = embed(se, target, &PerturbConfig::default(), true)?;
    net.convert_with_embedding(source, &spk)
}
