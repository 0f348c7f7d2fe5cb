//! Binary mel container plus a JSON sidecar.
//!
//! Layout: `MELS` magic, version `u16`, frames `u32`, mel bins `u16`, four
//! reserved bytes, then `frames * mel_bins` row-major little-endian `f32`.
//! Sample rate, hop and speaker id live in `<file>.json` next to it.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{MelSpectrogram, DEFAULT_HOP, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MEL_MAGIC: &[u8; 4] = b"MELS";
pub const MEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelSidecar {
    pub sample_rate_hz: u32,
    pub hop_length_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_mel(path: &Path, mel: &MelSpectrogram, speaker: Option<&str>) -> Result<()> {
    let frames = u32::try_from(mel.frames())
        .map_err(|_| Error::format(path, "too many frames for the container"))?;
    let bins = u16::try_from(mel.mel_bins())
        .map_err(|_| Error::format(path, "too many mel bins for the container"))?;

    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * mel.values().len());
    bytes.extend_from_slice(MEL_MAGIC);
    bytes.extend_from_slice(&MEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&frames.to_le_bytes());
    bytes.extend_from_slice(&bins.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 4]);
    for v in mel.values().iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let sidecar = MelSidecar {
        sample_rate_hz: mel.sample_rate_hz(),
        hop_length_samples: mel.hop_length_samples(),
        speaker: speaker.map(str::to_owned),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Reads a mel file; a missing sidecar falls back to 22050 Hz / hop 256.
pub fn read_mel(path: &Path) -> Result<(MelSpectrogram, Option<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MEL_MAGIC {
        return Err(Error::format(path, "not a MELS container"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MEL_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let bins = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let expected = HEADER_LEN + 4 * frames * bins;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for {frames}x{bins}, found {}",
                bytes.len()
            ),
        ));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Array2::from_shape_vec((frames, bins), data).expect("length checked");

    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?
    } else {
        MelSidecar {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            hop_length_samples: DEFAULT_HOP,
            speaker: None,
        }
    };
    let mel = MelSpectrogram::new(values, sidecar.sample_rate_hz, sidecar.hop_length_samples)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((mel, sidecar.speaker))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn header_is_sixteen_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mel");
        let mel = MelSpectrogram::new(array![[1.0, -2.5, 3.25]], 16000, 128).unwrap();
        write_mel(&path, &mel, Some("spk1")).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 4);
        assert_eq!(&bytes[..4], b"MELS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 3);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);

        let (back, speaker) = read_mel(&path).unwrap();
        assert_eq!(back, mel);
        assert_eq!(speaker.as_deref(), Some("spk1"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mel");
        let mel = MelSpectrogram::from_values(array![[1.0, 2.0]]).unwrap();
        write_mel(&path, &mel, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_mel(&path), Err(Error::Format { .. })));
    }
}
