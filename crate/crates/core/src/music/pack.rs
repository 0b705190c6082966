use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHROMA_BINS: usize = 12;
pub const CHROMA_RATE: f64 = 10.0;
pub const ACTIVATION_RATE: f64 = 100.0;
/// Channels of a window: 12 chroma bins, beat activation, onset activation.
pub const WINDOW_CHANNELS: usize = CHROMA_BINS + 2;

/// Precomputed features of one song.
#[derive(Clone, Debug, PartialEq)]
pub struct MusicFeaturePack {
    /// `12 × T_c`, bin-major.
    chroma: Vec<f64>,
    beat: Vec<f64>,
    onset: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PackManifest {
    format: String,
    version: u32,
    duration: f64,
    stream: Vec<StreamRecord>,
}

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    name: String,
    rate: f64,
    channels: usize,
    frames: usize,
    blob: String,
}

const PACK_FORMAT: &str = "dancegen-music";

impl MusicFeaturePack {
    pub fn new(chroma: Vec<f64>, beat: Vec<f64>, onset: Vec<f64>) -> Result<Self> {
        if chroma.len() % CHROMA_BINS != 0 {
            return Err(Error::Validation(format!(
                "chroma length {} is not a multiple of {CHROMA_BINS}",
                chroma.len()
            )));
        }
        for (name, s) in [("chroma", &chroma), ("beat", &beat), ("onset", &onset)] {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{name} stream has non-finite values")));
            }
        }
        for (name, s) in [("beat", &beat), ("onset", &onset)] {
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!("{name} activations must lie in [0, 1]")));
            }
        }
        let pack = Self { chroma, beat, onset };
        let (dc, db, ds) = (pack.chroma_frames() as f64 / CHROMA_RATE, pack.beat.len() as f64 / ACTIVATION_RATE, pack.onset.len() as f64 / ACTIVATION_RATE);
        let coarse = 1.0 / CHROMA_RATE + 1e-9;
        if (dc - db).abs() > coarse || (ds - db).abs() > coarse {
            return Err(Error::Validation(format!(
                "stream durations disagree: chroma {dc}s, beat {db}s, onset {ds}s"
            )));
        }
        Ok(pack)
    }

    pub fn chroma_frames(&self) -> usize {
        self.chroma.len() / CHROMA_BINS
    }

    pub fn chroma(&self) -> &[f64] {
        &self.chroma
    }

    pub fn beat(&self) -> &[f64] {
        &self.beat
    }

    pub fn onset(&self) -> &[f64] {
        &self.onset
    }

    /// Duration in seconds, taken from the beat stream.
    pub fn duration(&self) -> f64 {
        self.beat.len() as f64 / ACTIVATION_RATE
    }

    /// Stacks all streams on a common 100 Hz grid over `[t − w, t + w)`.
    ///
    /// Chroma is held over each of its 100 ms frames; anything outside the
    /// streams is zero. The result is `14 × round(2w·100)`.
    pub fn window(&self, t: f64, w: f64) -> Result<Tensor> {
        if !(w > 0.0 && w.is_finite()) || !t.is_finite() {
            return Err(Error::param("w", format!("window half-width {w} must be positive")));
        }
        let width = (2.0 * w * ACTIVATION_RATE).round() as usize;
        let tc = self.chroma_frames();
        let mut data = vec![0.0; WINDOW_CHANNELS * width];
        let start = t - w;
        for j in 0..width {
            let tau = start + j as f64 / ACTIVATION_RATE;
            let ci = (tau * CHROMA_RATE + 1e-9).floor();
            if ci >= 0.0 && (ci as usize) < tc {
                let ci = ci as usize;
                for b in 0..CHROMA_BINS {
                    data[b * width + j] = self.chroma[b * tc + ci];
                }
            }
            let ai = (tau * ACTIVATION_RATE + 1e-9).floor();
            if ai >= 0.0 {
                let ai = ai as usize;
                if let Some(v) = self.beat.get(ai) {
                    data[CHROMA_BINS * width + j] = *v;
                }
                if let Some(v) = self.onset.get(ai) {
                    data[(CHROMA_BINS + 1) * width + j] = *v;
                }
            }
        }
        Tensor::new(&[WINDOW_CHANNELS, width], data)
    }

    /// Writes `manifest.toml` plus one blob per stream into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::ensure_dir(dir)?;
        let streams = [
            ("chroma", CHROMA_RATE, CHROMA_BINS, self.chroma_frames(), &self.chroma),
            ("beat", ACTIVATION_RATE, 1, self.beat.len(), &self.beat),
            ("onset", ACTIVATION_RATE, 1, self.onset.len(), &self.onset),
        ];
        let mut records = Vec::new();
        for (name, rate, channels, frames, data) in streams {
            let file = format!("{name}.bin");
            blob::write_f64(&dir.join(&file), data)?;
            records.push(StreamRecord {
                name: name.into(),
                rate,
                channels,
                frames,
                blob: file,
            });
        }
        blob::write_toml(
            &dir.join("manifest.toml"),
            &PackManifest {
                format: PACK_FORMAT.into(),
                version: 1,
                duration: self.duration(),
                stream: records,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let m: PackManifest = blob::read_toml(&path)?;
        if m.format != PACK_FORMAT {
            return Err(Error::parse(&path, format!("unknown format `{}`", m.format)));
        }
        let get = |name: &str, rate: f64, channels: usize| -> Result<Vec<f64>> {
            let s = m
                .stream
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::parse(&path, format!("missing stream `{name}`")))?;
            if s.rate != rate || s.channels != channels {
                return Err(Error::Validation(format!(
                    "stream `{name}` declares {} channels at {} Hz, expected {channels} at {rate} Hz",
                    s.channels, s.rate
                )));
            }
            blob::read_f64(&dir.join(&s.blob), s.frames * s.channels)
        };
        Self::new(
            get("chroma", CHROMA_RATE, CHROMA_BINS)?,
            get("beat", ACTIVATION_RATE, 1)?,
            get("onset", ACTIVATION_RATE, 1)?,
        )
    }
}
