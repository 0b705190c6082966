use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Performance, Song};
use super::pack::{MusicFeaturePack, ACTIVATION_RATE, CHROMA_BINS, CHROMA_RATE};
use crate::cau::{CatalogEntry, CauCatalog, CauSequence, EOD, NIL, SPECIALS};
use crate::error::{Error, Result};
use crate::motion::{MotionClip, MotionFrame, Quat, Skeleton};

/// Knobs of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub songs: usize,
    pub caus: usize,
    pub cau_beats: [usize; 2],
    pub song_beats: [usize; 2],
    pub song_bpm: [f64; 2],
    /// Tempo the catalog clips are performed at.
    pub catalog_bpm: f64,
    pub fps: f64,
    pub nil_prob: f64,
    pub performances: usize,
    pub performance_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            songs: 8,
            caus: 5,
            cau_beats: [2, 4],
            song_beats: [16, 24],
            song_bpm: [100.0, 140.0],
            catalog_bpm: 120.0,
            fps: 80.0,
            nil_prob: 0.15,
            performances: 16,
            performance_frames: 240,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [usize; 2]| {
            if r[0] == 0 || r[0] > r[1] {
                Err(Error::param(name, format!("[{}, {}] is not a non-empty range of positive counts", r[0], r[1])))
            } else {
                Ok(())
            }
        };
        range("cau_beats", self.cau_beats)?;
        range("song_beats", self.song_beats)?;
        if self.songs == 0 {
            return Err(Error::param("songs", "must be at least 1"));
        }
        if self.caus == 0 {
            return Err(Error::param("caus", "must be at least 1"));
        }
        let [lo, hi] = self.song_bpm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi && hi <= 240.0) {
            return Err(Error::param("song_bpm", format!("[{lo}, {hi}] must satisfy 0 < lo <= hi <= 240")));
        }
        if !(self.catalog_bpm > 0.0 && self.catalog_bpm <= 240.0) {
            return Err(Error::param("catalog_bpm", format!("{} is outside (0, 240]", self.catalog_bpm)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::param("fps", format!("{} must be positive", self.fps)));
        }
        let fpb = self.frames_per_beat_exact();
        if (fpb - fpb.round()).abs() > 1e-9 || fpb < 4.0 {
            return Err(Error::param(
                "fps",
                format!("{} fps at {} bpm does not give a whole number of frames per beat", self.fps, self.catalog_bpm),
            ));
        }
        if !(0.0..1.0).contains(&self.nil_prob) {
            return Err(Error::param("nil_prob", format!("{} is outside [0, 1)", self.nil_prob)));
        }
        if self.performance_frames < 2 || self.performance_frames % 2 != 0 {
            return Err(Error::param("performance_frames", "must be even and at least 2"));
        }
        Ok(())
    }

    fn frames_per_beat_exact(&self) -> f64 {
        self.fps * 60.0 / self.catalog_bpm
    }

    pub fn frames_per_beat(&self) -> usize {
        self.frames_per_beat_exact().round() as usize
    }
}

/// Beat period for a tempo, snapped to the 10 ms activation grid.
pub fn beat_period(bpm: f64) -> f64 {
    (6000.0 / bpm).round() / 100.0
}

/// Keyframed angle curves for one CAU; each beat eases in quadratically so
/// motion stops hard on every beat.
#[derive(Clone, Debug)]
struct CauKeys {
    beats: usize,
    /// Per channel, `beats + 1` keys. Channels: 2 per joint, yaw, x, z, height.
    channels: Vec<Vec<f64>>,
}

const ROOT_CHANNELS: usize = 4;

impl CauKeys {
    fn random(rng: &mut ChaCha8Rng, beats: usize, joints: usize) -> Self {
        let mut swing = |lo: f64, hi: f64| {
            let mut sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut k = vec![0.0];
            for _ in 0..beats {
                let last = *k.last().expect("non-empty");
                k.push(last + sign * rng.gen_range(lo..hi));
                sign = -sign;
            }
            k
        };
        let mut channels = Vec::with_capacity(2 * joints + ROOT_CHANNELS);
        for _ in 0..2 * joints {
            channels.push(swing(0.5, 0.8));
        }
        channels.push(swing(0.2, 0.35));
        channels.push(swing(0.05, 0.2));
        channels.push(swing(0.05, 0.2));
        let mut h: Vec<f64> = (0..=beats).map(|_| 0.9 + rng.gen_range(-0.03..0.03)).collect();
        h[0] = 0.9;
        h[beats] = 0.9;
        channels.push(h);
        Self { beats, channels }
    }

    fn value(&self, c: usize, i: usize, fpb: usize) -> f64 {
        let k = &self.channels[c];
        let b = (i / fpb).min(self.beats - 1);
        let u = (i - b * fpb) as f64 / fpb as f64;
        k[b] + (k[b + 1] - k[b]) * u * u
    }

    fn end(&self, c: usize) -> f64 {
        self.channels[c][self.beats]
    }

    /// Renders the clip with angle offsets per channel (joint channels plus yaw).
    fn render(&self, fpb: usize, joints: usize, offsets: &[f64]) -> Vec<MotionFrame> {
        let n = self.beats * fpb;
        let yaw_c = 2 * joints;
        let off_yaw = offsets[yaw_c];
        let turn = Quat::from_yaw(off_yaw);
        (0..n)
            .map(|i| {
                let jq = (0..joints)
                    .map(|j| {
                        let a = offsets[2 * j] + self.value(2 * j, i, fpb);
                        let b = offsets[2 * j + 1] + self.value(2 * j + 1, i, fpb);
                        (Quat::from_axis_angle([1.0, 0.0, 0.0], a) * Quat::from_axis_angle([0.0, 0.0, 1.0], b)).canonical()
                    })
                    .collect();
                let (dx, dz) = if i == 0 {
                    (0.0, 0.0)
                } else {
                    (
                        self.value(yaw_c + 1, i, fpb) - self.value(yaw_c + 1, i - 1, fpb),
                        self.value(yaw_c + 2, i, fpb) - self.value(yaw_c + 2, i - 1, fpb),
                    )
                };
                let v = turn.rotate([dx, 0.0, dz]);
                MotionFrame {
                    root_velocity: [v[0], self.value(yaw_c + 3, i, fpb), v[2]],
                    root_rotation: Quat::from_yaw(off_yaw + self.value(yaw_c, i, fpb)).canonical(),
                    joints: jq,
                }
            })
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Builds a complete synthetic corpus: catalog, annotated songs and
/// continuous performances. Identical seeds give identical corpora.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let skeleton = Arc::new(Skeleton::desk_default());
    let joints = skeleton.rotating_joints();
    let fpb = config.frames_per_beat();

    let mut rng = stream(seed, 0);
    let mut keys = Vec::with_capacity(config.caus);
    let mut motifs = Vec::with_capacity(config.caus);
    let mut caus = Vec::with_capacity(config.caus);
    for c in 0..config.caus {
        let beats = rng.gen_range(config.cau_beats[0]..=config.cau_beats[1]);
        let k = CauKeys::random(&mut rng, beats, joints);
        let zero = vec![0.0; 2 * joints + 1];
        let clip = MotionClip::new(skeleton.clone(), config.fps, k.render(fpb, joints, &zero))?;
        let motif: Vec<[f64; CHROMA_BINS]> = (0..beats)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0)))
            .collect();
        let name = format!("cau_{c:02}");
        caus.push(CatalogEntry::cau(&name, beats, format!("clips/{name}.toml"), clip));
        keys.push(k);
        motifs.push(motif);
    }
    let catalog = CauCatalog::from_caus(caus)?;

    let mut songs = Vec::with_capacity(config.songs);
    for s in 0..config.songs {
        let mut rng = stream(seed, 1 + s as u64);
        let beats = rng.gen_range(config.song_beats[0]..=config.song_beats[1]);
        let bpm = rng.gen_range(config.song_bpm[0]..=config.song_bpm[1]);
        let mut tokens = Vec::new();
        let mut left = beats;
        while left > 0 {
            let fits: Vec<usize> = (0..config.caus).filter(|&c| keys[c].beats <= left).collect();
            let t = if fits.is_empty() || rng.gen_bool(config.nil_prob) {
                NIL
            } else {
                SPECIALS + fits[rng.gen_range(0..fits.len())]
            };
            left -= catalog.beats(t)?;
            tokens.push(t);
        }
        tokens.push(EOD);
        let sequence = CauSequence::from_tokens(&tokens, &catalog)?;
        let pack = song_pack(&mut rng, &sequence, &motifs, beats, beat_period(bpm))?;
        songs.push(Song {
            name: format!("song_{s:02}"),
            pack,
            sequence,
        });
    }

    let mut performances = Vec::with_capacity(config.performances);
    for p in 0..config.performances {
        let mut rng = stream(seed, 10_000 + p as u64);
        performances.push(performance(&mut rng, config, &keys, &skeleton, format!("perf_{p:02}"))?);
    }
    Ok(Corpus {
        catalog,
        songs,
        performances,
    })
}

fn song_pack(
    rng: &mut ChaCha8Rng,
    seq: &CauSequence,
    motifs: &[Vec<[f64; CHROMA_BINS]>],
    beats: usize,
    period: f64,
) -> Result<MusicFeaturePack> {
    let tb = (beats as f64 * period * ACTIVATION_RATE).round() as usize;
    let tc = tb.div_ceil(10);
    let step = (period * ACTIVATION_RATE).round() as usize;
    let mut beat: Vec<f64> = (0..tb).map(|_| rng.gen_range(0.0..0.1)).collect();
    let mut onset: Vec<f64> = (0..tb).map(|_| rng.gen_range(0.0..0.1)).collect();
    for b in 0..beats {
        let i = b * step;
        if i < tb {
            beat[i] = rng.gen_range(0.8..1.0);
            onset[i] = 0.9;
            for n in [i.wrapping_sub(1), i + 1] {
                if n < tb {
                    beat[n] = 0.3;
                }
            }
        }
        if i + step / 2 < tb {
            onset[i + step / 2] = 0.5;
        }
    }
    let mut chroma = vec![0.0; CHROMA_BINS * tc];
    for c in 0..tc {
        let t = c as f64 / CHROMA_RATE;
        let b = (t / period + 1e-9).floor() as usize;
        let item = seq.items.iter().find(|it| it.start_beat <= b && b < it.end_beat);
        for bin in 0..CHROMA_BINS {
            let base = match item {
                Some(it) if it.token >= SPECIALS => motifs[it.token - SPECIALS][b - it.start_beat][bin],
                Some(_) => 0.05,
                None => 0.0,
            };
            chroma[bin * tc + c] = (base + rng.gen_range(-0.02..0.02)).max(0.0);
        }
    }
    MusicFeaturePack::new(chroma, beat, onset)
}

/// CAUs chained with accumulated angle offsets, cropped around a junction.
fn performance(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    keys: &[CauKeys],
    skeleton: &Arc<Skeleton>,
    name: String,
) -> Result<Performance> {
    let joints = skeleton.rotating_joints();
    let fpb = config.frames_per_beat();
    let half = config.performance_frames / 2;
    let mut offsets = vec![0.0; 2 * joints + 1];
    let mut frames: Vec<MotionFrame> = Vec::new();
    let mut starts = Vec::new();
    loop {
        let center = starts.iter().copied().find(|&j| j >= half);
        if let Some(j) = center {
            if frames.len() >= j + half {
                let mut crop: Vec<MotionFrame> = frames[j - half..j + half].to_vec();
                crop[0].root_velocity[0] = 0.0;
                crop[0].root_velocity[2] = 0.0;
                let junctions = starts
                    .iter()
                    .filter(|&&s| s > j - half && s < j + half)
                    .map(|&s| s - (j - half))
                    .collect();
                let clip = MotionClip::new(skeleton.clone(), config.fps, crop)?;
                return Ok(Performance { name, clip, junctions });
            }
        }
        let k = &keys[rng.gen_range(0..keys.len())];
        if !frames.is_empty() {
            starts.push(frames.len());
        }
        let mut part = k.render(fpb, joints, &offsets);
        for c in 0..2 * joints + 1 {
            offsets[c] += k.end(c);
        }
        frames.append(&mut part);
    }
}
