use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::CauPredictor;
use crate::cau::{CauCatalog, CauSequence, SeqItem, TokenKind, EOD, SOD};
use crate::error::{Error, Result};
use crate::music::{beat_times, BeatGrid, MusicFeaturePack};

/// Anything that yields a next-token distribution given the previous token and
/// the music around time `t`. Implementations carry their own recurrent state.
pub trait StepDecoder {
    fn reset(&mut self);
    fn step(&mut self, prev: usize, pack: &MusicFeaturePack, t: f64) -> Result<Vec<f64>>;
}

/// A trained predictor with its running hidden state.
pub struct PredictorSession<'a> {
    model: &'a CauPredictor,
    hidden: Vec<f64>,
}

impl<'a> PredictorSession<'a> {
    pub fn new(model: &'a CauPredictor) -> Self {
        Self {
            model,
            hidden: vec![0.0; model.config.hidden],
        }
    }
}

impl StepDecoder for PredictorSession<'_> {
    fn reset(&mut self) {
        self.hidden.fill(0.0);
    }

    fn step(&mut self, prev: usize, pack: &MusicFeaturePack, t: f64) -> Result<Vec<f64>> {
        let window = pack.window(t, self.model.config.window_seconds)?;
        let m = self.model.encode(&window)?;
        let (dist, h) = self.model.decode_step(prev, &m, &self.hidden)?;
        self.hidden = h;
        Ok(dist)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DecodeOptions {
    /// Sample from the tempered distribution instead of taking the argmax.
    pub temperature: Option<f64>,
    pub seed: u64,
}

/// A generated sequence with the time at which each token was chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub sequence: CauSequence,
    pub times: Vec<f64>,
}

fn choose(dist: &[f64], opts: &DecodeOptions, rng: &mut ChaCha8Rng) -> usize {
    let candidates = (0..dist.len()).filter(|&i| i != SOD);
    match opts.temperature {
        None => candidates
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .unwrap_or(EOD),
        Some(temp) => {
            let w: Vec<(usize, f64)> = candidates
                .map(|i| (i, if dist[i] > 0.0 { (dist[i].ln() / temp).exp() } else { 0.0 }))
                .collect();
            let total: f64 = w.iter().map(|p| p.1).sum();
            let mut u = rng.gen_range(0.0..1.0) * total;
            for &(i, p) in &w {
                if u < p {
                    return i;
                }
                u -= p;
            }
            w.iter().rev().find(|p| p.1 > 0.0).map_or(EOD, |p| p.0)
        }
    }
}

/// Autoregressive generation over a song: start from SOD at t = 0, pick a
/// token, advance t by its beats along the beat grid, and stop on EOD or once
/// the music has ended.
pub fn generate_with<D: StepDecoder>(
    decoder: &mut D,
    pack: &MusicFeaturePack,
    catalog: &CauCatalog,
    opts: &DecodeOptions,
) -> Result<Generation> {
    if let Some(temp) = opts.temperature {
        if !(temp > 0.0 && temp.is_finite()) {
            return Err(Error::param("temperature", format!("{temp} must be positive")));
        }
    }
    let grid = beat_times(pack);
    if grid.is_empty() {
        return Err(Error::Data("song has no detectable beats".into()));
    }
    generate_on_grid(decoder, pack, &grid, catalog, opts)
}

pub fn generate_on_grid<D: StepDecoder>(
    decoder: &mut D,
    pack: &MusicFeaturePack,
    grid: &BeatGrid,
    catalog: &CauCatalog,
    opts: &DecodeOptions,
) -> Result<Generation> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let end = pack.duration();
    decoder.reset();
    let (mut t, mut beat, mut prev) = (0.0, 0, SOD);
    let mut items = Vec::new();
    let mut times = Vec::new();
    while t < end - 1e-9 {
        let dist = decoder.step(prev, pack, t)?;
        if dist.len() != catalog.len() {
            return Err(Error::Validation(format!(
                "decoder vocabulary {} does not match catalog size {}",
                dist.len(),
                catalog.len()
            )));
        }
        let token = choose(&dist, opts, &mut rng);
        let len = catalog.beats(token)?;
        items.push(SeqItem {
            token,
            start_beat: beat,
            end_beat: beat + len,
        });
        times.push(t);
        if catalog.kind(token)? == TokenKind::Eod {
            break;
        }
        t = grid.advance(t, len);
        beat += len;
        prev = token;
    }
    let sequence = CauSequence { items };
    sequence.validate(catalog)?;
    Ok(Generation { sequence, times })
}

/// Argmax generation with a trained predictor.
pub fn generate(model: &CauPredictor, pack: &MusicFeaturePack, catalog: &CauCatalog) -> Result<CauSequence> {
    if model.config.vocab != catalog.len() {
        return Err(Error::Validation(format!(
            "checkpoint vocabulary {} does not match catalog size {}",
            model.config.vocab,
            catalog.len()
        )));
    }
    let mut session = PredictorSession::new(model);
    Ok(generate_with(&mut session, pack, catalog, &DecodeOptions::default())?.sequence)
}
