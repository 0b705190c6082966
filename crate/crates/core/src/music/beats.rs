use super::pack::{MusicFeaturePack, ACTIVATION_RATE};
use crate::error::{Error, Result};

pub const BEAT_THRESHOLD: f64 = 0.5;
/// Minimum gap between picked beats, in activation frames (250 ms).
pub const MIN_BEAT_GAP: usize = 25;

/// Strictly increasing beat times in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeatGrid {
    times: Vec<f64>,
}

impl BeatGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("beat times must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Median inter-beat interval, 0.5 s when there are fewer than two beats.
    pub fn median_interval(&self) -> f64 {
        let mut gaps: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            return 0.5;
        }
        gaps.sort_by(f64::total_cmp);
        let m = gaps.len() / 2;
        if gaps.len() % 2 == 1 {
            gaps[m]
        } else {
            0.5 * (gaps[m - 1] + gaps[m])
        }
    }

    /// First beat strictly after `t`; past the last detected beat the grid
    /// continues at the median interval.
    pub fn next_after(&self, t: f64) -> f64 {
        let eps = 1e-9;
        if let Some(&b) = self.times.iter().find(|&&b| b > t + eps) {
            return b;
        }
        let step = self.median_interval();
        match self.times.last() {
            None => ((t + eps) / step).floor() * step + step,
            Some(&last) => {
                let k = ((t + eps - last) / step).floor() + 1.0;
                last + k.max(1.0) * step
            }
        }
    }

    /// Time reached after advancing `n` beats from `t`.
    pub fn advance(&self, t: f64, n: usize) -> f64 {
        (0..n).fold(t, |acc, _| self.next_after(acc))
    }

    /// Time of beat index `b` counted from the start of the song.
    pub fn time_of_beat(&self, b: usize) -> f64 {
        self.advance(0.0, b)
    }
}

/// Peaks of the beat activation above [`BEAT_THRESHOLD`], at least 250 ms apart.
pub fn beat_times(pack: &MusicFeaturePack) -> BeatGrid {
    let a = pack.beat();
    let n = a.len();
    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| {
            a[i] > BEAT_THRESHOLD && (i == 0 || a[i] > a[i - 1]) && (i + 1 == n || a[i] >= a[i + 1])
        })
        .collect();
    cand.sort_by(|&x, &y| a[y].total_cmp(&a[x]).then(x.cmp(&y)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cand {
        if kept.iter().all(|&k| k.abs_diff(c) >= MIN_BEAT_GAP) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    BeatGrid {
        times: kept.into_iter().map(|i| i as f64 / ACTIVATION_RATE).collect(),
    }
}
