use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mask_clip, BranchKind, Inpainter, InpainterConfig};
use crate::error::{Error, Result};
use crate::motion::{geodesic_distance, MotionClip, Quat, ROOT_PARAMS};
use crate::nn::{Graph, OptimizerKind, OptimizerState, PlateauScheduler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpainterTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub factor: f64,
    /// Stop a sub-model once its epoch loss falls below this.
    pub target_loss: Option<f64>,
}

impl Default for InpainterTraining {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            batch: 48,
            patience: 5,
            factor: 0.7,
            target_loss: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BranchLog {
    pub kind: Option<BranchKind>,
    /// Mean per-sample loss.
    pub epoch_loss: Vec<f64>,
    /// Mean geodesic per masked frame and joint; empty for the root sub-model.
    pub masked_geodesic: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean geodesic over masked rows between raw predicted quaternions and targets.
/// `offset` skips leading non-joint columns of each `width`-wide row.
pub fn masked_geodesic(pred: &[f64], target: &[f64], width: usize, offset: usize, rows: std::ops::Range<usize>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rows {
        let p = &pred[r * width + offset..(r + 1) * width];
        let t = &target[r * width + offset..(r + 1) * width];
        for (a, b) in p.chunks_exact(4).zip(t.chunks_exact(4)) {
            total += geodesic_distance(Quat::from_slice(a).normalized(), Quat::from_slice(b))?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Trains every sub-model separately on random `clip_len` crops with the centre masked.
pub fn train_inpainter(
    clips: &[MotionClip],
    config: InpainterConfig,
    hyper: &InpainterTraining,
    seed: u64,
) -> Result<(Inpainter, Vec<BranchLog>)> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Data("no motion clips to train on".into()));
    }
    let n = config.clip_len;
    if let Some((i, c)) = clips.iter().enumerate().find(|(_, c)| c.len() < n) {
        return Err(Error::Data(format!("clip {i} has {} frames, fewer than the {n} needed", c.len())));
    }
    if hyper.batch == 0 {
        return Err(Error::param("batch", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Inpainter::new(config, &mut rng)?;
    let mut logs = Vec::new();
    let window = model.config.window;
    for bi in 0..model.branches.len() {
        let kind = model.branches[bi].kind;
        let width = model.config.branch_params(kind);
        let offset = if kind == BranchKind::Merged { ROOT_PARAMS } else { 0 };
        let full: Vec<Vec<f64>> = clips.iter().map(|c| Inpainter::branch_matrix(kind, c)).collect();
        let mut crng = ChaCha8Rng::seed_from_u64(seed);
        crng.set_stream(1 + bi as u64);
        let mut params = model.branches[bi].params.clone();
        let mut opt = OptimizerState::new(OptimizerKind::adam(), hyper.lr);
        let mut sched = PlateauScheduler::new(hyper.patience, hyper.factor)?;
        let mut log = BranchLog {
            kind: Some(kind),
            ..BranchLog::default()
        };
        let mut best = (f64::INFINITY, params.clone());
        let mut order: Vec<usize> = (0..clips.len()).collect();
        for epoch in 0..hyper.epochs {
            order.shuffle(&mut crng);
            let mut total = 0.0;
            let mut geo = 0.0;
            for batch in order.chunks(hyper.batch) {
                params.zero_grad();
                for &ci in batch {
                    let start = crng.gen_range(0..=clips[ci].len() - n);
                    let target = &full[ci][start * width..(start + n) * width];
                    let (masked, rows) = mask_clip(target, n, window)?;
                    let mut g = Graph::new();
                    let (out, loss) = model.branch_loss(&mut g, &params, kind, &masked, target)?;
                    total += g.scalar(loss);
                    if kind != BranchKind::Root {
                        geo += masked_geodesic(g.value(out), target, width, offset, rows)?;
                    }
                    let grads = g.backward(loss)?;
                    g.accumulate_param_grads(&grads, &mut params)?;
                }
                params.scale_grads(1.0 / batch.len() as f64);
                opt.step(&mut params)?;
            }
            let epoch_loss = total / clips.len() as f64;
            log.epoch_loss.push(epoch_loss);
            log.lr.push(opt.lr);
            if kind != BranchKind::Root {
                log.masked_geodesic.push(geo / clips.len() as f64);
            }
            if epoch_loss < best.0 {
                best = (epoch_loss, params.clone());
                log.best_epoch = epoch;
            }
            opt.lr = sched.step(epoch_loss, opt.lr);
            if hyper.target_loss.is_some_and(|t| epoch_loss < t) {
                break;
            }
        }
        model.branches[bi].params = best.1;
        logs.push(log);
    }
    model.trained = true;
    Ok((model, logs))
}
