use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{CauPredictor, PredictorConfig};
use crate::cau::CauCatalog;
use crate::error::{Error, Result};
use crate::music::{beat_times, Song};
use crate::nn::{Checkpoint, Graph, OptimizerKind, OptimizerState, PlateauScheduler, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorTraining {
    pub epochs: usize,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    /// Stop once an epoch's loss falls below this.
    pub target_loss: Option<f64>,
}

impl Default for PredictorTraining {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            patience: 8,
            factor: 0.9,
            target_loss: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean over songs of each song's summed NLL.
    pub epoch_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl TrainLog {
    pub fn write_into(&self, ckpt: &mut Checkpoint) {
        ckpt.tensors.insert("log.epoch_loss".into(), Tensor::vector(self.epoch_loss.clone()));
        ckpt.tensors.insert("log.lr".into(), Tensor::vector(self.lr.clone()));
        ckpt.meta.insert("best_epoch".into(), self.best_epoch.to_string());
        ckpt.meta.insert("best_loss".into(), format!("{:?}", self.best_loss));
    }
}

/// Teacher-forcing inputs for one song: one window per annotated token.
pub struct SongSteps {
    pub windows: Vec<Tensor>,
    pub targets: Vec<usize>,
}

/// Windows centred where each expert token starts, walking the beat grid.
pub fn song_steps(song: &Song, window_seconds: f64) -> Result<SongSteps> {
    let grid = beat_times(&song.pack);
    if grid.is_empty() {
        return Err(Error::Data(format!("song `{}` has no detectable beats", song.name)));
    }
    let mut t = 0.0;
    let mut windows = Vec::with_capacity(song.sequence.len());
    let mut targets = Vec::with_capacity(song.sequence.len());
    for item in &song.sequence.items {
        windows.push(song.pack.window(t, window_seconds)?);
        targets.push(item.token);
        t = grid.advance(t, item.end_beat - item.start_beat);
    }
    Ok(SongSteps { windows, targets })
}

/// Mean per-song teacher-forced loss without updating anything.
pub fn evaluate_loss(model: &CauPredictor, steps: &[SongSteps]) -> Result<f64> {
    let mut total = 0.0;
    for s in steps {
        let mut g = Graph::new();
        let l = model.sequence_loss(&mut g, &model.params, &s.windows, &s.targets)?;
        total += g.scalar(l);
    }
    Ok(total / steps.len().max(1) as f64)
}

const STATE_PREFIX: &str = "state.";
const OPT_PREFIX: &str = "opt.";

/// Epoch-at-a-time RMSprop trainer whose full state survives a checkpoint
/// round trip, so an interrupted run continues where it stopped.
pub struct PredictorTrainer {
    model: CauPredictor,
    best: CauPredictor,
    opt: OptimizerState,
    sched: PlateauScheduler,
    steps: Vec<SongSteps>,
    hyper: PredictorTraining,
    pub log: TrainLog,
    stopped: bool,
}

fn prepare(songs: &[Song], catalog: &CauCatalog, config: &PredictorConfig, hyper: &PredictorTraining) -> Result<Vec<SongSteps>> {
    if songs.is_empty() {
        return Err(Error::Data("training corpus has no songs".into()));
    }
    if config.vocab != catalog.len() {
        return Err(Error::Validation(format!(
            "config vocabulary {} does not match catalog size {}",
            config.vocab,
            catalog.len()
        )));
    }
    if !(hyper.lr > 0.0) {
        return Err(Error::param("lr", format!("{} must be positive", hyper.lr)));
    }
    songs
        .iter()
        .map(|s| {
            s.sequence.validate(catalog)?;
            song_steps(s, config.window_seconds)
        })
        .collect()
}

impl PredictorTrainer {
    pub fn new(songs: &[Song], catalog: &CauCatalog, config: PredictorConfig, hyper: &PredictorTraining, seed: u64) -> Result<Self> {
        let steps = prepare(songs, catalog, &config, hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CauPredictor::new(config, &mut rng)?;
        Ok(Self {
            best: model.clone(),
            model,
            opt: OptimizerState::new(OptimizerKind::rmsprop(), hyper.lr),
            sched: PlateauScheduler::new(hyper.patience, hyper.factor)?,
            steps,
            hyper: hyper.clone(),
            log: TrainLog {
                best_loss: f64::INFINITY,
                ..TrainLog::default()
            },
            stopped: false,
        })
    }

    /// Continues from a checkpoint written by [`PredictorTrainer::checkpoint`].
    /// `hyper.epochs` counts from the very first epoch of the original run.
    pub fn resume(ckpt: &Checkpoint, songs: &[Song], catalog: &CauCatalog, hyper: &PredictorTraining) -> Result<Self> {
        let best = CauPredictor::from_checkpoint(ckpt)?;
        let steps = prepare(songs, catalog, &best.config, hyper)?;
        let params = ckpt.params(STATE_PREFIX)?;
        super::model::check_shapes(&best.params, &params)?;
        let model = CauPredictor {
            config: best.config.clone(),
            params,
        };
        let opt = ckpt
            .optimizer(OPT_PREFIX)?
            .ok_or_else(|| Error::Validation("checkpoint carries no optimizer state".into()))?;
        let sched: PlateauScheduler = toml::from_str(
            ckpt.meta
                .get("scheduler")
                .ok_or_else(|| Error::Validation("checkpoint carries no scheduler state".into()))?,
        )
        .map_err(|e| Error::Validation(format!("scheduler state: {e}")))?;
        let series = |name: &str| -> Result<Vec<f64>> {
            ckpt.tensors
                .get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::Validation(format!("checkpoint has no `{name}`")))
        };
        let log = TrainLog {
            epoch_loss: series("log.epoch_loss")?,
            lr: series("log.lr")?,
            best_epoch: ckpt.meta.get("best_epoch").and_then(|v| v.parse().ok()).unwrap_or(0),
            best_loss: ckpt.meta_f64("best_loss")?,
        };
        let stopped = ckpt.meta.get("stopped").is_some_and(|v| v == "true");
        Ok(Self {
            model,
            best,
            opt,
            sched,
            steps,
            hyper: hyper.clone(),
            log,
            stopped,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.log.epoch_loss.len()
    }

    pub fn done(&self) -> bool {
        self.stopped || self.epoch() >= self.hyper.epochs
    }

    /// Runs one epoch and returns its loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.steps {
            self.model.params.zero_grad();
            let mut g = Graph::new();
            let loss = self.model.sequence_loss(&mut g, &self.model.params, &s.windows, &s.targets)?;
            total += g.scalar(loss);
            let grads = g.backward(loss)?;
            g.accumulate_param_grads(&grads, &mut self.model.params)?;
            self.opt.step(&mut self.model.params)?;
        }
        let epoch_loss = total / self.steps.len() as f64;
        let epoch = self.epoch();
        self.log.epoch_loss.push(epoch_loss);
        self.log.lr.push(self.opt.lr);
        if epoch_loss < self.log.best_loss {
            self.log.best_loss = epoch_loss;
            self.log.best_epoch = epoch;
            self.best.params = self.model.params.clone();
        }
        self.opt.lr = self.sched.step(epoch_loss, self.opt.lr);
        if self.hyper.target_loss.is_some_and(|t| epoch_loss < t) {
            self.stopped = true;
        }
        Ok(epoch_loss)
    }

    /// Best parameters as the model, plus everything needed to resume.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = self.best.to_checkpoint()?;
        c.put_params(STATE_PREFIX, &self.model.params);
        c.put_optimizer(OPT_PREFIX, &self.opt)?;
        c.meta.insert(
            "scheduler".into(),
            toml::to_string(&self.sched).map_err(|e| Error::Validation(e.to_string()))?,
        );
        c.meta.insert("stopped".into(), self.stopped.to_string());
        self.log.write_into(&mut c);
        Ok(c)
    }

    pub fn finish(self) -> (CauPredictor, TrainLog) {
        (self.best, self.log)
    }
}

/// RMSprop with one update per song, a plateau schedule on the epoch loss,
/// and the best epoch's parameters returned.
pub fn train_predictor(
    songs: &[Song],
    catalog: &CauCatalog,
    config: PredictorConfig,
    hyper: &PredictorTraining,
    seed: u64,
) -> Result<(CauPredictor, TrainLog)> {
    let mut t = PredictorTrainer::new(songs, catalog, config, hyper, seed)?;
    while !t.done() {
        t.run_epoch()?;
    }
    Ok(t.finish())
}
