//! Reconstruction-trained motion autoencoder whose pooled bottleneck serves as
//! the FID feature space.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::nn::{layers, Checkpoint, Graph, OptimizerKind, OptimizerState, ParamSet, Var};

const CHECKPOINT_KIND: &str = "motion-autoencoder";
const KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Full frame width (root plus joints).
    pub frame_params: usize,
    pub window: usize,
    pub stride: usize,
    pub layers: usize,
    pub channels: usize,
    pub feature_dim: usize,
}

impl AutoencoderConfig {
    pub fn new(frame_params: usize) -> Self {
        Self {
            frame_params,
            window: 32,
            stride: 16,
            layers: 3,
            channels: 32,
            feature_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_params == 0 {
            return Err(Error::param("frame_params", "must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::param("layers", "must be positive"));
        }
        let scale = 1usize << self.layers;
        if self.window == 0 || self.window % scale != 0 {
            return Err(Error::param(
                "window",
                format!("{} frames is not a positive multiple of {scale}", self.window),
            ));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be positive"));
        }
        if self.channels == 0 || self.feature_dim == 0 {
            return Err(Error::param("channels", "layer widths must be positive"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.frame_params];
        w.extend(std::iter::repeat(self.channels).take(self.layers - 1));
        w.push(self.feature_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeTraining {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for AeTraining {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub params: ParamSet,
}

impl Autoencoder {
    pub fn new<R: Rng>(config: AutoencoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut params = ParamSet::new();
        for l in 0..config.layers {
            layers::init_conv1d(&mut params, &format!("enc.{l}"), w[l], w[l + 1], KERNEL, rng)?;
        }
        for l in 0..config.layers {
            let (inp, out) = (w[config.layers - l], w[config.layers - l - 1]);
            layers::init_conv1d_transpose(&mut params, &format!("dec.{l}"), inp, out, KERNEL, rng)?;
        }
        Ok(Self { config, params })
    }

    /// Every `window`-frame slice of `clip` at multiples of `stride`, each laid out `[P, window]`.
    pub fn windows(&self, clip: &MotionClip) -> Result<Vec<Vec<f64>>> {
        let (p, w) = (self.config.frame_params, self.config.window);
        let m = clip.to_matrix();
        if !clip.is_empty() && m.len() / clip.len() != p {
            return Err(Error::dim("frame parameters", p, m.len() / clip.len()));
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start + w <= clip.len() {
            let mut x = vec![0.0; p * w];
            for t in 0..w {
                for c in 0..p {
                    x[c * w + t] = m[(start + t) * p + c];
                }
            }
            out.push(x);
            start += self.config.stride;
        }
        Ok(out)
    }

    fn encode_graph(&self, g: &mut Graph, params: &ParamSet, window: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        let mut h = g.input_raw(&[cfg.frame_params, cfg.window], window.to_vec())?;
        for l in 0..cfg.layers {
            h = layers::conv1d(g, params, &format!("enc.{l}"), h, 2, 1)?;
            if l + 1 < cfg.layers {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    fn loss_graph(&self, g: &mut Graph, params: &ParamSet, window: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        let mut h = self.encode_graph(g, params, window)?;
        for l in 0..cfg.layers {
            h = layers::conv1d_transpose(g, params, &format!("dec.{l}"), h, 2, 1, 0)?;
            if l + 1 < cfg.layers {
                h = g.relu(h)?;
            }
        }
        let sq = g.squared_sum(h, window)?;
        g.scale(sq, 1.0 / window.len() as f64)
    }

    /// Mean squared reconstruction error over all windows of `clips`.
    pub fn reconstruction_loss(&self, clips: &[MotionClip]) -> Result<f64> {
        let windows = self.all_windows(clips)?;
        let mut total = 0.0;
        for w in &windows {
            let mut g = Graph::new();
            let l = self.loss_graph(&mut g, &self.params, w)?;
            total += g.scalar(l);
        }
        Ok(total / windows.len() as f64)
    }

    /// Time-averaged bottleneck of one `[P, window]` slice.
    pub fn feature(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let h = self.encode_graph(&mut g, &self.params, window)?;
        let t = g.shape(h)[1];
        Ok(g.value(h).chunks_exact(t).map(|row| row.iter().sum::<f64>() / t as f64).collect())
    }

    /// One feature per window of every clip.
    pub fn features(&self, clips: &[MotionClip]) -> Result<Vec<Vec<f64>>> {
        self.all_windows(clips)?.iter().map(|w| self.feature(w)).collect()
    }

    fn all_windows(&self, clips: &[MotionClip]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for c in clips {
            out.extend(self.windows(c)?);
        }
        if out.is_empty() {
            return Err(Error::Data(format!(
                "no clip is at least {} frames long",
                self.config.window
            )));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(CHECKPOINT_KIND);
        c.set_config(&self.config)?;
        c.put_params("model.", &self.params);
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Validation(format!("checkpoint kind `{}` is not `{CHECKPOINT_KIND}`", ckpt.kind)));
        }
        let config: AutoencoderConfig = ckpt.config()?;
        let reference = Self::new(config.clone(), &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let params = ckpt.params("model.")?;
        crate::predictor::model::check_shapes(&reference.params, &params)?;
        Ok(Self { config, params })
    }
}

/// Adam on the mean squared reconstruction error of shuffled window batches.
/// Returns the model and its per-epoch mean window loss.
pub fn train_autoencoder(
    clips: &[MotionClip],
    config: AutoencoderConfig,
    hyper: &AeTraining,
    seed: u64,
) -> Result<(Autoencoder, Vec<f64>)> {
    if hyper.batch == 0 {
        return Err(Error::param("batch", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Autoencoder::new(config, &mut rng)?;
    let windows = model.all_windows(clips)?;
    let mut opt = OptimizerState::new(OptimizerKind::adam(), hyper.lr);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut params = model.params.clone();
    let mut curve = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch) {
            params.zero_grad();
            for &i in batch {
                let mut g = Graph::new();
                let loss = model.loss_graph(&mut g, &params, &windows[i])?;
                total += g.scalar(loss);
                let grads = g.backward(loss)?;
                g.accumulate_param_grads(&grads, &mut params)?;
            }
            params.scale_grads(1.0 / batch.len() as f64);
            opt.step(&mut params)?;
        }
        curve.push(total / windows.len() as f64);
    }
    model.params = params;
    Ok((model, curve))
}
