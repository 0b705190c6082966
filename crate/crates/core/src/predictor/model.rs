use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::music::{ACTIVATION_RATE, WINDOW_CHANNELS};
use crate::nn::layers::{self, dense, gru_cell};
use crate::nn::{Checkpoint, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub conv: Vec<ConvSpec>,
    pub music_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab: usize,
    /// Half-width of the music window in seconds.
    pub window_seconds: f64,
}

impl PredictorConfig {
    pub fn new(vocab: usize) -> Self {
        let conv = [32, 32, 64, 64, 64]
            .into_iter()
            .map(|channels| ConvSpec {
                channels,
                kernel: 5,
                stride: 2,
            })
            .collect();
        Self {
            conv,
            music_dim: 64,
            embed_dim: 128,
            hidden: 64,
            vocab,
            window_seconds: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 4 {
            return Err(Error::param("vocab", format!("{} is below the 4 required tokens", self.vocab)));
        }
        for (name, v) in [("music_dim", self.music_dim), ("embed_dim", self.embed_dim), ("hidden", self.hidden)] {
            if v == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.conv.is_empty() || self.conv.iter().any(|c| c.channels == 0 || c.kernel == 0 || c.stride == 0) {
            return Err(Error::param("conv", "needs at least one layer with positive sizes"));
        }
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return Err(Error::param("window_seconds", format!("{} must be positive", self.window_seconds)));
        }
        self.encoder_length()?;
        Ok(())
    }

    pub fn window_width(&self) -> usize {
        (2.0 * self.window_seconds * ACTIVATION_RATE).round() as usize
    }

    /// Temporal length after the conv stack.
    pub fn encoder_length(&self) -> Result<usize> {
        let mut len = self.window_width();
        for (i, c) in self.conv.iter().enumerate() {
            if len < c.kernel {
                return Err(Error::param("conv", format!("layer {i} sees length {len} below kernel {}", c.kernel)));
            }
            len = (len - c.kernel) / c.stride + 1;
        }
        Ok(len)
    }

    fn flat_features(&self) -> Result<usize> {
        Ok(self.encoder_length()? * self.conv.last().map_or(0, |c| c.channels))
    }
}

/// Local music encoder plus GRU decoder over the CAU history.
#[derive(Clone, Debug, PartialEq)]
pub struct CauPredictor {
    pub config: PredictorConfig,
    pub params: ParamSet,
}

pub const CHECKPOINT_KIND: &str = "cau-predictor";
const PARAM_PREFIX: &str = "model.";

impl CauPredictor {
    pub fn new<R: Rng>(config: PredictorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut cin = WINDOW_CHANNELS;
        for (i, c) in config.conv.iter().enumerate() {
            layers::init_conv1d(&mut p, &format!("enc.conv{i}"), cin, c.channels, c.kernel, rng)?;
            cin = c.channels;
        }
        layers::init_linear(&mut p, "enc.proj", config.flat_features()?, config.music_dim, rng)?;
        p.insert(
            "embed.weight",
            Tensor::uniform_fan_in(&[config.vocab, config.embed_dim], 1, rng),
        )?;
        layers::init_linear(&mut p, "fuse", config.embed_dim + config.music_dim, config.hidden, rng)?;
        layers::init_gru(&mut p, "gru", config.hidden, config.hidden, rng)?;
        layers::init_linear(&mut p, "out", config.hidden, config.vocab, rng)?;
        Ok(Self { config, params: p })
    }

    /// Every parameter set to zero.
    pub fn zeroed(config: PredictorConfig) -> Result<Self> {
        let mut m = Self::new(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        for (_, t) in m.params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(m)
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        let want = [WINDOW_CHANNELS, self.config.window_width()];
        if window.shape() != want {
            let (axis, e, a) = if window.shape().first() != Some(&want[0]) {
                ("window channels", want[0], window.shape().first().copied().unwrap_or(0))
            } else {
                ("window width", want[1], window.shape().get(1).copied().unwrap_or(0))
            };
            return Err(Error::dim(axis, e, a));
        }
        Ok(())
    }

    /// Conv stack, flatten and projection of one window, recorded on `g`.
    pub fn encode_graph(&self, g: &mut Graph, params: &ParamSet, window: &Tensor) -> Result<Var> {
        self.check_window(window)?;
        let mut x = g.input(window)?;
        for (i, c) in self.config.conv.iter().enumerate() {
            x = layers::conv1d(g, params, &format!("enc.conv{i}"), x, c.stride, 0)?;
            x = g.relu(x)?;
        }
        let n = g.value(x).len();
        let flat = g.reshape(x, &[n])?;
        dense(g, params, "enc.proj", flat)
    }

    /// One decoder step: returns the logits and the next hidden state.
    pub fn decode_graph(&self, g: &mut Graph, params: &ParamSet, prev: usize, m: Var, h: Var) -> Result<(Var, Var)> {
        if prev >= self.config.vocab {
            return Err(Error::Validation(format!(
                "token {prev} is outside the vocabulary of {}",
                self.config.vocab
            )));
        }
        let table = g.param(params, "embed.weight")?;
        let e = g.embedding(table, prev)?;
        let joint = g.concat(&[e, m])?;
        let fused = dense(g, params, "fuse", joint)?;
        let fused = g.relu(fused)?;
        let h2 = gru_cell(g, params, "gru", fused, h)?;
        let logits = dense(g, params, "out", h2)?;
        Ok((logits, h2))
    }

    pub fn encode(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let m = self.encode_graph(&mut g, &self.params, window)?;
        Ok(g.value(m).to_vec())
    }

    /// Next-token distribution and hidden state.
    pub fn decode_step(&self, prev: usize, m: &[f64], h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if m.len() != self.config.music_dim {
            return Err(Error::dim("music feature", self.config.music_dim, m.len()));
        }
        if h.len() != self.config.hidden {
            return Err(Error::dim("hidden state", self.config.hidden, h.len()));
        }
        let mut g = Graph::new();
        let mv = g.input_raw(&[m.len()], m.to_vec())?;
        let hv = g.input_raw(&[h.len()], h.to_vec())?;
        let (logits, h2) = self.decode_graph(&mut g, &self.params, prev, mv, hv)?;
        Ok((Graph::softmax_values(g.value(logits)), g.value(h2).to_vec()))
    }

    /// Summed teacher-forced NLL of `targets` given precomputed windows, from a zero hidden state.
    pub fn sequence_loss(&self, g: &mut Graph, params: &ParamSet, windows: &[Tensor], targets: &[usize]) -> Result<Var> {
        if windows.len() != targets.len() {
            return Err(Error::dim("teacher-forcing steps", targets.len(), windows.len()));
        }
        let mut h = g.input_raw(&[self.config.hidden], vec![0.0; self.config.hidden])?;
        let mut prev = crate::cau::SOD;
        let mut terms = Vec::with_capacity(targets.len());
        for (w, &y) in windows.iter().zip(targets) {
            let m = self.encode_graph(g, params, w)?;
            let (logits, h2) = self.decode_graph(g, params, prev, m, h)?;
            terms.push(g.softmax_nll(logits, y)?);
            h = h2;
            prev = y;
        }
        g.add_all(&terms)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(CHECKPOINT_KIND);
        c.set_config(&self.config)?;
        c.put_params(PARAM_PREFIX, &self.params);
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Validation(format!(
                "checkpoint kind `{}` is not `{CHECKPOINT_KIND}`",
                ckpt.kind
            )));
        }
        let config: PredictorConfig = ckpt.config()?;
        let params = ckpt.params(PARAM_PREFIX)?;
        let reference = Self::zeroed(config.clone())?;
        check_shapes(&reference.params, &params)?;
        Ok(Self { config, params })
    }
}

/// Same parameter names with the same shapes, or a validation error naming the first mismatch.
pub(crate) fn check_shapes(want: &ParamSet, got: &ParamSet) -> Result<()> {
    for (name, t) in want.iter() {
        match got.get(name) {
            Ok(g) if g.shape() == t.shape() => {}
            Ok(g) => {
                return Err(Error::Validation(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    g.shape(),
                    t.shape()
                )))
            }
            Err(_) => return Err(Error::Validation(format!("checkpoint lacks parameter `{name}`"))),
        }
    }
    if let Some(extra) = got.names().find(|n| !want.contains(n)) {
        return Err(Error::Validation(format!("checkpoint has unexpected parameter `{extra}`")));
    }
    Ok(())
}
