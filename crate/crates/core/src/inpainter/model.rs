use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionClip, MotionFrame, Quat, ROOT_PARAMS};
use crate::nn::layers;
use crate::nn::{Checkpoint, Graph, ParamSet, Tensor, Var};

/// Which architecture variant to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InpainterMode {
    /// Separate joint and root sub-models, each with a frame encoder and decoder.
    Full,
    /// Separate sub-models whose U-Net works directly on raw frame parameters.
    NoCodec,
    /// One sub-model for the whole frame.
    Merged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Joint,
    Root,
    Merged,
}

impl BranchKind {
    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Joint => "joint",
            BranchKind::Root => "root",
            BranchKind::Merged => "merged",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpainterConfig {
    pub clip_len: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub codec_layers: usize,
    /// Temporal kernel of the frame encoder and decoder convolutions (odd).
    pub codec_kernel: usize,
    pub unet_levels: usize,
    pub unet_channels: usize,
    pub joint_params: usize,
    pub root_params: usize,
    pub mode: InpainterMode,
}

impl InpainterConfig {
    /// Defaults for a skeleton with `joints` rotating joints.
    pub fn new(joints: usize) -> Self {
        Self {
            clip_len: 192,
            window: 64,
            embed_dim: 84,
            codec_layers: 6,
            codec_kernel: 5,
            unet_levels: 4,
            unet_channels: 32,
            joint_params: 4 * joints,
            root_params: ROOT_PARAMS,
            mode: InpainterMode::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window >= self.clip_len {
            return Err(Error::param(
                "window",
                format!("{} frames must be below the clip length {}", self.window, self.clip_len),
            ));
        }
        if self.clip_len % 2 != 0 {
            return Err(Error::param("clip_len", format!("{} must be even", self.clip_len)));
        }
        if self.unet_levels == 0 || self.unet_channels == 0 || self.codec_layers == 0 {
            return Err(Error::param("unet_levels", "levels, channels and codec layers must be positive"));
        }
        if self.codec_kernel % 2 == 0 {
            return Err(Error::param("codec_kernel", format!("{} must be odd", self.codec_kernel)));
        }
        if self.joint_params == 0 || self.joint_params % 4 != 0 {
            return Err(Error::param("joint_params", format!("{} is not a positive multiple of 4", self.joint_params)));
        }
        if self.root_params != ROOT_PARAMS {
            return Err(Error::param("root_params", format!("must be {ROOT_PARAMS}")));
        }
        let span = 1usize << self.unet_levels;
        if self.clip_len < span {
            return Err(Error::param("clip_len", format!("{} is too short for {} levels", self.clip_len, self.unet_levels)));
        }
        if self.mode != InpainterMode::NoCodec && self.embed_dim < span {
            return Err(Error::param("embed_dim", format!("{} is too narrow for {} levels", self.embed_dim, self.unet_levels)));
        }
        Ok(())
    }

    pub fn branches(&self) -> Vec<BranchKind> {
        match self.mode {
            InpainterMode::Merged => vec![BranchKind::Merged],
            _ => vec![BranchKind::Joint, BranchKind::Root],
        }
    }

    pub fn branch_params(&self, kind: BranchKind) -> usize {
        match kind {
            BranchKind::Joint => self.joint_params,
            BranchKind::Root => self.root_params,
            BranchKind::Merged => self.root_params + self.joint_params,
        }
    }

    /// Width of the plane the U-Net sees for a branch.
    pub fn plane_width(&self, kind: BranchKind) -> usize {
        match self.mode {
            InpainterMode::NoCodec => {
                let span = 1usize << self.unet_levels;
                self.branch_params(kind).div_ceil(span) * span
            }
            _ => self.embed_dim,
        }
    }

    /// First masked frame.
    pub fn mask_start(&self) -> usize {
        self.clip_len / 2 - self.window / 2
    }
}

/// Zeroes `window` rows centred on the middle of an `n × p` matrix and returns the masked row range.
pub fn mask_clip(matrix: &[f64], n: usize, window: usize) -> Result<(Vec<f64>, std::ops::Range<usize>)> {
    if n == 0 || matrix.len() % n != 0 {
        return Err(Error::dim("matrix rows", n, matrix.len()));
    }
    if window >= n {
        return Err(Error::param("window", format!("{window} frames must be below the clip length {n}")));
    }
    let p = matrix.len() / n;
    let start = n / 2 - window / 2;
    let mut out = matrix.to_vec();
    out[start * p..(start + window) * p].fill(0.0);
    Ok((out, start..start + window))
}

/// One sub-model: frame encoder, U-Net and frame decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub kind: BranchKind,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inpainter {
    pub config: InpainterConfig,
    pub branches: Vec<Branch>,
    /// Set once training has produced the parameters.
    pub trained: bool,
}

pub const CHECKPOINT_KIND: &str = "inpainter";

fn init_branch<R: Rng>(cfg: &InpainterConfig, kind: BranchKind, rng: &mut R) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let width = cfg.branch_params(kind);
    if cfg.mode != InpainterMode::NoCodec {
        let m = cfg.embed_dim;
        let k = cfg.codec_kernel;
        for l in 0..cfg.codec_layers {
            let inp = if l == 0 { width } else { m };
            layers::init_conv1d(&mut p, &format!("enc.{l}"), inp, m, k, rng)?;
        }
        for l in 0..cfg.codec_layers {
            let out = if l + 1 == cfg.codec_layers { width } else { m };
            layers::init_conv1d(&mut p, &format!("dec.{l}"), m, out, k, rng)?;
        }
    }
    let c = cfg.unet_channels;
    let levels = cfg.unet_levels;
    for l in 0..levels {
        let inp = if l == 0 { 1 } else { c };
        layers::init_conv2d(&mut p, &format!("unet.down{l}"), inp, c, (4, 4), rng)?;
    }
    for k in 0..levels {
        let inp = if k == 0 { c } else { 2 * c };
        let out = if k + 1 == levels { 1 } else { c };
        layers::init_conv2d_transpose(&mut p, &format!("unet.up{k}"), inp, out, (4, 4), rng)?;
    }
    Ok(p)
}

fn unet(g: &mut Graph, p: &ParamSet, levels: usize, x: Var) -> Result<Var> {
    let mut downs = Vec::with_capacity(levels);
    let mut h = x;
    for l in 0..levels {
        h = layers::conv2d(g, p, &format!("unet.down{l}"), h, (2, 2), (1, 1))?;
        h = g.relu(h)?;
        downs.push(h);
    }
    let mut u = downs[levels - 1];
    for k in 0..levels {
        let input = if k == 0 { u } else { g.concat(&[u, downs[levels - 1 - k]])? };
        let target = if k + 1 == levels {
            g.shape(x).to_vec()
        } else {
            g.shape(downs[levels - 2 - k]).to_vec()
        };
        let s = g.shape(input).to_vec();
        let pad = |want: usize, have: usize, axis: &str| -> Result<usize> {
            match want.checked_sub(2 * have) {
                Some(d) if d < 2 => Ok(d),
                _ => Err(Error::dim(axis, want, 2 * have)),
            }
        };
        let out_pad = (pad(target[1], s[1], "u-net rows")?, pad(target[2], s[2], "u-net columns")?);
        u = layers::conv2d_transpose(g, p, &format!("unet.up{k}"), input, (2, 2), (1, 1), out_pad)?;
        if k + 1 < levels {
            u = g.relu(u)?;
        }
    }
    Ok(u)
}

impl Inpainter {
    pub fn new<R: Rng>(config: InpainterConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let branches = config
            .branches()
            .into_iter()
            .map(|kind| Ok(Branch { kind, params: init_branch(&config, kind, rng)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            branches,
            trained: false,
        })
    }

    pub fn branch(&self, kind: BranchKind) -> Result<&Branch> {
        self.branches
            .iter()
            .find(|b| b.kind == kind)
            .ok_or_else(|| Error::Validation(format!("model has no `{}` sub-model", kind.name())))
    }

    /// Runs one sub-model on a masked `clip_len × width` matrix, recorded on `g`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, kind: BranchKind, masked: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        let n = cfg.clip_len;
        let width = cfg.branch_params(kind);
        if masked.len() != n * width {
            return Err(Error::dim("inpainter input", n * width, masked.len()));
        }
        let x = g.input_raw(&[n, width], masked.to_vec())?;
        let plane_w = cfg.plane_width(kind);
        let plane = if cfg.mode == InpainterMode::NoCodec {
            if plane_w > width {
                let xt = g.transpose(x)?;
                let zeros = g.input_raw(&[plane_w - width, n], vec![0.0; (plane_w - width) * n])?;
                let padded = g.concat(&[xt, zeros])?;
                g.transpose(padded)?
            } else {
                x
            }
        } else {
            let mut h = g.transpose(x)?;
            for l in 0..cfg.codec_layers {
                h = layers::conv1d(g, params, &format!("enc.{l}"), h, 1, cfg.codec_kernel / 2)?;
                if l + 1 < cfg.codec_layers {
                    h = g.relu(h)?;
                }
            }
            g.transpose(h)?
        };
        let img = g.reshape(plane, &[1, n, plane_w])?;
        let delta = unet(g, params, cfg.unet_levels, img)?;
        let out = g.add(img, delta)?;
        let out = g.reshape(out, &[n, plane_w])?;
        if cfg.mode == InpainterMode::NoCodec {
            return if plane_w > width { g.columns(out, 0, width) } else { Ok(out) };
        }
        let mut h = g.transpose(out)?;
        for l in 0..cfg.codec_layers {
            h = layers::conv1d(g, params, &format!("dec.{l}"), h, 1, cfg.codec_kernel / 2)?;
            if l + 1 < cfg.codec_layers {
                h = g.relu(h)?;
            }
        }
        g.transpose(h)
    }

    /// Reconstruction loss of a sub-model over all frames: summed geodesic
    /// distance for joint rotations, L1 for root parameters.
    /// Returns the raw output together with the loss.
    pub fn branch_loss(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        kind: BranchKind,
        masked: &[f64],
        target: &[f64],
    ) -> Result<(Var, Var)> {
        let out = self.forward(g, params, kind, masked)?;
        let loss = match kind {
            BranchKind::Joint => g.geodesic_sum(out, target),
            BranchKind::Root => g.l1_sum(out, target),
            BranchKind::Merged => {
                let n = self.config.clip_len;
                let (r, j) = (self.config.root_params, self.config.joint_params);
                let w = r + j;
                let (mut tr, mut tj) = (Vec::with_capacity(n * r), Vec::with_capacity(n * j));
                for row in target.chunks_exact(w) {
                    tr.extend_from_slice(&row[..r]);
                    tj.extend_from_slice(&row[r..]);
                }
                let root = g.columns(out, 0, r)?;
                let joints = g.columns(out, r, j)?;
                let lr = g.l1_sum(root, &tr)?;
                let lj = g.geodesic_sum(joints, &tj)?;
                g.add(lr, lj)
            }
        }?;
        Ok((out, loss))
    }

    pub(crate) fn branch_matrix(kind: BranchKind, clip: &MotionClip) -> Vec<f64> {
        match kind {
            BranchKind::Joint => clip.joint_matrix(),
            BranchKind::Root => clip.root_matrix(),
            BranchKind::Merged => clip.to_matrix(),
        }
    }

    /// Masks the centre of a `clip_len`-frame clip and regenerates every frame.
    pub fn inpaint(&self, clip: &MotionClip) -> Result<MotionClip> {
        let n = self.config.clip_len;
        if clip.len() != n {
            return Err(Error::dim("inpainter clip length", n, clip.len()));
        }
        let j = clip.skeleton().rotating_joints();
        if 4 * j != self.config.joint_params {
            return Err(Error::dim("joint parameters", self.config.joint_params, 4 * j));
        }
        let mut frames: Vec<MotionFrame> = clip.frames().to_vec();
        for b in &self.branches {
            let raw = Self::branch_matrix(b.kind, clip);
            let (masked, _) = mask_clip(&raw, n, self.config.window)?;
            let mut g = Graph::new();
            let out = self.forward(&mut g, &b.params, b.kind, &masked)?;
            let values = g.value(out);
            let w = self.config.branch_params(b.kind);
            for (f, row) in frames.iter_mut().zip(values.chunks_exact(w)) {
                match b.kind {
                    BranchKind::Joint => write_joints(f, row),
                    BranchKind::Root => write_root(f, row),
                    BranchKind::Merged => {
                        write_root(f, &row[..ROOT_PARAMS]);
                        write_joints(f, &row[ROOT_PARAMS..]);
                    }
                }
            }
        }
        clip.with_frames(frames)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(CHECKPOINT_KIND);
        c.set_config(&self.config)?;
        for b in &self.branches {
            c.put_params(&format!("{}.", b.kind.name()), &b.params);
        }
        c.meta.insert("trained".into(), self.trained.to_string());
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Validation(format!("checkpoint kind `{}` is not `{CHECKPOINT_KIND}`", ckpt.kind)));
        }
        let config: InpainterConfig = ckpt.config()?;
        let reference = Self::new(config.clone(), &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let mut branches = Vec::new();
        for b in &reference.branches {
            let params = ckpt.params(&format!("{}.", b.kind.name()))?;
            crate::predictor::model::check_shapes(&b.params, &params)?;
            branches.push(Branch { kind: b.kind, params });
        }
        let trained = ckpt.meta.get("trained").is_some_and(|v| v == "true");
        Ok(Self {
            config,
            branches,
            trained,
        })
    }
}

fn write_joints(f: &mut MotionFrame, row: &[f64]) {
    for (q, c) in f.joints.iter_mut().zip(row.chunks_exact(4)) {
        *q = Quat::from_slice(c).normalized().canonical();
    }
}

fn write_root(f: &mut MotionFrame, row: &[f64]) {
    f.root_velocity = [row[0], row[1], row[2]];
    f.root_rotation = Quat::from_slice(&row[3..7]).normalized().canonical();
}

/// Tensor view of a branch's rows, for tests and tooling.
pub fn branch_tensor(kind: BranchKind, clip: &MotionClip) -> Result<Tensor> {
    let m = Inpainter::branch_matrix(kind, clip);
    let w = m.len() / clip.len().max(1);
    Tensor::new(&[clip.len(), w], m)
}
