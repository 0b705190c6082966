//! Parameter initialisation and the composite layers built on [`Graph`].
//!
//! Parameters follow a `{prefix}.weight` / `{prefix}.bias` naming scheme.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamSet, Tensor};
use crate::error::Result;

pub fn init_linear<R: Rng>(params: &mut ParamSet, prefix: &str, inp: usize, out: usize, rng: &mut R) -> Result<()> {
    params.insert(format!("{prefix}.weight"), Tensor::uniform_fan_in(&[out, inp], inp, rng))?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]))
}

pub fn init_conv1d<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    inp: usize,
    out: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        Tensor::uniform_fan_in(&[out, inp, kernel], inp * kernel, rng),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]))
}

/// Weight layout `[in, out, K]`.
pub fn init_conv1d_transpose<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    inp: usize,
    out: usize,
    kernel: usize,
    rng: &mut R,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        Tensor::uniform_fan_in(&[inp, out, kernel], inp * kernel, rng),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]))
}

pub fn init_conv2d<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    inp: usize,
    out: usize,
    kernel: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        Tensor::uniform_fan_in(&[out, inp, kernel.0, kernel.1], inp * kernel.0 * kernel.1, rng),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]))
}

/// Weight layout `[in, out, kh, kw]`.
pub fn init_conv2d_transpose<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    inp: usize,
    out: usize,
    kernel: (usize, usize),
    rng: &mut R,
) -> Result<()> {
    params.insert(
        format!("{prefix}.weight"),
        Tensor::uniform_fan_in(&[inp, out, kernel.0, kernel.1], inp * kernel.0 * kernel.1, rng),
    )?;
    params.insert(format!("{prefix}.bias"), Tensor::zeros(&[out]))
}

/// GRU parameters: gate blocks stacked in reset, update, candidate order.
pub fn init_gru<R: Rng>(params: &mut ParamSet, prefix: &str, inp: usize, hidden: usize, rng: &mut R) -> Result<()> {
    params.insert(
        format!("{prefix}.w_ih"),
        Tensor::uniform_fan_in(&[3 * hidden, inp], hidden, rng),
    )?;
    params.insert(
        format!("{prefix}.w_hh"),
        Tensor::uniform_fan_in(&[3 * hidden, hidden], hidden, rng),
    )?;
    params.insert(format!("{prefix}.b_ih"), Tensor::zeros(&[3 * hidden]))?;
    params.insert(format!("{prefix}.b_hh"), Tensor::zeros(&[3 * hidden]))
}

pub fn dense(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    g.linear(x, w, Some(b))
}

pub fn conv1d(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    g.conv1d(x, w, Some(b), stride, pad)
}

pub fn conv1d_transpose(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    g.conv1d_transpose(x, w, Some(b), stride, pad, out_pad)
}

pub fn conv2d(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    g.conv2d(x, w, Some(b), stride, pad)
}

pub fn conv2d_transpose(
    g: &mut Graph,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    stride: (usize, usize),
    pad: (usize, usize),
    out_pad: (usize, usize),
) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    g.conv2d_transpose(x, w, Some(b), stride, pad, out_pad)
}

/// One GRU step:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var, h: Var) -> Result<Var> {
    let w_ih = g.param(params, &format!("{prefix}.w_ih"))?;
    let w_hh = g.param(params, &format!("{prefix}.w_hh"))?;
    let b_ih = g.param(params, &format!("{prefix}.b_ih"))?;
    let b_hh = g.param(params, &format!("{prefix}.b_hh"))?;
    let hidden = g.shape(h)[0];
    let gi = g.linear(x, w_ih, Some(b_ih))?;
    let gh = g.linear(h, w_hh, Some(b_hh))?;
    let (i_r, i_z, i_n) = (g.narrow(gi, 0, hidden)?, g.narrow(gi, hidden, hidden)?, g.narrow(gi, 2 * hidden, hidden)?);
    let (h_r, h_z, h_n) = (g.narrow(gh, 0, hidden)?, g.narrow(gh, hidden, hidden)?, g.narrow(gh, 2 * hidden, hidden)?);
    let r_pre = g.add(i_r, h_r)?;
    let r = g.sigmoid(r_pre)?;
    let z_pre = g.add(i_z, h_z)?;
    let z = g.sigmoid(z_pre)?;
    let gated = g.mul(r, h_n)?;
    let n_pre = g.add(i_n, gated)?;
    let n = g.tanh(n_pre)?;
    // h' = n + z ⊙ (h − n)
    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}
