#![allow(dead_code)]

use dancegen_core::nn::{Graph, Tensor, Var};
use dancegen_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest per-input relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// between reverse-mode gradients and central differences with step `h`.
pub fn gradient_error<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t).unwrap()).collect();
    let loss = f(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t).unwrap()).collect();
        let l = f(&mut g, &vars).unwrap();
        g.scalar(l)
    };

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = vec![0.0; inputs[k].numel()];
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel = if denom < 1e-7 { diff } else { diff / denom };
        worst = worst.max(rel);
    }
    worst
}

/// Projects an arbitrary output onto a fixed random direction so any op can be
/// checked through a scalar loss.
pub fn probe(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let n = g.value(out).len();
    let mut r = rng(seed);
    let w = Tensor::new(g.shape(out), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let wv = g.input(&w)?;
    let prod = g.mul(out, wv)?;
    g.sum(prod)
}

/// Same metric as [`gradient_error`] but over every tensor of a [`ParamSet`].
pub fn param_gradient_error<F>(params: &dancegen_core::nn::ParamSet, h: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &dancegen_core::nn::ParamSet) -> Result<Var>,
{
    let mut p = params.clone();
    p.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, &p).unwrap();
    let grads = g.backward(loss).unwrap();
    g.accumulate_param_grads(&grads, &mut p).unwrap();

    let eval = |ps: &dancegen_core::nn::ParamSet| -> f64 {
        let mut g = Graph::new();
        let l = f(&mut g, ps).unwrap();
        g.scalar(l)
    };

    let mut worst: f64 = 0.0;
    let names: Vec<String> = p.names().cloned().collect();
    for name in names {
        let analytic = p.get(&name).unwrap().grad().unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= h;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn);
        worst = worst.max(if denom < 1e-7 { diff } else { diff / denom });
    }
    worst
}
