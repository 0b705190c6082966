//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any hard criterion fails. Takes roughly an hour on one core.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dancegen_cli::commands::{cmd_gen_data, cmd_synthesize, SynthesizeArgs};
use dancegen_cli::RunConfig;
use dancegen_core::cau::{bleu4, mean_bleu4, strip_specials, CauCatalog, CauSequence};
use dancegen_core::eval::{
    ablation, fid, fid_minimum, junction_cases, train_autoencoder, window_sweep, AeTraining, Autoencoder,
    AutoencoderConfig, GaussianStats, Method,
};
use dancegen_core::inpainter::{
    assemble, mask_clip, train_inpainter, BranchKind, Inpainter, InpainterConfig, InpainterMode, InpainterTraining,
};
use dancegen_core::motion::{
    forward_kinematics, geodesic_distance, joint_rotation_loss, read_keypoints, root_point_loss, write_keypoints,
    MotionClip, MotionFrame, Quat, Skeleton,
};
use dancegen_core::music::{beat_times, Corpus, MusicFeaturePack};
use dancegen_core::nn::{layers, Checkpoint, Graph, ParamSet, Tensor, Var};
use dancegen_core::predictor::{
    evaluate_loss, generate, generate_with, song_steps, CauPredictor, ConvSpec, DecodeOptions, PredictorConfig,
    PredictorTrainer, PredictorTraining, StepDecoder,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const GRAD_TOL: f64 = 1e-4;
const GRAD_CASES: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const SO3_TOL: f64 = 1e-9;
const ANGLE_TOL: f64 = 1e-6;
const BLEU_TOL: f64 = 1e-9;
const FID_TOL: f64 = 1e-6;
const LOSS_TOL: f64 = 1e-9;
const NLL_MAX: f64 = 0.1;
const BLEU_MIN: f64 = 0.9;
const PREDICTOR_BUDGET: Duration = Duration::from_secs(20 * 60);
const INPAINTER_BUDGET: Duration = Duration::from_secs(30 * 60);
const STUB_CASES: u64 = 100;
const CONTINUITY_RATIO: f64 = 2.0;
const UNIT_TOL: f64 = 1e-9;
const SWEEP_WINDOWS: [usize; 4] = [16, 32, 64, 128];
const MAIN_WINDOW: usize = 64;
const CORPUS_SEED: u64 = 42;
const TRAIN_SEED: u64 = 1;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Writes past the test harness's output capture so results show in plain `cargo test` runs.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

struct Outcome {
    pass: bool,
    detail: String,
}

struct Report {
    lines: Vec<String>,
    failed: Vec<usize>,
}

impl Report {
    fn record(&mut self, n: usize, name: &str, started: Instant, o: Outcome) {
        let line = format!(
            "{} {n:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
        emit(&line);
        if !o.pass {
            self.failed.push(n);
        }
        self.lines.push(line);
    }
}

// ---------------------------------------------------------------- criterion 1

fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-7 {
        diff
    } else {
        diff / denom
    }
}

/// Worst relative error between reverse-mode and central-difference gradients
/// over every input tensor and every parameter.
fn fd_error<F>(inputs: &[Tensor], params: &ParamSet, h: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var], &ParamSet) -> dancegen_core::Result<Var>,
{
    let mut p = params.clone();
    p.zero_grad();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t).unwrap()).collect();
    let loss = f(&mut g, &vars, &p).unwrap();
    let grads = g.backward(loss).unwrap();
    g.accumulate_param_grads(&grads, &mut p).unwrap();

    let eval = |ins: &[Tensor], ps: &ParamSet| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t).unwrap()).collect();
        let l = f(&mut g, &vars, ps).unwrap();
        g.scalar(l)
    };

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let numeric: Vec<f64> = (0..inputs[k].numel())
            .map(|i| {
                let (mut plus, mut minus) = (inputs.to_vec(), inputs.to_vec());
                plus[k].data_mut()[i] += h;
                minus[k].data_mut()[i] -= h;
                (eval(&plus, params) - eval(&minus, params)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    for name in p.names().cloned().collect::<Vec<_>>() {
        let analytic = p.get(&name).unwrap().grad().unwrap().to_vec();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let (mut plus, mut minus) = (params.clone(), params.clone());
                plus.get_mut(&name).unwrap().data_mut()[i] += h;
                minus.get_mut(&name).unwrap().data_mut()[i] -= h;
                (eval(inputs, &plus) - eval(inputs, &minus)) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

fn probe(g: &mut Graph, out: Var, seed: u64) -> dancegen_core::Result<Var> {
    let n = g.value(out).len();
    let mut r = rng(seed);
    let w = Tensor::new(g.shape(out), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    let wv = g.input(&w)?;
    let prod = g.mul(out, wv)?;
    g.sum(prod)
}

fn unit_rows(rows: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows)
        .flat_map(|_| {
            let q: [f64; 4] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.map(|v| v / n)
        })
        .collect()
}

fn tiny_inpainter(mode: InpainterMode) -> InpainterConfig {
    InpainterConfig {
        clip_len: 16,
        window: 4,
        embed_dim: 8,
        codec_layers: 2,
        codec_kernel: 3,
        unet_levels: 2,
        unet_channels: 2,
        joint_params: 4,
        root_params: 7,
        mode,
    }
}

fn random_frames_clip(n: usize, joints: usize, seed: u64) -> MotionClip {
    let sk = Arc::new(Skeleton::chain(joints));
    let mut r = rng(seed);
    let frames = (0..n)
        .map(|_| MotionFrame {
            root_velocity: [r.gen_range(-0.1..0.1), r.gen_range(0.8..1.0), r.gen_range(-0.1..0.1)],
            root_rotation: random_quat(&mut r),
            joints: (0..joints).map(|_| random_quat(&mut r)).collect(),
        })
        .collect();
    MotionClip::new(sk, 80.0, frames).unwrap()
}

fn randomize(params: &mut ParamSet, seed: u64) {
    let mut r = rng(seed);
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.4..0.4));
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let empty = ParamSet::new();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let mut r = rng(1001);
    for case in 0..GRAD_CASES {
        let s = 1 + case as usize % 2;
        let op = case as usize % 2;
        let ins = [random_tensor(&[3, 9], &mut r), random_tensor(&[2, 3, 3], &mut r), random_tensor(&[2], &mut r)];
        note("conv1d", fd_error(&ins, &empty, 1e-6, |g, v, _| {
            let y = g.conv1d(v[0], v[1], Some(v[2]), s, 1)?;
            probe(g, y, case)
        }));
        let ins = [random_tensor(&[2, 5], &mut r), random_tensor(&[2, 3, 4], &mut r), random_tensor(&[3], &mut r)];
        note("conv1d_transpose", fd_error(&ins, &empty, 1e-6, |g, v, _| {
            let y = g.conv1d_transpose(v[0], v[1], Some(v[2]), 2, 1, op)?;
            probe(g, y, case)
        }));
        let ins = [random_tensor(&[2, 6, 5], &mut r), random_tensor(&[3, 2, 3, 2], &mut r), random_tensor(&[3], &mut r)];
        note("conv2d", fd_error(&ins, &empty, 1e-6, |g, v, _| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), (s, s), (1, 0))?;
            probe(g, y, case)
        }));
        let ins = [random_tensor(&[2, 3, 4], &mut r), random_tensor(&[2, 3, 4, 3], &mut r), random_tensor(&[3], &mut r)];
        note("conv2d_transpose", fd_error(&ins, &empty, 1e-6, |g, v, _| {
            let y = g.conv2d_transpose(v[0], v[1], Some(v[2]), (2, 2), (1, 1), (op, op))?;
            probe(g, y, case)
        }));
        let ins = [random_tensor(&[3, 4], &mut r), random_tensor(&[5, 4], &mut r), random_tensor(&[5], &mut r)];
        note("dense", fd_error(&ins, &empty, 1e-6, |g, v, _| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            let a = g.tanh(y)?;
            probe(g, a, case)
        }));

        let mut gp = ParamSet::new();
        layers::init_gru(&mut gp, "gru", 3, 4, &mut r).unwrap();
        randomize(&mut gp, 300 + case);
        let ins = [random_tensor(&[3], &mut r), random_tensor(&[4], &mut r)];
        note("gru_cell", fd_error(&ins, &gp, 1e-6, |g, v, p| {
            let h = layers::gru_cell(g, p, "gru", v[0], v[1])?;
            probe(g, h, case)
        }));

        let target = r.gen_range(0..6);
        let ins = [random_tensor(&[6], &mut r)];
        note("softmax_nll", fd_error(&ins, &empty, 1e-6, |g, v, _| g.softmax_nll(v[0], target)));

        let target = unit_rows(5, &mut r);
        let ins = [random_tensor(&[5, 4], &mut r)];
        note("geodesic_loss", fd_error(&ins, &empty, 1e-6, |g, v, _| g.geodesic_sum(v[0], &target)));
        let target: Vec<f64> = (0..5 * 7).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ins = [random_tensor(&[5, 7], &mut r)];
        note("root_l1_loss", fd_error(&ins, &empty, 1e-6, |g, v, _| g.l1_sum(v[0], &target)));

        for mode in [InpainterMode::Full, InpainterMode::NoCodec, InpainterMode::Merged] {
            let cfg = tiny_inpainter(mode);
            let mut model = Inpainter::new(cfg.clone(), &mut rng(case)).unwrap();
            for b in model.branches.iter_mut() {
                randomize(&mut b.params, 100 + case);
            }
            let clip = random_frames_clip(cfg.clip_len, 1, case);
            for b in &model.branches {
                let target = match b.kind {
                    BranchKind::Joint => clip.joint_matrix(),
                    BranchKind::Root => clip.root_matrix(),
                    BranchKind::Merged => clip.to_matrix(),
                };
                let (masked, _) = mask_clip(&target, cfg.clip_len, cfg.window).unwrap();
                note("inpainter_step", fd_error(&[], &b.params, 1e-6, |g, _, p| {
                    Ok(model.branch_loss(g, p, b.kind, &masked, &target)?.1)
                }));
            }
        }

        let cfg = PredictorConfig {
            conv: (0..5).map(|_| ConvSpec { channels: 3, kernel: 3, stride: 2 }).collect(),
            music_dim: 4,
            embed_dim: 5,
            hidden: 4,
            vocab: 6,
            window_seconds: 0.5,
        };
        let mut model = CauPredictor::new(cfg, &mut rng(case)).unwrap();
        randomize(&mut model.params, 200 + case);
        let pack = metronome_pack(8, case);
        let windows: Vec<Tensor> = [0.4, 1.3].iter().map(|&t| pack.window(t, 0.5).unwrap()).collect();
        note("predictor_step", fd_error(&[], &model.params, 1e-5, |g, _, p| {
            model.sequence_loss(g, p, &windows, &[4, 5])
        }));
    }
    let (op, err) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, v)| (*k, *v)).unwrap();
    let elapsed = started.elapsed();
    Outcome {
        pass: worst.values().all(|&e| e < GRAD_TOL) && elapsed < GRAD_BUDGET,
        detail: format!(
            "{} ops x {GRAD_CASES} instances, worst rel err {err:.2e} ({op}) < {GRAD_TOL:e}, runtime {:.0} s < {} s",
            worst.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    }
}

// ---------------------------------------------------------------- criterion 2

fn random_axis(r: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn random_quat(r: &mut ChaCha8Rng) -> Quat {
    Quat::from_axis_angle(random_axis(r), r.gen_range(0.0..PI)).canonical()
}

fn criterion_2() -> Outcome {
    let mut r = rng(2002);
    let mut worst_prop: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (random_quat(&mut r), random_quat(&mut r));
        let d = geodesic_distance(a, b).unwrap();
        worst_prop = worst_prop
            .max(geodesic_distance(a, a).unwrap())
            .max((d - geodesic_distance(b, a).unwrap()).abs())
            .max((d - geodesic_distance(a.neg(), b).unwrap()).abs())
            .max((d - geodesic_distance(a, b.neg()).unwrap()).abs());
    }
    let mut worst_angle: f64 = 0.0;
    for _ in 0..20 {
        let theta = r.gen_range(1e-3..PI - 1e-3);
        let q = Quat::from_axis_angle(random_axis(&mut r), theta);
        worst_angle = worst_angle.max((geodesic_distance(Quat::IDENTITY, q).unwrap() - theta).abs());
    }
    Outcome {
        pass: worst_prop <= SO3_TOL && worst_angle <= ANGLE_TOL,
        detail: format!(
            "identity/symmetry/sign-flip worst {worst_prop:.1e} <= {SO3_TOL:e}; d(I, rot theta) worst {worst_angle:.1e} <= {ANGLE_TOL:e} over 20 angles"
        ),
    }
}

// ---------------------------------------------------------------- criterion 3

fn oracle_bleu(cand: &[usize], reference: &[usize]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let occurrences = |seq: &[usize], gram: &[usize]| -> usize {
        if seq.len() < gram.len() {
            return 0;
        }
        (0..=seq.len() - gram.len()).filter(|&i| &seq[i..i + gram.len()] == gram).count()
    };
    let mut logp = 0.0;
    for n in 1..=4usize {
        let total = cand.len().saturating_sub(n - 1);
        let mut distinct: Vec<&[usize]> = Vec::new();
        for i in 0..total {
            let g = &cand[i..i + n];
            if !distinct.contains(&g) {
                distinct.push(g);
            }
        }
        let matched: usize = distinct.iter().map(|g| occurrences(cand, g).min(occurrences(reference, g))).sum();
        let p = if matched == 0 { 1e-9 / (total as f64 + 1e-9) } else { matched as f64 / total as f64 };
        logp += p.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * logp.exp()
}

type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().enumerate().map(|(i, row)| {
        let mut r = row.clone();
        r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
        r
    }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let pivot = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= pivot);
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let row_c = m[c].clone();
                m[r].iter_mut().zip(&row_c).for_each(|(v, w)| *v -= f * w);
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn denman_beavers_sqrt(a: &Mat) -> Mat {
    let n = a.len();
    let mut y = a.clone();
    let mut z: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        y = ny;
        z = nz;
    }
    y
}

fn oracle_fid(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let d = a.mean.len();
    let to_mat = |v: &[f64]| -> Mat { (0..d).map(|i| v[i * d..(i + 1) * d].to_vec()).collect() };
    let (sa, sb) = (to_mat(&a.cov), to_mat(&b.cov));
    let root = denman_beavers_sqrt(&matmul(&sa, &sb));
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    mean + (0..d).map(|i| sa[i][i] + sb[i][i] - 2.0 * root[i][i]).sum::<f64>()
}

/// Cyclic Jacobi rotations; returns eigenvalues and column eigenvectors.
fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut m = a.clone();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

fn oracle_fid_eigen(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let d = a.mean.len();
    let to_mat = |v: &[f64]| -> Mat { (0..d).map(|i| v[i * d..(i + 1) * d].to_vec()).collect() };
    let (sa, sb) = (to_mat(&a.cov), to_mat(&b.cov));
    let (vals, vecs) = jacobi_eigen(&sa);
    let root_a: Mat = (0..d)
        .map(|i| (0..d).map(|j| (0..d).map(|k| vecs[i][k] * vals[k].max(0.0).sqrt() * vecs[j][k]).sum()).collect())
        .collect();
    let inner = matmul(&matmul(&root_a, &sb), &root_a);
    let cross: f64 = jacobi_eigen(&inner).0.iter().map(|v| v.max(0.0).sqrt()).sum();
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    mean + (0..d).map(|i| sa[i][i] + sb[i][i]).sum::<f64>() - 2.0 * cross
}

fn random_stats(d: usize, r: &mut ChaCha8Rng) -> GaussianStats {
    let b: Vec<f64> = (0..d * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>() + if i == j { 0.3 } else { 0.0 };
        }
    }
    GaussianStats {
        mean: (0..d).map(|_| r.gen_range(-2.0..2.0)).collect(),
        cov,
    }
}

/// Rotation angle from the trace of `Rᵃᵀ Rᵇ`.
fn matrix_angle(a: Quat, b: Quat) -> f64 {
    let (ra, rb) = (a.to_matrix(), b.to_matrix());
    let tr: f64 = (0..3).map(|i| (0..3).map(|k| ra[k][i] * rb[k][i]).sum::<f64>()).sum();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn criterion_3() -> Outcome {
    let mut r = rng(3003);
    let mut bleu_err: f64 = 0.0;
    for _ in 0..20 {
        let (lc, lr) = (r.gen_range(1..25), r.gen_range(1..25));
        let cand: Vec<usize> = (0..lc).map(|_| r.gen_range(2..7)).collect();
        let refr: Vec<usize> = (0..lr).map(|_| r.gen_range(2..7)).collect();
        bleu_err = bleu_err.max((bleu4(&cand, &refr) - oracle_bleu(&cand, &refr)).abs());
    }
    let mut fid_err: f64 = 0.0;
    for k in 0..10 {
        let d = 2 + k % 5;
        let (a, b) = (random_stats(d, &mut r), random_stats(d, &mut r));
        let got = fid(&a, &b).unwrap();
        fid_err = fid_err.max((got - oracle_fid_eigen(&a, &b)).abs()).max((got - oracle_fid(&a, &b)).abs());
    }
    let mut loss_err: f64 = 0.0;
    for seed in 0..10 {
        let (a, b) = (random_frames_clip(12, 5, seed), random_frames_clip(12, 5, 50 + seed));
        let mut joint = 0.0;
        let mut root = 0.0;
        for i in 0..a.len() {
            for j in 0..5 {
                joint += matrix_angle(a.frame(i).joints[j], b.frame(i).joints[j]);
            }
            let (fa, fb) = (a.frame(i), b.frame(i));
            for k in 0..3 {
                root += (fa.root_velocity[k] - fb.root_velocity[k]).abs();
            }
            for (x, y) in fa.root_rotation.to_array().iter().zip(fb.root_rotation.to_array()) {
                root += (x - y).abs();
            }
        }
        loss_err = loss_err
            .max((joint_rotation_loss(&a, &b).unwrap() - joint).abs())
            .max((root_point_loss(&a, &b).unwrap() - root).abs());
    }
    Outcome {
        pass: bleu_err <= BLEU_TOL && fid_err < FID_TOL && loss_err <= LOSS_TOL,
        detail: format!(
            "BLEU-4 vs brute force {bleu_err:.1e} <= {BLEU_TOL:e} (20 pairs); FID vs Jacobi eigen and Denman-Beavers {fid_err:.1e} < {FID_TOL:e} (10 pairs); joint/root losses vs loops {loss_err:.1e} <= {LOSS_TOL:e}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 5

fn metronome_pack(beats: usize, seed: u64) -> MusicFeaturePack {
    let n = beats * 50;
    let tc = n / 10;
    let mut r = rng(seed);
    let chroma = (0..12 * tc).map(|_| r.gen_range(0.0..1.0)).collect();
    let beat = (0..n).map(|i| if i % 50 == 0 { 1.0 } else { 0.0 }).collect();
    MusicFeaturePack::new(chroma, beat, vec![0.0; n]).unwrap()
}

struct RandomStub(ChaCha8Rng, usize);

impl StepDecoder for RandomStub {
    fn reset(&mut self) {}

    fn step(&mut self, _prev: usize, _pack: &MusicFeaturePack, _t: f64) -> dancegen_core::Result<Vec<f64>> {
        let n = self.1;
        Ok((0..n).map(|_| self.0.gen_range(0.0..1.0)).collect())
    }
}

fn criterion_5(catalog: &CauCatalog) -> Outcome {
    let mut bad = Vec::new();
    let mut total_items = 0;
    for seed in 0..STUB_CASES {
        let mut r = rng(5000 + seed);
        let pack = metronome_pack(r.gen_range(1..40), seed);
        let temperature = if seed % 2 == 0 { None } else { Some(r.gen_range(0.3..3.0)) };
        let mut stub = RandomStub(rng(seed), catalog.len());
        let g = match generate_with(&mut stub, &pack, catalog, &DecodeOptions { temperature, seed }) {
            Ok(g) => g,
            Err(e) => {
                bad.push(format!("case {seed}: {e}"));
                continue;
            }
        };
        total_items += g.sequence.items.len();
        if !g.times.windows(2).all(|w| w[1] > w[0]) {
            bad.push(format!("case {seed}: t not increasing"));
        }
        let mut next = 0;
        for it in &g.sequence.items {
            if it.start_beat != next || it.end_beat < it.start_beat {
                bad.push(format!("case {seed}: span {}..{} after {next}", it.start_beat, it.end_beat));
            }
            next = it.end_beat;
        }
        if g.times.last().is_some_and(|&t| t >= pack.duration()) {
            bad.push(format!("case {seed}: step at or after music end"));
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "{STUB_CASES} random stubs, {total_items} steps: termination, strictly increasing t, tiled spans; {} violations{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    }
}

// ---------------------------------------------------------------- criterion 10

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn without_manifest(mut t: BTreeMap<PathBuf, Vec<u8>>) -> BTreeMap<PathBuf, Vec<u8>> {
    t.retain(|k, _| !k.ends_with("run-manifest.toml"));
    t
}

fn small_inpainter(joints: usize) -> InpainterConfig {
    InpainterConfig {
        clip_len: 64,
        window: 16,
        embed_dim: 16,
        codec_layers: 2,
        codec_kernel: 3,
        unet_levels: 2,
        unet_channels: 4,
        ..InpainterConfig::new(joints)
    }
}

fn criterion_10(cfg: &RunConfig, work: &Path) -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let (a, b) = (work.join("det/corpus_a"), work.join("det/corpus_b"));
    cmd_gen_data(cfg, &a).unwrap();
    cmd_gen_data(cfg, &b).unwrap();
    checks.push(("corpus bytes", tree(&a) == tree(&b)));
    let corpus = Corpus::load(&a).unwrap();
    let joints = corpus.catalog.motion_format().unwrap().0.rotating_joints();
    let clips: Vec<MotionClip> = corpus.performances.iter().map(|p| p.clip.clone()).collect();

    let ck = |tag: &str| work.join("det").join(tag);
    for run in ["x", "y"] {
        let hyper = PredictorTraining { epochs: 2, ..PredictorTraining::default() };
        let mut t = PredictorTrainer::new(&corpus.songs, &corpus.catalog, PredictorConfig::new(corpus.catalog.len()), &hyper, 5).unwrap();
        while !t.done() {
            t.run_epoch().unwrap();
        }
        t.checkpoint().unwrap().save(&ck(run).join("cau")).unwrap();
        let hyper = InpainterTraining { epochs: 2, batch: 4, ..InpainterTraining::default() };
        let (m, _) = train_inpainter(&clips, small_inpainter(joints), &hyper, 5).unwrap();
        m.to_checkpoint().unwrap().save(&ck(run).join("inpainter")).unwrap();
        let hyper = AeTraining { epochs: 1, ..AeTraining::default() };
        let (ae, _) = train_autoencoder(&clips, AutoencoderConfig::new(7 + 4 * joints), &hyper, 5).unwrap();
        ae.to_checkpoint().unwrap().save(&ck(run).join("autoencoder")).unwrap();
    }
    checks.push(("checkpoint bytes", tree(&ck("x")) == tree(&ck("y"))));

    let song = a.join("music").join(&corpus.songs[0].name);
    let synth = |out: &str| {
        let args = SynthesizeArgs {
            music: song.clone(),
            catalog: a.join("catalog.toml"),
            checkpoints: ck("x"),
            out: work.join("det").join(out),
        };
        cmd_synthesize(cfg, &args).unwrap()
    };
    let s1 = synth("synth_1");
    synth("synth_2");
    checks.push(("synthesized bytes", tree(&work.join("det/synth_1")) == tree(&work.join("det/synth_2"))));

    let rt = work.join("det/roundtrip");
    corpus.save(&rt.join("corpus")).unwrap();
    let again = Corpus::load(&rt.join("corpus")).unwrap();
    checks.push(("corpus round trip", again == corpus && without_manifest(tree(&a)) == tree(&rt.join("corpus"))));
    let catalog = CauCatalog::load(&a.join("catalog.toml")).unwrap();
    catalog.save(&rt.join("cat/catalog.toml")).unwrap();
    checks.push(("catalog round trip", CauCatalog::load(&rt.join("cat/catalog.toml")).unwrap() == catalog));
    let pack = MusicFeaturePack::load(&song).unwrap();
    pack.save(&rt.join("pack")).unwrap();
    checks.push(("music pack round trip", MusicFeaturePack::load(&rt.join("pack")).unwrap() == pack));
    let seq = CauSequence::load(&work.join("det/synth_1/sequence.toml"), &catalog).unwrap();
    seq.save(&rt.join("sequence.toml"), &catalog).unwrap();
    checks.push((
        "sequence round trip",
        seq == s1.sequence && CauSequence::load(&rt.join("sequence.toml"), &catalog).unwrap() == seq,
    ));
    let motion = MotionClip::load(&work.join("det/synth_1/motion.toml")).unwrap();
    motion.save(&rt.join("motion.toml")).unwrap();
    checks.push((
        "motion round trip",
        motion == s1.motion && MotionClip::load(&rt.join("motion.toml")).unwrap() == motion,
    ));
    let kp = read_keypoints(&work.join("det/synth_1/keypoints.txt")).unwrap();
    write_keypoints(&rt.join("keypoints.txt"), motion.fps(), &kp).unwrap();
    let fk = forward_kinematics(&motion);
    let kp_close = kp.len() == fk.len()
        && kp.iter().flatten().zip(fk.iter().flatten()).all(|(x, y)| x.iter().zip(y).all(|(p, q)| p == q));
    checks.push(("keypoints round trip", kp_close && read_keypoints(&rt.join("keypoints.txt")).unwrap() == kp));
    for name in ["cau", "inpainter", "autoencoder"] {
        let c = Checkpoint::load(&ck("x").join(name)).unwrap();
        c.save(&rt.join(name)).unwrap();
        checks.push(("checkpoint round trip", Checkpoint::load(&rt.join(name)).unwrap() == c));
    }
    let ae = Autoencoder::from_checkpoint(&Checkpoint::load(&ck("x").join("autoencoder")).unwrap()).unwrap();
    checks.push(("autoencoder reload", ae.to_checkpoint().unwrap() == Checkpoint::load(&ck("x").join("autoencoder")).unwrap()));
    let text = cfg.to_toml().unwrap();
    checks.push(("run config round trip", toml::from_str::<RunConfig>(&text).unwrap() == *cfg));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: format!("{} byte-identity and round-trip checks, failed: {failed:?}", checks.len()),
    }
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(corpus: &Corpus) -> (Outcome, CauPredictor) {
    let started = Instant::now();
    let hyper = PredictorTraining { target_loss: Some(0.02), ..PredictorTraining::default() };
    let mut t = PredictorTrainer::new(&corpus.songs, &corpus.catalog, PredictorConfig::new(corpus.catalog.len()), &hyper, TRAIN_SEED).unwrap();
    while !t.done() {
        t.run_epoch().unwrap();
    }
    let epochs = t.epoch();
    let (model, _) = t.finish();
    let steps: Vec<_> = corpus.songs.iter().map(|s| song_steps(s, model.config.window_seconds).unwrap()).collect();
    let nll = evaluate_loss(&model, &steps).unwrap();
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = corpus
        .songs
        .iter()
        .map(|s| {
            let gen = generate(&model, &s.pack, &corpus.catalog).unwrap();
            (strip_specials(&gen.tokens()), strip_specials(&s.sequence.tokens()))
        })
        .collect();
    let bleu = mean_bleu4(pairs.iter().map(|(a, b)| (&a[..], &b[..])));
    let elapsed = started.elapsed();
    (
        Outcome {
            pass: nll < NLL_MAX && bleu >= BLEU_MIN && elapsed < PREDICTOR_BUDGET && epochs <= 1000,
            detail: format!(
                "{} songs, {epochs} epochs: teacher-forced NLL {nll:.4} < {NLL_MAX}, free-running BLEU-4 {bleu:.4} >= {BLEU_MIN}, runtime {:.0} s < {} s",
                corpus.songs.len(),
                elapsed.as_secs_f64(),
                PREDICTOR_BUDGET.as_secs()
            ),
        },
        model,
    )
}

// ---------------------------------------------------------- criteria 6, 7, 8

fn desk_inpainter(joints: usize, window: usize, mode: InpainterMode) -> InpainterConfig {
    InpainterConfig {
        window,
        mode,
        embed_dim: 84,
        unet_channels: 16,
        codec_kernel: 5,
        ..InpainterConfig::new(joints)
    }
}

fn desk_training() -> InpainterTraining {
    InpainterTraining {
        epochs: 400,
        lr: 1e-3,
        batch: 1,
        patience: 20,
        factor: 0.7,
        target_loss: None,
    }
}

struct Models {
    clips: Vec<MotionClip>,
    joints: usize,
    cache: HashMap<(usize, &'static str), Inpainter>,
    seconds: HashMap<(usize, &'static str), f64>,
}

fn mode_key(m: InpainterMode) -> &'static str {
    match m {
        InpainterMode::Full => "full",
        InpainterMode::NoCodec => "no-codec",
        InpainterMode::Merged => "merged",
    }
}

impl Models {
    fn get(&mut self, window: usize, mode: InpainterMode) -> Inpainter {
        let key = (window, mode_key(mode));
        if let Some(m) = self.cache.get(&key) {
            return m.clone();
        }
        let t = Instant::now();
        let (m, _) = train_inpainter(&self.clips, desk_inpainter(self.joints, window, mode), &desk_training(), TRAIN_SEED).unwrap();
        self.seconds.insert(key, t.elapsed().as_secs_f64());
        self.cache.insert(key, m.clone());
        m
    }
}

// ---------------------------------------------------------------- criterion 9

fn max_joint_step(a: &MotionFrame, b: &MotionFrame) -> f64 {
    a.joints
        .iter()
        .zip(&b.joints)
        .map(|(p, q)| geodesic_distance(*p, *q).unwrap())
        .fold(0.0, f64::max)
}

fn criterion_9(cfg: &RunConfig, work: &Path, corpus_dir: &Path, corpus: &Corpus, predictor: &CauPredictor, inpainter: &Inpainter) -> Outcome {
    let ck = work.join("e2e/checkpoints");
    predictor.to_checkpoint().unwrap().save(&ck.join("cau")).unwrap();
    inpainter.to_checkpoint().unwrap().save(&ck.join("inpainter")).unwrap();
    let song = &corpus.songs[0];
    let args = SynthesizeArgs {
        music: corpus_dir.join("music").join(&song.name),
        catalog: corpus_dir.join("catalog.toml"),
        checkpoints: ck,
        out: work.join("e2e/out"),
    };
    let s = match cmd_synthesize(cfg, &args) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("synthesize failed: {e:#}"),
            }
        }
    };
    print!("{}", s.summary);
    let motion = &s.motion;
    let unit = motion
        .frames()
        .iter()
        .all(|f| std::iter::once(&f.root_rotation).chain(&f.joints).all(|q| (q.norm() - 1.0).abs() <= UNIT_TOL));
    let finite = motion.frames().iter().all(|f| f.root_velocity.iter().all(|v| v.is_finite()))
        && forward_kinematics(motion).iter().flatten().all(|p| p.iter().all(|v| v.is_finite()));

    let grid = beat_times(&song.pack);
    let assembly = assemble(&s.sequence, &corpus.catalog, &grid).unwrap();
    let half = inpainter.config.window / 2;
    let mut intra: f64 = 0.0;
    for i in 1..assembly.clip.len() {
        if !assembly.junctions.contains(&i) {
            intra = intra.max(max_joint_step(assembly.clip.frame(i - 1), assembly.clip.frame(i)));
        }
    }
    let step = |i: usize| max_joint_step(motion.frame(i - 1), motion.frame(i));
    let mut seams: f64 = 0.0;
    let mut interior: f64 = 0.0;
    for &j in &assembly.junctions {
        let (lo, hi) = (j.saturating_sub(half).max(1), (j + half).min(motion.len() - 1));
        seams = seams.max(step(j)).max(step(lo)).max(step(hi));
        interior = (lo..=hi).map(step).fold(interior, f64::max);
    }
    let ok = !assembly.junctions.is_empty() && seams <= CONTINUITY_RATIO * intra;
    Outcome {
        pass: unit && finite && ok && !motion.is_empty(),
        detail: format!(
            "song `{}`: {} frames, {} junctions; unit quaternions {unit}, finite root {finite}; max step at junctions and inpainting seams {seams:.4} rad <= {CONTINUITY_RATIO} x max intra-clip step {intra:.4} rad; max step anywhere in transition windows {interior:.4} rad (informational)",
            song.name,
            motion.len(),
            assembly.junctions.len()
        ),
    }
}

// ------------------------------------------------------------------- driver

#[test]
fn acceptance() {
    let mut report = Report { lines: Vec::new(), failed: Vec::new() };
    let dir = TempDir::new().unwrap();
    let work = dir.path();
    let cfg = RunConfig { seed: CORPUS_SEED, ..RunConfig::default() };

    let t = Instant::now();
    report.record(1, "gradient suite", t, criterion_1());
    let t = Instant::now();
    report.record(2, "SO(3) suite", t, criterion_2());
    let t = Instant::now();
    report.record(3, "oracle equivalence", t, criterion_3());

    let corpus_dir = work.join("corpus");
    cmd_gen_data(&cfg, &corpus_dir).unwrap();
    let corpus = Corpus::load(&corpus_dir).unwrap();

    let t = Instant::now();
    report.record(5, "generation safety", t, criterion_5(&corpus.catalog));
    let t = Instant::now();
    report.record(10, "determinism and round trips", t, criterion_10(&cfg, work));

    let t = Instant::now();
    let (o4, predictor) = criterion_4(&corpus);
    report.record(4, "predictor memorization", t, o4);

    let joints = corpus.catalog.motion_format().unwrap().0.rotating_joints();
    let clips: Vec<MotionClip> = corpus.performances.iter().map(|p| p.clip.clone()).collect();
    let clip_len = InpainterConfig::new(joints).clip_len;
    let cases: Vec<MotionClip> = corpus
        .performances
        .iter()
        .flat_map(|p| junction_cases(&p.clip, &p.junctions, clip_len).unwrap())
        .collect();
    let mut models = Models { clips, joints, cache: HashMap::new(), seconds: HashMap::new() };

    let t = Instant::now();
    let ae_clips: Vec<MotionClip> = corpus
        .catalog
        .cau_ids()
        .map(|id| (**corpus.catalog.clip(id).unwrap()).clone())
        .chain(corpus.performances.iter().map(|p| p.clip.clone()))
        .collect();
    let (ae, _) = train_autoencoder(&ae_clips, AutoencoderConfig::new(7 + 4 * joints), &AeTraining::default(), TRAIN_SEED).unwrap();
    println!("autoencoder trained in {:.0} s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let main = window_sweep(&cases, &ae, &[MAIN_WINDOW], |w| Ok(models.get(w, InpainterMode::Full))).unwrap();
    let blend = main.iter().find(|r| r.method == Method::Blending).unwrap().geodesic;
    let ours = main.iter().find(|r| r.method == Method::Inpainter).unwrap().geodesic;
    let secs = models.seconds[&(MAIN_WINDOW, "full")];
    report.record(
        6,
        "inpainter vs blending",
        t,
        Outcome {
            pass: ours < blend && secs < INPAINTER_BUDGET.as_secs_f64(),
            detail: format!(
                "{} clips, {} held-in junctions, window {MAIN_WINDOW}: inpainter {ours:.4e} < blending {blend:.4e} rad (ratio {:.2}), training {secs:.0} s < {} s",
                corpus.performances.len(),
                cases.len(),
                blend / ours,
                INPAINTER_BUDGET.as_secs()
            ),
        },
    );

    let t = Instant::now();
    let rows = window_sweep(&cases, &ae, &SWEEP_WINDOWS, |w| Ok(models.get(w, InpainterMode::Full))).unwrap();
    let mut per_window = Vec::new();
    let mut all_better = true;
    for &w in &SWEEP_WINDOWS {
        let g = |m: Method| rows.iter().find(|r| r.method == m && r.window == w).unwrap();
        let (b, i) = (g(Method::Blending), g(Method::Inpainter));
        all_better &= i.geodesic < b.geodesic;
        per_window.push(format!("w{w} {:.3e}<{:.3e} fid {:.3}/{:.3}", i.geodesic, b.geodesic, i.fid, b.fid));
    }
    let (fid_w, interior) = fid_minimum(&rows).unwrap();
    report.record(
        7,
        "window sweep direction",
        t,
        Outcome {
            pass: all_better,
            detail: format!(
                "inpainter < blending geodesic at every window: {}; inpainter FID minimum at w{fid_w} ({}, informational)",
                per_window.join(", "),
                if interior { "interior" } else { "boundary" }
            ),
        },
    );

    let t = Instant::now();
    let modes = [InpainterMode::Full, InpainterMode::NoCodec, InpainterMode::Merged];
    let abl = ablation(&cases, MAIN_WINDOW, &modes, |m| Ok(models.get(MAIN_WINDOW, m))).unwrap();
    let full = abl[0].geodesic;
    report.record(
        8,
        "ablation direction",
        t,
        Outcome {
            pass: abl[1].geodesic >= full && abl[2].geodesic >= full,
            detail: format!(
                "full {full:.4e}; no frame codec {:.4e} >= full; merged sub-models {:.4e} >= full",
                abl[1].geodesic, abl[2].geodesic
            ),
        },
    );

    let t = Instant::now();
    let inpainter = models.get(MAIN_WINDOW, InpainterMode::Full);
    report.record(9, "end-to-end continuity", t, criterion_9(&cfg, work, &corpus_dir, &corpus, &predictor, &inpainter));

    report.lines.sort_by_key(|l| l[5..7].trim().parse::<usize>().unwrap());
    emit("\n==== acceptance summary ====");
    for l in &report.lines {
        emit(l);
    }
    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}
