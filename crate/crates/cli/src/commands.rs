use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use dancegen_core::cau::{bleu4, strip_specials, CauCatalog, CauSequence};
use dancegen_core::eval::{
    ablation, fid, fid_minimum, fit_gaussian, format_sweep, geodesic_report, junction_cases, train_autoencoder, window_sweep,
    Autoencoder, AutoencoderConfig,
};
use dancegen_core::inpainter::{assemble, stitch, train_inpainter, Inpainter, InpainterConfig, InpainterMode};
use dancegen_core::motion::{forward_kinematics, write_keypoints, MotionClip};
use dancegen_core::music::{beat_times, generate_synthetic_corpus, Corpus, MusicFeaturePack};
use dancegen_core::nn::checkpoint::{BLOB, MANIFEST};
use dancegen_core::nn::Checkpoint;
use dancegen_core::predictor::{generate, CauPredictor, PredictorConfig, PredictorTrainer};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Internal;

/// Provenance record written next to every command's outputs.
pub const RUN_MANIFEST: &str = "run-manifest.toml";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    /// SHA-256 of every checkpoint file read, keyed by path relative to the checkpoint root.
    checkpoints: BTreeMap<String, String>,
    config: &'a RunConfig,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, checkpoints: BTreeMap<String, String>) -> Result<()> {
    let m = RunManifest {
        command,
        seed: cfg.seed,
        checkpoints,
        config: cfg,
    };
    let path = dir.join(RUN_MANIFEST);
    fs::write(&path, toml::to_string(&m)?).with_context(|| format!("writing {}", path.display()))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn hash_checkpoint(root: &Path, name: &str, into: &mut BTreeMap<String, String>) -> Result<()> {
    for file in [MANIFEST, BLOB] {
        into.insert(format!("{name}/{file}"), file_sha256(&root.join(name).join(file))?);
    }
    Ok(())
}

/// Defaults, or the file at `path`, with the seed override applied.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    Checkpoint::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.synth.validate().context("in [synth]")?;
    let corpus = generate_synthetic_corpus(&cfg.synth, cfg.seed)?;
    corpus.save(out).with_context(|| format!("writing corpus to {}", out.display()))?;
    write_manifest(out, "gen-data", cfg, BTreeMap::new())?;
    println!(
        "wrote {} songs, {} performances, catalog of {} tokens to {}",
        corpus.songs.len(),
        corpus.performances.len(),
        corpus.catalog.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainCauArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
}

fn open_log(path: &Path, append: bool) -> Result<File> {
    let mut o = OpenOptions::new();
    if append {
        o.append(true).create(true);
    } else {
        o.write(true).create(true).truncate(true);
    }
    o.open(path).with_context(|| format!("opening log {}", path.display()))
}

pub fn cmd_train_cau(cfg: &RunConfig, args: &TrainCauArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let mut trainer = if args.resume {
        let ckpt = load_checkpoint(&args.out)?;
        PredictorTrainer::resume(&ckpt, &corpus.songs, &corpus.catalog, &cfg.predictor)?
    } else {
        let config = PredictorConfig::new(corpus.catalog.len());
        PredictorTrainer::new(&corpus.songs, &corpus.catalog, config, &cfg.predictor, cfg.seed)?
    };
    ensure_dir(&args.out)?;
    let mut log = open_log(&args.out.join(TRAIN_LOG), args.resume)?;
    while !trainer.done() {
        let epoch = trainer.epoch();
        let loss = trainer.run_epoch()?;
        let lr = trainer.log.lr[epoch];
        writeln!(log, "epoch={epoch} loss={loss:?} lr={lr:?} best_loss={:?}", trainer.log.best_loss)?;
        if (epoch + 1) % cfg.checkpoint_every == 0 {
            trainer.checkpoint()?.save(&args.out)?;
        }
    }
    trainer.checkpoint()?.save(&args.out)?;
    write_manifest(&args.out, "train-cau", cfg, BTreeMap::new())?;
    println!(
        "trained {} epochs, best loss {:.6} at epoch {}",
        trainer.epoch(),
        trainer.log.best_loss,
        trainer.log.best_epoch
    );
    Ok(())
}

pub struct TrainInpaintArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
    pub window: Option<usize>,
    pub mode: Option<InpainterMode>,
}

fn rotating_joints(catalog: &CauCatalog) -> Result<usize> {
    let (skeleton, _) = catalog.motion_format().ok_or_else(|| anyhow!("catalog has no CAU motion clips"))?;
    Ok(skeleton.rotating_joints())
}

fn inpainter_config(cfg: &RunConfig, catalog: &CauCatalog, window: Option<usize>, mode: Option<InpainterMode>) -> Result<InpainterConfig> {
    let mut c = cfg.inpainter_model.build(rotating_joints(catalog)?);
    if let Some(w) = window {
        c.window = w;
    }
    if let Some(m) = mode {
        c.mode = m;
    }
    c.validate().context("in [inpainter_model]")?;
    Ok(c)
}

fn performance_clips(corpus: &Corpus) -> Result<Vec<MotionClip>> {
    if corpus.performances.is_empty() {
        bail!("corpus has no performances to train on");
    }
    Ok(corpus.performances.iter().map(|p| p.clip.clone()).collect())
}

pub fn cmd_train_inpaint(cfg: &RunConfig, args: &TrainInpaintArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let config = inpainter_config(cfg, &corpus.catalog, args.window, args.mode)?;
    let clips = performance_clips(&corpus)?;
    let (model, logs) = train_inpainter(&clips, config, &cfg.inpainter, cfg.seed)?;
    ensure_dir(&args.out)?;
    model.to_checkpoint()?.save(&args.out)?;
    let mut log = open_log(&args.out.join(TRAIN_LOG), false)?;
    for l in &logs {
        let branch = l.kind.map_or("?", |k| k.name());
        for (epoch, (&loss, &lr)) in l.epoch_loss.iter().zip(&l.lr).enumerate() {
            write!(log, "branch={branch} epoch={epoch} loss={loss:?} lr={lr:?}")?;
            if let Some(g) = l.masked_geodesic.get(epoch) {
                write!(log, " geodesic={g:?}")?;
            }
            writeln!(log)?;
        }
        println!("{branch}: {} epochs, best at {}", l.epoch_loss.len(), l.best_epoch);
    }
    write_manifest(&args.out, "train-inpaint", cfg, BTreeMap::new())
}

pub struct TrainAeArgs {
    pub corpus: PathBuf,
    pub out: PathBuf,
}

fn autoencoder_config(cfg: &RunConfig, catalog: &CauCatalog) -> Result<AutoencoderConfig> {
    let (skeleton, _) = catalog.motion_format().ok_or_else(|| anyhow!("catalog has no CAU motion clips"))?;
    let c = AutoencoderConfig {
        window: cfg.autoencoder.window,
        stride: cfg.autoencoder.stride,
        ..AutoencoderConfig::new(skeleton.frame_params())
    };
    c.validate().context("in [autoencoder]")?;
    Ok(c)
}

pub fn cmd_train_ae(cfg: &RunConfig, args: &TrainAeArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let config = autoencoder_config(cfg, &corpus.catalog)?;
    let mut clips: Vec<MotionClip> = corpus
        .catalog
        .cau_ids()
        .map(|id| corpus.catalog.clip(id).map(|c| (**c).clone()))
        .collect::<dancegen_core::Result<_>>()?;
    clips.extend(corpus.performances.iter().map(|p| p.clip.clone()));
    let (model, losses) = train_autoencoder(&clips, config, &cfg.autoencoder.training, cfg.seed)?;
    ensure_dir(&args.out)?;
    model.to_checkpoint()?.save(&args.out)?;
    let mut log = open_log(&args.out.join(TRAIN_LOG), false)?;
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(log, "epoch={epoch} loss={loss:?}")?;
    }
    write_manifest(&args.out, "train-ae", cfg, BTreeMap::new())?;
    println!("trained {} epochs, final loss {:.6}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

pub struct SynthesizeArgs {
    pub music: PathBuf,
    pub catalog: PathBuf,
    /// Root holding `cau/` and `inpainter/`.
    pub checkpoints: PathBuf,
    pub out: PathBuf,
}

pub struct Synthesis {
    pub sequence: CauSequence,
    pub motion: MotionClip,
    /// Sequence line plus timing table, as printed.
    pub summary: String,
}

pub const MOTION_FILE: &str = "motion.toml";
pub const KEYPOINTS_FILE: &str = "keypoints.txt";
pub const SEQUENCE_FILE: &str = "sequence.toml";

fn check_motion(clip: &MotionClip) -> Result<()> {
    for (i, f) in clip.frames().iter().enumerate() {
        let finite = f.root_velocity.iter().all(|v| v.is_finite());
        let unit = std::iter::once(&f.root_rotation)
            .chain(&f.joints)
            .all(|q| (q.norm() - 1.0).abs() <= 1e-9);
        if !finite || !unit {
            return Err(Internal(format!("synthesized frame {i} is not finite and unit-norm")).into());
        }
    }
    Ok(())
}

pub fn cmd_synthesize(cfg: &RunConfig, args: &SynthesizeArgs) -> Result<Synthesis> {
    let catalog = CauCatalog::load(&args.catalog).with_context(|| format!("loading catalog {}", args.catalog.display()))?;
    let pack = MusicFeaturePack::load(&args.music).with_context(|| format!("loading music {}", args.music.display()))?;
    let predictor = CauPredictor::from_checkpoint(&load_checkpoint(&args.checkpoints.join("cau"))?)?;
    let inpainter = Inpainter::from_checkpoint(&load_checkpoint(&args.checkpoints.join("inpainter"))?)?;
    let mut hashes = BTreeMap::new();
    hash_checkpoint(&args.checkpoints, "cau", &mut hashes)?;
    hash_checkpoint(&args.checkpoints, "inpainter", &mut hashes)?;

    let sequence = generate(&predictor, &pack, &catalog)?;
    let grid = beat_times(&pack);
    let assembly = assemble(&sequence, &catalog, &grid)?;
    let motion = stitch(&sequence, &catalog, &grid, &inpainter)?;
    if motion.len() != assembly.clip.len() {
        return Err(Internal(format!("stitched {} frames, assembled {}", motion.len(), assembly.clip.len())).into());
    }
    check_motion(&motion)?;

    ensure_dir(&args.out)?;
    motion.save(&args.out.join(MOTION_FILE))?;
    write_keypoints(&args.out.join(KEYPOINTS_FILE), motion.fps(), &forward_kinematics(&motion))?;
    sequence.save(&args.out.join(SEQUENCE_FILE), &catalog)?;
    write_manifest(&args.out, "synthesize", cfg, hashes)?;

    let names = sequence
        .items
        .iter()
        .map(|it| catalog.name(it.token).map(str::to_owned))
        .collect::<dancegen_core::Result<Vec<_>>>()?;
    let mut summary = format!("sequence: {}\n", names.join(" "));
    let _ = writeln!(summary, "{:<12} {:>6} {:>6} {:>9} {:>9} {:>7}", "token", "beat0", "beat1", "start_s", "end_s", "frames");
    let mut pieces = assembly.pieces.iter().peekable();
    for (it, name) in sequence.items.iter().zip(&names) {
        let frames = match pieces.peek() {
            Some(&&(token, _, count)) if token == it.token => {
                pieces.next();
                count
            }
            _ => 0,
        };
        let _ = writeln!(
            summary,
            "{:<12} {:>6} {:>6} {:>9.3} {:>9.3} {:>7}",
            name,
            it.start_beat,
            it.end_beat,
            grid.time_of_beat(it.start_beat),
            grid.time_of_beat(it.end_beat),
            frames
        );
    }
    let _ = writeln!(summary, "total frames: {} at {} fps", motion.len(), motion.fps());
    Ok(Synthesis {
        sequence,
        motion,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Bleu,
    Geodesic,
    Fid,
    Sweep,
    Ablation,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Bleu => "bleu",
            EvalMode::Geodesic => "geodesic",
            EvalMode::Fid => "fid",
            EvalMode::Sweep => "sweep",
            EvalMode::Ablation => "ablation",
        }
    }
}

pub struct EvaluateArgs {
    pub mode: EvalMode,
    pub candidate: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub catalog: PathBuf,
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub window: Option<usize>,
    /// Report file.
    pub out: PathBuf,
}

fn pair(args: &EvaluateArgs) -> Result<(&Path, &Path)> {
    match (&args.candidate, &args.reference) {
        (Some(c), Some(r)) => Ok((c, r)),
        _ => bail!("mode `{}` needs --candidate and --reference", args.mode.name()),
    }
}

/// `.toml` files directly inside `dir`, sorted by name.
fn toml_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "toml") && !p.ends_with(RUN_MANIFEST));
    files.sort();
    Ok(files)
}

/// One motion file, or every motion file in a directory.
fn load_clips(path: &Path) -> Result<Vec<MotionClip>> {
    let files = if path.is_dir() { toml_files(path)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        bail!("no motion files in {}", path.display());
    }
    files
        .iter()
        .map(|f| MotionClip::load(f).with_context(|| format!("loading motion {}", f.display())))
        .collect()
}

fn bleu_report(args: &EvaluateArgs) -> Result<(String, String)> {
    let (cand, refr) = pair(args)?;
    let catalog = CauCatalog::load(&args.catalog).with_context(|| format!("loading catalog {}", args.catalog.display()))?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if cand.is_dir() {
        let mut v = Vec::new();
        for c in toml_files(cand)? {
            let name = c.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let r = refr.join(&name);
            if !r.is_file() {
                bail!("reference {} is missing", r.display());
            }
            v.push((name, c, r));
        }
        v
    } else {
        vec![(cand.display().to_string(), cand.to_path_buf(), refr.to_path_buf())]
    };
    if pairs.is_empty() {
        bail!("no candidate sequences in {}", cand.display());
    }
    let mut table = String::from("name\tbleu4\n");
    let mut total = 0.0;
    for (name, c, r) in &pairs {
        let load = |p: &Path| CauSequence::load(p, &catalog).with_context(|| format!("loading sequence {}", p.display()));
        let score = bleu4(&strip_specials(&load(c)?.tokens()), &strip_specials(&load(r)?.tokens()));
        total += score;
        let _ = writeln!(table, "{name}\t{score:.9}");
    }
    let mean = total / pairs.len() as f64;
    let _ = writeln!(table, "mean\t{mean:.9}");
    Ok((table, format!("mean BLEU-4 over {} pairs: {mean:.6}\n", pairs.len())))
}

fn geodesic_mode(args: &EvaluateArgs) -> Result<(String, String)> {
    let (cand, refr) = pair(args)?;
    let gen = MotionClip::load(cand).with_context(|| format!("loading motion {}", cand.display()))?;
    let gt = MotionClip::load(refr).with_context(|| format!("loading motion {}", refr.display()))?;
    let n = gt.len();
    let rows = match args.window {
        Some(w) if w > n => bail!("window {w} exceeds the {n}-frame clip"),
        Some(w) => (n - w) / 2..(n - w) / 2 + w,
        None => 0..n,
    };
    let g = geodesic_report(&gen, &gt, rows.clone())?;
    let table = format!("start\tend\tgeodesic\n{}\t{}\t{g:.9e}\n", rows.start, rows.end);
    Ok((table, format!("mean geodesic over frames {}..{}: {g:.6e}\n", rows.start, rows.end)))
}

fn load_autoencoder(args: &EvaluateArgs) -> Result<Autoencoder> {
    Ok(Autoencoder::from_checkpoint(&load_checkpoint(&args.checkpoints.join("autoencoder"))?)?)
}

fn fid_mode(args: &EvaluateArgs) -> Result<(String, String)> {
    let (cand, refr) = pair(args)?;
    let ae = load_autoencoder(args)?;
    let a = fit_gaussian(&ae.features(&load_clips(cand)?)?)?;
    let b = fit_gaussian(&ae.features(&load_clips(refr)?)?)?;
    let d = fid(&a, &b)?;
    Ok((format!("fid\n{d:.9e}\n"), format!("FID: {d:.6e}\n")))
}

fn sweep_cases(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<MotionClip>> {
    let mut cases = Vec::new();
    for p in &corpus.performances {
        cases.extend(junction_cases(&p.clip, &p.junctions, cfg.inpainter_model.clip_len)?);
    }
    if cases.is_empty() {
        bail!("no performance junction has {} frames of context", cfg.inpainter_model.clip_len);
    }
    Ok(cases)
}

fn sweep_mode(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(String, String)> {
    let corpus = load_corpus(&args.corpus)?;
    let ae = load_autoencoder(args)?;
    let cases = sweep_cases(cfg, &corpus)?;
    let clips = performance_clips(&corpus)?;
    let windows = args.window.map_or_else(|| cfg.evaluation.windows.clone(), |w| vec![w]);
    let rows = window_sweep(&cases, &ae, &windows, |w| {
        let config = inpainter_config(cfg, &corpus.catalog, Some(w), None).map_err(|e| dancegen_core::Error::Validation(format!("{e:#}")))?;
        Ok(train_inpainter(&clips, config, &cfg.inpainter, cfg.seed)?.0)
    })?;
    let mut summary = String::new();
    for r in &rows {
        let _ = writeln!(summary, "{:<10} w={:<4} geodesic={:.6e} fid={:.6e}", r.method.name(), r.window, r.geodesic, r.fid);
    }
    if let Some((w, interior)) = fid_minimum(&rows) {
        let _ = writeln!(summary, "inpainter FID minimum at window {w} ({})", if interior { "interior" } else { "boundary" });
    }
    Ok((format_sweep(&rows), summary))
}

fn mode_name(m: InpainterMode) -> &'static str {
    match m {
        InpainterMode::Full => "full",
        InpainterMode::NoCodec => "no-codec",
        InpainterMode::Merged => "merged",
    }
}

fn ablation_mode(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(String, String)> {
    let corpus = load_corpus(&args.corpus)?;
    let cases = sweep_cases(cfg, &corpus)?;
    let clips = performance_clips(&corpus)?;
    let window = args.window.unwrap_or(cfg.inpainter_model.window);
    let modes = [InpainterMode::Full, InpainterMode::NoCodec, InpainterMode::Merged];
    let rows = ablation(&cases, window, &modes, |m| {
        let config = inpainter_config(cfg, &corpus.catalog, Some(window), Some(m)).map_err(|e| dancegen_core::Error::Validation(format!("{e:#}")))?;
        Ok(train_inpainter(&clips, config, &cfg.inpainter, cfg.seed)?.0)
    })?;
    let mut table = String::from("mode\tgeodesic\n");
    let mut summary = String::new();
    for r in &rows {
        let name = mode_name(r.mode);
        let _ = writeln!(table, "{name}\t{:.9e}", r.geodesic);
        let _ = writeln!(summary, "{name:<10} geodesic={:.6e}", r.geodesic);
    }
    Ok((table, summary))
}

/// Runs one evaluation, writes its table to `args.out` and returns the summary.
pub fn cmd_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<String> {
    let (table, summary) = match args.mode {
        EvalMode::Bleu => bleu_report(args)?,
        EvalMode::Geodesic => geodesic_mode(args)?,
        EvalMode::Fid => fid_mode(args)?,
        EvalMode::Sweep => sweep_mode(cfg, args)?,
        EvalMode::Ablation => ablation_mode(cfg, args)?,
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(&args.out, &table).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(summary)
}
