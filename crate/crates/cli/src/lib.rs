//! Command-line surface of dancegen: corpus generation, training of the three
//! models, synthesis and evaluation.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dancegen_core::inpainter::InpainterMode;

pub use commands::{
    cmd_evaluate, cmd_gen_data, cmd_synthesize, cmd_train_ae, cmd_train_cau, cmd_train_inpaint, file_sha256, load_config,
    EvalMode, EvaluateArgs, Synthesis, SynthesizeArgs, TrainAeArgs, TrainCauArgs, TrainInpaintArgs,
};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Failure that points at a broken internal invariant rather than bad input.
#[derive(Debug)]
pub struct Internal(pub String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "internal error: {}", self.0)
    }
}

impl std::error::Error for Internal {}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Internal>() {
            return EXIT_INTERNAL;
        }
        if let Some(dancegen_core::Error::NonFinite(_)) = cause.downcast_ref::<dancegen_core::Error>() {
            return EXIT_INTERNAL;
        }
    }
    EXIT_USAGE
}

#[derive(Debug, Parser)]
#[command(name = "dancegen", version, about = "Music-to-dance synthesis from choreographic action units")]
pub struct Cli {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Corpus directory; defaults to `paths.corpus`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    GenData {
        /// Output directory; defaults to `paths.corpus`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the CAU predictor.
    TrainCau {
        #[command(flatten)]
        corpus: CorpusArg,
        /// Checkpoint root; the model goes to `<root>/cau`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from the checkpoint already in `<root>/cau`.
        #[arg(long)]
        resume: bool,
    },
    /// Train the transition inpainter.
    TrainInpaint {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Exact output directory instead of `<root>/inpainter`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Train the motion autoencoder used for FID.
    TrainAe {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate a CAU sequence for a music pack and stitch it into motion.
    Synthesize {
        /// Music feature pack directory.
        #[arg(long)]
        music: PathBuf,
        /// Catalog file; defaults to the corpus catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute an evaluation report.
    Evaluate {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long)]
        candidate: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        /// Report file; defaults to `<outputs>/report-<mode>.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    NoCodec,
    Merged,
}

impl From<ModeArg> for InpainterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => InpainterMode::Full,
            ModeArg::NoCodec => InpainterMode::NoCodec,
            ModeArg::Merged => InpainterMode::Merged,
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    let corpus = |c: CorpusArg| c.corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
    let root = |c: Option<PathBuf>| c.unwrap_or_else(|| cfg.paths.checkpoints.clone());
    match cli.command {
        Command::GenData { out } => {
            let out = out.unwrap_or_else(|| cfg.paths.corpus.clone());
            cmd_gen_data(&cfg, &out)
        }
        Command::TrainCau {
            corpus: c,
            checkpoint,
            resume,
        } => cmd_train_cau(
            &cfg,
            &TrainCauArgs {
                corpus: corpus(c),
                out: root(checkpoint).join("cau"),
                resume,
            },
        ),
        Command::TrainInpaint {
            corpus: c,
            checkpoint,
            out,
            window,
            mode,
        } => cmd_train_inpaint(
            &cfg,
            &TrainInpaintArgs {
                corpus: corpus(c),
                out: out.unwrap_or_else(|| root(checkpoint).join("inpainter")),
                window,
                mode: mode.map(Into::into),
            },
        ),
        Command::TrainAe { corpus: c, checkpoint } => cmd_train_ae(
            &cfg,
            &TrainAeArgs {
                corpus: corpus(c),
                out: root(checkpoint).join("autoencoder"),
            },
        ),
        Command::Synthesize {
            music,
            catalog,
            checkpoint,
            out,
        } => {
            let args = SynthesizeArgs {
                music,
                catalog: catalog.unwrap_or_else(|| cfg.paths.corpus.join("catalog.toml")),
                checkpoints: root(checkpoint),
                out: out.unwrap_or_else(|| cfg.paths.outputs.clone()),
            };
            let s = cmd_synthesize(&cfg, &args)?;
            print!("{}", s.summary);
            Ok(())
        }
        Command::Evaluate {
            mode,
            candidate,
            reference,
            catalog,
            corpus: c,
            checkpoint,
            window,
            out,
        } => {
            let out = out.unwrap_or_else(|| cfg.paths.outputs.join(format!("report-{}.tsv", mode.name())));
            let args = EvaluateArgs {
                mode,
                candidate,
                reference,
                catalog: catalog.unwrap_or_else(|| cfg.paths.corpus.join("catalog.toml")),
                corpus: corpus(c),
                checkpoints: root(checkpoint),
                window,
                out,
            };
            let summary = cmd_evaluate(&cfg, &args)?;
            print!("{summary}");
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
        Err(_) => EXIT_INTERNAL,
    }
}
