mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clutter_core::eval::Variant;
use clutter_core::scene::ChangeKind;

use crate::config::{RunConfig, Suite};

#[derive(Parser, Debug)]
#[command(name = "clutter", version, about = "Physics-verified tabletop scene generation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a placement policy with PPO.
    Train(TrainArgs),
    /// Generate scene documents with a policy.
    Generate(GenerateArgs),
    /// Evaluate a policy or baseline.
    Eval(EvalArgs),
    /// Export a supervised placement dataset from generated scenes.
    Export(ExportArgs),
    /// Train pose regressors on an exported dataset.
    Distill(DistillArgs),
    /// Re-simulate scene documents and check every placement.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Region change applied at every training reset.
    #[arg(long, value_enum)]
    change: Option<ChangeArg>,
}

#[derive(Args, Debug, Clone)]
struct PolicyArgs {
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    /// Number of scenes.
    #[arg(short = 'n', long = "episodes", default_value_t = 10)]
    episodes: usize,
    #[arg(long)]
    objects: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_enum)]
    suite: Option<SuiteArg>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    /// Evaluate under this region change (standard suite).
    #[arg(long, value_enum)]
    change: Option<ChangeArg>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    /// Generation episodes feeding the dataset.
    #[arg(long)]
    episodes: Option<usize>,
    /// Samples to keep.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Dataset written by `export`.
    #[arg(long)]
    dataset: PathBuf,
    /// Training-set sizes to compare (comma separated); 0 means all.
    #[arg(long, value_delimiter = ',')]
    samples: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Scene documents, or directories of them.
    #[arg(required = true)]
    scenes: Vec<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    Full,
    Ol,
    Sm,
    Normal,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Ol => Variant::OpenLoop,
            VariantArg::Sm => Variant::ShortMemory,
            VariantArg::Normal => Variant::TruncNormal,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ChangeArg {
    Translation,
    Rotation,
    Shrink,
    Expand,
    Combined,
}

impl From<ChangeArg> for ChangeKind {
    fn from(c: ChangeArg) -> Self {
        match c {
            ChangeArg::Translation => ChangeKind::Translation,
            ChangeArg::Rotation => ChangeKind::Rotation,
            ChangeArg::Shrink => ChangeKind::Shrinkage,
            ChangeArg::Expand => ChangeKind::Expansion,
            ChangeArg::Combined => ChangeKind::Combined,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Baseline {
    /// Random rejection sampling.
    Rrs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SuiteArg {
    Standard,
    Generalization,
    Diversity,
    Attempts,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Standard => Suite::Standard,
            SuiteArg::Generalization => Suite::Generalization,
            SuiteArg::Diversity => Suite::Diversity,
            SuiteArg::Attempts => Suite::Attempts,
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let objects = match &cli.command {
        Command::Train(a) => a.objects,
        Command::Generate(a) => a.objects,
        Command::Eval(a) => a.objects,
        Command::Export(a) => a.objects,
        Command::Distill(_) | Command::Replay(_) => None,
    };
    if let Some(n) = objects {
        cfg.scene.objects = n;
    }
    match &cli.command {
        Command::Train(a) => {
            if let Some(steps) = a.steps {
                cfg.train.total_steps = steps;
            }
            if let Some(v) = a.variant {
                cfg.variant = v.into();
            }
            if let Some(c) = a.change {
                cfg.train.change = Some(clutter_core::scene::RegionChange::new(c.into()));
            }
        }
        Command::Eval(a) => {
            if let Some(s) = a.suite {
                cfg.eval.suite = s.into();
            }
            if let Some(n) = a.episodes {
                cfg.eval.episodes = n;
            }
        }
        Command::Export(a) => {
            if let Some(n) = a.episodes {
                cfg.distill.scenes = n;
            }
            if let Some(n) = a.samples {
                cfg.distill.samples = n;
            }
        }
        Command::Distill(a) => {
            if let Some(sizes) = &a.samples {
                cfg.distill.sizes = sizes.clone();
            }
        }
        Command::Generate(_) | Command::Replay(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train(_) => commands::train(&cfg),
        Command::Generate(a) => commands::generate(&cfg, &a.policy, a.episodes),
        Command::Eval(a) => commands::eval(&cfg, &a.policy, a.change.map(Into::into)),
        Command::Export(a) => commands::export(&cfg, &a.policy),
        Command::Distill(a) => commands::distill(&cfg, &a.dataset),
        Command::Replay(a) => commands::replay(&cfg, &a.scenes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<clutter_core::Error>().map(|e| e.kind()))
                .or_else(|| err.downcast_ref::<commands::ReplayFailed>().map(|_| "replay_failed"))
                .unwrap_or("error");
            let report = serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
