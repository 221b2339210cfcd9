mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use flat_core::attack::AttackKind;
use flat_core::training::MaskMode;

use crate::config::{RunConfig, OUTPUT_DIR_ENV};

/// Feature-level adversarial training with variational word masks.
///
/// Every subcommand reads an optional TOML config (`--config`), applies
/// command-line overrides, writes the resolved config to
/// `<out>/<subcommand>.resolved.toml` and then its artifacts into the same
/// directory. The output directory is taken from `--out`, then the
/// FLAT_OUTPUT_DIR environment variable, then `out_dir` in the config.
///
/// Data files are TSV lines `label<TAB>text` (labels 0..C-1, text
/// whitespace-tokenized and lowercased). The synonym file holds one
/// `word<TAB>synonym` pair per line. Embedding files hold `word v1 .. vd`.
/// Checkpoints are versioned JSON and record the vocabulary hash; loading one
/// against a different training file fails.
#[derive(Debug, Parser)]
#[command(name = "flat", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for attacks and attributions (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Data directory with train.tsv, dev.tsv, test.tsv and synonyms.tsv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct TrainArgs {
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs per round.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs of base training.
    #[arg(long)]
    base_epochs: Option<usize>,
    /// Attack/train rounds (1..=5).
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training examples attacked per round (default: all).
    #[arg(long)]
    attack_sample: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct MaskArgs {
    /// Entropy weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Importance-regularizer weight.
    #[arg(long)]
    gamma: Option<f64>,
    /// Gumbel-softmax temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Fix every mask at 1 instead of sampling.
    #[arg(long)]
    masks_ones: bool,
}

#[derive(Debug, Args, Default)]
struct AttackArgs {
    /// deletion_importance (alias textfooler) or saliency_weighted (alias pwws).
    #[arg(long)]
    attack: Option<AttackKind>,
    /// Fraction of words that may be replaced.
    #[arg(long)]
    max_sub_ratio: Option<f64>,
    #[arg(long)]
    query_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic benchmark (train/dev/test/synonyms/lexicon) to the output directory.
    GenData {
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        /// Probability that a planted keyword is replaced by one of its synonyms.
        #[arg(long)]
        p_syn: Option<f64>,
    },
    /// Train the unmasked base classifier; writes base.ckpt.json and base.metrics.jsonl.
    TrainBase {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Attack a split with a checkpoint; writes attack.<split>.jsonl and attack.<split>.summary.json.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// FLAT training; writes flat.round<r>.ckpt.json, flat.adv.round<r>.jsonl and flat.metrics.jsonl.
    TrainFlat {
        /// Base checkpoint; trained first when absent.
        #[arg(long)]
        base: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Traditional adversarial training with the same schedule; files prefixed adv.
    TrainAdv {
        #[arg(long)]
        base: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Group-mask baseline over k-means word clusters; writes groupmask.ckpt.json.
    TrainGroupmask {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        clusters: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Integrated Gradients for every example of a split; writes attributions.<split>.jsonl.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Riemann steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Attack, attribute and score; writes report.json, curve.tsv and the eval dumps.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        attack: AttackArgs,
        /// Adversarial dumps from training; enables the correlation analysis.
        #[arg(long, num_args = 1..)]
        adv_dumps: Vec<PathBuf>,
    },
    /// The 2x2 grid over {0, beta} x {0, gamma}; writes ablation.tsv and ablation.json.
    Ablate {
        #[arg(long)]
        base: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        masks: MaskArgs,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Global word importance of a FLAT checkpoint; writes importance.tsv.
    ExportImportance {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainBase { .. } => "train-base",
            Command::Attack { .. } => "attack",
            Command::TrainFlat { .. } => "train-flat",
            Command::TrainAdv { .. } => "train-adv",
            Command::TrainGroupmask { .. } => "train-groupmask",
            Command::Interpret { .. } => "interpret",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::ExportImportance { .. } => "export-importance",
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) {
    set(&mut cfg.train.lr, a.lr);
    set(&mut cfg.train.epochs, a.epochs);
    set(&mut cfg.train.base_epochs, a.base_epochs);
    set(&mut cfg.train.rounds, a.rounds);
    set(&mut cfg.train.batch_size, a.batch_size);
    if a.attack_sample.is_some() {
        cfg.train.attack_sample = a.attack_sample;
    }
}

fn apply_masks(cfg: &mut RunConfig, a: &MaskArgs) {
    set(&mut cfg.train.beta, a.beta);
    set(&mut cfg.train.gamma, a.gamma);
    set(&mut cfg.train.tau, a.tau);
    if a.masks_ones {
        cfg.train.masks = MaskMode::Ones;
    }
}

fn apply_attack(cfg: &mut RunConfig, a: &AttackArgs) {
    set(&mut cfg.attack.kind, a.attack);
    set(&mut cfg.attack.max_sub_ratio, a.max_sub_ratio);
    set(&mut cfg.attack.query_budget, a.query_budget);
}

/// File values, then the output-dir environment override, then flags.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        cfg.out_dir = dir.into();
    }
    set(&mut cfg.out_dir, cli.out.clone());
    set(&mut cfg.seed, cli.seed);
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cli.data.is_some() {
        cfg.data.dir = cli.data.clone();
    }
    match &cli.command {
        Command::GenData { train, dev, test, p_syn } => {
            set(&mut cfg.synthetic.train, *train);
            set(&mut cfg.synthetic.dev, *dev);
            set(&mut cfg.synthetic.test, *test);
            set(&mut cfg.synthetic.p_syn, *p_syn);
        }
        Command::TrainBase { train } => apply_train(&mut cfg, train),
        Command::Attack { attack, .. } => apply_attack(&mut cfg, attack),
        Command::TrainFlat { train, masks, attack, .. } | Command::Ablate { train, masks, attack, .. } => {
            apply_train(&mut cfg, train);
            apply_masks(&mut cfg, masks);
            apply_attack(&mut cfg, attack);
        }
        Command::TrainAdv { train, attack, .. } => {
            apply_train(&mut cfg, train);
            apply_attack(&mut cfg, attack);
        }
        Command::TrainGroupmask { clusters, train, .. } => {
            set(&mut cfg.clusters, *clusters);
            apply_train(&mut cfg, train);
        }
        Command::Interpret { steps, .. } => set(&mut cfg.ig.steps, *steps),
        Command::Evaluate { steps, attack, .. } => {
            set(&mut cfg.ig.steps, *steps);
            apply_attack(&mut cfg, attack);
        }
        Command::ExportImportance { .. } => {}
    }
    cfg.finish()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.write_resolved(cli.command.name())?;
    use commands as c;
    match cli.command {
        Command::GenData { .. } => c::gen_data(&cfg),
        Command::TrainBase { .. } => c::train_base(&cfg),
        Command::Attack { checkpoint, split, .. } => c::attack(&cfg, &checkpoint, split),
        Command::TrainFlat { base, .. } => c::train_rounds(&cfg, base.as_deref(), c::Regime::Flat),
        Command::TrainAdv { base, .. } => c::train_rounds(&cfg, base.as_deref(), c::Regime::Adv),
        Command::TrainGroupmask { base, .. } => c::train_groupmask(&cfg, &base),
        Command::Interpret { checkpoint, split, .. } => c::interpret(&cfg, &checkpoint, split),
        Command::Evaluate { checkpoint, split, adv_dumps, .. } => c::evaluate(&cfg, &checkpoint, split, &adv_dumps),
        Command::Ablate { base, .. } => c::ablate(&cfg, base.as_deref()),
        Command::ExportImportance { checkpoint } => c::export_importance(&cfg, &checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("flat").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&["--seed", "9", "--out", "o", "train-flat", "--beta", "0.3", "--rounds", "2", "--attack", "pwws"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.beta, 0.3);
        assert_eq!(cfg.train.rounds, 2);
        assert_eq!(cfg.attack.kind, AttackKind::SaliencyWeighted);
        assert_eq!(cfg.out_dir, PathBuf::from("o"));
    }

    #[test]
    fn invalid_values_rejected() {
        let cli = parse(&["train-flat", "--rounds", "9"]);
        assert!(resolve(&cli).is_err());
        assert!(Cli::try_parse_from(["flat", "train-base", "--bogus"]).is_err());
    }
}
