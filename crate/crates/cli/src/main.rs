use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use isoprune::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "isoprune", version, about = "Pruning and dynamical isometry experiments on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Orthogonal init, then train with the pretraining schedule.
    Train(Common),
    /// L1-prune a checkpoint and report JSV before and after.
    Prune(WithCheckpoint),
    /// Re-orthogonalize every weight of a checkpoint.
    Orthp(WithCheckpoint),
    /// Report Jacobian singular value statistics of a checkpoint.
    Jsv(WithCheckpoint),
    /// Finetune a (pruned) checkpoint.
    Finetune(WithCheckpoint),
    /// Run the finetuning grid and the scratch baseline.
    Hypotheses(MaybeCheckpoint),
    /// Mean JSV of one or more checkpoints across pruning ratios.
    Sweep(WithCheckpoints),
}

#[derive(Args)]
struct Common {
    /// key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Schedule such as "90 epochs, 0:0.01,30:0.001,60:0.0001". Sets the
    /// finetuning schedule for `finetune`, the pretraining schedule otherwise.
    #[arg(long)]
    lr_schedule: Option<String>,
    /// Pruning ratio(s), comma separated.
    #[arg(long)]
    ratio: Option<String>,
    /// Parameterized-layer ordinals to prune, comma separated.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long, conflicts_with = "synthetic")]
    data_dir: Option<PathBuf>,
    /// Use N generated training images instead of MNIST.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include the 900-epoch settings.
    #[arg(long)]
    long: bool,
    /// Apply OrthP before finetuning.
    #[arg(long)]
    orthp: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    jsv_samples: Option<usize>,
}

#[derive(Args)]
struct WithCheckpoint {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MaybeCheckpoint {
    /// Pretrained checkpoint; pretrains from scratch when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct WithCheckpoints {
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

impl Common {
    fn config(&self, schedule_key: &str) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let mut set = |k: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
            Ok(())
        };
        set("arch", self.arch.clone())?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set(schedule_key, self.lr_schedule.clone())?;
        set("ratios", self.ratio.clone())?;
        set("layers", self.layers.clone())?;
        set("repeat", self.repeat.map(|v| v.to_string()))?;
        set("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()))?;
        set("synthetic", self.synthetic.map(|v| v.to_string()))?;
        set("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        set("batch_size", self.batch_size.map(|v| v.to_string()))?;
        set("jsv_samples", self.jsv_samples.map(|v| v.to_string()))?;
        if self.long {
            cfg.long = true;
        }
        if self.orthp {
            cfg.orthp = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.config("pretrain_schedule")?;
            let (_, log) = harness::cmd_train(&cfg)?;
            let last = log.last().expect("log has row 0");
            println!("test accuracy {:.4}  {}", last.test_acc, last.jsv);
            println!("wrote {}", cfg.out.display());
        }
        Command::Prune(a) => {
            let cfg = a.common.config("pretrain_schedule")?;
            let o = harness::cmd_prune(&cfg, &a.checkpoint)?;
            println!("before: {}\nafter:  {}", o.before, o.after);
        }
        Command::Orthp(a) => {
            let cfg = a.common.config("pretrain_schedule")?;
            let o = harness::cmd_orthp(&cfg, &a.checkpoint)?;
            println!("before: {}\nafter:  {}", o.before, o.after);
        }
        Command::Jsv(a) => {
            let cfg = a.common.config("pretrain_schedule")?;
            println!("{}", harness::cmd_jsv(&cfg, &a.checkpoint)?);
        }
        Command::Finetune(a) => {
            let cfg = a.common.config("finetune_schedule")?;
            let (_, log) = harness::cmd_finetune(&cfg, &a.checkpoint)?;
            let last = log.last().expect("log has row 0");
            println!("test accuracy {:.4}  {}", last.test_acc, last.jsv);
        }
        Command::Hypotheses(a) => {
            let cfg = a.common.config("pretrain_schedule")?;
            let report = harness::cmd_hypotheses(&cfg, a.checkpoint.as_deref())?;
            print!("{}", report.to_csv());
        }
        Command::Sweep(a) => {
            let cfg = a.common.config("pretrain_schedule")?;
            let rows = harness::cmd_sweep(&cfg, &a.checkpoints)?;
            print!("{}", harness::sweep_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
