//! Pipeline commands. Each reads checkpoints, writes its artifacts into
//! the configured output directory and returns the in-memory results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::Mnist;
use crate::error::{Error, Result};
use crate::isometry::{jsv_sweep, mean_jsv, orthp, JsvReport};
use crate::nn::{ArchId, Network};
use crate::par::Execution;
use crate::pruning::{apply_plan, make_plan, PrunePlan};
use crate::schedule::{
    parse_schedule, FinetuneSetting, LrSchedule, LONG_LARGE_LR, LONG_SMALL_LR, SHORT_LARGE_LR, SHORT_SMALL_LR,
};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::ExperimentConfig;
use super::train::{jsv_probe, train, RunLog, TrainOptions};

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PRUNED_FILE: &str = "pruned.ckpt";
pub const PLAN_FILE: &str = "plan.txt";
pub const PRUNE_JSV_FILE: &str = "prune_jsv.csv";
pub const ORTHP_FILE: &str = "orthp.ckpt";
pub const ORTHP_JSV_FILE: &str = "orthp_jsv.csv";
pub const JSV_FILE: &str = "jsv.csv";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";
pub const FINETUNE_LOG_FILE: &str = "finetune_log.csv";
pub const HYPOTHESES_FILE: &str = "hypotheses.csv";
pub const RUNS_FILE: &str = "hypotheses_runs.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
/// Per-run finetuning logs of the hypothesis grid.
pub const RUN_LOG_DIR: &str = "runs";

pub const STAGE_JSV_HEADER: &str = "stage,mean,std,max,min,K,samples";
pub const HYPOTHESES_HEADER: &str = "setting,lr0.01_mean,lr0.01_std,lr0.001_mean,lr0.001_std,acc_gain";
pub const RUNS_HEADER: &str = "setting,initial_lr,run,seed,test_acc";
pub const SWEEP_HEADER: &str = "arch,ratio,jsv_mean,jsv_std,jsv_max,jsv_min";

pub const SCRATCH_LABEL: &str = "Scratch";

fn write_artifact(cfg: &ExperimentConfig, name: &str, contents: &str) -> Result<PathBuf> {
    let path = cfg.out.join(name);
    fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
    fs::write(&path, contents)?;
    Ok(path)
}

fn save_artifact(cfg: &ExperimentConfig, name: &str, net: &Network) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(name);
    save_checkpoint(net, &path)?;
    Ok(path)
}

fn stage_csv(stages: &[(&str, &JsvReport)]) -> String {
    let mut s = format!("{STAGE_JSV_HEADER}\n");
    for (name, r) in stages {
        let _ = writeln!(s, "{name},{}", r.csv_row());
    }
    s
}

fn probe_report(cfg: &ExperimentConfig, data: &Mnist, net: &Network) -> Result<JsvReport> {
    mean_jsv(net, &jsv_probe(data, cfg.jsv_samples)?)
}

/// Orthogonal init with `cfg.seed`, then the pretraining schedule.
pub fn pretrain(cfg: &ExperimentConfig, data: &Mnist) -> Result<(Network, RunLog)> {
    let mut net = Network::build(cfg.arch);
    net.init_orthogonal(cfg.seed);
    let log = train(&mut net, data, &cfg.pretrain_schedule, cfg.seed, &cfg.train_options())?;
    Ok((net, log))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(Network, RunLog)> {
    let data = cfg.data.load(cfg.seed)?;
    let (net, log) = pretrain(cfg, &data)?;
    save_artifact(cfg, MODEL_FILE, &net)?;
    write_artifact(cfg, TRAIN_LOG_FILE, &log.to_csv())?;
    Ok((net, log))
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub network: Network,
    pub plan: PrunePlan,
    pub before: JsvReport,
    pub after: JsvReport,
}

pub fn cmd_prune(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<PruneOutcome> {
    let net = load_checkpoint(checkpoint)?;
    let data = cfg.data.load(cfg.seed)?;
    let plan = make_plan(&net, &cfg.prune_spec(&net)?)?;
    let pruned = apply_plan(&net, &plan)?;
    let before = probe_report(cfg, &data, &net)?;
    let after = probe_report(cfg, &data, &pruned)?;
    save_artifact(cfg, PRUNED_FILE, &pruned)?;
    write_artifact(cfg, PLAN_FILE, &plan.to_string())?;
    write_artifact(cfg, PRUNE_JSV_FILE, &stage_csv(&[("before", &before), ("after", &after)]))?;
    Ok(PruneOutcome {
        network: pruned,
        plan,
        before,
        after,
    })
}

pub fn load_plan(path: &Path) -> Result<PrunePlan> {
    fs::read_to_string(path)?.parse()
}

#[derive(Clone, Debug)]
pub struct OrthpOutcome {
    pub network: Network,
    pub before: JsvReport,
    pub after: JsvReport,
}

pub fn cmd_orthp(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<OrthpOutcome> {
    let net = load_checkpoint(checkpoint)?;
    let data = cfg.data.load(cfg.seed)?;
    let out = orthp(&net)?;
    let before = probe_report(cfg, &data, &net)?;
    let after = probe_report(cfg, &data, &out)?;
    save_artifact(cfg, ORTHP_FILE, &out)?;
    write_artifact(cfg, ORTHP_JSV_FILE, &stage_csv(&[("before", &before), ("after", &after)]))?;
    Ok(OrthpOutcome {
        network: out,
        before,
        after,
    })
}

pub fn cmd_jsv(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<JsvReport> {
    let net = load_checkpoint(checkpoint)?;
    let data = cfg.data.load(cfg.seed)?;
    let report = probe_report(cfg, &data, &net)?;
    write_artifact(cfg, JSV_FILE, &format!("{}\n{}\n", JsvReport::CSV_HEADER, report.csv_row()))?;
    Ok(report)
}

/// Finetunes the checkpoint with `cfg.finetune_schedule`, applying OrthP
/// first when `cfg.orthp` is set.
pub fn cmd_finetune(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(Network, RunLog)> {
    let mut net = load_checkpoint(checkpoint)?;
    if cfg.orthp {
        net = orthp(&net)?;
    }
    let data = cfg.data.load(cfg.seed)?;
    let log = train(&mut net, &data, &cfg.finetune_schedule, cfg.seed, &cfg.train_options())?;
    save_artifact(cfg, FINETUNED_FILE, &net)?;
    write_artifact(cfg, FINETUNE_LOG_FILE, &log.to_csv())?;
    Ok((net, log))
}

/// The finetuning settings of the hypothesis grid: with and without OrthP,
/// each under the large- and small-LR schedule, 90 epochs and optionally
/// 900.
pub fn hypothesis_settings(long: bool) -> Vec<FinetuneSetting> {
    let mut texts = vec![SHORT_LARGE_LR, SHORT_SMALL_LR];
    if long {
        texts.extend([LONG_LARGE_LR, LONG_SMALL_LR]);
    }
    [false, true]
        .into_iter()
        .flat_map(|orthp| {
            texts.iter().map(move |t| FinetuneSetting {
                orthp,
                schedule: parse_schedule(t).expect("valid"),
            })
        })
        .collect()
}

/// One finetuning or scratch run of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// Table row label, e.g. `OrthP, 90 epochs` or `Scratch`.
    pub label: String,
    pub initial_lr: f64,
    pub run: usize,
    pub seed: u64,
    /// Final test accuracy in percent.
    pub accuracy: f64,
    pub log: RunLog,
}

impl RunResult {
    /// File name for this run's log, e.g. `orthp90ep_lr0.01_run2.csv`.
    pub fn log_name(&self) -> String {
        let stem: String = self
            .label
            .to_lowercase()
            .replace(" epochs", "ep")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        format!("{stem}_lr{}_run{}.csv", self.initial_lr, self.run)
    }
}

fn row_label(s: &FinetuneSetting) -> String {
    let epochs = format!("{} epochs", s.schedule.total_epochs());
    if s.orthp {
        format!("OrthP, {epochs}")
    } else {
        epochs
    }
}

enum Job<'a> {
    Finetune(&'a FinetuneSetting),
    Scratch,
}

/// A finetuning grid over one pruned network.
#[derive(Clone, Debug)]
pub struct Grid {
    pub settings: Vec<FinetuneSetting>,
    /// Schedule of the scratch baseline; `None` skips it.
    pub scratch: Option<LrSchedule>,
    pub repeat: usize,
    /// Run `i` of every cell uses seed `base_seed + i`.
    pub base_seed: u64,
}

/// Runs every cell of `grid` from the same pruned network. Cells fan out
/// under `exec`; each training loop stays sequential.
pub fn run_grid(pruned: &Network, data: &Mnist, grid: &Grid, opts: &TrainOptions, exec: Execution) -> Result<Vec<RunResult>> {
    let mut jobs: Vec<(Job, usize)> = Vec::new();
    for s in &grid.settings {
        jobs.extend((0..grid.repeat).map(|r| (Job::Finetune(s), r)));
    }
    if grid.scratch.is_some() {
        jobs.extend((0..grid.repeat).map(|r| (Job::Scratch, r)));
    }
    let inner = TrainOptions {
        exec: Execution::Sequential,
        ..*opts
    };
    exec.map(&jobs, |(job, run)| {
        let seed = grid.base_seed + *run as u64;
        let (label, schedule, mut net) = match job {
            Job::Finetune(s) => {
                let net = if s.orthp { orthp(pruned)? } else { pruned.clone() };
                (row_label(s), &s.schedule, net)
            }
            Job::Scratch => {
                let mut net = pruned.clone();
                net.init_orthogonal(seed);
                (SCRATCH_LABEL.to_string(), grid.scratch.as_ref().expect("scratch job"), net)
            }
        };
        let log = train(&mut net, data, schedule, seed, &inner)?;
        Ok(RunResult {
            label,
            initial_lr: schedule.initial_lr(),
            run: *run,
            seed,
            accuracy: 100.0 * log.final_accuracy().expect("row 0 always present"),
            log,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stats { mean, std })
    }
}

/// One row of the hypotheses table. The gain is the large-LR mean minus
/// the small-LR mean and is absent when either side is.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisRow {
    pub label: String,
    pub large_lr: Option<Stats>,
    pub small_lr: Option<Stats>,
}

impl HypothesisRow {
    pub fn gain(&self) -> Option<f64> {
        Some(self.large_lr?.mean - self.small_lr?.mean)
    }
}

const LARGE_LR: f64 = 0.01;
const SMALL_LR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesesReport {
    pub rows: Vec<HypothesisRow>,
    pub runs: Vec<RunResult>,
}

impl HypothesesReport {
    /// Groups runs by label (first-seen order) and by initial LR.
    pub fn from_runs(runs: Vec<RunResult>) -> HypothesesReport {
        let mut labels: Vec<String> = Vec::new();
        for r in &runs {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        let pick = |label: &str, lr: f64| -> Vec<f64> {
            runs.iter()
                .filter(|r| r.label == label && r.initial_lr == lr)
                .map(|r| r.accuracy)
                .collect()
        };
        let rows = labels
            .iter()
            .map(|l| HypothesisRow {
                label: l.clone(),
                large_lr: Stats::of(&pick(l, LARGE_LR)),
                small_lr: Stats::of(&pick(l, SMALL_LR)),
            })
            .collect();
        HypothesesReport { rows, runs }
    }

    pub fn row(&self, label: &str) -> Option<&HypothesisRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = format!("{HYPOTHESES_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.label,
                opt(r.large_lr.map(|x| x.mean)),
                opt(r.large_lr.map(|x| x.std)),
                opt(r.small_lr.map(|x| x.mean)),
                opt(r.small_lr.map(|x| x.std)),
                opt(r.gain())
            );
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = format!("{RUNS_HEADER}\n");
        for r in &self.runs {
            let _ = writeln!(s, "{},{},{},{},{}", r.label, r.initial_lr, r.run, r.seed, r.accuracy);
        }
        s
    }
}

/// Pretrains (or loads `checkpoint`), prunes per `cfg`, then runs the
/// finetuning grid and the scratch baseline.
pub fn cmd_hypotheses(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<HypothesesReport> {
    let data = cfg.data.load(cfg.seed)?;
    let net = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => pretrain(cfg, &data)?.0,
    };
    let pruned = apply_plan(&net, &make_plan(&net, &cfg.prune_spec(&net)?)?)?;
    let grid = Grid {
        settings: hypothesis_settings(cfg.long),
        scratch: Some(cfg.pretrain_schedule.clone()),
        repeat: cfg.repeat,
        base_seed: cfg.seed,
    };
    let runs = run_grid(&pruned, &data, &grid, &cfg.train_options(), Execution::default())?;
    let report = HypothesesReport::from_runs(runs);
    write_artifact(cfg, HYPOTHESES_FILE, &report.to_csv())?;
    write_artifact(cfg, RUNS_FILE, &report.runs_csv())?;
    for r in &report.runs {
        write_artifact(cfg, &format!("{RUN_LOG_DIR}/{}", r.log_name()), &r.log.to_csv())?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub arch: ArchId,
    pub ratio: f64,
    pub report: JsvReport,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let j = &r.report;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.arch, r.ratio, j.mean, j.std, j.max, j.min);
    }
    s
}

/// Mean JSV of each checkpoint pruned at each of `cfg.sweep_ratios()`.
pub fn cmd_sweep(cfg: &ExperimentConfig, checkpoints: &[PathBuf]) -> Result<Vec<SweepRow>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("sweep needs at least one checkpoint".into()));
    }
    let data = cfg.data.load(cfg.seed)?;
    let probe = jsv_probe(&data, cfg.jsv_samples)?;
    let ratios = cfg.sweep_ratios();
    let mut rows = Vec::new();
    for path in checkpoints {
        let net = load_checkpoint(path)?;
        let arch = net.arch().expect("checkpoints carry an arch");
        let points = jsv_sweep(&net, &cfg.targets(&net)?, &ratios, &probe)?;
        rows.extend(points.into_iter().map(|p| SweepRow {
            arch,
            ratio: p.ratio,
            report: p.report,
        }));
    }
    write_artifact(cfg, SWEEP_FILE, &sweep_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(label: &str, lr: f64, acc: f64) -> RunResult {
        RunResult {
            label: label.into(),
            initial_lr: lr,
            run: 0,
            seed: 0,
            accuracy: acc,
            log: RunLog::default(),
        }
    }

    #[test]
    fn settings_grid() {
        let short = hypothesis_settings(false);
        assert_eq!(short.len(), 4);
        let labels: Vec<String> = short.iter().map(row_label).collect();
        assert_eq!(labels, ["90 epochs", "90 epochs", "OrthP, 90 epochs", "OrthP, 90 epochs"]);
        let long = hypothesis_settings(true);
        assert_eq!(long.len(), 8);
        assert_eq!(row_label(&long[7]), "OrthP, 900 epochs");
        assert_eq!(long[7].to_string(), "OrthP, 900 epochs, 0:0.001,450:0.001");
    }

    #[test]
    fn report_gain_matches_means() {
        let runs = vec![
            result("90 epochs", 0.01, 91.0),
            result("90 epochs", 0.01, 92.0),
            result("90 epochs", 0.001, 90.0),
            result("90 epochs", 0.001, 90.5),
            result(SCRATCH_LABEL, 0.01, 89.0),
        ];
        let rep = HypothesesReport::from_runs(runs);
        let row = rep.row("90 epochs").unwrap();
        assert_eq!(row.large_lr.unwrap().mean, 91.5);
        assert!((row.large_lr.unwrap().std - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(row.gain(), Some(91.5 - 90.25));
        assert_eq!(rep.row(SCRATCH_LABEL).unwrap().gain(), None);
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HYPOTHESES_HEADER);
        assert_eq!(lines[2], "Scratch,89,0,,,");
        for line in &lines[1..] {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 6);
            if !f[5].is_empty() {
                let gain: f64 = f[5].parse().unwrap();
                let diff = f[1].parse::<f64>().unwrap() - f[3].parse::<f64>().unwrap();
                assert_eq!(gain, diff);
            }
        }
        assert_eq!(rep.runs_csv().lines().count(), 6);
        assert_eq!(rep.runs[0].log_name(), "90ep_lr0.01_run0.csv");
        let orth = result("OrthP, 900 epochs", 0.001, 0.0);
        assert_eq!(orth.log_name(), "orthp900ep_lr0.001_run0.csv");
    }

    #[test]
    fn sweep_rows_to_csv() {
        let report = JsvReport::from_values(vec![1.0, 2.0], 2, 1).unwrap();
        let rows = vec![SweepRow {
            arch: ArchId::Mlp7Linear,
            ratio: 0.5,
            report,
        }];
        assert_eq!(sweep_csv(&rows), format!("{SWEEP_HEADER}\nMLP7_LINEAR,0.5,1.5,0.5,2,1\n"));
    }
}
