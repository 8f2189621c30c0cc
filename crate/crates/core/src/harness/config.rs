//! Experiment configuration: a flat `key = value` text file whose keys
//! match the fields of [`ExperimentConfig`]. Blank lines and `#` comments
//! are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_mnist, synthetic, Mnist};
use crate::error::{Error, Result};
use crate::nn::{ArchId, Network};
use crate::pruning::{default_targets, PruneSpec};
use crate::schedule::{parse_schedule, LrSchedule, PRETRAIN_SCHEDULE, SHORT_LARGE_LR};

use super::train::TrainOptions;

pub const DEFAULT_PRUNE_RATIO: f64 = 0.8;
pub const DEFAULT_SWEEP_RATIOS: [f64; 5] = [0.0, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mnist(PathBuf),
    /// Generated class blobs with this many training images.
    Synthetic(usize),
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Mnist> {
        match self {
            DataSource::Mnist(dir) => load_mnist(dir),
            DataSource::Synthetic(n) => synthetic(*n, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arch: ArchId,
    pub seed: u64,
    pub pretrain_schedule: LrSchedule,
    pub finetune_schedule: LrSchedule,
    /// One ratio for every target layer, or one per entry of `layers`.
    /// Sweeps use each ratio in turn.
    pub ratios: Option<Vec<f64>>,
    /// Parameterized-layer ordinals to prune.
    pub layers: Option<Vec<usize>>,
    pub orthp: bool,
    pub repeat: usize,
    pub data: DataSource,
    pub out: PathBuf,
    pub long: bool,
    pub batch_size: usize,
    pub jsv_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: ArchId::Mlp7Linear,
            seed: 0,
            pretrain_schedule: parse_schedule(PRETRAIN_SCHEDULE).expect("valid"),
            finetune_schedule: parse_schedule(SHORT_LARGE_LR).expect("valid"),
            ratios: None,
            layers: None,
            orthp: false,
            repeat: 1,
            data: DataSource::Mnist(PathBuf::from("data/mnist")),
            out: PathBuf::from("out"),
            long: false,
            batch_size: 64,
            jsv_samples: 32,
        }
    }
}

fn config_err(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key} = {value}: {why}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| config_err(key, value, "malformed list")))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_err(key, value, "expected true or false")),
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 14] = [
        "arch",
        "seed",
        "pretrain_schedule",
        "finetune_schedule",
        "ratios",
        "layers",
        "orthp",
        "repeat",
        "data_dir",
        "synthetic",
        "out",
        "long",
        "batch_size",
        "jsv_samples",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| -> Result<usize> { v.parse().map_err(|_| config_err(key, v, "expected an integer")) };
        match key {
            "arch" => self.arch = value.parse()?,
            "seed" => self.seed = value.parse().map_err(|_| config_err(key, value, "expected an integer"))?,
            "pretrain_schedule" => self.pretrain_schedule = parse_schedule(value)?,
            "finetune_schedule" => self.finetune_schedule = parse_schedule(value)?,
            "ratios" => self.ratios = Some(parse_list(key, value)?),
            "layers" => self.layers = Some(parse_list(key, value)?),
            "orthp" => self.orthp = parse_bool(key, value)?,
            "repeat" => self.repeat = num(value)?,
            "data_dir" => self.data = DataSource::Mnist(PathBuf::from(value)),
            "synthetic" => self.data = DataSource::Synthetic(num(value)?),
            "out" => self.out = PathBuf::from(value),
            "long" => self.long = parse_bool(key, value)?,
            "batch_size" => self.batch_size = num(value)?,
            "jsv_samples" => self.jsv_samples = num(value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if matches!(self.data, DataSource::Synthetic(0)) {
            return Err(Error::Config("synthetic dataset needs at least one image".into()));
        }
        for &r in self.ratios.iter().flatten() {
            PruneSpec::uniform(&[0], r)?;
        }
        if let (Some(r), Some(l)) = (&self.ratios, &self.layers) {
            if r.len() != 1 && r.len() != l.len() {
                return Err(Error::Config(format!(
                    "{} ratios for {} layers; give one ratio or one per layer",
                    r.len(),
                    l.len()
                )));
            }
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            jsv_samples: self.jsv_samples,
            ..TrainOptions::default()
        }
    }

    pub fn targets(&self, net: &Network) -> Result<Vec<usize>> {
        match (&self.layers, net.arch()) {
            (Some(l), _) => Ok(l.clone()),
            (None, Some(arch)) => Ok(default_targets(arch)),
            (None, None) => Err(Error::Config("layers must be given for a custom network".into())),
        }
    }

    pub fn prune_spec(&self, net: &Network) -> Result<PruneSpec> {
        let targets = self.targets(net)?;
        let ratios = self.ratios.clone().unwrap_or_else(|| vec![DEFAULT_PRUNE_RATIO]);
        match ratios.len() {
            1 => PruneSpec::uniform(&targets, ratios[0]),
            n if n == targets.len() => PruneSpec::new(targets.into_iter().zip(ratios).collect()),
            n => Err(Error::Config(format!("{n} ratios for {} target layers", targets.len()))),
        }
    }

    pub fn sweep_ratios(&self) -> Vec<f64> {
        self.ratios.clone().unwrap_or_else(|| DEFAULT_SWEEP_RATIOS.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "\
# comment
arch = LENET5_RELU
seed = 11
pretrain_schedule = 10 epochs, 0:0.1,5:0.01
finetune_schedule = 90 epochs, 0:0.001,45:0.001
ratios = 0.5, 0.3, 0.2
layers = 0,1,2
orthp = true
repeat = 3
synthetic = 120
out = /tmp/x
long = false
batch_size = 16
jsv_samples = 4
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.arch, ArchId::Lenet5Relu);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.pretrain_schedule.total_epochs(), 10);
        assert_eq!(cfg.ratios, Some(vec![0.5, 0.3, 0.2]));
        assert!(cfg.orthp);
        assert_eq!(cfg.repeat, 3);
        assert_eq!(cfg.data, DataSource::Synthetic(120));
        assert_eq!(cfg.batch_size, 16);
        let spec = cfg.prune_spec(&Network::build(cfg.arch)).unwrap();
        assert_eq!(spec.ratios(), &[(0, 0.5), (1, 0.3), (2, 0.2)]);
    }

    #[test]
    fn rejects_bad_values() {
        for (text, needle) in [
            ("repeat = 0", "repeat"),
            ("nonsense = 1", "unknown key"),
            ("arch = VGG", "VGG"),
            ("ratios = 1.5", "1.5"),
            ("ratios = 0.1,0.2\nlayers = 0,1,2", "ratios for 3 layers"),
            ("just text", "key = value"),
            ("finetune_schedule = 90 epochs, 30:0.01", "first breakpoint"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        let spec = cfg.prune_spec(&Network::build(ArchId::Mlp7Linear)).unwrap();
        assert_eq!(spec.ratios().len(), 6);
        assert!(spec.ratios().iter().all(|&(_, r)| r == DEFAULT_PRUNE_RATIO));
        assert_eq!(cfg.sweep_ratios(), DEFAULT_SWEEP_RATIOS.to_vec());
    }
}
