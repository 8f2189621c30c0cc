//! SGD training loop and its per-epoch CSV log.

use std::fmt::Write as _;

use crate::data::{batches, Mnist};
use crate::error::{Error, Result};
use crate::isometry::{mean_jsv_with, JsvReport};
use crate::linalg::Tensor;
use crate::nn::{evaluate_with, softmax_xent, Network};
use crate::par::Execution;
use crate::schedule::LrSchedule;

pub const RUN_LOG_HEADER: &str = "epoch,lr,train_loss,test_acc,jsv_mean,jsv_std,jsv_max,jsv_min";

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Test images used as the JSV probe set (a linear net needs only one).
    pub jsv_samples: usize,
    pub exec: Execution,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 64,
            jsv_samples: 32,
            exec: Execution::default(),
        }
    }
}

/// Metrics after `epoch` completed epochs. Row 0 is taken before any
/// update and has no training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub test_acc: f64,
    pub jsv: JsvReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.last().map(|r| r.test_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUN_LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let loss = r.train_loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.lr, loss, r.test_acc, r.jsv.mean, r.jsv.std, r.jsv.max, r.jsv.min
            );
        }
        s
    }

    /// Parses [`RunLog::to_csv`] output. `K` and the sample count are not
    /// part of the log and come back as zero.
    pub fn parse_csv(text: &str) -> Result<RunLog> {
        let mut lines = text.lines();
        if lines.next() != Some(RUN_LOG_HEADER) {
            return Err(Error::Config("run log header mismatch".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let bad = || Error::Config(format!("malformed run log row `{line}`"));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 {
                    return Err(bad());
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
                Ok(RunRow {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    lr: num(f[1])?,
                    train_loss: if f[2].is_empty() { None } else { Some(num(f[2])?) },
                    test_acc: num(f[3])?,
                    jsv: JsvReport {
                        mean: num(f[4])?,
                        std: num(f[5])?,
                        max: num(f[6])?,
                        min: num(f[7])?,
                        k: 0,
                        samples: 0,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunLog { rows })
    }
}

/// The first `n` test images, used as the JSV probe set.
pub fn jsv_probe(data: &Mnist, n: usize) -> Result<Tensor> {
    let n = n.max(1).min(data.test.len());
    if n == 0 {
        return Err(Error::EmptySampleSet);
    }
    Ok(data.test.gather(&(0..n).collect::<Vec<_>>()))
}

fn snapshot(net: &Network, data: &Mnist, probe: &Tensor, exec: Execution) -> Result<(f64, JsvReport)> {
    Ok((evaluate_with(net, &data.test, exec)?, mean_jsv_with(net, probe, exec)?))
}

/// Trains `net` in place with plain SGD. Batch order is keyed by `seed`
/// and the epoch, so equal inputs give equal logs.
pub fn train(net: &mut Network, data: &Mnist, schedule: &LrSchedule, seed: u64, opts: &TrainOptions) -> Result<RunLog> {
    if data.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probe = jsv_probe(data, opts.jsv_samples)?;
    let (acc, jsv) = snapshot(net, data, &probe, opts.exec)?;
    let mut log = RunLog {
        rows: vec![RunRow {
            epoch: 0,
            lr: schedule.initial_lr(),
            train_loss: None,
            test_acc: acc,
            jsv,
        }],
    };
    for epoch in 0..schedule.total_epochs() {
        let lr = schedule.lr_at(epoch)?;
        let mut loss_sum = 0.0;
        let order = batches(data.train.len(), opts.batch_size, seed, epoch);
        for idx in &order {
            let x = data.train.gather(idx);
            let (logits, trace) = net.forward(&x)?;
            let (loss, grad) = softmax_xent(&logits, &data.train.gather_labels(idx))?;
            let (grads, _) = net.backward(&trace, &grad)?;
            net.sgd_step(&grads, lr)?;
            loss_sum += loss;
        }
        let (acc, jsv) = snapshot(net, data, &probe, opts.exec)?;
        let next_lr = if epoch + 1 < schedule.total_epochs() {
            schedule.lr_at(epoch + 1)?
        } else {
            lr
        };
        log.rows.push(RunRow {
            epoch: epoch + 1,
            lr: next_lr,
            train_loss: Some(loss_sum / order.len() as f64),
            test_acc: acc,
            jsv,
        });
    }
    Ok(log)
}
