//! Epoch-granular step learning-rate schedules written as
//! `"<N> epochs, <e0>:<lr0>,<e1>:<lr1>,..."`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    total_epochs: usize,
    breakpoints: Vec<(usize, f64)>,
}

fn schedule_err(text: &str, reason: impl Into<String>) -> Error {
    Error::Schedule {
        text: text.to_string(),
        reason: reason.into(),
    }
}

impl LrSchedule {
    pub fn new(total_epochs: usize, breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        let s = LrSchedule {
            total_epochs,
            breakpoints,
        };
        s.validate().map_err(|reason| schedule_err(&s.to_string(), reason))?;
        Ok(s)
    }

    /// A single learning rate held for every epoch.
    pub fn constant(total_epochs: usize, lr: f64) -> Result<Self> {
        LrSchedule::new(total_epochs, vec![(0, lr)])
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.total_epochs == 0 {
            return Err("total epochs must be positive".into());
        }
        let Some(&(first, _)) = self.breakpoints.first() else {
            return Err("at least one breakpoint is required".into());
        };
        if first != 0 {
            return Err("first breakpoint must be epoch 0".into());
        }
        for w in self.breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(format!("breakpoint epochs must ascend: {} then {}", w[0].0, w[1].0));
            }
        }
        for &(epoch, lr) in &self.breakpoints {
            if epoch >= self.total_epochs {
                return Err(format!("breakpoint epoch {epoch} >= total epochs {}", self.total_epochs));
            }
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(format!("learning rate {lr} must be positive"));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn breakpoints(&self) -> &[(usize, f64)] {
        &self.breakpoints
    }

    pub fn initial_lr(&self) -> f64 {
        self.breakpoints[0].1
    }

    /// Learning rate of the last breakpoint at or before `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(self
            .breakpoints
            .iter()
            .take_while(|(e, _)| *e <= epoch)
            .last()
            .expect("first breakpoint is epoch 0")
            .1)
    }
}

pub fn parse_schedule(text: &str) -> Result<LrSchedule> {
    let (head, rest) = text
        .split_once(',')
        .ok_or_else(|| schedule_err(text, "expected `<N> epochs, <epoch>:<lr>,...`"))?;
    let total = head
        .trim()
        .strip_suffix("epochs")
        .map(str::trim)
        .ok_or_else(|| schedule_err(text, "missing `<N> epochs` prefix"))?;
    let total_epochs = parse_epoch(text, total)?;
    let breakpoints = rest
        .split(',')
        .map(|item| {
            let (e, lr) = item
                .trim_start()
                .split_once(':')
                .ok_or_else(|| schedule_err(text, format!("malformed breakpoint `{item}`")))?;
            let lr: f64 = lr
                .parse()
                .map_err(|_| schedule_err(text, format!("malformed learning rate `{lr}`")))?;
            Ok((parse_epoch(text, e)?, lr))
        })
        .collect::<Result<Vec<_>>>()?;
    let s = LrSchedule {
        total_epochs,
        breakpoints,
    };
    s.validate().map_err(|reason| schedule_err(text, reason))?;
    Ok(s)
}

fn parse_epoch(text: &str, s: &str) -> Result<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(schedule_err(text, format!("malformed epoch `{s}`")));
    }
    s.parse()
        .map_err(|_| schedule_err(text, format!("malformed epoch `{s}`")))
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_schedule(s)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} epochs, ", self.total_epochs)?;
        for (i, (e, lr)) in self.breakpoints.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{e}:{lr}")?;
        }
        Ok(())
    }
}

/// One finetuning setting: a schedule, optionally preceded by `OrthP, `.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSetting {
    pub orthp: bool,
    pub schedule: LrSchedule,
}

pub fn parse_setting(text: &str) -> Result<FinetuneSetting> {
    let trimmed = text.trim_start();
    match trimmed.strip_prefix("OrthP,") {
        Some(rest) => Ok(FinetuneSetting {
            orthp: true,
            schedule: parse_schedule(rest.trim_start())?,
        }),
        None => Ok(FinetuneSetting {
            orthp: false,
            schedule: parse_schedule(trimmed)?,
        }),
    }
}

impl fmt::Display for FinetuneSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.orthp {
            f.write_str("OrthP, ")?;
        }
        write!(f, "{}", self.schedule)
    }
}

/// Pretraining schedule of the unpruned networks; also the large-LR
/// finetuning schedule.
pub const PRETRAIN_SCHEDULE: &str = "90 epochs, 0:0.01,30:0.001,60:0.0001";
pub const SHORT_LARGE_LR: &str = "90 epochs, 0:0.01,30:0.001,60:0.0001";
pub const SHORT_SMALL_LR: &str = "90 epochs, 0:0.001,45:0.001";
pub const LONG_LARGE_LR: &str = "900 epochs, 0:0.01,300:0.001,600:0.0001";
pub const LONG_SMALL_LR: &str = "900 epochs, 0:0.001,450:0.001";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_schedule() {
        let s = parse_schedule("90 epochs, 0:0.01,30:0.001,60:0.0001").unwrap();
        assert_eq!(s.total_epochs(), 90);
        for e in 0..30 {
            assert_eq!(s.lr_at(e).unwrap(), 0.01);
        }
        for e in 30..60 {
            assert_eq!(s.lr_at(e).unwrap(), 0.001);
        }
        for e in 60..90 {
            assert_eq!(s.lr_at(e).unwrap(), 0.0001);
        }
        assert!(matches!(s.lr_at(90), Err(Error::EpochOutOfRange { epoch: 90, total: 90 })));
    }

    #[test]
    fn repeated_breakpoint_is_constant() {
        let s = parse_schedule("90 epochs, 0:0.001,45:0.001").unwrap();
        assert!((0..90).all(|e| s.lr_at(e).unwrap() == 0.001));
        let c = LrSchedule::constant(5, 0.3).unwrap();
        assert!((0..5).all(|e| c.lr_at(e).unwrap() == 0.3));
    }

    #[test]
    fn rejects_malformed() {
        let cases = [
            ("90 epochs, 30:0.01", "first breakpoint must be epoch 0"),
            ("90 epochs, 0:0.01,30:0.001,20:0.0001", "ascend"),
            ("90 epochs, 0:0.01,90:0.001", ">= total epochs"),
            ("90 epochs, 0:0", "positive"),
            ("90 epochs, 0:-0.1", "positive"),
            ("90 epochs, 0:abc", "malformed learning rate"),
            ("9x epochs, 0:0.1", "malformed epoch"),
            ("90 epochs 0:0.1", "expected `<N> epochs"),
            ("90 epochs, 0.5:0.1", "malformed epoch"),
        ];
        for (text, needle) in cases {
            let err = parse_schedule(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn optional_spaces_after_commas() {
        let a = parse_schedule("90 epochs, 0:0.01, 30:0.001, 60:0.0001").unwrap();
        let b = parse_schedule("90 epochs,0:0.01,30:0.001,60:0.0001").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn settings_with_orthp_prefix() {
        let s = parse_setting("OrthP, 900 epochs, 0:0.001,450:0.001").unwrap();
        assert!(s.orthp);
        assert_eq!(s.schedule.total_epochs(), 900);
        assert_eq!(s.to_string(), "OrthP, 900 epochs, 0:0.001,450:0.001");
        assert!(!parse_setting(SHORT_LARGE_LR).unwrap().orthp);
    }

    #[test]
    fn standard_schedules_never_increase() {
        for text in [SHORT_LARGE_LR, SHORT_SMALL_LR, LONG_LARGE_LR, LONG_SMALL_LR] {
            let s = parse_schedule(text).unwrap();
            let lrs: Vec<f64> = (0..s.total_epochs()).map(|e| s.lr_at(e).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{text}");
        }
    }

    proptest! {
        #[test]
        fn display_round_trips(
            total in 1usize..2000,
            cuts in prop::collection::btree_set(1usize..2000, 0..5),
            lrs in prop::collection::vec(1e-6f64..1.0, 6),
        ) {
            let mut bps = vec![(0usize, lrs[0])];
            for (i, c) in cuts.into_iter().filter(|&c| c < total).enumerate() {
                bps.push((c, lrs[i + 1]));
            }
            let s = LrSchedule::new(total, bps).unwrap();
            let again = parse_schedule(&s.to_string()).unwrap();
            prop_assert_eq!(s, again);
        }
    }
}
