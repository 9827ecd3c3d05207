//! Discrete-event simulation of a four-stage RL pipeline under bulk- or
//! stale-synchronous scheduling.
//!
//! Per batch, reference assessment, reward scoring and log-probability
//! extraction must all finish before that batch's parameter update, and
//! updates commit in batch order. Under a staleness bound `s`, the first
//! three stages of batch `b` may start once update `b - 1 - s` has
//! committed; `s = 0` is bulk-synchronous execution. Time is an integer
//! tick count so the accounting identities hold exactly.

mod queue;
mod sim;

pub use queue::*;
pub use sim::*;

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{read_jsonl, write_jsonl, DataError};
use crate::rng::substream;

/// z-score of the 95th percentile of a standard normal.
const Z95: f64 = 1.644_853_626_951_472_2;

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("scheduler config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("event log: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ReferenceAssessment,
    RewardScoring,
    LogprobExtraction,
    ParameterUpdate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::ReferenceAssessment,
        Stage::RewardScoring,
        Stage::LogprobExtraction,
        Stage::ParameterUpdate,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::ReferenceAssessment => "reference_assessment",
            Stage::RewardScoring => "reward_scoring",
            Stage::LogprobExtraction => "logprob_extraction",
            Stage::ParameterUpdate => "parameter_update",
        }
    }

    /// Where the stage runs by default.
    pub fn default_class(self) -> WorkerClass {
        match self {
            Stage::RewardScoring => WorkerClass::Host,
            _ => WorkerClass::Device,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerClass {
    Device,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTask {
    pub batch_id: usize,
    pub stage: Stage,
    /// Simulated ticks, at least 1.
    pub duration: u64,
    pub worker_class: WorkerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationModel {
    Constant { value: u64 },
    /// Inclusive bounds.
    Uniform { low: u64, high: u64 },
    /// Log-normal with the given median and 95th-to-50th percentile ratio.
    HeavyTail { median: f64, p95_ratio: f64 },
}

impl DurationModel {
    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: &str| Err(SchedError::Config(m.into()));
        match *self {
            DurationModel::Constant { value: 0 } => bad("constant duration must be >= 1"),
            DurationModel::Uniform { low, high } if low == 0 || low > high => {
                bad("uniform durations need 1 <= low <= high")
            }
            DurationModel::HeavyTail { median, p95_ratio } if !(median >= 1.0 && p95_ratio > 1.0) => {
                bad("heavy tail needs median >= 1 and p95_ratio > 1")
            }
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> u64 {
        match *self {
            DurationModel::Constant { value } => value,
            DurationModel::Uniform { low, high } => rng.random_range(low..=high),
            DurationModel::HeavyTail { median, p95_ratio } => {
                let sigma = p95_ratio.ln() / Z95;
                let d = LogNormal::new(median.ln(), sigma).expect("validated parameters");
                (d.sample(rng).round() as u64).max(1)
            }
        }
    }
}

/// Four tasks per batch in stage order; reward scoring runs on host
/// workers, the rest on device workers.
pub fn generate_trace(num_batches: usize, model: &DurationModel, seed: u64) -> Result<Vec<StageTask>, SchedError> {
    if num_batches == 0 {
        return Err(SchedError::Config("num_batches must be >= 1".into()));
    }
    model.validate()?;
    let mut rng = substream(seed, "scheduler-trace", 0);
    let mut out = Vec::with_capacity(num_batches * 4);
    for b in 0..num_batches {
        for stage in Stage::ALL {
            out.push(StageTask {
                batch_id: b,
                stage,
                duration: model.draw(&mut rng),
                worker_class: stage.default_class(),
            });
        }
    }
    Ok(out)
}

pub fn save_trace(trace: &[StageTask], path: &Path) -> Result<(), SchedError> {
    Ok(write_jsonl(trace, path)?)
}

pub fn load_trace(path: &Path) -> Result<Vec<StageTask>, SchedError> {
    Ok(read_jsonl(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_deterministic() {
        let t = generate_trace(5, &DurationModel::Constant { value: 7 }, 1).unwrap();
        assert_eq!(t.len(), 20);
        assert!(t.iter().all(|x| x.duration == 7));
        let m = DurationModel::Uniform { low: 1, high: 50 };
        assert_eq!(generate_trace(9, &m, 3).unwrap(), generate_trace(9, &m, 3).unwrap());
        assert!(generate_trace(0, &m, 3).is_err());
        assert!(generate_trace(1, &DurationModel::Uniform { low: 5, high: 2 }, 3).is_err());
    }

    #[test]
    fn heavy_tail_quantile_ratio() {
        let m = DurationModel::HeavyTail {
            median: 1000.0,
            p95_ratio: 4.0,
        };
        let t = generate_trace(2500, &m, 11).unwrap();
        let mut d: Vec<u64> = t.iter().map(|x| x.duration).collect();
        d.sort_unstable();
        let q = |p: f64| d[((d.len() - 1) as f64 * p).round() as usize] as f64;
        let ratio = q(0.95) / q(0.5);
        assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        let t = generate_trace(3, &DurationModel::Uniform { low: 1, high: 9 }, 2).unwrap();
        save_trace(&t, &p).unwrap();
        assert_eq!(load_trace(&p).unwrap(), t);
    }
}
