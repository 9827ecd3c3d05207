//! Experiment driver: configuration, the iterative distillation loop, the
//! GRPO loop with curriculum mixing and guarded decoding, evaluation under
//! a minimum effective sample count, the repetition ablation and metric
//! emission. Every random draw derives from `ExperimentConfig::seed`.

mod ablation;
mod config;
mod distill;
mod eval;
mod report;
mod rl;

pub use ablation::*;
pub use config::*;
pub use distill::*;
pub use eval::*;
pub use report::*;
pub use rl::*;

use thiserror::Error;

use crate::curriculum::CurriculumError;
use crate::data::DataError;
use crate::grpo::GrpoError;
use crate::mars::MarsError;
use crate::params::ParamError;
use crate::policy::PolicyError;
use crate::sched::SchedError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("selection produced no samples at iteration {iteration}; widen sigma or move mu toward the observed complexity range")]
    EmptySelection { iteration: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Mars(#[from] MarsError),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
