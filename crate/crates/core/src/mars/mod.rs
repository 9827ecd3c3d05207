//! Multi-source adaptive rewards.
//!
//! Each `(sample, response)` is routed by task label to a primary
//! evaluator — math answer verification, the staged code pipeline, or a
//! group-normalized preference score — and then adjusted by a format
//! validator and an n-gram repetition penalty. The composite is clipped to
//! `[-1, 1]`.

mod code;
mod format;
pub mod lang;
mod math;
mod penalty;
mod preference;

pub use code::*;
pub use format::*;
pub use math::*;
pub use penalty::*;
pub use preference::*;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_jsonl, DataError, DataSample, TaskLabel};

#[derive(Debug, Error)]
pub enum MarsError {
    #[error("unverifiable math response: {reason}")]
    Unverifiable { reason: String },
    #[error("sample `{0}` has no reference answer")]
    MissingReference(String),
    #[error("code runner failure: {0}")]
    Runner(String),
    #[error("reward config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    MathDual,
    CodePipeline,
    Preference,
}

impl Evaluator {
    pub fn id(&self) -> &'static str {
        match self {
            Evaluator::MathDual => "math_dual",
            Evaluator::CodePipeline => "code_pipeline",
            Evaluator::Preference => "preference",
        }
    }
}

pub fn route(label: TaskLabel) -> Evaluator {
    match label {
        TaskLabel::Math => Evaluator::MathDual,
        TaskLabel::Code => Evaluator::CodePipeline,
        TaskLabel::General => Evaluator::Preference,
    }
}

/// Parses a task label string and routes it.
pub fn route_label(label: &str) -> Result<Evaluator, MarsError> {
    match label {
        "math" => Ok(Evaluator::MathDual),
        "code" => Ok(Evaluator::CodePipeline),
        "general" => Ok(Evaluator::Preference),
        other => Err(MarsError::Config(format!("unknown task label `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correctness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preference: Option<f64>,
    pub format_penalty: f64,
    pub repetition_penalty: f64,
}

impl RewardComponents {
    pub fn primary(&self) -> f64 {
        self.correctness.or(self.preference).unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.primary() + self.format_penalty + self.repetition_penalty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub total: f64,
    pub components: RewardComponents,
    pub evaluator: Evaluator,
    /// Format violation under strict rejection forced the total to -1.
    #[serde(default)]
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarsConfig {
    pub code_scheme: CodeScheme,
    pub repetition: RepetitionPenaltyConfig,
    /// A format violation sets the total to -1 instead of adding -1.
    pub strict_reject: bool,
}

impl Default for MarsConfig {
    fn default() -> Self {
        Self {
            code_scheme: CodeScheme::Staged,
            repetition: RepetitionPenaltyConfig::default(),
            strict_reject: false,
        }
    }
}

/// The reward router with its pluggable evaluators.
pub struct Mars {
    pub cfg: MarsConfig,
    judge: Option<Box<dyn MathJudge>>,
    runner: Box<dyn CodeRunner>,
    preference: Box<dyn PreferenceScorer>,
}

impl Default for Mars {
    fn default() -> Self {
        Self::new(MarsConfig::default())
    }
}

impl Mars {
    /// Built-in code runner, heuristic preference scorer, no math judge.
    pub fn new(cfg: MarsConfig) -> Self {
        Self {
            cfg,
            judge: None,
            runner: Box::new(BuiltinRunner::default()),
            preference: Box::new(HeuristicPreference::default()),
        }
    }

    pub fn with_judge(mut self, judge: impl MathJudge + 'static) -> Self {
        self.judge = Some(Box::new(judge));
        self
    }

    pub fn with_runner(mut self, runner: impl CodeRunner + 'static) -> Self {
        self.runner = Box::new(runner);
        self
    }

    pub fn with_preference(mut self, scorer: impl PreferenceScorer + 'static) -> Self {
        self.preference = Box::new(scorer);
        self
    }

    fn correctness(&self, sample: &DataSample, response: &str) -> Result<f64, MarsError> {
        match route(sample.task_label) {
            Evaluator::MathDual => {
                let gt = sample
                    .reference_answer
                    .as_deref()
                    .ok_or_else(|| MarsError::MissingReference(sample.id.clone()))?;
                let ok = verify_math(response, gt, self.judge.as_deref())?;
                Ok(if ok { 1.0 } else { 0.0 })
            }
            Evaluator::CodePipeline => {
                reward_code(response, &sample.test_cases, self.cfg.code_scheme, self.runner.as_ref())
            }
            Evaluator::Preference => unreachable!("preference is scored per group"),
        }
    }

    fn compose(&self, evaluator: Evaluator, primary: f64, response: &str, mode: ExpectedMode) -> RewardSignal {
        let format_penalty = validate_format(response, mode);
        let repetition_penalty = repetition_penalty(&word_symbols(response), &self.cfg.repetition);
        let (correctness, preference) = match evaluator {
            Evaluator::Preference => (None, Some(primary)),
            _ => (Some(primary), None),
        };
        let components = RewardComponents {
            correctness,
            preference,
            format_penalty,
            repetition_penalty,
        };
        let rejected = self.cfg.strict_reject && format_penalty < 0.0;
        let total = if rejected {
            -1.0
        } else {
            components.sum().clamp(-1.0, 1.0)
        };
        RewardSignal {
            total,
            components,
            evaluator,
            rejected,
        }
    }

    /// Scores a single response. A lone preference response has no group
    /// to normalize against, so its raw score is squashed directly.
    pub fn score(&self, sample: &DataSample, response: &str, mode: ExpectedMode) -> Result<RewardSignal, MarsError> {
        let evaluator = route(sample.task_label);
        let primary = match evaluator {
            Evaluator::Preference => self.preference.raw_score(&sample.prompt, response).tanh(),
            _ => self.correctness(sample, response)?,
        };
        Ok(self.compose(evaluator, primary, response, mode))
    }

    /// Scores the responses of one group; preference scores are normalized
    /// within the group.
    pub fn score_group(
        &self,
        sample: &DataSample,
        responses: &[String],
        mode: ExpectedMode,
    ) -> Result<Vec<RewardSignal>, MarsError> {
        let evaluator = route(sample.task_label);
        let primaries: Vec<f64> = match evaluator {
            Evaluator::Preference if responses.len() >= 2 => {
                let raw: Vec<f64> = responses
                    .iter()
                    .map(|r| self.preference.raw_score(&sample.prompt, r))
                    .collect();
                normalize_preference(&raw)
            }
            Evaluator::Preference => responses
                .iter()
                .map(|r| self.preference.raw_score(&sample.prompt, r).tanh())
                .collect(),
            _ => responses
                .iter()
                .map(|r| self.correctness(sample, r))
                .collect::<Result<_, _>>()?,
        };
        Ok(primaries
            .into_iter()
            .zip(responses)
            .map(|(p, r)| self.compose(evaluator, p, r, mode))
            .collect())
    }
}

/// One line of the reward audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_id: String,
    pub evaluator: Evaluator,
    pub components: RewardComponents,
    pub total: f64,
}

impl AuditRecord {
    pub fn new(sample_id: impl Into<String>, signal: &RewardSignal) -> Self {
        Self {
            sample_id: sample_id.into(),
            evaluator: signal.evaluator,
            components: signal.components.clone(),
            total: signal.total,
        }
    }
}

pub fn write_audit_log(records: &[AuditRecord], path: &Path) -> Result<(), MarsError> {
    Ok(write_jsonl(records, path)?)
}
