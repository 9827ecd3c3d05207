use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::curriculum::SelectionConfig;
use crate::data::{load_dataset, DataSample};
use crate::grpo::GrpoConfig;
use crate::mars::ExpectedMode;
use crate::params::MergeConfig;
use crate::policy::{make_toy_taskset, toy_prompt_id, GenerationConfig, NUM_TOY_PROBLEMS};
use crate::repetition::DetectorConfig;
use crate::rng::derive_seed;
use crate::sched::SchedulerConfig;

/// Everything one experiment needs; one TOML table per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub selection: SelectionConfig,
    pub merge: MergeConfig,
    pub distill: DistillConfig,
    pub grpo: GrpoConfig,
    pub rl: RlConfig,
    pub detector: DetectorConfig,
    pub scheduler: SchedulerConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            policy: PolicyConfig::default(),
            selection: SelectionConfig {
                few_shot_prefix: "compute 3 + 4 mod 5 => <think> 3 + 4 = 7 </think> 2".into(),
                ..SelectionConfig::default()
            },
            merge: MergeConfig::default(),
            distill: DistillConfig::default(),
            grpo: GrpoConfig {
                learning_rate: 3.0,
                ..GrpoConfig::default()
            },
            rl: RlConfig::default(),
            detector: DetectorConfig::default(),
            scheduler: SchedulerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL pool of toy-task samples; generated from the seed when absent.
    pub train_path: Option<PathBuf>,
    /// Generated pool size.
    pub pool_size: usize,
    /// Benchmark size drawn from the front of the pool; 0 means all of it.
    /// The tabular policy shares nothing across prompts, so held-out
    /// prompts would sit at chance and validation uses pool prompts.
    pub validation_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            pool_size: NUM_TOY_PROBLEMS,
            validation_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub horizon: usize,
    /// Standard deviation of the initial logits of the distillation
    /// policy; 0 starts from uniform.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub iterations: usize,
    /// Share of the pool the starting policy is pretrained on.
    pub pretrain_fraction: f64,
    pub pretrain_steps: usize,
    pub sft_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Teacher attempts per sample; the shortest correct one is kept.
    pub teacher_candidates: usize,
    /// Chance a teacher attempt contains an arithmetic slip.
    pub teacher_slip_rate: f64,
    /// Upper bound on redundant re-statements in a teacher trace.
    pub teacher_max_redundant: usize,
    /// Stop once validation accuracy gains less than this.
    pub min_improvement: Option<f64>,
    /// Also run the same loop without merging.
    pub merge_control: bool,
    /// Sampling used while scoring complexity.
    pub scoring: GenerationConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            pretrain_fraction: 0.5,
            pretrain_steps: 6,
            sft_steps: 12,
            batch_size: 32,
            learning_rate: 16.0,
            teacher_candidates: 4,
            teacher_slip_rate: 0.25,
            teacher_max_redundant: 2,
            min_improvement: None,
            merge_control: true,
            scoring: GenerationConfig {
                temperature: 1.0,
                top_p: 1.0,
                nsigma: f64::INFINITY,
                max_len: 12,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub steps: usize,
    pub prompts_per_step: usize,
    pub group_size: usize,
    /// Easy : medium : hard.
    pub ratio: [u32; 3],
    pub pool_size: usize,
    /// Complexity at or below this is easy.
    pub bucket_low: f64,
    /// Complexity at or above this is hard.
    pub bucket_high: f64,
    /// Steps between curriculum re-scoring; 0 scores once, before the
    /// first step.
    pub rebucket_every: usize,
    /// Attempts per prompt when scoring complexity.
    pub scoring_k: usize,
    pub mode: ExpectedMode,
    /// Decode rollouts through the repetition guard.
    pub guarded: bool,
    /// Steps between validation runs; 0 disables.
    pub eval_every: usize,
    pub generation: GenerationConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            prompts_per_step: 64,
            group_size: 8,
            ratio: [1, 7, 2],
            pool_size: 128,
            bucket_low: 0.25,
            bucket_high: 0.75,
            rebucket_every: 0,
            scoring_k: 4,
            mode: ExpectedMode::Any,
            guarded: true,
            eval_every: 0,
            generation: GenerationConfig {
                temperature: 0.9,
                top_p: 1.0,
                nsigma: f64::INFINITY,
                max_len: 4,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub min_effective: usize,
    pub generation: GenerationConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            min_effective: 500,
            generation: GenerationConfig {
                temperature: 1.0,
                top_p: 1.0,
                nsigma: 1.5,
                max_len: 12,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        self.selection.validate()?;
        self.merge.validate()?;
        self.grpo.validate()?;
        self.detector.validate().map_err(HarnessError::Config)?;
        self.scheduler.validate()?;
        self.distill.scoring.validate()?;
        self.rl.generation.validate()?;
        self.eval.generation.validate()?;
        if self.distill.iterations == 0 {
            return bad("distill.iterations must be >= 1");
        }
        if !(self.policy.init_scale >= 0.0 && self.policy.init_scale.is_finite()) {
            return bad("policy.init_scale must be finite and >= 0");
        }
        if self.policy.horizon == 0 {
            return bad("policy.horizon must be >= 1");
        }
        if self.data.pool_size == 0 || self.rl.pool_size == 0 {
            return bad("pool sizes must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.distill.pretrain_fraction) {
            return bad("distill.pretrain_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.distill.teacher_slip_rate) {
            return bad("distill.teacher_slip_rate must lie in [0, 1)");
        }
        if self.distill.teacher_candidates == 0 || self.distill.batch_size == 0 || self.distill.sft_steps == 0 {
            return bad("teacher_candidates, batch_size and sft_steps must be >= 1");
        }
        if self.rl.group_size < 2 || self.rl.prompts_per_step == 0 || self.rl.scoring_k == 0 {
            return bad("rl needs group_size >= 2, prompts_per_step >= 1, scoring_k >= 1");
        }
        if !(0.0 < self.rl.bucket_low && self.rl.bucket_low < self.rl.bucket_high && self.rl.bucket_high < 1.0) {
            return bad("rl buckets need 0 < bucket_low < bucket_high < 1");
        }
        if self.rl.ratio.iter().all(|&r| r == 0) {
            return bad("rl.ratio must have a positive entry");
        }
        if self.eval.min_effective == 0 {
            return bad("eval.min_effective must be >= 1");
        }
        Ok(())
    }

    /// The toy pool: loaded from `data.train_path` or generated.
    pub fn load_pool(&self, size: usize) -> Result<Vec<DataSample>> {
        match &self.data.train_path {
            Some(path) => {
                let samples = load_dataset(path)?;
                for s in &samples {
                    toy_prompt_id(s)?;
                }
                if samples.is_empty() {
                    return Err(HarnessError::Config(format!("{} holds no samples", path.display())));
                }
                Ok(samples)
            }
            None => Ok(make_toy_taskset(size, derive_seed(self.seed, "dataset", 0))?),
        }
    }
}
