use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, is_correct, EvalReport, ExperimentConfig, HarnessError, Result};
use crate::curriculum::{score_all, select_from_scores, ReferenceVerifier, SelectionConfig, Solver};
use crate::data::DataSample;
use crate::grpo::SparseGrad;
use crate::mars::ExactMatchJudge;
use crate::params::{merge_iteration, CheckpointSet, ParamVector};
use crate::policy::{
    sample_response, toy_prompt_id, GenerationConfig, TabularPolicy, TokenId, ToyProblem, Vocab, NUM_TOY_PROBLEMS,
};
use crate::rng::{derive_seed, fnv1a, substream, ChaCha8Rng};

/// Stand-in teacher for the toy tasks: writes templated reasoning traces
/// that sometimes contain an arithmetic slip or redundant re-statements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTeacher {
    pub candidates: usize,
    pub slip_rate: f64,
    pub max_redundant: usize,
}

impl ToyTeacher {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            candidates: cfg.distill.teacher_candidates,
            slip_rate: cfg.distill.teacher_slip_rate,
            max_redundant: cfg.distill.teacher_max_redundant,
        }
    }

    /// One attempt, ending with end-of-sequence.
    pub fn attempt(&self, p: &ToyProblem, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
        let mut sum = p.a + p.b;
        if rng.random::<f64>() < self.slip_rate {
            sum = if sum > 0 && rng.random::<bool>() { sum - 1 } else { sum + 1 };
        }
        let repeats = rng.random_range(0..=self.max_redundant);
        let mut text = format!("<think> {} + {} = {sum}", p.a, p.b);
        for _ in 0..repeats {
            text.push_str(&format!(" = {sum}"));
        }
        text.push_str(&format!(" </think> {}", sum % p.m));
        let mut tokens = vocab.encode(&text).expect("teacher text uses vocabulary symbols");
        tokens.push(vocab.eos());
        tokens
    }

    /// Rejection sampling: the shortest verified attempt, if any passes.
    pub fn solve(&self, sample: &DataSample, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Result<Option<Vec<TokenId>>> {
        let p = ToyProblem::parse(&sample.prompt)?;
        let mut best: Option<Vec<TokenId>> = None;
        for _ in 0..self.candidates {
            let a = self.attempt(&p, vocab, rng);
            if is_correct(sample, &vocab.render(&a))? && best.as_ref().is_none_or(|b| a.len() < b.len()) {
                best = Some(a);
            }
        }
        Ok(best)
    }
}

/// Samples attempts from a tabular policy for complexity scoring.
pub struct PolicySolver<'a> {
    pub policy: &'a TabularPolicy,
    pub vocab: &'a Vocab,
    pub gen: GenerationConfig,
}

impl Solver for PolicySolver<'_> {
    fn solve(&self, sample: &DataSample, temperature: f64, rng: &mut ChaCha8Rng) -> std::result::Result<String, String> {
        let prompt = toy_prompt_id(sample).map_err(|e| e.to_string())?;
        let gen = GenerationConfig {
            temperature,
            ..self.gen.clone()
        };
        let r = sample_response(self.policy, prompt, &gen, self.vocab.eos(), rng).map_err(|e| e.to_string())?;
        Ok(self.vocab.render(&r.tokens))
    }
}

/// Supervised schedule for one call of [`sft_train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SftSchedule {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak rate; decays along a half cosine to zero.
    pub learning_rate: f64,
    /// Snapshots taken after each of the final `keep_last` steps.
    pub keep_last: usize,
}

/// Gradient ascent on per-sequence mean token log-likelihood. Sequences of
/// different prompts touch disjoint rows, so batch terms are summed.
pub fn sft_train(
    policy: &mut TabularPolicy,
    data: &[(usize, Vec<TokenId>)],
    schedule: &SftSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ParamVector>> {
    if data.is_empty() {
        return Err(HarnessError::Config("no supervised sequences".into()));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut snapshots = Vec::new();
    for step in 0..schedule.steps {
        let mut grad = SparseGrad::default();
        for _ in 0..schedule.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(rng);
            }
            let (prompt, seq) = &data[order.pop().expect("refilled above")];
            let scale = 1.0 / seq.len() as f64;
            for (t, &tok) in seq.iter().enumerate() {
                let prev = t.checked_sub(1).map(|i| seq[i]);
                grad.add_token(policy, policy.state(*prompt, t, prev)?, tok, scale)?;
            }
        }
        let lr = schedule.learning_rate * 0.5 * (1.0 + (PI * step as f64 / schedule.steps as f64).cos());
        grad.apply(policy, lr)?;
        if step + schedule.keep_last >= schedule.steps {
            snapshots.push(policy.params().clone());
        }
    }
    Ok(snapshots)
}

type Trace = (usize, Vec<TokenId>);

fn teacher_dataset(
    samples: &[&DataSample],
    teacher: &ToyTeacher,
    vocab: &Vocab,
    seed: u64,
) -> Result<(Vec<Trace>, usize)> {
    let solved: Vec<Option<Trace>> = samples
        .par_iter()
        .map(|s| {
            let mut rng = substream(seed, "teacher", fnv1a(s.id.as_bytes()));
            Ok(teacher.solve(s, vocab, &mut rng)?.map(|seq| (toy_prompt_id(s).expect("parsed by teacher"), seq)))
        })
        .collect::<Result<_>>()?;
    let rejected = solved.iter().filter(|s| s.is_none()).count();
    Ok((solved.into_iter().flatten().collect(), rejected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub merged: bool,
    pub selected: usize,
    pub few_shot: usize,
    pub mean_complexity: f64,
    /// Selected samples per complexity tenth, lowest first.
    pub complexity_bins: [usize; 10],
    pub teacher_rejected: usize,
    pub sft_sequences: usize,
    pub checkpoints: usize,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillReport {
    pub iteration0: EvalReport,
    pub iterations: Vec<IterationReport>,
    pub control: Vec<IterationReport>,
    pub policy: TabularPolicy,
    pub control_policy: Option<TabularPolicy>,
}

impl DistillReport {
    pub fn final_accuracy(&self) -> f64 {
        self.iterations.last().map_or(self.iteration0.accuracy, |r| r.eval.accuracy)
    }

    pub fn control_accuracy(&self) -> Option<f64> {
        self.control.last().map(|r| r.eval.accuracy)
    }
}

struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    pool: &'a [DataSample],
    bench: &'a [DataSample],
    vocab: Vocab,
    teacher: ToyTeacher,
}

impl Setup<'_> {
    fn validate(&self, policy: &TabularPolicy, iteration: usize) -> Result<EvalReport> {
        evaluate(
            policy,
            self.bench,
            &self.cfg.eval.generation,
            self.cfg.eval.min_effective,
            derive_seed(self.cfg.seed, "validation", iteration as u64),
        )
    }

    fn run_arm(&self, start: &TabularPolicy, merge: bool) -> Result<(Vec<IterationReport>, TabularPolicy)> {
        let cfg = self.cfg;
        let verifier = ReferenceVerifier {
            judge: Some(ExactMatchJudge),
        };
        let mut current = start.clone();
        let mut reports: Vec<IterationReport> = Vec::new();
        let mut last_acc: Option<f64> = None;
        for t in 1..=cfg.distill.iterations {
            let sel = SelectionConfig {
                seed: derive_seed(cfg.seed, "selection", t as u64),
                ..cfg.selection.clone()
            };
            let solver = PolicySolver {
                policy: &current,
                vocab: &self.vocab,
                gen: cfg.distill.scoring.clone(),
            };
            let scores = score_all(self.pool, &solver, &sel, &verifier)?;
            let selected = select_from_scores(self.pool, &scores, &sel, t)?;
            if selected.is_empty() {
                return Err(HarnessError::EmptySelection { iteration: t });
            }
            let mut bins = [0usize; 10];
            for s in &selected {
                bins[((s.score.value * 10.0) as usize).min(9)] += 1;
            }
            let chosen: Vec<&DataSample> = selected.iter().map(|s| &s.sample).collect();
            let (data, rejected) =
                teacher_dataset(&chosen, &self.teacher, &self.vocab, derive_seed(cfg.seed, "teacher", t as u64))?;
            let keep = if merge { cfg.merge.checkpoints_per_iteration } else { 1 };
            let schedule = SftSchedule {
                steps: cfg.distill.sft_steps,
                batch_size: cfg.distill.batch_size,
                learning_rate: cfg.distill.learning_rate,
                keep_last: keep.min(cfg.distill.sft_steps),
            };
            let mut trainee = current.clone();
            let mut rng = substream(cfg.seed, "sft", t as u64);
            let ckpts = sft_train(&mut trainee, &data, &schedule, &mut rng)?;
            let n_ckpts = ckpts.len();
            let next = if merge {
                merge_iteration(
                    current.params(),
                    &CheckpointSet::new(ckpts, t)?,
                    cfg.merge.lambda_for(t),
                )?
            } else {
                trainee.params().clone()
            };
            current.set_params(next)?;
            let eval = self.validate(&current, t)?;
            reports.push(IterationReport {
                iteration: t,
                merged: merge,
                selected: selected.len(),
                few_shot: selected.iter().filter(|s| s.few_shot.is_some()).count(),
                mean_complexity: selected.iter().map(|s| s.score.value).sum::<f64>() / selected.len() as f64,
                complexity_bins: bins,
                teacher_rejected: rejected,
                sft_sequences: data.len(),
                checkpoints: n_ckpts,
                eval,
            });
            if let (Some(min), Some(prev)) = (cfg.distill.min_improvement, last_acc) {
                if eval.accuracy - prev < min {
                    break;
                }
            }
            last_acc = Some(eval.accuracy);
        }
        Ok((reports, current))
    }
}

/// Starting policy: random logits, then supervised on the teacher's traces for the first
/// `pretrain_fraction` of the pool.
pub fn initial_policy(cfg: &ExperimentConfig, pool: &[DataSample]) -> Result<TabularPolicy> {
    let vocab = Vocab::arithmetic();
    let mut policy = TabularPolicy::uniform(NUM_TOY_PROBLEMS, cfg.policy.horizon, vocab.len())?;
    if cfg.policy.init_scale > 0.0 {
        let noise = Normal::new(0.0, cfg.policy.init_scale).expect("scale validated");
        let mut rng = substream(cfg.seed, "policy-init", 0);
        for v in policy.params_mut().as_mut_slice() {
            *v = noise.sample(&mut rng);
        }
    }
    let n = (pool.len() as f64 * cfg.distill.pretrain_fraction).round() as usize;
    if n == 0 || cfg.distill.pretrain_steps == 0 {
        return Ok(policy);
    }
    let subset: Vec<&DataSample> = pool[..n].iter().collect();
    let (data, _) = teacher_dataset(&subset, &ToyTeacher::from_config(cfg), &vocab, derive_seed(cfg.seed, "teacher", 0))?;
    let schedule = SftSchedule {
        steps: cfg.distill.pretrain_steps,
        batch_size: cfg.distill.batch_size,
        learning_rate: cfg.distill.learning_rate,
        keep_last: 0,
    };
    sft_train(&mut policy, &data, &schedule, &mut substream(cfg.seed, "sft", 0))?;
    Ok(policy)
}

/// The validation benchmark: the front of the pool.
pub fn benchmark(cfg: &ExperimentConfig, pool: &[DataSample]) -> Vec<DataSample> {
    let m = match cfg.data.validation_size {
        0 => pool.len(),
        n => n.min(pool.len()),
    };
    pool[..m].to_vec()
}

/// Iterative distillation with inter-iteration merging, plus the
/// no-merging control on identical seeds when enabled.
pub fn run_distillation(cfg: &ExperimentConfig) -> Result<DistillReport> {
    cfg.validate()?;
    let pool = cfg.load_pool(cfg.data.pool_size)?;
    let bench = benchmark(cfg, &pool);
    let setup = Setup {
        cfg,
        pool: &pool,
        bench: &bench,
        vocab: Vocab::arithmetic(),
        teacher: ToyTeacher::from_config(cfg),
    };
    let g0 = initial_policy(cfg, &pool)?;
    let iteration0 = setup.validate(&g0, 0)?;
    let (iterations, policy) = setup.run_arm(&g0, true)?;
    let (control, control_policy) = if cfg.distill.merge_control {
        let (r, p) = setup.run_arm(&g0, false)?;
        (r, Some(p))
    } else {
        (Vec::new(), None)
    };
    Ok(DistillReport {
        iteration0,
        iterations,
        control,
        policy,
        control_policy,
    })
}
