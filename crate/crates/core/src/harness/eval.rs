use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::data::DataSample;
use crate::mars::{verify_math, ExactMatchJudge, MarsError};
use crate::policy::{sample_response, toy_prompt_id, GenerationConfig, TabularPolicy, Vocab};
use crate::rng::{derive_seed, substream};

/// Smallest `n` with `n * benchmark_size >= min_effective`.
pub fn runs_needed(benchmark_size: usize, min_effective: usize) -> usize {
    assert!(benchmark_size > 0, "benchmark must be nonempty");
    min_effective.div_ceil(benchmark_size).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Binomial standard error over all `runs * benchmark_size` attempts.
    pub stderr: f64,
    pub runs: usize,
    pub benchmark_size: usize,
}

/// Whether `response` states the sample's reference answer.
pub fn is_correct(sample: &DataSample, response: &str) -> std::result::Result<bool, MarsError> {
    let gt = sample
        .reference_answer
        .as_deref()
        .ok_or_else(|| MarsError::MissingReference(sample.id.clone()))?;
    verify_math(response, gt, Some(&ExactMatchJudge))
}

/// Runs the benchmark `runs_needed` times with distinct seeds and pools the
/// pass rate.
pub fn evaluate(
    policy: &TabularPolicy,
    benchmark: &[DataSample],
    gen: &GenerationConfig,
    min_effective: usize,
    seed: u64,
) -> Result<EvalReport> {
    if benchmark.is_empty() {
        return Err(HarnessError::Config("benchmark is empty".into()));
    }
    let vocab = Vocab::arithmetic();
    let runs = runs_needed(benchmark.len(), min_effective);
    let mut passes = 0usize;
    for run in 0..runs {
        let run_seed = derive_seed(seed, "eval-run", run as u64);
        let hits: Vec<bool> = benchmark
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = substream(run_seed, "sample", i as u64);
                let r = sample_response(policy, toy_prompt_id(s)?, gen, vocab.eos(), &mut rng)?;
                Ok(is_correct(s, &vocab.render(&r.tokens))?)
            })
            .collect::<Result<_>>()?;
        passes += hits.iter().filter(|&&h| h).count();
    }
    let trials = (runs * benchmark.len()) as f64;
    let accuracy = passes as f64 / trials;
    Ok(EvalReport {
        accuracy,
        stderr: (accuracy * (1.0 - accuracy) / trials).sqrt(),
        runs,
        benchmark_size: benchmark.len(),
    })
}
