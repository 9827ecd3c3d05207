//! Model-aware data selection and curriculum construction.
//!
//! Complexity is one minus the student's pass rate over `k` sampled
//! attempts. Distillation keeps each sample with a Gaussian acceptance
//! probability centred slightly below 0.5; RL batches are mixed from
//! easy/medium/hard buckets in a fixed ratio; and fast/slow fusion data is
//! assembled from annotated easy and hard queries.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataSample;
use crate::mars::{scan_think_tags, split_think_block, verify_math, MarsError, MathJudge, ThinkingMode};
use crate::rng::{fnv1a, substream, ChaCha8Rng};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("curriculum config: {0}")]
    Config(String),
    #[error("sample `{id}`: verifier failed: {message}")]
    Verifier { id: String, message: String },
    #[error("sample `{id}`: solver failed: {message}")]
    Solver { id: String, message: String },
    #[error("format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub value: f64,
    pub k: usize,
    pub passes: usize,
}

impl ComplexityScore {
    pub fn from_passes(passes: usize, k: usize) -> Result<Self, CurriculumError> {
        if k == 0 || passes > k {
            return Err(CurriculumError::Config(format!("invalid pass count {passes}/{k}")));
        }
        Ok(Self {
            value: 1.0 - passes as f64 / k as f64,
            k,
            passes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub mu: f64,
    pub sigma: f64,
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Exemplar block attached to first-iteration selections.
    pub few_shot_prefix: String,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mu: 0.45,
            sigma: 0.2,
            k: 8,
            temperature: 1.0,
            seed: 0,
            few_shot_prefix: String::new(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(self.sigma > 0.0) {
            return Err(CurriculumError::Config("sigma must be > 0".into()));
        }
        if self.k == 0 {
            return Err(CurriculumError::Config("k must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(CurriculumError::Config("temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Produces one attempt at a sample.
pub trait Solver: Sync {
    fn solve(&self, sample: &DataSample, temperature: f64, rng: &mut ChaCha8Rng) -> Result<String, String>;
}

/// Judges an attempt against the sample's reference.
pub trait Verifier: Sync {
    fn verify(&self, sample: &DataSample, response: &str) -> Result<bool, String>;
}

/// Math answer checking against `reference_answer`, with an optional
/// fallback judge.
pub struct ReferenceVerifier<J: MathJudge> {
    pub judge: Option<J>,
}

impl<J: MathJudge> Verifier for ReferenceVerifier<J> {
    fn verify(&self, sample: &DataSample, response: &str) -> Result<bool, String> {
        let gt = sample
            .reference_answer
            .as_deref()
            .ok_or_else(|| MarsError::MissingReference(sample.id.clone()).to_string())?;
        verify_math(response, gt, self.judge.as_ref().map(|j| j as &dyn MathJudge)).map_err(|e| e.to_string())
    }
}

fn sample_rng(seed: u64, stream: &str, sample: &DataSample) -> ChaCha8Rng {
    substream(seed, stream, fnv1a(sample.id.as_bytes()))
}

pub fn complexity_score(
    sample: &DataSample,
    solver: &dyn Solver,
    cfg: &SelectionConfig,
    verifier: &dyn Verifier,
) -> Result<ComplexityScore, CurriculumError> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, "complexity", sample);
    let mut passes = 0;
    for _ in 0..cfg.k {
        let response = solver
            .solve(sample, cfg.temperature, &mut rng)
            .map_err(|message| CurriculumError::Solver {
                id: sample.id.clone(),
                message,
            })?;
        let ok = verifier
            .verify(sample, &response)
            .map_err(|message| CurriculumError::Verifier {
                id: sample.id.clone(),
                message,
            })?;
        passes += usize::from(ok);
    }
    ComplexityScore::from_passes(passes, cfg.k)
}

/// Scores every sample; order of the output matches the input.
pub fn score_all(
    samples: &[DataSample],
    solver: &dyn Solver,
    cfg: &SelectionConfig,
    verifier: &dyn Verifier,
) -> Result<Vec<ComplexityScore>, CurriculumError> {
    samples
        .par_iter()
        .map(|s| complexity_score(s, solver, cfg, verifier))
        .collect()
}

/// Gaussian in `c` rescaled so that its peak (at `mu`) is exactly 1.
pub fn selection_probability(c: f64, mu: f64, sigma: f64) -> f64 {
    (-(c - mu).powi(2) / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSample {
    pub sample: DataSample,
    pub score: ComplexityScore,
    /// Present only for first-iteration selections.
    pub few_shot: Option<String>,
}

/// Bernoulli admission per sample from precomputed scores.
pub fn select_from_scores(
    samples: &[DataSample],
    scores: &[ComplexityScore],
    cfg: &SelectionConfig,
    iteration: usize,
) -> Result<Vec<SelectedSample>, CurriculumError> {
    cfg.validate()?;
    if samples.len() != scores.len() {
        return Err(CurriculumError::Config("one score per sample required".into()));
    }
    let mut out = Vec::new();
    for (s, sc) in samples.iter().zip(scores) {
        let p = selection_probability(sc.value, cfg.mu, cfg.sigma);
        let u: f64 = sample_rng(cfg.seed, "select", s).random();
        if u < p {
            out.push(SelectedSample {
                sample: s.clone(),
                score: *sc,
                few_shot: (iteration == 1 && !cfg.few_shot_prefix.is_empty()).then(|| cfg.few_shot_prefix.clone()),
            });
        }
    }
    Ok(out)
}

pub fn select_samples(
    samples: &[DataSample],
    solver: &dyn Solver,
    cfg: &SelectionConfig,
    verifier: &dyn Verifier,
    iteration: usize,
) -> Result<Vec<SelectedSample>, CurriculumError> {
    let scores = score_all(samples, solver, cfg, verifier)?;
    select_from_scores(samples, &scores, cfg, iteration)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumBuckets {
    pub easy: Vec<DataSample>,
    pub medium: Vec<DataSample>,
    pub hard: Vec<DataSample>,
    pub low: f64,
    pub high: f64,
}

impl CurriculumBuckets {
    pub fn sizes(&self) -> [usize; 3] {
        [self.easy.len(), self.medium.len(), self.hard.len()]
    }

    fn bucket(&self, i: usize) -> &[DataSample] {
        match i {
            0 => &self.easy,
            1 => &self.medium,
            _ => &self.hard,
        }
    }
}

pub fn bucket_by_complexity(
    samples: &[DataSample],
    scores: &[f64],
    low: f64,
    high: f64,
) -> Result<CurriculumBuckets, CurriculumError> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(CurriculumError::Config(format!(
            "need 0 < low < high < 1, got ({low}, {high})"
        )));
    }
    if samples.len() != scores.len() {
        return Err(CurriculumError::Config("one score per sample required".into()));
    }
    let mut b = CurriculumBuckets {
        easy: Vec::new(),
        medium: Vec::new(),
        hard: Vec::new(),
        low,
        high,
    };
    for (s, &c) in samples.iter().zip(scores) {
        if c <= low {
            b.easy.push(s.clone());
        } else if c >= high {
            b.hard.push(s.clone());
        } else {
            b.medium.push(s.clone());
        }
    }
    Ok(b)
}

/// Splits `total` in proportion to `weights` by largest remainder; equal
/// remainders favour the lower index.
pub fn largest_remainder(total: usize, weights: &[u32]) -> Result<Vec<usize>, CurriculumError> {
    let sum: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    if sum == 0 {
        return Err(CurriculumError::Config("ratio weights sum to zero".into()));
    }
    let exact: Vec<(u64, u64)> = weights
        .iter()
        .map(|&w| {
            let num = total as u64 * u64::from(w);
            (num / sum, num % sum)
        })
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|&(q, _)| q as usize).collect();
    let left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    for &i in order.iter().take(left) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Zeroes ratio entries whose bucket is empty.
pub fn effective_ratio(buckets: &CurriculumBuckets, ratio: [u32; 3]) -> [u32; 3] {
    let sizes = buckets.sizes();
    let mut r = ratio;
    for i in 0..3 {
        if sizes[i] == 0 {
            r[i] = 0;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumBatch {
    pub samples: Vec<DataSample>,
    /// Easy, medium, hard.
    pub counts: [usize; 3],
}

/// Draws a batch with per-class counts set by largest remainder. Within a
/// bucket samples are drawn without replacement until it is exhausted,
/// then with replacement.
pub fn mix_curriculum(
    buckets: &CurriculumBuckets,
    batch_size: usize,
    ratio: [u32; 3],
    seed: u64,
) -> Result<CurriculumBatch, CurriculumError> {
    if batch_size == 0 {
        return Ok(CurriculumBatch {
            samples: Vec::new(),
            counts: [0; 3],
        });
    }
    for i in 0..3 {
        if ratio[i] > 0 && buckets.bucket(i).is_empty() {
            return Err(CurriculumError::Config(format!(
                "bucket {} is empty but has ratio weight {}",
                ["easy", "medium", "hard"][i],
                ratio[i]
            )));
        }
    }
    let counts = largest_remainder(batch_size, &ratio)?;
    let mut rng = substream(seed, "curriculum-mix", 0);
    let mut samples = Vec::with_capacity(batch_size);
    for (i, &n) in counts.iter().enumerate() {
        let pool = buckets.bucket(i);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        for j in 0..n {
            let idx = match order.get(j) {
                Some(&idx) => idx,
                None => rng.random_range(0..pool.len()),
            };
            samples.push(pool[idx].clone());
        }
    }
    Ok(CurriculumBatch {
        samples,
        counts: [counts[0], counts[1], counts[2]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

pub fn classify_difficulty(computation: u8, thinking: u8) -> Result<Difficulty, CurriculumError> {
    if !(1..=5).contains(&computation) || !(1..=5).contains(&thinking) {
        return Err(CurriculumError::Config(format!(
            "complexities must lie in 1..=5, got ({computation}, {thinking})"
        )));
    }
    Ok(if computation <= 2 && thinking <= 2 {
        Difficulty::Easy
    } else {
        Difficulty::Hard
    })
}

pub const META_PROMPT_FAST: &str = "META_PROMPT: system 1";
pub const META_PROMPT_SLOW: &str = "META_PROMPT: system 2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    Direct,
    ThinkBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSample {
    #[serde(flatten)]
    pub base: DataSample,
    pub response: String,
    pub mode: ThinkingMode,
    /// Empty in adaptive mode.
    pub meta_prompt: String,
    pub response_format: ResponseFormat,
}

/// Balances and merges fast (easy) and slow (hard) samples. Each side is
/// cut to `floor(min(|easy|, |hard|) * balance)` entries, fast first.
pub fn build_fusion_dataset(
    easy: &[(DataSample, String)],
    hard: &[(DataSample, String)],
    balance: f64,
    manual_mode: bool,
) -> Result<Vec<FusionSample>, CurriculumError> {
    if !(balance > 0.0 && balance <= 1.0) {
        return Err(CurriculumError::Config("balance must lie in (0, 1]".into()));
    }
    let n = ((easy.len().min(hard.len()) as f64) * balance).floor() as usize;
    let mut out = Vec::with_capacity(2 * n);
    for (s, r) in &easy[..n] {
        out.push(FusionSample {
            base: s.clone(),
            response: r.trim().to_string(),
            mode: ThinkingMode::Fast,
            meta_prompt: if manual_mode { META_PROMPT_FAST.into() } else { String::new() },
            response_format: ResponseFormat::Direct,
        });
    }
    for (s, r) in &hard[..n] {
        let Some((reasoning, summary)) = split_think_block(r) else {
            return Err(CurriculumError::Format(format!(
                "slow response for `{}` lacks a single leading think block",
                s.id
            )));
        };
        out.push(FusionSample {
            base: s.clone(),
            response: format!("<think>{reasoning}</think>{summary}"),
            mode: ThinkingMode::Slow,
            meta_prompt: if manual_mode { META_PROMPT_SLOW.into() } else { String::new() },
            response_format: ResponseFormat::ThinkBlock,
        });
    }
    Ok(out)
}

pub fn detect_thinking_mode(response: &str) -> Result<ThinkingMode, CurriculumError> {
    let tags = scan_think_tags(response);
    if !tags.balanced || tags.opens != tags.closes {
        return Err(CurriculumError::Format("unbalanced think tags".into()));
    }
    Ok(if tags.leading {
        ThinkingMode::Slow
    } else {
        ThinkingMode::Fast
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskLabel;

    struct Scripted(Vec<bool>);

    impl Solver for Scripted {
        fn solve(&self, _: &DataSample, _: f64, rng: &mut ChaCha8Rng) -> Result<String, String> {
            let i = rng.random_range(0..self.0.len());
            Ok(if self.0[i] { "ok" } else { "no" }.into())
        }
    }

    struct Always(bool);

    impl Solver for Always {
        fn solve(&self, _: &DataSample, _: f64, _: &mut ChaCha8Rng) -> Result<String, String> {
            Ok(if self.0 { "ok" } else { "no" }.into())
        }
    }

    struct Literal;

    impl Verifier for Literal {
        fn verify(&self, _: &DataSample, r: &str) -> Result<bool, String> {
            match r {
                "ok" => Ok(true),
                "no" => Ok(false),
                _ => Err("garbled".into()),
            }
        }
    }

    fn s(id: &str) -> DataSample {
        DataSample::new(id, format!("prompt {id}"), TaskLabel::Math).with_answer("1")
    }

    #[test]
    fn complexity_examples() {
        let cfg = SelectionConfig::default();
        assert_eq!(complexity_score(&s("a"), &Always(true), &cfg, &Literal).unwrap().value, 0.0);
        assert_eq!(complexity_score(&s("a"), &Always(false), &cfg, &Literal).unwrap().value, 1.0);
        assert_eq!(ComplexityScore::from_passes(4, 8).unwrap().value, 0.5);
        let c = complexity_score(&s("a"), &Scripted(vec![true, false]), &cfg, &Literal).unwrap();
        assert_eq!(c, complexity_score(&s("a"), &Scripted(vec![true, false]), &cfg, &Literal).unwrap());
        assert!(ComplexityScore::from_passes(9, 8).is_err());
    }

    #[test]
    fn verifier_failure_is_an_error() {
        struct Garbled;
        impl Solver for Garbled {
            fn solve(&self, _: &DataSample, _: f64, _: &mut ChaCha8Rng) -> Result<String, String> {
                Ok("???".into())
            }
        }
        assert!(matches!(
            complexity_score(&s("a"), &Garbled, &SelectionConfig::default(), &Literal),
            Err(CurriculumError::Verifier { .. })
        ));
    }

    #[test]
    fn selection_probability_examples() {
        assert_eq!(selection_probability(0.45, 0.45, 0.2), 1.0);
        assert!((selection_probability(0.65, 0.45, 0.2) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((selection_probability(0.75, 0.45, 0.2) - selection_probability(0.15, 0.45, 0.2)).abs() < 1e-15);
        assert!(selection_probability(0.5, 0.45, 1e-9) < 1e-300);
    }

    #[test]
    fn few_shot_only_on_first_iteration() {
        let cfg = SelectionConfig {
            few_shot_prefix: "Q: 1 + 1 mod 3 A: 2".into(),
            ..SelectionConfig::default()
        };
        let samples = vec![s("a"), s("b")];
        let scores = vec![ComplexityScore::from_passes(4, 8).unwrap(); 2];
        let first = select_from_scores(&samples, &scores, &SelectionConfig { mu: 0.5, ..cfg.clone() }, 1).unwrap();
        assert_eq!(first.len(), 2);
        assert!(first.iter().all(|x| x.few_shot.is_some()));
        let second = select_from_scores(&samples, &scores, &SelectionConfig { mu: 0.5, ..cfg }, 2).unwrap();
        assert!(second.iter().all(|x| x.few_shot.is_none()));
    }

    #[test]
    fn buckets_partition() {
        let samples: Vec<DataSample> = (0..50).map(|i| s(&format!("s{i}"))).collect();
        let mut rng = substream(1, "b", 0);
        let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..=1.0)).collect();
        let b = bucket_by_complexity(&samples, &scores, 0.2, 0.8).unwrap();
        assert_eq!(b.sizes().iter().sum::<usize>(), 50);
        let all: Vec<&DataSample> = b.easy.iter().chain(&b.medium).chain(&b.hard).collect();
        for x in &samples {
            assert_eq!(all.iter().filter(|y| y.id == x.id).count(), 1);
        }
        let edge = bucket_by_complexity(&samples[..3], &[0.0, 1.0, 0.5], 0.2, 0.8).unwrap();
        assert_eq!(edge.sizes(), [1, 1, 1]);
        assert_eq!(edge.medium[0].id, "s2");
        assert!(bucket_by_complexity(&samples[..1], &[0.5], 0.8, 0.2).is_err());
    }

    #[test]
    fn mixing_counts() {
        assert_eq!(largest_remainder(512, &[1, 7, 2]).unwrap(), vec![51, 359, 102]);
        assert_eq!(largest_remainder(10, &[1, 7, 2]).unwrap(), vec![1, 7, 2]);
        assert_eq!(largest_remainder(7, &[0, 1, 0]).unwrap(), vec![0, 7, 0]);
        let b = CurriculumBuckets {
            easy: vec![s("e")],
            medium: (0..3).map(|i| s(&format!("m{i}"))).collect(),
            hard: vec![],
            low: 0.125,
            high: 0.875,
        };
        let batch = mix_curriculum(&b, 10, [0, 1, 0], 3).unwrap();
        assert_eq!(batch.counts, [0, 10, 0]);
        // first three draws exhaust the bucket without replacement
        let mut first: Vec<&str> = batch.samples[..3].iter().map(|x| x.id.as_str()).collect();
        first.sort();
        assert_eq!(first, vec!["m0", "m1", "m2"]);
        assert!(mix_curriculum(&b, 10, [1, 7, 2], 3).is_err());
        assert_eq!(effective_ratio(&b, [1, 7, 2]), [1, 7, 0]);
        assert!(mix_curriculum(&b, 0, [1, 7, 2], 3).unwrap().samples.is_empty());
    }

    #[test]
    fn difficulty_grid() {
        for c in 1..=5 {
            for t in 1..=5 {
                let want = if c <= 2 && t <= 2 { Difficulty::Easy } else { Difficulty::Hard };
                assert_eq!(classify_difficulty(c, t).unwrap(), want);
            }
        }
        assert!(classify_difficulty(0, 1).is_err());
        assert!(classify_difficulty(1, 6).is_err());
    }

    #[test]
    fn fusion() {
        let easy = vec![(s("e1"), "4".to_string()), (s("e2"), "5".to_string())];
        let hard = vec![
            (s("h1"), "<think>a</think>b".to_string()),
            (s("h2"), "<think>c</think>d".to_string()),
        ];
        let out = build_fusion_dataset(&easy, &hard, 1.0, true).unwrap();
        assert_eq!(out.iter().filter(|f| f.mode == ThinkingMode::Fast).count(), 2);
        assert_eq!(out.iter().filter(|f| f.mode == ThinkingMode::Slow).count(), 2);
        for f in &out {
            assert_eq!(f.mode == ThinkingMode::Slow, f.response_format == ResponseFormat::ThinkBlock);
            if f.mode == ThinkingMode::Slow {
                assert_eq!(f.response.matches("<think>").count(), 1);
                assert_eq!(f.meta_prompt, META_PROMPT_SLOW);
            }
        }
        let json = serde_json::to_string(&out[2]).unwrap();
        assert!(json.contains("\"mode\":\"slow\"") && json.contains("\"id\":\"h1\""));
        let back: FusionSample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out[2]);
        let bad = vec![(s("h1"), "no block".to_string())];
        assert!(build_fusion_dataset(&easy, &bad, 1.0, false).is_err());
    }

    #[test]
    fn thinking_mode() {
        assert_eq!(detect_thinking_mode("<think>steps</think>answer").unwrap(), ThinkingMode::Slow);
        assert_eq!(detect_thinking_mode("answer").unwrap(), ThinkingMode::Fast);
        assert!(detect_thinking_mode("<think>steps").is_err());
    }
}
