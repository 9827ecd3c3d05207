use rand::seq::SliceRandom;

use super::{PolicyError, TokenId, Vocab};
use crate::data::{Annotations, DataSample, TaskLabel};
use crate::rng::substream;

pub const MIN_MODULUS: u32 = 2;
pub const MAX_MODULUS: u32 = 10;

/// Number of distinct `(a, b, m)` problems with `a, b < m`.
pub const NUM_TOY_PROBLEMS: usize = 384;

/// `a + b mod m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToyProblem {
    pub a: u32,
    pub b: u32,
    pub m: u32,
}

impl ToyProblem {
    pub fn new(a: u32, b: u32, m: u32) -> Result<Self, PolicyError> {
        if !(MIN_MODULUS..=MAX_MODULUS).contains(&m) || a >= m || b >= m {
            return Err(PolicyError::Task(format!("no toy problem {a} + {b} mod {m}")));
        }
        Ok(Self { a, b, m })
    }

    pub fn answer(&self) -> u32 {
        (self.a + self.b) % self.m
    }

    /// Position in the canonical enumeration (m ascending, then a, then b).
    pub fn index(&self) -> usize {
        let before: u32 = (MIN_MODULUS..self.m).map(|m| m * m).sum();
        (before + self.a * self.m + self.b) as usize
    }

    pub fn from_index(index: usize) -> Result<Self, PolicyError> {
        let mut rest = index as u32;
        for m in MIN_MODULUS..=MAX_MODULUS {
            if rest < m * m {
                return Ok(Self { a: rest / m, b: rest % m, m });
            }
            rest -= m * m;
        }
        Err(PolicyError::Task(format!("toy index {index} out of range")))
    }

    pub fn prompt(&self) -> String {
        format!("compute {} + {} mod {}", self.a, self.b, self.m)
    }

    pub fn parse(prompt: &str) -> Result<Self, PolicyError> {
        let words: Vec<&str> = prompt.split_whitespace().collect();
        let num = |w: &str| {
            w.parse::<u32>()
                .map_err(|_| PolicyError::Task(format!("not a toy prompt: {prompt:?}")))
        };
        match words.as_slice() {
            ["compute", a, "+", b, "mod", m] => Self::new(num(a)?, num(b)?, num(m)?),
            _ => Err(PolicyError::Task(format!("not a toy prompt: {prompt:?}"))),
        }
    }

    /// `<think> a + b = s </think> r` with `s` the plain sum.
    pub fn reasoning_trace(&self, vocab: &Vocab) -> Vec<TokenId> {
        let text = format!(
            "{} {} + {} = {} {} {}",
            super::THINK_OPEN,
            self.a,
            self.b,
            self.a + self.b,
            super::THINK_CLOSE,
            self.answer()
        );
        vocab.encode(&text).expect("toy trace uses vocabulary symbols")
    }

    /// The bare answer.
    pub fn direct_answer(&self, vocab: &Vocab) -> Vec<TokenId> {
        vocab
            .encode(&self.answer().to_string())
            .expect("digits are in the vocabulary")
    }

    /// Difficulty annotations: sums that wrap are harder than ones that do not.
    pub fn annotations(&self) -> Annotations {
        let wraps = self.a + self.b >= self.m;
        Annotations {
            subcategory: "modular_arithmetic".into(),
            question_type: "calculation".into(),
            verifiable: true,
            computation_complexity: Some(if wraps { 3 } else { 1 }),
            thinking_complexity: Some(if self.m > 6 { 3 } else { 2 }),
        }
    }

    pub fn to_sample(&self, id: impl Into<String>) -> DataSample {
        let mut s = DataSample::new(id, self.prompt(), TaskLabel::Math).with_answer(self.answer().to_string());
        s.annotations = self.annotations();
        s.source = "toy".into();
        s
    }
}

/// `count` verifiable modular-arithmetic samples. Problems are drawn
/// without replacement from a seeded permutation of the canonical set,
/// reshuffling once it is exhausted.
pub fn make_toy_taskset(count: usize, seed: u64) -> Result<Vec<DataSample>, PolicyError> {
    if count == 0 {
        return Err(PolicyError::Task("taskset size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count {
        let mut order: Vec<usize> = (0..NUM_TOY_PROBLEMS).collect();
        order.shuffle(&mut substream(seed, "toy-taskset", round));
        for idx in order.into_iter().take(count - out.len()) {
            let p = ToyProblem::from_index(idx)?;
            out.push(p.to_sample(format!("toy-{:05}", out.len())));
        }
        round += 1;
    }
    Ok(out)
}

/// Policy prompt slot for a toy sample.
pub fn toy_prompt_id(sample: &DataSample) -> Result<usize, PolicyError> {
    Ok(ToyProblem::parse(&sample.prompt)?.index())
}
