//! Local n-gram repetition detection and prompt-controlled self-repair.
//!
//! Every `t_detect` generated tokens the most recent `ngram_size` tokens
//! (the tail) are compared with the `window` tokens just before them. Each
//! side is reduced to its set of contiguous sub-grams of `subgram` tokens
//! and the two sets are compared by Jaccard similarity. When repetition is
//! flagged, a control prompt is appended to the context and later checks
//! only look at tokens after it.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::policy::{TokenGenerator, TokenId};
use crate::rng::ChaCha8Rng;

/// Default natural-language control prompt for text vocabularies.
pub const CONTROL_PROMPT_TEXT: &str = "Hold on: the last passage seems to repeat earlier content. \
Review what has already been established, drop any redundant restatement, \
and continue with a new step toward the answer.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub ngram_size: usize,
    pub window: usize,
    pub subgram: usize,
    pub jaccard_threshold: f64,
    pub t_detect: usize,
    pub control_prompt: Vec<TokenId>,
    /// Inject the control prompt on a flag; otherwise only record it.
    pub self_repair: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            ngram_size: 512,
            window: 1024,
            subgram: 16,
            jaccard_threshold: 0.6,
            t_detect: 2048,
            control_prompt: vec![crate::policy::Vocab::arithmetic().repair()],
            self_repair: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ngram_size == 0 || self.ngram_size > self.window {
            return Err("need 1 <= ngram_size <= window".into());
        }
        if self.subgram == 0 || self.subgram > self.ngram_size {
            return Err("need 1 <= subgram <= ngram_size".into());
        }
        if self.t_detect == 0 {
            return Err("t_detect must be >= 1".into());
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err("jaccard_threshold must lie in (0, 1]".into());
        }
        if self.control_prompt.is_empty() {
            return Err("control prompt must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairAction {
    Flagged,
    PromptInjected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Generated (sampled) tokens so far.
    pub position: usize,
    pub similarity: f64,
    pub action: RepairAction,
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets give 0.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|x| large.contains(*x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Operation counts of one detection call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectorOps {
    pub set_inserts: usize,
    pub set_lookups: usize,
}

impl DetectorOps {
    pub fn total(&self) -> usize {
        self.set_inserts + self.set_lookups
    }
}

/// Tail-vs-window Jaccard over sub-gram sets, or `None` when `tokens` is
/// shorter than `window + ngram_size`.
pub fn tail_similarity(tokens: &[TokenId], cfg: &DetectorConfig) -> Option<(f64, DetectorOps)> {
    let need = cfg.window + cfg.ngram_size;
    if tokens.len() < need {
        return None;
    }
    let region = &tokens[tokens.len() - need..];
    let (window, tail) = region.split_at(cfg.window);
    let mut ops = DetectorOps::default();
    let grams = |s: &[TokenId], ops: &mut DetectorOps| -> HashSet<Vec<TokenId>> {
        let mut set = HashSet::new();
        for g in s.windows(cfg.subgram) {
            ops.set_inserts += 1;
            set.insert(g.to_vec());
        }
        set
    };
    let a = grams(tail, &mut ops);
    let b = grams(window, &mut ops);
    ops.set_lookups += a.len().min(b.len());
    Some((jaccard(&a, &b), ops))
}

/// Runs one check on `tokens` (already restricted to the region after the
/// last reset). `position` is the generated-token count to record.
pub fn detect_local_repetition(tokens: &[TokenId], position: usize, cfg: &DetectorConfig) -> Option<DetectionEvent> {
    let (similarity, _) = tail_similarity(tokens, cfg)?;
    (similarity > cfg.jaccard_threshold).then_some(DetectionEvent {
        position,
        similarity,
        action: RepairAction::Flagged,
    })
}

/// Context of a guarded generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationState {
    pub tokens: Vec<TokenId>,
    pub injected: Vec<bool>,
    /// Detection only considers `tokens[origin..]`.
    pub origin: usize,
    pub generated: usize,
    pub events: Vec<DetectionEvent>,
}

impl GenerationState {
    pub fn push_sampled(&mut self, t: TokenId) {
        self.tokens.push(t);
        self.injected.push(false);
        self.generated += 1;
    }

    /// Tokens that count toward rewards and statistics.
    pub fn sampled_tokens(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .zip(&self.injected)
            .filter(|(_, &i)| !i)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Appends the control prompt (marked as injected), moves the detection
/// origin past it and records the injection.
pub fn inject_control_prompt(state: &mut GenerationState, cfg: &DetectorConfig, similarity: f64) {
    state.tokens.extend_from_slice(&cfg.control_prompt);
    state.injected.extend(std::iter::repeat_n(true, cfg.control_prompt.len()));
    state.origin = state.tokens.len();
    state.events.push(DetectionEvent {
        position: state.generated,
        similarity,
        action: RepairAction::PromptInjected,
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutput {
    pub tokens: Vec<TokenId>,
    pub injected: Vec<bool>,
    pub events: Vec<DetectionEvent>,
    /// Stopped at `max_len` generated tokens without end-of-sequence.
    pub truncated: bool,
}

impl RepairOutput {
    pub fn flagged(&self) -> usize {
        self.events.iter().filter(|e| e.action == RepairAction::Flagged).count()
    }

    pub fn injections(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.action == RepairAction::PromptInjected)
            .count()
    }

    /// The output with injected control prompts stripped.
    pub fn sampled_tokens(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .zip(&self.injected)
            .filter(|(_, &i)| !i)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Generates up to `max_len` tokens from `generator`, checking for local
/// repetition every `t_detect` generated tokens. With no flags the output
/// and random draws are identical to unguarded generation.
pub fn self_repair_generate(
    generator: &dyn TokenGenerator,
    max_len: usize,
    cfg: &DetectorConfig,
    rng: &mut ChaCha8Rng,
) -> RepairOutput {
    let mut state = GenerationState::default();
    let mut truncated = true;
    while state.generated < max_len {
        let t = generator.next_token(&state.tokens, rng);
        state.push_sampled(t);
        if t == generator.eos() {
            truncated = false;
            break;
        }
        if state.generated % cfg.t_detect == 0 {
            if let Some(event) = detect_local_repetition(&state.tokens[state.origin..], state.generated, cfg) {
                let sim = event.similarity;
                state.events.push(event);
                if cfg.self_repair {
                    inject_control_prompt(&mut state, cfg, sim);
                }
            }
        }
    }
    RepairOutput {
        tokens: state.tokens,
        injected: state.injected,
        events: state.events,
        truncated,
    }
}

/// A generator stuck in a verbatim loop until it sees the control prompt,
/// after which it emits an escape sequence and ends.
#[derive(Debug, Clone)]
pub struct ForcedLoopGenerator {
    pub phrase: Vec<TokenId>,
    pub escape: Vec<TokenId>,
    pub control: Vec<TokenId>,
    pub eos: TokenId,
}

impl ForcedLoopGenerator {
    /// Only the tail is searched: output ends right after the escape.
    fn control_end(&self, context: &[TokenId]) -> Option<usize> {
        let n = self.control.len();
        let from = context.len().saturating_sub(self.escape.len() + 1).max(n);
        (from..=context.len())
            .rev()
            .find(|&end| context[end - n..end] == self.control[..])
    }
}

impl TokenGenerator for ForcedLoopGenerator {
    fn eos(&self) -> TokenId {
        self.eos
    }

    fn next_token(&self, context: &[TokenId], _rng: &mut ChaCha8Rng) -> TokenId {
        match self.control_end(context) {
            Some(end) => {
                let k = context.len() - end;
                self.escape.get(k).copied().unwrap_or(self.eos)
            }
            None => self.phrase[context.len() % self.phrase.len()],
        }
    }
}
