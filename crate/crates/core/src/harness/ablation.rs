use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, Result};
use crate::policy::{TokenGenerator, TokenId, Vocab};
use crate::repetition::{self_repair_generate, DetectorConfig, ForcedLoopGenerator, RepairAction};
use crate::rng::{substream, ChaCha8Rng};

/// Emits uniformly random digits and stops at a fixed length.
struct NoiseGenerator {
    len: usize,
    digits: Vec<TokenId>,
    eos: TokenId,
}

impl TokenGenerator for NoiseGenerator {
    fn eos(&self) -> TokenId {
        self.eos
    }

    fn next_token(&self, context: &[TokenId], rng: &mut ChaCha8Rng) -> TokenId {
        if context.len() + 1 >= self.len {
            self.eos
        } else {
            self.digits[rng.random_range(0..self.digits.len())]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub setting: String,
    pub sequences: usize,
    /// Sequences with at least one flag.
    pub flagged: usize,
    pub injected: usize,
    pub truncated: usize,
    pub mean_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEvent {
    pub setting: String,
    pub sequence: usize,
    pub position: usize,
    pub similarity: f64,
    pub action: RepairAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub events: Vec<AblationEvent>,
}

/// Guarded generation with and without self-repair over a corpus of
/// scripted generators: even indices loop until prompted, odd ones emit
/// noise and end before `max_len`.
pub fn run_repetition_ablation(cfg: &ExperimentConfig, sequences: usize, max_len: usize) -> Result<AblationReport> {
    cfg.detector.validate().map_err(HarnessError::Config)?;
    if sequences == 0 || max_len == 0 {
        return Err(HarnessError::Config("ablation needs sequences >= 1 and max_len >= 1".into()));
    }
    let vocab = Vocab::arithmetic();
    let digits: Vec<TokenId> = (0..10).map(|d| vocab.id(&d.to_string()).expect("digit")).collect();
    let mut runs = Vec::new();
    let mut events = Vec::new();
    for (setting, repair) in [("baseline", false), ("self_repair", true)] {
        let det = DetectorConfig {
            self_repair: repair,
            ..cfg.detector.clone()
        };
        let mut run = AblationRun {
            setting: setting.into(),
            sequences,
            flagged: 0,
            injected: 0,
            truncated: 0,
            mean_length: 0.0,
        };
        let mut total_len = 0usize;
        for i in 0..sequences {
            let mut script = substream(cfg.seed, "ablation-script", i as u64);
            let mut rng = substream(cfg.seed, "ablation", i as u64);
            let out = if i % 2 == 0 {
                let period = script.random_range(3..=40);
                let phrase = (0..period).map(|_| digits[script.random_range(0..10)]).collect();
                let generator = ForcedLoopGenerator {
                    phrase,
                    escape: vec![vocab.think_close(), digits[script.random_range(0..10)]],
                    control: det.control_prompt.clone(),
                    eos: vocab.eos(),
                };
                self_repair_generate(&generator, max_len, &det, &mut rng)
            } else {
                let generator = NoiseGenerator {
                    len: script.random_range(max_len / 2..max_len.max(2)),
                    digits: digits.clone(),
                    eos: vocab.eos(),
                };
                self_repair_generate(&generator, max_len, &det, &mut rng)
            };
            run.flagged += usize::from(out.flagged() > 0);
            run.injected += out.injections();
            run.truncated += usize::from(out.truncated);
            total_len += out.injected.iter().filter(|&&inj| !inj).count();
            events.extend(out.events.iter().map(|e| AblationEvent {
                setting: setting.into(),
                sequence: i,
                position: e.position,
                similarity: e.similarity,
                action: e.action,
            }));
        }
        run.mean_length = total_len as f64 / sequences as f64;
        runs.push(run);
    }
    Ok(AblationReport { runs, events })
}
