/// Raw (unnormalized) preference score for a response.
pub trait PreferenceScorer: Send + Sync {
    fn raw_score(&self, prompt: &str, response: &str) -> f64;
}

/// Deterministic stand-in for a learned preference model: rewards lexical
/// variety and penalizes distance from a target length in words.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicPreference {
    pub target_words: usize,
}

impl Default for HeuristicPreference {
    fn default() -> Self {
        Self { target_words: 40 }
    }
}

impl PreferenceScorer for HeuristicPreference {
    fn raw_score(&self, _prompt: &str, response: &str) -> f64 {
        let words: Vec<&str> = response.split_whitespace().collect();
        let mut distinct = words.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let variety = distinct.len() as f64 / words.len().max(1) as f64;
        let gap = (words.len() as f64 - self.target_words as f64).abs() / self.target_words.max(1) as f64;
        variety - gap
    }
}

/// Group z-score (population std + 1e-8) squashed through `tanh`.
pub fn normalize_preference(raw: &[f64]) -> Vec<f64> {
    let n = raw.len().max(1) as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    raw.iter().map(|r| ((r - mean) / (std + 1e-8)).tanh()).collect()
}
