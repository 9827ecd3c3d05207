//! Two-stage math answer checking: a rule-based extractor and normalizer,
//! with a pluggable judge consulted only when the rules cannot parse.

use super::MarsError;

const NUMERIC_TOLERANCE: f64 = 1e-9;

/// Fallback verifier consulted when rule-based extraction fails. Returns
/// `None` when it, too, cannot reach a verdict.
pub trait MathJudge: Send + Sync {
    fn judge(&self, response: &str, ground_truth: &str) -> Option<bool>;
}

/// Deterministic stand-in for a model-based judge: compares the last
/// whitespace-separated word of the response with the ground truth after
/// whitespace and case normalization.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl MathJudge for ExactMatchJudge {
    fn judge(&self, response: &str, ground_truth: &str) -> Option<bool> {
        let last = response.split_whitespace().last().unwrap_or("");
        Some(normalize_symbolic(last) == normalize_symbolic(ground_truth))
    }
}

/// The final answer in `response`: the last `\boxed{...}`, else the text
/// after the last `answer:` label, else the last number.
pub fn extract_final_answer(response: &str) -> Option<String> {
    if let Some(b) = last_boxed(response) {
        return Some(b.trim().to_string());
    }
    let lower = response.to_lowercase();
    if let Some(i) = lower.rfind("answer:") {
        let tail = response[i + "answer:".len()..].trim();
        let line = tail.lines().next().unwrap_or("").trim().trim_end_matches('.');
        if !line.is_empty() {
            return Some(line.to_string());
        }
    }
    last_number(response)
}

fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Last `[-]digits[.digits][/digits]` run in the text.
fn last_number(text: &str) -> Option<String> {
    let b = text.as_bytes();
    let mut found = None;
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let mut start = i;
            if start > 0 && b[start - 1] == b'-' && (start < 2 || !b[start - 2].is_ascii_alphanumeric()) {
                start -= 1;
            }
            let mut j = i;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            for sep in *b"./" {
                if j + 1 < b.len() && b[j] == sep && b[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            found = Some(text[start..j].to_string());
            i = j;
        } else {
            i += 1;
        }
    }
    found
}

/// Parses integers, decimals and `p/q` fractions (whitespace ignored).
pub fn parse_numeric(text: &str) -> Option<f64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.trim_start_matches('+');
    if let Some((p, q)) = s.split_once('/') {
        let (p, q) = (parse_decimal(p)?, parse_decimal(q)?);
        if q == 0.0 {
            return None;
        }
        return Some(p / q);
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix('-').unwrap_or(s);
    let valid = !body.is_empty()
        && body.chars().all(|c| c.is_ascii_digit() || c == '.')
        && body.chars().filter(|&c| c == '.').count() <= 1
        && body.chars().any(|c| c.is_ascii_digit());
    if !valid {
        return None;
    }
    s.parse().ok()
}

fn normalize_symbolic(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Rule-stage comparison of an extracted answer against the ground truth.
pub fn answers_match(answer: &str, ground_truth: &str) -> bool {
    match (parse_numeric(answer), parse_numeric(ground_truth)) {
        (Some(a), Some(b)) => (a - b).abs() <= NUMERIC_TOLERANCE * a.abs().max(b.abs()).max(1.0),
        _ => normalize_symbolic(answer) == normalize_symbolic(ground_truth),
    }
}

pub fn verify_math(
    response: &str,
    ground_truth: &str,
    judge: Option<&dyn MathJudge>,
) -> Result<bool, MarsError> {
    if let Some(answer) = extract_final_answer(response) {
        return Ok(answers_match(&answer, ground_truth));
    }
    match judge {
        Some(j) => j.judge(response, ground_truth).ok_or_else(|| MarsError::Unverifiable {
            reason: "judge returned no verdict".into(),
        }),
        None => Err(MarsError::Unverifiable {
            reason: "no final answer found and no judge configured".into(),
        }),
    }
}
