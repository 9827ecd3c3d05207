//! Training-pool records, their line-delimited JSON persistence, and the
//! ingestion stages that run before any model sees the data: rule-based
//! prior filtering, MinHash-LSH near-duplicate removal, and
//! compression-ratio diversity selection.

mod dedup;
mod zip;

pub use dedup::{exact_jaccard, minhash_dedup, shingle_hashes, DedupConfig, MinHasher, Signature};
pub use zip::{compression_ratio, zip_select, Compressor, ZipSelectConfig};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id `{id}`")]
    DuplicateId { id: String },
    #[error("sample `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("{0}")]
    Config(String),
    #[error("compressor failure: {0}")]
    Compressor(String),
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLabel {
    Math,
    Code,
    General,
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskLabel::Math => "math",
            TaskLabel::Code => "code",
            TaskLabel::General => "general",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    #[serde(default)]
    pub subcategory: String,
    #[serde(default)]
    pub question_type: String,
    #[serde(default)]
    pub verifiable: bool,
    /// Computation complexity, 1..=5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub computation_complexity: Option<u8>,
    /// Thinking complexity, 1..=5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking_complexity: Option<u8>,
}

/// One executable check for a code task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeTestCase {
    pub input: String,
    pub expected_output: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSample {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub reference_answer: Option<String>,
    pub task_label: TaskLabel,
    #[serde(default)]
    pub annotations: Annotations,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_cases: Vec<CodeTestCase>,
}

impl DataSample {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, task_label: TaskLabel) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            reference_answer: None,
            task_label,
            annotations: Annotations::default(),
            source: String::new(),
            test_cases: Vec::new(),
        }
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.reference_answer = Some(answer.into());
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.id.is_empty() {
            return Err(DataError::Invalid {
                id: self.id.clone(),
                message: "empty id".into(),
            });
        }
        for (name, v) in [
            ("computation_complexity", self.annotations.computation_complexity),
            ("thinking_complexity", self.annotations.thinking_complexity),
        ] {
            if let Some(v) = v {
                if !(1..=5).contains(&v) {
                    return Err(DataError::Invalid {
                        id: self.id.clone(),
                        message: format!("{name} = {v} outside 1..=5"),
                    });
                }
            }
        }
        if self.test_cases.iter().any(|t| t.timeout_ms == 0) {
            return Err(DataError::Invalid {
                id: self.id.clone(),
                message: "test case timeout must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Rejects datasets whose ids are not unique.
pub fn check_unique_ids(samples: &[DataSample]) -> Result<(), DataError> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            return Err(DataError::DuplicateId { id: s.id.clone() });
        }
    }
    Ok(())
}

/// A named predicate used by [`prior_filter`].
pub struct FilterRule {
    name: String,
    predicate: Box<dyn Fn(&DataSample) -> bool + Send + Sync>,
}

impl fmt::Debug for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterRule").field("name", &self.name).finish()
    }
}

impl FilterRule {
    pub fn new(
        name: impl Into<String>,
        predicate: impl Fn(&DataSample) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            predicate: Box::new(predicate),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn verifiable_only() -> Self {
        Self::new("verifiable", |s| s.annotations.verifiable)
    }

    pub fn question_type_not_in(types: &[&str]) -> Self {
        let banned: Vec<String> = types.iter().map(|t| t.to_string()).collect();
        Self::new("question_type", move |s| {
            !banned.contains(&s.annotations.question_type)
        })
    }

    /// Heuristic quality gate on prompt length in whitespace-separated words.
    pub fn prompt_words_between(min: usize, max: usize) -> Self {
        Self::new("prompt_length", move |s| {
            let n = s.prompt.split_whitespace().count();
            (min..=max).contains(&n)
        })
    }

    pub fn has_reference_answer() -> Self {
        Self::new("has_reference", |s| {
            s.reference_answer.as_deref().is_some_and(|a| !a.trim().is_empty())
        })
    }

    pub fn matches(&self, sample: &DataSample) -> bool {
        (self.predicate)(sample)
    }
}

/// Keeps the samples that pass every rule, in input order.
pub fn prior_filter(
    samples: Vec<DataSample>,
    rules: &[FilterRule],
) -> Result<Vec<DataSample>, DataError> {
    check_unique_ids(&samples)?;
    Ok(samples
        .into_iter()
        .filter(|s| rules.iter().all(|r| r.matches(s)))
        .collect())
}

/// Reads any line-delimited JSON record type. Blank lines are skipped;
/// errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| DataError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DataSample>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out: Vec<DataSample> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed { line: i + 1, message };
        let sample: DataSample = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        sample.validate().map_err(|e| malformed(e.to_string()))?;
        if !seen.insert(sample.id.clone()) {
            return Err(malformed(format!("duplicate sample id `{}`", sample.id)));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[DataSample], path: &Path) -> Result<(), DataError> {
    write_jsonl(samples, path)
}
