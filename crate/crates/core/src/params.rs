//! Parameter vectors, checkpoint files, and inter-iteration delta merging.
//!
//! A merged model for iteration `t` is the previous merged model plus a
//! `lambda_t`-scaled average of the deltas of that iteration's checkpoints:
//!
//! ```text
//! merged_t = merged_{t-1} + lambda_t * (1/N_t) * sum_i (ckpt_i - merged_{t-1})
//! ```
//!
//! Checkpoint files are a fixed 20-byte header followed by little-endian
//! `f64` values:
//!
//! ```text
//! offset 0   magic    b"RSNCKPT\0"
//! offset 8   version  u32 LE (currently 1)
//! offset 12  dim      u64 LE
//! offset 20  values   dim * f64 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("parameter vector must have positive dimension")]
    Empty,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("checkpoint set must contain at least one checkpoint")]
    NoCheckpoints,
    #[error("merge weight lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A flat, finite, non-empty parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        if values.is_empty() {
            return Err(ParamError::Empty);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Result<Self, ParamError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mutable access for optimizers. Callers must keep values finite;
    /// [`ParamVector::validate`] re-checks the invariant.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check_finite(&self.0)
    }
}

fn check_finite(values: &[f64]) -> Result<(), ParamError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ParamError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// The `N_t` checkpoints collected during one iteration.
#[derive(Debug, Clone)]
pub struct CheckpointSet {
    checkpoints: Vec<ParamVector>,
    iteration: usize,
}

impl CheckpointSet {
    pub fn new(checkpoints: Vec<ParamVector>, iteration: usize) -> Result<Self, ParamError> {
        let first = checkpoints.first().ok_or(ParamError::NoCheckpoints)?;
        let dim = first.dim();
        if let Some(bad) = checkpoints.iter().find(|c| c.dim() != dim) {
            return Err(ParamError::DimMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self {
            checkpoints,
            iteration: iteration.max(1),
        })
    }

    pub fn checkpoints(&self) -> &[ParamVector] {
        &self.checkpoints
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn dim(&self) -> usize {
        self.checkpoints[0].dim()
    }
}

/// Per-iteration merge weights. Iterations past the end of `lambdas` reuse
/// the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub lambdas: Vec<f64>,
    /// Number of trailing optimizer steps snapshotted per iteration.
    pub checkpoints_per_iteration: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![1.0],
            checkpoints_per_iteration: 4,
        }
    }
}

impl MergeConfig {
    pub fn lambda_for(&self, iteration: usize) -> f64 {
        let idx = iteration.saturating_sub(1).min(self.lambdas.len().saturating_sub(1));
        self.lambdas.get(idx).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if let Some(&bad) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(ParamError::BadLambda(bad));
        }
        if self.checkpoints_per_iteration == 0 {
            return Err(ParamError::NoCheckpoints);
        }
        Ok(())
    }
}

/// `(1/N) * sum_i (ckpt_i - reference)`, elementwise.
pub fn average_delta(
    checkpoints: &CheckpointSet,
    reference: &ParamVector,
) -> Result<ParamVector, ParamError> {
    if checkpoints.dim() != reference.dim() {
        return Err(ParamError::DimMismatch {
            expected: reference.dim(),
            found: checkpoints.dim(),
        });
    }
    let n = checkpoints.len() as f64;
    let mut acc = vec![0.0; reference.dim()];
    for ckpt in checkpoints.checkpoints() {
        for ((a, c), r) in acc.iter_mut().zip(ckpt.as_slice()).zip(reference.as_slice()) {
            *a += c - r;
        }
    }
    for a in &mut acc {
        *a /= n;
    }
    ParamVector::new(acc)
}

pub fn merge_iteration(
    prev_merged: &ParamVector,
    checkpoints: &CheckpointSet,
    lambda: f64,
) -> Result<ParamVector, ParamError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ParamError::BadLambda(lambda));
    }
    prev_merged.validate()?;
    for c in checkpoints.checkpoints() {
        c.validate()?;
    }
    // N_t = 1, lambda = 1 must reproduce the checkpoint bit for bit.
    if lambda == 1.0 && checkpoints.len() == 1 {
        if checkpoints.dim() != prev_merged.dim() {
            return Err(ParamError::DimMismatch {
                expected: prev_merged.dim(),
                found: checkpoints.dim(),
            });
        }
        return Ok(checkpoints.checkpoints()[0].clone());
    }
    let delta = average_delta(checkpoints, prev_merged)?;
    let merged = prev_merged
        .as_slice()
        .iter()
        .zip(delta.as_slice())
        .map(|(p, d)| p + lambda * d)
        .collect();
    ParamVector::new(merged)
}

pub fn encode_checkpoint(p: &ParamVector) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * p.dim());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.dim() as u64).to_le_bytes());
    for v in p.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamVector, ParamError> {
    if bytes.len() < HEADER_LEN {
        return Err(ParamError::Corrupt(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ParamError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ParamError::Corrupt(format!("unsupported version {version}")));
    }
    let dim = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = dim.checked_mul(8).ok_or_else(|| ParamError::Corrupt("dim overflow".into()))?;
    if body.len() != expected {
        return Err(ParamError::Corrupt(format!(
            "header declares {dim} values ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(values).map_err(|e| ParamError::Corrupt(e.to_string()))
}

/// Writes atomically: the bytes go to a sibling temp file which is then
/// renamed over `path`.
pub fn save_checkpoint(p: &ParamVector, path: &Path) -> Result<(), ParamError> {
    let bytes = encode_checkpoint(p);
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("ckpt")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector, ParamError> {
    decode_checkpoint(&fs::read(path)?)
}
