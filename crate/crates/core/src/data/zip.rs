//! Greedy diversity selection by compression ratio.
//!
//! The ratio used throughout is `raw_bytes / compressed_bytes`: redundant
//! text compresses well and scores high, diverse text scores low. Selection
//! seeds with the lowest-ratio sample and then repeatedly adds the candidate
//! whose concatenation with the recently selected text has the lowest ratio.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rayon::prelude::*;

use super::{DataError, DataSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compressor {
    Deflate { level: u32 },
}

impl Compressor {
    pub fn id(&self) -> String {
        match self {
            Compressor::Deflate { level } => format!("deflate-{level}"),
        }
    }

    pub fn parse(id: &str) -> Result<Self, DataError> {
        match id.strip_prefix("deflate-").map(str::parse::<u32>) {
            Some(Ok(level)) if level <= 9 => Ok(Compressor::Deflate { level }),
            _ => Err(DataError::Config(format!("unknown compressor `{id}`"))),
        }
    }

    pub fn compressed_len(&self, bytes: &[u8]) -> Result<usize, DataError> {
        match *self {
            Compressor::Deflate { level } => {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(level));
                enc.write_all(bytes)
                    .map_err(|e| DataError::Compressor(e.to_string()))?;
                let out = enc.finish().map_err(|e| DataError::Compressor(e.to_string()))?;
                Ok(out.len())
            }
        }
    }
}

impl Default for Compressor {
    fn default() -> Self {
        Compressor::Deflate { level: 6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipSelectConfig {
    pub budget: usize,
    pub compressor: Compressor,
    /// Bytes of recently selected text kept in the comparison window.
    pub chunk_size: usize,
}

impl ZipSelectConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            compressor: Compressor::default(),
            chunk_size: 64 * 1024,
        }
    }
}

pub fn compression_ratio(compressor: &Compressor, bytes: &[u8]) -> Result<f64, DataError> {
    let c = compressor.compressed_len(bytes)?;
    if c == 0 {
        return Err(DataError::Compressor("compressor produced no output".into()));
    }
    Ok(bytes.len() as f64 / c as f64)
}

/// Returns exactly `cfg.budget` samples in selection order.
pub fn zip_select(
    samples: Vec<DataSample>,
    cfg: &ZipSelectConfig,
) -> Result<Vec<DataSample>, DataError> {
    if cfg.budget == 0 {
        return Err(DataError::Config("zip budget must be at least 1".into()));
    }
    if cfg.budget > samples.len() {
        return Err(DataError::Config(format!(
            "budget {} exceeds pool size {}",
            cfg.budget,
            samples.len()
        )));
    }
    if cfg.chunk_size == 0 {
        return Err(DataError::Config("chunk_size must be positive".into()));
    }
    let texts: Vec<&[u8]> = samples.iter().map(|s| s.prompt.as_bytes()).collect();
    let individual: Vec<f64> = texts
        .par_iter()
        .map(|t| compression_ratio(&cfg.compressor, t))
        .collect::<Result<_, _>>()?;

    let mut remaining: Vec<usize> = (0..samples.len()).collect();
    let seed = best(&samples, &remaining, |i| individual[i]);
    remaining.retain(|&i| i != seed);
    let mut order = vec![seed];
    let mut selected_text: Vec<u8> = texts[seed].to_vec();

    while order.len() < cfg.budget {
        let start = selected_text.len().saturating_sub(cfg.chunk_size);
        let window = &selected_text[start..];
        let ratios: Vec<(usize, f64)> = remaining
            .par_iter()
            .map(|&i| {
                let mut buf = Vec::with_capacity(window.len() + 1 + texts[i].len());
                buf.extend_from_slice(window);
                buf.push(b'\n');
                buf.extend_from_slice(texts[i]);
                compression_ratio(&cfg.compressor, &buf).map(|r| (i, r))
            })
            .collect::<Result<_, _>>()?;
        let lookup = |i: usize| ratios.iter().find(|(j, _)| *j == i).map(|(_, r)| *r).unwrap();
        let pick = best(&samples, &remaining, lookup);
        remaining.retain(|&i| i != pick);
        order.push(pick);
        selected_text.push(b'\n');
        selected_text.extend_from_slice(texts[pick]);
    }

    let mut slots: Vec<Option<DataSample>> = samples.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

/// Index with the lowest score; ties go to the lowest sample id.
fn best(samples: &[DataSample], candidates: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &i in &candidates[1..] {
        let s = score(i);
        if s < best_score || (s == best_score && samples[i].id < samples[best].id) {
            best = i;
            best_score = s;
        }
    }
    best
}
