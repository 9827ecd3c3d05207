//! MinHash signatures with LSH banding for near-duplicate removal.
//!
//! Shingles are word-level n-grams (lowercased). Each shingle is hashed
//! with FNV-1a and pushed through `num_hashes` universal hash functions
//! `h_i(x) = (a_i * x + b_i) mod (2^61 - 1)` whose coefficients come from
//! the dedup seed.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;

use super::{DataError, DataSample};
use crate::rng::{fnv1a, substream};

const MERSENNE_61: u64 = (1 << 61) - 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DedupConfig {
    pub ngram_size: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            ngram_size: 5,
            num_hashes: 128,
            bands: 32,
            rows: 4,
            threshold: 0.8,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.ngram_size == 0 || self.num_hashes == 0 || self.bands == 0 || self.rows == 0 {
            return Err(DataError::Config("dedup sizes must be positive".into()));
        }
        if self.bands * self.rows != self.num_hashes {
            return Err(DataError::Config(format!(
                "bands ({}) x rows ({}) must equal num_hashes ({})",
                self.bands, self.rows, self.num_hashes
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(DataError::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Sorted, deduplicated 64-bit hashes of the word n-grams of `text`. Texts
/// shorter than `n` words contribute a single shingle of all their words.
pub fn shingle_hashes(text: &str, n: usize) -> Vec<u64> {
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_lowercase()).collect();
    if words.is_empty() {
        return Vec::new();
    }
    let width = n.min(words.len());
    let mut out: Vec<u64> = words
        .windows(width)
        .map(|w| fnv1a(w.join("\u{1f}").as_bytes()))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Exact Jaccard similarity of the word n-gram sets of two texts.
pub fn exact_jaccard(a: &str, b: &str, n: usize) -> f64 {
    let sa: HashSet<u64> = shingle_hashes(a, n).into_iter().collect();
    let sb: HashSet<u64> = shingle_hashes(b, n).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u64>);

impl Signature {
    /// Fraction of agreeing positions; the MinHash estimate of Jaccard.
    pub fn estimate(&self, other: &Signature) -> f64 {
        let agree = self.0.iter().zip(&other.0).filter(|(a, b)| a == b).count();
        agree as f64 / self.0.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct MinHasher {
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(num_hashes: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "minhash", 0);
        let coeffs = (0..num_hashes)
            .map(|_| {
                (
                    rng.random_range(1..MERSENNE_61),
                    rng.random_range(0..MERSENNE_61),
                )
            })
            .collect();
        Self { coeffs }
    }

    pub fn signature(&self, shingles: &[u64]) -> Signature {
        let mut mins = vec![u64::MAX; self.coeffs.len()];
        for &s in shingles {
            let x = (s % MERSENNE_61) as u128;
            for (slot, &(a, b)) in mins.iter_mut().zip(&self.coeffs) {
                let h = ((a as u128 * x + b as u128) % MERSENNE_61 as u128) as u64;
                if h < *slot {
                    *slot = h;
                }
            }
        }
        Signature(mins)
    }
}

/// Removes exact and near duplicates, keeping the first occurrence.
///
/// A sample is dropped when its text is byte-identical to an earlier kept
/// sample, or when some earlier kept sample shares an LSH band with it and
/// their estimated Jaccard similarity reaches `cfg.threshold`.
pub fn minhash_dedup(
    samples: Vec<DataSample>,
    cfg: &DedupConfig,
    seed: u64,
) -> Result<Vec<DataSample>, DataError> {
    cfg.validate()?;
    let hasher = MinHasher::new(cfg.num_hashes, seed);
    let signatures: Vec<Signature> = samples
        .par_iter()
        .map(|s| hasher.signature(&shingle_hashes(&s.prompt, cfg.ngram_size)))
        .collect();

    let mut exact: HashSet<&str> = HashSet::new();
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let mut keep = vec![false; samples.len()];

    for (i, sample) in samples.iter().enumerate() {
        if exact.contains(sample.prompt.as_str()) {
            continue;
        }
        let sig = &signatures[i];
        let band_keys: Vec<(usize, u64)> = sig
            .0
            .chunks(cfg.rows)
            .enumerate()
            .map(|(band, rows)| {
                let bytes: Vec<u8> = rows.iter().flat_map(|r| r.to_le_bytes()).collect();
                (band, fnv1a(&bytes))
            })
            .collect();
        let mut candidates: Vec<usize> = band_keys
            .iter()
            .filter_map(|k| buckets.get(k))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        let near_dup = candidates
            .iter()
            .any(|&j| sig.estimate(&signatures[j]) >= cfg.threshold);
        if near_dup {
            continue;
        }
        keep[i] = true;
        exact.insert(sample.prompt.as_str());
        for k in band_keys {
            buckets.entry(k).or_default().push(i);
        }
    }

    Ok(samples
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}
