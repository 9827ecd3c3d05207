//! Rabin–Karp n-gram repetition penalty.

use std::collections::HashMap;

const MODULUS: u64 = (1 << 61) - 1;
const BASE: u64 = 1_000_003;

fn mulmod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % MODULUS as u128) as u64
}

/// Rolling hashes of every length-`n` window of `symbols`.
pub fn rolling_hashes<T: Copy + Into<u64>>(symbols: &[T], n: usize) -> Vec<u64> {
    if n == 0 || symbols.len() < n {
        return Vec::new();
    }
    let sym = |t: T| t.into() % MODULUS + 1;
    let mut top = 1;
    for _ in 1..n {
        top = mulmod(top, BASE);
    }
    let mut h = 0;
    for &s in &symbols[..n] {
        h = (mulmod(h, BASE) + sym(s)) % MODULUS;
    }
    let mut out = Vec::with_capacity(symbols.len() - n + 1);
    out.push(h);
    for i in n..symbols.len() {
        let drop = mulmod(sym(symbols[i - n]), top);
        h = (h + MODULUS - drop) % MODULUS;
        h = (mulmod(h, BASE) + sym(symbols[i])) % MODULUS;
        out.push(h);
    }
    out
}

/// Occurrences of n-grams beyond the first occurrence of each distinct
/// n-gram, over the total number of n-grams (at least 1). Hash matches are
/// confirmed by comparing the n-grams themselves.
pub fn repeated_fraction<T: Copy + Eq + Into<u64>>(symbols: &[T], n: usize) -> f64 {
    let hashes = rolling_hashes(symbols, n);
    let mut firsts: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut repeats = 0usize;
    for (i, h) in hashes.iter().enumerate() {
        let gram = &symbols[i..i + n];
        let bucket = firsts.entry(*h).or_default();
        if bucket.iter().any(|&j| &symbols[j..j + n] == gram) {
            repeats += 1;
        } else {
            bucket.push(i);
        }
    }
    repeats as f64 / hashes.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionPenaltyConfig {
    pub ngram: usize,
    pub gamma: f64,
}

impl Default for RepetitionPenaltyConfig {
    fn default() -> Self {
        Self { ngram: 4, gamma: 0.1 }
    }
}

pub fn repetition_penalty<T: Copy + Eq + Into<u64>>(symbols: &[T], cfg: &RepetitionPenaltyConfig) -> f64 {
    let f = repeated_fraction(symbols, cfg.ngram);
    if f == 0.0 {
        0.0
    } else {
        -cfg.gamma * f
    }
}

/// Whitespace words of `text` as 64-bit symbols.
pub fn word_symbols(text: &str) -> Vec<u64> {
    text.split_whitespace()
        .map(|w| crate::rng::fnv1a(w.as_bytes()))
        .collect()
}
