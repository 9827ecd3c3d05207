use std::collections::HashMap;

use super::PolicyError;

pub type TokenId = u32;

pub const EOS: &str = "<eos>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
/// Single-token stand-in for the repair control prompt in toy vocabularies.
pub const REPAIR: &str = "<repair>";

const RESERVED: [&str; 4] = [EOS, THINK_OPEN, THINK_CLOSE, REPAIR];

/// Ordered, duplicate-free symbol table. Reserved symbols occupy ids 0..4.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new<S: AsRef<str>>(extra: &[S]) -> Result<Self, PolicyError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(extra.iter().map(|s| s.as_ref().to_string()));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(PolicyError::Vocab(format!("invalid symbol {t:?}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(PolicyError::Vocab(format!("duplicate symbol {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved symbols, the ten digits, `+` and `=`.
    pub fn arithmetic() -> Self {
        let extra: Vec<String> = (0..10)
            .map(|d| d.to_string())
            .chain(["+".to_string(), "=".to_string()])
            .collect();
        Self::new(&extra).expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn eos(&self) -> TokenId {
        0
    }

    pub fn think_open(&self) -> TokenId {
        1
    }

    pub fn think_close(&self) -> TokenId {
        2
    }

    pub fn repair(&self) -> TokenId {
        3
    }

    fn is_digit(&self, id: TokenId) -> bool {
        self.symbol(id)
            .is_some_and(|s| s.len() == 1 && s.as_bytes()[0].is_ascii_digit())
    }

    /// Splits on whitespace; numbers are split into digit tokens.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, PolicyError> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if let Some(id) = self.id(word) {
                out.push(id);
            } else if word.bytes().all(|b| b.is_ascii_digit()) {
                for ch in word.chars() {
                    out.push(self.id(&ch.to_string()).ok_or_else(|| {
                        PolicyError::Vocab(format!("digit {ch} not in vocabulary"))
                    })?);
                }
            } else {
                return Err(PolicyError::Vocab(format!("unknown symbol {word:?}")));
            }
        }
        Ok(out)
    }

    /// Renders tokens as text. Adjacent digits join into one number, other
    /// symbols are space separated, and end-of-sequence is dropped.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev_digit = false;
        for &t in tokens {
            if t == self.eos() {
                continue;
            }
            let sym = self.symbol(t).unwrap_or("?");
            let digit = self.is_digit(t);
            if !out.is_empty() && !(digit && prev_digit) {
                out.push(' ');
            }
            out.push_str(sym);
            prev_digit = digit;
        }
        out
    }
}
