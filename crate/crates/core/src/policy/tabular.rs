use super::{PolicyError, TokenId};
use crate::params::ParamVector;

/// A softmax policy whose logits are a lookup table indexed by
/// `(prompt, position, previous token)`.
///
/// Positions past `horizon - 1` share the last position's rows. The
/// previous-token slot `vocab_size` stands for "start of response".
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    params: ParamVector,
    num_prompts: usize,
    horizon: usize,
    vocab_size: usize,
}

/// Gradient of one token log-probability; nonzero only on one logit row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    pub state: usize,
    pub values: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(num_prompts: usize, horizon: usize, vocab_size: usize) -> Result<Self, PolicyError> {
        if num_prompts == 0 || horizon == 0 || vocab_size < 2 {
            return Err(PolicyError::Shape(format!(
                "need prompts >= 1, horizon >= 1, vocab >= 2 (got {num_prompts}, {horizon}, {vocab_size})"
            )));
        }
        let dim = num_prompts * horizon * (vocab_size + 1) * vocab_size;
        Ok(Self {
            params: ParamVector::zeros(dim)?,
            num_prompts,
            horizon,
            vocab_size,
        })
    }

    pub fn from_params(
        params: ParamVector,
        num_prompts: usize,
        horizon: usize,
        vocab_size: usize,
    ) -> Result<Self, PolicyError> {
        let mut p = Self::uniform(num_prompts, horizon, vocab_size)?;
        if params.dim() != p.params.dim() {
            return Err(PolicyError::Shape(format!(
                "parameter dim {} does not match table dim {}",
                params.dim(),
                p.params.dim()
            )));
        }
        p.params = params;
        Ok(p)
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<(), PolicyError> {
        if params.dim() != self.params.dim() {
            return Err(PolicyError::Shape(format!(
                "parameter dim {} does not match table dim {}",
                params.dim(),
                self.params.dim()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_prompts * self.horizon * (self.vocab_size + 1)
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// State index for the next token after `prev` at `position`.
    pub fn state(&self, prompt: usize, position: usize, prev: Option<TokenId>) -> Result<usize, PolicyError> {
        if prompt >= self.num_prompts {
            return Err(PolicyError::Index(format!(
                "prompt {prompt} out of range ({})",
                self.num_prompts
            )));
        }
        let prev_slot = match prev {
            None => self.vocab_size,
            Some(t) if (t as usize) < self.vocab_size => t as usize,
            Some(t) => return Err(PolicyError::Index(format!("token {t} out of range"))),
        };
        let pos = position.min(self.horizon - 1);
        Ok((prompt * self.horizon + pos) * (self.vocab_size + 1) + prev_slot)
    }

    pub fn logits(&self, state: usize) -> Result<&[f64], PolicyError> {
        if state >= self.num_states() {
            return Err(PolicyError::Index(format!("state {state} out of range")));
        }
        let v = self.vocab_size;
        Ok(&self.params.as_slice()[state * v..(state + 1) * v])
    }

    pub fn log_softmax(&self, state: usize) -> Result<Vec<f64>, PolicyError> {
        Ok(log_softmax(self.logits(state)?))
    }

    pub fn token_logprob(&self, state: usize, token: TokenId) -> Result<f64, PolicyError> {
        let row = self.logits(state)?;
        if token as usize >= self.vocab_size {
            return Err(PolicyError::Index(format!("token {token} out of range")));
        }
        Ok(log_softmax(row)[token as usize])
    }

    /// d log p(token | state) / d logit(state, v) = 1[v = token] - softmax_v.
    pub fn grad_token_logprob(&self, state: usize, token: TokenId) -> Result<RowGrad, PolicyError> {
        let lp = self.log_softmax(state)?;
        if token as usize >= self.vocab_size {
            return Err(PolicyError::Index(format!("token {token} out of range")));
        }
        let values = lp
            .iter()
            .enumerate()
            .map(|(v, l)| f64::from(u8::from(v == token as usize)) - l.exp())
            .collect();
        Ok(RowGrad { state, values })
    }

    /// Adds `scale * grad log p(token | state)` into a dense buffer shaped
    /// like the parameters.
    pub fn accumulate_grad(
        &self,
        state: usize,
        token: TokenId,
        scale: f64,
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        let g = self.grad_token_logprob(state, token)?;
        let v = self.vocab_size;
        for (o, gv) in out[state * v..(state + 1) * v].iter_mut().zip(&g.values) {
            *o += scale * gv;
        }
        Ok(())
    }

    /// `params += step * direction`, then re-check finiteness.
    pub fn apply_update(&mut self, direction: &[f64], step: f64) -> Result<(), PolicyError> {
        if direction.len() != self.params.dim() {
            return Err(PolicyError::Shape("update direction has wrong length".into()));
        }
        for (p, d) in self.params.as_mut_slice().iter_mut().zip(direction) {
            *p += step * d;
        }
        self.params.validate()?;
        Ok(())
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}
