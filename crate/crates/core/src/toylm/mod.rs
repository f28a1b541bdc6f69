//! A tabular, context-conditioned softmax language model.
//!
//! The next-token distribution depends on the previous `order` tokens (padded
//! with BOS at the start of a text). Each context owns a logit vector over the
//! whole vocabulary; contexts that were never written map to all-zero logits,
//! i.e. the uniform distribution. Because the vocabulary is small and
//! enumerable, log-probabilities, vocabulary statistics, KL divergences and
//! log-policy gradients are all exact.

mod sampling;
mod serial;
mod train;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{TokenScores, VocabStats};
use crate::error::{Error, Result};
use crate::metrics::TokenSeq;

pub use sampling::{filter_dist, sample_completion, sample_ids, Rollout, SamplingConfig};
pub use train::{corpus_loglik, logpi_grad, sft_update, sft_update_ids};

pub type TokenId = u32;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Ordered symbol table. Ids 0 and 1 are always BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub const BOS_ID: TokenId = 0;
    pub const EOS_ID: TokenId = 1;

    /// BOS and EOS followed by `words`.
    pub fn with_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut symbols = vec![BOS.to_owned(), EOS.to_owned()];
        symbols.extend(words.into_iter().map(Into::into));
        Self::from_symbols(symbols)
    }

    /// Full symbol list; must start with BOS, EOS.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 || symbols[0] != BOS || symbols[1] != EOS {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved BOS and EOS symbols".into(),
            ));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad vocabulary symbol {s:?}")));
            }
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// `size` symbols in total: BOS, EOS and `size - 2` words `w00`, `w01`, ...
    pub fn synthetic(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidArgument(format!(
                "synthetic vocabulary needs at least one word besides BOS/EOS, got size {size}"
            )));
        }
        let width = (size - 2).to_string().len().max(2);
        Self::with_words((0..size - 2).map(|i| format!("w{i:0width$}")))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::OutOfVocab(symbol.to_owned()))
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.symbols[id as usize]
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<Vec<TokenId>> {
        seq.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> TokenSeq {
        TokenSeq::from_tokens(ids.iter().map(|&i| self.symbol(i).to_owned()))
            .expect("vocabulary symbols contain no whitespace")
    }

    /// Content words (everything but BOS/EOS).
    pub fn words(&self) -> &[String] {
        &self.symbols[2..]
    }
}

/// Packed context: the last `order` token ids in mixed radix `|V|`.
pub type ContextKey = u64;

#[derive(Debug, Clone)]
pub struct Policy {
    vocab: Arc<Vocab>,
    order: usize,
    slots: HashMap<ContextKey, usize>,
    logits: Vec<f64>,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        if self.vocab != other.vocab || self.order != other.order {
            return false;
        }
        let keys = self.stored_contexts();
        keys == other.stored_contexts() && keys.iter().all(|&k| self.logits(k) == other.logits(k))
    }
}

/// Summary of a policy's identity, used in reports and logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub vocab_size: usize,
    pub order: usize,
    pub stored_contexts: usize,
}

impl Policy {
    /// The uniform policy: no stored contexts.
    pub fn uniform(vocab: Arc<Vocab>, order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("policy order must be >= 1".into()));
        }
        let v = vocab.len() as u128;
        if v.checked_pow(order as u32).is_none_or(|x| x > u64::MAX as u128) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {v} symbols with order {order} does not fit a 64-bit context key"
            )));
        }
        Ok(Self {
            vocab,
            order,
            slots: HashMap::new(),
            logits: Vec::new(),
        })
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            vocab_size: self.vocab_size(),
            order: self.order,
            stored_contexts: self.slots.len(),
        }
    }

    pub fn same_family(&self, other: &Policy) -> Result<()> {
        if self.vocab != other.vocab {
            return Err(Error::VocabMismatch("policies use different vocabularies".into()));
        }
        if self.order != other.order {
            return Err(Error::VocabMismatch(format!(
                "policy orders differ ({} vs {})",
                self.order, other.order
            )));
        }
        Ok(())
    }

    /// Key of the context preceding position `pos` of `history`.
    pub fn context_at(&self, history: &[TokenId], pos: usize) -> ContextKey {
        let v = self.vocab.len() as u64;
        let mut key = 0u64;
        for back in (1..=self.order).rev() {
            let tok = if pos >= back {
                history[pos - back]
            } else {
                Vocab::BOS_ID
            };
            key = key * v + tok as u64;
        }
        key
    }

    /// Key for an explicit context tuple, BOS-padded on the left or truncated
    /// to the last `order` tokens.
    pub fn context_key(&self, context: &[TokenId]) -> ContextKey {
        self.context_at(context, context.len())
    }

    pub fn decode_context(&self, key: ContextKey) -> Vec<TokenId> {
        let v = self.vocab.len() as u64;
        let mut out = vec![0; self.order];
        let mut k = key;
        for slot in out.iter_mut().rev() {
            *slot = (k % v) as TokenId;
            k /= v;
        }
        out
    }

    /// Stored logits for `key`, or `None` when the context is implicit zeros.
    pub fn logits(&self, key: ContextKey) -> Option<&[f64]> {
        let v = self.vocab.len();
        self.slots.get(&key).map(|&s| &self.logits[s * v..(s + 1) * v])
    }

    pub fn logits_mut(&mut self, key: ContextKey) -> &mut [f64] {
        let v = self.vocab.len();
        let next = self.slots.len();
        let slot = *self.slots.entry(key).or_insert(next);
        if slot == next {
            self.logits.resize((next + 1) * v, 0.0);
        }
        &mut self.logits[slot * v..(slot + 1) * v]
    }

    /// Overwrites the logits of one context; all entries must be finite.
    pub fn set_logits(&mut self, key: ContextKey, values: &[f64]) -> Result<()> {
        if values.len() != self.vocab.len() {
            return Err(Error::LengthMismatch {
                what: "logit vector vs vocabulary",
                left: values.len(),
                right: self.vocab.len(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        self.logits_mut(key).copy_from_slice(values);
        Ok(())
    }

    /// Stored context keys in ascending order.
    pub fn stored_contexts(&self) -> Vec<ContextKey> {
        let mut keys: Vec<ContextKey> = self.slots.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Softmax of `logits / temperature` for a context key.
    pub fn dist_for_key(&self, key: ContextKey, temperature: f64) -> Vec<f64> {
        let v = self.vocab.len();
        match self.logits(key) {
            None => vec![1.0 / v as f64; v],
            Some(z) => softmax(z, temperature),
        }
    }

    /// Natural-log probabilities at temperature 1.
    pub fn log_dist_for_key(&self, key: ContextKey) -> Vec<f64> {
        let v = self.vocab.len();
        match self.logits(key) {
            None => vec![-(v as f64).ln(); v],
            Some(z) => log_softmax(z),
        }
    }

    /// Log-probability of `token` after context `key`, temperature 1.
    pub fn token_logprob(&self, key: ContextKey, token: TokenId) -> f64 {
        match self.logits(key) {
            None => -(self.vocab.len() as f64).ln(),
            Some(z) => {
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                z[token as usize] - lse
            }
        }
    }

    /// Largest absolute logit difference over the union of stored contexts.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        let mut keys = self.stored_contexts();
        keys.extend(other.stored_contexts());
        keys.sort_unstable();
        keys.dedup();
        let v = self.vocab.len();
        let zeros = vec![0.0; v];
        keys.iter()
            .map(|&k| {
                let a = self.logits(k).unwrap_or(&zeros);
                let b = other.logits(k).unwrap_or(&zeros);
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        let v = self.vocab.len() as TokenId;
        match ids.iter().find(|&&t| t >= v) {
            Some(t) => Err(Error::OutOfVocab(format!("#{t}"))),
            None => Ok(()),
        }
    }

    pub fn sequence_logprobs_ids(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        self.check_ids(ids)?;
        Ok((0..ids.len())
            .map(|i| self.token_logprob(self.context_at(ids, i), ids[i]))
            .collect())
    }

    pub fn vocab_stats_ids(&self, ids: &[TokenId]) -> Result<VocabStats> {
        self.check_ids(ids)?;
        let (mu, sigma) = (0..ids.len())
            .map(|i| {
                let ld = self.log_dist_for_key(self.context_at(ids, i));
                mean_std(&ld)
            })
            .unzip();
        Ok(VocabStats { mu, sigma })
    }
}

/// Softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| ((z - m) / temperature).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Next-token distribution for an explicit context tuple.
pub fn next_token_dist(policy: &Policy, context: &[TokenId], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    policy.check_ids(context)?;
    Ok(policy.dist_for_key(policy.context_key(context), temperature))
}

/// Exact per-token log-probabilities of `text` from the start (BOS-padded).
pub fn sequence_logprobs(policy: &Policy, text: &TokenSeq) -> Result<TokenScores> {
    let ids = policy.vocab.encode(text)?;
    TokenScores::new(policy.sequence_logprobs_ids(&ids)?, text.source_text())
}

/// Exact per-position mean/std of next-token log-probabilities over the vocabulary.
pub fn vocab_stats(policy: &Policy, text: &TokenSeq) -> Result<VocabStats> {
    let ids = policy.vocab.encode(text)?;
    policy.vocab_stats_ids(&ids)
}

/// Exact categorical KL(p || q) for one context.
pub fn kl_context(policy: &Policy, reference: &Policy, key: ContextKey) -> f64 {
    let lp = policy.log_dist_for_key(key);
    let lq = reference.log_dist_for_key(key);
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}
