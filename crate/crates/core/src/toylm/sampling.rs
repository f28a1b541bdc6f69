use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::metrics::TokenSeq;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// `None` keeps the whole vocabulary.
    pub top_k: Option<usize>,
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            top_k: Some(50),
            max_tokens: 64,
            rng_seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::InvalidArgument("top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..self.clone()
        }
    }
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Sampled ids, including a trailing EOS when generation stopped on it.
    pub tokens: Vec<TokenId>,
    /// Log-probability of each sampled id under the unfiltered temperature-1
    /// distribution of the sampling-time policy.
    pub logprobs_old: Vec<f64>,
    /// True when generation stopped on EOS rather than the token budget.
    pub finished: bool,
}

impl Rollout {
    /// The completion text ids, without the terminating EOS.
    pub fn completion(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&Vocab::EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

const TOP_P_SLACK: f64 = 1e-12;

/// Top-k then nucleus filtering with renormalization. Ties in probability are
/// broken by lower vocabulary index first.
pub fn filter_dist(dist: &[f64], top_k: Option<usize>, top_p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let k = top_k.unwrap_or(dist.len()).clamp(1, dist.len());
    let kept = &order[..k];
    let mass: f64 = kept.iter().map(|&i| dist[i]).sum();
    let mut cum = 0.0;
    let mut n = 0;
    for &i in kept {
        cum += dist[i] / mass;
        n += 1;
        if cum >= top_p - TOP_P_SLACK {
            break;
        }
    }
    let keep = &kept[..n];
    let total: f64 = keep.iter().map(|&i| dist[i]).sum();
    let mut out = vec![0.0; dist.len()];
    for &i in keep {
        out[i] = dist[i] / total;
    }
    out
}

fn draw(probs: &[f64], u: f64) -> TokenId {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i as TokenId;
        }
    }
    last as TokenId
}

/// Autoregressive sampling after `conditioning` ids.
pub fn sample_ids(policy: &Policy, conditioning: &[TokenId], cfg: &SamplingConfig) -> Result<Rollout> {
    cfg.validate()?;
    let v = policy.vocab_size() as TokenId;
    if let Some(t) = conditioning.iter().find(|&&t| t >= v) {
        return Err(Error::OutOfVocab(format!("#{t}")));
    }
    let mut rng = seed::rng(cfg.rng_seed);
    let mut history = conditioning.to_vec();
    let mut tokens = Vec::with_capacity(cfg.max_tokens);
    let mut logprobs_old = Vec::with_capacity(cfg.max_tokens);
    let mut finished = false;
    let unfiltered = cfg.top_k.is_none_or(|k| k >= policy.vocab_size()) && cfg.top_p >= 1.0;
    while tokens.len() < cfg.max_tokens {
        let key = policy.context_at(&history, history.len());
        let dist = policy.dist_for_key(key, cfg.temperature);
        let probs = if unfiltered {
            dist
        } else {
            filter_dist(&dist, cfg.top_k, cfg.top_p)
        };
        let t = draw(&probs, rng.gen::<f64>());
        logprobs_old.push(policy.token_logprob(key, t));
        tokens.push(t);
        history.push(t);
        if t == Vocab::EOS_ID {
            finished = true;
            break;
        }
    }
    Ok(Rollout {
        tokens,
        logprobs_old,
        finished,
    })
}

/// Samples a completion of `prefix`; fails on out-of-vocabulary prefix tokens.
pub fn sample_completion(policy: &Policy, prefix: &TokenSeq, cfg: &SamplingConfig) -> Result<Rollout> {
    let ids = policy.vocab().encode(prefix)?;
    sample_ids(policy, &ids, cfg)
}
