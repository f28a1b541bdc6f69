//! Passive membership scores computed from per-token log-probabilities.
//!
//! Every score is oriented so that a higher value means "more likely a
//! member": loss-like quantities are negated.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the vocabulary standard deviation in Min-K%++.
pub const SIGMA_EPS: f64 = 1e-8;

/// Min-K% sweep reported alongside the default.
pub const K_PERCENT_SWEEP: [f64; 4] = [10.0, 20.0, 30.0, 100.0];
pub const DEFAULT_K_PERCENT: f64 = 20.0;

/// Natural-log probabilities of each token of a text under some model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub logprobs: Vec<f64>,
    /// Raw text the log-probabilities were computed on; its DEFLATE size
    /// normalizes the zlib score.
    pub text: String,
}

impl TokenScores {
    pub fn new(logprobs: Vec<f64>, text: impl Into<String>) -> Result<Self> {
        let ts = Self {
            logprobs,
            text: text.into(),
        };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.logprobs.is_empty() {
            return Err(Error::InvalidArgument("empty token log-probabilities".into()));
        }
        if let Some(bad) = self.logprobs.iter().find(|l| !(**l <= 0.0) || l.is_infinite()) {
            return Err(Error::InvalidArgument(format!(
                "token log-probability {bad} is not a finite value <= 0"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// Per-position mean and population standard deviation of next-token
/// log-probabilities over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

fn mean_in_order(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean token log-probability (negated mean NLL).
pub fn loss_score(ts: &TokenScores) -> Result<f64> {
    ts.validate()?;
    Ok(mean_in_order(&ts.logprobs))
}

/// Loss of the target model minus loss of a reference model, both negated.
pub fn ref_loss_score(target: &TokenScores, reference: &TokenScores) -> Result<f64> {
    if target.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "target vs reference token count",
            left: target.len(),
            right: reference.len(),
        });
    }
    Ok(loss_score(target)? - loss_score(reference)?)
}

/// DEFLATE (RFC 1951) size of `bytes` at the default compression level.
pub fn deflate_size(bytes: &[u8]) -> usize {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

/// Negated mean NLL divided by the compressed size of the text.
pub fn zlib_score(ts: &TokenScores) -> Result<f64> {
    if ts.text.is_empty() {
        return Err(Error::InvalidArgument("zlib score of empty text".into()));
    }
    let size = deflate_size(ts.text.as_bytes());
    Ok(loss_score(ts)? / size as f64)
}

/// Number of tokens Min-K% keeps: `ceil(k% * n)`, at least one.
pub fn min_k_count(n: usize, k_percent: f64) -> usize {
    let raw = (k_percent * n as f64 / 100.0).ceil();
    (raw as usize).clamp(1, n.max(1))
}

fn check_k(k_percent: f64) -> Result<()> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "k_percent must lie in (0, 100], got {k_percent}"
        )));
    }
    Ok(())
}

/// Mean of the `ceil(k% n)` smallest values. The selected values are summed
/// in their original order so that `k = 100` reproduces the plain mean bit for
/// bit.
fn mean_of_smallest(values: &[f64], k_percent: f64) -> f64 {
    let m = min_k_count(values.len(), k_percent);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut keep = order[..m].to_vec();
    keep.sort_unstable();
    keep.iter().map(|&i| values[i]).sum::<f64>() / m as f64
}

/// Mean log-probability of the lowest-likelihood k% of tokens.
pub fn min_k_score(ts: &TokenScores, k_percent: f64) -> Result<f64> {
    ts.validate()?;
    check_k(k_percent)?;
    Ok(mean_of_smallest(&ts.logprobs, k_percent))
}

/// Mean of the lowest k% of per-token z-scores `(log p - mu) / sigma`.
pub fn min_k_pp_score(ts: &TokenScores, vs: &VocabStats, k_percent: f64) -> Result<f64> {
    ts.validate()?;
    check_k(k_percent)?;
    if vs.mu.len() != ts.len() || vs.sigma.len() != ts.len() {
        return Err(Error::LengthMismatch {
            what: "log-probabilities vs vocabulary statistics",
            left: ts.len(),
            right: vs.mu.len().min(vs.sigma.len()),
        });
    }
    if let Some(bad) = vs.sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative vocabulary sigma {bad}")));
    }
    let z: Vec<f64> = ts
        .logprobs
        .iter()
        .zip(vs.mu.iter().zip(&vs.sigma))
        .map(|(lp, (mu, sigma))| (lp - mu) / sigma.max(SIGMA_EPS))
        .collect();
    Ok(mean_of_smallest(&z, k_percent))
}
