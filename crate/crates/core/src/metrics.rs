//! Word-level lexical reconstruction metrics.
//!
//! These functions serve two roles: they are the rewards optimized during
//! policy training, and they are the evaluation suite used to turn sampled
//! reconstructions into membership scores. Every metric works on
//! whitespace-split word tokens; the slice-level helpers are generic so the
//! training loop can run them directly on vocabulary ids.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A whitespace-tokenized piece of text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    tokens: Vec<String>,
    source_text: String,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Builds a sequence from already-split tokens. The source text becomes the
    /// single-space join, which re-tokenizes to the same tokens as long as no
    /// token contains whitespace.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(format!(
                "token {bad:?} is empty or contains whitespace"
            )));
        }
        let source_text = tokens.join(" ");
        Ok(Self {
            tokens,
            source_text,
        })
    }

    /// Concatenation of two sequences (used for full-text evaluation).
    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut tokens = self.tokens.clone();
        tokens.extend(other.tokens.iter().cloned());
        let source_text = tokens.join(" ");
        TokenSeq {
            tokens,
            source_text,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> TokenSeq {
        let tokens = self.tokens[start..end].to_vec();
        let source_text = tokens.join(" ");
        TokenSeq {
            tokens,
            source_text,
        }
    }
}

/// Splits on unicode whitespace, dropping empty pieces.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq {
        tokens: text.split_whitespace().map(str::to_owned).collect(),
        source_text: text.to_owned(),
    }
}

/// Which side of the comparison a ratio is normalized by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Ref,
    Cand,
}

/// Aggregated reward variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// Mean of token-set similarity, LCS ratio and n-gram coverage.
    Trio,
    /// N-gram coverage alone.
    Ngram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Length-penalty band half-width, as a ratio.
    pub tau: f64,
    /// Smallest n-gram order counted by coverage.
    pub l_min: usize,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            kind: RewardKind::Trio,
            tau: 1.5,
            l_min: 3,
        }
    }
}

impl RewardSpec {
    pub fn new(kind: RewardKind, tau: f64, l_min: usize) -> Result<Self> {
        let spec = Self { kind, tau, l_min };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau must be >= 1, got {}",
                self.tau
            )));
        }
        if self.l_min < 1 {
            return Err(Error::InvalidArgument("l_min must be >= 1".into()));
        }
        Ok(())
    }
}

/// A set of contiguous n-grams with orders in `[l_min, l_max]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramSet<'a, T: Eq + Hash> {
    pub grams: HashSet<&'a [T]>,
    pub l_min: usize,
    pub l_max: usize,
}

impl<T: Eq + Hash> NgramSet<'_, T> {
    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }
}

/// All eight lexical evaluation metrics for one (candidate, reference) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub jaccard: f64,
    pub token_overlap_ref: f64,
    pub token_overlap_cand: f64,
    pub lcs_len: f64,
    pub lcs_ratio_ref: f64,
    pub lcs_ratio_cand: f64,
    pub ngram_cov_ref: f64,
    pub ngram_cov_cand: f64,
    /// Set when the candidate was empty and candidate-normalized fields were
    /// reported as 0 instead of erroring.
    pub degenerate: bool,
}

impl MetricVector {
    pub const NAMES: [&'static str; 8] = [
        "jaccard",
        "token_overlap_ref",
        "token_overlap_cand",
        "lcs_len",
        "lcs_ratio_ref",
        "lcs_ratio_cand",
        "ngram_cov_ref",
        "ngram_cov_cand",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.jaccard,
            self.token_overlap_ref,
            self.token_overlap_cand,
            self.lcs_len,
            self.lcs_ratio_ref,
            self.lcs_ratio_cand,
            self.ngram_cov_ref,
            self.ngram_cov_cand,
        ]
    }
}

fn unique<T: Eq + Hash>(xs: &[T]) -> HashSet<&T> {
    xs.iter().collect()
}

fn intersection_size<T: Eq + Hash>(a: &HashSet<&T>, b: &HashSet<&T>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|x| large.contains(*x)).count()
}

pub fn token_set_sim_slice<T: Eq + Hash>(cand: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let r = unique(reference);
    let c = unique(cand);
    Ok(intersection_size(&c, &r) as f64 / r.len() as f64)
}

/// Fraction of the reference's unique tokens that appear in the candidate.
pub fn token_set_sim(cand: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
    token_set_sim_slice(&cand.tokens, &reference.tokens)
}

pub fn jaccard_slice<T: Eq + Hash>(cand: &[T], reference: &[T]) -> Result<f64> {
    let r = unique(reference);
    let c = unique(cand);
    let inter = intersection_size(&c, &r);
    let union = c.len() + r.len() - inter;
    if union == 0 {
        return Err(Error::InvalidArgument(
            "jaccard of two empty sequences".into(),
        ));
    }
    Ok(inter as f64 / union as f64)
}

pub fn jaccard(cand: &TokenSeq, reference: &TokenSeq) -> Result<f64> {
    jaccard_slice(&cand.tokens, &reference.tokens)
}

/// Longest common subsequence length by the two-row dynamic program.
pub fn lcs_length_slice<T: Eq>(a: &[T], b: &[T]) -> usize {
    // Inner loop over the shorter side keeps the rows small.
    let (outer, inner) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if inner.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; inner.len() + 1];
    let mut cur = vec![0usize; inner.len() + 1];
    for x in outer {
        for (j, y) in inner.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[inner.len()]
}

pub fn lcs_length(a: &TokenSeq, b: &TokenSeq) -> usize {
    lcs_length_slice(&a.tokens, &b.tokens)
}

pub fn lcs_ratio_slice<T: Eq>(cand: &[T], reference: &[T], norm: Norm) -> Result<f64> {
    let denom = match norm {
        Norm::Ref => reference.len(),
        Norm::Cand => cand.len(),
    };
    if denom == 0 {
        return Err(Error::EmptyNormalizer(match norm {
            Norm::Ref => "reference",
            Norm::Cand => "candidate",
        }));
    }
    Ok(lcs_length_slice(cand, reference) as f64 / denom as f64)
}

pub fn lcs_ratio(cand: &TokenSeq, reference: &TokenSeq, norm: Norm) -> Result<f64> {
    lcs_ratio_slice(&cand.tokens, &reference.tokens, norm)
}

pub fn ngram_set_slice<T: Eq + Hash>(seq: &[T], l_min: usize, l_max: usize) -> Result<NgramSet<'_, T>> {
    if l_min < 1 {
        return Err(Error::InvalidArgument("l_min must be >= 1".into()));
    }
    let top = l_max.min(seq.len());
    let mut grams = HashSet::new();
    for n in l_min..=top {
        grams.extend(seq.windows(n));
    }
    Ok(NgramSet { grams, l_min, l_max })
}

/// Distinct contiguous n-grams of orders `l_min..=min(l_max, len)`.
pub fn ngram_set(seq: &TokenSeq, l_min: usize, l_max: usize) -> Result<NgramSet<'_, String>> {
    ngram_set_slice(&seq.tokens, l_min, l_max)
}

/// Coverage with the maximum order pinned to an already computed LCS length.
pub fn ngram_coverage_with_lcs<T: Eq + Hash>(
    cand: &[T],
    reference: &[T],
    norm: Norm,
    l_min: usize,
    lcs: usize,
) -> Result<f64> {
    if lcs < l_min {
        return Ok(0.0);
    }
    let c = ngram_set_slice(cand, l_min, lcs)?;
    let r = ngram_set_slice(reference, l_min, lcs)?;
    let denom = match norm {
        Norm::Ref => r.len(),
        Norm::Cand => c.len(),
    };
    if denom == 0 {
        return Ok(0.0);
    }
    let (small, large) = if c.len() <= r.len() { (&c, &r) } else { (&r, &c) };
    let shared = small.grams.iter().filter(|g| large.grams.contains(*g)).count();
    Ok(shared as f64 / denom as f64)
}

pub fn ngram_coverage_slice<T: Eq + Hash>(
    cand: &[T],
    reference: &[T],
    norm: Norm,
    l_min: usize,
) -> Result<f64> {
    let lcs = lcs_length_slice(cand, reference);
    ngram_coverage_with_lcs(cand, reference, norm, l_min, lcs)
}

/// N-gram set coverage with orders `l_min..=LCS(cand, ref)`; 0 when the LCS is
/// shorter than `l_min` or the normalizing set is empty.
pub fn ngram_coverage(cand: &TokenSeq, reference: &TokenSeq, norm: Norm, l_min: usize) -> Result<f64> {
    ngram_coverage_slice(&cand.tokens, &reference.tokens, norm, l_min)
}

/// Multiplier applied to a base score when the candidate's word count falls
/// outside `[len_ref / tau, len_ref * tau]`.
pub fn length_penalty(len_cand: usize, len_ref: usize, tau: f64) -> Result<f64> {
    if len_ref == 0 {
        return Err(Error::EmptyReference);
    }
    if !(tau >= 1.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 1, got {tau}")));
    }
    let lc = len_cand as f64;
    let lr = len_ref as f64;
    if lc >= lr / tau && lc <= lr * tau {
        return Ok(1.0);
    }
    if len_cand == 0 {
        return Ok(0.0);
    }
    Ok(1.0f64.min((lc / lr).min(lr / lc)))
}

pub fn base_reward_slice<T: Eq + Hash>(cand: &[T], reference: &[T], spec: &RewardSpec) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let penalty = length_penalty(cand.len(), reference.len(), spec.tau)?;
    if penalty == 0.0 {
        return Ok(0.0);
    }
    let lcs = lcs_length_slice(cand, reference);
    let ng = ngram_coverage_with_lcs(cand, reference, Norm::Ref, spec.l_min, lcs)?;
    let base = match spec.kind {
        RewardKind::Trio => {
            let tok = token_set_sim_slice(cand, reference)?;
            let lcs_ratio = lcs as f64 / reference.len() as f64;
            (tok + lcs_ratio + ng) / 3.0
        }
        RewardKind::Ngram => ng,
    };
    Ok(base * penalty)
}

/// Length-penalized reconstruction reward of `cand` against `reference`.
pub fn base_reward(cand: &TokenSeq, reference: &TokenSeq, spec: &RewardSpec) -> Result<f64> {
    base_reward_slice(&cand.tokens, &reference.tokens, spec)
}

pub fn metric_suite_slice<T: Eq + Hash>(cand: &[T], reference: &[T], l_min: usize) -> Result<MetricVector> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let r = unique(reference);
    let c = unique(cand);
    let inter = intersection_size(&c, &r) as f64;
    let union = (c.len() + r.len()) as f64 - inter;
    let lcs = lcs_length_slice(cand, reference);
    let degenerate = cand.is_empty();
    let per_cand = |x: f64, d: usize| if d == 0 { 0.0 } else { x / d as f64 };
    Ok(MetricVector {
        jaccard: inter / union,
        token_overlap_ref: inter / r.len() as f64,
        token_overlap_cand: per_cand(inter, c.len()),
        lcs_len: lcs as f64,
        lcs_ratio_ref: lcs as f64 / reference.len() as f64,
        lcs_ratio_cand: per_cand(lcs as f64, cand.len()),
        ngram_cov_ref: ngram_coverage_with_lcs(cand, reference, Norm::Ref, l_min, lcs)?,
        ngram_cov_cand: ngram_coverage_with_lcs(cand, reference, Norm::Cand, l_min, lcs)?,
        degenerate,
    })
}

/// Every lexical evaluation metric at once, with n-gram orders starting at 3.
pub fn metric_suite(cand: &TokenSeq, reference: &TokenSeq) -> Result<MetricVector> {
    metric_suite_slice(&cand.tokens, &reference.tokens, 3)
}
