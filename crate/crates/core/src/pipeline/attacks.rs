use serde::{Deserialize, Serialize};

use super::{Aggregation, EvalConfig, EvalRegion, ScoreTable};
use crate::baselines::{
    loss_score, min_k_pp_score, min_k_score, ref_loss_score, zlib_score, TokenScores, VocabStats,
};
use crate::candidate::Candidate;
use crate::error::{Error, Result};
use crate::metrics::{base_reward_slice, metric_suite_slice, MetricVector, RewardKind, TokenSeq};
use crate::par;
use crate::seed;
use crate::toylm::{sample_ids, Policy, TokenId};

pub const NSAMPLING: &str = "nsampling";

pub fn reward_metric_name(kind: RewardKind) -> &'static str {
    match kind {
        RewardKind::Trio => "trio",
        RewardKind::Ngram => "ngram",
    }
}

fn conditioning(policy: &Policy, prompt: &[String], c: &Candidate) -> Result<Vec<TokenId>> {
    let vocab = policy.vocab();
    let mut ids = prompt.iter().map(|t| vocab.id(t)).collect::<Result<Vec<_>>>()?;
    ids.extend(vocab.encode(&c.prefix())?);
    Ok(ids)
}

/// Draws `cfg.n_samples` completions of every candidate's prefix.
pub fn sample_reconstructions(
    policy: &Policy,
    candidates: &[Candidate],
    cfg: &EvalConfig,
    rng_seed: u64,
) -> Result<Vec<Vec<TokenSeq>>> {
    cfg.validate()?;
    par::try_map_indexed(candidates, |i, c| {
        let cond = conditioning(policy, &cfg.prompt, c)?;
        (0..cfg.n_samples)
            .map(|j| {
                let s = cfg.sampling.with_seed(seed::derive(rng_seed, &[i as u64, j as u64]));
                let r = sample_ids(policy, &cond, &s)?;
                Ok(policy.vocab().decode(r.completion()))
            })
            .collect()
    })
}

fn aggregate(values: &[f64], agg: Aggregation) -> f64 {
    match agg {
        Aggregation::Aon | Aggregation::None => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Bon => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Scores completions against each candidate's reference text with the
/// lexical metric suite and the reward, aggregated over samples.
pub fn score_samples(
    candidates: &[Candidate],
    samples: &[Vec<TokenSeq>],
    attack: &str,
    cfg: &EvalConfig,
) -> Result<ScoreTable> {
    if candidates.len() != samples.len() {
        return Err(Error::LengthMismatch {
            what: "candidates vs sample lists",
            left: candidates.len(),
            right: samples.len(),
        });
    }
    let reward_name = reward_metric_name(cfg.reward_spec.kind);
    let per_candidate = par::try_map_indexed(candidates, |i, c| {
        let list = &samples[i];
        if list.is_empty() {
            return Err(Error::InvalidArgument(format!("candidate `{}` has no samples", c.id)));
        }
        let (prefix, suffix) = c.split();
        let reference = match cfg.region {
            EvalRegion::SuffixOnly => suffix,
            EvalRegion::Full => c.tokens(),
        };
        let mut columns = vec![Vec::with_capacity(list.len()); MetricVector::NAMES.len() + 1];
        for s in list {
            let cand = match cfg.region {
                EvalRegion::SuffixOnly => s.clone(),
                EvalRegion::Full => prefix.concat(s),
            };
            let mv = metric_suite_slice(cand.tokens(), reference.tokens(), cfg.reward_spec.l_min)?;
            for (col, v) in columns.iter_mut().zip(mv.values()) {
                col.push(v);
            }
            columns[MetricVector::NAMES.len()].push(base_reward_slice(
                cand.tokens(),
                reference.tokens(),
                &cfg.reward_spec,
            )?);
        }
        Ok(columns)
    })?;
    let names: Vec<&str> = MetricVector::NAMES.iter().copied().chain([reward_name]).collect();
    let mut table = ScoreTable::new();
    for (c, columns) in candidates.iter().zip(&per_candidate) {
        for (name, col) in names.iter().zip(columns) {
            for &agg in &cfg.aggregations {
                table.push(&c.id, attack, name, agg, aggregate(col, agg));
            }
        }
    }
    Ok(table)
}

/// N-Sampling: score completions sampled from the unmodified policy.
pub fn n_sampling_attack(
    policy: &Policy,
    candidates: &[Candidate],
    cfg: &EvalConfig,
    rng_seed: u64,
) -> Result<(ScoreTable, Vec<Vec<TokenSeq>>)> {
    let samples = sample_reconstructions(policy, candidates, cfg, rng_seed)?;
    let table = score_samples(candidates, &samples, NSAMPLING, cfg)?;
    Ok((table, samples))
}

/// Per-candidate inputs of the likelihood-based attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveInputs {
    pub id: String,
    pub scores: TokenScores,
    pub vocab: Option<VocabStats>,
    pub reference: Option<TokenScores>,
}

/// Token log-probabilities of every candidate's full text under `policy`
/// (and `reference`, when given).
pub fn passive_inputs(
    policy: &Policy,
    reference: Option<&Policy>,
    candidates: &[Candidate],
) -> Result<Vec<PassiveInputs>> {
    if let Some(r) = reference {
        policy.same_family(r)?;
    }
    par::try_map_indexed(candidates, |_, c| {
        let ids = policy.vocab().encode(&c.tokens())?;
        let scores = TokenScores::new(policy.sequence_logprobs_ids(&ids)?, c.text.clone())?;
        let reference = reference
            .map(|r| TokenScores::new(r.sequence_logprobs_ids(&ids)?, c.text.clone()))
            .transpose()?;
        Ok(PassiveInputs {
            id: c.id.clone(),
            scores,
            vocab: Some(policy.vocab_stats_ids(&ids)?),
            reference,
        })
    })
}

/// Loss, zlib, Min-K% and (when available) Min-K%++ and reference-loss scores.
pub fn score_passive(inputs: &[PassiveInputs], k_percents: &[f64]) -> Result<ScoreTable> {
    let with_vocab = inputs.iter().filter(|p| p.vocab.is_some()).count();
    let with_ref = inputs.iter().filter(|p| p.reference.is_some()).count();
    for (what, n) in [("vocabulary statistics", with_vocab), ("reference log-probabilities", with_ref)] {
        if n != 0 && n != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{what} present for {n} of {} candidates",
                inputs.len()
            )));
        }
    }
    let rows = par::try_map_indexed(inputs, |_, p| {
        let mut rows: Vec<(&'static str, String, f64)> = vec![
            ("loss", "loss".into(), loss_score(&p.scores)?),
            ("zlib", "zlib".into(), zlib_score(&p.scores)?),
        ];
        for &k in k_percents {
            rows.push(("min_k", format!("k={k}"), min_k_score(&p.scores, k)?));
        }
        if let Some(vs) = &p.vocab {
            for &k in k_percents {
                rows.push(("min_k_pp", format!("k={k}"), min_k_pp_score(&p.scores, vs, k)?));
            }
        }
        if let Some(r) = &p.reference {
            rows.push(("r_loss", "r_loss".into(), ref_loss_score(&p.scores, r)?));
        }
        Ok::<_, Error>(rows)
    })?;
    let mut table = ScoreTable::new();
    for (p, rows) in inputs.iter().zip(rows) {
        for (attack, metric, score) in rows {
            table.push(&p.id, attack, &metric, Aggregation::None, score);
        }
    }
    Ok(table)
}

/// [`passive_inputs`] followed by [`score_passive`].
pub fn passive_attacks(
    policy: &Policy,
    reference: Option<&Policy>,
    candidates: &[Candidate],
    k_percents: &[f64],
) -> Result<ScoreTable> {
    score_passive(&passive_inputs(policy, reference, candidates)?, k_percents)
}
