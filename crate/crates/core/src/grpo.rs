//! Group Relative Policy Optimization over the tabular policy.
//!
//! One step samples `N` rollouts per candidate prefix, scores them with the
//! configured contrastive reward, normalizes rewards within each candidate's
//! group, and takes an ascent step on the clipped surrogate with a per-token
//! KL penalty toward a frozen reference policy. The parameter update is the
//! only serial section; sampling, scoring and per-group gradients run through
//! [`crate::par`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{min_k_pp_score, DEFAULT_K_PERCENT};
use crate::candidate::Candidate;
use crate::error::{Error, Result};
use crate::metrics::{RewardSpec, TokenSeq};
use crate::par;
use crate::pipeline::{score_samples, EvalConfig, ScoreTable};
use crate::rewards::{
    build_pools, pool_scores_slice, priors_from_scores, reward_for_mode, MembershipPrior, Mode,
    PriorMapping, RefPool, RewardMode, DEFAULT_DISTRACTORS,
};
use crate::seed;
use crate::toylm::{
    kl_context, sample_ids, ContextKey, Policy, Rollout, SamplingConfig, TokenId,
};

/// Added to the group standard deviation before dividing.
pub const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub steps: usize,
    pub rollouts_per_candidate: usize,
    pub lr: f64,
    pub kl_coef: f64,
    /// PPO ratio clip range; `f64::INFINITY` disables clipping.
    pub clip_eps: f64,
    pub normalize_advantages: bool,
    pub entropy_coef: f64,
    /// Gradient passes over each rollout batch.
    pub inner_epochs: usize,
    pub sampling: SamplingConfig,
    pub reward_mode: RewardMode,
    pub reward_spec: RewardSpec,
    pub k_distractors: usize,
    /// Redraw distractor pools every step instead of once per run.
    pub resample_pools: bool,
    pub prior_mapping: PriorMapping,
    /// Min-K%++ percentage used to build adaptive-matching priors.
    pub prior_k_percent: f64,
    /// Fixed tokens placed before every candidate prefix.
    pub prompt: Vec<String>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            rollouts_per_candidate: 16,
            lr: 0.5,
            kl_coef: 0.005,
            clip_eps: 0.2,
            normalize_advantages: true,
            entropy_coef: 0.0,
            inner_epochs: 1,
            sampling: SamplingConfig {
                temperature: 1.0,
                top_p: 0.95,
                top_k: Some(50),
                max_tokens: 64,
                rng_seed: 0,
            },
            reward_mode: RewardMode::default(),
            reward_spec: RewardSpec::default(),
            k_distractors: DEFAULT_DISTRACTORS,
            resample_pools: false,
            prior_mapping: PriorMapping::Rank,
            prior_k_percent: DEFAULT_K_PERCENT,
            prompt: Vec::new(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.reward_spec.validate()?;
        if self.rollouts_per_candidate == 0 {
            return Err(Error::InvalidArgument("rollouts_per_candidate must be >= 1".into()));
        }
        if self.normalize_advantages && self.rollouts_per_candidate < 2 {
            return Err(Error::InvalidArgument(
                "normalized advantages need at least 2 rollouts per candidate".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.kl_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return Err(Error::InvalidArgument("kl_coef and entropy_coef must be >= 0".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidArgument("clip_eps must be positive".into()));
        }
        if self.inner_epochs == 0 {
            return Err(Error::InvalidArgument("inner_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One candidate's rollouts and their rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub candidate_id: String,
    pub conditioning: Vec<TokenId>,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    /// Reward against the true suffix only, for monitoring.
    pub truth_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub mean_truth_reward: f64,
}

/// Group-relative advantages: centered, and scaled by `std + ADV_EPS` when
/// `normalize` is set. A constant group yields all zeros.
pub fn group_advantages(rewards: &[f64], normalize: bool) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    // Re-center so the output mean is zero up to one final rounding.
    let shift = centered.iter().sum::<f64>() / n;
    let centered: Vec<f64> = centered.iter().map(|c| c - shift).collect();
    if !normalize {
        return centered;
    }
    let std = (centered.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    centered.iter().map(|c| c / (std + ADV_EPS)).collect()
}

/// Mean exact KL(policy || reference) over the given context keys.
pub fn kl_reference_keys(policy: &Policy, reference: &Policy, keys: &[ContextKey]) -> Result<f64> {
    policy.same_family(reference)?;
    if keys.is_empty() {
        return Ok(0.0);
    }
    Ok(keys.iter().map(|&k| kl_context(policy, reference, k)).sum::<f64>() / keys.len() as f64)
}

/// Mean exact KL(policy || reference) over explicit context tuples.
pub fn kl_reference(policy: &Policy, reference: &Policy, contexts: &[Vec<TokenId>]) -> Result<f64> {
    let keys: Vec<ContextKey> = contexts.iter().map(|c| policy.context_key(c)).collect();
    kl_reference_keys(policy, reference, &keys)
}

/// A candidate prepared for training: ids of its conditioning prefix, true
/// suffix and distractor suffixes.
#[derive(Debug, Clone)]
pub struct EncodedTask {
    pub id: String,
    pub conditioning: Vec<TokenId>,
    pub truth: Vec<TokenId>,
    pub distractors: Vec<Vec<TokenId>>,
    pub prior: Option<MembershipPrior>,
}

pub fn encode_tasks(
    policy: &Policy,
    candidates: &[Candidate],
    pools: &[RefPool],
    priors: Option<&[MembershipPrior]>,
    prompt: &[String],
) -> Result<Vec<EncodedTask>> {
    if pools.len() != candidates.len() {
        return Err(Error::LengthMismatch {
            what: "pools vs candidates",
            left: pools.len(),
            right: candidates.len(),
        });
    }
    if let Some(p) = priors {
        if p.len() != candidates.len() {
            return Err(Error::LengthMismatch {
                what: "priors vs candidates",
                left: p.len(),
                right: candidates.len(),
            });
        }
    }
    let vocab = policy.vocab();
    let prompt_ids = prompt.iter().map(|t| vocab.id(t)).collect::<Result<Vec<_>>>()?;
    candidates
        .iter()
        .zip(pools)
        .enumerate()
        .map(|(i, (c, pool))| {
            if pool.truth_id != c.id {
                return Err(Error::InvalidArgument(format!(
                    "pool {} belongs to `{}`, expected `{}`",
                    i, pool.truth_id, c.id
                )));
            }
            let mut conditioning = prompt_ids.clone();
            conditioning.extend(vocab.encode(&c.prefix())?);
            Ok(EncodedTask {
                id: c.id.clone(),
                conditioning,
                truth: vocab.encode(&pool.truth)?,
                distractors: pool
                    .distractors
                    .iter()
                    .map(|d| vocab.encode(d))
                    .collect::<Result<_>>()?,
                prior: priors.map(|p| p[i]),
            })
        })
        .collect()
}

/// Samples and scores one group per task.
pub fn collect_groups(
    policy: &Policy,
    tasks: &[EncodedTask],
    cfg: &GrpoConfig,
    step_seed: u64,
) -> Result<Vec<GroupBatch>> {
    par::try_map_indexed(tasks, |ci, task| {
        let n = cfg.rollouts_per_candidate;
        let mut rollouts = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut truth_rewards = Vec::with_capacity(n);
        for i in 0..n {
            let s = seed::derive(step_seed, &[ci as u64, i as u64]);
            let r = sample_ids(policy, &task.conditioning, &cfg.sampling.with_seed(s))?;
            let scores = pool_scores_slice(r.completion(), &task.truth, &task.distractors, &cfg.reward_spec)?;
            let adapt_seed = seed::derive(s, &[seed::tag("adapt")]);
            rewards.push(reward_for_mode(scores, &cfg.reward_mode, task.prior, adapt_seed, &task.id)?);
            truth_rewards.push(scores.truth);
            rollouts.push(r);
        }
        let advantages = group_advantages(&rewards, cfg.normalize_advantages);
        Ok(GroupBatch {
            candidate_id: task.id.clone(),
            conditioning: task.conditioning.clone(),
            rollouts,
            rewards,
            truth_rewards,
            advantages,
        })
    })
}

/// Sparse gradient of the surrogate objective, keyed by context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    /// Per context: (visit weight, gradient over the context's logits).
    pub entries: BTreeMap<ContextKey, (f64, Vec<f64>)>,
    pub clipped_tokens: usize,
    pub tokens: usize,
}

impl SparseGrad {
    fn add(&mut self, other: SparseGrad) {
        for (k, (w, g)) in other.entries {
            match self.entries.get_mut(&k) {
                Some((sw, sg)) => {
                    *sw += w;
                    sg.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                None => {
                    self.entries.insert(k, (w, g));
                }
            }
        }
        self.clipped_tokens += other.clipped_tokens;
        self.tokens += other.tokens;
    }
}

fn visit(group: &GroupBatch, policy: &Policy, mut f: impl FnMut(usize, ContextKey, TokenId, f64)) {
    let mut history = group.conditioning.clone();
    for (i, r) in group.rollouts.iter().enumerate() {
        history.truncate(group.conditioning.len());
        for (t, &tok) in r.tokens.iter().enumerate() {
            let key = policy.context_at(&history, history.len());
            f(i, key, tok, r.logprobs_old[t]);
            history.push(tok);
        }
    }
}

fn clipped(ratio: f64, adv: f64, eps: f64) -> bool {
    (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps)
}

/// Surrogate objective for a set of groups:
/// `sum_g (1/N) sum_i sum_t [min(rho A, clip(rho) A) - kl_coef KL_t + entropy_coef H_t]`.
pub fn surrogate_objective(policy: &Policy, reference: &Policy, groups: &[GroupBatch], cfg: &GrpoConfig) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let n = g.rollouts.len() as f64;
        visit(g, policy, |i, key, tok, lp_old| {
            let a = g.advantages[i];
            let ratio = (policy.token_logprob(key, tok) - lp_old).exp();
            let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            let mut term = (ratio * a).min(clipped_ratio * a);
            if cfg.kl_coef > 0.0 {
                term -= cfg.kl_coef * kl_context(policy, reference, key);
            }
            if cfg.entropy_coef > 0.0 {
                let ld = policy.log_dist_for_key(key);
                term -= cfg.entropy_coef * ld.iter().map(|l| l.exp() * l).sum::<f64>();
            }
            total += term / n;
        });
    }
    total
}

/// Analytic gradient of one group's contribution to [`surrogate_objective`].
pub fn group_gradient(policy: &Policy, reference: &Policy, group: &GroupBatch, cfg: &GrpoConfig) -> SparseGrad {
    let n = group.rollouts.len() as f64;
    let mut out = SparseGrad::default();
    visit(group, policy, |i, key, tok, lp_old| {
        let a = group.advantages[i];
        let ld = policy.log_dist_for_key(key);
        let p: Vec<f64> = ld.iter().map(|l| l.exp()).collect();
        let (w, g) = out
            .entries
            .entry(key)
            .or_insert_with(|| (0.0, vec![0.0; p.len()]));
        *w += 1.0 / n;
        out.tokens += 1;
        let ratio = (ld[tok as usize] - lp_old).exp();
        if clipped(ratio, a, cfg.clip_eps) {
            out.clipped_tokens += 1;
        } else if a != 0.0 {
            // d/dz [rho A] = rho A (e_tok - p)
            let c = ratio * a / n;
            g.iter_mut().zip(&p).for_each(|(gv, pv)| *gv -= c * pv);
            g[tok as usize] += c;
        }
        if cfg.kl_coef > 0.0 {
            // d/dz KL(p || q) = p (log p - log q - KL)
            let lq = reference.log_dist_for_key(key);
            let kl: f64 = p.iter().zip(ld.iter().zip(&lq)).map(|(pv, (a, b))| pv * (a - b)).sum();
            let c = cfg.kl_coef / n;
            for v in 0..p.len() {
                g[v] -= c * p[v] * (ld[v] - lq[v] - kl);
            }
        }
        if cfg.entropy_coef > 0.0 {
            // d/dz H(p) = -p (log p + H)
            let h: f64 = -p.iter().zip(&ld).map(|(pv, l)| pv * l).sum::<f64>();
            let c = cfg.entropy_coef / n;
            for v in 0..p.len() {
                g[v] -= c * p[v] * (ld[v] + h);
            }
        }
    });
    out
}

/// Sum of group gradients, reduced in group order.
pub fn batch_gradient(policy: &Policy, reference: &Policy, groups: &[GroupBatch], cfg: &GrpoConfig) -> SparseGrad {
    let parts = par::map(groups, |g| group_gradient(policy, reference, g, cfg));
    let mut total = SparseGrad::default();
    for p in parts {
        total.add(p);
    }
    total
}

/// Ascent step. Each context moves by `lr / (1 + kl_coef * w)` times its
/// gradient, where `w` is the context's visit weight in the batch; the damping
/// keeps large KL coefficients from overshooting the reference.
pub fn apply_gradient(policy: &mut Policy, grad: &SparseGrad, cfg: &GrpoConfig) {
    for (&key, (w, g)) in &grad.entries {
        let step = cfg.lr / (1.0 + cfg.kl_coef * w);
        for (z, d) in policy.logits_mut(key).iter_mut().zip(g) {
            *z += step * d;
        }
    }
}

/// One GRPO iteration on pre-encoded tasks. Returns the sampled groups
/// alongside the step statistics.
pub fn grpo_step_encoded(
    policy: &mut Policy,
    reference: &Policy,
    tasks: &[EncodedTask],
    cfg: &GrpoConfig,
    step: usize,
    rng_seed: u64,
) -> Result<(StepStats, Vec<GroupBatch>)> {
    cfg.validate()?;
    policy.same_family(reference)?;
    if cfg.reward_mode.mode == Mode::Adapt {
        if let Some(t) = tasks.iter().find(|t| t.prior.is_none()) {
            return Err(Error::MissingPrior(t.id.clone()));
        }
    }
    let groups = collect_groups(policy, tasks, cfg, seed::derive(rng_seed, &[step as u64]))?;

    let mut keys: Vec<ContextKey> = Vec::new();
    for g in &groups {
        visit(g, policy, |_, key, _, _| keys.push(key));
    }
    keys.sort_unstable();
    keys.dedup();
    let mean_kl = kl_reference_keys(policy, reference, &keys)?;

    let mut clipped_tokens = 0;
    let mut tokens = 0;
    for _ in 0..cfg.inner_epochs {
        let grad = batch_gradient(policy, reference, &groups, cfg);
        clipped_tokens += grad.clipped_tokens;
        tokens += grad.tokens;
        apply_gradient(policy, &grad, cfg);
    }

    let all: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    let truth: Vec<f64> = groups.iter().flat_map(|g| g.truth_rewards.iter().copied()).collect();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let stats = StepStats {
        step,
        mean_reward: mean(&all),
        mean_kl,
        clip_fraction: if tokens == 0 { 0.0 } else { clipped_tokens as f64 / tokens as f64 },
        mean_truth_reward: mean(&truth),
    };
    Ok((stats, groups))
}

/// One GRPO iteration over `candidates` with their pools (and priors in
/// adaptive mode). Updates `policy` in place.
pub fn grpo_step(
    policy: &mut Policy,
    reference: &Policy,
    candidates: &[Candidate],
    pools: &[RefPool],
    priors: Option<&[MembershipPrior]>,
    cfg: &GrpoConfig,
    rng_seed: u64,
) -> Result<StepStats> {
    let tasks = encode_tasks(policy, candidates, pools, priors, &cfg.prompt)?;
    Ok(grpo_step_encoded(policy, reference, &tasks, cfg, 0, rng_seed)?.0)
}

/// Rank-normalized Min-K%++ priors computed on `policy`.
pub fn min_k_pp_priors(
    policy: &Policy,
    candidates: &[Candidate],
    k_percent: f64,
    mapping: PriorMapping,
) -> Result<Vec<MembershipPrior>> {
    let scores = par::try_map_indexed(candidates, |_, c| {
        let ids = policy.vocab().encode(&c.tokens())?;
        let ts = crate::baselines::TokenScores::new(policy.sequence_logprobs_ids(&ids)?, c.text.clone())?;
        min_k_pp_score(&ts, &policy.vocab_stats_ids(&ids)?, k_percent)
    })?;
    priors_from_scores(&scores, mapping)
}

#[derive(Debug, Clone)]
pub struct AdraResult {
    pub policy: Policy,
    pub table: ScoreTable,
    /// Evaluation completions per candidate, in candidate order.
    pub reconstructions: Vec<(String, Vec<TokenSeq>)>,
    pub train_log: Vec<StepStats>,
}

/// Attack name used in score tables for a reward mode.
pub fn attack_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Match => "adra",
        Mode::Adapt => "adra_plus",
        Mode::Plain => "adra_plain",
    }
}

/// Trains a copy of `base_policy` for `cfg.steps` GRPO steps over all
/// candidates, then scores fresh samples from the trained policy.
pub fn run_adra(
    base_policy: &Policy,
    candidates: &[Candidate],
    cfg: &GrpoConfig,
    eval_cfg: &EvalConfig,
    rng_seed: u64,
) -> Result<AdraResult> {
    run_adra_with_log(base_policy, candidates, cfg, eval_cfg, rng_seed, |_| Ok(()))
}

/// [`run_adra`] with a callback invoked after every step.
pub fn run_adra_with_log(
    base_policy: &Policy,
    candidates: &[Candidate],
    cfg: &GrpoConfig,
    eval_cfg: &EvalConfig,
    rng_seed: u64,
    mut on_step: impl FnMut(&StepStats) -> Result<()>,
) -> Result<AdraResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("run_adra needs at least one candidate".into()));
    }
    cfg.validate()?;
    eval_cfg.validate()?;
    let priors = match cfg.reward_mode.mode {
        Mode::Adapt => Some(min_k_pp_priors(
            base_policy,
            candidates,
            cfg.prior_k_percent,
            cfg.prior_mapping,
        )?),
        _ => None,
    };
    let k = match cfg.reward_mode.mode {
        Mode::Plain => 0,
        _ => cfg.k_distractors,
    };
    let pool_seed = seed::derive(rng_seed, &[seed::tag("pools")]);
    let train_seed = seed::derive(rng_seed, &[seed::tag("train")]);
    let mut tasks = encode_tasks(
        base_policy,
        candidates,
        &build_pools(candidates, k, pool_seed)?,
        priors.as_deref(),
        &cfg.prompt,
    )?;
    let mut policy = base_policy.clone();
    let mut train_log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cfg.resample_pools && step > 0 {
            let pools = build_pools(candidates, k, seed::derive(pool_seed, &[step as u64]))?;
            tasks = encode_tasks(base_policy, candidates, &pools, priors.as_deref(), &cfg.prompt)?;
        }
        let (stats, _) = grpo_step_encoded(&mut policy, base_policy, &tasks, cfg, step, train_seed)?;
        on_step(&stats)?;
        train_log.push(stats);
    }
    let eval_seed = seed::derive(rng_seed, &[seed::tag("eval")]);
    let samples = crate::pipeline::sample_reconstructions(&policy, candidates, eval_cfg, eval_seed)?;
    let table = score_samples(candidates, &samples, attack_name(cfg.reward_mode.mode), eval_cfg)?;
    let reconstructions = candidates.iter().map(|c| c.id.clone()).zip(samples).collect();
    Ok(AdraResult {
        policy,
        table,
        reconstructions,
        train_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::Vocab;
    use std::sync::Arc;

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0, 1.0, 1.0], true), vec![0.0; 3]);
        let a = group_advantages(&[0.0, 1.0], true);
        assert!((a[0] + 1.0).abs() < 1e-7 && (a[1] - 1.0).abs() < 1e-7);
        let b = group_advantages(&[0.0, 1.0], false);
        assert_eq!(b, vec![-0.5, 0.5]);
        let r = [0.1, 0.7, 0.3, 0.9, 0.25];
        let c = group_advantages(&r, true);
        assert!(c.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let v = Arc::new(Vocab::synthetic(5).unwrap());
        let u = Policy::uniform(v.clone(), 1).unwrap();
        let mut peaked = u.clone();
        let k = peaked.context_key(&[2]);
        peaked.set_logits(k, &[0.0, 0.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(kl_reference(&u, &u, &[vec![2]]).unwrap(), 0.0);
        let p = peaked.dist_for_key(k, 1.0);
        let brute: f64 = (0..5).map(|i| 0.2 * (0.2f64 / p[i]).ln()).sum();
        let kl = kl_reference(&u, &peaked, &[vec![2]]).unwrap();
        assert!((kl - brute).abs() < 1e-12);
        let rev = kl_reference(&peaked, &u, &[vec![2]]).unwrap();
        assert!((kl - rev).abs() > 1e-3);
        let other = Policy::uniform(Arc::new(Vocab::synthetic(6).unwrap()), 1).unwrap();
        assert!(kl_reference(&u, &other, &[vec![2]]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = GrpoConfig::default();
        assert!(c.validate().is_ok());
        c.rollouts_per_candidate = 1;
        assert!(c.validate().is_err());
        c.normalize_advantages = false;
        assert!(c.validate().is_ok());
    }
}
