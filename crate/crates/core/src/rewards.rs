//! Contrastive reward shaping over a pool of reference suffixes.
//!
//! Each rollout is scored against the true suffix and `k` distractor suffixes
//! drawn from other candidates. Matching takes the best score over the whole
//! pool; adaptive matching mixes the full-pool and distractor-only maxima with
//! a per-candidate membership prior.

use std::hash::Hash;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::candidate::Candidate;
use crate::error::{Error, Result};
use crate::metrics::{base_reward_slice, RewardSpec, TokenSeq};
use crate::seed;

/// Distractor count used unless configured otherwise.
pub const DEFAULT_DISTRACTORS: usize = 7;

/// The ground-truth suffix plus `k` distractor suffixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefPool {
    pub truth_id: String,
    pub truth: TokenSeq,
    pub distractor_ids: Vec<String>,
    pub distractors: Vec<TokenSeq>,
}

impl RefPool {
    pub fn k(&self) -> usize {
        self.distractors.len()
    }

    /// Pool size, truth included.
    pub fn size(&self) -> usize {
        self.k() + 1
    }

    /// Truth-only pool; matching against it reduces to the plain reward.
    pub fn truth_only(target: &Candidate) -> Self {
        Self {
            truth_id: target.id.clone(),
            truth: target.suffix(),
            distractor_ids: Vec::new(),
            distractors: Vec::new(),
        }
    }

    /// Two-suffix pool for shared-prefix pairs, where the policy is rewarded
    /// for whichever suffix it reconstructs better.
    pub fn pair(target: &Candidate, partner: &Candidate) -> Result<Self> {
        if partner.id == target.id {
            return Err(Error::InvalidArgument("pair partner equals target".into()));
        }
        Ok(Self {
            truth_id: target.id.clone(),
            truth: target.suffix(),
            distractor_ids: vec![partner.id.clone()],
            distractors: vec![partner.suffix()],
        })
    }

    fn validate(&self) -> Result<()> {
        if self.distractor_ids.len() != self.distractors.len() {
            return Err(Error::LengthMismatch {
                what: "distractor ids vs suffixes",
                left: self.distractor_ids.len(),
                right: self.distractors.len(),
            });
        }
        if self.distractor_ids.contains(&self.truth_id) {
            return Err(Error::InvalidArgument(format!(
                "pool for `{}` lists its own suffix as a distractor",
                self.truth_id
            )));
        }
        Ok(())
    }
}

/// Samples `k` distractors without replacement from `others`.
///
/// `forced` names a candidate that must appear in the pool (e.g. the paired
/// article of a member/non-member pair); it counts toward `k`.
pub fn build_pool(
    target: &Candidate,
    others: &[&Candidate],
    k: usize,
    rng_seed: u64,
    forced: Option<&str>,
) -> Result<RefPool> {
    if others.iter().any(|o| o.id == target.id) {
        return Err(Error::InvalidArgument(format!(
            "distractor source for `{}` contains the target itself",
            target.id
        )));
    }
    if others.len() < k {
        return Err(Error::InsufficientPool {
            need: k,
            have: others.len(),
        });
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    if let Some(fid) = forced.filter(|_| k > 0) {
        let pos = others
            .iter()
            .position(|o| o.id == fid)
            .ok_or_else(|| Error::InvalidArgument(format!("forced distractor `{fid}` not found")))?;
        chosen.push(pos);
    }
    let remaining: Vec<usize> = (0..others.len()).filter(|i| !chosen.contains(i)).collect();
    let mut rng = seed::rng(rng_seed);
    let need = k - chosen.len();
    chosen.extend(
        sample(&mut rng, remaining.len(), need)
            .into_iter()
            .map(|j| remaining[j]),
    );
    Ok(RefPool {
        truth_id: target.id.clone(),
        truth: target.suffix(),
        distractor_ids: chosen.iter().map(|&i| others[i].id.clone()).collect(),
        distractors: chosen.iter().map(|&i| others[i].suffix()).collect(),
    })
}

/// Builds one frozen pool per candidate, drawing distractors from every other
/// candidate in the batch.
pub fn build_pools(candidates: &[Candidate], k: usize, rng_seed: u64) -> Result<Vec<RefPool>> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, target)| {
            let others: Vec<&Candidate> = candidates
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| c)
                .collect();
            build_pool(target, &others, k, seed::derive(rng_seed, &[i as u64]), None)
        })
        .collect()
}

/// A membership prior in `[0, 1]`; larger means more likely a member.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MembershipPrior(f64);

impl MembershipPrior {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!(
                "membership prior must lie in [0, 1], got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Max over truth and distractors.
    Match,
    /// Prior-weighted mix of full-pool and distractor-only maxima.
    Adapt,
    /// Truth only.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptForm {
    #[default]
    Expected,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardMode {
    pub mode: Mode,
    pub adapt_form: AdaptForm,
}

impl Default for RewardMode {
    fn default() -> Self {
        Self {
            mode: Mode::Match,
            adapt_form: AdaptForm::Expected,
        }
    }
}

/// Full-pool and distractor-only maxima for one rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolScores {
    pub truth: f64,
    pub union: f64,
    pub distract: f64,
}

pub fn pool_scores_slice<T: Eq + Hash, D: AsRef<[T]>>(
    rollout: &[T],
    truth: &[T],
    distractors: &[D],
    spec: &RewardSpec,
) -> Result<PoolScores> {
    let t = base_reward_slice(rollout, truth, spec)?;
    let mut distract = 0.0f64;
    for d in distractors {
        distract = distract.max(base_reward_slice(rollout, d.as_ref(), spec)?);
    }
    Ok(PoolScores {
        truth: t,
        union: t.max(distract),
        distract,
    })
}

pub fn pool_scores(rollout: &TokenSeq, pool: &RefPool, spec: &RewardSpec) -> Result<PoolScores> {
    pool.validate()?;
    let ds: Vec<&[String]> = pool.distractors.iter().map(|d| d.tokens()).collect();
    pool_scores_slice(rollout.tokens(), pool.truth.tokens(), &ds, spec)
}

/// Best base reward over the whole pool.
pub fn reward_match(rollout: &TokenSeq, pool: &RefPool, spec: &RewardSpec) -> Result<f64> {
    Ok(pool_scores(rollout, pool, spec)?.union)
}

/// Combines pool maxima under adaptive matching. `rng_seed` is only consumed
/// by the sampled form.
pub fn adapt_from_scores(scores: PoolScores, prior: MembershipPrior, form: AdaptForm, rng_seed: u64) -> f64 {
    let p = prior.value();
    match form {
        AdaptForm::Expected => p * scores.union + (1.0 - p) * scores.distract,
        AdaptForm::Sampled => {
            let z = seed::rng(rng_seed).gen_bool(p);
            if z {
                scores.union
            } else {
                scores.distract
            }
        }
    }
}

pub fn reward_adapt(
    rollout: &TokenSeq,
    pool: &RefPool,
    prior: MembershipPrior,
    spec: &RewardSpec,
    form: AdaptForm,
    rng_seed: u64,
) -> Result<f64> {
    let s = pool_scores(rollout, pool, spec)?;
    Ok(adapt_from_scores(s, prior, form, rng_seed))
}

/// Reward under `mode`. `prior` is required for [`Mode::Adapt`].
pub fn reward_for_mode(
    scores: PoolScores,
    mode: &RewardMode,
    prior: Option<MembershipPrior>,
    rng_seed: u64,
    id: &str,
) -> Result<f64> {
    match mode.mode {
        Mode::Plain => Ok(scores.truth),
        Mode::Match => Ok(scores.union),
        Mode::Adapt => {
            let p = prior.ok_or_else(|| Error::MissingPrior(id.to_owned()))?;
            Ok(adapt_from_scores(scores, p, mode.adapt_form, rng_seed))
        }
    }
}

/// How raw passive scores become priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMapping {
    #[default]
    Rank,
    MinMax,
}

/// Maps passive scores (higher means member) to priors in `[0, 1]`.
///
/// Rank mapping gives `rank / (n - 1)` with ascending ranks from 0 and ties
/// sharing their average rank.
pub fn priors_from_scores(scores: &[f64], mapping: PriorMapping) -> Result<Vec<MembershipPrior>> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 scores to build priors, got {n}"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite passive score {bad}")));
    }
    let values: Vec<f64> = match mapping {
        PriorMapping::Rank => {
            let ranks = average_ranks(scores);
            ranks.iter().map(|r| r / (n - 1) as f64).collect()
        }
        PriorMapping::MinMax => {
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                vec![0.5; n]
            } else {
                scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
            }
        }
    };
    values.into_iter().map(|v| MembershipPrior::new(v.clamp(0.0, 1.0))).collect()
}

/// Zero-based ascending ranks; tied values share the mean of their positions.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{base_reward, tokenize, RewardKind};

    fn cands(n: usize) -> Vec<Candidate> {
        (0..n)
            .map(|i| Candidate::new(format!("c{i}"), format!("p{i} q{i} s{i} t{i} u{i} v{i}"), 0.5).unwrap())
            .collect()
    }

    #[test]
    fn pool_k_zero_and_determinism() {
        let cs = cands(100);
        let others: Vec<&Candidate> = cs[1..].iter().collect();
        let p0 = build_pool(&cs[0], &others, 0, 1, None).unwrap();
        assert_eq!(p0.size(), 1);
        let a = build_pool(&cs[0], &others, DEFAULT_DISTRACTORS, 42, None).unwrap();
        let b = build_pool(&cs[0], &others, DEFAULT_DISTRACTORS, 42, None).unwrap();
        assert_eq!(a.distractor_ids, b.distractor_ids);
        assert_eq!(a.size(), 8);
        let mut ids = a.distractor_ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 7);
        assert!(!ids.contains(&"c0".to_string()));
    }

    #[test]
    fn pool_errors_and_forced() {
        let cs = cands(5);
        let others: Vec<&Candidate> = cs[1..].iter().collect();
        assert!(matches!(
            build_pool(&cs[0], &others, 7, 1, None),
            Err(Error::InsufficientPool { need: 7, have: 4 })
        ));
        let with_self: Vec<&Candidate> = cs.iter().collect();
        assert!(build_pool(&cs[0], &with_self, 2, 1, None).is_err());
        for s in 0..20 {
            let p = build_pool(&cs[0], &others, 2, s, Some("c3")).unwrap();
            assert!(p.distractor_ids.contains(&"c3".to_string()));
            assert_eq!(p.k(), 2);
        }
    }

    #[test]
    fn match_examples() {
        let cs = cands(10);
        let spec = RewardSpec::default();
        let others: Vec<&Candidate> = cs[1..].iter().collect();
        let pool = build_pool(&cs[0], &others, 7, 3, None).unwrap();
        assert_eq!(reward_match(&pool.truth, &pool, &spec).unwrap(), 1.0);
        assert_eq!(reward_match(&pool.distractors[3], &pool, &spec).unwrap(), 1.0);
        let p0 = RefPool::truth_only(&cs[0]);
        let r = tokenize("s0 t0 x y");
        assert_eq!(
            reward_match(&r, &p0, &spec).unwrap(),
            base_reward(&r, &p0.truth, &spec).unwrap()
        );
    }

    #[test]
    fn adapt_examples() {
        let cs = cands(10);
        let spec = RewardSpec {
            kind: RewardKind::Trio,
            ..Default::default()
        };
        let others: Vec<&Candidate> = cs[1..].iter().collect();
        let pool = build_pool(&cs[0], &others, 7, 3, None).unwrap();
        let r = pool.truth.clone();
        let one = MembershipPrior::new(1.0).unwrap();
        let zero = MembershipPrior::new(0.0).unwrap();
        for form in [AdaptForm::Expected, AdaptForm::Sampled] {
            assert_eq!(
                reward_adapt(&r, &pool, one, &spec, form, 9).unwrap(),
                reward_match(&r, &pool, &spec).unwrap()
            );
            let d = reward_adapt(&r, &pool, zero, &spec, form, 9).unwrap();
            assert_eq!(d, pool_scores(&r, &pool, &spec).unwrap().distract);
        }
        let s = PoolScores {
            truth: 0.8,
            union: 0.8,
            distract: 0.2,
        };
        let half = MembershipPrior::new(0.5).unwrap();
        assert!((adapt_from_scores(s, half, AdaptForm::Expected, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampled_adapt_is_seeded() {
        let s = PoolScores {
            truth: 0.9,
            union: 0.9,
            distract: 0.1,
        };
        let p = MembershipPrior::new(0.3).unwrap();
        let draws: Vec<f64> = (0..2000)
            .map(|i| adapt_from_scores(s, p, AdaptForm::Sampled, i))
            .collect();
        let again: Vec<f64> = (0..2000)
            .map(|i| adapt_from_scores(s, p, AdaptForm::Sampled, i))
            .collect();
        assert_eq!(draws, again);
        let frac = draws.iter().filter(|&&d| d == 0.9).count() as f64 / 2000.0;
        // 3 sigma binomial band around 0.3
        assert!((frac - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / 2000.0).sqrt());
    }

    #[test]
    fn adapt_requires_prior() {
        let s = PoolScores {
            truth: 0.5,
            union: 0.5,
            distract: 0.0,
        };
        let mode = RewardMode {
            mode: Mode::Adapt,
            adapt_form: AdaptForm::Expected,
        };
        assert!(matches!(
            reward_for_mode(s, &mode, None, 0, "x"),
            Err(Error::MissingPrior(_))
        ));
    }

    #[test]
    fn prior_examples() {
        let p: Vec<f64> = priors_from_scores(&[10.0, 20.0, 30.0], PriorMapping::Rank)
            .unwrap()
            .into_iter()
            .map(MembershipPrior::value)
            .collect();
        assert_eq!(p, [0.0, 0.5, 1.0]);
        let eq = priors_from_scores(&[3.0, 3.0, 3.0, 3.0], PriorMapping::Rank).unwrap();
        assert!(eq.iter().all(|p| p.value() == 0.5));
        let raw = [0.3, -2.0, 5.0, 5.0, 1.0];
        let transformed: Vec<f64> = raw.iter().map(|x: &f64| x.exp() * 3.0 + 1.0).collect();
        assert_eq!(
            priors_from_scores(&raw, PriorMapping::Rank).unwrap(),
            priors_from_scores(&transformed, PriorMapping::Rank).unwrap()
        );
        assert!(priors_from_scores(&[1.0], PriorMapping::Rank).is_err());
        let mm = priors_from_scores(&[0.0, 5.0, 10.0], PriorMapping::MinMax).unwrap();
        assert_eq!(mm[1].value(), 0.5);
    }
}
