use super::{Policy, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::metrics::TokenSeq;

/// Gradient of `log softmax(z)[token]` with respect to the logits `z` of the
/// given context: `1{v = token} - p(v | context)`. All other contexts have
/// zero gradient.
pub fn logpi_grad(policy: &Policy, context: &[TokenId], token: TokenId) -> Result<Vec<f64>> {
    if token as usize >= policy.vocab_size() {
        return Err(Error::OutOfVocab(format!("#{token}")));
    }
    Ok(grad_for_key(policy, policy.context_key(context), token))
}

pub(crate) fn grad_for_key(policy: &Policy, key: u64, token: TokenId) -> Vec<f64> {
    let mut g = policy.dist_for_key(key, 1.0);
    g.iter_mut().for_each(|p| *p = -*p);
    g[token as usize] += 1.0;
    g
}

/// Plain online maximum-likelihood ascent: one SGD step per sequence, every
/// sequence followed by EOS, `epochs` passes in corpus order.
pub fn sft_update(policy: &Policy, corpus: &[TokenSeq], lr: f64, epochs: usize) -> Result<Policy> {
    let encoded: Vec<Vec<TokenId>> = corpus
        .iter()
        .map(|s| policy.vocab().encode(s))
        .collect::<Result<_>>()?;
    let mut out = policy.clone();
    sft_update_ids(&mut out, &encoded, lr, epochs)?;
    Ok(out)
}

/// In-place variant of [`sft_update`] over pre-encoded sequences.
pub fn sft_update_ids(policy: &mut Policy, corpus: &[Vec<TokenId>], lr: f64, epochs: usize) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty SFT corpus".into()));
    }
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    if lr == 0.0 {
        return Ok(());
    }
    let v = policy.vocab_size();
    let mut with_eos: Vec<TokenId> = Vec::new();
    for _ in 0..epochs {
        for seq in corpus {
            with_eos.clear();
            with_eos.extend_from_slice(seq);
            with_eos.push(Vocab::EOS_ID);
            if let Some(t) = with_eos.iter().find(|&&t| t as usize >= v) {
                return Err(Error::OutOfVocab(format!("#{t}")));
            }
            for i in 0..with_eos.len() {
                let key = policy.context_at(&with_eos, i);
                let g = grad_for_key(policy, key, with_eos[i]);
                for (z, d) in policy.logits_mut(key).iter_mut().zip(&g) {
                    *z += lr * d;
                }
            }
        }
    }
    Ok(())
}

/// Mean per-token log-likelihood of a corpus (EOS included), used to check
/// that training ascends.
pub fn corpus_loglik(policy: &Policy, corpus: &[Vec<TokenId>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for seq in corpus {
        let mut s = seq.clone();
        s.push(Vocab::EOS_ID);
        for i in 0..s.len() {
            total += policy.token_logprob(policy.context_at(&s, i), s[i]);
            count += 1;
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::Vocab;
    use std::sync::Arc;

    fn policy(order: usize) -> Policy {
        Policy::uniform(Arc::new(Vocab::synthetic(6).unwrap()), order).unwrap()
    }

    #[test]
    fn uniform_grad_closed_form() {
        let p = Policy::uniform(Arc::new(Vocab::synthetic(4).unwrap()), 2).unwrap();
        let g = logpi_grad(&p, &[3], 2).unwrap();
        assert_eq!(g, vec![-0.25, -0.25, 0.75, -0.25]);
        let s: f64 = g.iter().sum();
        assert!(s.abs() < 1e-15);
        assert!(logpi_grad(&p, &[3], 9).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut p = policy(2);
        let ctx = [2u32, 4];
        let key = p.context_key(&ctx);
        p.set_logits(key, &[0.3, -0.2, 1.1, 0.0, -0.7, 0.4]).unwrap();
        let g = logpi_grad(&p, &ctx, 4).unwrap();
        let h = 1e-5;
        for (v, gv) in g.iter().enumerate() {
            let mut plus = p.clone();
            plus.logits_mut(key)[v] += h;
            let mut minus = p.clone();
            minus.logits_mut(key)[v] -= h;
            let fd = (plus.token_logprob(key, 4) - minus.token_logprob(key, 4)) / (2.0 * h);
            assert!((fd - gv).abs() <= 1e-6 * gv.abs().max(1e-3), "v={v}: {fd} vs {gv}");
        }
    }

    #[test]
    fn sft_memorizes_and_lr_zero_is_identity() {
        let p = policy(2);
        let seq = p.vocab().decode(&[2, 3, 4, 5, 3, 2]);
        let same = sft_update(&p, std::slice::from_ref(&seq), 0.0, 5).unwrap();
        assert_eq!(same, p);
        let trained = sft_update(&p, std::slice::from_ref(&seq), 1.0, 200).unwrap();
        let lps = trained.sequence_logprobs_ids(&p.vocab().encode(&seq).unwrap()).unwrap();
        assert!(lps.iter().all(|l| *l > -0.05), "{lps:?}");
        assert!(sft_update(&p, &[], 0.1, 1).is_err());
    }

    #[test]
    fn sft_leaves_disjoint_contexts_alone() {
        let mut p = policy(1);
        let other = p.context_key(&[5]);
        p.set_logits(other, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let before = p.dist_for_key(other, 1.0);
        let corpus = vec![vec![2, 3, 2, 3]];
        sft_update_ids(&mut p, &corpus, 0.5, 3).unwrap();
        assert_eq!(p.dist_for_key(other, 1.0), before);
    }

    #[test]
    fn sft_ascends() {
        let mut p = policy(2);
        let corpus: Vec<Vec<u32>> = (0..20)
            .map(|i| (0..8).map(|j| 2 + ((i * 3 + j * j) % 4) as u32).collect())
            .collect();
        let mut last = corpus_loglik(&p, &corpus);
        for _ in 0..5 {
            sft_update_ids(&mut p, &corpus, 0.05, 1).unwrap();
            let now = corpus_loglik(&p, &corpus);
            assert!(now >= last, "{now} < {last}");
            last = now;
        }
    }
}
