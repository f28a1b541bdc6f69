use crate::candidate::Label;
use crate::error::{Error, Result};
use crate::rewards::average_ranks;

/// Area under the ROC curve via the Mann-Whitney U statistic: the probability
/// that a random member outscores a random non-member, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs labels",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {bad} is NaN")));
    }
    let members = labels.iter().filter(|l| l.is_member()).count();
    let nonmembers = labels.len() - members;
    if members == 0 || nonmembers == 0 {
        return Err(Error::SingleClass { members, nonmembers });
    }
    // Zero-based average ranks; U = sum of member ranks - m(m-1)/2.
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_member())
        .map(|(r, _)| r)
        .sum();
    let m = members as f64;
    let u = rank_sum - m * (m - 1.0) / 2.0;
    Ok(u / (m * nonmembers as f64))
}

/// Threshold decisions `score >= epsilon`; `epsilon` defaults to the median.
pub fn decide(scores: &[f64], epsilon: Option<f64>) -> Vec<bool> {
    let eps = epsilon.unwrap_or_else(|| median(scores));
    scores.iter().map(|s| *s >= eps).collect()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
