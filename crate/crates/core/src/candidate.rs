use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{tokenize, TokenSeq};

/// One membership-inference candidate: an observed prefix and a held-out
/// suffix. Labels live in [`LabeledCandidate`], never here, so attack code
/// that only receives `Candidate`s cannot read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub text: String,
    pub prefix_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Member,
    Nonmember,
}

impl Label {
    pub fn is_member(self) -> bool {
        self == Label::Member
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCandidate {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub label: Label,
}

impl Candidate {
    pub fn new(id: impl Into<String>, text: impl Into<String>, prefix_fraction: f64) -> Result<Self> {
        let c = Self {
            id: id.into(),
            text: text.into(),
            prefix_fraction,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prefix_fraction > 0.0 && self.prefix_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "candidate `{}`: prefix_fraction must lie in (0, 1), got {}",
                self.id, self.prefix_fraction
            )));
        }
        let n = tokenize(&self.text).len();
        let cut = self.split_index(n);
        if cut == 0 || cut >= n {
            return Err(Error::InvalidArgument(format!(
                "candidate `{}`: split at word {cut} of {n} leaves an empty prefix or suffix",
                self.id
            )));
        }
        Ok(())
    }

    fn split_index(&self, n: usize) -> usize {
        (self.prefix_fraction * n as f64).floor() as usize
    }

    pub fn tokens(&self) -> TokenSeq {
        tokenize(&self.text)
    }

    /// `(prefix, suffix)` split at word `floor(prefix_fraction * n)`.
    pub fn split(&self) -> (TokenSeq, TokenSeq) {
        let all = self.tokens();
        let cut = self.split_index(all.len());
        (all.slice(0, cut), all.slice(cut, all.len()))
    }

    pub fn prefix(&self) -> TokenSeq {
        self.split().0
    }

    pub fn suffix(&self) -> TokenSeq {
        self.split().1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_at_floor() {
        let c = Candidate::new("x", "a b c d e", 0.5).unwrap();
        let (p, s) = c.split();
        assert_eq!(p.tokens(), ["a", "b"]);
        assert_eq!(s.tokens(), ["c", "d", "e"]);
    }

    #[test]
    fn rejects_empty_sides() {
        assert!(Candidate::new("x", "a", 0.5).is_err());
        assert!(Candidate::new("x", "a b", 0.0).is_err());
        assert!(Candidate::new("x", "a b c", 0.3).is_err());
    }

    #[test]
    fn labeled_json_shape() {
        let lc = LabeledCandidate {
            candidate: Candidate::new("c1", "a b", 0.5).unwrap(),
            label: Label::Member,
        };
        let s = serde_json::to_string(&lc).unwrap();
        assert_eq!(
            s,
            r#"{"id":"c1","text":"a b","prefix_fraction":0.5,"label":"member"}"#
        );
    }
}
