//! Reading and writing the JSONL dump formats.
//!
//! * candidates: `{"id", "text", "label", "prefix_fraction"}`
//! * generations: `{"id", "sample_index", "completion"}`
//! * logprobs: `{"id", "token_logprobs", "vocab_mu"?, "vocab_sigma"?, "ref_token_logprobs"?}`
//!
//! Any malformed line rejects the whole file; nothing is partially ingested.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::jsonl::{parse_lines, write_lines};
use super::{score_passive, score_samples, EvalConfig, PassiveInputs, ScoreTable};
use crate::baselines::{TokenScores, VocabStats};
use crate::candidate::{Candidate, Label, LabeledCandidate};
use crate::error::{Error, Result};
use crate::metrics::{tokenize, TokenSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub sample_index: usize,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub id: String,
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_sigma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_token_logprobs: Option<Vec<f64>>,
}

fn schema(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

fn index_of(candidates: &[Candidate]) -> HashMap<&str, usize> {
    candidates.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect()
}

pub fn read_candidates(r: impl BufRead) -> Result<Vec<LabeledCandidate>> {
    let rows: Vec<(usize, LabeledCandidate)> = parse_lines(r)?;
    let mut seen = HashMap::new();
    for (line, c) in &rows {
        c.candidate.validate().map_err(|e| schema(*line, e.to_string()))?;
        if let Some(first) = seen.insert(c.candidate.id.clone(), *line) {
            return Err(schema(
                *line,
                format!("duplicate id `{}` (first on line {first})", c.candidate.id),
            ));
        }
    }
    Ok(rows.into_iter().map(|(_, c)| c).collect())
}

pub fn write_candidates(w: impl Write, candidates: &[LabeledCandidate]) -> Result<()> {
    write_lines(w, candidates)
}

/// Completions per candidate, in candidate order, each sorted by sample index.
pub fn read_generations(r: impl BufRead, candidates: &[Candidate]) -> Result<Vec<Vec<TokenSeq>>> {
    let index = index_of(candidates);
    let mut by_candidate: Vec<BTreeMap<usize, TokenSeq>> = vec![BTreeMap::new(); candidates.len()];
    for (line, g) in parse_lines::<GenerationRecord>(r)? {
        let &i = index
            .get(g.id.as_str())
            .ok_or_else(|| schema(line, format!("unknown candidate id `{}`", g.id)))?;
        if by_candidate[i].insert(g.sample_index, tokenize(&g.completion)).is_some() {
            return Err(schema(
                line,
                format!("duplicate sample_index {} for `{}`", g.sample_index, g.id),
            ));
        }
    }
    candidates
        .iter()
        .zip(by_candidate)
        .map(|(c, m)| {
            if m.is_empty() {
                Err(Error::InvalidArgument(format!("no generations for candidate `{}`", c.id)))
            } else {
                Ok(m.into_values().collect())
            }
        })
        .collect()
}

pub fn write_generations(w: impl Write, candidates: &[Candidate], samples: &[Vec<TokenSeq>]) -> Result<()> {
    let records = candidates.iter().zip(samples).flat_map(|(c, list)| {
        list.iter().enumerate().map(move |(j, s)| GenerationRecord {
            id: c.id.clone(),
            sample_index: j,
            completion: s.tokens().join(" "),
        })
    });
    write_lines(w, records)
}

/// Passive-attack inputs per candidate, in candidate order.
pub fn read_logprobs(r: impl BufRead, candidates: &[Candidate]) -> Result<Vec<PassiveInputs>> {
    let index = index_of(candidates);
    let mut slots: Vec<Option<PassiveInputs>> = vec![None; candidates.len()];
    for (line, rec) in parse_lines::<LogprobRecord>(r)? {
        let &i = index
            .get(rec.id.as_str())
            .ok_or_else(|| schema(line, format!("unknown candidate id `{}`", rec.id)))?;
        let text = candidates[i].text.clone();
        let at_line = |e: Error| schema(line, e.to_string());
        let scores = TokenScores::new(rec.token_logprobs, text.clone()).map_err(at_line)?;
        let n = scores.len();
        let vocab = match (rec.vocab_mu, rec.vocab_sigma) {
            (Some(mu), Some(sigma)) => {
                if mu.len() != n || sigma.len() != n {
                    return Err(schema(
                        line,
                        format!(
                            "vocab_mu/vocab_sigma lengths {}/{} differ from {n} token_logprobs",
                            mu.len(),
                            sigma.len()
                        ),
                    ));
                }
                Some(VocabStats { mu, sigma })
            }
            (None, None) => None,
            _ => return Err(schema(line, "vocab_mu and vocab_sigma must appear together")),
        };
        let reference = rec
            .ref_token_logprobs
            .map(|lp| TokenScores::new(lp, text))
            .transpose()
            .map_err(at_line)?;
        if slots[i].is_some() {
            return Err(schema(line, format!("duplicate logprobs for `{}`", rec.id)));
        }
        slots[i] = Some(PassiveInputs {
            id: rec.id,
            scores,
            vocab,
            reference,
        });
    }
    candidates
        .iter()
        .zip(slots)
        .map(|(c, s)| s.ok_or_else(|| Error::InvalidArgument(format!("no logprobs for candidate `{}`", c.id))))
        .collect()
}

pub fn write_logprobs(w: impl Write, inputs: &[PassiveInputs]) -> Result<()> {
    let records = inputs.iter().map(|p| LogprobRecord {
        id: p.id.clone(),
        token_logprobs: p.scores.logprobs.clone(),
        vocab_mu: p.vocab.as_ref().map(|v| v.mu.clone()),
        vocab_sigma: p.vocab.as_ref().map(|v| v.sigma.clone()),
        ref_token_logprobs: p.reference.as_ref().map(|r| r.logprobs.clone()),
    });
    write_lines(w, records)
}

/// Externally produced dumps, aligned to the candidate file.
#[derive(Debug, Clone)]
pub struct Dumps {
    pub candidates: Vec<LabeledCandidate>,
    pub generations: Option<Vec<Vec<TokenSeq>>>,
    pub logprobs: Option<Vec<PassiveInputs>>,
}

impl Dumps {
    pub fn read(
        candidates: impl BufRead,
        generations: Option<impl BufRead>,
        logprobs: Option<impl BufRead>,
    ) -> Result<Dumps> {
        let candidates = read_candidates(candidates)?;
        let plain = Self::plain(&candidates);
        let generations = generations.map(|r| read_generations(r, &plain)).transpose()?;
        let logprobs = logprobs.map(|r| read_logprobs(r, &plain)).transpose()?;
        Ok(Dumps {
            candidates,
            generations,
            logprobs,
        })
    }

    fn plain(candidates: &[LabeledCandidate]) -> Vec<Candidate> {
        candidates.iter().map(|c| c.candidate.clone()).collect()
    }

    pub fn attack_candidates(&self) -> Vec<Candidate> {
        Self::plain(&self.candidates)
    }

    pub fn label_map(&self) -> HashMap<String, Label> {
        self.candidates.iter().map(|c| (c.candidate.id.clone(), c.label)).collect()
    }

    /// Scores generations as `attack` and logprobs with the passive attacks.
    pub fn score(&self, attack: &str, cfg: &EvalConfig, k_percents: &[f64]) -> Result<ScoreTable> {
        let mut table = ScoreTable::new();
        if let Some(g) = &self.generations {
            table.extend(score_samples(&self.attack_candidates(), g, attack, cfg)?);
        }
        if let Some(lp) = &self.logprobs {
            table.extend(score_passive(lp, k_percents)?);
        }
        if table.is_empty() {
            return Err(Error::NothingToReport);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands() -> Vec<Candidate> {
        vec![
            Candidate::new("a", "w1 w2 w3 w4", 0.5).unwrap(),
            Candidate::new("b", "w5 w6 w7 w8", 0.5).unwrap(),
        ]
    }

    #[test]
    fn generation_errors_carry_lines() {
        let c = cands();
        let text = "{\"id\":\"a\",\"sample_index\":0,\"completion\":\"w3\"}\n{\"id\":\"zz\",\"sample_index\":0,\"completion\":\"\"}\n";
        let e = read_generations(text.as_bytes(), &c).unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("zz"), "{e}");
        let text = "{\"id\":\"a\",\"completion\":\"w3\"}\n";
        let e = read_generations(text.as_bytes(), &c).unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("sample_index"), "{e}");
        let text = "{\"id\":\"a\",\"sample_index\":0,\"completion\":\"w3\"}\n";
        assert!(read_generations(text.as_bytes(), &c).is_err());
    }

    #[test]
    fn generations_sorted_by_index() {
        let c = cands();
        let text = "{\"id\":\"b\",\"sample_index\":1,\"completion\":\"w8\"}\n\
                    {\"id\":\"a\",\"sample_index\":0,\"completion\":\"w3 w4\"}\n\
                    {\"id\":\"b\",\"sample_index\":0,\"completion\":\"w7\"}\n";
        let g = read_generations(text.as_bytes(), &c).unwrap();
        assert_eq!(g[0], vec![tokenize("w3 w4")]);
        assert_eq!(g[1], vec![tokenize("w7"), tokenize("w8")]);
    }

    #[test]
    fn logprob_validation() {
        let c = cands();
        let bad = "{\"id\":\"a\",\"token_logprobs\":[-1.0],\"vocab_mu\":[-1.0]}\n";
        let e = read_logprobs(bad.as_bytes(), &c).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        let pos = "{\"id\":\"a\",\"token_logprobs\":[0.5]}\n";
        assert!(read_logprobs(pos.as_bytes(), &c).is_err());
    }
}
