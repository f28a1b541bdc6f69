use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::jsonl;

/// How per-sample scores are reduced to one score per candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Average of N.
    Aon,
    /// Best of N.
    Bon,
    /// Single-valued scores (passive attacks).
    None,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Aon => "aon",
            Aggregation::Bon => "bon",
            Aggregation::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub attack: String,
    pub metric: String,
    pub aggregation: Aggregation,
    pub score: f64,
}

/// `(attack, metric, aggregation)` column key.
pub type ColumnKey = (String, String, Aggregation);

/// Membership scores keyed by `(candidate, attack, metric, aggregation)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, id: &str, attack: &str, metric: &str, aggregation: Aggregation, score: f64) {
        self.rows.push(ScoreRow {
            id: id.to_owned(),
            attack: attack.to_owned(),
            metric: metric.to_owned(),
            aggregation,
            score,
        });
    }

    pub fn extend(&mut self, other: ScoreTable) {
        self.rows.extend(other.rows);
    }

    /// Checks for duplicate keys and for a complete grid: every column must
    /// cover the same candidate set.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert((&r.id, &r.attack, &r.metric, r.aggregation)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate score row ({}, {}, {}, {})",
                    r.id,
                    r.attack,
                    r.metric,
                    r.aggregation.as_str()
                )));
            }
            if !r.score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for ({}, {}, {})",
                    r.id, r.attack, r.metric
                )));
            }
        }
        let cols = self.columns();
        let mut ids: Option<Vec<&String>> = None;
        for (key, col) in &cols {
            let mut these: Vec<&String> = col.keys().collect();
            these.sort();
            match &ids {
                None => ids = Some(these),
                Some(first) if *first != these => {
                    return Err(Error::InvalidArgument(format!(
                        "incomplete grid: column ({}, {}, {}) covers a different candidate set",
                        key.0,
                        key.1,
                        key.2.as_str()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Columns in first-seen order of attack, then sorted metric/aggregation.
    pub fn columns(&self) -> BTreeMap<ColumnKey, BTreeMap<String, f64>> {
        let mut out: BTreeMap<ColumnKey, BTreeMap<String, f64>> = BTreeMap::new();
        for r in &self.rows {
            out.entry((r.attack.clone(), r.metric.clone(), r.aggregation))
                .or_default()
                .insert(r.id.clone(), r.score);
        }
        out
    }

    pub fn attacks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.attack) {
                out.push(r.attack.clone());
            }
        }
        out
    }

    pub fn get(&self, id: &str, attack: &str, metric: &str, aggregation: Aggregation) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.id == id && r.attack == attack && r.metric == metric && r.aggregation == aggregation)
            .map(|r| r.score)
    }

    /// Rows of one attack only.
    pub fn filter_attack(&self, attack: &str) -> ScoreTable {
        ScoreTable {
            rows: self.rows.iter().filter(|r| r.attack == attack).cloned().collect(),
        }
    }

    /// Same rows, with every attack renamed to `attack`.
    pub fn renamed(&self, attack: &str) -> ScoreTable {
        ScoreTable {
            rows: self
                .rows
                .iter()
                .map(|r| ScoreRow {
                    attack: attack.to_owned(),
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<ScoreTable> {
        Ok(ScoreTable {
            rows: jsonl::parse_lines(r)?.into_iter().map(|(_, row)| row).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScoreTable> {
        ScoreTable::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
