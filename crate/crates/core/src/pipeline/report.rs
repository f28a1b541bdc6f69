use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{auroc, Aggregation, ScoreTable};
use crate::candidate::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocEntry {
    pub attack: String,
    pub metric: String,
    pub aggregation: Aggregation,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub best_auroc: f64,
    pub best_metric: String,
    pub best_aggregation: Aggregation,
    /// Mean of the five highest AUROCs (fewer if the attack has fewer columns).
    pub top5_mean: f64,
    pub columns: usize,
}

/// Mean reconstruction quality of one attack/metric over one label group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionEntry {
    pub attack: String,
    pub metric: String,
    pub label: Label,
    /// Mean best-of-N score.
    pub best: Option<f64>,
    /// Mean average-of-N score.
    pub avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_digest: String,
    pub n_members: usize,
    pub n_nonmembers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub summaries: Vec<AttackSummary>,
    pub entries: Vec<AurocEntry>,
    pub reconstruction: Vec<ReconstructionEntry>,
}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_digest(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// AUROC for every `(attack, metric, aggregation)` column of `table`.
pub fn build_report(
    table: &ScoreTable,
    labels: &HashMap<String, Label>,
    config: serde_json::Value,
    seed: Option<u64>,
) -> Result<Report> {
    if table.is_empty() {
        return Err(Error::NothingToReport);
    }
    table.validate()?;
    let columns = table.columns();
    let ids: Vec<&String> = columns.values().next().expect("non-empty").keys().collect();
    let id_labels = ids
        .iter()
        .map(|id| {
            labels
                .get(*id)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("no label for candidate `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_members = id_labels.iter().filter(|l| l.is_member()).count();

    let mut entries = Vec::with_capacity(columns.len());
    for ((attack, metric, aggregation), col) in &columns {
        let scores: Vec<f64> = col.values().copied().collect();
        entries.push(AurocEntry {
            attack: attack.clone(),
            metric: metric.clone(),
            aggregation: *aggregation,
            auroc: auroc(&scores, &id_labels)?,
        });
    }

    let mut summaries = Vec::new();
    for attack in table.attacks() {
        let mine: Vec<&AurocEntry> = entries.iter().filter(|e| e.attack == attack).collect();
        let best = mine
            .iter()
            .copied()
            .reduce(|a, b| if b.auroc > a.auroc { b } else { a })
            .expect("attack has columns");
        let mut sorted: Vec<f64> = mine.iter().map(|e| e.auroc).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.truncate(5);
        summaries.push(AttackSummary {
            attack: attack.clone(),
            best_auroc: best.auroc,
            best_metric: best.metric.clone(),
            best_aggregation: best.aggregation,
            top5_mean: mean(&sorted),
            columns: mine.len(),
        });
    }

    let mut reconstruction = Vec::new();
    for attack in table.attacks() {
        let mut metrics: Vec<&String> = Vec::new();
        for (a, m, agg) in columns.keys() {
            if *a == attack && *agg != Aggregation::None && !metrics.contains(&m) {
                metrics.push(m);
            }
        }
        for metric in metrics {
            for label in [Label::Member, Label::Nonmember] {
                let group_mean = |agg: Aggregation| {
                    columns.get(&(attack.clone(), metric.clone(), agg)).map(|col| {
                        let xs: Vec<f64> = col
                            .iter()
                            .filter(|(id, _)| labels.get(*id) == Some(&label))
                            .map(|(_, v)| *v)
                            .collect();
                        mean(&xs)
                    })
                };
                reconstruction.push(ReconstructionEntry {
                    attack: attack.clone(),
                    metric: metric.clone(),
                    label,
                    best: group_mean(Aggregation::Bon),
                    avg: group_mean(Aggregation::Aon),
                });
            }
        }
    }

    Ok(Report {
        meta: ReportMeta {
            seed,
            config_digest: config_digest(&config),
            config,
            n_members,
            n_nonmembers: id_labels.len() - n_members,
        },
        summaries,
        entries,
        reconstruction,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

impl Report {
    pub fn summary(&self, attack: &str) -> Option<&AttackSummary> {
        self.summaries.iter().find(|s| s.attack == attack)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Membership inference report\n");
        let seed = self.meta.seed.map_or_else(|| "-".to_owned(), |s| s.to_string());
        let _ = writeln!(
            out,
            "Seed {seed}, config digest `{}`, {} members, {} non-members.\n",
            self.meta.config_digest, self.meta.n_members, self.meta.n_nonmembers
        );
        let _ = writeln!(out, "## Best AUROC per attack\n");
        let _ = writeln!(out, "| attack | best AUROC | metric | aggregation | top-5 mean | columns |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "| {} | {:.4} | {} | {} | {:.4} | {} |",
                s.attack,
                s.best_auroc,
                s.best_metric,
                s.best_aggregation.as_str(),
                s.top5_mean,
                s.columns
            );
        }
        let _ = writeln!(out, "\n## All columns\n");
        let _ = writeln!(out, "| attack | metric | aggregation | AUROC |");
        let _ = writeln!(out, "|---|---|---|---|");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.4} |",
                e.attack,
                e.metric,
                e.aggregation.as_str(),
                e.auroc
            );
        }
        if !self.reconstruction.is_empty() {
            let _ = writeln!(out, "\n## Reconstruction\n");
            let _ = writeln!(out, "| attack | metric | label | best | avg |");
            let _ = writeln!(out, "|---|---|---|---|---|");
            for r in &self.reconstruction {
                let label = if r.label.is_member() { "member" } else { "nonmember" };
                let _ = writeln!(
                    out,
                    "| {} | {} | {label} | {} | {} |",
                    r.attack,
                    r.metric,
                    fmt_opt(r.best),
                    fmt_opt(r.avg)
                );
            }
        }
        out
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        Ok(())
    }
}
