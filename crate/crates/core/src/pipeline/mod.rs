//! End-to-end attack pipeline: synthetic worlds, attack runners, score
//! tables, AUROC reports and ingestion of externally produced dumps.

mod attacks;
mod eval;
mod ingest;
pub mod jsonl;
mod report;
mod table;
mod world;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RewardSpec;
use crate::toylm::SamplingConfig;

pub use attacks::{
    n_sampling_attack, passive_attacks, passive_inputs, reward_metric_name, sample_reconstructions,
    score_passive, score_samples, PassiveInputs, NSAMPLING,
};
pub use eval::{auroc, decide, median};
pub use ingest::{
    read_candidates, read_generations, read_logprobs, write_candidates, write_generations,
    write_logprobs, Dumps, GenerationRecord, LogprobRecord,
};
pub use report::{
    build_report, config_digest, AttackSummary, AurocEntry, ReconstructionEntry, Report, ReportMeta,
};
pub use table::{Aggregation, ColumnKey, ScoreRow, ScoreTable};
pub use world::{make_world, Generator, World, WorldConfig};

/// Which part of the text completions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalRegion {
    /// Completion vs. the held-out suffix.
    #[default]
    SuffixOnly,
    /// Prefix followed by completion vs. the full text.
    Full,
}

/// Settings for sampling and scoring reconstructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub sampling: SamplingConfig,
    pub region: EvalRegion,
    pub aggregations: Vec<Aggregation>,
    pub reward_spec: RewardSpec,
    pub prompt: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 16,
            sampling: SamplingConfig {
                temperature: 0.7,
                ..SamplingConfig::default()
            },
            region: EvalRegion::SuffixOnly,
            aggregations: vec![Aggregation::Aon, Aggregation::Bon],
            reward_spec: RewardSpec::default(),
            prompt: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.reward_spec.validate()?;
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
        }
        if self.aggregations.is_empty() {
            return Err(Error::InvalidArgument("at least one aggregation is required".into()));
        }
        if self.aggregations.contains(&Aggregation::None) {
            return Err(Error::InvalidArgument(
                "sampling attacks aggregate with aon or bon".into(),
            ));
        }
        Ok(())
    }
}
