//! Synthetic contamination worlds.
//!
//! A hidden generator emits word sequences. Members and non-members are
//! i.i.d. draws from it; the base policy is fine-tuned on members mixed with
//! filler drawn from the same generator, so membership is the only thing
//! separating the two groups.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{read_candidates, write_candidates};
use crate::candidate::{Candidate, Label, LabeledCandidate};
use crate::error::{Error, Result};
use crate::seed;
use crate::toylm::{sft_update_ids, softmax, Policy, TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    /// Total vocabulary size, BOS and EOS included.
    pub vocab_size: usize,
    /// Context length of the fine-tuned policy.
    pub order: usize,
    pub generator_order: usize,
    /// Zipf exponent of the generator's next-word distributions.
    pub generator_sharpness: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub seq_len: usize,
    /// Members as a fraction of the fine-tuning corpus.
    pub contamination_rate: f64,
    pub sft_lr: f64,
    pub sft_epochs: usize,
    pub prefix_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocab_size: 50,
            order: 2,
            generator_order: 2,
            generator_sharpness: 1.0,
            n_members: 64,
            n_nonmembers: 64,
            seq_len: 60,
            contamination_rate: 0.1,
            sft_lr: 0.5,
            sft_epochs: 1,
            prefix_fraction: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::InvalidArgument("vocab_size must be >= 3".into()));
        }
        if self.n_members == 0 || self.n_nonmembers == 0 {
            return Err(Error::InvalidArgument("both classes need at least one candidate".into()));
        }
        if !(self.contamination_rate > 0.0 && self.contamination_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "contamination_rate must lie in (0, 1], got {}",
                self.contamination_rate
            )));
        }
        if !(self.sft_lr >= 0.0) || !(self.generator_sharpness >= 0.0) {
            return Err(Error::InvalidArgument("sft_lr and generator_sharpness must be >= 0".into()));
        }
        if !(self.prefix_fraction > 0.0 && self.prefix_fraction < 1.0) {
            return Err(Error::InvalidArgument("prefix_fraction must lie in (0, 1)".into()));
        }
        let cut = (self.prefix_fraction * self.seq_len as f64).floor() as usize;
        if cut == 0 || cut >= self.seq_len {
            return Err(Error::InvalidArgument(format!(
                "seq_len {} with prefix_fraction {} leaves an empty prefix or suffix",
                self.seq_len, self.prefix_fraction
            )));
        }
        Ok(())
    }

    /// Filler sequences needed to reach the contamination rate.
    pub fn n_filler(&self) -> usize {
        let m = self.n_members as f64;
        (m * (1.0 - self.contamination_rate) / self.contamination_rate).round() as usize
    }
}

/// Hidden order-`h` source: each context gets a hash-seeded random ranking of
/// the words with logits `-sharpness * ln(rank + 1)`. BOS and EOS are never
/// emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub vocab_size: usize,
    pub order: usize,
    pub sharpness: f64,
    pub seed: u64,
}

impl Generator {
    pub fn dist(&self, context: &[TokenId]) -> Vec<f64> {
        let words: Vec<TokenId> = (2..self.vocab_size as TokenId).collect();
        let mut ranked = words.clone();
        let tags: Vec<u64> = std::iter::once(seed::tag("generator"))
            .chain(context.iter().map(|&t| t as u64))
            .collect();
        ranked.shuffle(&mut seed::rng_for(self.seed, &tags));
        let mut logits = vec![f64::NEG_INFINITY; self.vocab_size];
        for (rank, &w) in ranked.iter().enumerate() {
            logits[w as usize] = -self.sharpness * ((rank + 1) as f64).ln();
        }
        let mut z = vec![0.0; words.len()];
        for (i, &w) in words.iter().enumerate() {
            z[i] = logits[w as usize];
        }
        let p = softmax(&z, 1.0);
        let mut out = vec![0.0; self.vocab_size];
        for (i, &w) in words.iter().enumerate() {
            out[w as usize] = p[i];
        }
        out
    }

    /// A sequence of `len` words, starting from an all-BOS context.
    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = Vec::with_capacity(len);
        let mut ctx = vec![Vocab::BOS_ID; self.order];
        for _ in 0..len {
            let p = self.dist(&ctx);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = (self.vocab_size - 1) as TokenId;
            for (t, &pt) in p.iter().enumerate() {
                acc += pt;
                if pt > 0.0 && u < acc {
                    pick = t as TokenId;
                    break;
                }
            }
            out.push(pick);
            if self.order > 0 {
                ctx.remove(0);
                ctx.push(pick);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub generator: Generator,
    /// Members and non-members interleaved in a seeded order.
    pub candidates: Vec<LabeledCandidate>,
    pub base_policy: Policy,
}

impl World {
    pub fn vocab(&self) -> &Arc<Vocab> {
        self.base_policy.vocab()
    }

    /// Label-free view handed to attacks.
    pub fn attack_candidates(&self) -> Vec<Candidate> {
        self.candidates.iter().map(|c| c.candidate.clone()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.candidates.iter().map(|c| c.label).collect()
    }

    pub fn label_map(&self) -> HashMap<String, Label> {
        self.candidates.iter().map(|c| (c.candidate.id.clone(), c.label)).collect()
    }

    /// Writes `world.json`, `candidates.jsonl` and `base_policy.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("world.json"), serde_json::to_string_pretty(&self.config)?)?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("candidates.jsonl"))?);
        write_candidates(f, &self.candidates)?;
        self.base_policy.save(dir.join("base_policy.txt"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<World> {
        let dir = dir.as_ref();
        let config: WorldConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("world.json"))?)?;
        let f = std::io::BufReader::new(std::fs::File::open(dir.join("candidates.jsonl"))?);
        let candidates = read_candidates(f)?;
        let base_policy = Policy::load(dir.join("base_policy.txt"))?;
        Ok(World {
            generator: generator_for(&config),
            config,
            candidates,
            base_policy,
        })
    }
}

fn generator_for(cfg: &WorldConfig) -> Generator {
    Generator {
        vocab_size: cfg.vocab_size,
        order: cfg.generator_order,
        sharpness: cfg.generator_sharpness,
        seed: seed::derive(cfg.seed, &[seed::tag("generator")]),
    }
}

fn draw(gen: &Generator, cfg: &WorldConfig, what: &str, n: usize) -> Vec<Vec<TokenId>> {
    (0..n)
        .map(|i| gen.sample(cfg.seq_len, &mut seed::rng_for(cfg.seed, &[seed::tag(what), i as u64])))
        .collect()
}

/// Builds a world: generator, candidates, and the fine-tuned base policy.
pub fn make_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let vocab = Arc::new(Vocab::synthetic(cfg.vocab_size)?);
    let generator = generator_for(cfg);
    let members = draw(&generator, cfg, "member", cfg.n_members);
    let nonmembers = draw(&generator, cfg, "nonmember", cfg.n_nonmembers);
    let filler = draw(&generator, cfg, "filler", cfg.n_filler());

    let mut policy = Policy::uniform(vocab.clone(), cfg.order)?;
    let mut corpus: Vec<Vec<TokenId>> = members.iter().chain(&filler).cloned().collect();
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag("sft")]);
    for _ in 0..cfg.sft_epochs {
        corpus.shuffle(&mut rng);
        sft_update_ids(&mut policy, &corpus, cfg.sft_lr, 1)?;
    }

    let mut labeled: Vec<(Label, &Vec<TokenId>)> = members
        .iter()
        .map(|s| (Label::Member, s))
        .chain(nonmembers.iter().map(|s| (Label::Nonmember, s)))
        .collect();
    labeled.shuffle(&mut seed::rng_for(cfg.seed, &[seed::tag("order")]));
    let width = labeled.len().to_string().len().max(3);
    let candidates = labeled
        .into_iter()
        .enumerate()
        .map(|(i, (label, ids))| {
            let text = vocab.decode(ids).tokens().join(" ");
            Ok(LabeledCandidate {
                candidate: Candidate::new(format!("x{i:0width$}"), text, cfg.prefix_fraction)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World {
        config: cfg.clone(),
        generator,
        candidates,
        base_policy: policy,
    })
}
