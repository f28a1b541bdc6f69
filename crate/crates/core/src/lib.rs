//! Membership inference by adversarial reconstruction.
//!
//! A tabular softmax language model stands in for a fine-tuned LLM. The
//! attacks estimate whether a text was in the fine-tuning set, either from
//! likelihoods ([`baselines`]), from how well sampled continuations
//! reconstruct the held-out suffix ([`pipeline::n_sampling_attack`]), or from
//! how quickly reinforcement learning toward a contrastive reconstruction
//! reward ([`rewards`]) lets the model recover it ([`grpo::run_adra`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod candidate;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod rewards;
pub mod seed;
pub mod toylm;

pub use candidate::{Candidate, Label, LabeledCandidate};
pub use error::{Error, Result};
