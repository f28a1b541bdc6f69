use std::collections::HashMap;

use adra_core::baselines::K_PERCENT_SWEEP;
use adra_core::grpo::{run_adra, GrpoConfig};
use adra_core::pipeline::{
    build_report, make_world, n_sampling_attack, passive_attacks, passive_inputs, read_logprobs, score_passive,
    write_logprobs, Aggregation, Dumps, EvalConfig, ScoreTable, World, WorldConfig,
};
use adra_core::rewards::Mode;
use adra_core::{Candidate, Label};
use rand::seq::SliceRandom;

fn world(seed: u64, epochs: usize, sft_lr: f64) -> World {
    make_world(&WorldConfig {
        seed,
        vocab_size: 30,
        order: 3,
        generator_order: 3,
        n_members: 12,
        n_nonmembers: 12,
        seq_len: 30,
        sft_lr,
        sft_epochs: epochs,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn best(table: &ScoreTable, labels: &HashMap<String, Label>, attack: &str) -> f64 {
    build_report(table, labels, serde_json::Value::Null, None)
        .unwrap()
        .summary(attack)
        .unwrap()
        .best_auroc
}

#[test]
fn untrained_world_carries_no_signal() {
    let w = world(1, 0, 1.0);
    let t = passive_attacks(&w.base_policy, None, &w.attack_candidates(), &K_PERCENT_SWEEP).unwrap();
    for attack in ["loss", "min_k", "min_k_pp"] {
        let r = build_report(&t.filter_attack(attack), &w.label_map(), serde_json::Value::Null, None).unwrap();
        assert!(r.entries.iter().all(|e| e.auroc == 0.5), "{attack}");
    }
}

#[test]
fn memorized_world_is_separable_by_loss() {
    let w = world(2, 3, 3.0);
    let t = passive_attacks(&w.base_policy, None, &w.attack_candidates(), &K_PERCENT_SWEEP).unwrap();
    assert!(best(&t, &w.label_map(), "loss") > 0.9);
}

#[test]
fn passive_rows_reduce_as_expected() {
    let w = world(3, 2, 1.0);
    let cands = w.attack_candidates();
    let t = passive_attacks(&w.base_policy, Some(&w.base_policy), &cands, &K_PERCENT_SWEEP).unwrap();
    for c in &cands {
        let loss = t.get(&c.id, "loss", "loss", Aggregation::None).unwrap();
        assert_eq!(t.get(&c.id, "min_k", "k=100", Aggregation::None).unwrap(), loss);
        assert_eq!(t.get(&c.id, "r_loss", "r_loss", Aggregation::None).unwrap(), 0.0);
    }
}

#[test]
fn single_sample_aon_equals_bon() {
    let w = world(4, 1, 1.0);
    let cfg = EvalConfig {
        n_samples: 1,
        ..EvalConfig::default()
    };
    let (t, _) = n_sampling_attack(&w.base_policy, &w.attack_candidates(), &cfg, 9).unwrap();
    for row in t.rows().iter().filter(|r| r.aggregation == Aggregation::Aon) {
        assert_eq!(Some(row.score), t.get(&row.id, &row.attack, &row.metric, Aggregation::Bon));
    }
}

#[test]
fn attacks_ignore_labels_and_candidate_order() {
    let w = world(5, 2, 1.0);
    let cands = w.attack_candidates();
    let mut shuffled = cands.clone();
    shuffled.shuffle(&mut adra_core::seed::rng(3));
    let a = passive_attacks(&w.base_policy, None, &cands, &K_PERCENT_SWEEP).unwrap();
    let b = passive_attacks(&w.base_policy, None, &shuffled, &K_PERCENT_SWEEP).unwrap();
    assert_eq!(a.columns(), b.columns());

    // Relabeling the world changes nothing the attacks see.
    let mut flipped = w.clone();
    for c in &mut flipped.candidates {
        c.label = if c.label.is_member() { Label::Nonmember } else { Label::Member };
    }
    let cfg = EvalConfig {
        n_samples: 2,
        ..EvalConfig::default()
    };
    let (x, _) = n_sampling_attack(&w.base_policy, &w.attack_candidates(), &cfg, 1).unwrap();
    let (y, _) = n_sampling_attack(&flipped.base_policy, &flipped.attack_candidates(), &cfg, 1).unwrap();
    assert_eq!(x.rows(), y.rows());
}

#[test]
fn logprob_dump_round_trip_matches_direct_scoring() {
    let w = world(6, 2, 1.0);
    let cands = w.attack_candidates();
    let inputs = passive_inputs(&w.base_policy, Some(&w.base_policy), &cands).unwrap();
    let mut buf = Vec::new();
    write_logprobs(&mut buf, &inputs).unwrap();

    let mut lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
    lines.reverse();
    let reversed = lines.join("\n");
    let back = read_logprobs(reversed.as_bytes(), &cands).unwrap();
    assert_eq!(back, inputs);
    assert_eq!(
        score_passive(&back, &K_PERCENT_SWEEP).unwrap().rows(),
        passive_attacks(&w.base_policy, Some(&w.base_policy), &cands, &K_PERCENT_SWEEP).unwrap().rows()
    );

    let mut cand_buf = Vec::new();
    adra_core::pipeline::write_candidates(&mut cand_buf, &w.candidates).unwrap();
    let dumps = Dumps::read(cand_buf.as_slice(), None::<&[u8]>, Some(buf.as_slice())).unwrap();
    let t = dumps.score("nsampling", &EvalConfig::default(), &K_PERCENT_SWEEP).unwrap();
    assert_eq!(dumps.label_map(), w.label_map());
    assert!(t.attacks().contains(&"r_loss".to_owned()));
}

#[test]
fn report_json_and_markdown_agree() {
    let w = world(7, 2, 1.0);
    let t = passive_attacks(&w.base_policy, None, &w.attack_candidates(), &K_PERCENT_SWEEP).unwrap();
    let r = build_report(&t, &w.label_map(), serde_json::json!({"x": 1}), Some(7)).unwrap();
    let md = r.to_markdown();
    for s in &r.summaries {
        assert!(md.contains(&format!("| {} | {:.4} |", s.attack, s.best_auroc)), "{}", s.attack);
    }
    assert!(md.contains(&r.meta.config_digest));
    let back: adra_core::pipeline::Report = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("report.md")).unwrap(), md);
}

#[test]
fn training_raises_reward_on_a_two_candidate_world() {
    let a = Candidate::new("a", "w02 w03 w04 w05 w06 w07 w08 w09", 0.5).unwrap();
    let b = Candidate::new("b", "w09 w08 w07 w06 w05 w04 w03 w02", 0.5).unwrap();
    let vocab = std::sync::Arc::new(adra_core::toylm::Vocab::synthetic(12).unwrap());
    let base = adra_core::toylm::Policy::uniform(vocab, 1).unwrap();
    let mut cfg = GrpoConfig {
        steps: 60,
        rollouts_per_candidate: 8,
        lr: 2.0,
        k_distractors: 1,
        ..GrpoConfig::default()
    };
    cfg.sampling.max_tokens = 6;
    cfg.reward_mode.mode = Mode::Plain;
    let eval = EvalConfig {
        n_samples: 2,
        ..EvalConfig::default()
    };
    let res = run_adra(&base, &[a, b], &cfg, &eval, 11).unwrap();
    let window = |s: &[adra_core::grpo::StepStats]| s.iter().map(|x| x.mean_reward).sum::<f64>() / s.len() as f64;
    let first = window(&res.train_log[..5]);
    let last = window(&res.train_log[55..]);
    assert!(last > first + 0.1, "{first} -> {last}");
}
