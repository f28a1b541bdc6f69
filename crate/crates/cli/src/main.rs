use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use adra_core::baselines::K_PERCENT_SWEEP;
use adra_core::grpo::{attack_name, run_adra_with_log, GrpoConfig};
use adra_core::metrics::{RewardKind, RewardSpec};
use adra_core::pipeline::{
    build_report, make_world, n_sampling_attack, passive_attacks, write_generations, Dumps,
    EvalConfig, EvalRegion, ScoreTable, World, WorldConfig, NSAMPLING,
};
use adra_core::rewards::Mode;
use adra_core::seed;
use adra_core::toylm::Policy;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "adra", version, about = "Membership inference by adversarial reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic contamination world.
    GenWorld(GenWorldArgs),
    /// Run an attack against a world.
    Attack {
        #[command(subcommand)]
        kind: AttackKind,
    },
    /// Compute AUROC tables from score files.
    Report(ReportArgs),
    /// Score externally produced generation and log-probability dumps.
    Ingest(IngestArgs),
}

#[derive(Subcommand)]
enum AttackKind {
    Passive(PassiveArgs),
    Nsampling(NsamplingArgs),
    Adra(AdraArgs),
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long)]
    generator_order: Option<usize>,
    #[arg(long)]
    generator_sharpness: Option<f64>,
    #[arg(long, default_value_t = 64)]
    n_members: usize,
    #[arg(long, default_value_t = 64)]
    n_nonmembers: usize,
    #[arg(long, default_value_t = 60)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.1)]
    contamination_rate: f64,
    #[arg(long, default_value_t = 3.0)]
    sft_lr: f64,
    #[arg(long, default_value_t = 3)]
    sft_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    prefix_fraction: f64,
}

#[derive(Args)]
struct WorldIo {
    /// Directory written by `gen-world`.
    #[arg(long)]
    world: PathBuf,
    /// Output directory for scores and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PassiveArgs {
    #[command(flatten)]
    io: WorldIo,
    /// Reference policy for R-Loss.
    #[arg(long)]
    ref_policy: Option<PathBuf>,
    /// Min-K% percentages; defaults to the 10/20/30/100 sweep.
    #[arg(long, num_args = 1..)]
    k_percent: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Trio,
    Ngram,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Match,
    Adapt,
    Plain,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegionArg {
    Suffix,
    Full,
}

#[derive(Args)]
struct EvalArgs {
    /// Samples per candidate at evaluation time.
    #[arg(long, default_value_t = 16)]
    eval_samples: usize,
    /// Sampling temperature [default: 1.0 for nsampling, 0.7 for adra]
    #[arg(long)]
    eval_temp: Option<f64>,
    #[arg(long, default_value_t = 45)]
    max_tokens: usize,
    #[arg(long, value_enum, default_value_t = RewardArg::Trio)]
    reward: RewardArg,
    #[arg(long, default_value_t = 1.5)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = RegionArg::Suffix)]
    region: RegionArg,
}

impl EvalArgs {
    fn reward_spec(&self) -> Result<RewardSpec> {
        let kind = match self.reward {
            RewardArg::Trio => RewardKind::Trio,
            RewardArg::Ngram => RewardKind::Ngram,
        };
        Ok(RewardSpec::new(kind, self.tau, RewardSpec::default().l_min)?)
    }

    fn eval_config(&self, default_temp: f64) -> Result<EvalConfig> {
        let mut cfg = EvalConfig {
            n_samples: self.eval_samples,
            reward_spec: self.reward_spec()?,
            region: match self.region {
                RegionArg::Suffix => EvalRegion::SuffixOnly,
                RegionArg::Full => EvalRegion::Full,
            },
            ..EvalConfig::default()
        };
        cfg.sampling.temperature = self.eval_temp.unwrap_or(default_temp);
        cfg.sampling.max_tokens = self.max_tokens;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct NsamplingArgs {
    #[command(flatten)]
    io: WorldIo,
    #[command(flatten)]
    eval: EvalArgs,
    /// Also write the sampled completions as `generations.jsonl`.
    #[arg(long)]
    export_generations: bool,
}

#[derive(Args)]
struct AdraArgs {
    #[command(flatten)]
    io: WorldIo,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Match)]
    mode: ModeArg,
    #[arg(long, default_value_t = 30)]
    steps: usize,
    /// Rollouts per candidate per step.
    #[arg(long, default_value_t = 16)]
    rollouts: usize,
    #[arg(long, default_value_t = 7)]
    k_distractors: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    kl_coef: Option<f64>,
    #[arg(long)]
    clip_eps: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Candidates with labels: a world directory or a candidates JSONL file.
    #[arg(long)]
    labels: PathBuf,
    /// Directories holding `*.scores.jsonl` files from `attack`.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    generations: Option<PathBuf>,
    #[arg(long)]
    logprobs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Attack name recorded for the generations.
    #[arg(long, default_value = NSAMPLING)]
    attack: String,
    /// Overrides every candidate's prefix fraction.
    #[arg(long)]
    prefix_fraction: Option<f64>,
    #[arg(long, num_args = 1..)]
    k_percent: Vec<f64>,
    #[arg(long, value_enum, default_value_t = RewardArg::Trio)]
    reward: RewardArg,
    #[arg(long, default_value_t = 1.5)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = RegionArg::Suffix)]
    region: RegionArg,
}

fn k_percents(given: &[f64]) -> Vec<f64> {
    if given.is_empty() {
        K_PERCENT_SWEEP.to_vec()
    } else {
        given.to_vec()
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn save_run(out: &Path, attack: &str, table: &ScoreTable, config: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(out)?;
    table.save(out.join(format!("{attack}.scores.jsonl")))?;
    write_json(&out.join(format!("{attack}.config.json")), &config)?;
    eprintln!("{attack}: {} rows -> {}", table.len(), out.display());
    Ok(())
}

fn load_world(dir: &Path) -> Result<World> {
    World::load(dir).with_context(|| format!("loading world from {}", dir.display()))
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let d = WorldConfig::default();
    let cfg = WorldConfig {
        seed: a.seed,
        vocab_size: a.vocab_size,
        order: a.order,
        generator_order: a.generator_order.unwrap_or(a.order),
        generator_sharpness: a.generator_sharpness.unwrap_or(d.generator_sharpness),
        n_members: a.n_members,
        n_nonmembers: a.n_nonmembers,
        seq_len: a.seq_len,
        contamination_rate: a.contamination_rate,
        sft_lr: a.sft_lr,
        sft_epochs: a.sft_epochs,
        prefix_fraction: a.prefix_fraction,
    };
    let world = make_world(&cfg)?;
    world.save(&a.out)?;
    eprintln!(
        "world: {} candidates, {} filler sequences -> {}",
        world.candidates.len(),
        cfg.n_filler(),
        a.out.display()
    );
    Ok(())
}

fn passive(a: PassiveArgs) -> Result<()> {
    let world = load_world(&a.io.world)?;
    let reference = a.ref_policy.as_deref().map(Policy::load).transpose()?;
    let ks = k_percents(&a.k_percent);
    let table = passive_attacks(&world.base_policy, reference.as_ref(), &world.attack_candidates(), &ks)?;
    save_run(
        &a.io.out,
        "passive",
        &table,
        json!({ "k_percent": ks, "ref_policy": a.ref_policy.is_some() }),
    )
}

fn nsampling(a: NsamplingArgs) -> Result<()> {
    let world = load_world(&a.io.world)?;
    let cfg = a.eval.eval_config(1.0)?;
    let candidates = world.attack_candidates();
    let rng = seed::derive(a.io.seed, &[seed::tag(NSAMPLING)]);
    let (table, samples) = n_sampling_attack(&world.base_policy, &candidates, &cfg, rng)?;
    if a.export_generations {
        std::fs::create_dir_all(&a.io.out)?;
        let f = BufWriter::new(File::create(a.io.out.join("generations.jsonl"))?);
        write_generations(f, &candidates, &samples)?;
    }
    save_run(&a.io.out, NSAMPLING, &table, json!({ "seed": a.io.seed, "eval": cfg }))
}

fn adra(a: AdraArgs) -> Result<()> {
    let world = load_world(&a.io.world)?;
    let eval = a.eval.eval_config(0.7)?;
    let mut cfg = GrpoConfig {
        steps: a.steps,
        rollouts_per_candidate: a.rollouts,
        k_distractors: a.k_distractors,
        reward_spec: a.eval.reward_spec()?,
        ..GrpoConfig::default()
    };
    cfg.reward_mode.mode = match a.mode {
        ModeArg::Match => Mode::Match,
        ModeArg::Adapt => Mode::Adapt,
        ModeArg::Plain => Mode::Plain,
    };
    cfg.sampling.max_tokens = a.eval.max_tokens;
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(kl) = a.kl_coef {
        cfg.kl_coef = kl;
    }
    if let Some(c) = a.clip_eps {
        cfg.clip_eps = c;
    }
    let name = attack_name(cfg.reward_mode.mode);
    std::fs::create_dir_all(&a.io.out)?;
    let mut log = BufWriter::new(File::create(a.io.out.join("train_log.jsonl"))?);
    let result = run_adra_with_log(
        &world.base_policy,
        &world.attack_candidates(),
        &cfg,
        &eval,
        a.io.seed,
        |s| {
            let line = json!({
                "step": s.step,
                "mean_reward": s.mean_reward,
                "mean_kl": s.mean_kl,
                "clip_fraction": s.clip_fraction,
            });
            writeln!(log, "{line}")?;
            eprintln!("step {:>3}  reward {:.4}  kl {:.5}", s.step, s.mean_reward, s.mean_kl);
            Ok(())
        },
    )?;
    log.flush()?;
    result.policy.save(a.io.out.join(format!("{name}.policy.txt")))?;
    save_run(
        &a.io.out,
        name,
        &result.table,
        json!({ "seed": a.io.seed, "grpo": cfg, "eval": eval }),
    )
}

fn read_labels(path: &Path) -> Result<std::collections::HashMap<String, adra_core::Label>> {
    let file = if path.is_dir() { path.join("candidates.jsonl") } else { path.to_owned() };
    let rows = adra_core::pipeline::read_candidates(BufReader::new(
        File::open(&file).with_context(|| format!("opening {}", file.display()))?,
    ))?;
    Ok(rows.into_iter().map(|c| (c.candidate.id, c.label)).collect())
}

fn report(a: ReportArgs) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for dir in &a.runs {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        found.retain(|p| p.to_string_lossy().ends_with(".scores.jsonl"));
        if found.is_empty() {
            bail!("no *.scores.jsonl files in {}", dir.display());
        }
        found.sort();
        files.extend(found);
    }
    let mut table = ScoreTable::new();
    let mut configs = serde_json::Map::new();
    for f in &files {
        table.extend(ScoreTable::load(f)?);
        let name = f.file_name().unwrap().to_string_lossy().trim_end_matches(".scores.jsonl").to_owned();
        let cfg_path = f.with_file_name(format!("{name}.config.json"));
        let cfg = if cfg_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(&cfg_path)?)?
        } else {
            serde_json::Value::Null
        };
        if configs.insert(name.clone(), cfg).is_some() {
            bail!("attack `{name}` appears in more than one run directory");
        }
    }
    let r = build_report(&table, &labels, serde_json::Value::Object(configs), a.seed)?;
    r.write(&a.out)?;
    for s in &r.summaries {
        eprintln!("{:<12} best AUROC {:.4} ({}, {})", s.attack, s.best_auroc, s.best_metric, s.best_aggregation.as_str());
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
    };
    let mut dumps = Dumps::read(
        open(&a.candidates)?,
        a.generations.as_deref().map(open).transpose()?,
        a.logprobs.as_deref().map(open).transpose()?,
    )?;
    if let Some(f) = a.prefix_fraction {
        for c in &mut dumps.candidates {
            c.candidate.prefix_fraction = f;
            c.candidate.validate()?;
        }
    }
    let kind = match a.reward {
        RewardArg::Trio => RewardKind::Trio,
        RewardArg::Ngram => RewardKind::Ngram,
    };
    let cfg = EvalConfig {
        reward_spec: RewardSpec::new(kind, a.tau, RewardSpec::default().l_min)?,
        region: match a.region {
            RegionArg::Suffix => EvalRegion::SuffixOnly,
            RegionArg::Full => EvalRegion::Full,
        },
        ..EvalConfig::default()
    };
    let ks = k_percents(&a.k_percent);
    let table = dumps.score(&a.attack, &cfg, &ks)?;
    std::fs::create_dir_all(&a.out)?;
    table.save(a.out.join("scores.jsonl"))?;
    let config = json!({
        "attack": a.attack,
        "k_percent": ks,
        "reward_spec": cfg.reward_spec,
        "region": cfg.region,
        "prefix_fraction": a.prefix_fraction,
    });
    let r = build_report(&table, &dumps.label_map(), config, None)?;
    r.write(&a.out)?;
    eprintln!("ingested {} candidates -> {}", dumps.candidates.len(), a.out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenWorld(a) => gen_world(a),
        Command::Attack { kind } => match kind {
            AttackKind::Passive(a) => passive(a),
            AttackKind::Nsampling(a) => nsampling(a),
            AttackKind::Adra(a) => adra(a),
        },
        Command::Report(a) => report(a),
        Command::Ingest(a) => ingest(a),
    }
}
