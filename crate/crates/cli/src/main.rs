//! obflab — one binary for the whole laboratory pipeline: synthesize a
//! corpus, train the surrogate discriminator, train PPO obfuscation agents,
//! run multi-agent campaigns, and export reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input-validation
//! error (bad flags, missing files, dimension mismatches). Inputs are never
//! mutated and every output is written atomically, so a `--seed`-fixed
//! invocation reproduces its artifacts byte for byte.

mod mnemonics;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use obflab_core::corpus::{synthesize_corpus, Corpus, Label, OpcodeVocabulary};
use obflab_core::derive_seed;
use obflab_core::env::{self, ActionMode, EnvConfig, Environment, RewardGoal};
use obflab_core::fsio::write_atomic;
use obflab_core::ids::{train_ids, IdsKind, IdsModel};
use obflab_core::metrics::{evasion_statistics, training_curves_from_path};
use obflab_core::ppo::{train_agent, PolicyParameters, PpoConfig};
use obflab_core::swarm::{self, AgentSpec};

/// Adversarial obfuscation laboratory: corpus → discriminator → agents →
/// campaign → reports.
#[derive(Parser)]
#[command(name = "obflab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize or validate opcode-frequency corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Train or evaluate the surrogate discriminator.
    #[command(subcommand)]
    Ids(IdsCmd),
    /// Train a single obfuscation agent.
    #[command(subcommand)]
    Agent(AgentCmd),
    /// Run multi-agent campaigns from a manifest.
    #[command(subcommand)]
    Swarm(SwarmCmd),
    /// Export evasion, curve, and similarity reports.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Draw a synthetic labeled corpus and write it as JSONL.
    Synth(SynthArgs),
    /// Parse a corpus file, checking schema, dimensions, and id uniqueness.
    Validate {
        /// Corpus file to check.
        corpus: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Opcode vocabulary size.
    #[arg(long, default_value_t = 64)]
    opcodes: usize,
    /// Number of malicious entries.
    #[arg(long, default_value_t = 200)]
    malicious: usize,
    /// Number of benign entries.
    #[arg(long, default_value_t = 200)]
    benign: usize,
    /// Class separation in [0, 1]: 0 indistinguishable, 1 disjoint support.
    #[arg(long, default_value_t = 0.9)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus path (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum IdsCmd {
    /// Train a discriminator on a corpus and print held-out accuracy/FPR.
    Train(IdsTrainArgs),
    /// Score a whole corpus with a trained discriminator.
    Eval {
        /// Corpus file to score.
        #[arg(long)]
        corpus: PathBuf,
        /// Discriminator checkpoint.
        #[arg(long)]
        ids: PathBuf,
    },
}

#[derive(Args)]
struct IdsTrainArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Model family: logistic or mlp.
    #[arg(long, default_value = "logistic", value_parser = parse_kind)]
    kind: IdsKind,
    /// Fraction of each class used for training; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Full-batch epochs (default 2000 for logistic, 2000 for mlp).
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate (default 50 for logistic, 1 for mlp).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AgentCmd {
    /// Train one PPO agent against a frozen discriminator.
    Train(AgentTrainArgs),
}

#[derive(Args)]
struct AgentTrainArgs {
    /// Corpus supplying the malicious pool and vocabulary.
    #[arg(long)]
    corpus: PathBuf,
    /// Frozen discriminator checkpoint.
    #[arg(long)]
    ids: PathBuf,
    /// Output agent checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-update metrics stream (JSONL).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Total environment steps to train for.
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
    /// Master seed; weight init, rollouts, and minibatch shuffles derive
    /// from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "agent-00")]
    agent_id: String,

    /// Episode turn budget.
    #[arg(long, default_value_t = 100)]
    max_turns: u32,
    /// Frequency change per action.
    #[arg(long, default_value_t = 5)]
    increment_step: u32,
    /// Non-malicious probability the agent must exceed.
    #[arg(long, default_value_t = 0.90)]
    threshold: f64,
    /// Success reward: "max-turns" or a number.
    #[arg(long, default_value = "max-turns", value_parser = parse_goal)]
    goal: RewardGoal,
    /// Action set: increase-decrease or increase-only.
    #[arg(long, default_value = "increase-decrease", value_parser = parse_action_mode)]
    action_mode: ActionMode,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,

    #[arg(long, default_value_t = 2048)]
    horizon: usize,
    #[arg(long, default_value_t = 256)]
    minibatch: usize,
    #[arg(long, default_value_t = 4)]
    update_epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.2)]
    clip: f64,
    #[arg(long, default_value_t = 0.95)]
    gae_lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    entropy_coeff: f64,
    #[arg(long, default_value_t = 0.5)]
    value_coeff: f64,
}

#[derive(Subcommand)]
enum SwarmCmd {
    /// Train and evaluate every agent in a campaign manifest.
    Run(SwarmRunArgs),
}

#[derive(Args)]
struct SwarmRunArgs {
    /// Campaign manifest (JSON). Relative paths inside it resolve against
    /// the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Concurrent agents; overrides the manifest (default 1).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-agent training budget in environment steps; overrides the
    /// manifest.
    #[arg(long)]
    train_budget: Option<u64>,
    /// Frozen-policy evaluation episodes per agent; overrides the manifest.
    #[arg(long)]
    eval_episodes: Option<usize>,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Summarize an archive: uplift, success fraction, final_p histogram.
    Evasion {
        /// Archive of obfuscation records (JSONL).
        #[arg(long)]
        archive: PathBuf,
        /// Write the summary record here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the final_p histogram as CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Export a training metrics stream as CSV.
    Curves {
        /// Metrics stream (JSONL) from agent training.
        #[arg(long)]
        metrics: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize final-vs-original feature similarity across an archive.
    Similarity {
        /// Archive of obfuscation records (JSONL).
        #[arg(long)]
        archive: PathBuf,
        /// Only include records with final_p above this value.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write per-record similarities as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Campaign manifest. Flags override manifest values, which override
/// built-in defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignManifest {
    corpus: PathBuf,
    ids: PathBuf,
    out: PathBuf,
    #[serde(default = "default_train_budget")]
    train_budget: u64,
    #[serde(default = "default_eval_episodes")]
    eval_episodes: usize,
    #[serde(default = "default_workers")]
    workers: usize,
    agents: Vec<AgentSpec>,
}

fn default_train_budget() -> u64 {
    200_000
}

fn default_eval_episodes() -> usize {
    100
}

fn default_workers() -> usize {
    1
}

/// A failed run, tagged with which exit code it deserves.
enum Failure {
    /// Bad invocation or bad input artifact → exit 2.
    Usage(String),
    /// The run itself failed → exit 1.
    Runtime(String),
}

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure::Runtime(message.into())
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Cmd) -> CliResult<()> {
    match command {
        Cmd::Corpus(CorpusCmd::Synth(args)) => corpus_synth(args),
        Cmd::Corpus(CorpusCmd::Validate { corpus }) => corpus_validate(&corpus),
        Cmd::Ids(IdsCmd::Train(args)) => ids_train(args),
        Cmd::Ids(IdsCmd::Eval { corpus, ids }) => ids_eval(&corpus, &ids),
        Cmd::Agent(AgentCmd::Train(args)) => agent_train(args),
        Cmd::Swarm(SwarmCmd::Run(args)) => swarm_run(args),
        Cmd::Report(ReportCmd::Evasion {
            archive,
            out,
            histogram,
        }) => report_evasion(&archive, out.as_deref(), histogram.as_deref()),
        Cmd::Report(ReportCmd::Curves { metrics, out }) => {
            report_curves(&metrics, out.as_deref())
        }
        Cmd::Report(ReportCmd::Similarity {
            archive,
            threshold,
            csv,
        }) => report_similarity(&archive, threshold, csv.as_deref()),
    }
}

fn parse_kind(s: &str) -> Result<IdsKind, String> {
    match s {
        "logistic" => Ok(IdsKind::Logistic),
        "mlp" => Ok(IdsKind::Mlp),
        other => Err(format!("unknown model kind {other:?}; use logistic or mlp")),
    }
}

fn parse_goal(s: &str) -> Result<RewardGoal, String> {
    if s == "max-turns" {
        return Ok(RewardGoal::MaxTurns);
    }
    s.parse::<f64>()
        .map(RewardGoal::Fixed)
        .map_err(|_| format!("goal must be \"max-turns\" or a number, got {s:?}"))
}

fn parse_action_mode(s: &str) -> Result<ActionMode, String> {
    match s {
        "increase-decrease" => Ok(ActionMode::IncreaseDecrease),
        "increase-only" => Ok(ActionMode::IncreaseOnly),
        other => Err(format!(
            "unknown action mode {other:?}; use increase-decrease or increase-only"
        )),
    }
}

/// Input loaders: a missing or malformed input is the caller's mistake, so
/// every failure here is a usage error naming the offending artifact.
fn load_corpus(path: &Path) -> CliResult<Corpus> {
    if !path.exists() {
        return Err(usage(format!("corpus file {} does not exist", path.display())));
    }
    Corpus::read_from(path).map_err(|e| usage(format!("corpus {}: {e}", path.display())))
}

fn load_ids(path: &Path) -> CliResult<IdsModel> {
    if !path.exists() {
        return Err(usage(format!(
            "discriminator checkpoint {} does not exist",
            path.display()
        )));
    }
    IdsModel::load(path).map_err(|e| usage(format!("discriminator {}: {e}", path.display())))
}

fn check_dimensions(
    corpus: &Corpus,
    corpus_path: &Path,
    model: &IdsModel,
    ids_path: &Path,
) -> CliResult<()> {
    let want = model.inputs();
    let got = corpus.vocabulary().cardinality();
    if want != got {
        return Err(usage(format!(
            "discriminator {} expects {want} features but corpus {} has {got}",
            ids_path.display(),
            corpus_path.display()
        )));
    }
    Ok(())
}

fn load_archive(path: &Path) -> CliResult<Vec<env::ObfuscationRecord>> {
    if !path.exists() {
        return Err(usage(format!(
            "archive file {} does not exist",
            path.display()
        )));
    }
    let file = std::fs::File::open(path)
        .map_err(|e| usage(format!("archive {}: {e}", path.display())))?;
    env::archive_from_reader(std::io::BufReader::new(file))
        .map_err(|e| usage(format!("archive {}: {e}", path.display())))
}

fn corpus_synth(args: SynthArgs) -> CliResult<()> {
    let vocab = OpcodeVocabulary::build(mnemonics::opcode_names(args.opcodes))
        .map_err(|e| usage(e.to_string()))?;
    let corpus = synthesize_corpus(
        vocab,
        args.malicious,
        args.benign,
        args.separation,
        args.seed,
    )
    .map_err(|e| usage(e.to_string()))?;
    corpus
        .write_to(&args.out)
        .map_err(|e| runtime(format!("writing {}: {e}", args.out.display())))?;
    println!(
        "wrote {} ({} opcodes, {} malicious, {} benign)",
        args.out.display(),
        corpus.vocabulary().cardinality(),
        corpus.label_count(Label::Malicious),
        corpus.label_count(Label::Benign),
    );
    Ok(())
}

fn corpus_validate(path: &Path) -> CliResult<()> {
    let corpus = load_corpus(path)?;
    println!(
        "{}: ok ({} opcodes, {} malicious, {} benign)",
        path.display(),
        corpus.vocabulary().cardinality(),
        corpus.label_count(Label::Malicious),
        corpus.label_count(Label::Benign),
    );
    Ok(())
}

fn ids_train(args: IdsTrainArgs) -> CliResult<()> {
    let corpus = load_corpus(&args.corpus)?;
    let (epochs, lr) = match args.kind {
        IdsKind::Logistic => (args.epochs.unwrap_or(2000), args.lr.unwrap_or(50.0)),
        IdsKind::Mlp => (args.epochs.unwrap_or(2000), args.lr.unwrap_or(1.0)),
    };
    let (model, metrics) = train_ids(&corpus, args.kind, args.split, epochs, lr, args.seed)
        .map_err(|e| usage(format!("training on {}: {e}", args.corpus.display())))?;
    model
        .save(&args.out)
        .map_err(|e| runtime(format!("writing {}: {e}", args.out.display())))?;
    println!(
        "held-out accuracy {:.4}, false positive rate {:.4} (n={})",
        metrics.accuracy, metrics.false_positive_rate, metrics.n_eval
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn ids_eval(corpus_path: &Path, ids_path: &Path) -> CliResult<()> {
    let corpus = load_corpus(corpus_path)?;
    let model = load_ids(ids_path)?;
    check_dimensions(&corpus, corpus_path, &model, ids_path)?;
    let mut correct = 0usize;
    let mut false_positives = 0usize;
    let mut benign = 0usize;
    for entry in corpus.entries() {
        let p = model
            .predict_non_malicious(&entry.vector)
            .map_err(|e| runtime(e.to_string()))?;
        let predicted_malicious = p < 0.5;
        let is_malicious = entry.label == Label::Malicious;
        if predicted_malicious == is_malicious {
            correct += 1;
        }
        if !is_malicious {
            benign += 1;
            if predicted_malicious {
                false_positives += 1;
            }
        }
    }
    let n = corpus.entries().len();
    if n == 0 {
        return Err(usage(format!(
            "corpus {} has no entries to score",
            corpus_path.display()
        )));
    }
    let fpr = if benign == 0 {
        0.0
    } else {
        false_positives as f64 / benign as f64
    };
    println!(
        "accuracy {:.4}, false positive rate {:.4} (n={n}, whole corpus)",
        correct as f64 / n as f64,
        fpr
    );
    Ok(())
}

fn agent_train(args: AgentTrainArgs) -> CliResult<()> {
    let corpus = load_corpus(&args.corpus)?;
    let model = load_ids(&args.ids)?;
    check_dimensions(&corpus, &args.corpus, &model, &args.ids)?;

    let config = EnvConfig {
        max_turns: args.max_turns,
        vocab_cardinality: corpus.vocabulary().cardinality(),
        increment_step: args.increment_step,
        reward_goal: args.goal,
        threshold: args.threshold,
        gamma: args.gamma,
        action_mode: args.action_mode,
        seed: args.seed,
        agent_id: args.agent_id.clone(),
    };
    let pool = Environment::pool_from_corpus(&corpus);
    if pool.is_empty() {
        return Err(usage(format!(
            "corpus {} has no malicious entries to obfuscate",
            args.corpus.display()
        )));
    }
    let mut environment = Environment::new(config, Arc::new(model), pool)
        .map_err(|e| usage(e.to_string()))?;

    let ppo = PpoConfig {
        clip: args.clip,
        gamma: args.gamma,
        gae_lambda: args.gae_lambda,
        rollout_horizon: args.horizon,
        minibatch_size: args.minibatch,
        update_epochs: args.update_epochs,
        learning_rate: args.lr,
        entropy_coeff: args.entropy_coeff,
        value_coeff: args.value_coeff,
        seed: derive_seed(args.seed, 2),
    };
    let mut params = PolicyParameters::new(
        environment.config().vocab_cardinality,
        environment.action_count(),
        derive_seed(args.seed, 1),
    );
    let records = train_agent(&mut params, &mut environment, &ppo, args.budget)
        .map_err(|e| runtime(format!("training failed: {e}")))?;

    params
        .save(&args.out)
        .map_err(|e| runtime(format!("writing {}: {e}", args.out.display())))?;
    if let Some(metrics_path) = &args.metrics {
        let bytes = obflab_core::metrics::metrics_stream_to_bytes(&records);
        write_atomic(metrics_path, &bytes)
            .map_err(|e| runtime(format!("writing {}: {e}", metrics_path.display())))?;
    }

    let episodes: u64 = records.iter().map(|r| r.episodes_completed).sum();
    let last = records.last();
    println!(
        "trained {} updates ({} env steps, {episodes} episodes), final mean step reward {:.4}",
        records.len(),
        last.map(|r| r.env_steps).unwrap_or(0),
        last.map(|r| r.mean_step_reward).unwrap_or(0.0),
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn swarm_run(args: SwarmRunArgs) -> CliResult<()> {
    if !args.manifest.exists() {
        return Err(usage(format!(
            "manifest {} does not exist",
            args.manifest.display()
        )));
    }
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| usage(format!("manifest {}: {e}", args.manifest.display())))?;
    let manifest: CampaignManifest = serde_json::from_str(&text)
        .map_err(|e| usage(format!("manifest {}: {e}", args.manifest.display())))?;

    // Manifest paths are relative to the manifest; flag overrides are
    // relative to the working directory, as typed.
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let corpus_path = base.join(&manifest.corpus);
    let ids_path = base.join(&manifest.ids);
    let out_dir = args.out.unwrap_or_else(|| base.join(&manifest.out));
    let train_budget = args.train_budget.unwrap_or(manifest.train_budget);
    let eval_episodes = args.eval_episodes.unwrap_or(manifest.eval_episodes);
    let workers = args.workers.unwrap_or(manifest.workers);

    let corpus = load_corpus(&corpus_path)?;
    let model = load_ids(&ids_path)?;
    check_dimensions(&corpus, &corpus_path, &model, &ids_path)?;

    let result = swarm::run_campaign(
        &manifest.agents,
        &corpus,
        Arc::new(model),
        train_budget,
        eval_episodes,
        workers,
    )
    .map_err(|e| match e {
        swarm::SwarmError::Config(_)
        | swarm::SwarmError::DuplicateAgentId(_)
        | swarm::SwarmError::DuplicateSeed(_)
        | swarm::SwarmError::SeedCountMismatch { .. } => {
            usage(format!("manifest {}: {e}", args.manifest.display()))
        }
        other => runtime(other.to_string()),
    })?;
    swarm::write_outputs(&out_dir, &result)
        .map_err(|e| runtime(format!("writing {}: {e}", out_dir.display())))?;

    let summary = swarm::summarize_campaign(&result);
    let mut failed = 0usize;
    for agent in &summary.agents {
        match &agent.error {
            None => println!(
                "agent {} (seed {}): {} eval episodes, {} successes, {} env steps",
                agent.agent_id, agent.seed, agent.eval_records, agent.successes, agent.env_steps
            ),
            Some(message) => {
                failed += 1;
                println!("agent {} (seed {}): FAILED: {message}", agent.agent_id, agent.seed);
            }
        }
    }
    println!(
        "wrote {} ({} records) and {}",
        out_dir.join("archive.jsonl").display(),
        result.archive.len(),
        out_dir.join("summary.json").display(),
    );
    if failed > 0 {
        return Err(runtime(format!(
            "{failed} of {} agents failed; partial outputs were written",
            summary.agents.len()
        )));
    }
    Ok(())
}

fn report_evasion(
    archive_path: &Path,
    out: Option<&Path>,
    histogram: Option<&Path>,
) -> CliResult<()> {
    let records = load_archive(archive_path)?;
    let stats = evasion_statistics(&records)
        .map_err(|e| usage(format!("archive {}: {e}", archive_path.display())))?;
    let line = stats.to_jsonl_line();
    match out {
        Some(path) => {
            write_atomic(path, line.as_bytes())
                .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        None => print!("{line}"),
    }
    if let Some(path) = histogram {
        write_atomic(path, stats.histogram_csv().as_bytes())
            .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn report_curves(metrics_path: &Path, out: Option<&Path>) -> CliResult<()> {
    if !metrics_path.exists() {
        return Err(usage(format!(
            "metrics file {} does not exist",
            metrics_path.display()
        )));
    }
    let table = training_curves_from_path(metrics_path)
        .map_err(|e| usage(format!("metrics {}: {e}", metrics_path.display())))?;
    let csv = table.to_csv();
    match out {
        Some(path) => {
            write_atomic(path, csv.as_bytes())
                .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
            println!("wrote {} ({} rows)", path.display(), table.len());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn report_similarity(
    archive_path: &Path,
    threshold: Option<f64>,
    csv: Option<&Path>,
) -> CliResult<()> {
    let records = load_archive(archive_path)?;
    let selected: Vec<&env::ObfuscationRecord> = match threshold {
        Some(t) => records.iter().filter(|r| r.final_p > t).collect(),
        None => records.iter().collect(),
    };
    if selected.is_empty() {
        return Err(usage(format!(
            "archive {} has no records{}",
            archive_path.display(),
            threshold
                .map(|t| format!(" with final_p above {t}"))
                .unwrap_or_default()
        )));
    }
    let mut sims: Vec<f64> = selected.iter().map(|r| r.similarity).collect();
    sims.sort_by(|a, b| a.partial_cmp(b).expect("similarities are finite"));
    let n = sims.len();
    let median = if n % 2 == 1 {
        sims[n / 2]
    } else {
        0.5 * (sims[n / 2 - 1] + sims[n / 2])
    };
    let mean = sims.iter().sum::<f64>() / n as f64;
    println!(
        "{{\"n_records\":{n},\"mean\":{mean},\"median\":{median},\"min\":{},\"max\":{}}}",
        sims[0],
        sims[n - 1]
    );
    if let Some(path) = csv {
        let mut out = String::from("agent_id,source_entry_id,final_p,similarity\n");
        for r in &selected {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.agent_id, r.source_entry_id, r.final_p, r.similarity
            ));
        }
        write_atomic(path, out.as_bytes())
            .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
