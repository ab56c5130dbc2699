//! Multi-agent obfuscation campaigns.
//!
//! A campaign takes a list of agent specs that differ by seed (or config),
//! trains each against the shared frozen discriminator and corpus, then runs
//! frozen-policy evaluation episodes whose records populate the archive.
//! Agents are fully independent, so campaigns parallelize across workers
//! without affecting results, and a fixed spec list reproduces byte-
//! identical outputs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MAX_FREQUENCY};
use crate::derive_seed;
use crate::env::{
    self, ActionMode, EnvConfig, EnvError, Environment, ObfuscationRecord, RewardGoal,
};
use crate::fsio::write_atomic;
use crate::ids::Predictor;
use crate::metrics::{self, EvasionStats, TrainingMetricsRecord};
use crate::ppo::{sample_action, train_agent, PolicyParameters, PpoConfig};

#[derive(Debug, thiserror::Error)]
pub enum SwarmError {
    #[error("swarm config: {0}")]
    Config(String),
    #[error("agent id {0:?} appears more than once in the campaign")]
    DuplicateAgentId(String),
    #[error("spawned seeds must be distinct; seed {0} repeats")]
    DuplicateSeed(u64),
    #[error("explicit seed list has {got} entries for {want} agents")]
    SeedCountMismatch { got: usize, want: usize },
    #[error("dissimilarity needs at least two completed agents, found {0}")]
    NeedsPair(usize),
    #[error("agents {a:?} and {b:?} share no source entries")]
    NoSharedSources { a: String, b: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Environment settings an agent spec may override; the campaign supplies
/// the vocabulary size, seed, and agent id when instantiating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvTemplate {
    pub max_turns: u32,
    pub increment_step: u32,
    pub threshold: f64,
    pub reward_goal: RewardGoal,
    pub gamma: f64,
    pub action_mode: ActionMode,
}

impl Default for EnvTemplate {
    fn default() -> Self {
        EnvTemplate {
            max_turns: 100,
            increment_step: 5,
            threshold: 0.90,
            reward_goal: RewardGoal::MaxTurns,
            gamma: 0.99,
            action_mode: ActionMode::IncreaseDecrease,
        }
    }
}

impl EnvTemplate {
    pub fn to_config(&self, vocab_cardinality: usize, seed: u64, agent_id: &str) -> EnvConfig {
        EnvConfig {
            max_turns: self.max_turns,
            vocab_cardinality,
            increment_step: self.increment_step,
            reward_goal: self.reward_goal,
            threshold: self.threshold,
            gamma: self.gamma,
            action_mode: self.action_mode,
            seed,
            agent_id: agent_id.to_string(),
        }
    }
}

/// One agent in a campaign. The seed is the agent's published identity for
/// reproduction: weight init, training randomness, and evaluation draws are
/// all derived from it (the `ppo.seed` field is overridden inside
/// campaigns; it only matters for standalone training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub seed: u64,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub env: EnvTemplate,
}

impl AgentSpec {
    pub fn new(agent_id: impl Into<String>, seed: u64) -> Self {
        AgentSpec {
            agent_id: agent_id.into(),
            seed,
            ppo: PpoConfig::default(),
            env: EnvTemplate::default(),
        }
    }
}

/// How `spawn_agents` assigns seeds to the clones.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedStrategy {
    /// base.seed, base.seed + 1, ...
    Sequential,
    /// One seed per agent, caller-supplied.
    Explicit(Vec<u64>),
}

/// Clones `base` into `n` specs with distinct seeds and ids
/// (`<base id>-00`, `<base id>-01`, ...). Seed variation is the default
/// dissimilarity mechanism; per-spec config edits remain available on the
/// returned list.
pub fn spawn_agents(
    base: &AgentSpec,
    n: usize,
    strategy: SeedStrategy,
) -> Result<Vec<AgentSpec>, SwarmError> {
    if n == 0 {
        return Err(SwarmError::Config("cannot spawn zero agents".into()));
    }
    let seeds: Vec<u64> = match strategy {
        SeedStrategy::Sequential => (0..n as u64).map(|i| base.seed.wrapping_add(i)).collect(),
        SeedStrategy::Explicit(list) => {
            if list.len() != n {
                return Err(SwarmError::SeedCountMismatch {
                    got: list.len(),
                    want: n,
                });
            }
            list
        }
    };
    let mut seen = std::collections::HashSet::new();
    for &s in &seeds {
        if !seen.insert(s) {
            return Err(SwarmError::DuplicateSeed(s));
        }
    }
    Ok(seeds
        .into_iter()
        .enumerate()
        .map(|(i, seed)| AgentSpec {
            agent_id: format!("{}-{i:02}", base.agent_id),
            seed,
            ppo: base.ppo.clone(),
            env: base.env.clone(),
        })
        .collect())
}

/// Everything a completed agent contributes to the campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRunReport {
    pub metrics: Vec<TrainingMetricsRecord>,
    /// One record per frozen-policy evaluation episode, successful or not.
    pub eval_records: Vec<ObfuscationRecord>,
    /// Actions taken during evaluation, indexed by action id.
    pub action_histogram: Vec<u64>,
    pub env_steps: u64,
    /// The discriminator threshold this agent's episodes were scored
    /// against; an eval record is a success iff final_p exceeds it.
    pub threshold: f64,
}

/// Per-agent result slot; a failed agent carries its diagnostic here
/// instead of poisoning the campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub agent_id: String,
    pub seed: u64,
    pub result: Result<AgentRunReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    /// Evaluation records of all completed agents, in agent_id order.
    pub archive: Vec<ObfuscationRecord>,
    /// One outcome per spec, in agent_id order.
    pub agents: Vec<AgentOutcome>,
    /// Training steps actually consumed by completed agents.
    pub total_env_steps: u64,
    /// Wall-clock time; in-memory only, never serialized, so outputs stay
    /// byte-reproducible.
    pub elapsed: Duration,
}

/// Trains every spec against the shared discriminator and corpus, then runs
/// `eval_episodes` frozen-policy episodes per agent (cycling through the
/// malicious pool in order) and archives one record per episode. `workers`
/// caps the number of agents running concurrently; results are identical
/// for any worker count because agents share nothing mutable.
pub fn run_campaign(
    specs: &[AgentSpec],
    corpus: &Corpus,
    predictor: Arc<dyn Predictor>,
    train_budget: u64,
    eval_episodes: usize,
    workers: usize,
) -> Result<CampaignResult, SwarmError> {
    let start = Instant::now();
    if specs.is_empty() {
        return Err(SwarmError::Config("campaign has no agents".into()));
    }
    if workers == 0 {
        return Err(SwarmError::Config("worker count must be at least 1".into()));
    }
    let mut ids = std::collections::HashSet::new();
    for spec in specs {
        if !ids.insert(spec.agent_id.as_str()) {
            return Err(SwarmError::DuplicateAgentId(spec.agent_id.clone()));
        }
    }
    let vocab_n = corpus.vocabulary().cardinality();
    if predictor.dimensionality() != vocab_n {
        return Err(SwarmError::Config(format!(
            "discriminator expects {} features, corpus has {vocab_n}",
            predictor.dimensionality()
        )));
    }
    let pool = Environment::pool_from_corpus(corpus);
    if pool.is_empty() {
        return Err(SwarmError::Config(
            "corpus has no malicious entries to obfuscate".into(),
        ));
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<AgentOutcome>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(specs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= specs.len() {
                    break;
                }
                let spec = &specs[i];
                let outcome = AgentOutcome {
                    agent_id: spec.agent_id.clone(),
                    seed: spec.seed,
                    result: run_one_agent(
                        spec,
                        vocab_n,
                        &pool,
                        Arc::clone(&predictor),
                        train_budget,
                        eval_episodes,
                    ),
                };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    let mut agents: Vec<AgentOutcome> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every agent slot is filled"))
        .collect();
    agents.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));

    let mut archive = Vec::new();
    let mut total_env_steps = 0;
    for outcome in &agents {
        if let Ok(report) = &outcome.result {
            archive.extend(report.eval_records.iter().cloned());
            total_env_steps += report.env_steps;
        }
    }
    Ok(CampaignResult {
        archive,
        agents,
        total_env_steps,
        elapsed: start.elapsed(),
    })
}

fn run_one_agent(
    spec: &AgentSpec,
    vocab_n: usize,
    pool: &[env::PoolEntry],
    predictor: Arc<dyn Predictor>,
    train_budget: u64,
    eval_episodes: usize,
) -> Result<AgentRunReport, String> {
    let fail = |stage: &str, e: &dyn std::fmt::Display| format!("{stage}: {e}");
    let config = spec.env.to_config(vocab_n, spec.seed, &spec.agent_id);
    let mut env = Environment::new(config, predictor, pool.to_vec())
        .map_err(|e| fail("environment", &e))?;
    let mut params =
        PolicyParameters::new(vocab_n, env.action_count(), derive_seed(spec.seed, 1));
    let mut ppo = spec.ppo.clone();
    ppo.seed = derive_seed(spec.seed, 2);
    let metrics_records = train_agent(&mut params, &mut env, &ppo, train_budget)
        .map_err(|e| fail("training", &e))?;
    let env_steps = metrics_records.last().map(|r| r.env_steps).unwrap_or(0);
    // The archive this campaign publishes holds frozen-policy evaluation
    // episodes only; successes the env recorded during training are
    // training artifacts and are dropped here.
    env.take_archive();

    let mut eval_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 3));
    let mut action_histogram = vec![0u64; env.action_count()];
    let mut eval_records = Vec::with_capacity(eval_episodes);
    for episode in 0..eval_episodes {
        env.reset_to(episode % env.pool_len())
            .map_err(|e| fail("evaluation reset", &e))?;
        let mut last_p = env
            .initial_p_nonmal()
            .expect("reset leaves an active episode");
        while !env.is_episode_complete() {
            let obs = env
                .current_observation()
                .expect("active episode has an observation")
                .normalized(MAX_FREQUENCY as f64);
            let dist = params
                .policy_distribution(&obs)
                .map_err(|e| fail("evaluation policy", &e))?;
            let (action, _) = sample_action(&dist, &mut eval_rng);
            action_histogram[action] += 1;
            let step = env.step(action).map_err(|e| fail("evaluation step", &e))?;
            last_p = step.info.p_nonmal;
        }
        let initial = env
            .initial_observation()
            .expect("episode retains its initial observation")
            .clone();
        let final_vector = env
            .current_observation()
            .expect("episode retains its final observation")
            .clone();
        // Same convention as the env's own archive: a zero-variance vector
        // has no defined correlation, recorded as similarity 0.0.
        let similarity = metrics::feature_similarity(&initial, &final_vector).unwrap_or(0.0);
        eval_records.push(ObfuscationRecord {
            agent_id: spec.agent_id.clone(),
            seed: spec.seed,
            source_entry_id: env
                .source_entry_id()
                .expect("episode knows its source entry")
                .to_string(),
            initial_p: env.initial_p_nonmal().expect("initial probability recorded"),
            final_p: last_p,
            steps: env.turns_completed(),
            similarity,
            initial_frequencies: initial,
            final_frequencies: final_vector,
        });
    }
    env.take_archive();
    Ok(AgentRunReport {
        metrics: metrics_records,
        eval_records,
        action_histogram,
        env_steps,
        threshold: env.config().threshold,
    })
}

/// Pairwise comparison of what two agents did to the same malware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDissimilarity {
    pub agent_a: String,
    pub agent_b: String,
    /// Source entries both agents produced an evaluation record for.
    pub shared_sources: usize,
    /// Shared sources whose final vectors differ in at least one slot.
    pub differing_sources: usize,
    /// Pearson similarity of the two final vectors, averaged over shared
    /// sources (zero-variance vectors count as 0.0).
    pub mean_final_similarity: f64,
    pub min_final_similarity: f64,
    /// Jensen-Shannon divergence (nats) between the agents' evaluation
    /// action distributions; 0 means identical behavior, ln 2 is maximal.
    pub histogram_divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityReport {
    pub pairs: Vec<PairDissimilarity>,
}

/// Compares every pair of completed agents: how similar their final vectors
/// are on shared sources, and how far apart their action distributions sit.
/// When an agent saw a source several times, its last evaluation record for
/// that source is compared. No pass/fail threshold is applied; the numbers
/// are reported as-is.
pub fn agent_dissimilarity(result: &CampaignResult) -> Result<DissimilarityReport, SwarmError> {
    let completed: Vec<(&str, &AgentRunReport)> = result
        .agents
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| (o.agent_id.as_str(), r)))
        .collect();
    if completed.len() < 2 {
        return Err(SwarmError::NeedsPair(completed.len()));
    }
    let finals: Vec<std::collections::BTreeMap<&str, &ObfuscationRecord>> = completed
        .iter()
        .map(|(_, report)| {
            let mut map = std::collections::BTreeMap::new();
            for record in &report.eval_records {
                map.insert(record.source_entry_id.as_str(), record);
            }
            map
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..completed.len() {
        for b in a + 1..completed.len() {
            let (id_a, report_a) = completed[a];
            let (id_b, report_b) = completed[b];
            let mut shared = 0usize;
            let mut differing = 0usize;
            let mut sum_sim = 0.0;
            let mut min_sim = f64::INFINITY;
            for (source, rec_a) in &finals[a] {
                let Some(rec_b) = finals[b].get(source) else {
                    continue;
                };
                shared += 1;
                if rec_a.final_frequencies != rec_b.final_frequencies {
                    differing += 1;
                }
                let sim = metrics::feature_similarity(
                    &rec_a.final_frequencies,
                    &rec_b.final_frequencies,
                )
                .unwrap_or(0.0);
                sum_sim += sim;
                min_sim = min_sim.min(sim);
            }
            if shared == 0 {
                return Err(SwarmError::NoSharedSources {
                    a: id_a.to_string(),
                    b: id_b.to_string(),
                });
            }
            let p = normalized_histogram(&report_a.action_histogram, id_a)?;
            let q = normalized_histogram(&report_b.action_histogram, id_b)?;
            if p.len() != q.len() {
                return Err(SwarmError::Config(format!(
                    "agents {id_a:?} and {id_b:?} have different action spaces"
                )));
            }
            pairs.push(PairDissimilarity {
                agent_a: id_a.to_string(),
                agent_b: id_b.to_string(),
                shared_sources: shared,
                differing_sources: differing,
                mean_final_similarity: sum_sim / shared as f64,
                min_final_similarity: min_sim,
                histogram_divergence: jensen_shannon(&p, &q),
            });
        }
    }
    Ok(DissimilarityReport { pairs })
}

fn normalized_histogram(counts: &[u64], agent_id: &str) -> Result<Vec<f64>, SwarmError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(SwarmError::Config(format!(
            "agent {agent_id:?} has an empty action histogram"
        )));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Jensen-Shannon divergence between two distributions of equal length,
/// in nats. Exactly 0.0 for identical inputs.
fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let mut js = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if *pi > 0.0 {
            js += 0.5 * pi * (pi / m).ln();
        }
        if *qi > 0.0 {
            js += 0.5 * qi * (qi / m).ln();
        }
    }
    js
}

/// Per-agent line in the campaign summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent_id: String,
    pub seed: u64,
    pub env_steps: u64,
    pub eval_records: usize,
    /// Evaluation episodes that beat the discriminator.
    pub successes: usize,
    pub action_histogram: Vec<u64>,
    pub error: Option<String>,
}

/// The campaign's aggregate outcome as written to `summary.json`.
/// Deliberately excludes wall-clock so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub agents: Vec<AgentSummary>,
    pub total_env_steps: u64,
    pub evasion: Option<EvasionStats>,
    pub dissimilarity: Option<Vec<PairDissimilarity>>,
}

/// Builds the summary for a campaign run. Each agent is scored against its
/// own environment threshold, carried on its run report.
pub fn summarize_campaign(result: &CampaignResult) -> CampaignSummary {
    let agents = result
        .agents
        .iter()
        .map(|outcome| match &outcome.result {
            Ok(report) => AgentSummary {
                agent_id: outcome.agent_id.clone(),
                seed: outcome.seed,
                env_steps: report.env_steps,
                eval_records: report.eval_records.len(),
                successes: report
                    .eval_records
                    .iter()
                    .filter(|r| r.final_p > report.threshold)
                    .count(),
                action_histogram: report.action_histogram.clone(),
                error: None,
            },
            Err(message) => AgentSummary {
                agent_id: outcome.agent_id.clone(),
                seed: outcome.seed,
                env_steps: 0,
                eval_records: 0,
                successes: 0,
                action_histogram: Vec::new(),
                error: Some(message.clone()),
            },
        })
        .collect();
    CampaignSummary {
        agents,
        total_env_steps: result.total_env_steps,
        evasion: metrics::evasion_statistics(&result.archive).ok(),
        dissimilarity: agent_dissimilarity(result).ok().map(|d| d.pairs),
    }
}

/// Writes `archive.jsonl`, `summary.json`, and one `metrics-<agent>.jsonl`
/// per completed agent into `out_dir` (created if missing). All writes are
/// atomic and the bytes are a pure function of the campaign result.
pub fn write_outputs(out_dir: &Path, result: &CampaignResult) -> Result<(), SwarmError> {
    let archive_bytes = env::archive_to_bytes(&result.archive);
    write_atomic(&out_dir.join("archive.jsonl"), &archive_bytes)?;
    let summary = summarize_campaign(result);
    let mut summary_bytes = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    summary_bytes.push(b'\n');
    write_atomic(&out_dir.join("summary.json"), &summary_bytes)?;
    for outcome in &result.agents {
        if let Ok(report) = &outcome.result {
            let bytes = metrics::metrics_stream_to_bytes(&report.metrics);
            write_atomic(
                &out_dir.join(format!("metrics-{}.jsonl", outcome.agent_id)),
                &bytes,
            )?;
        }
    }
    Ok(())
}
