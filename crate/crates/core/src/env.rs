//! The obfuscation MDP.
//!
//! An episode starts from a malicious corpus entry. Each action nudges one
//! opcode-frequency slot up or down by `increment_step`; decreases below
//! the episode's initial value are rejected and leave the observation
//! unchanged, so only net insertion of opcodes is representable. After
//! every action the discriminator scores the vector: at or below the
//! threshold the reward is p − 0.5, above it the episode succeeds with the
//! goal reward and the result is archived together with the Pearson
//! similarity to the original vector.
//!
//! Observations are raw whole-number vectors; agents normalize them
//! (divide by the frequency ceiling) before feeding networks.

use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, FeatureVector, Label, MAX_FREQUENCY};
use crate::fsio;
use crate::ids::Predictor;
use crate::metrics;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("predictor expects {got} inputs, environment is configured for {want}")]
    PredictorDimension { got: usize, want: usize },
    #[error("pool entry {id:?} has {got} slots, environment expects {want}")]
    PoolEntryDimension { id: String, got: usize, want: usize },
    #[error("malicious pool is empty, nothing to reset to")]
    EmptyPool,
    #[error("pool index {index} out of range, pool has {len} entries")]
    PoolIndexOutOfRange { index: usize, len: usize },
    #[error("action {action} out of range, environment has {limit} actions")]
    InvalidAction { action: usize, limit: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Success reward handed out when the discriminator is beaten.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardGoal {
    /// Reward equals max_turns, so one success always outweighs the best
    /// possible sum of per-step rewards.
    MaxTurns,
    Fixed(f64),
}

/// Which perturbations the agent may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// 2*N_O actions: index i < N_O increases slot i, index N_O + i
    /// decreases slot i (subject to the net-increase floor).
    IncreaseDecrease,
    /// N_O actions, increase only.
    IncreaseOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_turns: u32,
    pub vocab_cardinality: usize,
    pub increment_step: u32,
    pub reward_goal: RewardGoal,
    pub threshold: f64,
    pub gamma: f64,
    pub action_mode: ActionMode,
    pub seed: u64,
    pub agent_id: String,
}

impl EnvConfig {
    /// Laboratory defaults: increment 5, threshold 0.90, goal reward
    /// equal to the turn budget.
    pub fn new(max_turns: u32, vocab_cardinality: usize, seed: u64) -> Self {
        Self {
            max_turns,
            vocab_cardinality,
            increment_step: 5,
            reward_goal: RewardGoal::MaxTurns,
            threshold: 0.90,
            gamma: 0.99,
            action_mode: ActionMode::IncreaseDecrease,
            seed,
            agent_id: "agent-00".into(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self.action_mode {
            ActionMode::IncreaseDecrease => 2 * self.vocab_cardinality,
            ActionMode::IncreaseOnly => self.vocab_cardinality,
        }
    }

    pub fn goal_reward(&self) -> f64 {
        match self.reward_goal {
            RewardGoal::MaxTurns => self.max_turns as f64,
            RewardGoal::Fixed(r) => r,
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.max_turns == 0 {
            return Err(EnvError::Config("max_turns must be at least 1".into()));
        }
        if self.vocab_cardinality < 2 {
            return Err(EnvError::Config(
                "vocab_cardinality must be at least 2".into(),
            ));
        }
        if self.increment_step == 0 {
            return Err(EnvError::Config("increment_step must be at least 1".into()));
        }
        if !(self.threshold > 0.5 && self.threshold < 1.0) {
            return Err(EnvError::Config(format!(
                "threshold must lie in (0.5, 1), got {}",
                self.threshold
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(EnvError::Config(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        // Success must dominate the largest possible sum of in-episode
        // step rewards (max_turns * 0.5) so shorter successful episodes
        // keep a higher return.
        let goal = self.goal_reward();
        if !goal.is_finite() || goal <= self.max_turns as f64 * 0.5 {
            return Err(EnvError::Config(format!(
                "goal reward {goal} must exceed max_turns * 0.5 = {}",
                self.max_turns as f64 * 0.5
            )));
        }
        Ok(())
    }
}

/// A malicious sample the environment can start an episode from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub vector: FeatureVector,
}

/// Per-step observer payload: the probability that produced the reward,
/// whether the action changed the observation, and the turn counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub p_nonmal: f64,
    pub action_accepted: bool,
    pub turns_completed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub observation: FeatureVector,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct EpisodeState {
    current: FeatureVector,
    initial: FeatureVector,
    source_entry_id: String,
    initial_p: f64,
    turns_completed: u32,
    total_reward: f64,
    total_discounted_reward: f64,
    complete: bool,
}

/// One archived episode that beat the discriminator.
///
/// Unknown fields are rejected on parse, so records carrying opcode
/// sequences (or anything else beyond frequency data) never load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscationRecord {
    pub agent_id: String,
    pub seed: u64,
    pub source_entry_id: String,
    pub initial_p: f64,
    pub final_p: f64,
    pub steps: u32,
    pub similarity: f64,
    pub initial_frequencies: FeatureVector,
    pub final_frequencies: FeatureVector,
}

pub struct Environment {
    config: EnvConfig,
    predictor: Arc<dyn Predictor>,
    pool: Vec<PoolEntry>,
    rng: ChaCha8Rng,
    state: Option<EpisodeState>,
    archive: Vec<ObfuscationRecord>,
}

impl Environment {
    /// Builds an environment over a malicious pool. The pool may be empty
    /// at construction; reset then fails until entries exist.
    pub fn new(
        config: EnvConfig,
        predictor: Arc<dyn Predictor>,
        pool: Vec<PoolEntry>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        if predictor.dimensionality() != config.vocab_cardinality {
            return Err(EnvError::PredictorDimension {
                got: predictor.dimensionality(),
                want: config.vocab_cardinality,
            });
        }
        for entry in &pool {
            if entry.vector.len() != config.vocab_cardinality {
                return Err(EnvError::PoolEntryDimension {
                    id: entry.id.clone(),
                    got: entry.vector.len(),
                    want: config.vocab_cardinality,
                });
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            predictor,
            pool,
            rng,
            state: None,
            archive: Vec::new(),
        })
    }

    /// The malicious half of `corpus` as a starting pool.
    pub fn pool_from_corpus(corpus: &Corpus) -> Vec<PoolEntry> {
        corpus
            .iter_label(Label::Malicious)
            .map(|e| PoolEntry {
                id: e.id.clone(),
                vector: e.vector.clone(),
            })
            .collect()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn action_count(&self) -> usize {
        self.config.action_count()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// True before the first reset and after any episode ends.
    pub fn is_episode_complete(&self) -> bool {
        self.state.as_ref().map_or(true, |s| s.complete)
    }

    pub fn turns_completed(&self) -> u32 {
        self.state.as_ref().map_or(0, |s| s.turns_completed)
    }

    pub fn total_episode_reward(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.total_reward)
    }

    /// Forward-discounted in-episode return: sum of gamma^t * r_t.
    pub fn total_discounted_episode_reward(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.total_discounted_reward)
    }

    pub fn current_observation(&self) -> Option<&FeatureVector> {
        self.state.as_ref().map(|s| &s.current)
    }

    pub fn initial_observation(&self) -> Option<&FeatureVector> {
        self.state.as_ref().map(|s| &s.initial)
    }

    pub fn source_entry_id(&self) -> Option<&str> {
        self.state.as_ref().map(|s| s.source_entry_id.as_str())
    }

    pub fn initial_p_nonmal(&self) -> Option<f64> {
        self.state.as_ref().map(|s| s.initial_p)
    }

    /// Starts a new episode from a uniformly drawn pool entry and returns
    /// its initial observation.
    pub fn reset(&mut self) -> Result<FeatureVector, EnvError> {
        if self.pool.is_empty() {
            return Err(EnvError::EmptyPool);
        }
        let index = self.rng.gen_range(0..self.pool.len());
        self.begin_episode(index);
        Ok(self.state.as_ref().expect("episode begun").initial.clone())
    }

    /// Starts a new episode from a specific pool entry. Lets campaign
    /// evaluation walk every agent over the same malware sequence.
    pub fn reset_to(&mut self, index: usize) -> Result<FeatureVector, EnvError> {
        if index >= self.pool.len() {
            return Err(EnvError::PoolIndexOutOfRange {
                index,
                len: self.pool.len(),
            });
        }
        self.begin_episode(index);
        Ok(self.state.as_ref().expect("episode begun").initial.clone())
    }

    fn begin_episode(&mut self, index: usize) {
        let entry = &self.pool[index];
        let initial_p = self.predictor.predict(&entry.vector);
        self.state = Some(EpisodeState {
            current: entry.vector.clone(),
            initial: entry.vector.clone(),
            source_entry_id: entry.id.clone(),
            initial_p,
            turns_completed: 0,
            total_reward: 0.0,
            total_discounted_reward: 0.0,
            complete: false,
        });
    }

    /// Applies one action. If the previous episode is complete (or none
    /// was started) a reset happens first, so stepping never needs an
    /// explicit reset call between episodes.
    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let limit = self.config.action_count();
        if action >= limit {
            return Err(EnvError::InvalidAction { action, limit });
        }
        if self.is_episode_complete() {
            self.reset()?;
        }
        let n = self.config.vocab_cardinality;
        let step_size = self.config.increment_step;
        let state = self.state.as_mut().expect("reset guaranteed an episode");

        let mut accepted = true;
        if action < n {
            let slot = action;
            let before = state.current.get(slot);
            let after = before.saturating_add(step_size).min(MAX_FREQUENCY);
            if after == before {
                accepted = false;
            } else {
                state.current.set(slot, after);
            }
        } else {
            let slot = action - n;
            let before = state.current.get(slot);
            let floor = state.initial.get(slot);
            // Net-increase rule: a decrease may never take the slot below
            // its value at episode start.
            if before >= floor + step_size {
                state.current.set(slot, before - step_size);
            } else {
                accepted = false;
            }
        }

        state.turns_completed += 1;
        let p = self.predictor.predict(&state.current);
        let threshold_beaten = p > self.config.threshold;
        let reward = if threshold_beaten {
            self.config.goal_reward()
        } else {
            p - 0.5
        };
        let done = threshold_beaten || state.turns_completed >= self.config.max_turns;

        state.total_reward += reward;
        state.total_discounted_reward +=
            self.config.gamma.powi(state.turns_completed as i32 - 1) * reward;
        state.complete = done;

        let result = StepResult {
            reward,
            observation: state.current.clone(),
            done,
            info: StepInfo {
                p_nonmal: p,
                action_accepted: accepted,
                turns_completed: state.turns_completed,
            },
        };

        if threshold_beaten {
            // A constant vector has no defined Pearson similarity; record
            // 0.0 for that degenerate case instead of failing the episode.
            let similarity =
                metrics::feature_similarity(&state.initial, &state.current).unwrap_or(0.0);
            self.archive.push(ObfuscationRecord {
                agent_id: self.config.agent_id.clone(),
                seed: self.config.seed,
                source_entry_id: state.source_entry_id.clone(),
                initial_p: state.initial_p,
                final_p: p,
                steps: state.turns_completed,
                similarity,
                initial_frequencies: state.initial.clone(),
                final_frequencies: state.current.clone(),
            });
        }

        Ok(result)
    }

    pub fn archive(&self) -> &[ObfuscationRecord] {
        &self.archive
    }

    /// Drains the archived records accumulated so far.
    pub fn take_archive(&mut self) -> Vec<ObfuscationRecord> {
        std::mem::take(&mut self.archive)
    }
}

/// Serializes archive records as line-delimited JSON.
pub fn archive_to_bytes(records: &[ObfuscationRecord]) -> Vec<u8> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out.into_bytes()
}

/// Parses an archive, validating each record's schema. Failures name the
/// 1-based line.
pub fn archive_from_reader<R: BufRead>(reader: R) -> Result<Vec<ObfuscationRecord>, EnvError> {
    let mut records = Vec::new();
    for (offset, line) in reader.lines().enumerate() {
        let line_no = offset + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ObfuscationRecord =
            serde_json::from_str(&line).map_err(|e| EnvError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.initial_frequencies.len() != record.final_frequencies.len() {
            return Err(EnvError::Parse {
                line: line_no,
                message: format!(
                    "initial and final vectors disagree in length: {} vs {}",
                    record.initial_frequencies.len(),
                    record.final_frequencies.len()
                ),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_archive(path: &Path, records: &[ObfuscationRecord]) -> Result<(), EnvError> {
    fsio::write_atomic(path, &archive_to_bytes(records))?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<ObfuscationRecord>, EnvError> {
    let file = std::fs::File::open(path)?;
    archive_from_reader(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{ConstantPredictor, HashPredictor, ScriptedPredictor};

    fn pool(entries: &[(&str, &[u32])]) -> Vec<PoolEntry> {
        entries
            .iter()
            .map(|(id, v)| PoolEntry {
                id: (*id).to_string(),
                vector: FeatureVector::new(v.to_vec()).unwrap(),
            })
            .collect()
    }

    fn config(n: usize, max_turns: u32, seed: u64) -> EnvConfig {
        EnvConfig::new(max_turns, n, seed)
    }

    #[test]
    fn default_config_constructs() {
        let cfg = config(3, 100, 0);
        assert_eq!(cfg.increment_step, 5);
        assert_eq!(cfg.threshold, 0.90);
        assert_eq!(cfg.goal_reward(), 100.0);
        let env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.2 }),
            pool(&[("m", &[1, 2, 3])]),
        );
        assert!(env.is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = || Arc::new(ConstantPredictor { dims: 3, p: 0.2 }) as Arc<dyn Predictor>;
        let entries = pool(&[("m", &[1, 2, 3])]);

        let cfg = config(3, 100, 0);
        let mut bad = cfg.clone();
        bad.increment_step = 0;
        assert!(matches!(
            Environment::new(bad, p(), entries.clone()),
            Err(EnvError::Config(_))
        ));

        let mut bad = cfg.clone();
        bad.threshold = 0.4;
        assert!(matches!(
            Environment::new(bad, p(), entries.clone()),
            Err(EnvError::Config(_))
        ));

        let mut bad = cfg.clone();
        bad.reward_goal = RewardGoal::Fixed(10.0);
        bad.max_turns = 100;
        assert!(matches!(
            Environment::new(bad, p(), entries.clone()),
            Err(EnvError::Config(_))
        ));

        let bad = config(4, 100, 0);
        assert!(matches!(
            Environment::new(bad, p(), entries.clone()),
            Err(EnvError::PredictorDimension { got: 3, want: 4 })
        ));

        let cfg = config(3, 100, 0);
        let bad_pool = pool(&[("m", &[1, 2])]);
        assert!(matches!(
            Environment::new(cfg, p(), bad_pool),
            Err(EnvError::PoolEntryDimension { .. })
        ));
    }

    #[test]
    fn reset_returns_initial_vector_and_records_p() {
        let cfg = config(3, 100, 5);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.07 }),
            pool(&[("mal-1", &[0, 3, 7])]),
        )
        .unwrap();
        let obs = env.reset().unwrap();
        assert_eq!(obs.as_slice(), &[0, 3, 7]);
        assert_eq!(env.turns_completed(), 0);
        assert_eq!(env.initial_p_nonmal(), Some(0.07));
        assert_eq!(env.source_entry_id(), Some("mal-1"));
        assert!(!env.is_episode_complete());
    }

    #[test]
    fn reset_on_empty_pool_fails() {
        let cfg = config(3, 100, 5);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.1 }),
            vec![],
        )
        .unwrap();
        assert!(matches!(env.reset(), Err(EnvError::EmptyPool)));
        assert!(matches!(env.step(0), Err(EnvError::EmptyPool)));
    }

    #[test]
    fn reset_entry_choice_is_reproducible() {
        let entries = pool(&[("a", &[1, 1, 1]), ("b", &[2, 2, 2]), ("c", &[3, 3, 3])]);
        let make = || {
            Environment::new(
                config(3, 100, 77),
                Arc::new(ConstantPredictor { dims: 3, p: 0.1 }),
                entries.clone(),
            )
            .unwrap()
        };
        let mut e1 = make();
        let mut e2 = make();
        for _ in 0..10 {
            e1.reset().unwrap();
            e2.reset().unwrap();
            assert_eq!(e1.source_entry_id(), e2.source_entry_id());
        }
    }

    #[test]
    fn accepted_step_below_threshold_scores_p_minus_half() {
        let cfg = config(3, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.7 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        let r = env.step(1).unwrap();
        assert!((r.reward - 0.2).abs() < 1e-12);
        assert!(!r.done);
        assert_eq!(r.observation.as_slice(), &[0, 8, 7]);
        assert!(r.info.action_accepted);
    }

    #[test]
    fn beating_threshold_pays_goal_reward_and_finishes() {
        let cfg = config(3, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.95 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        let r = env.step(0).unwrap();
        assert_eq!(r.reward, 100.0);
        assert!(r.done);
        assert_eq!(env.archive().len(), 1);
    }

    #[test]
    fn rejected_decrease_keeps_observation_and_still_scores() {
        let cfg = config(3, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.3 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        // Slot 2 sits at its initial value 7; decreasing would go below.
        let r = env.step(3 + 2).unwrap();
        assert_eq!(r.observation.as_slice(), &[0, 3, 7]);
        assert!(!r.info.action_accepted);
        assert!((r.reward - (0.3 - 0.5)).abs() < 1e-12);
        assert_eq!(r.info.turns_completed, 1);
    }

    #[test]
    fn turn_exhaustion_ends_episode_without_bonus() {
        let cfg = config(3, 3, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.4 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        for turn in 1..=3u32 {
            let r = env.step(0).unwrap();
            assert!((r.reward - (-0.1)).abs() < 1e-9, "reward {}", r.reward);
            assert_eq!(r.done, turn == 3);
            assert_eq!(r.info.turns_completed, turn);
        }
        assert!(env.is_episode_complete());
        assert!(env.archive().is_empty());
    }

    #[test]
    fn step_after_done_implicitly_resets() {
        let cfg = config(3, 2, 9);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.4 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        env.step(0).unwrap();
        let r = env.step(0).unwrap();
        assert!(r.done);
        let r = env.step(1).unwrap();
        assert_eq!(r.info.turns_completed, 1);
        assert_eq!(r.observation.as_slice(), &[0, 8, 7]);
        assert!((env.total_episode_reward() - r.reward).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_action_is_an_input_error() {
        let cfg = config(3, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.4 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        assert!(matches!(
            env.step(6),
            Err(EnvError::InvalidAction { action: 6, limit: 6 })
        ));
    }

    #[test]
    fn increase_only_mode_halves_the_action_space() {
        let mut cfg = config(3, 100, 1);
        cfg.action_mode = ActionMode::IncreaseOnly;
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.4 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        assert_eq!(env.action_count(), 3);
        env.reset().unwrap();
        assert!(matches!(
            env.step(3),
            Err(EnvError::InvalidAction { action: 3, limit: 3 })
        ));
    }

    #[test]
    fn ceiling_clamps_and_marks_noop_increases() {
        let cfg = config(2, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 2, p: 0.4 }),
            pool(&[("m", &[9_998, 10_000])]),
        )
        .unwrap();
        env.reset().unwrap();
        let r = env.step(0).unwrap();
        assert_eq!(r.observation.as_slice(), &[10_000, 10_000]);
        assert!(r.info.action_accepted);
        let r = env.step(1).unwrap();
        assert_eq!(r.observation.as_slice(), &[10_000, 10_000]);
        assert!(!r.info.action_accepted);
    }

    #[test]
    fn three_step_hand_trace_matches_field_for_field() {
        let mut cfg = config(3, 3, 123);
        cfg.gamma = 0.9;
        let predictor = ScriptedPredictor::new(3, &[0.05, 0.10, 0.20, 0.95]);
        let mut env =
            Environment::new(cfg, Arc::new(predictor), pool(&[("mal-x", &[0, 3, 7])])).unwrap();

        let obs0 = env.reset().unwrap();
        assert_eq!(obs0.as_slice(), &[0, 3, 7]);
        assert_eq!(env.initial_p_nonmal(), Some(0.05));

        // Step 1: increase slot 1.
        let r1 = env.step(1).unwrap();
        assert_eq!(r1.observation.as_slice(), &[0, 8, 7]);
        assert!((r1.reward - (0.10 - 0.5)).abs() < 1e-12);
        assert!(!r1.done);
        assert_eq!(
            r1.info,
            StepInfo {
                p_nonmal: 0.10,
                action_accepted: true,
                turns_completed: 1
            }
        );

        // Step 2: decrease slot 2, rejected by the net-increase floor.
        let r2 = env.step(3 + 2).unwrap();
        assert_eq!(r2.observation.as_slice(), &[0, 8, 7]);
        assert!((r2.reward - (0.20 - 0.5)).abs() < 1e-12);
        assert!(!r2.done);
        assert_eq!(
            r2.info,
            StepInfo {
                p_nonmal: 0.20,
                action_accepted: false,
                turns_completed: 2
            }
        );

        // Step 3: increase slot 0, beats the threshold.
        let r3 = env.step(0).unwrap();
        assert_eq!(r3.observation.as_slice(), &[5, 8, 7]);
        assert_eq!(r3.reward, 3.0);
        assert!(r3.done);
        assert_eq!(
            r3.info,
            StepInfo {
                p_nonmal: 0.95,
                action_accepted: true,
                turns_completed: 3
            }
        );

        assert!((env.total_episode_reward() - (-0.4 + -0.3 + 3.0)).abs() < 1e-12);
        let expected_discounted = -0.4 + 0.9 * -0.3 + 0.9 * 0.9 * 3.0;
        assert!((env.total_discounted_episode_reward() - expected_discounted).abs() < 1e-9);

        let archive = env.take_archive();
        assert_eq!(archive.len(), 1);
        let rec = &archive[0];
        assert_eq!(rec.agent_id, "agent-00");
        assert_eq!(rec.seed, 123);
        assert_eq!(rec.source_entry_id, "mal-x");
        assert_eq!(rec.initial_p, 0.05);
        assert_eq!(rec.final_p, 0.95);
        assert_eq!(rec.steps, 3);
        assert_eq!(rec.initial_frequencies.as_slice(), &[0, 3, 7]);
        assert_eq!(rec.final_frequencies.as_slice(), &[5, 8, 7]);
        // Independent Pearson oracle over the raw sums:
        // R = (n*sxy - sx*sy) / sqrt((n*sxx - sx^2) * (n*syy - sy^2)).
        let (a, b) = ([0.0f64, 3.0, 7.0], [5.0f64, 8.0, 7.0]);
        let n = 3.0;
        let (sx, sy): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let sxy: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let sxx: f64 = a.iter().map(|x| x * x).sum();
        let syy: f64 = b.iter().map(|y| y * y).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((rec.similarity - oracle).abs() < 1e-12);
    }

    #[test]
    fn archive_round_trips_through_jsonl() {
        let cfg = config(3, 100, 1);
        let mut env = Environment::new(
            cfg,
            Arc::new(ConstantPredictor { dims: 3, p: 0.95 }),
            pool(&[("m", &[0, 3, 7])]),
        )
        .unwrap();
        env.reset().unwrap();
        env.step(0).unwrap();
        env.step(1).unwrap();
        let records = env.take_archive();
        assert_eq!(records.len(), 2);
        let bytes = archive_to_bytes(&records);
        let back = archive_from_reader(bytes.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn archive_rejects_sequence_fields() {
        let line = concat!(
            r#"{"agent_id":"a","seed":1,"source_entry_id":"m","initial_p":0.1,"#,
            r#""final_p":0.95,"steps":3,"similarity":0.9,"#,
            r#""initial_frequencies":[1,2],"final_frequencies":[3,4],"#,
            r#""opcode_sequence":["mov","add","call"]}"#,
            "\n"
        );
        let err = archive_from_reader(line.as_bytes()).unwrap_err();
        match err {
            EnvError::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("opcode_sequence"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn archive_rejects_out_of_range_frequencies() {
        let line = concat!(
            r#"{"agent_id":"a","seed":1,"source_entry_id":"m","initial_p":0.1,"#,
            r#""final_p":0.95,"steps":3,"similarity":0.9,"#,
            r#""initial_frequencies":[1,2],"final_frequencies":[3,10001]}"#,
            "\n"
        );
        assert!(matches!(
            archive_from_reader(line.as_bytes()),
            Err(EnvError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn property_suite_random_sequences_hold_invariants() {
        use rand::Rng as _;
        let mut outer = ChaCha8Rng::seed_from_u64(20_240_814);
        for case in 0..200 {
            let n = outer.gen_range(2..=8usize);
            let max_turns = outer.gen_range(1..=20u32);
            let mut cfg = config(n, max_turns, outer.gen());
            cfg.increment_step = outer.gen_range(1..=10);
            cfg.threshold = outer.gen_range(0.55..0.95);
            let n_pool = outer.gen_range(1..=3usize);
            let entries: Vec<PoolEntry> = (0..n_pool)
                .map(|i| PoolEntry {
                    id: format!("m{i}"),
                    vector: FeatureVector::new(
                        (0..n).map(|_| outer.gen_range(0..=10_000u32)).collect(),
                    )
                    .unwrap(),
                })
                .collect();
            let mut env = Environment::new(
                cfg.clone(),
                Arc::new(HashPredictor { dims: n }),
                entries,
            )
            .unwrap();
            let mut initial = env.reset().unwrap();
            for _ in 0..outer.gen_range(1..=60usize) {
                let was_complete = env.is_episode_complete();
                let action = outer.gen_range(0..2 * n);
                let r = env.step(action).unwrap();
                if was_complete {
                    initial = env.initial_observation().unwrap().clone();
                }
                for slot in 0..n {
                    let cur = r.observation.get(slot);
                    assert!(cur >= initial.get(slot), "case {case}: floor violated");
                    assert!(cur <= 10_000, "case {case}: ceiling violated");
                }
                let in_band = (-0.5..=0.5).contains(&r.reward);
                let is_goal = r.reward == cfg.goal_reward();
                assert!(in_band || is_goal, "case {case}: reward {}", r.reward);
                assert!(r.info.turns_completed <= max_turns);
                assert_eq!(r.done, env.is_episode_complete());
                if r.info.turns_completed == max_turns {
                    assert!(r.done, "case {case}: exhausted episode not done");
                }
            }
        }
    }

    #[test]
    fn identical_seeds_replay_identically() {
        use rand::Rng as _;
        let entries = pool(&[("a", &[5, 6, 7]), ("b", &[100, 0, 50])]);
        let run = || {
            let mut env = Environment::new(
                config(3, 7, 4242),
                Arc::new(HashPredictor { dims: 3 }),
                entries.clone(),
            )
            .unwrap();
            let mut action_rng = ChaCha8Rng::seed_from_u64(9);
            let mut log = Vec::new();
            env.reset().unwrap();
            for _ in 0..100 {
                let action = action_rng.gen_range(0..6);
                let r = env.step(action).unwrap();
                log.push((
                    r.reward.to_bits(),
                    r.observation.clone(),
                    r.done,
                    r.info.turns_completed,
                ));
            }
            (log, env.take_archive())
        };
        let (log1, arch1) = run();
        let (log2, arch2) = run();
        assert_eq!(log1, log2);
        assert_eq!(arch1, arch2);
        assert_eq!(archive_to_bytes(&arch1), archive_to_bytes(&arch2));
    }
}
