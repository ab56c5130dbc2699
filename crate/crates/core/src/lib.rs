//! Desk-scale adversarial laboratory for opcode-frequency malware detectors.
//!
//! The crate trains reinforcement-learning agents to perturb opcode
//! frequency vectors until a surrogate discriminator stops flagging them,
//! while tracking how far each perturbed sample drifts from its origin.
//!
//! Modules:
//! - [`corpus`]: synthetic opcode-frequency corpora and their JSONL format
//! - [`ids`]: surrogate discriminators (logistic, small MLP) and training
//! - [`env`]: the obfuscation MDP the agents act in
//! - [`ppo`]: actor-critic networks, rollouts, the PPO update, gradient checks
//! - [`swarm`]: multi-agent campaigns over a shared corpus and discriminator
//! - [`metrics`]: similarity, evasion statistics, training-curve extraction
//! - [`checkpoint`]: binary model persistence shared by `ids` and `ppo`
//! - [`fsio`]: atomic file writes

pub mod checkpoint;
pub mod corpus;
pub mod env;
pub mod fsio;
pub mod ids;
pub mod metrics;
pub mod ppo;
pub mod swarm;

#[cfg(test)]
pub(crate) mod testing;

/// Derives a decorrelated stream seed from a base seed (splitmix64 over the
/// base xored with a stream tag). Campaigns use it to give each agent's
/// weight init, training, and evaluation independent generators while
/// keeping a single published seed per agent.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
