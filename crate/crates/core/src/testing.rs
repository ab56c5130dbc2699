//! Stub discriminators shared by the crate's test suites.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::corpus::FeatureVector;
use crate::ids::Predictor;

/// Returns a fixed probability for every query.
pub(crate) struct ConstantPredictor {
    pub dims: usize,
    pub p: f64,
}

impl Predictor for ConstantPredictor {
    fn dimensionality(&self) -> usize {
        self.dims
    }
    fn predict(&self, _v: &FeatureVector) -> f64 {
        self.p
    }
}

/// Pops scripted probabilities in call order.
pub(crate) struct ScriptedPredictor {
    pub dims: usize,
    pub script: Mutex<VecDeque<f64>>,
}

impl ScriptedPredictor {
    pub fn new(dims: usize, probs: &[f64]) -> Self {
        Self {
            dims,
            script: Mutex::new(probs.iter().copied().collect()),
        }
    }
}

impl Predictor for ScriptedPredictor {
    fn dimensionality(&self) -> usize {
        self.dims
    }
    fn predict(&self, _v: &FeatureVector) -> f64 {
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .expect("script exhausted")
    }
}

/// Deterministic pseudo-random probability derived purely from the
/// vector contents. Used by property tests.
pub(crate) struct HashPredictor {
    pub dims: usize,
}

impl Predictor for HashPredictor {
    fn dimensionality(&self) -> usize {
        self.dims
    }
    fn predict(&self, v: &FeatureVector) -> f64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &value in v.as_slice() {
            h ^= value as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}
