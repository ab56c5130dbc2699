//! Surrogate discriminators standing in for an external IDS.
//!
//! A model maps an opcode-frequency vector to the probability that the
//! file it summarizes is non-malicious. Two kinds are provided: logistic
//! regression (default, monotone in each feature) and a one-hidden-layer
//! MLP (stress variant). Inputs are normalized by `input_scale` before
//! the model sees them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, ShapedHeader};
use crate::corpus::{Corpus, FeatureVector, Label};

pub const DEFAULT_INPUT_SCALE: f64 = 10_000.0;
/// Hidden width used when training the MLP kind.
pub const MLP_HIDDEN: usize = 32;
const IDS_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IdsError {
    #[error("corpus must contain both labels to train a discriminator")]
    SingleClass,
    #[error("{label} class has only {count} entries, need at least 2 to split")]
    InsufficientData { label: &'static str, count: usize },
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidSplit(f64),
    #[error("input has {got} slots, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("training produced a non-finite parameter")]
    NonFinite,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Read-only probability source the environment queries each step.
///
/// Implementations must be pure: repeated calls on the same vector
/// return bit-identical values. Callers guarantee the vector length
/// matches `dimensionality`.
pub trait Predictor: Send + Sync {
    fn dimensionality(&self) -> usize;
    /// P(non-malicious) for `v`, in [0, 1].
    fn predict(&self, v: &FeatureVector) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdsKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
enum IdsParams {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    /// w1 is row-major [hidden x inputs]; the output layer is w2 (hidden)
    /// plus scalar bias b2. Hidden activation tanh, output sigmoid.
    Mlp {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        hidden: usize,
        inputs: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdsModel {
    input_scale: f64,
    params: IdsParams,
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl IdsModel {
    pub fn logistic(weights: Vec<f64>, bias: f64, input_scale: f64) -> Result<Self, IdsError> {
        check_scale(input_scale)?;
        if weights.is_empty() {
            return Err(IdsError::InvalidParameters("empty weight vector".into()));
        }
        check_finite(weights.iter().chain([&bias]))?;
        Ok(Self {
            input_scale,
            params: IdsParams::Logistic { weights, bias },
        })
    }

    pub fn mlp(
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
        inputs: usize,
        input_scale: f64,
    ) -> Result<Self, IdsError> {
        check_scale(input_scale)?;
        let hidden = b1.len();
        if hidden == 0 || inputs == 0 {
            return Err(IdsError::InvalidParameters("degenerate layer width".into()));
        }
        if w1.len() != hidden * inputs || w2.len() != hidden {
            return Err(IdsError::InvalidParameters(format!(
                "layer shapes inconsistent: w1 {}, b1 {}, w2 {}, inputs {}",
                w1.len(),
                b1.len(),
                w2.len(),
                inputs
            )));
        }
        check_finite(w1.iter().chain(&b1).chain(&w2).chain([&b2]))?;
        Ok(Self {
            input_scale,
            params: IdsParams::Mlp {
                w1,
                b1,
                w2,
                b2,
                hidden,
                inputs,
            },
        })
    }

    pub fn kind(&self) -> IdsKind {
        match self.params {
            IdsParams::Logistic { .. } => IdsKind::Logistic,
            IdsParams::Mlp { .. } => IdsKind::Mlp,
        }
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn inputs(&self) -> usize {
        match &self.params {
            IdsParams::Logistic { weights, .. } => weights.len(),
            IdsParams::Mlp { inputs, .. } => *inputs,
        }
    }

    /// P(non-malicious) for `v`. Errors when the vector length does not
    /// match the model.
    pub fn predict_non_malicious(&self, v: &FeatureVector) -> Result<f64, IdsError> {
        if v.len() != self.inputs() {
            return Err(IdsError::DimensionMismatch {
                got: v.len(),
                want: self.inputs(),
            });
        }
        let x = v.normalized(self.input_scale);
        Ok(self.forward(&x))
    }

    fn forward(&self, x: &[f64]) -> f64 {
        match &self.params {
            IdsParams::Logistic { weights, bias } => {
                let z: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + bias;
                sigmoid(z)
            }
            IdsParams::Mlp {
                w1,
                b1,
                w2,
                b2,
                hidden,
                inputs,
            } => {
                let mut z2 = *b2;
                for h in 0..*hidden {
                    let row = &w1[h * inputs..(h + 1) * inputs];
                    let z1: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[h];
                    z2 += w2[h] * z1.tanh();
                }
                sigmoid(z2)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), IdsError> {
        let (header, arrays) = match &self.params {
            IdsParams::Logistic { weights, bias } => {
                let header = IdsHeader {
                    version: IDS_CHECKPOINT_VERSION,
                    kind: IdsKind::Logistic,
                    input_scale: self.input_scale,
                    shapes: vec![vec![weights.len()], vec![1]],
                };
                (header, vec![weights.clone(), vec![*bias]])
            }
            IdsParams::Mlp {
                w1,
                b1,
                w2,
                b2,
                hidden,
                inputs,
            } => {
                let header = IdsHeader {
                    version: IDS_CHECKPOINT_VERSION,
                    kind: IdsKind::Mlp,
                    input_scale: self.input_scale,
                    shapes: vec![
                        vec![*hidden, *inputs],
                        vec![*hidden],
                        vec![*hidden],
                        vec![1],
                    ],
                };
                (header, vec![w1.clone(), b1.clone(), w2.clone(), vec![*b2]])
            }
        };
        let refs: Vec<&[f64]> = arrays.iter().map(|a| a.as_slice()).collect();
        checkpoint::write_file(path, &header, &refs)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IdsError> {
        let (header, mut arrays) = checkpoint::read_file::<IdsHeader>(path)?;
        if header.version != IDS_CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: header.version,
                expected: IDS_CHECKPOINT_VERSION,
            }
            .into());
        }
        match header.kind {
            IdsKind::Logistic => {
                if arrays.len() != 2 {
                    return Err(CheckpointError::ArrayCount {
                        got: arrays.len(),
                        want: 2,
                    }
                    .into());
                }
                let bias = arrays.pop().expect("two arrays")[0];
                let weights = arrays.pop().expect("one array");
                Self::logistic(weights, bias, header.input_scale)
            }
            IdsKind::Mlp => {
                if arrays.len() != 4 {
                    return Err(CheckpointError::ArrayCount {
                        got: arrays.len(),
                        want: 4,
                    }
                    .into());
                }
                let inputs = header.shapes[0][1];
                let b2 = arrays.pop().expect("four arrays")[0];
                let w2 = arrays.pop().expect("three arrays");
                let b1 = arrays.pop().expect("two arrays");
                let w1 = arrays.pop().expect("one array");
                Self::mlp(w1, b1, w2, b2, inputs, header.input_scale)
            }
        }
    }
}

impl Predictor for IdsModel {
    fn dimensionality(&self) -> usize {
        self.inputs()
    }

    fn predict(&self, v: &FeatureVector) -> f64 {
        self.predict_non_malicious(v)
            .expect("caller matches model dimensionality")
    }
}

fn check_scale(input_scale: f64) -> Result<(), IdsError> {
    if !(input_scale.is_finite() && input_scale > 0.0) {
        return Err(IdsError::InvalidParameters(format!(
            "input_scale must be positive, got {input_scale}"
        )));
    }
    Ok(())
}

fn check_finite<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> Result<(), IdsError> {
    for v in values {
        if !v.is_finite() {
            return Err(IdsError::NonFinite);
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct IdsHeader {
    version: u32,
    kind: IdsKind,
    input_scale: f64,
    shapes: Vec<Vec<usize>>,
}

impl ShapedHeader for IdsHeader {
    fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

/// Held-out evaluation of a trained model. The false positive rate is
/// the fraction of benign entries scored malicious at the 0.5 cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsMetrics {
    pub accuracy: f64,
    pub false_positive_rate: f64,
    pub n_eval: usize,
}

/// Trains a discriminator with full-batch gradient descent on
/// cross-entropy loss. The split is stratified per label and seeded;
/// metrics come from the held-out side only. Deterministic for fixed
/// arguments.
pub fn train_ids(
    corpus: &Corpus,
    kind: IdsKind,
    split_fraction: f64,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(IdsModel, IdsMetrics), IdsError> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(IdsError::InvalidSplit(split_fraction));
    }
    let malicious: Vec<&FeatureVector> =
        corpus.iter_label(Label::Malicious).map(|e| &e.vector).collect();
    let benign: Vec<&FeatureVector> =
        corpus.iter_label(Label::Benign).map(|e| &e.vector).collect();
    if malicious.is_empty() || benign.is_empty() {
        return Err(IdsError::SingleClass);
    }
    if malicious.len() < 2 {
        return Err(IdsError::InsufficientData {
            label: "malicious",
            count: malicious.len(),
        });
    }
    if benign.len() < 2 {
        return Err(IdsError::InsufficientData {
            label: "benign",
            count: benign.len(),
        });
    }

    let inputs = corpus.vocabulary().cardinality();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Target is P(non-malicious): benign 1.0, malicious 0.0.
    let (mut train_x, mut train_y) = (Vec::new(), Vec::new());
    let (mut eval_x, mut eval_y) = (Vec::new(), Vec::new());
    for (class, target) in [(&malicious, 0.0), (&benign, 1.0)] {
        let mut order: Vec<usize> = (0..class.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let n_train = ((class.len() as f64 * split_fraction).round() as usize)
            .clamp(1, class.len() - 1);
        for (i, &idx) in order.iter().enumerate() {
            let x = class[idx].normalized(DEFAULT_INPUT_SCALE);
            if i < n_train {
                train_x.push(x);
                train_y.push(target);
            } else {
                eval_x.push(x);
                eval_y.push(target);
            }
        }
    }

    let model = match kind {
        IdsKind::Logistic => train_logistic(&train_x, &train_y, inputs, epochs, learning_rate)?,
        IdsKind::Mlp => train_mlp(&train_x, &train_y, inputs, epochs, learning_rate, &mut rng)?,
    };

    let mut correct = 0usize;
    let mut false_positives = 0usize;
    let mut benign_eval = 0usize;
    for (x, &y) in eval_x.iter().zip(&eval_y) {
        let p = model.forward(x);
        let predicted_malicious = p < 0.5;
        let is_malicious = y == 0.0;
        if predicted_malicious == is_malicious {
            correct += 1;
        }
        if !is_malicious {
            benign_eval += 1;
            if predicted_malicious {
                false_positives += 1;
            }
        }
    }
    let n_eval = eval_x.len();
    let metrics = IdsMetrics {
        accuracy: correct as f64 / n_eval as f64,
        false_positive_rate: if benign_eval == 0 {
            0.0
        } else {
            false_positives as f64 / benign_eval as f64
        },
        n_eval,
    };
    Ok((model, metrics))
}

fn train_logistic(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    inputs: usize,
    epochs: usize,
    learning_rate: f64,
) -> Result<IdsModel, IdsError> {
    let m = train_x.len() as f64;
    let mut weights = vec![0.0; inputs];
    let mut bias = 0.0;
    for _ in 0..epochs {
        let mut grad_w = vec![0.0; inputs];
        let mut grad_b = 0.0;
        for (x, &y) in train_x.iter().zip(train_y) {
            let z: f64 = weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + bias;
            let err = sigmoid(z) - y;
            for (g, xi) in grad_w.iter_mut().zip(x) {
                *g += err * xi;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= learning_rate * g / m;
        }
        bias -= learning_rate * grad_b / m;
        check_finite(weights.iter().chain([&bias]))?;
    }
    IdsModel::logistic(weights, bias, DEFAULT_INPUT_SCALE)
}

fn train_mlp(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    inputs: usize,
    epochs: usize,
    learning_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<IdsModel, IdsError> {
    let hidden = MLP_HIDDEN;
    let m = train_x.len() as f64;
    let s1 = 1.0 / (inputs as f64).sqrt();
    let s2 = 1.0 / (hidden as f64).sqrt();
    let mut w1: Vec<f64> = (0..hidden * inputs).map(|_| rng.gen_range(-s1..s1)).collect();
    let mut b1 = vec![0.0; hidden];
    let mut w2: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-s2..s2)).collect();
    let mut b2 = 0.0;

    let mut h_buf = vec![0.0; hidden];
    for _ in 0..epochs {
        let mut g_w1 = vec![0.0; hidden * inputs];
        let mut g_b1 = vec![0.0; hidden];
        let mut g_w2 = vec![0.0; hidden];
        let mut g_b2 = 0.0;
        for (x, &y) in train_x.iter().zip(train_y) {
            let mut z2 = b2;
            for h in 0..hidden {
                let row = &w1[h * inputs..(h + 1) * inputs];
                let z1: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[h];
                h_buf[h] = z1.tanh();
                z2 += w2[h] * h_buf[h];
            }
            let err = sigmoid(z2) - y;
            g_b2 += err;
            for h in 0..hidden {
                g_w2[h] += err * h_buf[h];
                let dz1 = err * w2[h] * (1.0 - h_buf[h] * h_buf[h]);
                g_b1[h] += dz1;
                let row = &mut g_w1[h * inputs..(h + 1) * inputs];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += dz1 * xi;
                }
            }
        }
        for (w, g) in w1.iter_mut().zip(&g_w1) {
            *w -= learning_rate * g / m;
        }
        for (w, g) in b1.iter_mut().zip(&g_b1) {
            *w -= learning_rate * g / m;
        }
        for (w, g) in w2.iter_mut().zip(&g_w2) {
            *w -= learning_rate * g / m;
        }
        b2 -= learning_rate * g_b2 / m;
        check_finite(w1.iter().chain(&b1).chain(&w2).chain([&b2]))?;
    }
    IdsModel::mlp(w1, b1, w2, b2, inputs, DEFAULT_INPUT_SCALE)
}
