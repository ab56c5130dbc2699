//! Evaluation layer: Pearson similarity between frequency vectors,
//! evasion statistics over archives, and training-curve extraction from
//! per-update metrics streams.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FeatureVector;
use crate::env::ObfuscationRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("vectors disagree in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("similarity needs at least 2 slots, got {0}")]
    TooShort(usize),
    #[error("similarity undefined for a constant (zero-variance) vector")]
    ZeroVariance,
    #[error("archive is empty, no statistics to compute")]
    EmptyArchive,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pearson product-moment correlation of two equal-length samples:
/// covariance over the product of standard deviations.
///
/// The arithmetic is arranged symmetrically, so swapping the arguments
/// returns the bit-identical value. Constant input is an error rather
/// than a silent NaN.
pub fn pearson_similarity(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(MetricsError::TooShort(a.len()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Pearson similarity of two raw frequency vectors.
pub fn feature_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MetricsError> {
    pearson_similarity(&a.to_f64(), &b.to_f64())
}

pub const HISTOGRAM_BINS: usize = 20;
const BIN_WIDTH: f64 = 0.05;

/// Archive-level evasion summary. The histogram covers final_p on [0, 1]
/// in 20 bins of width 0.05; 1.0 falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvasionStats {
    pub n_episodes: usize,
    pub mean_initial_p: f64,
    pub mean_final_p: f64,
    pub mean_uplift: f64,
    pub fraction_geq_half: f64,
    pub final_p_histogram: Vec<u64>,
}

fn histogram_bin(p: f64) -> usize {
    ((p * (HISTOGRAM_BINS as f64)).floor() as usize).min(HISTOGRAM_BINS - 1)
}

/// Single-pass evasion statistics over archive records.
pub fn evasion_statistics(records: &[ObfuscationRecord]) -> Result<EvasionStats, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyArchive);
    }
    let mut sum_initial = 0.0;
    let mut sum_final = 0.0;
    let mut sum_uplift = 0.0;
    let mut geq_half = 0usize;
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for record in records {
        sum_initial += record.initial_p;
        sum_final += record.final_p;
        sum_uplift += record.final_p - record.initial_p;
        if record.final_p >= 0.5 {
            geq_half += 1;
        }
        histogram[histogram_bin(record.final_p)] += 1;
    }
    let n = records.len() as f64;
    Ok(EvasionStats {
        n_episodes: records.len(),
        mean_initial_p: sum_initial / n,
        mean_final_p: sum_final / n,
        mean_uplift: sum_uplift / n,
        fraction_geq_half: geq_half as f64 / n,
        final_p_histogram: histogram,
    })
}

impl EvasionStats {
    /// One line-delimited JSON record, ready for a report file.
    pub fn to_jsonl_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("stats serialize");
        s.push('\n');
        s
    }

    /// Histogram as comma-separated rows: bin bounds and count.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, count) in self.final_p_histogram.iter().enumerate() {
            let low = i as f64 * BIN_WIDTH;
            let high = (i + 1) as f64 * BIN_WIDTH;
            out.push_str(&format!("{low:.2},{high:.2},{count}\n"));
        }
        out
    }
}

/// One per-update row of the training metrics stream an agent emits.
/// Episode aggregates are absent when no episode finished inside the
/// update window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    pub mean_step_reward: f64,
    pub episodes_completed: u64,
    pub mean_episode_reward: Option<f64>,
    pub mean_discounted_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Parsed metrics stream, exportable as comma-separated text for
/// external plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    records: Vec<TrainingMetricsRecord>,
}

pub const CURVE_COLUMNS: [&str; 11] = [
    "update",
    "env_steps",
    "mean_step_reward",
    "episodes_completed",
    "mean_episode_reward",
    "mean_discounted_episode_reward",
    "mean_episode_length",
    "actor_loss",
    "critic_loss",
    "entropy",
    "clip_fraction",
];

impl CurveTable {
    pub fn records(&self) -> &[TrainingMetricsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = CURVE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.update,
                r.env_steps,
                r.mean_step_reward,
                r.episodes_completed,
                opt(r.mean_episode_reward),
                opt(r.mean_discounted_episode_reward),
                opt(r.mean_episode_length),
                r.actor_loss,
                r.critic_loss,
                r.entropy,
                r.clip_fraction,
            ));
        }
        out
    }
}

/// Parses a line-delimited metrics stream into a curve table. Failures
/// name the 1-based line. An empty stream yields an empty table (the CSV
/// still carries the header).
pub fn training_curves<R: BufRead>(reader: R) -> Result<CurveTable, MetricsError> {
    let mut records = Vec::new();
    for (offset, line) in reader.lines().enumerate() {
        let line_no = offset + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrainingMetricsRecord =
            serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(CurveTable { records })
}

pub fn training_curves_from_path(path: &Path) -> Result<CurveTable, MetricsError> {
    let file = std::fs::File::open(path)?;
    training_curves(std::io::BufReader::new(file))
}

/// Serializes a metrics stream as line-delimited JSON.
pub fn metrics_stream_to_bytes(records: &[TrainingMetricsRecord]) -> Vec<u8> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out.into_bytes()
}
