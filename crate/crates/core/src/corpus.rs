//! Opcode vocabulary, labeled feature-vector corpus, synthetic generator,
//! and the JSONL corpus file format.
//!
//! Everything here works at the frequency-abstraction level. No opcode
//! sequences are stored or accepted anywhere: a record is a bag of counts,
//! one slot per vocabulary entry.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::fsio;

/// Upper bound for any opcode frequency slot.
pub const MAX_FREQUENCY: u32 = 10_000;

const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("vocabulary needs at least 2 distinct mnemonics, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate mnemonic {0:?} in vocabulary")]
    DuplicateMnemonic(String),
    #[error("frequency {value} at slot {index} exceeds {MAX_FREQUENCY}")]
    FrequencyOutOfRange { index: usize, value: u32 },
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("entry {id:?} has {got} frequencies, vocabulary has {want}")]
    DimensionMismatch { id: String, got: usize, want: usize },
    #[error("unsupported corpus version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("separation must lie in [0, 1], got {0}")]
    SeparationOutOfRange(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    fn at_line(self, line: usize) -> CorpusError {
        CorpusError::Parse {
            line,
            message: self.to_string(),
        }
    }
}

/// Ordered set of unique opcode mnemonics; its length is the feature
/// dimensionality every vector in a corpus must match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct OpcodeVocabulary {
    mnemonics: Vec<String>,
}

impl OpcodeVocabulary {
    /// Builds a vocabulary from raw mnemonics, dropping duplicates while
    /// keeping the first occurrence of each. Fewer than 2 distinct
    /// mnemonics is a configuration error.
    pub fn build<I, S>(mnemonics: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut unique = Vec::new();
        for m in mnemonics {
            let m = m.into();
            if seen.insert(m.clone()) {
                unique.push(m);
            }
        }
        if unique.len() < 2 {
            return Err(CorpusError::VocabularyTooSmall(unique.len()));
        }
        Ok(Self { mnemonics: unique })
    }

    /// Strict constructor for file headers: duplicates are an error, not
    /// silently collapsed, since a written corpus must never contain them.
    fn from_unique(mnemonics: Vec<String>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for m in &mnemonics {
            if !seen.insert(m.clone()) {
                return Err(CorpusError::DuplicateMnemonic(m.clone()));
            }
        }
        if mnemonics.len() < 2 {
            return Err(CorpusError::VocabularyTooSmall(mnemonics.len()));
        }
        Ok(Self { mnemonics })
    }

    pub fn cardinality(&self) -> usize {
        self.mnemonics.len()
    }

    pub fn mnemonics(&self) -> &[String] {
        &self.mnemonics
    }
}

/// Whole-number opcode frequencies, one slot per vocabulary entry.
/// Every slot stays inside [0, MAX_FREQUENCY].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<u32>);

impl FeatureVector {
    pub fn new(frequencies: Vec<u32>) -> Result<Self, CorpusError> {
        for (index, &value) in frequencies.iter().enumerate() {
            if value > MAX_FREQUENCY {
                return Err(CorpusError::FrequencyOutOfRange { index, value });
            }
        }
        Ok(Self(frequencies))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, index: usize) -> u32 {
        self.0[index]
    }

    /// Sets one slot. Callers clamp first; a value past the ceiling here
    /// is a bug, not an input error.
    pub fn set(&mut self, index: usize, value: u32) {
        assert!(value <= MAX_FREQUENCY, "frequency {value} exceeds ceiling");
        self.0[index] = value;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    /// Observation form fed to networks: each slot divided by `scale`.
    pub fn normalized(&self, scale: f64) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64 / scale).collect()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        let raw = Vec::<u32>::deserialize(deserializer)?;
        FeatureVector::new(raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malicious,
    Benign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Imported,
}

/// One labeled sample. Unknown fields are rejected so records carrying
/// anything beyond frequencies (sequences in particular) never parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    pub label: Label,
    pub source: Source,
    #[serde(rename = "frequencies")]
    pub vector: FeatureVector,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    version: u32,
    vocabulary: Vec<String>,
}

/// A vocabulary plus the entries drawn over it. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocabulary: OpcodeVocabulary,
    entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn new(
        vocabulary: OpcodeVocabulary,
        entries: Vec<CorpusEntry>,
    ) -> Result<Self, CorpusError> {
        let want = vocabulary.cardinality();
        let mut ids = HashSet::new();
        for entry in &entries {
            if entry.vector.len() != want {
                return Err(CorpusError::DimensionMismatch {
                    id: entry.id.clone(),
                    got: entry.vector.len(),
                    want,
                });
            }
            if !ids.insert(entry.id.clone()) {
                return Err(CorpusError::DuplicateId(entry.id.clone()));
            }
        }
        Ok(Self {
            vocabulary,
            entries,
        })
    }

    pub fn vocabulary(&self) -> &OpcodeVocabulary {
        &self.vocabulary
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn iter_label(&self, label: Label) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }

    pub fn label_count(&self, label: Label) -> usize {
        self.iter_label(label).count()
    }

    /// Serializes to the line-delimited corpus format: header line with
    /// version and vocabulary, then one record per line.
    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let header = CorpusHeader {
            version: CORPUS_FORMAT_VERSION,
            vocabulary: self.vocabulary.mnemonics.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out.into_bytes()
    }

    /// Parses the line-delimited format. All failures name the 1-based
    /// line they occurred on.
    pub fn from_jsonl_reader<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut lines = reader.lines();
        let header_line = match lines.next() {
            Some(l) => l?,
            None => {
                return Err(CorpusError::Parse {
                    line: 1,
                    message: "missing corpus header".into(),
                })
            }
        };
        let header: CorpusHeader =
            serde_json::from_str(&header_line).map_err(|e| CorpusError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
        if header.version != CORPUS_FORMAT_VERSION {
            return Err(CorpusError::Version {
                found: header.version,
                expected: CORPUS_FORMAT_VERSION,
            });
        }
        let vocabulary = OpcodeVocabulary::from_unique(header.vocabulary)
            .map_err(|e| e.at_line(1))?;
        let want = vocabulary.cardinality();

        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for (offset, line) in lines.enumerate() {
            let line_no = offset + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CorpusEntry =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if entry.vector.len() != want {
                return Err(CorpusError::DimensionMismatch {
                    id: entry.id.clone(),
                    got: entry.vector.len(),
                    want,
                }
                .at_line(line_no));
            }
            if !ids.insert(entry.id.clone()) {
                return Err(CorpusError::DuplicateId(entry.id.clone()).at_line(line_no));
            }
            entries.push(entry);
        }
        Ok(Self {
            vocabulary,
            entries,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CorpusError> {
        fsio::write_atomic(path, &self.to_jsonl_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl_reader(std::io::BufReader::new(file))
    }
}

/// Draws a synthetic labeled corpus over `vocab`.
///
/// Each class samples opcode counts from a multinomial over a class
/// profile. The malicious profile lives on one half of a seeded slot
/// shuffle, a disjoint profile on the other half, and the benign profile
/// interpolates between them: `separation` 0 makes the classes
/// indistinguishable, 1 gives them disjoint support. Per-entry totals are
/// uniform in [200, 2000]. Deterministic for fixed arguments.
pub fn synthesize_corpus(
    vocab: OpcodeVocabulary,
    n_malicious: usize,
    n_benign: usize,
    separation: f64,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if !(0.0..=1.0).contains(&separation) || !separation.is_finite() {
        return Err(CorpusError::SeparationOutOfRange(separation));
    }
    let n = vocab.cardinality();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let (mal_slots, dis_slots) = slots.split_at(n / 2);
    let mal_profile = profile_over(mal_slots, n, &mut rng);
    let dis_profile = profile_over(dis_slots, n, &mut rng);
    let ben_profile: Vec<f64> = mal_profile
        .iter()
        .zip(&dis_profile)
        .map(|(&m, &d)| (1.0 - separation) * m + separation * d)
        .collect();

    let mut entries = Vec::with_capacity(n_malicious + n_benign);
    for i in 0..n_malicious {
        entries.push(CorpusEntry {
            id: format!("mal-{i:05}"),
            label: Label::Malicious,
            source: Source::Synthetic,
            vector: draw_vector(&mal_profile, &mut rng),
        });
    }
    for i in 0..n_benign {
        entries.push(CorpusEntry {
            id: format!("ben-{i:05}"),
            label: Label::Benign,
            source: Source::Synthetic,
            vector: draw_vector(&ben_profile, &mut rng),
        });
    }
    Corpus::new(vocab, entries)
}

/// Exponentially distributed weights on the given slots, zero elsewhere,
/// normalized to sum 1.
fn profile_over(active: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut weights = vec![0.0; n];
    for &slot in active {
        let w: f64 = rng.sample(Exp1);
        weights[slot] = w;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// One multinomial draw: total count uniform in [200, 2000], each count
/// assigned by inverse-CDF lookup on the profile.
fn draw_vector(profile: &[f64], rng: &mut ChaCha8Rng) -> FeatureVector {
    let mut cumulative = Vec::with_capacity(profile.len());
    let mut acc = 0.0;
    for &p in profile {
        acc += p;
        cumulative.push(acc);
    }
    let total: u32 = rng.gen_range(200..=2000);
    let mut counts = vec![0u32; profile.len()];
    for _ in 0..total {
        let u: f64 = rng.gen();
        let idx = cumulative
            .partition_point(|&c| c <= u)
            .min(profile.len() - 1);
        counts[idx] = (counts[idx] + 1).min(MAX_FREQUENCY);
    }
    FeatureVector::new(counts).expect("counts stay under the ceiling by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab(n: usize) -> OpcodeVocabulary {
        OpcodeVocabulary::build((0..n).map(|i| format!("op{i:04}"))).unwrap()
    }

    #[test]
    fn build_vocabulary_dedups_preserving_first_occurrence() {
        let v = OpcodeVocabulary::build(["mov", "add", "mov"]).unwrap();
        assert_eq!(v.mnemonics(), ["mov", "add"]);
        assert_eq!(v.cardinality(), 2);
    }

    #[test]
    fn build_vocabulary_supports_full_scale_cardinality() {
        let v = small_vocab(1612);
        assert_eq!(v.cardinality(), 1612);
    }

    #[test]
    fn build_vocabulary_rejects_empty_and_singleton() {
        assert!(matches!(
            OpcodeVocabulary::build(Vec::<String>::new()),
            Err(CorpusError::VocabularyTooSmall(0))
        ));
        assert!(matches!(
            OpcodeVocabulary::build(["mov", "mov"]),
            Err(CorpusError::VocabularyTooSmall(1))
        ));
    }

    #[test]
    fn feature_vector_rejects_out_of_range() {
        let err = FeatureVector::new(vec![0, 10_001]).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::FrequencyOutOfRange {
                index: 1,
                value: 10_001
            }
        ));
        assert!(FeatureVector::new(vec![0, 10_000]).is_ok());
    }

    #[test]
    fn synthesize_honors_counts_and_labels() {
        let corpus = synthesize_corpus(small_vocab(8), 10, 10, 0.8, 7).unwrap();
        assert_eq!(corpus.entries().len(), 20);
        assert_eq!(corpus.label_count(Label::Malicious), 10);
        assert_eq!(corpus.label_count(Label::Benign), 10);
        for entry in corpus.entries() {
            assert_eq!(entry.vector.len(), 8);
            let total: u32 = entry.vector.as_slice().iter().sum();
            assert!((200..=2000).contains(&total), "total {total}");
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let a = synthesize_corpus(small_vocab(16), 12, 9, 0.5, 42).unwrap();
        let b = synthesize_corpus(small_vocab(16), 12, 9, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_jsonl_bytes(), b.to_jsonl_bytes());
    }

    #[test]
    fn synthesize_full_separation_uses_disjoint_support() {
        let corpus = synthesize_corpus(small_vocab(8), 20, 20, 1.0, 3).unwrap();
        let mut mal_support = vec![false; 8];
        let mut ben_support = vec![false; 8];
        for entry in corpus.entries() {
            let support = match entry.label {
                Label::Malicious => &mut mal_support,
                Label::Benign => &mut ben_support,
            };
            for (slot, &c) in entry.vector.as_slice().iter().enumerate() {
                if c > 0 {
                    support[slot] = true;
                }
            }
        }
        for slot in 0..8 {
            assert!(
                !(mal_support[slot] && ben_support[slot]),
                "slot {slot} used by both classes at separation 1.0"
            );
        }
    }

    #[test]
    fn synthesize_rejects_bad_separation() {
        assert!(synthesize_corpus(small_vocab(4), 1, 1, -0.1, 0).is_err());
        assert!(synthesize_corpus(small_vocab(4), 1, 1, 1.1, 0).is_err());
    }

    #[test]
    fn round_trip_identity() {
        let corpus = synthesize_corpus(small_vocab(8), 5, 5, 0.7, 11).unwrap();
        let bytes = corpus.to_jsonl_bytes();
        let back = Corpus::from_jsonl_reader(bytes.as_slice()).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn file_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = synthesize_corpus(small_vocab(6), 4, 3, 0.4, 5).unwrap();
        corpus.write_to(&path).unwrap();
        let back = Corpus::read_from(&path).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn read_rejects_out_of_range_frequency_naming_line() {
        let text = concat!(
            r#"{"version":1,"vocabulary":["mov","add"]}"#,
            "\n",
            r#"{"id":"a","label":"malicious","source":"synthetic","frequencies":[1,2]}"#,
            "\n",
            r#"{"id":"b","label":"benign","source":"synthetic","frequencies":[10001,0]}"#,
            "\n",
        );
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("10001"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_wrong_vector_length_naming_line() {
        let text = concat!(
            r#"{"version":1,"vocabulary":["mov","add"]}"#,
            "\n",
            r#"{"id":"a","label":"malicious","source":"synthetic","frequencies":[1,2,3]}"#,
            "\n",
        );
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_malformed_json_naming_line() {
        let text = concat!(
            r#"{"version":1,"vocabulary":["mov","add"]}"#,
            "\n",
            "not json\n",
        );
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }));
    }

    #[test]
    fn read_rejects_unknown_record_fields() {
        let text = concat!(
            r#"{"version":1,"vocabulary":["mov","add"]}"#,
            "\n",
            r#"{"id":"a","label":"malicious","source":"synthetic","frequencies":[1,2],"opcode_sequence":["mov","add"]}"#,
            "\n",
        );
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("opcode_sequence"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_wrong_version() {
        let text = r#"{"version":9,"vocabulary":["mov","add"]}"#;
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::Version {
                found: 9,
                expected: 1
            }
        ));
    }

    #[test]
    fn read_rejects_duplicate_ids_naming_line() {
        let text = concat!(
            r#"{"version":1,"vocabulary":["mov","add"]}"#,
            "\n",
            r#"{"id":"a","label":"malicious","source":"synthetic","frequencies":[1,2]}"#,
            "\n",
            r#"{"id":"a","label":"benign","source":"synthetic","frequencies":[2,1]}"#,
            "\n",
        );
        let err = Corpus::from_jsonl_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }));
    }

    #[test]
    fn empty_input_reports_missing_header() {
        let err = Corpus::from_jsonl_reader("".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }
}
