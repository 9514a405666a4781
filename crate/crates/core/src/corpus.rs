//! Benchmark ingestion, split derivation and few-shot demonstration sampling.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Demonstration seeds used for every few-shot configuration.
pub const DEFAULT_SEEDS: [u64; 5] = [308, 713, 777, 1234, 4649];

/// Shot counts evaluated by default. Other values are accepted but logged.
pub const STANDARD_SHOTS: [usize; 5] = [0, 1, 2, 5, 10];

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

/// One multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaInstance {
    pub id: String,
    pub benchmark: String,
    pub split: Split,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    #[serde(default)]
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidInstance {
    #[error("options must have 2–5 entries (got {0})")]
    OptionCount(usize),
    #[error("answer_index out of range ({index} with {len} options)")]
    AnswerOutOfRange { index: usize, len: usize },
    #[error("question is empty")]
    EmptyQuestion,
}

impl McqaInstance {
    pub fn validate(&self) -> Result<(), InvalidInstance> {
        let len = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&len) {
            return Err(InvalidInstance::OptionCount(len));
        }
        if self.answer_index >= len {
            return Err(InvalidInstance::AnswerOutOfRange {
                index: self.answer_index,
                len,
            });
        }
        if self.question.trim().is_empty() {
            return Err(InvalidInstance::EmptyQuestion);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record, line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{reason}, line {line}")]
    Invalid {
        line: usize,
        reason: InvalidInstance,
    },
    #[error("duplicate id {id:?} in {benchmark}/{split}, line {line}")]
    DuplicateId {
        line: usize,
        id: String,
        benchmark: String,
        split: Split,
    },
    #[error("record benchmark {found:?} does not match {expected:?}, line {line}")]
    BenchmarkMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("train_fraction must lie strictly between 0 and 1 (got {0})")]
    InvalidFraction(f64),
    #[error("cannot derive splits: the train split is empty")]
    EmptyTrain,
    #[error("instance id {0:?} appears in more than one derived split")]
    OverlappingIds(String),
    #[error("requested {k} demonstrations but only {available} are available")]
    NotEnoughDemonstrations { k: usize, available: usize },
    #[error("seed {0} is not in the allowed seed set")]
    SeedNotAllowed(u64),
}

/// Reads a line-delimited dataset file. Blank lines are skipped; every other
/// line must be one record whose benchmark matches `benchmark`.
pub fn load_dataset(path: &Path, benchmark: &str) -> Result<Vec<McqaInstance>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, benchmark)
}

pub fn parse_dataset(text: &str, benchmark: &str) -> Result<Vec<McqaInstance>, CorpusError> {
    let mut seen: HashSet<(Split, String)> = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let inst: McqaInstance =
            serde_json::from_str(raw).map_err(|source| CorpusError::Malformed { line, source })?;
        inst.validate()
            .map_err(|reason| CorpusError::Invalid { line, reason })?;
        if inst.benchmark != benchmark {
            return Err(CorpusError::BenchmarkMismatch {
                line,
                expected: benchmark.to_string(),
                found: inst.benchmark,
            });
        }
        if !seen.insert((inst.split, inst.id.clone())) {
            return Err(CorpusError::DuplicateId {
                line,
                id: inst.id,
                benchmark: inst.benchmark,
                split: inst.split,
            });
        }
        out.push(inst);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub has_labeled_test: bool,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(
        has_labeled_test: bool,
        train_fraction: f64,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(CorpusError::InvalidFraction(train_fraction));
        }
        Ok(Self {
            has_labeled_test,
            train_fraction,
            seed,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            has_labeled_test: false,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<McqaInstance>,
    pub validation: Vec<McqaInstance>,
    pub test: Vec<McqaInstance>,
}

/// Builds train/validation/test partitions.
///
/// With a labeled test split the tags are used as-is. Otherwise the original
/// validation split becomes the test split, and the original train split is
/// shuffled (seeded Fisher–Yates over input order) and cut at
/// `round(len * train_fraction)` into new train and validation sets. Records
/// tagged `test` are dropped in that case since they carry no usable gold.
pub fn derive_splits(instances: &[McqaInstance], spec: &SplitSpec) -> Result<Splits, CorpusError> {
    let by_split = |s: Split| -> Vec<McqaInstance> {
        instances.iter().filter(|i| i.split == s).cloned().collect()
    };

    let splits = if spec.has_labeled_test {
        Splits {
            train: by_split(Split::Train),
            validation: by_split(Split::Validation),
            test: by_split(Split::Test),
        }
    } else {
        let mut train = by_split(Split::Train);
        if train.is_empty() {
            return Err(CorpusError::EmptyTrain);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        train.shuffle(&mut rng);
        let cut = ((train.len() as f64) * spec.train_fraction).round() as usize;
        let mut validation = train.split_off(cut.min(train.len()));
        for inst in &mut validation {
            inst.split = Split::Validation;
        }
        let mut test = by_split(Split::Validation);
        for inst in &mut test {
            inst.split = Split::Test;
        }
        Splits {
            train,
            validation,
            test,
        }
    };

    let mut owner: HashSet<&str> = HashSet::new();
    for part in [&splits.train, &splits.validation, &splits.test] {
        let local: HashSet<&str> = part.iter().map(|i| i.id.as_str()).collect();
        for id in local {
            if !owner.insert(id) {
                return Err(CorpusError::OverlappingIds(id.to_string()));
            }
        }
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotConfig {
    pub k: usize,
    pub seed: u64,
    pub allowed_seeds: Vec<u64>,
    /// Reject seeds outside `allowed_seeds`.
    pub strict: bool,
}

impl FewShotConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            allowed_seeds: DEFAULT_SEEDS.to_vec(),
            strict: false,
        }
    }

    pub fn zero_shot() -> Self {
        Self::new(0, DEFAULT_SEEDS[0])
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn is_standard_k(&self) -> bool {
        STANDARD_SHOTS.contains(&self.k)
    }
}

/// Draws `cfg.k` demonstrations without replacement from `validation`,
/// skipping `exclude_id`. The draw depends only on the pool order and seed.
pub fn sample_demonstrations(
    validation: &[McqaInstance],
    cfg: &FewShotConfig,
    exclude_id: Option<&str>,
) -> Result<Vec<McqaInstance>, CorpusError> {
    if cfg.strict && !cfg.allowed_seeds.contains(&cfg.seed) {
        return Err(CorpusError::SeedNotAllowed(cfg.seed));
    }
    if !cfg.is_standard_k() {
        log::warn!("non-standard shot count k={}", cfg.k);
    }
    let pool: Vec<&McqaInstance> = validation
        .iter()
        .filter(|i| Some(i.id.as_str()) != exclude_id)
        .collect();
    if cfg.k > pool.len() {
        return Err(CorpusError::NotEnoughDemonstrations {
            k: cfg.k,
            available: pool.len(),
        });
    }
    if cfg.k == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(index::sample(&mut rng, pool.len(), cfg.k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}
