//! Baseline and routed evaluation runs over a benchmark's test split.

mod checkpoint;
mod predictor;
pub mod report;
pub mod stats;

pub use checkpoint::{Checkpoint, CheckpointKey};
pub use predictor::{
    ConstantPredictor, FilePredictor, FormatPredictor, HeuristicPredictor, OraclePredictor,
    PredictionRecord,
};
pub use report::{DeltaStatRow, Report, ReportRow};
pub use stats::{
    compute_delta, gain_vs_preferred, test_delta_significance, DeltaSignificance, GainStat,
    StatsError,
};

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FewShotConfig, McqaInstance, DEFAULT_SEEDS};
use crate::labeling::OutcomeRecord;
use crate::prompting::{Format, TemplateRegistry};
use crate::scoring::{evaluate_instance, LoglikelihoodScorer, ScoreError, ScoringOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scoring {benchmark}/{id} ({format}) failed: {source}")]
    Score {
        benchmark: String,
        id: String,
        format: Format,
        #[source]
        source: ScoreError,
    },
    #[error("no format prediction for {benchmark}/{id}")]
    MissingPrediction { benchmark: String, id: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("test set mixes benchmarks {0:?} and {1:?}")]
    MixedBenchmarks(String, String),
    #[error("invalid predictions: {0}")]
    Prediction(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record, {path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("nothing to report")]
    NothingToReport,
    #[error("{0}")]
    Report(String),
}

/// How a task's predictions were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFormat {
    Symbol,
    Cloze,
    Routed,
}

impl From<Format> for EvalFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Symbol => EvalFormat::Symbol,
            Format::Cloze => EvalFormat::Cloze,
        }
    }
}

impl fmt::Display for EvalFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalFormat::Symbol => "symbol",
            EvalFormat::Cloze => "cloze",
            EvalFormat::Routed => "routed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub seed: Option<u64>,
    pub format_used: Format,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedAccuracy {
    pub seed: Option<u64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub model: String,
    pub benchmark: String,
    pub format: EvalFormat,
    pub shots: usize,
    /// Per-seed accuracies; a single `None` entry for zero-shot runs.
    pub seeds: Vec<SeedAccuracy>,
    /// Mean of the per-seed accuracies, in percent.
    pub accuracy: f64,
    /// Test instances per seed.
    pub n: usize,
    /// Sorted by (seed, id).
    pub per_instance: Vec<InstanceResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub result: TaskResult,
    /// In job order: seed-major, then test-set order.
    pub outcomes: Vec<OutcomeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub model: String,
    pub scoring: ScoringOptions,
    /// Seeds averaged over for few-shot runs without an explicit seed.
    pub seeds: Vec<u64>,
    /// Reject explicit seeds outside `seeds`.
    pub strict_seeds: bool,
    pub max_in_flight: usize,
}

impl EvalSettings {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            scoring: ScoringOptions::default(),
            seeds: DEFAULT_SEEDS.to_vec(),
            strict_seeds: false,
            max_in_flight: 4,
        }
    }
}

struct Job<'a> {
    instance: &'a McqaInstance,
    format: Format,
    seed: Option<u64>,
}

pub struct Evaluator<'a> {
    scorer: &'a dyn LoglikelihoodScorer,
    templates: &'a TemplateRegistry,
    settings: EvalSettings,
    checkpoint: Option<Checkpoint>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        scorer: &'a dyn LoglikelihoodScorer,
        templates: &'a TemplateRegistry,
        settings: EvalSettings,
    ) -> Self {
        Self {
            scorer,
            templates,
            settings,
            checkpoint: None,
        }
    }

    /// Reuses outcomes already in `path` and appends new ones as they finish.
    pub fn with_checkpoint(mut self, path: &Path) -> Result<Self, EvalError> {
        self.checkpoint = Some(Checkpoint::open(path)?);
        Ok(self)
    }

    pub fn settings(&self) -> &EvalSettings {
        &self.settings
    }

    fn seed_plan(&self, k: usize, seed: Option<u64>) -> Vec<Option<u64>> {
        match (k, seed) {
            (0, _) => vec![None],
            (_, Some(s)) => vec![Some(s)],
            (_, None) => self.settings.seeds.iter().copied().map(Some).collect(),
        }
    }

    /// Scores every test instance in a single format.
    pub fn run_baseline(
        &self,
        test: &[McqaInstance],
        demos_pool: &[McqaInstance],
        format: Format,
        k: usize,
        seed: Option<u64>,
    ) -> Result<EvalRun, EvalError> {
        self.run(test, demos_pool, k, seed, format.into(), |_, _| Ok(format))
    }

    /// Scores every test instance in the format chosen by `predictor`. Fails
    /// before scoring anything if a prediction is missing.
    pub fn run_routed(
        &self,
        test: &[McqaInstance],
        demos_pool: &[McqaInstance],
        predictor: &dyn FormatPredictor,
        k: usize,
        seed: Option<u64>,
    ) -> Result<EvalRun, EvalError> {
        self.run(test, demos_pool, k, seed, EvalFormat::Routed, |inst, s| {
            predictor
                .predict(inst, s)
                .ok_or_else(|| EvalError::MissingPrediction {
                    benchmark: inst.benchmark.clone(),
                    id: inst.id.clone(),
                })
        })
    }

    fn run(
        &self,
        test: &[McqaInstance],
        demos_pool: &[McqaInstance],
        k: usize,
        seed: Option<u64>,
        kind: EvalFormat,
        choose: impl Fn(&McqaInstance, Option<u64>) -> Result<Format, EvalError>,
    ) -> Result<EvalRun, EvalError> {
        let benchmark = test
            .first()
            .ok_or(EvalError::EmptyTestSet)?
            .benchmark
            .clone();
        if let Some(other) = test.iter().find(|i| i.benchmark != benchmark) {
            return Err(EvalError::MixedBenchmarks(
                benchmark,
                other.benchmark.clone(),
            ));
        }
        let seeds = self.seed_plan(k, seed);
        let mut jobs = Vec::with_capacity(seeds.len() * test.len());
        for &s in &seeds {
            for instance in test {
                jobs.push(Job {
                    instance,
                    format: choose(instance, s)?,
                    seed: s,
                });
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.settings.max_in_flight.max(1))
            .build()
            .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
        let outcomes = pool.install(|| {
            jobs.par_iter()
                .map(|job| self.run_job(job, k, demos_pool))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let result = self.summarize(&benchmark, kind, k, &seeds, test.len(), &outcomes);
        Ok(EvalRun { result, outcomes })
    }

    fn run_job(
        &self,
        job: &Job<'_>,
        k: usize,
        demos_pool: &[McqaInstance],
    ) -> Result<OutcomeRecord, EvalError> {
        let inst = job.instance;
        let key = CheckpointKey {
            model: self.settings.model.clone(),
            benchmark: inst.benchmark.clone(),
            format: job.format,
            shots: k,
            seed: job.seed,
            id: inst.id.clone(),
        };
        if let Some(done) = self.checkpoint.as_ref().and_then(|c| c.get(&key)) {
            return Ok(done.clone());
        }
        let score_err = |source: ScoreError| EvalError::Score {
            benchmark: inst.benchmark.clone(),
            id: inst.id.clone(),
            format: job.format,
            source,
        };
        let template = self
            .templates
            .get(&inst.benchmark)
            .map_err(|e| score_err(e.into()))?;
        let default_seed = self
            .settings
            .seeds
            .first()
            .copied()
            .unwrap_or(DEFAULT_SEEDS[0]);
        let fewshot = FewShotConfig {
            k,
            seed: job.seed.unwrap_or(default_seed),
            allowed_seeds: self.settings.seeds.clone(),
            strict: self.settings.strict_seeds && k > 0,
        };
        let outcome = evaluate_instance(
            self.scorer,
            inst,
            job.format,
            template,
            &fewshot,
            demos_pool,
            &self.settings.scoring,
        )
        .map_err(score_err)?;
        let record = OutcomeRecord {
            model: self.settings.model.clone(),
            benchmark: inst.benchmark.clone(),
            id: inst.id.clone(),
            shots: k,
            seed: job.seed,
            answer_index: inst.answer_index,
            outcome,
        };
        if let Some(cp) = &self.checkpoint {
            cp.append(&record)?;
        }
        Ok(record)
    }

    fn summarize(
        &self,
        benchmark: &str,
        kind: EvalFormat,
        k: usize,
        seeds: &[Option<u64>],
        n: usize,
        outcomes: &[OutcomeRecord],
    ) -> TaskResult {
        let seed_acc: Vec<SeedAccuracy> = seeds
            .iter()
            .map(|&seed| {
                let hits = outcomes
                    .iter()
                    .filter(|o| o.seed == seed && o.outcome.correct)
                    .count();
                SeedAccuracy {
                    seed,
                    accuracy: 100.0 * hits as f64 / n as f64,
                }
            })
            .collect();
        let accuracy = seed_acc.iter().map(|s| s.accuracy).sum::<f64>() / seed_acc.len() as f64;
        let mut per_instance: Vec<InstanceResult> = outcomes
            .iter()
            .map(|o| InstanceResult {
                id: o.id.clone(),
                seed: o.seed,
                format_used: o.format(),
                correct: o.outcome.correct,
            })
            .collect();
        per_instance.sort_by(|a, b| (a.seed, &a.id).cmp(&(b.seed, &b.id)));
        TaskResult {
            model: self.settings.model.clone(),
            benchmark: benchmark.to_string(),
            format: kind,
            shots: k,
            seeds: seed_acc,
            accuracy,
            n,
            per_instance,
        }
    }
}

fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_outcomes(path: &Path, outcomes: &[OutcomeRecord]) -> Result<(), EvalError> {
    write_jsonl(path, outcomes)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>, EvalError> {
    read_jsonl(path)
}

/// Task results are stored one per line so several runs can share a file.
pub fn write_results(path: &Path, results: &[TaskResult]) -> Result<(), EvalError> {
    write_jsonl(path, results)
}

pub fn read_results(path: &Path) -> Result<Vec<TaskResult>, EvalError> {
    read_jsonl(path)
}
