//! Log-likelihood scoring, length normalization and option selection.

mod http;
mod synthetic;

pub use http::{HttpScorer, RetryPolicy, SCORER_ENDPOINT_ENV, SCORER_TOKEN_ENV};
pub use synthetic::{CandidateProfile, ProfileRecord, SyntheticScorer};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_demonstrations, CorpusError, FewShotConfig, McqaInstance};
use crate::prompting::{render, Format, PromptError, PromptRendering, PromptTemplate};

/// Tolerance on the probability mass of a distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("scorer rejected the request: {0}")]
    Protocol(String),
    #[error("empty continuation for candidate {candidate}")]
    EmptyContinuation { candidate: usize },
    #[error("non-finite score for candidate {candidate}")]
    NonFinite { candidate: usize },
    #[error("need at least two candidate scores, got {0}")]
    TooFewCandidates(usize),
    #[error("answer index {index} out of range for {len} candidates")]
    AnswerOutOfRange { index: usize, len: usize },
    #[error("missing scorer credential: set {0}")]
    MissingCredential(&'static str),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Transport { .. })
    }
}

/// What a scorer reports for one continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerOutput {
    /// Sum of per-token natural-log probabilities.
    pub logprob: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub instance_id: &'a str,
    pub format: Format,
    pub candidate_index: usize,
    pub prompt: &'a str,
    pub continuation: &'a str,
}

/// Anything that can return the log-likelihood of a continuation given a
/// prompt. Implementations must be deterministic for a fixed request.
pub trait LoglikelihoodScorer: Send + Sync {
    fn loglikelihood(&self, request: &ScoreRequest<'_>) -> Result<ScorerOutput, ScoreError>;
}

impl<S: LoglikelihoodScorer + ?Sized> LoglikelihoodScorer for &S {
    fn loglikelihood(&self, request: &ScoreRequest<'_>) -> Result<ScorerOutput, ScoreError> {
        (**self).loglikelihood(request)
    }
}

impl<S: LoglikelihoodScorer + ?Sized> LoglikelihoodScorer for Box<S> {
    fn loglikelihood(&self, request: &ScoreRequest<'_>) -> Result<ScorerOutput, ScoreError> {
        (**self).loglikelihood(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub raw_logprob: f64,
    pub token_count: usize,
    pub char_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    None,
    PerToken,
    PerChar,
}

impl NormalizationMode {
    /// Symbol candidates are single letters and stay unnormalized; cloze
    /// candidates are divided by their token count.
    pub fn default_for(format: Format) -> Self {
        match format {
            Format::Symbol => NormalizationMode::None,
            Format::Cloze => NormalizationMode::PerToken,
        }
    }
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::None => "none",
            NormalizationMode::PerToken => "per_token",
            NormalizationMode::PerChar => "per_char",
        })
    }
}

/// Which scores the option distribution is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionBasis {
    /// The normalized scores used for selection; argmax always agrees.
    #[default]
    Decision,
    /// Unnormalized sums. Selection still uses the normalized scores.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatOutcome {
    pub format: Format,
    pub chosen_index: usize,
    pub correct: bool,
    pub distribution: Vec<f64>,
    pub gold_prob: f64,
    pub margin: f64,
}

/// Scores every candidate of `rendering`, in order.
pub fn score_candidates(
    scorer: &dyn LoglikelihoodScorer,
    instance_id: &str,
    rendering: &PromptRendering,
) -> Result<Vec<CandidateScore>, ScoreError> {
    if rendering.candidates.len() < 2 {
        return Err(ScoreError::TooFewCandidates(rendering.candidates.len()));
    }
    rendering
        .candidates
        .iter()
        .enumerate()
        .map(|(candidate, continuation)| {
            let out = scorer.loglikelihood(&ScoreRequest {
                instance_id,
                format: rendering.format,
                candidate_index: candidate,
                prompt: &rendering.prompt,
                continuation,
            })?;
            let char_count = continuation.chars().count();
            if out.token_count == 0 || char_count == 0 {
                return Err(ScoreError::EmptyContinuation { candidate });
            }
            if !out.logprob.is_finite() {
                return Err(ScoreError::NonFinite { candidate });
            }
            Ok(CandidateScore {
                raw_logprob: out.logprob,
                token_count: out.token_count,
                char_count,
            })
        })
        .collect()
}

pub fn normalize(score: &CandidateScore, mode: NormalizationMode) -> f64 {
    match mode {
        NormalizationMode::None => score.raw_logprob,
        NormalizationMode::PerToken => score.raw_logprob / score.token_count as f64,
        NormalizationMode::PerChar => score.raw_logprob / score.char_count as f64,
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn top_two_gap(distribution: &[f64]) -> f64 {
    let mut sorted = distribution.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    (sorted[0] - sorted[1]).clamp(0.0, 1.0)
}

fn check_scores(scores: &[f64], answer_index: usize) -> Result<(), ScoreError> {
    if scores.len() < 2 {
        return Err(ScoreError::TooFewCandidates(scores.len()));
    }
    if let Some(candidate) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ScoreError::NonFinite { candidate });
    }
    if answer_index >= scores.len() {
        return Err(ScoreError::AnswerOutOfRange {
            index: answer_index,
            len: scores.len(),
        });
    }
    Ok(())
}

/// Picks the highest-scoring option and builds the softmax distribution over
/// the same scores.
pub fn select_option(
    normalized_scores: &[f64],
    answer_index: usize,
    format: Format,
) -> Result<FormatOutcome, ScoreError> {
    select_option_with_distribution(normalized_scores, normalized_scores, answer_index, format)
}

/// Like [`select_option`] but with the distribution computed from
/// `distribution_scores` while the choice still follows `decision_scores`.
pub fn select_option_with_distribution(
    decision_scores: &[f64],
    distribution_scores: &[f64],
    answer_index: usize,
    format: Format,
) -> Result<FormatOutcome, ScoreError> {
    check_scores(decision_scores, answer_index)?;
    check_scores(distribution_scores, answer_index)?;
    let chosen_index = argmax(decision_scores);
    let distribution = softmax(distribution_scores);
    Ok(FormatOutcome {
        format,
        chosen_index,
        correct: chosen_index == answer_index,
        gold_prob: distribution[answer_index],
        margin: top_two_gap(&distribution),
        distribution,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoringOptions {
    /// Overrides the per-format default normalization.
    pub norm: Option<NormalizationMode>,
    pub basis: DistributionBasis,
}

impl ScoringOptions {
    pub fn norm_for(&self, format: Format) -> NormalizationMode {
        self.norm
            .unwrap_or_else(|| NormalizationMode::default_for(format))
    }
}

/// Render → score → normalize → select for one instance under one format.
/// Demonstrations are drawn from `demos_pool` per `fewshot`, excluding the
/// instance itself.
pub fn evaluate_instance(
    scorer: &dyn LoglikelihoodScorer,
    instance: &McqaInstance,
    format: Format,
    template: &PromptTemplate,
    fewshot: &FewShotConfig,
    demos_pool: &[McqaInstance],
    options: &ScoringOptions,
) -> Result<FormatOutcome, ScoreError> {
    let demos = sample_demonstrations(demos_pool, fewshot, Some(&instance.id))?;
    let rendering = render(format, instance, template, &demos)?;
    let scores = score_candidates(scorer, &instance.id, &rendering)?;
    let mode = options.norm_for(format);
    let decision: Vec<f64> = scores.iter().map(|s| normalize(s, mode)).collect();
    match options.basis {
        DistributionBasis::Decision => select_option(&decision, instance.answer_index, format),
        DistributionBasis::Raw => {
            let raw: Vec<f64> = scores.iter().map(|s| s.raw_logprob).collect();
            select_option_with_distribution(&decision, &raw, instance.answer_index, format)
        }
    }
}

/// Percentage of correct outcomes.
pub fn accuracy<'a>(outcomes: impl IntoIterator<Item = &'a FormatOutcome>) -> Option<f64> {
    let (hits, n) = outcomes.into_iter().fold((0usize, 0usize), |(h, n), o| {
        (h + o.correct as usize, n + 1)
    });
    (n > 0).then(|| 100.0 * hits as f64 / n as f64)
}
