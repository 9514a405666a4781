use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LoglikelihoodScorer, ScoreError, ScoreRequest, ScorerOutput};
use crate::corpus::McqaInstance;
use crate::prompting::Format;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateProfile {
    pub logprob: f64,
    /// Falls back to the whitespace word count of the continuation.
    #[serde(default)]
    pub token_count: Option<usize>,
}

/// One line of a synthetic profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub id: String,
    pub format: Format,
    pub logprobs: Vec<f64>,
    #[serde(default)]
    pub token_counts: Option<Vec<usize>>,
}

/// Deterministic in-process scorer for tests and dry runs.
///
/// Lookup order for a request: per-instance profile keyed by
/// (instance id, format, candidate index), then the continuation table, then
/// a hash of (seed, prompt, continuation) mapped to a per-token log-prob in
/// [-4.05, -0.05).
#[derive(Debug, Clone, Default)]
pub struct SyntheticScorer {
    seed: u64,
    table: HashMap<String, f64>,
    profiles: HashMap<(String, Format), Vec<CandidateProfile>>,
}

impl SyntheticScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn from_table<K: Into<String>>(entries: impl IntoIterator<Item = (K, f64)>) -> Self {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            ..Self::default()
        }
    }

    pub fn with_profile(
        mut self,
        id: impl Into<String>,
        format: Format,
        logprobs: Vec<f64>,
    ) -> Self {
        self.set_profile(
            id,
            format,
            logprobs
                .into_iter()
                .map(|logprob| CandidateProfile {
                    logprob,
                    token_count: None,
                })
                .collect(),
        );
        self
    }

    pub fn set_profile(
        &mut self,
        id: impl Into<String>,
        format: Format,
        candidates: Vec<CandidateProfile>,
    ) {
        self.profiles.insert((id.into(), format), candidates);
    }

    /// Every instance ranks its gold option first under both formats.
    pub fn gold_first(instances: &[McqaInstance]) -> Self {
        let mut scorer = Self::default();
        for inst in instances {
            let scores: Vec<CandidateProfile> = (0..inst.options.len())
                .map(|i| CandidateProfile {
                    logprob: if i == inst.answer_index { -0.5 } else { -3.0 },
                    token_count: Some(1),
                })
                .collect();
            for format in Format::ALL {
                scorer.set_profile(inst.id.clone(), format, scores.clone());
            }
        }
        scorer
    }

    pub fn add_records(&mut self, records: impl IntoIterator<Item = ProfileRecord>) {
        for rec in records {
            let candidates = rec
                .logprobs
                .iter()
                .enumerate()
                .map(|(i, &logprob)| CandidateProfile {
                    logprob,
                    token_count: rec.token_counts.as_ref().and_then(|t| t.get(i).copied()),
                })
                .collect();
            self.set_profile(rec.id, rec.format, candidates);
        }
    }

    pub fn load_profiles(&mut self, path: &Path) -> Result<(), ScoreError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScoreError::Protocol(format!("cannot read {}: {e}", path.display())))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ProfileRecord>(l).map_err(|e| {
                    ScoreError::Protocol(format!("{}: line {}: {e}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.add_records(records);
        Ok(())
    }

    fn hashed_unit(&self, prompt: &str, continuation: &str) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        hasher.update([0u8]);
        hasher.update(continuation.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

impl LoglikelihoodScorer for SyntheticScorer {
    fn loglikelihood(&self, r: &ScoreRequest<'_>) -> Result<ScorerOutput, ScoreError> {
        let default_tokens = word_count(r.continuation);
        if let Some(profile) = self
            .profiles
            .get(&(r.instance_id.to_string(), r.format))
            .and_then(|p| p.get(r.candidate_index))
        {
            return Ok(ScorerOutput {
                logprob: profile.logprob,
                token_count: profile.token_count.unwrap_or(default_tokens),
            });
        }
        if let Some(&logprob) = self.table.get(r.continuation) {
            return Ok(ScorerOutput {
                logprob,
                token_count: default_tokens,
            });
        }
        let per_token = -(0.05 + 4.0 * self.hashed_unit(r.prompt, r.continuation));
        Ok(ScorerOutput {
            logprob: per_token * default_tokens as f64,
            token_count: default_tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(id: &'a str, idx: usize, prompt: &'a str, cont: &'a str) -> ScoreRequest<'a> {
        ScoreRequest {
            instance_id: id,
            format: Format::Symbol,
            candidate_index: idx,
            prompt,
            continuation: cont,
        }
    }

    #[test]
    fn table_lookup() {
        let s = SyntheticScorer::from_table([(" A", -1.0), (" B", -2.0)]);
        assert_eq!(
            s.loglikelihood(&req("x", 0, "p", " A")).unwrap().logprob,
            -1.0
        );
        assert_eq!(
            s.loglikelihood(&req("x", 1, "p", " B")).unwrap().logprob,
            -2.0
        );
    }

    #[test]
    fn profile_takes_precedence() {
        let s = SyntheticScorer::from_table([(" A", -1.0)]).with_profile(
            "x",
            Format::Symbol,
            vec![-9.0, -8.0],
        );
        assert_eq!(
            s.loglikelihood(&req("x", 0, "p", " A")).unwrap().logprob,
            -9.0
        );
        assert_eq!(
            s.loglikelihood(&req("y", 0, "p", " A")).unwrap().logprob,
            -1.0
        );
    }

    #[test]
    fn hash_fallback_is_deterministic_and_seeded() {
        let a = SyntheticScorer::new(1);
        let b = SyntheticScorer::new(2);
        let r = req("x", 0, "prompt", " two words");
        let first = a.loglikelihood(&r).unwrap();
        assert_eq!(first, a.loglikelihood(&r).unwrap());
        assert_eq!(first.token_count, 2);
        assert!(first.logprob < 0.0 && first.logprob >= -8.1);
        assert_ne!(first, b.loglikelihood(&r).unwrap());
    }

    #[test]
    fn empty_continuation_has_zero_tokens() {
        let s = SyntheticScorer::new(0);
        assert_eq!(
            s.loglikelihood(&req("x", 0, "p", "")).unwrap().token_count,
            0
        );
    }

    #[test]
    fn profile_records_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        fs::write(
            &path,
            "{\"id\":\"q1\",\"format\":\"cloze\",\"logprobs\":[-1.0,-2.0],\"token_counts\":[2,3]}\n",
        )
        .unwrap();
        let mut s = SyntheticScorer::new(0);
        s.load_profiles(&path).unwrap();
        let mut r = req("q1", 1, "p", " x");
        r.format = Format::Cloze;
        assert_eq!(
            s.loglikelihood(&r).unwrap(),
            ScorerOutput {
                logprob: -2.0,
                token_count: 3
            }
        );
    }
}
