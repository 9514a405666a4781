//! Sources of per-instance format decisions for routed evaluation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::McqaInstance;
use crate::heuristics::{heuristic_format, Lexicon};
use crate::labeling::OutcomeRecord;
use crate::prompting::Format;

pub trait FormatPredictor: Sync {
    /// The format to score `instance` with, or `None` if no prediction exists.
    fn predict(&self, instance: &McqaInstance, seed: Option<u64>) -> Option<Format>;
}

/// Routes every instance to one format; equivalent to a baseline run.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub Format);

impl FormatPredictor for ConstantPredictor {
    fn predict(&self, _: &McqaInstance, _: Option<u64>) -> Option<Format> {
        Some(self.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicPredictor {
    pub lexicon: Lexicon,
}

impl FormatPredictor for HeuristicPredictor {
    fn predict(&self, instance: &McqaInstance, _: Option<u64>) -> Option<Format> {
        heuristic_format(instance, &self.lexicon).format()
    }
}

/// One line of a classifier prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub benchmark: String,
    pub predicted_format: Format,
    pub confidence: f64,
}

/// Predictions read from a classifier output file, keyed by (benchmark, id).
#[derive(Debug, Clone, Default)]
pub struct FilePredictor {
    map: HashMap<(String, String), Format>,
}

impl FilePredictor {
    pub fn from_records(
        records: impl IntoIterator<Item = PredictionRecord>,
    ) -> Result<Self, EvalError> {
        let mut map = HashMap::new();
        for rec in records {
            if !(0.0..=1.0).contains(&rec.confidence) {
                return Err(EvalError::Prediction(format!(
                    "confidence {} out of [0, 1] for {}/{}",
                    rec.confidence, rec.benchmark, rec.id
                )));
            }
            if map
                .insert(
                    (rec.benchmark.clone(), rec.id.clone()),
                    rec.predicted_format,
                )
                .is_some()
            {
                return Err(EvalError::Prediction(format!(
                    "duplicate prediction for {}/{}",
                    rec.benchmark, rec.id
                )));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| EvalError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<PredictionRecord>, _>>()?;
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FormatPredictor for FilePredictor {
    fn predict(&self, instance: &McqaInstance, _: Option<u64>) -> Option<Format> {
        self.map
            .get(&(instance.benchmark.clone(), instance.id.clone()))
            .copied()
    }
}

/// Picks a format that was correct for the instance when one exists: symbol
/// if symbol was right, else cloze if cloze was right, else symbol.
#[derive(Debug, Clone, Default)]
pub struct OraclePredictor {
    map: HashMap<(String, String, Option<u64>), Format>,
}

impl OraclePredictor {
    pub fn from_outcomes(symbol: &[OutcomeRecord], cloze: &[OutcomeRecord]) -> Self {
        let key = |r: &OutcomeRecord| (r.benchmark.clone(), r.id.clone(), r.seed);
        let cloze_right: HashMap<_, bool> =
            cloze.iter().map(|r| (key(r), r.outcome.correct)).collect();
        let map = symbol
            .iter()
            .filter_map(|s| {
                let k = key(s);
                let clz = *cloze_right.get(&k)?;
                let choice = if !s.outcome.correct && clz {
                    Format::Cloze
                } else {
                    Format::Symbol
                };
                Some((k, choice))
            })
            .collect();
        Self { map }
    }
}

impl FormatPredictor for OraclePredictor {
    fn predict(&self, instance: &McqaInstance, seed: Option<u64>) -> Option<Format> {
        self.map
            .get(&(instance.benchmark.clone(), instance.id.clone(), seed))
            .copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::scoring::FormatOutcome;

    fn inst(id: &str) -> McqaInstance {
        McqaInstance {
            id: id.into(),
            benchmark: "piqa".into(),
            split: Split::Test,
            question: "Which is it?".into(),
            options: vec!["a".into(), "b".into()],
            answer_index: 0,
            context: None,
        }
    }

    #[test]
    fn file_predictions_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"benchmark\":\"piqa\",\"predicted_format\":\"cloze\",\"confidence\":0.9}\n",
        )
        .unwrap();
        let p = FilePredictor::load(&path).unwrap();
        assert_eq!(p.predict(&inst("a"), None), Some(Format::Cloze));
        assert_eq!(p.predict(&inst("b"), None), None);

        fs::write(&path, "{\"id\":\"a\",\"benchmark\":\"piqa\",\"predicted_format\":\"abstain\",\"confidence\":0.9}\n").unwrap();
        assert!(matches!(
            FilePredictor::load(&path),
            Err(EvalError::Malformed { line: 1, .. })
        ));

        let rec = |c| PredictionRecord {
            id: "a".into(),
            benchmark: "piqa".into(),
            predicted_format: Format::Symbol,
            confidence: c,
        };
        assert!(FilePredictor::from_records([rec(1.2)]).is_err());
        assert!(FilePredictor::from_records([rec(0.5), rec(0.6)]).is_err());
    }

    #[test]
    fn oracle_prefers_a_correct_format() {
        let rec = |id: &str, format, correct| OutcomeRecord {
            model: "m".into(),
            benchmark: "piqa".into(),
            id: id.into(),
            shots: 0,
            seed: None,
            answer_index: 0,
            outcome: FormatOutcome {
                format,
                chosen_index: 0,
                correct,
                distribution: vec![],
                gold_prob: 0.0,
                margin: 0.0,
            },
        };
        let sym = vec![
            rec("a", Format::Symbol, true),
            rec("b", Format::Symbol, false),
            rec("c", Format::Symbol, false),
        ];
        let clz = vec![
            rec("a", Format::Cloze, true),
            rec("b", Format::Cloze, true),
            rec("c", Format::Cloze, false),
        ];
        let o = OraclePredictor::from_outcomes(&sym, &clz);
        assert_eq!(o.predict(&inst("a"), None), Some(Format::Symbol));
        assert_eq!(o.predict(&inst("b"), None), Some(Format::Cloze));
        assert_eq!(o.predict(&inst("c"), None), Some(Format::Symbol));
        assert_eq!(o.predict(&inst("c"), Some(1)), None);
    }
}
