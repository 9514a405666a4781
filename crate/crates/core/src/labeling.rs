//! Per-instance format labels derived from model behaviour, and majority
//! voting across three labelers.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::McqaInstance;
use crate::prompting::Format;
use crate::scoring::FormatOutcome;

pub const DEFAULT_DELTA: f64 = 0.2;
pub const VOTERS: usize = 3;
/// Slack on the margin-gap comparison so a gap equal to `delta` up to float
/// rounding still counts as reaching it.
pub const MARGIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatLabel {
    Symbol,
    Cloze,
    /// No label; the instance is left out of any training export.
    Abstain,
}

impl FormatLabel {
    pub fn format(self) -> Option<Format> {
        match self {
            FormatLabel::Symbol => Some(Format::Symbol),
            FormatLabel::Cloze => Some(Format::Cloze),
            FormatLabel::Abstain => None,
        }
    }
}

impl From<Format> for FormatLabel {
    fn from(f: Format) -> Self {
        match f {
            Format::Symbol => FormatLabel::Symbol,
            Format::Cloze => FormatLabel::Cloze,
        }
    }
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("margin threshold must lie in [0, 1] (got {0})")]
    InvalidDelta(f64),
    #[error("outcomes refer to different instances ({symbol:?} vs {cloze:?})")]
    MismatchedInstances { symbol: String, cloze: String },
    #[error("expected a {expected} outcome, got {found}")]
    WrongFormat { expected: Format, found: Format },
    #[error("exactly three votes required, got {0}")]
    WrongVoteCount(usize),
    #[error("exactly three label files required, got {0}")]
    WrongFileCount(usize),
    #[error("{instances} instances but {labels} labels")]
    LengthMismatch { instances: usize, labels: usize },
    #[error("conflicting records for {benchmark}/{id} across label files")]
    ConflictingRecords { benchmark: String, id: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed label record, {path} line {line}: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRuleConfig {
    pub delta: f64,
}

impl LabelRuleConfig {
    pub fn new(delta: f64) -> Result<Self, LabelError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(LabelError::InvalidDelta(delta));
        }
        Ok(Self { delta })
    }
}

impl Default for LabelRuleConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
        }
    }
}

/// Labeling rule over a symbol/cloze outcome pair.
///
/// Both wrong abstains. Exactly one right labels that format only if its gold
/// probability is strictly higher than the other format's. Both right compares
/// the top-two margins and needs a gap of at least `delta`.
pub fn label_outcomes(
    sym: &FormatOutcome,
    clz: &FormatOutcome,
    cfg: &LabelRuleConfig,
) -> Result<FormatLabel, LabelError> {
    if sym.format != Format::Symbol {
        return Err(LabelError::WrongFormat {
            expected: Format::Symbol,
            found: sym.format,
        });
    }
    if clz.format != Format::Cloze {
        return Err(LabelError::WrongFormat {
            expected: Format::Cloze,
            found: clz.format,
        });
    }
    let label = match (sym.correct, clz.correct) {
        (false, false) => FormatLabel::Abstain,
        (true, false) => {
            if sym.gold_prob > clz.gold_prob {
                FormatLabel::Symbol
            } else {
                FormatLabel::Abstain
            }
        }
        (false, true) => {
            if clz.gold_prob > sym.gold_prob {
                FormatLabel::Cloze
            } else {
                FormatLabel::Abstain
            }
        }
        (true, true) => {
            if sym.margin - clz.margin >= cfg.delta - MARGIN_TOLERANCE {
                FormatLabel::Symbol
            } else if clz.margin - sym.margin >= cfg.delta - MARGIN_TOLERANCE {
                FormatLabel::Cloze
            } else {
                FormatLabel::Abstain
            }
        }
    };
    Ok(label)
}

/// One scored instance under one format, as written to outcome files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub model: String,
    pub benchmark: String,
    pub id: String,
    pub shots: usize,
    pub seed: Option<u64>,
    pub answer_index: usize,
    pub outcome: FormatOutcome,
}

impl OutcomeRecord {
    pub fn format(&self) -> Format {
        self.outcome.format
    }
}

pub fn label_instance(
    sym: &OutcomeRecord,
    clz: &OutcomeRecord,
    cfg: &LabelRuleConfig,
) -> Result<FormatLabel, LabelError> {
    if sym.id != clz.id || sym.benchmark != clz.benchmark {
        return Err(LabelError::MismatchedInstances {
            symbol: format!("{}/{}", sym.benchmark, sym.id),
            cloze: format!("{}/{}", clz.benchmark, clz.id),
        });
    }
    label_outcomes(&sym.outcome, &clz.outcome, cfg)
}

/// Majority of the non-abstaining votes among exactly three; a tie or no
/// votes abstains.
pub fn majority_label(votes: &[FormatLabel]) -> Result<FormatLabel, LabelError> {
    if votes.len() != VOTERS {
        return Err(LabelError::WrongVoteCount(votes.len()));
    }
    let symbol = votes.iter().filter(|v| **v == FormatLabel::Symbol).count();
    let cloze = votes.iter().filter(|v| **v == FormatLabel::Cloze).count();
    Ok(match symbol.cmp(&cloze) {
        std::cmp::Ordering::Greater => FormatLabel::Symbol,
        std::cmp::Ordering::Less => FormatLabel::Cloze,
        std::cmp::Ordering::Equal => FormatLabel::Abstain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[serde(rename = "self")]
    SelfLabeled,
    Majority,
    Heuristic,
}

/// One training example for the format classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub benchmark: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub label: Format,
    pub source: LabelSource,
}

impl LabelRecord {
    pub fn new(instance: &McqaInstance, label: Format, source: LabelSource) -> Self {
        Self {
            id: instance.id.clone(),
            benchmark: instance.benchmark.clone(),
            question: instance.question.clone(),
            options: instance.options.clone(),
            answer_index: instance.answer_index,
            label,
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportSummary {
    pub written: usize,
    pub abstained: usize,
    pub symbol: usize,
    pub cloze: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabelError + '_ {
    move |source| LabelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_label_records(path: &Path, records: &[LabelRecord]) -> Result<(), LabelError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("label records serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes one record per non-abstaining instance. Abstentions are counted in
/// the summary but not written.
pub fn export_labels(
    instances: &[McqaInstance],
    labels: &[FormatLabel],
    source: LabelSource,
    path: &Path,
) -> Result<ExportSummary, LabelError> {
    if instances.len() != labels.len() {
        return Err(LabelError::LengthMismatch {
            instances: instances.len(),
            labels: labels.len(),
        });
    }
    let mut summary = ExportSummary::default();
    let mut records = Vec::new();
    for (inst, label) in instances.iter().zip(labels) {
        match label.format() {
            Some(format) => {
                match format {
                    Format::Symbol => summary.symbol += 1,
                    Format::Cloze => summary.cloze += 1,
                }
                records.push(LabelRecord::new(inst, format, source));
            }
            None => summary.abstained += 1,
        }
    }
    summary.written = records.len();
    if records.is_empty() {
        log::warn!("no non-abstaining labels; {} is empty", path.display());
    }
    write_label_records(path, &records)?;
    Ok(summary)
}

pub fn read_label_records(path: &Path) -> Result<Vec<LabelRecord>, LabelError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| LabelError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteSummary {
    pub instances: usize,
    pub written: usize,
    pub discarded: usize,
}

/// Merges three label files by majority vote. An instance absent from a file
/// counts as an abstention from that voter. Output is ordered by
/// (benchmark, id).
pub fn merge_votes(
    files: &[Vec<LabelRecord>],
) -> Result<(Vec<LabelRecord>, VoteSummary), LabelError> {
    if files.len() != VOTERS {
        return Err(LabelError::WrongFileCount(files.len()));
    }
    let mut table: BTreeMap<(String, String), (LabelRecord, [FormatLabel; VOTERS])> =
        BTreeMap::new();
    for (voter, records) in files.iter().enumerate() {
        for rec in records {
            let key = (rec.benchmark.clone(), rec.id.clone());
            let entry = table
                .entry(key)
                .or_insert_with(|| (rec.clone(), [FormatLabel::Abstain; VOTERS]));
            if entry.0.question != rec.question
                || entry.0.options != rec.options
                || entry.0.answer_index != rec.answer_index
            {
                return Err(LabelError::ConflictingRecords {
                    benchmark: rec.benchmark.clone(),
                    id: rec.id.clone(),
                });
            }
            entry.1[voter] = rec.label.into();
        }
    }
    let mut summary = VoteSummary {
        instances: table.len(),
        ..VoteSummary::default()
    };
    let mut merged = Vec::new();
    for (_, (mut rec, votes)) in table {
        match majority_label(&votes)?.format() {
            Some(label) => {
                rec.label = label;
                rec.source = LabelSource::Majority;
                merged.push(rec);
            }
            None => summary.discarded += 1,
        }
    }
    summary.written = merged.len();
    Ok((merged, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn outcome(format: Format, correct: bool, gold_prob: f64, margin: f64) -> FormatOutcome {
        FormatOutcome {
            format,
            chosen_index: 0,
            correct,
            distribution: vec![],
            gold_prob,
            margin,
        }
    }

    fn label(a_sym: bool, a_clz: bool, p: (f64, f64), d: (f64, f64), delta: f64) -> FormatLabel {
        label_outcomes(
            &outcome(Format::Symbol, a_sym, p.0, d.0),
            &outcome(Format::Cloze, a_clz, p.1, d.1),
            &LabelRuleConfig::new(delta).unwrap(),
        )
        .unwrap()
    }

    use FormatLabel::{Abstain, Cloze, Symbol};

    #[test]
    fn worked_cases() {
        assert_eq!(label(false, false, (0.9, 0.9), (0.9, 0.0), 0.2), Abstain);
        assert_eq!(label(true, false, (0.7, 0.3), (0.0, 0.0), 0.2), Symbol);
        assert_eq!(label(true, false, (0.3, 0.7), (0.0, 0.0), 0.2), Abstain);
        assert_eq!(label(false, true, (0.3, 0.7), (0.0, 0.0), 0.2), Cloze);
        assert_eq!(label(true, true, (0.0, 0.0), (0.5, 0.2), 0.2), Symbol);
        assert_eq!(label(true, true, (0.0, 0.0), (0.2, 0.5), 0.2), Cloze);
        assert_eq!(label(true, true, (0.0, 0.0), (0.3, 0.25), 0.2), Abstain);
    }

    #[test]
    fn equal_gold_probability_abstains() {
        assert_eq!(label(true, false, (0.5, 0.5), (0.0, 0.0), 0.2), Abstain);
        assert_eq!(label(false, true, (0.5, 0.5), (0.0, 0.0), 0.2), Abstain);
    }

    #[test]
    fn gap_equal_to_delta_survives_rounding() {
        // 0.25 - 0.05 evaluates to 0.19999999999999998.
        assert_eq!(label(true, true, (0.0, 0.0), (0.25, 0.05), 0.2), Symbol);
        assert_eq!(label(true, true, (0.0, 0.0), (0.05, 0.25), 0.2), Cloze);
        assert_eq!(label(true, true, (0.0, 0.0), (0.24, 0.05), 0.2), Abstain);
    }

    #[test]
    fn zero_delta_resolves_equal_margins_to_symbol() {
        // Both comparisons use >=, and the symbol branch is checked first.
        assert_eq!(label(true, true, (0.0, 0.0), (0.4, 0.4), 0.0), Symbol);
        assert_eq!(label(true, true, (0.0, 0.0), (0.41, 0.4), 0.0), Symbol);
        assert_eq!(label(true, true, (0.0, 0.0), (0.4, 0.41), 0.0), Cloze);
    }

    #[test]
    fn rejects_bad_config_and_inputs() {
        assert!(LabelRuleConfig::new(1.5).is_err());
        assert!(LabelRuleConfig::new(-0.1).is_err());
        let a = outcome(Format::Cloze, true, 0.5, 0.5);
        assert!(matches!(
            label_outcomes(&a, &a, &LabelRuleConfig::default()),
            Err(LabelError::WrongFormat { .. })
        ));
        let rec = |id: &str, f| OutcomeRecord {
            model: "m".into(),
            benchmark: "b".into(),
            id: id.into(),
            shots: 0,
            seed: None,
            answer_index: 0,
            outcome: outcome(f, true, 0.5, 0.5),
        };
        assert!(matches!(
            label_instance(
                &rec("a", Format::Symbol),
                &rec("b", Format::Cloze),
                &LabelRuleConfig::default()
            ),
            Err(LabelError::MismatchedInstances { .. })
        ));
        assert_eq!(
            label_instance(
                &rec("a", Format::Symbol),
                &rec("a", Format::Cloze),
                &LabelRuleConfig::default()
            )
            .unwrap(),
            Abstain
        );
    }

    #[test]
    fn majority_cases() {
        assert_eq!(majority_label(&[Symbol, Symbol, Cloze]).unwrap(), Symbol);
        assert_eq!(majority_label(&[Symbol, Cloze, Abstain]).unwrap(), Abstain);
        assert_eq!(
            majority_label(&[Abstain, Abstain, Abstain]).unwrap(),
            Abstain
        );
        assert_eq!(majority_label(&[Cloze, Abstain, Abstain]).unwrap(), Cloze);
        assert!(matches!(
            majority_label(&[Cloze, Cloze]),
            Err(LabelError::WrongVoteCount(2))
        ));
    }

    fn inst(id: &str) -> McqaInstance {
        McqaInstance {
            id: id.into(),
            benchmark: "piqa".into(),
            split: Split::Train,
            question: format!("{id}?"),
            options: vec!["a".into(), "b".into()],
            answer_index: 1,
            context: None,
        }
    }

    #[test]
    fn export_counts_abstentions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let instances: Vec<_> = (0..10).map(|i| inst(&format!("q{i}"))).collect();
        let mut labels = vec![Symbol; 10];
        labels[1] = Abstain;
        labels[4] = Abstain;
        labels[7] = Abstain;
        labels[9] = Cloze;
        let summary = export_labels(&instances, &labels, LabelSource::SelfLabeled, &path).unwrap();
        assert_eq!(
            summary,
            ExportSummary {
                written: 7,
                abstained: 3,
                symbol: 6,
                cloze: 1
            }
        );
        let back = read_label_records(&path).unwrap();
        assert_eq!(back.len(), 7);
        assert_eq!(back[6].label, Format::Cloze);
        let line = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(
            line,
            r#"{"id":"q0","benchmark":"piqa","question":"q0?","options":["a","b"],"answer_index":1,"label":"symbol","source":"self"}"#
        );
    }

    #[test]
    fn export_empty_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let summary =
            export_labels(&[inst("a")], &[Abstain], LabelSource::SelfLabeled, &path).unwrap();
        assert_eq!(summary.written, 0);
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        assert!(matches!(
            export_labels(&[inst("a")], &[], LabelSource::SelfLabeled, &path),
            Err(LabelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn merge_votes_with_missing_entries() {
        let r = |id: &str, f| LabelRecord::new(&inst(id), f, LabelSource::SelfLabeled);
        let a = vec![r("x", Format::Symbol), r("y", Format::Cloze)];
        let b = vec![r("x", Format::Symbol), r("y", Format::Symbol)];
        let c = vec![r("z", Format::Cloze)];
        let (merged, summary) = merge_votes(&[a, b, c]).unwrap();
        assert_eq!(
            summary,
            VoteSummary {
                instances: 3,
                written: 2,
                discarded: 1
            }
        );
        assert_eq!(merged[0].id, "x");
        assert_eq!(merged[0].label, Format::Symbol);
        assert_eq!(merged[0].source, LabelSource::Majority);
        assert_eq!(merged[1].id, "z");
        assert!(matches!(
            merge_votes(&[vec![], vec![]]),
            Err(LabelError::WrongFileCount(2))
        ));
    }

    fn any_label() -> impl Strategy<Value = FormatLabel> {
        prop_oneof![Just(Symbol), Just(Cloze), Just(Abstain)]
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant(a in any_label(), b in any_label(), c in any_label()) {
            let base = majority_label(&[a, b, c]).unwrap();
            for perm in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                prop_assert_eq!(majority_label(&perm).unwrap(), base);
            }
        }

        #[test]
        fn raising_symbol_margin_never_yields_cloze(d_sym in 0.0f64..1.0, bump in 0.0f64..1.0, d_clz in 0.0f64..1.0, delta in 0.0f64..1.0) {
            let before = label(true, true, (0.0, 0.0), (d_sym, d_clz), delta);
            let after = label(true, true, (0.0, 0.0), ((d_sym + bump).min(1.0), d_clz), delta);
            if before == Symbol {
                prop_assert_eq!(after, Symbol);
            }
            prop_assert_ne!((before, after), (Symbol, Cloze));
            if before != Cloze {
                prop_assert_ne!(after, Cloze);
            }
        }
    }
}
