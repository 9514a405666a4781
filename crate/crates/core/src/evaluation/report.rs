//! Aggregated tables built from task results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{compute_delta, gain_vs_preferred, round_to, test_delta_significance};
use super::{write_jsonl, EvalError, EvalFormat, TaskResult};

/// One (model, benchmark, shots) line of `report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub benchmark: String,
    pub shots: usize,
    pub symbol_acc: f64,
    pub cloze_acc: f64,
    pub routed_acc: Option<f64>,
    pub delta: f64,
    pub gain: Option<f64>,
    pub n: usize,
}

/// Significance of the symbol–cloze gap across models for one benchmark and
/// shot count. Test fields are absent with fewer than two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStatRow {
    pub benchmark: String,
    pub shots: usize,
    pub n_models: usize,
    pub mean_delta: f64,
    pub p_value: Option<f64>,
    pub permutation_p: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub delta_stats: Vec<DeltaStatRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub rows: PathBuf,
    pub delta_stats: PathBuf,
    pub delta_csv: PathBuf,
    pub summary: PathBuf,
}

type GroupKey = (String, String, usize);

impl Report {
    /// Every (model, benchmark, shots) group needs both baselines; a routed
    /// result is optional.
    pub fn build(results: &[TaskResult]) -> Result<Self, EvalError> {
        if results.is_empty() {
            return Err(EvalError::NothingToReport);
        }
        let mut groups: BTreeMap<GroupKey, BTreeMap<EvalFormat, &TaskResult>> = BTreeMap::new();
        for r in results {
            let slot = groups
                .entry((r.model.clone(), r.benchmark.clone(), r.shots))
                .or_default();
            if slot.insert(r.format, r).is_some() {
                return Err(EvalError::Report(format!(
                    "duplicate {} result for {}/{} at {} shots",
                    r.format, r.model, r.benchmark, r.shots
                )));
            }
        }
        let mut rows = Vec::with_capacity(groups.len());
        for ((model, benchmark, shots), slot) in &groups {
            let need = |f: EvalFormat| {
                slot.get(&f).copied().ok_or_else(|| {
                    EvalError::Report(format!(
                        "missing {f} result for {model}/{benchmark} at {shots} shots"
                    ))
                })
            };
            let sym = need(EvalFormat::Symbol)?;
            let clz = need(EvalFormat::Cloze)?;
            let routed = slot.get(&EvalFormat::Routed);
            rows.push(ReportRow {
                model: model.clone(),
                benchmark: benchmark.clone(),
                shots: *shots,
                symbol_acc: sym.accuracy,
                cloze_acc: clz.accuracy,
                routed_acc: routed.map(|r| r.accuracy),
                delta: compute_delta(sym.accuracy, clz.accuracy),
                gain: routed
                    .map(|r| gain_vs_preferred(r.accuracy, sym.accuracy, clz.accuracy).gain),
                n: sym.n,
            });
        }

        let mut by_task: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
        for row in &rows {
            by_task
                .entry((row.benchmark.clone(), row.shots))
                .or_default()
                .push(row.delta);
        }
        let mut delta_stats = Vec::with_capacity(by_task.len());
        for ((benchmark, shots), deltas) in by_task {
            let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
            let sig = if deltas.len() >= 2 {
                Some(test_delta_significance(&deltas)?)
            } else {
                None
            };
            delta_stats.push(DeltaStatRow {
                benchmark,
                shots,
                n_models: deltas.len(),
                mean_delta,
                p_value: sig.map(|s| s.p_value),
                permutation_p: sig.map(|s| s.permutation_p),
                degenerate: sig.is_some_and(|s| s.degenerate),
            });
        }
        Ok(Self { rows, delta_stats })
    }

    /// Per-model Δ by shot count, for plotting.
    pub fn delta_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| EvalError::Report(format!("csv: {e}"));
        w.write_record(["model", "benchmark", "shots", "delta"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.model.as_str(),
                &r.benchmark,
                &r.shots.to_string(),
                &r.delta.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| EvalError::Report(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Fixed-width table with one decimal place.
    pub fn summary(&self) -> String {
        let pp = |x: f64| format!("{:.1}", round_to(x, 1));
        let signed = |x: f64| format!("{:+.1}", round_to(x, 1));
        let opt = |x: Option<f64>, f: &dyn Fn(f64) -> String| x.map_or("-".to_string(), f);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:<16} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "model", "benchmark", "shots", "symbol", "cloze", "delta", "routed", "gain"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:<16} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}",
                r.model,
                r.benchmark,
                r.shots,
                pp(r.symbol_acc),
                pp(r.cloze_acc),
                signed(r.delta),
                opt(r.routed_acc, &pp),
                opt(r.gain, &signed),
            );
        }
        if self.delta_stats.iter().any(|s| s.p_value.is_some()) {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>6} {:>10} {:>10} {:>10}",
                "benchmark", "shots", "models", "mean_delta", "t_test_p", "perm_p"
            );
            for s in self.delta_stats.iter().filter(|s| s.p_value.is_some()) {
                let p = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(
                    out,
                    "{:<16} {:>5} {:>6} {:>10} {:>10} {:>10}{}",
                    s.benchmark,
                    s.shots,
                    s.n_models,
                    signed(s.mean_delta),
                    p(s.p_value),
                    p(s.permutation_p),
                    if s.degenerate {
                        "  (zero variance)"
                    } else {
                        ""
                    }
                );
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<ReportFiles, EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let files = ReportFiles {
            rows: dir.join("report.jsonl"),
            delta_stats: dir.join("delta_stats.jsonl"),
            delta_csv: dir.join("fewshot_delta.csv"),
            summary: dir.join("summary.txt"),
        };
        write_jsonl(&files.rows, &self.rows)?;
        write_jsonl(&files.delta_stats, &self.delta_stats)?;
        fs::write(&files.delta_csv, self.delta_csv()?).map_err(io(&files.delta_csv))?;
        fs::write(&files.summary, self.summary()).map_err(io(&files.summary))?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(model: &str, bench: &str, format: EvalFormat, acc: f64) -> TaskResult {
        TaskResult {
            model: model.into(),
            benchmark: bench.into(),
            format,
            shots: 0,
            seeds: vec![],
            accuracy: acc,
            n: 100,
            per_instance: vec![],
        }
    }

    #[test]
    fn builds_rows_and_stats() {
        let results = vec![
            result("a", "arc_easy", EvalFormat::Symbol, 89.1),
            result("a", "arc_easy", EvalFormat::Cloze, 62.6),
            result("a", "arc_easy", EvalFormat::Routed, 90.0),
            result("b", "arc_easy", EvalFormat::Symbol, 70.0),
            result("b", "arc_easy", EvalFormat::Cloze, 60.0),
        ];
        let report = Report::build(&results).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(round_to(report.rows[0].delta, 1), 26.5);
        assert!((report.rows[0].gain.unwrap() - 0.9).abs() < 1e-9);
        assert_eq!(report.rows[1].gain, None);
        assert_eq!(report.delta_stats.len(), 1);
        assert_eq!(report.delta_stats[0].n_models, 2);
        assert!(report.delta_stats[0].p_value.is_some());

        let summary = report.summary();
        assert!(summary.contains("+26.5"));
        assert!(summary.contains("+0.9"));

        let csv = report.delta_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("model,benchmark,shots,delta"));
        assert!(lines.next().unwrap().starts_with("a,arc_easy,0,26.4"));

        let line = serde_json::to_string(&report.rows[1]).unwrap();
        assert_eq!(
            line,
            r#"{"model":"b","benchmark":"arc_easy","shots":0,"symbol_acc":70.0,"cloze_acc":60.0,"routed_acc":null,"delta":10.0,"gain":null,"n":100}"#
        );
    }

    #[test]
    fn empty_and_incomplete_inputs() {
        assert_eq!(
            Report::build(&[]).unwrap_err().to_string(),
            "nothing to report"
        );
        let only_symbol = vec![result("a", "piqa", EvalFormat::Symbol, 50.0)];
        assert!(Report::build(&only_symbol)
            .unwrap_err()
            .to_string()
            .contains("missing cloze"));
        let dup = vec![
            result("a", "piqa", EvalFormat::Symbol, 50.0),
            result("a", "piqa", EvalFormat::Symbol, 51.0),
        ];
        assert!(Report::build(&dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn writes_all_files() {
        let results = vec![
            result("x,y", "piqa", EvalFormat::Symbol, 60.3),
            result("x,y", "piqa", EvalFormat::Cloze, 78.0),
        ];
        let dir = tempfile::tempdir().unwrap();
        let files = Report::build(&results).unwrap().write(dir.path()).unwrap();
        let csv = fs::read_to_string(&files.delta_csv).unwrap();
        assert!(csv.contains("\"x,y\",piqa,0,"));
        assert!(fs::read_to_string(&files.summary)
            .unwrap()
            .contains("-17.7"));
        assert_eq!(fs::read_to_string(&files.rows).unwrap().lines().count(), 1);
    }
}
