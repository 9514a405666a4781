//! Append-only partial-results file used to resume interrupted runs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::EvalError;
use crate::labeling::OutcomeRecord;
use crate::prompting::Format;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CheckpointKey {
    pub model: String,
    pub benchmark: String,
    pub format: Format,
    pub shots: usize,
    pub seed: Option<u64>,
    pub id: String,
}

impl CheckpointKey {
    pub fn of(record: &OutcomeRecord) -> Self {
        Self {
            model: record.model.clone(),
            benchmark: record.benchmark.clone(),
            format: record.format(),
            shots: record.shots,
            seed: record.seed,
            id: record.id.clone(),
        }
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    done: HashMap<CheckpointKey, OutcomeRecord>,
    writer: Mutex<BufWriter<File>>,
}

impl Checkpoint {
    /// Opens (creating if needed) a partial-results file and loads every
    /// complete record in it. A torn final line from an interrupted write is
    /// dropped.
    pub fn open(path: &Path) -> Result<Self, EvalError> {
        let io = |source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut done = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            let lines: Vec<&str> = text.lines().collect();
            let unterminated = !text.is_empty() && !text.ends_with('\n');
            let mut torn = false;
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<OutcomeRecord>(line) {
                    Ok(rec) => {
                        done.insert(CheckpointKey::of(&rec), rec);
                    }
                    Err(_) if unterminated && i + 1 == lines.len() => torn = true,
                    Err(e) => {
                        return Err(EvalError::Malformed {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            if torn {
                log::warn!("dropping torn final line in {}", path.display());
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                fs::write(path, &text[..keep]).map_err(io)?;
            } else if unterminated {
                fs::write(path, format!("{text}\n")).map_err(io)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            done,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn get(&self, key: &CheckpointKey) -> Option<&OutcomeRecord> {
        self.done.get(key)
    }

    pub fn append(&self, record: &OutcomeRecord) -> Result<(), EvalError> {
        let line = serde_json::to_string(record).expect("outcome records serialize");
        let mut w = self.writer.lock().expect("checkpoint writer poisoned");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|source| EvalError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::FormatOutcome;

    fn rec(id: &str) -> OutcomeRecord {
        OutcomeRecord {
            model: "m".into(),
            benchmark: "b".into(),
            id: id.into(),
            shots: 0,
            seed: None,
            answer_index: 0,
            outcome: FormatOutcome {
                format: Format::Cloze,
                chosen_index: 0,
                correct: true,
                distribution: vec![0.1 + 0.2, 0.7 - 0.000_000_000_000_000_1],
                gold_prob: 0.1 + 0.2,
                margin: 1.0 / 3.0,
            },
        }
    }

    #[test]
    fn reload_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.jsonl");
        {
            let cp = Checkpoint::open(&path).unwrap();
            cp.append(&rec("a")).unwrap();
            cp.append(&rec("b")).unwrap();
        }
        let cp = Checkpoint::open(&path).unwrap();
        assert_eq!(cp.len(), 2);
        assert_eq!(cp.get(&CheckpointKey::of(&rec("a"))), Some(&rec("a")));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.jsonl");
        let good = serde_json::to_string(&rec("a")).unwrap();
        fs::write(&path, format!("{good}\n{{\"model\":\"m\",\"bench")).unwrap();
        let cp = Checkpoint::open(&path).unwrap();
        assert_eq!(cp.len(), 1);
        cp.append(&rec("b")).unwrap();
        drop(cp);
        assert_eq!(Checkpoint::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.jsonl");
        let good = serde_json::to_string(&rec("a")).unwrap();
        fs::write(&path, format!("garbage\n{good}\n")).unwrap();
        assert!(matches!(
            Checkpoint::open(&path),
            Err(EvalError::Malformed { line: 1, .. })
        ));
    }
}
