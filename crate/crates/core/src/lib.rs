//! Multiple-choice evaluation harness comparing symbol-style and cloze-style
//! scoring, with per-instance format labels and routed evaluation.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod heuristics;
pub mod labeling;
pub mod prompting;
pub mod scoring;

pub use corpus::{McqaInstance, Split};
pub use prompting::Format;
