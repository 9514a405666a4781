//! Rule-based typology classifier for instances.
//!
//! Rules run in a fixed order and the first match wins:
//!
//! 1. `blank_completion`: the question contains a run of underscores.
//! 2. `sentence_continuation`: the question does not end with `?` or `:` and
//!    reads as a fragment: no terminal `.`/`!`, or its last word is a
//!    connective or article.
//! 3. `imperative`: the first word is a command verb.
//! 4. `anaphora_resolution`: ends with `:` and opens with a demonstrative.
//! 5. `which`: the word "which" appears.
//! 6. `multi_sentence`: every option is a capitalized, punctuated sentence.
//! 7. `short_answer`: everything else.
//!
//! The first two map to cloze, the rest to symbol.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::McqaInstance;
use crate::labeling::FormatLabel;
use crate::prompting::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Typology {
    Which,
    ShortAnswer,
    MultiSentence,
    Imperative,
    AnaphoraResolution,
    BlankCompletion,
    SentenceContinuation,
}

impl Typology {
    pub fn format(self) -> Format {
        match self {
            Typology::BlankCompletion | Typology::SentenceContinuation => Format::Cloze,
            _ => Format::Symbol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lexicon {
    pub command_verbs: Vec<String>,
    pub connectives: Vec<String>,
    pub demonstratives: Vec<String>,
}

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Self {
            command_verbs: owned(&[
                "solve",
                "find",
                "calculate",
                "select",
                "choose",
                "compute",
                "determine",
                "evaluate",
                "simplify",
                "identify",
                "estimate",
                "convert",
                "name",
                "pick",
                "give",
                "list",
                "compare",
                "explain",
                "describe",
            ]),
            connectives: owned(&[
                "and", "or", "but", "because", "so", "then", "while", "when", "as", "if", "that",
                "the", "a", "an", "to", "of", "with", "by", "for", "in", "on", "at", "from",
            ]),
            demonstratives: owned(&["this", "these", "that", "those"]),
        }
    }
}

impl Lexicon {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("bad lexicon {}: {e}", path.display()))
    }

    fn has(list: &[String], word: &str) -> bool {
        list.iter().any(|w| w.eq_ignore_ascii_case(word))
    }
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
}

fn trim_closers(text: &str) -> &str {
    text.trim_end()
        .trim_end_matches(['"', '\'', ')', ']', '”', '’'])
}

fn is_sentence(text: &str) -> bool {
    let t = text.trim();
    t.chars().next().is_some_and(char::is_uppercase) && trim_closers(t).ends_with(['.', '!', '?'])
}

fn is_fragment(question: &str, lexicon: &Lexicon) -> bool {
    let end = trim_closers(question);
    if end.ends_with(['?', ':']) {
        return false;
    }
    let unpunctuated = !end.ends_with(['.', '!']);
    let dangling = words(end)
        .last()
        .is_some_and(|w| Lexicon::has(&lexicon.connectives, w));
    unpunctuated || dangling
}

pub fn classify_typology(instance: &McqaInstance, lexicon: &Lexicon) -> Typology {
    let q = instance.question.trim();
    if q.contains('_') {
        return Typology::BlankCompletion;
    }
    if is_fragment(q, lexicon) {
        return Typology::SentenceContinuation;
    }
    let first = words(q).next().unwrap_or("");
    if Lexicon::has(&lexicon.command_verbs, first) {
        return Typology::Imperative;
    }
    if trim_closers(q).ends_with(':') && Lexicon::has(&lexicon.demonstratives, first) {
        return Typology::AnaphoraResolution;
    }
    if words(q).any(|w| w.eq_ignore_ascii_case("which")) {
        return Typology::Which;
    }
    if instance.options.iter().all(|o| is_sentence(o)) {
        return Typology::MultiSentence;
    }
    Typology::ShortAnswer
}

/// Symbol or cloze per the typology; never abstains.
pub fn heuristic_format(instance: &McqaInstance, lexicon: &Lexicon) -> FormatLabel {
    classify_typology(instance, lexicon).format().into()
}
