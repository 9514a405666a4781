//! Prompt and candidate rendering for the symbol and cloze formats.
//!
//! A symbol prompt lists the lettered options and is scored on the letters
//! (`" A"`, `" B"`, ...). A cloze prompt is the bare question and is scored on
//! the option texts themselves. Both renderers keep `candidates[i]` aligned
//! with `options[i]`, so the gold candidate index is always `answer_index`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::McqaInstance;

const DEFAULT_TEMPLATES: &str = include_str!("../templates/benchmarks.json");

/// Separator appended after every demonstration block.
pub const DEMO_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Symbol,
    Cloze,
}

impl Format {
    pub const ALL: [Format; 2] = [Format::Symbol, Format::Cloze];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Symbol => "symbol",
            Format::Cloze => "cloze",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClozeMode {
    #[default]
    Plain,
    /// Question holds one `_` placeholder; the prompt stops before it and the
    /// remainder of the sentence is appended to each candidate.
    BlankSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptionLabelStyle {
    #[default]
    #[serde(rename = "A.")]
    LetterDot,
    #[serde(rename = "A)")]
    LetterParen,
}

impl OptionLabelStyle {
    fn label(self, letter: char) -> String {
        match self {
            OptionLabelStyle::LetterDot => format!("{letter}. "),
            OptionLabelStyle::LetterParen => format!("{letter}) "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub benchmark: String,
    pub question_prefix: String,
    /// Prefix for the context paragraph of benchmarks that have one.
    #[serde(default)]
    pub context_prefix: Option<String>,
    pub answer_suffix: String,
    #[serde(default)]
    pub cloze_mode: ClozeMode,
    #[serde(default)]
    pub option_label_style: OptionLabelStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRendering {
    pub format: Format,
    pub prompt: String,
    pub candidates: Vec<String>,
    pub demo_count: usize,
}

impl PromptRendering {
    /// Human-readable form used by the golden fixtures.
    pub fn display(&self) -> String {
        let quoted: Vec<String> = self.candidates.iter().map(|c| format!("\"{c}\"")).collect();
        let list = match self.format {
            Format::Symbol => quoted.join(", "),
            Format::Cloze => quoted.join(",\n "),
        };
        format!(
            "Prompt:\n\"{}\"\n\nCandidates for Scoring:\n[{}]\n",
            self.prompt, list
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("{0} options exceed the 26-letter label alphabet")]
    TooManyOptions(usize),
    #[error("blank_split needs exactly one blank marker, found {found} in {id:?}")]
    BlankMarkers { id: String, found: usize },
    #[error("no prompt template registered for benchmark {0:?}")]
    UnknownBenchmark(String),
    #[error("failed to read template registry {path}: {message}")]
    Registry { path: PathBuf, message: String },
}

fn letter(i: usize) -> Result<char, PromptError> {
    if i >= 26 {
        return Err(PromptError::TooManyOptions(i + 1));
    }
    Ok((b'A' + i as u8) as char)
}

fn symbol_block(instance: &McqaInstance, template: &PromptTemplate) -> Result<String, PromptError> {
    if instance.options.len() > 26 {
        return Err(PromptError::TooManyOptions(instance.options.len()));
    }
    let mut out = String::new();
    if let Some(ctx) = &instance.context {
        out.push_str(template.context_prefix.as_deref().unwrap_or(""));
        out.push_str(ctx);
        out.push('\n');
    }
    out.push_str(&template.question_prefix);
    out.push_str(&instance.question);
    for (i, option) in instance.options.iter().enumerate() {
        out.push('\n');
        out.push_str(&template.option_label_style.label(letter(i)?));
        out.push_str(option);
    }
    out.push_str(&template.answer_suffix);
    Ok(out)
}

/// Renders the symbol format. Demonstrations are full symbol prompts followed
/// by the gold letter and a blank line.
pub fn render_symbol(
    instance: &McqaInstance,
    template: &PromptTemplate,
    demos: &[McqaInstance],
) -> Result<PromptRendering, PromptError> {
    let mut prompt = String::new();
    for demo in demos {
        prompt.push_str(&symbol_block(demo, template)?);
        prompt.push(' ');
        prompt.push(letter(demo.answer_index)?);
        prompt.push_str(DEMO_SEPARATOR);
    }
    prompt.push_str(&symbol_block(instance, template)?);
    let candidates = (0..instance.options.len())
        .map(|i| letter(i).map(|l| format!(" {l}")))
        .collect::<Result<_, _>>()?;
    Ok(PromptRendering {
        format: Format::Symbol,
        prompt,
        candidates,
        demo_count: demos.len(),
    })
}

/// Splits `text` around its single run of underscores.
fn split_blank<'a>(id: &str, text: &'a str) -> Result<(&'a str, &'a str), PromptError> {
    let runs = text
        .split(|c| c != '_')
        .filter(|piece| !piece.is_empty())
        .count();
    if runs != 1 {
        return Err(PromptError::BlankMarkers {
            id: id.to_string(),
            found: runs,
        });
    }
    let start = text.find('_').expect("one run present");
    let end = start
        + text[start..]
            .find(|c| c != '_')
            .unwrap_or(text.len() - start);
    Ok((&text[..start], &text[end..]))
}

fn cloze_parts(
    instance: &McqaInstance,
    template: &PromptTemplate,
) -> Result<(String, Vec<String>), PromptError> {
    let mut prompt = String::new();
    if let Some(ctx) = &instance.context {
        prompt.push_str(ctx);
        prompt.push('\n');
    }
    let candidates = match template.cloze_mode {
        ClozeMode::Plain => {
            prompt.push_str(&instance.question);
            instance
                .options
                .iter()
                .map(|o| format!(" {}", o.trim_start()))
                .collect()
        }
        ClozeMode::BlankSplit => {
            let (head, tail) = split_blank(&instance.id, &instance.question)?;
            prompt.push_str(head.trim_end());
            instance
                .options
                .iter()
                .map(|o| format!(" {}{}", o.trim_start(), tail))
                .collect()
        }
    };
    Ok((prompt, candidates))
}

/// Renders the cloze format. Demonstrations are cloze prompts followed by
/// their gold continuation and a blank line.
pub fn render_cloze(
    instance: &McqaInstance,
    template: &PromptTemplate,
    demos: &[McqaInstance],
) -> Result<PromptRendering, PromptError> {
    let mut prompt = String::new();
    for demo in demos {
        let (demo_prompt, demo_candidates) = cloze_parts(demo, template)?;
        prompt.push_str(&demo_prompt);
        prompt.push_str(&demo_candidates[demo.answer_index]);
        prompt.push_str(DEMO_SEPARATOR);
    }
    let (target, candidates) = cloze_parts(instance, template)?;
    prompt.push_str(&target);
    Ok(PromptRendering {
        format: Format::Cloze,
        prompt,
        candidates,
        demo_count: demos.len(),
    })
}

pub fn render(
    format: Format,
    instance: &McqaInstance,
    template: &PromptTemplate,
    demos: &[McqaInstance],
) -> Result<PromptRendering, PromptError> {
    match format {
        Format::Symbol => render_symbol(instance, template, demos),
        Format::Cloze => render_cloze(instance, template, demos),
    }
}

/// Benchmark id → template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let list: Vec<PromptTemplate> = serde_json::from_str(text)?;
        Ok(Self::from_templates(list))
    }

    pub fn from_templates(list: impl IntoIterator<Item = PromptTemplate>) -> Self {
        Self {
            templates: list.into_iter().map(|t| (t.benchmark.clone(), t)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let registry_err = |message: String| PromptError::Registry {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| registry_err(e.to_string()))?;
        Self::from_json(&text).map_err(|e| registry_err(e.to_string()))
    }

    pub fn get(&self, benchmark: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(benchmark)
            .ok_or_else(|| PromptError::UnknownBenchmark(benchmark.to_string()))
    }

    pub fn benchmarks(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled template registry is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn instance(benchmark: &str, question: &str, options: &[&str], answer: usize) -> McqaInstance {
        McqaInstance {
            id: "x".into(),
            benchmark: benchmark.into(),
            split: Split::Test,
            question: question.into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            answer_index: answer,
            context: None,
        }
    }

    fn renewable() -> McqaInstance {
        instance(
            "mmlu",
            "Which option best describes a renewable energy source?",
            &["Coal", "Oil", "Solar", "Natural Gas"],
            2,
        )
    }

    #[test]
    fn mmlu_symbol_layout() {
        let reg = TemplateRegistry::default();
        let r = render_symbol(&renewable(), reg.get("mmlu").unwrap(), &[]).unwrap();
        assert_eq!(
            r.prompt,
            "Question: Which option best describes a renewable energy source?\nA. Coal\nB. Oil\nC. Solar\nD. Natural Gas\nAnswer:"
        );
        assert_eq!(r.candidates, vec![" A", " B", " C", " D"]);
        assert_eq!(r.demo_count, 0);
    }

    #[test]
    fn hellaswag_uses_context_and_completion() {
        let reg = TemplateRegistry::default();
        let inst = instance("hellaswag", "He", &["a.", "b.", "c.", "d."], 0);
        let r = render_symbol(&inst, reg.get("hellaswag").unwrap(), &[]).unwrap();
        assert!(r.prompt.starts_with("Context: He\n"));
        assert!(r.prompt.ends_with("\nCompletion:"));
    }

    #[test]
    fn five_options_get_letter_e() {
        let reg = TemplateRegistry::default();
        let inst = instance("commonsense_qa", "Q?", &["a", "b", "c", "d", "e"], 4);
        let r = render_symbol(&inst, reg.get("commonsense_qa").unwrap(), &[]).unwrap();
        assert_eq!(r.candidates.len(), 5);
        assert_eq!(r.candidates[4], " E");
    }

    #[test]
    fn too_many_options_rejected() {
        let reg = TemplateRegistry::default();
        let opts: Vec<String> = (0..27).map(|i| format!("o{i}")).collect();
        let refs: Vec<&str> = opts.iter().map(String::as_str).collect();
        let inst = instance("mmlu", "Q?", &refs, 0);
        assert_eq!(
            render_symbol(&inst, reg.get("mmlu").unwrap(), &[]).unwrap_err(),
            PromptError::TooManyOptions(27)
        );
    }

    #[test]
    fn mmlu_cloze_is_bare_question() {
        let reg = TemplateRegistry::default();
        let r = render_cloze(&renewable(), reg.get("mmlu").unwrap(), &[]).unwrap();
        assert_eq!(
            r.prompt,
            "Which option best describes a renewable energy source?"
        );
        assert_eq!(
            r.candidates,
            vec![" Coal", " Oil", " Solar", " Natural Gas"]
        );
    }

    #[test]
    fn winogrande_blank_split() {
        let reg = TemplateRegistry::default();
        let inst = instance(
            "winogrande",
            "The spray cleaned the windows better than it cleaned the walls because the _ were non-porous.",
            &["windows", "walls"],
            1,
        );
        let r = render_cloze(&inst, reg.get("winogrande").unwrap(), &[]).unwrap();
        assert_eq!(
            r.prompt,
            "The spray cleaned the windows better than it cleaned the walls because the"
        );
        assert_eq!(
            r.candidates,
            vec![" windows were non-porous.", " walls were non-porous."]
        );
    }

    #[test]
    fn blank_split_needs_exactly_one_marker() {
        let reg = TemplateRegistry::default();
        let tpl = reg.get("winogrande").unwrap();
        let none = instance("winogrande", "No blank here.", &["a", "b"], 0);
        assert!(matches!(
            render_cloze(&none, tpl, &[]).unwrap_err(),
            PromptError::BlankMarkers { found: 0, .. }
        ));
        let two = instance("winogrande", "The _ and the _ met.", &["a", "b"], 0);
        assert!(matches!(
            render_cloze(&two, tpl, &[]).unwrap_err(),
            PromptError::BlankMarkers { found: 2, .. }
        ));
        let run = instance("winogrande", "A ____ here.", &["a", "b"], 0);
        assert_eq!(
            render_cloze(&run, tpl, &[]).unwrap().candidates[0],
            " a here."
        );
    }

    #[test]
    fn social_iqa_context_lines() {
        let reg = TemplateRegistry::default();
        let mut inst = instance("social_iqa", "How?", &["x", "y", "z"], 0);
        inst.context = Some("Ctx.".into());
        let tpl = reg.get("social_iqa").unwrap();
        let s = render_symbol(&inst, tpl, &[]).unwrap();
        assert_eq!(
            s.prompt,
            "Context: Ctx.\nQuestion: How?\nA. x\nB. y\nC. z\nAnswer:"
        );
        let c = render_cloze(&inst, tpl, &[]).unwrap();
        assert_eq!(c.prompt, "Ctx.\nHow?");
    }

    #[test]
    fn demonstration_blocks() {
        let reg = TemplateRegistry::default();
        let tpl = reg.get("mmlu").unwrap();
        let demo = instance("mmlu", "D?", &["p", "q"], 1);
        let target = instance("mmlu", "T?", &["r", "s"], 0);
        let s = render_symbol(&target, tpl, &[demo.clone(), demo.clone()]).unwrap();
        let block = "Question: D?\nA. p\nB. q\nAnswer: B\n\n";
        assert_eq!(
            s.prompt,
            format!("{block}{block}Question: T?\nA. r\nB. s\nAnswer:")
        );
        assert_eq!(s.demo_count, 2);
        let c = render_cloze(&target, tpl, &[demo]).unwrap();
        assert_eq!(c.prompt, "D? q\n\nT?");
    }

    #[test]
    fn registry_errors() {
        let reg = TemplateRegistry::default();
        assert_eq!(reg.benchmarks().count(), 9);
        assert!(matches!(
            reg.get("nope"),
            Err(PromptError::UnknownBenchmark(_))
        ));
        assert!(matches!(
            TemplateRegistry::load(Path::new("/nonexistent.json")),
            Err(PromptError::Registry { .. })
        ));
    }

    proptest! {
        #[test]
        fn candidates_align_with_options(
            opts in prop::collection::vec("[a-zA-Z ]{1,12}", 2..6),
            question in "[A-Za-z ?]{1,40}",
            answer in 0usize..5,
        ) {
            let reg = TemplateRegistry::default();
            let answer = answer % opts.len();
            let refs: Vec<&str> = opts.iter().map(String::as_str).collect();
            let inst = instance("arc_easy", &question, &refs, answer);
            let tpl = reg.get("arc_easy").unwrap();
            let s = render_symbol(&inst, tpl, &[]).unwrap();
            let c = render_cloze(&inst, tpl, &[]).unwrap();
            prop_assert_eq!(s.candidates.len(), opts.len());
            prop_assert_eq!(c.candidates.len(), opts.len());
            for (i, cand) in s.candidates.iter().enumerate() {
                prop_assert_eq!(cand.clone(), format!(" {}", (b'A' + i as u8) as char));
            }
            for (cand, opt) in c.candidates.iter().zip(&opts) {
                prop_assert!(cand.starts_with(' ') && !cand[1..].starts_with(' '));
                prop_assert_eq!(cand.trim_start(), opt.trim_start());
            }
            prop_assert_eq!(render_cloze(&inst, tpl, &[]).unwrap(), c);
        }
    }
}
