//! `mcqa` command-line interface.
//!
//! Settings resolve as flag, then `--config` TOML file, then built-in default.

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::corpus::{
    derive_splits, load_dataset, McqaInstance, Split, SplitSpec, Splits, DEFAULT_SEEDS,
};
use crate::evaluation::{
    read_outcomes, read_results, write_outcomes, write_results, ConstantPredictor, EvalRun,
    EvalSettings, Evaluator, FilePredictor, FormatPredictor, HeuristicPredictor, OraclePredictor,
    Report,
};
use crate::heuristics::{heuristic_format, Lexicon};
use crate::labeling::{
    export_labels, label_instance, merge_votes, read_label_records, write_label_records,
    FormatLabel, LabelRuleConfig, LabelSource, OutcomeRecord, DEFAULT_DELTA,
};
use crate::prompting::{Format, TemplateRegistry};
use crate::scoring::{
    DistributionBasis, HttpScorer, LoglikelihoodScorer, NormalizationMode, RetryPolicy,
    ScoringOptions, SyntheticScorer,
};

const DEFAULT_MODEL: &str = "model";
const DEFAULT_OUT: &str = "results";
const DEFAULT_TIMEOUT_SECS: u64 = 30;
const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Parser)]
#[command(
    name = "mcqa",
    version,
    about = "Symbol vs. cloze multiple-choice evaluation with per-instance format routing"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run symbol and/or cloze baselines
    Eval(EvalArgs),
    /// Derive per-instance format labels from paired outcomes or heuristics
    Label(LabelArgs),
    /// Merge three label files by majority vote
    Vote(VoteArgs),
    /// Run routed evaluation with a format predictor
    Route(RouteArgs),
    /// Aggregate result files into report tables
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ScorerKind {
    Synthetic,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Symbol,
    Cloze,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Heuristic,
    File,
    Oracle,
    Symbol,
    Cloze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
enum NormArg {
    None,
    PerToken,
    PerChar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BasisArg {
    Decision,
    Raw,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset file, or a directory of <benchmark>.jsonl files
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Benchmark to process; repeat for several [default: dataset file stem, or every file in the directory]
    #[arg(long = "benchmark", value_name = "NAME")]
    benchmarks: Vec<String>,
    /// Prompt template registry (JSON) [default: built-in]
    #[arg(long, value_name = "FILE")]
    templates: Option<PathBuf>,
    /// Seed for deriving train/validation splits when no labeled test split exists [default: 0]
    #[arg(long, value_name = "N")]
    split_seed: Option<u64>,
    /// Share of the original train split kept for training when deriving splits [default: 0.8]
    #[arg(long, value_name = "F")]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct ScorerArgs {
    /// Model tag recorded in outputs [default: model]
    #[arg(long, value_name = "TAG")]
    model: Option<String>,
    /// Log-likelihood backend [default: http]
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
    /// Scoring endpoint URL [default: $SCORER_ENDPOINT]
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Per-request timeout in seconds [default: 30]
    #[arg(long, value_name = "SECS")]
    timeout_secs: Option<u64>,
    /// Attempts per request, including the first [default: 4]
    #[arg(long, value_name = "N")]
    max_attempts: Option<u32>,
    /// Base of the log-probabilities the endpoint returns [default: e]
    #[arg(long, value_name = "BASE")]
    log_base: Option<f64>,
    /// Seed of the synthetic scorer [default: 0]
    #[arg(long, value_name = "N")]
    synthetic_seed: Option<u64>,
    /// Per-instance score profiles (JSONL) for the synthetic scorer
    #[arg(long, value_name = "FILE")]
    profiles: Option<PathBuf>,
    /// Maximum concurrent scoring requests [default: 4]
    #[arg(long, value_name = "N")]
    max_in_flight: Option<usize>,
    /// Score normalization for both formats [default: none for symbol, per_token for cloze]
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    /// Scores the option distribution is computed from [default: decision]
    #[arg(long, value_enum)]
    distribution: Option<BasisArg>,
}

#[derive(Debug, Args)]
struct ShotArgs {
    /// Number of demonstrations; repeat for a sweep [default: 0]
    #[arg(long = "shots", value_name = "K")]
    shots: Vec<usize>,
    /// Run a single demonstration seed instead of averaging over the seed set
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Seed set averaged over for few-shot runs [default: 308,713,777,1234,4649]
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Reject a --seed outside the seed set
    #[arg(long)]
    strict_seeds: bool,
    /// Split to evaluate [default: test]
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Partial-results file; finished instances are reused on rerun
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Output directory [default: results]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    shots: ShotArgs,
    /// Format(s) to evaluate
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Symbol-format outcome file; scored on the fly when omitted
    #[arg(
        long,
        value_name = "FILE",
        requires = "clz",
        conflicts_with = "heuristic"
    )]
    sym: Option<PathBuf>,
    /// Cloze-format outcome file; scored on the fly when omitted
    #[arg(
        long,
        value_name = "FILE",
        requires = "sym",
        conflicts_with = "heuristic"
    )]
    clz: Option<PathBuf>,
    /// Minimum margin gap when both formats are correct [default: 0.2]
    #[arg(long, value_name = "D")]
    delta: Option<f64>,
    /// Label by question typology instead of model outcomes
    #[arg(long)]
    heuristic: bool,
    /// Word lists (JSON) for the typology rules
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Split whose instances are labeled [default: train]
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Output label file (JSONL)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VoteArgs {
    /// Exactly three label files
    #[arg(long = "in", value_name = "FILE", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Output label file (JSONL)
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RouteArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    shots: ShotArgs,
    /// Source of per-instance formats
    #[arg(long, value_enum)]
    predictor: PredictorArg,
    /// Prediction file (JSONL) for --predictor file
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    /// Word lists (JSON) for --predictor heuristic
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Symbol outcome file for --predictor oracle; scored on the fly when omitted
    #[arg(long, value_name = "FILE", requires = "clz")]
    sym: Option<PathBuf>,
    /// Cloze outcome file for --predictor oracle; scored on the fly when omitted
    #[arg(long, value_name = "FILE", requires = "sym")]
    clz: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Result files, or directories searched for *.result.jsonl
    #[arg(long = "results", value_name = "PATH", num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    /// Output directory [default: results]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Values a `--config` file may set.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    data: Option<PathBuf>,
    benchmarks: Option<Vec<String>>,
    templates: Option<PathBuf>,
    split_seed: Option<u64>,
    train_fraction: Option<f64>,
    scorer: Option<ScorerKind>,
    endpoint: Option<String>,
    timeout_secs: Option<u64>,
    max_attempts: Option<u32>,
    log_base: Option<f64>,
    synthetic_seed: Option<u64>,
    profiles: Option<PathBuf>,
    max_in_flight: Option<usize>,
    norm: Option<NormArg>,
    distribution: Option<BasisArg>,
    shots: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    strict_seeds: Option<bool>,
    delta: Option<f64>,
    lexicon: Option<PathBuf>,
    out: Option<PathBuf>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

fn list_or<T: Clone>(flag: &[T], cfg: &Option<Vec<T>>, default: &[T]) -> Vec<T> {
    if !flag.is_empty() {
        flag.to_vec()
    } else {
        cfg.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// Parses `argv` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Label(a) => cmd_label(a, &cfg),
        Command::Vote(a) => cmd_vote(a),
        Command::Route(a) => cmd_route(a, &cfg),
        Command::Report(a) => cmd_report(a, &cfg),
    }
}

struct Corpus {
    templates: TemplateRegistry,
    /// (benchmark, splits) in command-line order.
    benchmarks: Vec<(String, Splits)>,
}

impl Corpus {
    fn load(args: &DataArgs, cfg: &FileConfig) -> Result<Self> {
        let templates = match args.templates.as_ref().or(cfg.templates.as_ref()) {
            Some(p) => TemplateRegistry::load(p)?,
            None => TemplateRegistry::default(),
        };
        let data = args
            .data
            .as_ref()
            .or(cfg.data.as_ref())
            .ok_or_else(|| anyhow!("--data is required"))?;
        let mut names = list_or(&args.benchmarks, &cfg.benchmarks, &[]);
        if names.is_empty() {
            names = default_benchmarks(data)?;
        }
        let fraction = args
            .train_fraction
            .or(cfg.train_fraction)
            .unwrap_or(DEFAULT_TRAIN_FRACTION);
        let split_seed = args.split_seed.or(cfg.split_seed).unwrap_or(0);
        let mut benchmarks = Vec::with_capacity(names.len());
        for name in names {
            let path = if data.is_dir() {
                data.join(format!("{name}.jsonl"))
            } else {
                data.clone()
            };
            let instances = load_dataset(&path, &name)
                .with_context(|| format!("loading {}", path.display()))?;
            let has_test = instances.iter().any(|i| i.split == Split::Test);
            let spec = SplitSpec::new(has_test, fraction, split_seed)?;
            let splits =
                derive_splits(&instances, &spec).with_context(|| format!("splitting {name}"))?;
            benchmarks.push((name, splits));
        }
        Ok(Self {
            templates,
            benchmarks,
        })
    }
}

fn default_benchmarks(data: &Path) -> Result<Vec<String>> {
    if data.is_dir() {
        let mut names: Vec<String> = fs::read_dir(data)
            .with_context(|| format!("cannot list {}", data.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        names.sort();
        if names.is_empty() {
            bail!("no .jsonl datasets in {}", data.display());
        }
        Ok(names)
    } else {
        let stem = data.file_stem().ok_or_else(|| {
            anyhow!(
                "cannot infer benchmark from {}; pass --benchmark",
                data.display()
            )
        })?;
        Ok(vec![stem.to_string_lossy().into_owned()])
    }
}

fn split_of(splits: &Splits, which: SplitArg) -> &[McqaInstance] {
    match which {
        SplitArg::Train => &splits.train,
        SplitArg::Validation => &splits.validation,
        SplitArg::Test => &splits.test,
    }
}

fn build_scorer(args: &ScorerArgs, cfg: &FileConfig) -> Result<Box<dyn LoglikelihoodScorer>> {
    match args.scorer.or(cfg.scorer).unwrap_or(ScorerKind::Http) {
        ScorerKind::Synthetic => {
            let mut s =
                SyntheticScorer::new(args.synthetic_seed.or(cfg.synthetic_seed).unwrap_or(0));
            if let Some(p) = args.profiles.as_ref().or(cfg.profiles.as_ref()) {
                s.load_profiles(p)?;
            }
            Ok(Box::new(s))
        }
        ScorerKind::Http => {
            let timeout = Duration::from_secs(
                args.timeout_secs
                    .or(cfg.timeout_secs)
                    .unwrap_or(DEFAULT_TIMEOUT_SECS),
            );
            let endpoint = args.endpoint.clone().or_else(|| cfg.endpoint.clone());
            let mut s = HttpScorer::from_env(endpoint, timeout)?;
            if let Some(n) = args.max_attempts.or(cfg.max_attempts) {
                s = s.with_retry(RetryPolicy {
                    max_attempts: n.max(1),
                    ..RetryPolicy::default()
                });
            }
            if let Some(b) = args.log_base.or(cfg.log_base) {
                if !(b > 0.0 && b != 1.0) {
                    bail!("--log-base must be positive and not 1 (got {b})");
                }
                s = s.with_log_base(b);
            }
            Ok(Box::new(s))
        }
    }
}

fn settings(args: &ScorerArgs, shots: Option<&ShotArgs>, cfg: &FileConfig) -> EvalSettings {
    let mut s = EvalSettings::new(
        args.model
            .clone()
            .or_else(|| cfg.model.clone())
            .unwrap_or(DEFAULT_MODEL.into()),
    );
    s.scoring = ScoringOptions {
        norm: args.norm.or(cfg.norm).map(|n| match n {
            NormArg::None => NormalizationMode::None,
            NormArg::PerToken => NormalizationMode::PerToken,
            NormArg::PerChar => NormalizationMode::PerChar,
        }),
        basis: match args.distribution.or(cfg.distribution) {
            Some(BasisArg::Raw) => DistributionBasis::Raw,
            _ => DistributionBasis::Decision,
        },
    };
    s.max_in_flight = args
        .max_in_flight
        .or(cfg.max_in_flight)
        .unwrap_or(DEFAULT_MAX_IN_FLIGHT);
    if let Some(sh) = shots {
        s.seeds = list_or(&sh.seeds, &cfg.seeds, &DEFAULT_SEEDS);
        s.strict_seeds = sh.strict_seeds || cfg.strict_seeds.unwrap_or(false);
    }
    s
}

fn out_dir(flag: &Option<PathBuf>, cfg: &FileConfig) -> Result<PathBuf> {
    let dir = flag
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| DEFAULT_OUT.into());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn file_tag(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `<model>.<benchmark>.<format>.k<shots>.{result,outcomes}.jsonl`.
fn save_run(dir: &Path, run: &EvalRun) -> Result<PathBuf> {
    let r = &run.result;
    let stem = format!(
        "{}.{}.{}.k{}",
        file_tag(&r.model),
        file_tag(&r.benchmark),
        r.format,
        r.shots
    );
    let result_path = dir.join(format!("{stem}.result.jsonl"));
    write_results(&result_path, std::slice::from_ref(r))?;
    write_outcomes(&dir.join(format!("{stem}.outcomes.jsonl")), &run.outcomes)?;
    Ok(result_path)
}

fn print_run(run: &EvalRun, path: &Path) {
    let r = &run.result;
    println!(
        "{} {} k={}: accuracy {:.1} (n={}) -> {}",
        r.benchmark,
        r.format,
        r.shots,
        r.accuracy,
        r.n,
        path.display()
    );
}

fn make_evaluator<'a>(
    scorer: &'a dyn LoglikelihoodScorer,
    templates: &'a TemplateRegistry,
    settings: EvalSettings,
    checkpoint: Option<&Path>,
) -> Result<Evaluator<'a>> {
    let ev = Evaluator::new(scorer, templates, settings);
    Ok(match checkpoint {
        Some(p) => ev.with_checkpoint(p)?,
        None => ev,
    })
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = Corpus::load(&a.data, cfg)?;
    let scorer = build_scorer(&a.scorer, cfg)?;
    let ev = make_evaluator(
        scorer.as_ref(),
        &corpus.templates,
        settings(&a.scorer, Some(&a.shots), cfg),
        a.shots.checkpoint.as_deref(),
    )?;
    let out = out_dir(&a.shots.out, cfg)?;
    let formats: &[Format] = match a.format {
        FormatArg::Symbol => &[Format::Symbol],
        FormatArg::Cloze => &[Format::Cloze],
        FormatArg::Both => &Format::ALL,
    };
    let split = a.shots.split.unwrap_or(SplitArg::Test);
    for (name, splits) in &corpus.benchmarks {
        for k in list_or(&a.shots.shots, &cfg.shots, &[0]) {
            for &format in formats {
                let run = ev
                    .run_baseline(
                        split_of(splits, split),
                        &splits.validation,
                        format,
                        k,
                        a.shots.seed,
                    )
                    .with_context(|| format!("{name} {format} k={k}"))?;
                print_run(&run, &save_run(&out, &run)?);
            }
        }
    }
    Ok(())
}

fn by_key(
    records: Vec<OutcomeRecord>,
    format: Format,
) -> Result<HashMap<(String, String), OutcomeRecord>> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if r.format() != format {
            bail!(
                "expected {format} outcomes, found a {} record for {}/{}",
                r.format(),
                r.benchmark,
                r.id
            );
        }
        let key = (r.benchmark.clone(), r.id.clone());
        if let Some(dup) = map.insert(key, r) {
            bail!(
                "{format} outcomes hold several records for {}/{}; label from a single-seed run",
                dup.benchmark,
                dup.id
            );
        }
    }
    Ok(map)
}

fn cmd_label(a: LabelArgs, cfg: &FileConfig) -> Result<()> {
    let corpus = Corpus::load(&a.data, cfg)?;
    let split = a.split.unwrap_or(SplitArg::Train);
    let mut instances: Vec<McqaInstance> = Vec::new();
    let mut labels: Vec<FormatLabel> = Vec::new();
    let source = if a.heuristic {
        let lexicon = match a.lexicon.as_ref().or(cfg.lexicon.as_ref()) {
            Some(p) => Lexicon::load(p).map_err(|e| anyhow!(e))?,
            None => Lexicon::default(),
        };
        for (_, splits) in &corpus.benchmarks {
            for inst in split_of(splits, split) {
                labels.push(heuristic_format(inst, &lexicon));
                instances.push(inst.clone());
            }
        }
        LabelSource::Heuristic
    } else {
        let rule = LabelRuleConfig::new(a.delta.or(cfg.delta).unwrap_or(DEFAULT_DELTA))?;
        let (sym, clz) = match (&a.sym, &a.clz) {
            (Some(s), Some(c)) => (read_outcomes(s)?, read_outcomes(c)?),
            _ => {
                let scorer = build_scorer(&a.scorer, cfg)?;
                let ev = make_evaluator(
                    scorer.as_ref(),
                    &corpus.templates,
                    settings(&a.scorer, None, cfg),
                    None,
                )?;
                let mut sym = Vec::new();
                let mut clz = Vec::new();
                for (_, splits) in &corpus.benchmarks {
                    let part = split_of(splits, split);
                    sym.extend(
                        ev.run_baseline(part, &splits.validation, Format::Symbol, 0, None)?
                            .outcomes,
                    );
                    clz.extend(
                        ev.run_baseline(part, &splits.validation, Format::Cloze, 0, None)?
                            .outcomes,
                    );
                }
                (sym, clz)
            }
        };
        let clz = by_key(clz, Format::Cloze)?;
        let mut seen = HashSet::new();
        let index: HashMap<(&str, &str), &McqaInstance> = corpus
            .benchmarks
            .iter()
            .flat_map(|(_, s)| split_of(s, split))
            .map(|i| ((i.benchmark.as_str(), i.id.as_str()), i))
            .collect();
        for s in &sym {
            if s.format() != Format::Symbol {
                bail!(
                    "expected symbol outcomes, found a {} record for {}/{}",
                    s.format(),
                    s.benchmark,
                    s.id
                );
            }
            if !seen.insert((s.benchmark.as_str(), s.id.as_str())) {
                bail!(
                    "symbol outcomes hold several records for {}/{}; label from a single-seed run",
                    s.benchmark,
                    s.id
                );
            }
            let c = clz
                .get(&(s.benchmark.clone(), s.id.clone()))
                .ok_or_else(|| anyhow!("no cloze outcome for {}/{}", s.benchmark, s.id))?;
            let inst = index
                .get(&(s.benchmark.as_str(), s.id.as_str()))
                .ok_or_else(|| {
                    anyhow!(
                        "{}/{} is not in the {:?} split of the dataset",
                        s.benchmark,
                        s.id,
                        split
                    )
                })?;
            labels.push(label_instance(s, c, &rule)?);
            instances.push((*inst).clone());
        }
        if clz.len() != sym.len() {
            bail!(
                "outcome files cover different instances ({} symbol, {} cloze)",
                sym.len(),
                clz.len()
            );
        }
        LabelSource::SelfLabeled
    };

    let summary = export_labels(&instances, &labels, source, &a.out)?;
    println!(
        "labels: {} written (symbol {}, cloze {}), {} abstained -> {}",
        summary.written,
        summary.symbol,
        summary.cloze,
        summary.abstained,
        a.out.display()
    );
    Ok(())
}

fn cmd_vote(a: VoteArgs) -> Result<()> {
    let files = a
        .inputs
        .iter()
        .map(|p| read_label_records(p))
        .collect::<Result<Vec<_>, _>>()?;
    let (merged, summary) = merge_votes(&files)?;
    write_label_records(&a.out, &merged)?;
    println!(
        "vote: {} instances, {} labeled, {} discarded -> {}",
        summary.instances,
        summary.written,
        summary.discarded,
        a.out.display()
    );
    Ok(())
}

fn cmd_route(a: RouteArgs, cfg: &FileConfig) -> Result<()> {
    if a.predictions.is_some() && a.predictor != PredictorArg::File {
        bail!("--predictions is only valid with --predictor file");
    }
    if a.sym.is_some() && a.predictor != PredictorArg::Oracle {
        bail!("--sym/--clz are only valid with --predictor oracle");
    }
    if a.lexicon.is_some() && a.predictor != PredictorArg::Heuristic {
        bail!("--lexicon is only valid with --predictor heuristic");
    }
    let corpus = Corpus::load(&a.data, cfg)?;
    let scorer = build_scorer(&a.scorer, cfg)?;
    let ev = make_evaluator(
        scorer.as_ref(),
        &corpus.templates,
        settings(&a.scorer, Some(&a.shots), cfg),
        a.shots.checkpoint.as_deref(),
    )?;
    let out = out_dir(&a.shots.out, cfg)?;
    let split = a.shots.split.unwrap_or(SplitArg::Test);
    let seed = a.shots.seed;

    let fixed: Option<Box<dyn FormatPredictor>> = match a.predictor {
        PredictorArg::Heuristic => {
            let lexicon = match a.lexicon.as_ref().or(cfg.lexicon.as_ref()) {
                Some(p) => Lexicon::load(p).map_err(|e| anyhow!(e))?,
                None => Lexicon::default(),
            };
            Some(Box::new(HeuristicPredictor { lexicon }))
        }
        PredictorArg::File => {
            let path = a
                .predictions
                .as_ref()
                .ok_or_else(|| anyhow!("--predictor file requires --predictions"))?;
            Some(Box::new(FilePredictor::load(path)?))
        }
        PredictorArg::Symbol => Some(Box::new(ConstantPredictor(Format::Symbol))),
        PredictorArg::Cloze => Some(Box::new(ConstantPredictor(Format::Cloze))),
        PredictorArg::Oracle => match (&a.sym, &a.clz) {
            (Some(s), Some(c)) => Some(Box::new(OraclePredictor::from_outcomes(
                &read_outcomes(s)?,
                &read_outcomes(c)?,
            ))),
            _ => None,
        },
    };

    for (name, splits) in &corpus.benchmarks {
        let part = split_of(splits, split);
        for k in list_or(&a.shots.shots, &cfg.shots, &[0]) {
            let oracle;
            let predictor: &dyn FormatPredictor = match &fixed {
                Some(p) => p.as_ref(),
                None => {
                    let sym = ev.run_baseline(part, &splits.validation, Format::Symbol, k, seed)?;
                    let clz = ev.run_baseline(part, &splits.validation, Format::Cloze, k, seed)?;
                    oracle = OraclePredictor::from_outcomes(&sym.outcomes, &clz.outcomes);
                    &oracle
                }
            };
            let run = ev
                .run_routed(part, &splits.validation, predictor, k, seed)
                .with_context(|| format!("{name} routed k={k}"))?;
            print_run(&run, &save_run(&out, &run)?);
        }
    }
    Ok(())
}

fn result_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".result.jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn cmd_report(a: ReportArgs, cfg: &FileConfig) -> Result<()> {
    let mut results = Vec::new();
    for f in result_files(&a.results)? {
        results.extend(read_results(&f)?);
    }
    let report = Report::build(&results)?;
    let files = report.write(&out_dir(&a.out, cfg)?)?;
    print!("{}", report.summary());
    println!("report -> {}", files.rows.display());
    Ok(())
}
