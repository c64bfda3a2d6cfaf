//! Command-line driver. Every subcommand is a thin adapter over `noft_core`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use noft_core::classify::{self, FeatureMode, PipelineConfig, ThresholdPolicy};
use noft_core::corpus::{
    self, make_synthetic_corpus, Dataset, Difficulty, LabelKind, SplitSpec, SynthConfig, SynthProfile,
};
use noft_core::cot_parse::{annotate_dataset, AnnotationConfig};
use noft_core::forest::{self, ForestModel, HyperParams, SearchSpace, Target, ValidationSpec};
use noft_core::route::{
    build_backend, run_comparison, tpe_optimize, BackendClient, BackendSpec, EvaluatorConfig, HttpSpec,
    MockProfile, RoutingPolicy, ScoreMode, ThresholdEvaluator, Tier, TierBackends, TpeConfig,
};
use noft_core::score::{measure, rouge_l_text, ConstantSampler, PowerSampler, ReplaySampler, Tokenization, VirtualClock};
use noft_core::stats::{
    self, bayes_group_means, welch_t_test, BayesConfig, GroupSummary, PowerResult,
};
use noft_core::vectorize::{self, TokenizerConfig};
use serde::Serialize;

use crate::config::GatewayConfig;
use crate::service::{self, Gateway};

#[derive(Debug, Parser)]
#[command(name = "noft", version, about = "Thought-count prompt routing: training, evaluation and serving")]
pub struct Cli {
    /// Log filter, e.g. `info` or `noft_core=debug`.
    #[arg(long, global = true, env = "NOFT_LOG", default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, check and split JSONL prompt datasets.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Label every prompt with its mean thought count.
    Annotate(AnnotateArgs),
    /// Fit the TF-IDF thought-count regressor.
    TrainRegressor(TrainRegressorArgs),
    /// Fit a calibrated adversarial or difficulty classifier.
    TrainClassifier(TrainClassifierArgs),
    /// Random hyperparameter search without saving a model.
    Tune(TuneArgs),
    #[command(subcommand)]
    Stats(StatsCmd),
    #[command(subcommand)]
    Score(ScoreCmd),
    /// Search routing thresholds on an annotated dataset.
    Optimize(OptimizeArgs),
    /// Compare single-tier baselines against a routing policy.
    Compare(CompareArgs),
    /// Route one prompt through a gateway config and print the decision.
    Route(RouteArgs),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    Synth {
        #[arg(long)]
        profile: SynthProfile,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cohen's d between adjacent labelled classes.
        #[arg(long, default_value_t = 1.0)]
        effect_size: f64,
        #[arg(long)]
        out: PathBuf,
    },
    Validate {
        path: PathBuf,
    },
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stratify: Option<LabelKind>,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// `mock`, an OpenAI-compatible endpoint URL, or a backend spec JSON file.
    #[arg(long, default_value = "mock")]
    pub backend: String,
    /// Model name sent to a URL backend.
    #[arg(long, default_value = "default")]
    pub model: String,
    #[arg(long, default_value_t = 2)]
    pub repeats: usize,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long, default_value_t = 1)]
    pub min_doc_freq: usize,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long)]
    pub smooth_idf: bool,
}

impl VocabArgs {
    fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            min_doc_freq: self.min_doc_freq,
            max_features: self.max_features,
            smooth_idf: self.smooth_idf,
            ..TokenizerConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainRegressorArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random-search trials; 0 trains once with the flags below.
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    /// JSON search space file.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub n_trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub vocab: VocabArgs,
    /// Write the training report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub task: LabelKind,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub noft_model: Option<PathBuf>,
    #[arg(long, default_value = "both")]
    pub features: FeatureMode,
    /// `fixed:<p>`, `min-fpr-at-tpr:<r>` or `youden`.
    #[arg(long)]
    pub threshold_policy: Option<ThresholdPolicy>,
    #[arg(long, default_value_t = 8)]
    pub trials: usize,
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub smote_k: usize,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the evaluation and pipeline report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TuneTask {
    Noft,
    Adversarial,
    Difficulty,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub task: TuneTask,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GroupArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub group_by: Option<LabelKind>,
    /// Use predicted rather than annotated thought counts.
    #[arg(long)]
    pub noft_model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StatsCmd {
    /// Pairwise Welch t-tests between groups.
    Ttest {
        #[command(flatten)]
        groups: GroupArgs,
        #[arg(long)]
        json: bool,
    },
    /// Two-sample t-test power and required sample size.
    Power {
        #[command(flatten)]
        groups: GroupArgs,
        #[arg(long)]
        d: Option<f64>,
        #[arg(long, default_value_t = 20.0)]
        n: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
        #[arg(long)]
        json: bool,
    },
    /// Posterior group means and differences against the last group.
    Bayes {
        #[command(flatten)]
        groups: GroupArgs,
        /// `name:mean:sd:n,...` summaries instead of a dataset.
        #[arg(long)]
        summaries: Option<String>,
        #[arg(long, default_value_t = 2000)]
        draws: usize,
        #[arg(long, default_value_t = 0.9)]
        target_accept: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScoreCmd {
    /// ROUGE-L between two text files.
    Rouge {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        chars: bool,
    },
    /// Energy of a `[start, end]` window.
    Energy {
        #[arg(long, conflicts_with = "replay")]
        power_w: Option<f64>,
        /// `<seconds> <watts>` sample file.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long)]
        end: f64,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Route by this regressor's predictions instead of annotations.
    #[arg(long)]
    pub noft_model: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    #[arg(long, default_value = "per-prompt", value_parser = parse_score_mode)]
    pub score_mode: ScoreMode,
    /// Score only the text after the last `Answer:` marker.
    #[arg(long)]
    pub answer_only: bool,
}

fn parse_score_mode(s: &str) -> Result<ScoreMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown score mode {s:?}"))
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Policy JSON whose weights and tiers are kept.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 10)]
    pub startup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write every trial as JSON lines.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub prompt: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub request_timeout_s: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub per_tier_concurrency: Option<usize>,
    /// Write the bound address here once listening.
    #[arg(long)]
    pub port_file: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus(c) => corpus_cmd(c),
        Command::Annotate(a) => annotate(a),
        Command::TrainRegressor(a) => train_regressor(a),
        Command::TrainClassifier(a) => train_classifier(a),
        Command::Tune(a) => tune(a),
        Command::Stats(c) => stats_cmd(c),
        Command::Score(c) => score_cmd(c),
        Command::Optimize(a) => optimize(a),
        Command::Compare(a) => compare(a),
        Command::Route(a) => route(a),
        Command::Serve(a) => serve(a),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_space(path: Option<&Path>) -> Result<SearchSpace> {
    path.map_or_else(|| Ok(SearchSpace::default()), read_json)
}

fn load_regressor(path: &Path) -> Result<ForestModel> {
    let model = forest::load(path).with_context(|| format!("loading {}", path.display()))?;
    if model.kind != forest::ModelKind::Regressor {
        bail!("{} is a {}, expected a regressor", path.display(), model.kind);
    }
    Ok(model)
}

fn corpus_cmd(c: CorpusCmd) -> Result<()> {
    match c {
        CorpusCmd::Synth {
            profile,
            n,
            seed,
            effect_size,
            out,
        } => {
            let ds = make_synthetic_corpus(&SynthConfig::new(profile, n, seed).with_effect_size(effect_size))?;
            corpus::write_jsonl(&ds, &out)?;
            print_json(&serde_json::json!({"records": ds.len(), "out": out}))
        }
        CorpusCmd::Validate { path } => {
            let ds = corpus::load_jsonl(&path)?;
            ds.validate()?;
            let count = |f: fn(&corpus::PromptRecord) -> bool| ds.iter().filter(|r| f(r)).count();
            print_json(&serde_json::json!({
                "records": ds.len(),
                "with_reference_answer": count(|r| r.reference_answer.is_some()),
                "with_difficulty": count(|r| r.difficulty.is_some()),
                "with_adversarial": count(|r| r.adversarial.is_some()),
                "with_thought_count": count(|r| r.thought_count.is_some()),
            }))
        }
        CorpusCmd::Split {
            input,
            train_fraction,
            seed,
            stratify,
            train_out,
            test_out,
        } => {
            let ds = corpus::load_jsonl(&input)?;
            let mut spec = SplitSpec::new(train_fraction, seed);
            if let Some(on) = stratify {
                spec = spec.stratified(on);
            }
            let (train, test) = corpus::split(&ds, &spec)?;
            corpus::write_jsonl(&train, &train_out)?;
            corpus::write_jsonl(&test, &test_out)?;
            print_json(&serde_json::json!({"train": train.len(), "test": test.len()}))
        }
    }
}

fn annotation_backend(a: &AnnotateArgs) -> Result<Box<dyn BackendClient>> {
    let spec = if a.backend == "mock" {
        let mut p = MockProfile::new("annotator", 0.0);
        p.seed = a.seed;
        BackendSpec::Mock(p)
    } else if a.backend.starts_with("http://") || a.backend.starts_with("https://") {
        BackendSpec::Http(HttpSpec {
            endpoint: a.backend.clone(),
            model: a.model.clone(),
            timeout_s: 60.0,
            temperature: 0.6,
            max_tokens: None,
            api_key: std::env::var("NOFT_API_KEY").ok(),
            power_w: None,
        })
    } else {
        read_json(Path::new(&a.backend))?
    };
    Ok(build_backend(&spec)?)
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let ds = corpus::load_jsonl(&a.dataset)?;
    let backend = annotation_backend(&a)?;
    let cfg = AnnotationConfig {
        repeats: a.repeats,
        max_in_flight: a.max_in_flight,
        ..AnnotationConfig::default()
    };
    let (out, report) = annotate_dataset(&ds, backend.as_ref(), &cfg)?;
    corpus::write_jsonl(&out, &a.out)?;
    print_json(&report)
}

fn thought_counts(ds: &Dataset) -> Result<Vec<f64>> {
    ds.iter()
        .map(|r| r.thought_count.with_context(|| format!("record {} has no thought_count; run annotate first", r.id)))
        .collect()
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

#[derive(Serialize)]
struct RegressorReport {
    n_train: usize,
    n_test: usize,
    vocabulary_size: usize,
    hyperparams: HyperParams,
    mse_test: f64,
    target_variance_test: f64,
    search: Option<forest::TrainReport>,
}

fn train_regressor(a: TrainRegressorArgs) -> Result<()> {
    let ds = corpus::load_jsonl(&a.input)?;
    let (train, test) = corpus::split(&ds, &SplitSpec::new(1.0 - a.test_fraction, a.seed))?;
    let voc = vectorize::fit(&train.prompts(), &a.vocab.tokenizer())?;
    let x_train = vectorize::transform_all(&voc, &train.prompts());
    let y_train = thought_counts(&train)?;
    let x_test = vectorize::transform_all(&voc, &test.prompts());
    let y_test = thought_counts(&test)?;

    let (hp, search) = if a.trials > 0 {
        let space = load_space(a.space.as_deref())?;
        let (hp, report) = forest::random_search(
            &x_train,
            Target::Regression(&y_train),
            &space,
            a.trials,
            a.seed,
            &ValidationSpec::Holdout {
                fraction: 0.2,
                seed: a.seed,
            },
        )?;
        (hp, Some(report))
    } else {
        let hp = HyperParams {
            n_trees: a.n_trees,
            max_depth: a.max_depth,
            ..HyperParams::default()
        };
        (hp, None)
    };
    let model = forest::fit_regressor(&x_train, &y_train, &hp, a.seed)?.with_vocabulary(voc.clone());
    let report = RegressorReport {
        n_train: train.len(),
        n_test: test.len(),
        vocabulary_size: voc.len(),
        mse_test: forest::mse(&model, &x_test, &y_test)?,
        target_variance_test: variance(&y_test),
        hyperparams: hp,
        search,
    };
    forest::save(&model, &a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    print_json(&report)
}

fn train_classifier(a: TrainClassifierArgs) -> Result<()> {
    let ds = corpus::load_jsonl(&a.input)?;
    let noft = a.noft_model.as_deref().map(load_regressor).transpose()?;
    let (train, test) = corpus::split(&ds, &SplitSpec::new(1.0 - a.test_fraction, a.seed).stratified(a.task))?;
    let mut cfg = PipelineConfig::new(a.task);
    cfg.features = a.features;
    cfg.trials = a.trials;
    cfg.seed = a.seed;
    cfg.smote.k_neighbors = a.smote_k;
    cfg.smote.seed = a.seed;
    cfg.search_space = load_space(a.space.as_deref())?;
    if let Some(p) = a.threshold_policy {
        cfg.threshold_policy = p;
    }
    let (clf, pipeline) = classify::train_pipeline(&train, &cfg, noft.as_ref())?;
    let eval = classify::evaluate(&clf, &test, noft.as_ref())?;
    clf.save(&a.out)?;
    println!("{}", eval.render());
    println!("decision threshold {:.4}", pipeline.decision_threshold);
    if let Some(p) = &a.report {
        write_json(p, &serde_json::json!({"evaluation": eval, "pipeline": pipeline}))?;
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let ds = corpus::load_jsonl(&a.input)?;
    let space = load_space(a.space.as_deref())?;
    let voc = vectorize::fit(&ds.prompts(), &TokenizerConfig::default())?;
    let x = vectorize::transform_all(&voc, &ds.prompts());
    let validation = ValidationSpec::Holdout {
        fraction: a.holdout,
        seed: a.seed,
    };
    let (hp, report) = match a.task {
        TuneTask::Noft => {
            let y = thought_counts(&ds)?;
            forest::random_search(&x, Target::Regression(&y), &space, a.trials, a.seed, &validation)?
        }
        TuneTask::Adversarial | TuneTask::Difficulty => {
            let kind = if a.task == TuneTask::Adversarial {
                LabelKind::Adversarial
            } else {
                LabelKind::Difficulty
            };
            let labels: Vec<String> = ds
                .iter()
                .map(|r| r.label(kind).with_context(|| format!("record {} has no {} label", r.id, kind.as_str())))
                .collect::<Result<_>>()?;
            let (classes, idx) = forest::index_labels(&labels);
            let target = Target::Classification {
                labels: &idx,
                classes: &classes,
            };
            forest::random_search(&x, target, &space, a.trials, a.seed, &validation)?
        }
    };
    let out = serde_json::json!({"best": hp, "report": report});
    match &a.out {
        Some(p) => write_json(p, &out),
        None => print_json(&out),
    }
}

/// Named groups of per-record values, in a fixed label order.
fn grouped_values(g: &GroupArgs) -> Result<Vec<(String, Vec<f64>)>> {
    let (Some(input), Some(by)) = (&g.input, g.group_by) else {
        bail!("--in and --group-by are required");
    };
    let ds = corpus::load_jsonl(input)?;
    let noft = g.noft_model.as_deref().map(load_regressor).transpose()?;
    let order: Vec<String> = match by {
        LabelKind::Difficulty => Difficulty::ALL.iter().map(|d| d.as_str().to_string()).collect(),
        LabelKind::Adversarial => vec!["benign".into(), "adversarial".into()],
    };
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &ds {
        let Some(label) = r.label(by) else { continue };
        let v = match &noft {
            Some(m) => m.predict_text(&r.prompt)?,
            None => r.thought_count.with_context(|| format!("record {} has no thought_count", r.id))?,
        };
        groups.entry(label).or_default().push(v);
    }
    Ok(order
        .into_iter()
        .filter_map(|name| groups.remove(&name).map(|v| (name, v)))
        .collect())
}

#[derive(Serialize)]
struct TtestRow {
    a: String,
    b: String,
    mean_a: f64,
    mean_b: f64,
    t: f64,
    df: f64,
    p: f64,
    cohens_d: f64,
}

fn parse_summaries(s: &str) -> Result<Vec<(String, GroupSummary)>> {
    s.split(',')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            let [name, mean, sd, n] = f.as_slice() else {
                bail!("summary {part:?} is not name:mean:sd:n");
            };
            Ok((name.to_string(), GroupSummary::new(mean.parse()?, sd.parse()?, n.parse()?)?))
        })
        .collect()
}

fn stats_cmd(c: StatsCmd) -> Result<()> {
    match c {
        StatsCmd::Ttest { groups, json } => {
            let g = grouped_values(&groups)?;
            let mut rows = Vec::new();
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    let r = welch_t_test(&g[i].1, &g[j].1)?;
                    let (sa, sb) = (GroupSummary::from_sample(&g[i].1)?, GroupSummary::from_sample(&g[j].1)?);
                    rows.push(TtestRow {
                        a: g[i].0.clone(),
                        b: g[j].0.clone(),
                        mean_a: sa.mean,
                        mean_b: sb.mean,
                        t: r.t,
                        df: r.df,
                        p: r.p,
                        cohens_d: stats::cohens_d(&sa, &sb)?,
                    });
                }
            }
            if json {
                return print_json(&rows);
            }
            println!("{:<24}{:>10}{:>10}{:>10}{:>12}{:>10}", "Comparison", "t", "df", "p", "Cohen's d", "");
            for r in &rows {
                println!(
                    "{:<24}{:>10.4}{:>10.2}{:>10.4}{:>12.4}",
                    format!("{} vs {}", r.a, r.b),
                    r.t,
                    r.df,
                    r.p,
                    r.cohens_d
                );
            }
            Ok(())
        }
        StatsCmd::Power {
            groups,
            d,
            n,
            alpha,
            target,
            json,
        } => {
            let mut results = Vec::new();
            match d {
                Some(d) => results.push(("d".to_string(), PowerResult::compute(d, n, alpha, target)?)),
                None => {
                    let g = grouped_values(&groups)?;
                    for i in 0..g.len() {
                        for j in i + 1..g.len() {
                            let (sa, sb) = (GroupSummary::from_sample(&g[i].1)?, GroupSummary::from_sample(&g[j].1)?);
                            let d = stats::cohens_d(&sa, &sb)?.abs();
                            let n_eff = sa.n.min(sb.n) as f64;
                            results.push((
                                format!("{} vs {}", g[i].0, g[j].0),
                                PowerResult::compute(d, n_eff, alpha, target)?,
                            ));
                        }
                    }
                }
            }
            if json {
                let v: Vec<_> = results
                    .iter()
                    .map(|(name, r)| serde_json::json!({"comparison": name, "result": r}))
                    .collect();
                return print_json(&v);
            }
            println!(
                "{:<24}{:>10}{:>10}{:>10}{:>12}{:>14}",
                "Comparison", "d", "n/group", "alpha", "power", "required n"
            );
            for (name, r) in &results {
                println!(
                    "{:<24}{:>10.4}{:>10.1}{:>10.3}{:>12.4}{:>14.3}",
                    name, r.effect_size_d, r.n_per_group, r.alpha, r.achieved_power, r.required_n_per_group
                );
            }
            Ok(())
        }
        StatsCmd::Bayes {
            groups,
            summaries,
            draws,
            target_accept,
            seed,
            json,
        } => {
            let summaries = match summaries {
                Some(s) => parse_summaries(&s)?,
                None => grouped_values(&groups)?
                    .into_iter()
                    .map(|(name, v)| Ok((name, GroupSummary::from_sample(&v)?)))
                    .collect::<Result<_>>()?,
            };
            let cfg = BayesConfig {
                draws,
                target_accept,
                seed,
                ..BayesConfig::default()
            };
            let result = bayes_group_means(&summaries, &cfg)?;
            if json {
                print_json(&result)
            } else {
                print!("{}", result.render());
                Ok(())
            }
        }
    }
}

fn score_cmd(c: ScoreCmd) -> Result<()> {
    match c {
        ScoreCmd::Rouge {
            target,
            generated,
            chars,
        } => {
            let t = std::fs::read_to_string(&target).with_context(|| format!("reading {}", target.display()))?;
            let g = std::fs::read_to_string(&generated).with_context(|| format!("reading {}", generated.display()))?;
            let mode = if chars { Tokenization::Chars } else { Tokenization::Words };
            print_json(&rouge_l_text(&t, &g, mode))
        }
        ScoreCmd::Energy {
            power_w,
            replay,
            start,
            end,
        } => {
            if !(end >= start) {
                bail!("--end {end} is before --start {start}");
            }
            let sampler: Box<dyn PowerSampler> = match (power_w, replay) {
                (Some(w), None) => Box::new(ConstantSampler(w)),
                (None, Some(p)) => Box::new(ReplaySampler::load(&p)?),
                _ => bail!("give exactly one of --power-w or --replay"),
            };
            let clock = VirtualClock::new();
            clock.advance(start);
            let ((), rec) = measure(&clock, sampler.as_ref(), || clock.advance(end - start));
            print_json(&rec)
        }
    }
}

fn tier_backends(policy: &RoutingPolicy) -> Result<TierBackends> {
    let mut built: BTreeMap<Tier, Arc<dyn BackendClient>> = BTreeMap::new();
    for t in Tier::ALL {
        let spec = policy.tiers.get(&t).with_context(|| format!("policy has no backend for tier {t}"))?;
        built.insert(t, Arc::from(build_backend(spec)?));
    }
    Ok(TierBackends {
        small: built[&Tier::Small].clone(),
        medium: built[&Tier::Medium].clone(),
        large: built[&Tier::Large].clone(),
    })
}

/// Loads the evaluation dataset, replacing annotations with predictions when
/// a regressor is given.
fn eval_dataset(e: &EvalArgs) -> Result<Dataset> {
    let mut ds = corpus::load_jsonl(&e.input)?;
    if let Some(p) = &e.noft_model {
        let model = load_regressor(p)?;
        for r in &mut ds.records {
            r.thought_count = Some(model.predict_text(&r.prompt)?);
        }
    }
    Ok(ds)
}

fn evaluator_config(e: &EvalArgs) -> EvaluatorConfig {
    EvaluatorConfig {
        max_in_flight: e.max_in_flight,
        score_mode: e.score_mode,
        answer_only: e.answer_only,
        ..EvaluatorConfig::default()
    }
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let template: RoutingPolicy = read_json(&a.policy)?;
    let ds = eval_dataset(&a.eval)?;
    let evaluator = ThresholdEvaluator::new(&ds, tier_backends(&template)?, evaluator_config(&a.eval))?;
    let cfg = TpeConfig {
        n_trials: a.trials,
        n_startup_random: a.startup.min(a.trials),
        seed: a.seed,
        ..TpeConfig::default()
    };
    let (policy, records) = tpe_optimize(&evaluator, &cfg, &template)?;
    write_json(&a.out, &policy)?;
    if let Some(p) = &a.history {
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    let best = records
        .iter()
        .find(|r| r.t1 == policy.t1 && r.t2 == policy.t2)
        .context("best trial missing from history")?;
    print_json(&serde_json::json!({"t1": policy.t1, "t2": policy.t2, "best": best, "trials": records.len()}))
}

fn compare(a: CompareArgs) -> Result<()> {
    let policy: RoutingPolicy = read_json(&a.policy)?;
    let ds = eval_dataset(&a.eval)?;
    let evaluator = ThresholdEvaluator::new(&ds, tier_backends(&policy)?, evaluator_config(&a.eval))?;
    let report = run_comparison(&evaluator, &policy)?;
    if a.json {
        print_json(&report)
    } else {
        print!("{}", report.render());
        Ok(())
    }
}

fn route(a: RouteArgs) -> Result<()> {
    let cfg = GatewayConfig::load(&a.config)?;
    let gw = Gateway::from_config(&cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    let decision = rt.block_on(gw.route(&a.prompt))?;
    print_json(&decision)
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = GatewayConfig::load(&a.config)?;
    if let Some(v) = a.listen {
        cfg.listen = v;
    }
    if let Some(v) = a.request_timeout_s {
        cfg.request_timeout_s = v;
    }
    if let Some(v) = a.max_in_flight {
        cfg.max_in_flight = v;
    }
    if let Some(v) = a.per_tier_concurrency {
        cfg.per_tier_concurrency = v;
    }
    cfg.validate()?;
    let gw = Arc::new(Gateway::from_config(&cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    let port_file = a.port_file;
    rt.block_on(service::serve(
        gw,
        &cfg.listen,
        move |addr| match &port_file {
            Some(p) => std::fs::write(p, addr.to_string()),
            None => Ok(()),
        },
        shutdown_signal(),
    ))?;
    Ok(())
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(e) => {
                log::warn!("cannot listen for SIGTERM: {e}");
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    log::info!("shutting down");
}
