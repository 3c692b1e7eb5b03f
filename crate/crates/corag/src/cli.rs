//! The `corag` command pipeline.
//!
//! Stages compose through files with stable names under `--out`:
//!
//! ```text
//! gen-synthetic -> passages.jsonl, qa.jsonl
//! index         -> index.bin
//! categorize    -> taxonomy.jsonl
//! stores        -> stores.json, splits.json
//! train         -> report.json, predictions.jsonl
//! eval          -> scores.json
//! report        -> comparison table on stdout
//! game          -> equilibria.json
//! ```
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/divergence error.

use crate::benchmark::{
    build_composition, build_variant, partition_qa, BenchmarkError, BenchmarkSpec,
    CompositionSelector, QaPartition, StoreAssignment, StoreFractions, Variant,
};
use crate::corpus::{self, Corpus, CorpusError};
use crate::federation::{self, FederationError, Mode, RoundConfig, RunReport, Session};
use crate::incentives::{
    enumerate_base, enumerate_modified, game_from_taxonomy, modified_utility, ActionProfile,
    GameCoefficients, GameError, GameSpec,
};
use crate::index::{Bm25Index, Bm25Params, IndexError};
use crate::metrics;
use crate::model::ModelError;
use crate::synth::{self, SynthError, SynthSpec};
use crate::taxonomy::{categorize_all, RankWindow, StoreTaxonomy, TaxonomyError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

/// Errors split by exit code: validation problems (1) are detectable before
/// any heavy compute; runtime problems (2) happen mid-run.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TaxonomyError> for CliError {
    fn from(e: TaxonomyError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<BenchmarkError> for CliError {
    fn from(e: BenchmarkError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GameError> for CliError {
    fn from(e: GameError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "corag",
    version,
    about = "Desk-scale collaborative retrieval-augmented QA simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic passage corpus and QA set.
    GenSynthetic(GenSyntheticArgs),
    /// Build a BM25 index cache over a passage corpus.
    Index(IndexArgs),
    /// Categorize passages per QA pair (relevant / hard-negative).
    Categorize(CategorizeArgs),
    /// Build store manifests for a variant or a custom composition.
    Stores(StoresArgs),
    /// Train under a federated, local, or centralized regime.
    Train(TrainArgs),
    /// Score a predictions file with EM/F1.
    Eval(EvalArgs),
    /// Render a comparison table over run reports.
    Report(ReportArgs),
    /// Participation-game analysis.
    #[command(subcommand)]
    Game(GameCommand),
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Number of passages to generate.
    #[arg(long)]
    pub passages: usize,
    /// Number of QA pairs to generate.
    #[arg(long)]
    pub qa: usize,
    /// Client count recorded on the generated QA pairs.
    #[arg(long, default_value_t = 8)]
    pub clients: usize,
    #[arg(long)]
    pub seed: u64,
    /// Answer-free lookalike passages per QA pair.
    #[arg(long, default_value_t = 5)]
    pub distractors: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// passages.jsonl to index.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CategorizeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// Reuse a prebuilt index cache instead of rebuilding.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Relevance window: top ranks eligible as relevant.
    #[arg(long, default_value_t = 5)]
    pub top_r: usize,
    /// Hard negatives extend down to this rank.
    #[arg(long, default_value_t = 50)]
    pub hn_hi: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StoresArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// taxonomy.jsonl from `corag categorize`.
    #[arg(long)]
    pub taxonomy: PathBuf,
    /// Store variant: rel | irr | rel1 | split.
    #[arg(long, conflicts_with = "composition")]
    pub variant: Option<String>,
    /// Custom composition: only-relevant | hn+irr | rel+hn | rel+irr |
    /// top1-rel+irr | pct:<fraction>.
    #[arg(long)]
    pub composition: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub clients: usize,
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub dev_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    pub split_frac: f64,
    #[arg(long, default_value_t = 0.025)]
    pub test_frac: f64,
    /// Sample the rel store's corpus fraction away from relevant passages.
    #[arg(long, default_value_t = false)]
    pub rel_sample_excludes_relevant: bool,
    /// Build test stores without the test pairs' hard negatives.
    #[arg(long, default_value_t = false)]
    pub test_without_hard_negatives: bool,
    /// Hard negatives carried per test QA (highest-ranked first).
    #[arg(long, default_value_t = 10)]
    pub test_hard_negatives: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// stores.json from `corag stores`.
    #[arg(long)]
    pub stores: PathBuf,
    /// splits.json from `corag stores`.
    #[arg(long)]
    pub splits: PathBuf,
    /// Training mode: collab | local | central.
    #[arg(long)]
    pub mode: String,
    /// Flat JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub max_answer_len: Option<usize>,
    /// Local mode: evaluate every this many epochs.
    #[arg(long)]
    pub eval_interval: Option<usize>,
    /// Local mode: total epoch budget.
    #[arg(long)]
    pub local_epochs: Option<usize>,
    /// Suffix for the report filename (report-<tag>.json).
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// predictions.jsonl ({"qa_id", "prediction"} per line).
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// Optional splits.json; when given, client assignment follows the
    /// partition instead of the qa file.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run report files to compare.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GameCommand {
    /// Build a game spec from pipeline artifacts.
    Build(GameBuildArgs),
    /// Enumerate pure-strategy Nash equilibria.
    Nash(GameNashArgs),
    /// Analyze the modified game, optionally sweeping a mechanism parameter.
    Mechanisms(GameMechanismsArgs),
}

#[derive(Debug, Args)]
pub struct GameBuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub taxonomy: PathBuf,
    #[arg(long)]
    pub stores: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    /// Uniform contribution cost, or per-player costs "1.0,0.5,...".
    #[arg(long, default_value = "1.0")]
    pub costs: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.75)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub k_access: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_v: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_w: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GameNashArgs {
    /// game.json spec.
    #[arg(long)]
    pub spec: PathBuf,
    /// Use the modified (mechanism-augmented) payoff.
    #[arg(long, default_value_t = false)]
    pub modified: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GameMechanismsArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Sweep expression: param=start:stop:step, with param one of
    /// rho | k_access | lambda_v | lambda_w.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
        Command::Index(args) => cmd_index(args),
        Command::Categorize(args) => cmd_categorize(args),
        Command::Stores(args) => cmd_stores(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
        Command::Game(cmd) => match cmd {
            GameCommand::Build(args) => cmd_game_build(args),
            GameCommand::Nash(args) => cmd_game_nash(args),
            GameCommand::Mechanisms(args) => cmd_game_mechanisms(args),
        },
    }
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn require_file(path: &Path, produced_by: &str) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "missing upstream artifact `{}` (run `corag {produced_by}` first)",
            path.display()
        )));
    }
    Ok(())
}

fn load_corpus_file(path: &Path) -> Result<Corpus, CliError> {
    require_file(path, "gen-synthetic")?;
    Ok(Corpus::from_passages(corpus::load_passages(path)?)?)
}

fn load_qa_file(path: &Path) -> Result<Vec<crate::corpus::QAPair>, CliError> {
    require_file(path, "gen-synthetic")?;
    Ok(corpus::load_qa(path)?)
}

fn cmd_gen_synthetic(args: GenSyntheticArgs) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    let spec = SynthSpec {
        passages: args.passages,
        qa: args.qa,
        clients: args.clients,
        seed: args.seed,
        distractors: args.distractors,
        ..Default::default()
    };
    let (passages, qa) = synth::generate(&spec)?;
    let passages_path = args.out.join("passages.jsonl");
    let qa_path = args.out.join("qa.jsonl");
    corpus::save_passages(&passages_path, &passages)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    corpus::save_qa(&qa_path, &qa).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} passages to {} and {} qa pairs to {}",
        passages.len(),
        passages_path.display(),
        qa.len(),
        qa_path.display()
    );
    Ok(())
}

fn cmd_index(args: IndexArgs) -> Result<(), CliError> {
    let corpus = load_corpus_file(&args.corpus)?;
    ensure_out_dir(&args.out)?;
    let passages: Vec<_> = corpus.iter().cloned().collect();
    let index = Bm25Index::build(&passages, Bm25Params { k1: args.k1, b: args.b })?;
    let path = args.out.join("index.bin");
    index.save_cache(&path)?;
    println!(
        "indexed {} passages (avg len {:.2}) -> {}",
        index.n_docs(),
        index.avg_doc_len(),
        path.display()
    );
    Ok(())
}

fn cmd_categorize(args: CategorizeArgs) -> Result<(), CliError> {
    let corpus = load_corpus_file(&args.corpus)?;
    let qa = load_qa_file(&args.qa)?;
    ensure_out_dir(&args.out)?;
    let index = match &args.index {
        Some(path) => {
            require_file(path, "index")?;
            Bm25Index::load_cache(path)?
        }
        None => {
            let passages: Vec<_> = corpus.iter().cloned().collect();
            Bm25Index::build(&passages, Bm25Params::default())?
        }
    };
    if args.top_r == 0 || args.hn_hi < args.top_r {
        return Err(CliError::Validation(format!(
            "need 1 <= top_r <= hn_hi, got top_r={} hn_hi={}",
            args.top_r, args.hn_hi
        )));
    }
    let window = RankWindow { top_r: args.top_r, hn_lo: args.top_r + 1, hn_hi: args.hn_hi };
    let taxonomy = categorize_all(&qa, &index, &corpus, window);
    let path = args.out.join("taxonomy.jsonl");
    taxonomy.save_jsonl(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let with_relevant = taxonomy.iter().filter(|e| !e.relevant.is_empty()).count();
    println!(
        "categorized {} qa pairs ({} with at least one relevant passage) -> {}",
        taxonomy.len(),
        with_relevant,
        path.display()
    );
    Ok(())
}

fn cmd_stores(args: StoresArgs) -> Result<(), CliError> {
    let corpus = load_corpus_file(&args.corpus)?;
    let qa = load_qa_file(&args.qa)?;
    require_file(&args.taxonomy, "categorize")?;
    let taxonomy = StoreTaxonomy::load_jsonl(&args.taxonomy, RankWindow::default())?;
    ensure_out_dir(&args.out)?;

    let spec = BenchmarkSpec {
        clients: args.clients,
        shots: args.shots,
        seed: args.seed,
        dev_fraction: args.dev_fraction,
        fractions: StoreFractions {
            train_wiki: args.train_frac,
            split_wiki: args.split_frac,
            test_wiki: args.test_frac,
        },
        rel_sample_excludes_relevant: args.rel_sample_excludes_relevant,
        test_include_hard_negatives: !args.test_without_hard_negatives,
        test_hard_negatives_per_qa: args.test_hard_negatives,
    };
    let partition = partition_qa(&qa, &spec)?;

    let assignment = match (&args.variant, &args.composition) {
        (Some(v), None) => {
            let variant: Variant = v.parse().expect("variant parse is infallible");
            if matches!(variant, Variant::Custom(_)) {
                return Err(CliError::Validation(format!(
                    "unknown variant `{v}` (rel|irr|rel1|split; use --composition for custom stores)"
                )));
            }
            build_variant(variant, &taxonomy, &partition, &corpus, &spec)?
        }
        (None, Some(c)) => {
            let selector = CompositionSelector::parse(c)?;
            build_composition(&selector, &taxonomy, &partition, &corpus, &spec)?
        }
        (None, None) => {
            return Err(CliError::Validation(
                "one of --variant or --composition is required".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let stores_path = args.out.join("stores.json");
    let splits_path = args.out.join("splits.json");
    assignment.save(&stores_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    partition.save(&splits_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "variant {} for {} clients -> {} and {}",
        assignment.variant,
        assignment.clients(),
        stores_path.display(),
        splits_path.display()
    );
    Ok(())
}

/// Flat config file for `corag train`; flags override these values.
#[derive(Debug, Default, Deserialize)]
struct TrainConfigFile {
    rounds: Option<usize>,
    epochs_per_round: Option<usize>,
    lr: Option<f64>,
    top_k: Option<usize>,
    max_answer_len: Option<usize>,
    eval_interval: Option<usize>,
    local_total_epochs: Option<usize>,
    k1: Option<f64>,
    b: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    qa_id: String,
    prediction: String,
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mode: Mode = args.mode.parse().map_err(CliError::Validation)?;
    let corpus = load_corpus_file(&args.corpus)?;
    let qa = load_qa_file(&args.qa)?;
    require_file(&args.stores, "stores")?;
    require_file(&args.splits, "stores")?;
    let assignment = StoreAssignment::load(&args.stores)?;
    let partition = QaPartition::load(&args.splits, &qa)?;

    let file_config: TrainConfigFile = match &args.config {
        Some(path) => {
            require_file(path, "train --config")?;
            let body = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&body)
                .map_err(|e| CliError::Validation(format!("bad config file: {e}")))?
        }
        None => TrainConfigFile::default(),
    };
    let defaults = RoundConfig::default();
    let config = RoundConfig {
        mode,
        rounds: args.rounds.or(file_config.rounds).unwrap_or(defaults.rounds),
        epochs_per_round: args
            .epochs
            .or(file_config.epochs_per_round)
            .unwrap_or(defaults.epochs_per_round),
        lr: args.lr.or(file_config.lr).unwrap_or(defaults.lr),
        top_k: args.top_k.or(file_config.top_k).unwrap_or(defaults.top_k),
        eval_interval: args.eval_interval.or(file_config.eval_interval),
        local_total_epochs: args.local_epochs.or(file_config.local_total_epochs),
        max_answer_len: args
            .max_answer_len
            .or(file_config.max_answer_len)
            .unwrap_or(defaults.max_answer_len),
        bm25: Bm25Params {
            k1: file_config.k1.unwrap_or(defaults.bm25.k1),
            b: file_config.b.unwrap_or(defaults.bm25.b),
        },
    };

    ensure_out_dir(&args.out)?;
    let session = Session::prepare(&corpus, &partition, &assignment, config)?;
    let report = federation::run(&session)?;

    let report_name = match &args.tag {
        Some(tag) => format!("report-{tag}.json"),
        None => "report.json".to_string(),
    };
    let report_path = args.out.join(report_name);
    report.save(&report_path)?;
    let predictions: Vec<PredictionLine> = report
        .predictions
        .iter()
        .map(|p| PredictionLine { qa_id: p.qa_id.clone(), prediction: p.prediction.clone() })
        .collect();
    let predictions_path = args.out.join("predictions.jsonl");
    corpus::write_jsonl(&predictions_path, &predictions)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "{} on {}: best_avg_em {:.3} (round {}) -> {}",
        report.mode,
        report.variant,
        100.0 * report.best_avg_em,
        report.best_round,
        report_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    require_file(&args.predictions, "train")?;
    let qa = load_qa_file(&args.qa)?;
    let predictions: Vec<PredictionLine> = corpus::read_jsonl(&args.predictions)?;
    ensure_out_dir(&args.out)?;

    let mut client_of: std::collections::HashMap<&str, usize> =
        qa.iter().map(|q| (q.id.as_str(), q.client)).collect();
    let partition_storage;
    if let Some(splits) = &args.splits {
        require_file(splits, "stores")?;
        partition_storage = QaPartition::load(splits, &qa)?;
        client_of = partition_storage
            .train
            .iter()
            .chain(&partition_storage.dev)
            .chain(&partition_storage.test)
            .flatten()
            .map(|q| (q.id.as_str(), q.client))
            .collect();
    }

    let by_id: std::collections::HashMap<&str, &crate::corpus::QAPair> =
        qa.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut per_qa = Vec::with_capacity(predictions.len());
    for line in &predictions {
        let Some(gold) = by_id.get(line.qa_id.as_str()) else {
            return Err(CliError::Validation(format!(
                "prediction references unknown qa `{}`",
                line.qa_id
            )));
        };
        let client = client_of.get(line.qa_id.as_str()).copied().unwrap_or(gold.client);
        per_qa.push(metrics::score_pair(&line.qa_id, client, &line.prediction, &gold.answers));
    }
    per_qa.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let result = metrics::summarize(per_qa);
    let path = args.out.join("scores.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&result).expect("scores serialize"),
    )
    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!(
        "scored {} predictions: client-avg EM {:.3}, micro EM {:.3} -> {}",
        result.per_qa.len(),
        100.0 * result.client_avg_em,
        100.0 * result.micro_em,
        path.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.runs {
        require_file(path, "train")?;
        reports.push(RunReport::load(path)?);
    }
    print!("{}", render_comparison(&reports));
    Ok(())
}

/// Comparison table: one row per variant, one column per mode, best-round
/// average EM as a percentage.
pub fn render_comparison(reports: &[RunReport]) -> String {
    let modes = ["local", "collaborative", "centralized"];
    let mut variants: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    variants.sort_unstable();
    variants.dedup();

    let mut out = String::new();
    out.push_str("Average EM (best round, %) by passage store and training mode\n");
    out.push_str(&format!("{:<16}", "store"));
    for mode in modes {
        out.push_str(&format!("{mode:>16}"));
    }
    out.push('\n');
    for variant in &variants {
        out.push_str(&format!("{variant:<16}"));
        for mode in modes {
            let cell = reports
                .iter()
                .find(|r| r.variant == *variant && r.mode == mode)
                .map(|r| format!("{:.3}", 100.0 * r.best_avg_em))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("{cell:>16}"));
        }
        out.push('\n');
    }
    out
}

fn parse_costs(spec: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(',').collect();
    let values: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let values = values.map_err(|_| CliError::Validation(format!("bad costs `{spec}`")))?;
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values),
        len => Err(CliError::Validation(format!(
            "{len} costs given for {n} clients"
        ))),
    }
}

fn cmd_game_build(args: GameBuildArgs) -> Result<(), CliError> {
    let corpus = load_corpus_file(&args.corpus)?;
    let qa = load_qa_file(&args.qa)?;
    require_file(&args.taxonomy, "categorize")?;
    require_file(&args.stores, "stores")?;
    require_file(&args.splits, "stores")?;
    let taxonomy = StoreTaxonomy::load_jsonl(&args.taxonomy, RankWindow::default())?;
    let assignment = StoreAssignment::load(&args.stores)?;
    let partition = QaPartition::load(&args.splits, &qa)?;
    ensure_out_dir(args.out.parent().unwrap_or(Path::new(".")))?;

    let train_qa_ids: Vec<Vec<String>> = (0..partition.clients())
        .map(|c| partition.train_ids(c).into_iter().map(str::to_string).collect())
        .collect();
    let universe: BTreeSet<String> = corpus.sorted_ids().into_iter().collect();
    let costs = parse_costs(&args.costs, partition.clients())?;
    let coefficients = GameCoefficients {
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        rho: args.rho,
        k_access: args.k_access,
        lambda_v: args.lambda_v,
        lambda_w: args.lambda_w,
    };
    let game =
        game_from_taxonomy(&taxonomy, &assignment, &train_qa_ids, &universe, &coefficients, &costs)?;
    for warning in game.validate()? {
        log::warn!("{warning}");
    }
    game.save(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("game spec for {} players -> {}", game.n, args.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EquilibriumEntry {
    profile: Vec<u8>,
    payoffs: Vec<f64>,
    participants: usize,
}

#[derive(Debug, Serialize)]
struct EquilibriaFile {
    game: String,
    n: usize,
    equilibria: Vec<EquilibriumEntry>,
}

fn equilibria_entries<F>(spec: &GameSpec, profiles: &[ActionProfile], payoff: F) -> Vec<EquilibriumEntry>
where
    F: Fn(&GameSpec, usize, &ActionProfile) -> f64,
{
    profiles
        .iter()
        .map(|profile| EquilibriumEntry {
            profile: profile.0.clone(),
            payoffs: (0..spec.players.len()).map(|i| payoff(spec, i, profile)).collect(),
            participants: profile.participant_count(),
        })
        .collect()
}

fn cmd_game_nash(args: GameNashArgs) -> Result<(), CliError> {
    require_file(&args.spec, "game build")?;
    let spec = GameSpec::load(&args.spec)?;
    for warning in spec.validate()? {
        log::warn!("{warning}");
    }
    ensure_out_dir(&args.out)?;
    let (label, profiles): (&str, Vec<ActionProfile>) = if args.modified {
        ("modified", enumerate_modified(&spec)?)
    } else {
        ("base", enumerate_base(&spec)?)
    };
    let entries = if args.modified {
        equilibria_entries(&spec, &profiles, modified_utility)
    } else {
        equilibria_entries(&spec, &profiles, crate::incentives::utility)
    };
    println!("{} game: {} pure-strategy equilibria", label, entries.len());
    for e in &entries {
        println!(
            "  profile {:?} participants {} payoffs {:?}",
            e.profile, e.participants, e.payoffs
        );
    }
    let file = EquilibriaFile { game: label.to_string(), n: spec.n, equilibria: entries };
    let path = args.out.join("equilibria.json");
    std::fs::write(&path, serde_json::to_string_pretty(&file).expect("serialize"))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("-> {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepPoint {
    value: f64,
    equilibria: Vec<EquilibriumEntry>,
    max_participants: usize,
}

#[derive(Debug, Serialize)]
struct SweepFile {
    game: String,
    n: usize,
    param: String,
    points: Vec<SweepPoint>,
}

fn parse_sweep(expr: &str) -> Result<(String, Vec<f64>), CliError> {
    let (param, range) = expr
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("bad sweep `{expr}` (param=start:stop:step)")))?;
    if !["rho", "k_access", "lambda_v", "lambda_w"].contains(&param) {
        return Err(CliError::Validation(format!(
            "unknown sweep parameter `{param}` (rho|k_access|lambda_v|lambda_w)"
        )));
    }
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Validation(format!("bad sweep range `{range}` (start:stop:step)")));
    }
    let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
    let nums = nums.map_err(|_| CliError::Validation(format!("bad sweep range `{range}`")))?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || stop < start {
        return Err(CliError::Validation(
            "sweep needs step > 0 and stop >= start".into(),
        ));
    }
    let mut values = Vec::new();
    let mut i = 0usize;
    loop {
        let v = start + step * i as f64;
        if v > stop + 1e-12 {
            break;
        }
        values.push(v);
        i += 1;
    }
    Ok((param.to_string(), values))
}

fn cmd_game_mechanisms(args: GameMechanismsArgs) -> Result<(), CliError> {
    require_file(&args.spec, "game build")?;
    let base_spec = GameSpec::load(&args.spec)?;
    for warning in base_spec.validate()? {
        log::warn!("{warning}");
    }
    ensure_out_dir(&args.out)?;
    let path = args.out.join("equilibria.json");

    match &args.sweep {
        None => {
            let profiles = enumerate_modified(&base_spec)?;
            let entries = equilibria_entries(&base_spec, &profiles, modified_utility);
            println!("modified game: {} equilibria", entries.len());
            for e in &entries {
                println!(
                    "  profile {:?} participants {} payoffs {:?}",
                    e.profile, e.participants, e.payoffs
                );
            }
            let file =
                EquilibriaFile { game: "modified".into(), n: base_spec.n, equilibria: entries };
            std::fs::write(&path, serde_json::to_string_pretty(&file).expect("serialize"))
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Some(expr) => {
            let (param, values) = parse_sweep(expr)?;
            let mut points = Vec::with_capacity(values.len());
            println!("sweep {param}: value -> equilibria (max participants)");
            for value in values {
                let mut spec = base_spec.clone();
                match param.as_str() {
                    "rho" => spec.rho = value,
                    "k_access" => spec.k_access = value,
                    "lambda_v" => spec.lambda_v = value,
                    "lambda_w" => spec.lambda_w = value,
                    _ => unreachable!(),
                }
                let profiles = enumerate_modified(&spec)?;
                let entries = equilibria_entries(&spec, &profiles, modified_utility);
                let max_participants =
                    entries.iter().map(|e| e.participants).max().unwrap_or(0);
                println!("  {value:>8.4} -> {} ({max_participants})", entries.len());
                points.push(SweepPoint { value, equilibria: entries, max_participants });
            }
            let file = SweepFile { game: "modified".into(), n: base_spec.n, param, points };
            std::fs::write(&path, serde_json::to_string_pretty(&file).expect("serialize"))
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    println!("-> {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parser_inclusive_range() {
        let (param, values) = parse_sweep("rho=0:1:0.25").unwrap();
        assert_eq!(param, "rho");
        assert_eq!(values.len(), 5);
        assert!((values[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_parser_rejects_bad_input() {
        assert!(parse_sweep("rho=0:1").is_err());
        assert!(parse_sweep("sigma=0:1:0.5").is_err());
        assert!(parse_sweep("rho=1:0:0.5").is_err());
        assert!(parse_sweep("rho=0:1:0").is_err());
    }

    #[test]
    fn costs_parser() {
        assert_eq!(parse_costs("1.5", 3).unwrap(), vec![1.5, 1.5, 1.5]);
        assert_eq!(parse_costs("1,2,3", 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_costs("1,2", 3).is_err());
        assert!(parse_costs("abc", 3).is_err());
    }

    #[test]
    fn missing_artifact_error_names_the_file() {
        let err = require_file(Path::new("/nonexistent/taxonomy.jsonl"), "categorize")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("taxonomy.jsonl") && msg.contains("categorize"));
        assert_eq!(err.exit_code(), 1);
    }
}
