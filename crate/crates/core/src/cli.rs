//! The `tie` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::encoder::{
    assignment_counts, default_assignment, node_accuracy, parse_assignment, train, EncoderConfig, ModelError,
    ScaleMode,
};
use crate::graph::{GraphBundle, GraphOptions, RelationKind, DEFAULT_GAMMA};
use crate::html_dom::{parse_dom_with, tokenize_bytes, DomTree, ParseOptions, Token};
use crate::metrics::{evaluate, EvalOptions, EvalResult, PredictedAnswer};
use crate::pipeline::{
    generate_synthetic, load_dataset, load_pages, load_params, load_qa_params, mask_report, node_examples,
    read_predictions, run_batch, save_params, save_qa_params, write_predictions, Ablation, Dataset, Layout,
    MaskReport, PipelineError, PredictionRecord,
};
use crate::span_qa::QaParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "tie",
    version,
    about = "Structural reading comprehension over web pages"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize and parse one HTML file; prints tokens and the node tree.
    Parse(ParseArgs),
    /// Build the DOM and position graphs of every page.
    Graphs(GraphsArgs),
    /// Write a synthetic pages file and QA file.
    Gen(GenArgs),
    /// Train the node locator.
    Train(TrainArgs),
    /// Run both stages over a QA file and write predictions.
    Infer(InferArgs),
    /// Score predictions against the gold answers.
    Eval(EvalArgs),
    /// Train and score models with relations removed.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// HTML file, or `-` for standard input.
    pub input: PathBuf,
    /// Reject unclosed and stray tags.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Overlap ratio for the position relations.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Parent/child DOM edges instead of the densified relation.
    #[arg(long)]
    pub sparse_dom: bool,
}

impl GraphArgs {
    fn options(&self) -> Result<GraphOptions, CliError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CliError::Usage(format!(
                "--gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(GraphOptions {
            gamma: self.gamma,
            sparse_dom: self.sparse_dom,
        })
    }
}

#[derive(Debug, Args)]
pub struct GraphsArgs {
    #[arg(long)]
    pub pages: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    Table,
    Kv,
    Compare,
    Mixed,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Table => Layout::Table,
            LayoutArg::Kv => Layout::Kv,
            LayoutArg::Compare => Layout::Compare,
            LayoutArg::Mixed => Layout::Mixed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    pub layout: LayoutArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of pages.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value = "pages.json")]
    pub pages_out: PathBuf,
    #[arg(long, default_value = "qa.json")]
    pub qa_out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    /// Divide scores by the square root of the node width.
    FullDim,
    /// Divide scores by the square root of the head width.
    PerHead,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Node representation width.
    #[arg(long, default_value_t = 48)]
    pub dim: usize,
    /// Attention heads per layer.
    #[arg(long, default_value_t = 12)]
    pub heads: usize,
    /// Graph attention layers.
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Head relations, e.g. `dom:4,up:2,down:2,left:2,right:2`.
    #[arg(long)]
    pub assignment: Option<String>,
    /// Initial learning rate, decayed linearly to zero.
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Rows of the hashed embedding table.
    #[arg(long, default_value_t = 1024)]
    pub buckets: usize,
    /// Pages with more tokens are rejected.
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Add each layer's input to its output.
    #[arg(long)]
    pub residual: bool,
    #[arg(long, value_enum, default_value = "full-dim")]
    pub scale: ScaleArg,
}

impl ModelArgs {
    fn config(&self, graph: GraphOptions) -> Result<EncoderConfig, CliError> {
        let assignment = match &self.assignment {
            Some(spec) => parse_assignment(spec).map_err(CliError::Usage)?,
            None if self.heads > 0 => default_assignment(self.heads),
            None => Vec::new(),
        };
        let config = EncoderConfig {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            assignment,
            residual: self.residual,
            scale_mode: match self.scale {
                ScaleArg::FullDim => ScaleMode::FullDim,
                ScaleArg::PerHead => ScaleMode::PerHead,
            },
            seed: self.seed,
            learning_rate: self.lr,
            epochs: self.epochs,
            max_tokens: self.max_tokens,
            buckets: self.buckets,
            batch_size: self.batch_size,
            graph,
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pages: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Parameter file; the configuration goes next to it as `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write span scorer parameters with the same bucket count.
    #[arg(long)]
    pub qa_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub tie_params: PathBuf,
    /// Span scorer parameters; the untrained scorer when omitted.
    #[arg(long)]
    pub qa_params: Option<PathBuf>,
    #[arg(long)]
    pub pages: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    /// Predictions, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions file written by `infer`.
    #[arg(long)]
    pub pred: PathBuf,
    /// QA file with the gold answers.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pages: PathBuf,
    /// JSON report; printed when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-example scores as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Compare raw tokens instead of lowercased, punctuation-free ones.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Pages file.
    #[arg(long)]
    pub pages: PathBuf,
    /// QA file with gold answers.
    #[arg(long)]
    pub qa: PathBuf,
    /// Drop the DOM relation heads.
    #[arg(long)]
    pub no_dom: bool,
    /// Drop every position relation head.
    #[arg(long)]
    pub no_npr: bool,
    /// Drop the left and right heads.
    #[arg(long)]
    pub no_hori: bool,
    /// Drop the up and down heads.
    #[arg(long)]
    pub no_vert: bool,
    /// DOM heads see parent/child pairs only.
    #[arg(long)]
    pub sparse_dom: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Overlap ratio for the position relations.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Keep each variant's parameters and predictions here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON report; printed when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl AblateArgs {
    /// The variant named by the flags, or the full model and every
    /// single-change variant when no flag is given.
    fn variants(&self) -> Vec<Ablation> {
        let chosen = Ablation {
            no_dom: self.no_dom,
            no_npr: self.no_npr,
            no_hori: self.no_hori,
            no_vert: self.no_vert,
            sparse_dom: self.sparse_dom,
        };
        if chosen.is_full() {
            std::iter::once(Ablation::FULL)
                .chain(Ablation::standard())
                .collect()
        } else {
            vec![chosen]
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        PipelineError::from(e).into()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_err(p, e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

/// Parse `args` (program name first), run the command and return the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Parse(a) => parse(a),
        Command::Graphs(a) => graphs(a),
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

#[derive(Serialize)]
struct ParseDump<'a> {
    tokens: &'a [Token],
    tree: &'a DomTree,
}

fn parse(a: ParseArgs) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    if a.input.as_os_str() == "-" {
        std::io::stdin()
            .read_to_end(&mut bytes)
            .map_err(|e| CliError::Data(format!("stdin: {e}")))?;
    } else {
        bytes = std::fs::read(&a.input).map_err(|e| io_err(&a.input, e))?;
    }
    let tokens = tokenize_bytes(&bytes).map_err(|e| io_err(&a.input, e))?;
    let tree = parse_dom_with(&tokens, ParseOptions { strict: a.strict }).map_err(|e| io_err(&a.input, e))?;
    write_json(
        a.out.as_deref(),
        &ParseDump {
            tokens: &tokens.tokens,
            tree: &tree,
        },
    )
}

#[derive(Serialize)]
struct PageGraphs<'a> {
    page_id: &'a str,
    nodes: usize,
    graphs: &'a GraphBundle,
}

#[derive(Serialize)]
struct GraphsDump<'a> {
    pages: Vec<PageGraphs<'a>>,
}

fn graphs(a: GraphsArgs) -> Result<(), CliError> {
    let options = a.graph.options()?;
    let dataset = load_pages(&a.pages, options)?;
    let pages = dataset
        .pages
        .iter()
        .map(|p| PageGraphs {
            page_id: &p.page_id,
            nodes: p.doc.tree.len(),
            graphs: &p.bundle,
        })
        .collect();
    write_json(a.out.as_deref(), &GraphsDump { pages })
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let set = generate_synthetic(a.seed, a.n, a.layout.into());
    write_json(Some(&a.pages_out), &set.pages)?;
    write_json(Some(&a.qa_out), &set.qa)?;
    info!(
        "wrote {} pages to {} and {} questions to {}",
        set.pages.pages.len(),
        a.pages_out.display(),
        set.qa.examples.len(),
        a.qa_out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let config = a.model.config(a.graph.options()?)?;
    let dataset = load_dataset(&a.pages, &a.qa, config.graph)?;
    let examples = node_examples(&dataset);
    let trained = train(&examples, &config)?;
    save_params(&a.out, &trained.params, &config)?;
    if let Some(path) = &a.qa_out {
        save_qa_params(path, &QaParams::new(config.buckets))?;
    }
    let accuracy = node_accuracy(&examples, &trained.params, &config)?;
    let last = trained.log.last().map_or(f64::NAN, |s| s.loss);
    println!(
        "trained {} epochs on {} examples: loss {last:.6}, node accuracy {accuracy:.4}",
        config.epochs,
        examples.len()
    );
    Ok(())
}

fn infer(a: InferArgs) -> Result<(), CliError> {
    let (params, config) = load_params(&a.tie_params)?;
    let qa = match &a.qa_params {
        Some(p) => load_qa_params(p)?,
        None => QaParams::new(config.buckets),
    };
    let dataset = load_dataset(&a.pages, &a.qa, config.graph)?;
    let records = run_batch(&dataset, &params, &qa, &config, a.threads.max(1));
    let mut w = create(&a.out)?;
    write_predictions(&mut w, &records).map_err(|e| io_err(&a.out, e))?;
    let failed = records.iter().filter(|r| r.prediction().is_none()).count();
    info!("{} predictions, {failed} failed", records.len());
    Ok(())
}

fn score(records: &[PredictionRecord], dataset: &Dataset, normalize: bool) -> Result<EvalResult, CliError> {
    let preds: Vec<PredictedAnswer> = records
        .iter()
        .filter_map(PredictionRecord::prediction)
        .map(PredictedAnswer::from)
        .collect();
    evaluate(
        &preds,
        &dataset.gold_answers(),
        &dataset.documents(),
        EvalOptions { normalize },
    )
    .map_err(|e| CliError::Data(e.to_string()))
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&a.pages, &a.gold, GraphOptions::default())?;
    let records = read_predictions(&a.pred)?;
    let result = score(&records, &dataset, !a.no_normalize)?;
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        result.write_csv(&mut w).map_err(|e| io_err(path, e))?;
    }
    match &a.report {
        Some(path) => {
            write_json(Some(path), &result)?;
            println!("EM {:.2}  F1 {:.2}  POS {:.2}", result.em, result.f1, result.pos);
            Ok(())
        }
        None => write_json(None, &result),
    }
}

#[derive(Debug, Serialize)]
struct VariantReport {
    variant: String,
    ablation: Ablation,
    /// Heads per relation in the order dom, up, down, left, right.
    head_counts: [usize; 5],
    assignment: Vec<RelationKind>,
    masks: MaskReport,
    node_accuracy: f64,
    em: f64,
    f1: f64,
    pos: f64,
    failed: usize,
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let base_graph = GraphArgs {
        gamma: a.gamma,
        sparse_dom: false,
    }
    .options()?;
    let base = a.model.config(base_graph)?;
    let mut reports = Vec::new();
    for variant in a.variants() {
        let config = variant.apply(&base)?;
        info!("variant {variant}: {:?}", assignment_counts(&config.assignment));
        let dataset = load_dataset(&a.pages, &a.qa, config.graph)?;
        let examples = node_examples(&dataset);
        let trained = train(&examples, &config)?;
        let accuracy = node_accuracy(&examples, &trained.params, &config)?;
        let qa = QaParams::new(config.buckets);
        let records = run_batch(&dataset, &trained.params, &qa, &config, 1);
        let result = score(&records, &dataset, true)?;
        if let Some(dir) = &a.out_dir {
            let stem = variant_file_stem(&variant);
            save_params(&dir.join(format!("{stem}.tiep")), &trained.params, &config)?;
            let path = dir.join(format!("{stem}.jsonl"));
            let mut w = create(&path)?;
            write_predictions(&mut w, &records).map_err(|e| io_err(&path, e))?;
        }
        reports.push(VariantReport {
            variant: variant.to_string(),
            ablation: variant,
            head_counts: assignment_counts(&config.assignment),
            assignment: config.assignment.clone(),
            masks: mask_report(&dataset, &config),
            node_accuracy: accuracy,
            em: result.em,
            f1: result.f1,
            pos: result.pos,
            failed: records.iter().filter(|r| r.prediction().is_none()).count(),
        });
    }
    write_json(a.report.as_deref(), &reports)
}

fn variant_file_stem(variant: &Ablation) -> String {
    variant
        .to_string()
        .replace("w/o ", "no-")
        .replace("w/ ", "with-")
        .replace(", ", "_")
        .to_lowercase()
}
