//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for unreadable or malformed inputs, 3 when an
//! operation's precondition is violated (for example a budget larger than
//! the token count).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{self, CorrelationConfig, FlopsModel};
use crate::error::{Error, Result};
use crate::io;
use crate::numerics::TokenMatrix;
use crate::pipeline;
use crate::projector::{factorize_low_rank, Projector};
use crate::selection::{DiversitySpace, PatchBudget, Policy, SelectionConfig};
use crate::sensitivity::{self, SensitivityConfig, DEFAULT_H, DEFAULT_M, DEFAULT_ROW_BUDGET};

/// Environment variable holding the default worker-thread cap.
pub const THREADS_ENV: &str = "SENSPRUNE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sensprune",
    version,
    about = "Sensitivity-aware visual token pruning"
)]
pub struct Cli {
    /// Worker threads (default: $SENSPRUNE_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score tokens and select a budget of them
    Prune(PruneArgs),
    /// Tabulate finite-difference error against the exact JVP
    Verify(VerifyArgs),
    /// Spearman correlation between reference and proxy sensitivities
    Spearman(SpearmanArgs),
    /// Analytic prefill FLOPs per token budget
    Flops(FlopsArgs),
    /// Truncated-SVD factorization of every projector layer
    Factorize(FactorizeArgs),
    /// Wall-clock timing of estimation and selection
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    FusedMultiply,
    FusedSum,
    SensitivityOnly,
    DiversityOnly,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::FusedMultiply => Policy::FusedMultiply,
            PolicyArg::FusedSum => Policy::FusedSum,
            PolicyArg::SensitivityOnly => Policy::SensitivityOnly,
            PolicyArg::DiversityOnly => Policy::DiversityOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SpaceArg {
    Projected,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Mask,
}

#[derive(Debug, Clone, Args)]
struct EstimatorArgs {
    /// Perturbation directions per token
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = DEFAULT_H)]
    h: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw separate directions for every token
    #[arg(long)]
    independent_directions: bool,
    /// Rows per batched projector call
    #[arg(long, default_value_t = DEFAULT_ROW_BUDGET)]
    row_budget: usize,
}

impl EstimatorArgs {
    fn config(&self) -> SensitivityConfig {
        SensitivityConfig {
            m: self.m,
            h: self.h,
            seed: self.seed,
            share_directions: !self.independent_directions,
            row_budget: self.row_budget,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct SelectorArgs {
    /// Tokens to keep
    #[arg(long)]
    budget: usize,
    #[arg(long, value_enum, default_value = "fused-multiply")]
    policy: PolicyArg,
    /// Select within each patch (needs patch_ids in the token file)
    #[arg(long)]
    per_patch: bool,
    /// Keep this many tokens in every patch instead of splitting --budget
    #[arg(long, requires = "per_patch")]
    patch_quota: Option<usize>,
    #[arg(long, value_enum, default_value = "projected")]
    diversity_space: SpaceArg,
}

impl SelectorArgs {
    fn config(&self) -> SelectionConfig {
        SelectionConfig {
            budget_k: self.budget,
            policy: self.policy.into(),
            diversity_space: match self.diversity_space {
                SpaceArg::Projected => DiversitySpace::Projected,
                SpaceArg::Raw => DiversitySpace::Raw,
            },
            per_patch: self.per_patch,
            patch_budget: self
                .patch_quota
                .map_or(PatchBudget::FixedTotal, PatchBudget::PerPatch),
        }
    }
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    projector: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    selector: SelectorArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    projector: PathBuf,
    /// Step sizes, strictly descending
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.005,0.0025")]
    h: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpearmanArgs {
    /// JSON object {"reference": [...], "proxy": [...]} or a list of them
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    /// JSON FLOPs model
    #[arg(long)]
    config: PathBuf,
    /// Token budgets to tabulate
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    budgets: Vec<u64>,
    /// Visual tokens before pruning
    #[arg(long, default_value_t = 2880)]
    n_tokens: u64,
    /// Perturbation directions used for the overhead estimate
    #[arg(long, default_value_t = DEFAULT_M as u64)]
    m: u64,
    /// Text tokens added to every prompt
    #[arg(long, default_value_t = 60)]
    text_tokens: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FactorizeArgs {
    #[arg(long)]
    projector: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    projector: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    selector: SelectorArgs,
}

/// Everything a prune run needs, validated before any numerics start.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tokens_path: PathBuf,
    pub projector_path: PathBuf,
    pub flops_config: Option<PathBuf>,
    #[serde(skip)]
    pub sensitivity: SensitivityConfig,
    #[serde(skip)]
    pub selection: SelectionConfig,
    pub output: PathBuf,
    pub format: ReportFormat,
}

/// A manifest whose inputs have been read and checked.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub projector: Projector,
    pub tokens: TokenMatrix,
}

impl RunManifest {
    pub fn load(self) -> Result<LoadedRun> {
        check_output_dir(&self.output)?;
        if let Some(cfg) = &self.flops_config {
            FlopsModel::from_json(&read_text(cfg)?)?;
        }
        let projector = io::load_projector(&self.projector_path)?;
        let tokens = io::load_tokens(&self.tokens_path)?;
        self.sensitivity.validate()?;
        if tokens.dim() != projector.in_dim() {
            return Err(Error::contract(format!(
                "tokens have dimension {}, projector expects {}",
                tokens.dim(),
                projector.in_dim()
            )));
        }
        let budget = &self.selection;
        if budget.per_patch && tokens.patch_ids().is_none() {
            return Err(Error::format(format!(
                "{}: --per-patch needs a \"patch_ids\" tensor",
                self.tokens_path.display()
            )));
        }
        if !budget.per_patch && budget.budget_k > tokens.n_tokens() {
            return Err(Error::contract(format!(
                "budget {} exceeds the {} tokens in {}",
                budget.budget_k,
                tokens.n_tokens(),
                self.tokens_path.display()
            )));
        }
        Ok(LoadedRun {
            manifest: self,
            projector,
            tokens,
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_output_dir(out: &Path) -> Result<()> {
    let dir = match out.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "output directory does not exist",
            ),
        });
    }
    Ok(())
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Emits `text` to `out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_output(path, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_prune(args: PruneArgs) -> Result<()> {
    let manifest = RunManifest {
        tokens_path: args.tokens,
        projector_path: args.projector,
        flops_config: None,
        sensitivity: args.estimator.config(),
        selection: args.selector.config(),
        output: args.out,
        format: args.format,
    };
    let run = manifest.load()?;
    let (report, selection) = pipeline::prune(
        &run.projector,
        &run.tokens,
        &run.manifest.sensitivity,
        &run.manifest.selection,
    )?;
    match run.manifest.format {
        ReportFormat::Json => write_output(
            &run.manifest.output,
            pipeline::report_json(&report, &selection).as_bytes(),
        ),
        ReportFormat::Mask => write_output(
            &run.manifest.output,
            &selection.to_mask(run.tokens.n_tokens())?,
        ),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    if let Some(out) = &args.out {
        check_output_dir(out)?;
    }
    let projector = io::load_projector(&args.projector)?;
    let table =
        sensitivity::verify_central_difference(&projector, args.probes, &args.h, args.seed)?;

    let mut text = String::from("probe  h          error        order   roundoff\n");
    for row in &table.rows {
        let order = row
            .order
            .map_or_else(|| "-".to_string(), |o| format!("{o:.3}"));
        text.push_str(&format!(
            "{:<6} {:<10.3e} {:<12.4e} {:<7} {}\n",
            row.probe,
            row.h,
            row.error,
            order,
            if row.roundoff_warning { "yes" } else { "no" }
        ));
    }
    text.push_str("\nmean over probes\n");
    for (i, (h, e)) in table.h_values.iter().zip(&table.mean_error).enumerate() {
        let order = i
            .checked_sub(1)
            .and_then(|k| table.mean_order[k])
            .map_or_else(|| "-".to_string(), |o| format!("{o:.3}"));
        text.push_str(&format!("h={h:<10.3e} error={e:<12.4e} order={order}\n"));
    }
    if let Some(order) = table.overall_order() {
        text.push_str(&format!("fitted order: {order:.3}\n"));
    }
    emit(None, &text)?;
    if let Some(out) = &args.out {
        write_output(out, pretty(&table).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RankPair {
    reference: Vec<f64>,
    proxy: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SpearmanInput {
    One(RankPair),
    Many(Vec<RankPair>),
}

fn cmd_spearman(args: SpearmanArgs) -> Result<()> {
    if let Some(out) = &args.out {
        check_output_dir(out)?;
    }
    let input: SpearmanInput = serde_json::from_str(&read_text(&args.input)?)
        .map_err(|e| Error::format(format!("{}: {e}", args.input.display())))?;
    let cfg = CorrelationConfig {
        threshold: args.threshold,
        ..CorrelationConfig::default()
    };
    let doc = match input {
        SpearmanInput::One(pair) => {
            let rho = analysis::spearman(&pair.reference, &pair.proxy, &cfg)?;
            json!({ "threshold": cfg.threshold, "rho": rho })
        }
        SpearmanInput::Many(pairs) => {
            let mut samples = Vec::with_capacity(pairs.len());
            let mut rhos = Vec::new();
            for pair in &pairs {
                match analysis::spearman(&pair.reference, &pair.proxy, &cfg) {
                    Ok(rho) => {
                        rhos.push(rho);
                        samples.push(json!({ "rho": rho }));
                    }
                    Err(e) => samples.push(json!({ "error": e.to_string() })),
                }
            }
            let mean = (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64);
            json!({ "threshold": cfg.threshold, "samples": samples, "mean_rho": mean })
        }
    };
    emit(args.out.as_deref(), &pretty(&doc))
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    if let Some(out) = &args.out {
        check_output_dir(out)?;
    }
    let model = FlopsModel::from_json(&read_text(&args.config)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    let baseline_tokens = args.n_tokens + args.text_tokens;
    let baseline = model.llm_prefill_flops(baseline_tokens);
    let overhead = model.sensitivity_overhead_flops(args.n_tokens, args.m);
    let rows: Vec<_> = args
        .budgets
        .iter()
        .map(|&budget| {
            let prefill = model.llm_prefill_flops(budget + args.text_tokens);
            json!({
                "budget": budget,
                "prefill_flops": prefill,
                "ratio": prefill as f64 / baseline as f64,
                "with_sensitivity_flops": prefill + overhead,
                "ratio_with_sensitivity": (prefill + overhead) as f64 / baseline as f64,
            })
        })
        .collect();
    let doc = json!({
        "n_tokens": args.n_tokens,
        "text_tokens": args.text_tokens,
        "m": args.m,
        "projector_pass_flops": model.projector_pass_flops(),
        "sensitivity_overhead_flops": overhead,
        "baseline_prefill_flops": baseline,
        "rows": rows,
    });
    emit(args.out.as_deref(), &pretty(&doc))
}

fn cmd_factorize(args: FactorizeArgs) -> Result<()> {
    check_output_dir(&args.out)?;
    let projector = io::load_projector(&args.projector)?;
    let factorized = factorize_low_rank(&projector, args.rank)?;
    io::save_projector(&factorized, &args.out)?;
    let doc = json!({
        "rank": args.rank,
        "layers": factorized.layer_dims(),
        "output": args.out,
    });
    emit(None, &pretty(&doc))
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if let Some(out) = &args.out {
        check_output_dir(out)?;
    }
    let manifest = RunManifest {
        tokens_path: args.tokens,
        projector_path: args.projector,
        flops_config: None,
        sensitivity: args.estimator.config(),
        selection: args.selector.config(),
        output: args
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("bench.json")),
        format: ReportFormat::Json,
    };
    let run = manifest.load()?;
    let summary = analysis::time_pipeline(
        &run.projector,
        &run.tokens,
        &run.manifest.sensitivity,
        &run.manifest.selection,
        args.repeats,
    )?;
    emit(args.out.as_deref(), &pretty(&summary))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::format(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Prune(a) => cmd_prune(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Spearman(a) => cmd_spearman(a),
        Command::Flops(a) => cmd_flops(a),
        Command::Factorize(a) => cmd_factorize(a),
        Command::Bench(a) => cmd_bench(a),
    })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
