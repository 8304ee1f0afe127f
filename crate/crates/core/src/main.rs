use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moe_xray::classifier::HyperParams;
use moe_xray::pipeline::{self, AnalysisConfig, ReportBundle, TraceSource};
use moe_xray::synthgen::{self, make_generator_spec, DepthShape, GeneratorSpec};
use moe_xray::trace::{validate_trace, ModelConfig, TokenFilter, TraceSet};
use moe_xray::{Error, Result};

#[derive(Parser)]
#[command(name = "moe-xray", version, about = "Routing-signature analysis for MoE routing traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task-conditioned trace corpus.
    Simulate(SimulateArgs),
    /// Check a trace against its manifest and model configuration.
    Validate(TraceArgs),
    /// Write per-prompt routing signatures as CSV.
    Signatures(CommonArgs),
    /// Run the full analysis and write a report directory.
    Analyze(AnalyzeArgs),
    /// Cross-validated task classification from signatures.
    Classify(AnalyzeArgs),
    /// Permutation and load-balance baselines.
    Baseline(AnalyzeArgs),
    /// PCA projection of signatures.
    Project(CommonArgs),
}

#[derive(Args)]
struct TraceArgs {
    /// Trace directory (events.jsonl + manifest.json) or an events file.
    #[arg(long)]
    traces: PathBuf,
    /// Manifest path, if not next to the events.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all", value_parser = parse_filter)]
    token_filter: TokenFilter,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = pipeline::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = pipeline::DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_BASELINE_PAIRS)]
    baseline_pairs: usize,
    #[arg(long, default_value_t = HyperParams::default().l2_strength)]
    l2: f64,
    #[arg(long, default_value_t = HyperParams::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = HyperParams::default().tolerance)]
    tolerance: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Only `paper-shape` exists: 4 categories x 20 prompts, 32 tokens, 16 x 64 experts, top-8.
    #[arg(long, default_value = "paper-shape")]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = synthgen::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = synthgen::DEFAULT_PROMPTS_PER_CATEGORY)]
    prompts_per_category: usize,
    #[arg(long, default_value_t = synthgen::DEFAULT_TOKENS_PER_PROMPT)]
    tokens: usize,
    #[arg(long, default_value_t = synthgen::DEFAULT_CONCENTRATION)]
    concentration: f64,
    #[arg(long, default_value_t = synthgen::DEFAULT_NOISE_SCALE)]
    noise: f64,
    #[arg(long, default_value = "late_peak", value_parser = parse_depth)]
    depth_shape: DepthShape,
    /// Comma-separated category labels.
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
}

fn parse_filter(s: &str) -> std::result::Result<TokenFilter, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_depth(s: &str) -> std::result::Result<DepthShape, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl AnalyzeArgs {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            seed: self.seed,
            token_filter: self.common.token_filter,
            folds: self.folds,
            baseline_pairs: self.baseline_pairs,
            hyperparams: HyperParams {
                l2_strength: self.l2,
                max_iters: self.max_iters,
                tolerance: self.tolerance,
            },
        }
    }
}

fn source(args: &TraceArgs) -> Result<TraceSource> {
    let (events, manifest) = pipeline::resolve_trace_paths(&args.traces, args.manifest.as_deref())?;
    Ok(TraceSource::Files { events, manifest })
}

fn load_checked(args: &TraceArgs) -> Result<TraceSet> {
    let trace = pipeline::load_source(&source(args)?)?;
    let report = pipeline::checked_validation(&trace)?;
    if !report.warnings.is_empty() {
        eprintln!("validation: {}", report.summary());
    }
    Ok(trace)
}

fn finish(bundle: &ReportBundle) {
    for file in &bundle.files {
        println!("wrote {}", file.display());
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.preset != "paper-shape" {
        return Err(Error::Config(format!("unknown preset `{}`", args.preset)));
    }
    let base = ModelConfig::olmoe();
    let config = ModelConfig::new(
        base.model_id,
        args.layers.unwrap_or(base.num_layers),
        args.experts.unwrap_or(base.num_experts),
        args.top_k.unwrap_or(base.top_k),
    )?;
    let categories = args.categories.clone().unwrap_or_else(|| {
        synthgen::DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
    });
    let spec: GeneratorSpec =
        make_generator_spec(&config, &categories, args.concentration, args.depth_shape, args.seed)?
            .with_noise_scale(args.noise)
            .with_tokens_per_prompt(args.tokens);
    spec.check()?;
    let trace = pipeline::write_simulation(&spec, args.prompts_per_category, &args.out)?;
    println!(
        "wrote {} prompts, {} events to {}",
        trace.prompts.len(),
        trace.events.len(),
        args.out.display()
    );
    Ok(())
}

fn validate(args: &TraceArgs) -> Result<()> {
    let trace = pipeline::load_source(&source(args)?)?;
    let report = validate_trace(&trace);
    for v in &report.fatal {
        println!("fatal: {}", v.message);
    }
    for v in report.warnings.iter().take(50) {
        println!("warning: {}", v.message);
    }
    if report.warnings.len() > 50 {
        println!("... {} more warnings", report.warnings.len() - 50);
    }
    println!("{}", report.summary());
    if report.has_fatal() {
        return Err(Error::ValidationFatal(report.fatal.len()));
    }
    Ok(())
}

fn signatures(args: &CommonArgs) -> Result<()> {
    let trace = load_checked(&args.trace)?;
    let (_, sigs) = pipeline::compute_signatures(&trace, args.token_filter);
    pipeline::create_output_dir(&args.out)?;
    let mut bundle = ReportBundle::default();
    pipeline::write_signature_files(&mut bundle, &args.out, &sigs)?;
    finish(&bundle);
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let config = args.config();
    let (analysis, bundle) = pipeline::run_pipeline(&source(&args.common.trace)?, &config, &args.common.out)?;
    finish(&bundle);
    let e = &analysis.effect_sizes;
    println!(
        "within {:.4} +- {:.4}, across {:.4} +- {:.4}, load balance {:.4}, permutation {:.4}",
        e.within_mean,
        e.within_std,
        e.across_mean,
        e.across_std,
        analysis.load_balance.mean,
        analysis.permutation.mean
    );
    match e.cohens_d {
        Some(d) => println!("cohen's d {d:.3}"),
        None => println!("cohen's d undefined"),
    }
    println!(
        "cv accuracy {:.3} +- {:.3}, macro F1 {:.3}",
        analysis.cv.mean_accuracy, analysis.cv.std_accuracy, analysis.cv.macro_f1
    );
    Ok(())
}

fn classify(args: &AnalyzeArgs) -> Result<()> {
    let config = args.config();
    let trace = load_checked(&args.common.trace)?;
    let (_, sigs) = pipeline::compute_signatures(&trace, config.token_filter);
    let cv = pipeline::run_classification(&trace, &sigs, &config)?;
    pipeline::create_output_dir(&args.common.out)?;
    let mut bundle = ReportBundle::default();
    pipeline::write_cv_files(&mut bundle, &args.common.out, &cv)?;
    finish(&bundle);
    println!(
        "cv accuracy {:.3} +- {:.3}, macro F1 {:.3}",
        cv.mean_accuracy, cv.std_accuracy, cv.macro_f1
    );
    Ok(())
}

fn baseline(args: &AnalyzeArgs) -> Result<()> {
    let config = args.config();
    let trace = load_checked(&args.common.trace)?;
    let (counts, _) = pipeline::compute_signatures(&trace, config.token_filter);
    let (lb, perm) = pipeline::run_baselines(&trace, &counts, &config)?;
    pipeline::create_output_dir(&args.common.out)?;
    let mut bundle = ReportBundle::default();
    pipeline::write_baseline_files(&mut bundle, &args.common.out, &lb, &perm)?;
    finish(&bundle);
    println!("load balance {:.4} +- {:.4}", lb.mean, lb.std);
    println!("permutation {:.4} +- {:.4}", perm.mean, perm.std);
    Ok(())
}

fn project(args: &CommonArgs) -> Result<()> {
    let trace = load_checked(&args.trace)?;
    let (_, sigs) = pipeline::compute_signatures(&trace, args.token_filter);
    let (projection, coords) = pipeline::run_projection(&sigs)?;
    pipeline::create_output_dir(&args.out)?;
    let mut bundle = ReportBundle::default();
    pipeline::write_projection_files(&mut bundle, &args.out, &sigs, &projection, &coords)?;
    finish(&bundle);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Validate(args) => validate(args),
        Command::Signatures(args) => signatures(args),
        Command::Analyze(args) => analyze(args),
        Command::Classify(args) => classify(args),
        Command::Baseline(args) => baseline(args),
        Command::Project(args) => project(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

