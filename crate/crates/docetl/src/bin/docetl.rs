use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use docetl::dsl::{
    execute_pipeline, load_datasets, parse_pipeline, print_pipeline, validate_pipeline, DslError,
    PipelineSpec,
};
use docetl::gateway::{Gateway, HttpBackend, ScriptedBackend};
use docetl::model::Tokenizer;
use docetl::optimizer::{optimize_pipeline, LlmAgent, OptimizeError, OptimizerConfig};

/// Exit code for invalid input: parse errors, validation diagnostics,
/// unreadable datasets or rules.
const EXIT_INVALID: u8 = 1;
/// Exit code for hard agent or backend failures.
const EXIT_BACKEND: u8 = 2;

#[derive(Parser)]
#[command(name = "docetl", version, about = "Declarative LLM document processing pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pipeline, writing a rewritten plan plus a decisions log
    Build(CommonArgs),
    /// Execute a pipeline against its datasets
    Run(CommonArgs),
    /// Parse and statically check a pipeline
    Validate {
        /// Pipeline YAML file
        pipeline: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Chat-completions API; requires DOCETL_API_KEY (and optionally
    /// DOCETL_BASE_URL)
    Http,
    /// Deterministic scripted backend driven by a rules file
    Mock,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline YAML file
    pipeline: PathBuf,

    /// Output path (optimized YAML for build, result JSON for run)
    #[arg(short, long)]
    output: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = BackendKind::Http)]
    backend: BackendKind,

    /// Rules file for the mock backend (YAML or JSON list of
    /// match/regex/respond entries)
    #[arg(long)]
    mock_rules: Option<PathBuf>,

    /// Directory for the persistent response cache
    #[arg(long)]
    cache_dir: Option<PathBuf>,

    /// Base optimization sample size
    #[arg(long)]
    sample_size: Option<usize>,

    /// Seed for sampling
    #[arg(long)]
    seed: Option<u64>,

    /// Maximum concurrent backend requests
    #[arg(long)]
    max_in_flight: Option<usize>,

    /// Record agent exchanges alongside the build output
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Build(args) => cmd_build(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Validate { pipeline } => cmd_validate(&pipeline),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: message.into(),
    }
}

fn backend_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_BACKEND,
        message: message.into(),
    }
}

/// Parse-time, validation, and data errors are the user's input being
/// wrong (exit 1); operator errors reaching execution are backend
/// failures (exit 2).
fn classify_dsl(e: &DslError) -> u8 {
    match e {
        DslError::Op(_) => EXIT_BACKEND,
        _ => EXIT_INVALID,
    }
}

fn load_spec(path: &Path) -> Result<PipelineSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    parse_pipeline(&text).map_err(|e| invalid(e.to_string()))
}

fn build_gateway(args: &CommonArgs) -> Result<Gateway, Failure> {
    let mut gateway = match args.backend {
        BackendKind::Mock => {
            let rules = args.mock_rules.as_ref().ok_or_else(|| {
                backend_failure("the mock backend requires --mock-rules <FILE>")
            })?;
            let backend = ScriptedBackend::from_rules_file(rules).map_err(backend_failure)?;
            Gateway::new(Arc::new(backend))
        }
        BackendKind::Http => {
            let backend = HttpBackend::from_env().map_err(|e| backend_failure(e.to_string()))?;
            Gateway::new(Arc::new(backend))
        }
    };
    if let Some(dir) = &args.cache_dir {
        gateway = gateway
            .with_cache_dir(dir.clone())
            .map_err(|e| invalid(format!("cannot use cache dir {}: {e}", dir.display())))?;
    }
    if let Some(n) = args.max_in_flight {
        gateway = gateway.with_max_in_flight(n);
    }
    Ok(gateway)
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let spec = load_spec(path)?;
    let diags = validate_pipeline(&spec);
    if diags.is_empty() {
        println!("{}: pipeline is valid", path.display());
        Ok(())
    } else {
        Err(invalid(format!(
            "{} is not valid:\n{}",
            path.display(),
            diags.join("\n")
        )))
    }
}

fn cmd_run(args: &CommonArgs) -> Result<(), Failure> {
    let mut spec = load_spec(&args.pipeline)?;
    if let Some(output) = &args.output {
        spec.output.path = output.display().to_string();
    }
    let gateway = build_gateway(args)?;
    let (dataset, stats) = execute_pipeline(&spec, &gateway, Tokenizer::default())
        .map_err(|failure| Failure {
            code: classify_dsl(&failure.error),
            message: failure.error.to_string(),
        })?;
    let flagged = dataset
        .iter()
        .filter(|doc| doc.get("_docetl_invalid").is_some())
        .count();
    if flagged > 0 {
        eprintln!("warning: {flagged} documents are flagged _docetl_invalid");
    }
    println!(
        "wrote {} documents to {} ({} LLM calls)",
        dataset.len(),
        spec.output.path,
        stats.total_llm_calls()
    );
    Ok(())
}

fn cmd_build(args: &CommonArgs) -> Result<(), Failure> {
    let spec = load_spec(&args.pipeline)?;
    let data = load_datasets(&spec).map_err(|e| invalid(e.to_string()))?;
    let gateway = build_gateway(args)?;

    let model = spec
        .default_model
        .clone()
        .unwrap_or_else(|| "gpt-4o-mini".to_string());
    let mut agent = LlmAgent::new(&gateway, model);
    if args.trace {
        agent = agent.with_trace();
    }
    let mut config = OptimizerConfig::default();
    if let Some(n) = args.sample_size {
        config.base_sample_size = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let outcome = optimize_pipeline(&spec, &data, &gateway, &agent, &config).map_err(|e| {
        let code = match &e {
            OptimizeError::Agent(_) => EXIT_BACKEND,
            OptimizeError::Dsl(inner) => classify_dsl(inner),
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    })?;

    let out_path = args
        .output
        .clone()
        .unwrap_or_else(|| args.pipeline.with_extension("optimized.yaml"));
    let write = |path: &Path, contents: String| {
        std::fs::write(path, contents)
            .map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))
    };
    write(&out_path, print_pipeline(&outcome.pipeline))?;

    let decisions = outcome
        .decisions
        .iter()
        .map(|record| serde_json::to_string(record).expect("decision record serializes"))
        .collect::<Vec<_>>()
        .join("\n");
    let decisions_path = PathBuf::from(format!("{}.decisions.jsonl", out_path.display()));
    write(&decisions_path, decisions + "\n")?;

    if args.trace {
        let transcript = agent
            .transcript()
            .iter()
            .map(|entry| entry.to_string())
            .collect::<Vec<_>>()
            .join("\n");
        let trace_path = PathBuf::from(format!("{}.trace.jsonl", out_path.display()));
        write(&trace_path, transcript + "\n")?;
    }

    println!(
        "wrote optimized pipeline to {} ({} decisions, {} candidate executions)",
        out_path.display(),
        outcome.decisions.len(),
        outcome.candidate_executions
    );
    Ok(())
}
