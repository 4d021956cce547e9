//! Command-line entry points: `profile`, `audit`, `kb validate|import`,
//! and `graph`. Exit codes: 0 ok, 2 input error, 3 gateway error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use solaudit::config::AuditConfig;
use solaudit::knowledge::{entry_from_markdown, entry_to_xml, load_kb, parse_entry_xml};
use solaudit::pipeline::{
    build_gateway, load_project, run_audit, run_profile, write_report, AuditRunOptions,
    PipelineError,
};
use solaudit::report::write_atomic;

#[derive(Parser)]
#[command(
    name = "solaudit",
    version,
    about = "Smart-contract auditing pipeline: graph-clustered batching, \
             model-driven hypothesis generation, verification cascade"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scripted scenario pack (JSON) replacing the live model backend.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Betweenness weight in the importance score.
    #[arg(long)]
    alpha: Option<f64>,
    /// PageRank weight in the importance score.
    #[arg(long)]
    beta: Option<f64>,
    /// Community detection seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Batch token limit.
    #[arg(long)]
    token_limit: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a project into scored, tagged batches.
    Profile {
        /// Project directory, .sol file, or .json fact file.
        input: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        /// Skip model-driven refinement; emit structural batches only.
        #[arg(long)]
        no_llm: bool,
    },
    /// Run the full audit pipeline and write a findings report.
    Audit {
        input: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        /// Emit raw hypotheses without the verification cascade.
        #[arg(long)]
        skip_verifier: bool,
        /// Dedup clustering radius.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Knowledge base directory.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Search stub scenario (JSON) for lineage augmentation.
        #[arg(long)]
        search_stub: Option<PathBuf>,
        /// Report format.
        #[arg(long, default_value = "json", value_parser = ["json", "md"])]
        format: String,
    },
    /// Knowledge base maintenance.
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Dump the dependency graph.
    Graph {
        input: PathBuf,
        /// Dump format.
        #[arg(long, default_value = "dot", value_parser = ["dot", "json"])]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KbAction {
    /// Check every entry file in a knowledge base directory.
    Validate { dir: PathBuf },
    /// Convert markdown reports (## Pattern / ## Instance / ## Trace)
    /// into entry XML files.
    Import {
        files: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn effective_config(common: &CommonFlags) -> Result<AuditConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => AuditConfig::from_file(path)
            .map_err(|e| PipelineError::Input(e.to_string()))?,
        None => AuditConfig::default(),
    };
    cfg.apply_env()
        .map_err(|e| PipelineError::Input(e.to_string()))?;
    if let Some(alpha) = common.alpha {
        cfg.profiler.alpha = alpha;
    }
    if let Some(beta) = common.beta {
        cfg.profiler.beta = beta;
    }
    if let Some(seed) = common.seed {
        cfg.profiler.seed = seed;
    }
    if let Some(limit) = common.token_limit {
        cfg.profiler.token_limit = limit;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, payload: &str) -> Result<(), PipelineError> {
    match out {
        Some(path) => write_atomic(path, payload)
            .map_err(|e| PipelineError::Input(format!("writing {}: {e}", path.display()))),
        None => {
            println!("{payload}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Profile {
            input,
            common,
            no_llm,
        } => {
            let cfg = effective_config(&common)?;
            let project = load_project(&input)?;
            let gateway = if no_llm {
                None
            } else {
                Some(build_gateway(&cfg, common.scenario.as_deref())?)
            };
            let output = run_profile(&project, &cfg, gateway.as_ref())?;
            let payload = serde_json::to_string_pretty(&serde_json::json!({
                "project": project.name,
                "config_fingerprint": cfg.fingerprint(),
                "batches": output.plan.batches,
            }))
            .expect("plan serializes");
            emit(common.out.as_deref(), &payload)
        }
        Command::Audit {
            input,
            common,
            skip_verifier,
            epsilon,
            kb,
            search_stub,
            format,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(epsilon) = epsilon {
                cfg.verifier.epsilon = epsilon;
            }
            if let Some(kb) = kb {
                cfg.kb_dir = kb.to_string_lossy().into_owned();
            }
            let project = load_project(&input)?;
            let gateway = build_gateway(&cfg, common.scenario.as_deref())?;
            let options = AuditRunOptions {
                skip_verifier,
                search_stub,
            };
            let report = run_audit(&project, &cfg, &gateway, &options)?;
            match common.out.as_deref() {
                Some(path) => write_report(&report, path, &format)?,
                None => {
                    let payload = if format == "md" {
                        report.to_markdown()
                    } else {
                        report.to_json()
                    };
                    println!("{payload}");
                }
            }
            Ok(())
        }
        Command::Kb { action } => match action {
            KbAction::Validate { dir } => {
                let index = load_kb(&dir).map_err(|e| PipelineError::Input(e.to_string()))?;
                if index.warnings.is_empty() {
                    println!("ok: {} categories", index.len());
                    Ok(())
                } else {
                    for warning in &index.warnings {
                        eprintln!("{}: {}", warning.path, warning.message);
                    }
                    Err(PipelineError::Input(format!(
                        "{} invalid knowledge file(s)",
                        index.warnings.len()
                    )))
                }
            }
            KbAction::Import { files, out_dir } => {
                if files.is_empty() {
                    return Err(PipelineError::Input("no markdown files given".into()));
                }
                std::fs::create_dir_all(&out_dir).map_err(|e| {
                    PipelineError::Input(format!("creating {}: {e}", out_dir.display()))
                })?;
                for file in files {
                    let text = std::fs::read_to_string(&file).map_err(|e| {
                        PipelineError::Input(format!("reading {}: {e}", file.display()))
                    })?;
                    let stem = file
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "entry".into());
                    let entry = entry_from_markdown(&text, &stem).map_err(|e| {
                        PipelineError::Input(format!("{}: {e}", file.display()))
                    })?;
                    let xml = entry_to_xml(&entry);
                    // Sanity: the writer must emit what the loader accepts.
                    parse_entry_xml(&xml, &stem)
                        .map_err(|e| PipelineError::Input(format!("{}: {e}", file.display())))?;
                    let out_path = out_dir.join(format!("{stem}.xml"));
                    write_atomic(&out_path, &xml).map_err(|e| {
                        PipelineError::Input(format!("writing {}: {e}", out_path.display()))
                    })?;
                    println!("wrote {}", out_path.display());
                }
                Ok(())
            }
        },
        Command::Graph { input, format, out } => {
            let project = load_project(&input)?;
            let graph = solaudit::graph::build_graph(&project.facts);
            let payload = match format.as_str() {
                "json" => serde_json::to_string_pretty(&graph.to_adjacency_json())
                    .expect("graph serializes"),
                _ => graph.to_dot(),
            };
            emit(out.as_deref(), &payload)
        }
    }
}
