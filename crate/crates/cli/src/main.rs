//! Command-line front end: run, resume, and inspect discovery campaigns.
//!
//! A run specification is one JSON file: the campaign knobs (flat, with
//! defaults) plus bindings for the environment, the proposal generator,
//! and the operator policy. `run` executes the campaign and leaves a
//! self-contained checkpoint directory behind; `resume` picks such a
//! directory up and continues to the budget; the read-only subcommands
//! (`inspect`, `export`, `memory-stats`) never mutate anything.
//!
//! Exit codes: 0 on success, 2 when the inputs are unusable (bad flags,
//! unreadable or invalid configuration), 3 when a campaign itself fails.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use prospector_engine::env::{BitstringEnv, CommandEnv, Environment, SegmentCompositionEnv};
use prospector_engine::harness::{
    load_checkpoint, save_checkpoint, RemoteGenerator, RemoteModelSpec,
};
use prospector_engine::memory::MemoryStore;
use prospector_engine::operators::{BitstringGenerator, ProposalGenerator};
use prospector_engine::rng::Rng;
use prospector_engine::search::{self, DefaultPolicy, OperatorPolicy, PrimaryOnlyPolicy};
use prospector_engine::similarity::HashEncoder;
use prospector_engine::solution_graph::GraphSnapshot;
use prospector_engine::{CampaignConfig, Error, Result, Solution, SolutionKind};

const RUN_SPEC_FILE: &str = "run_spec.json";
const BEST_SOLUTION_FILE: &str = "best_solution.txt";

#[derive(Parser)]
#[command(name = "prospector", version, about = "Run and inspect discovery campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign from a spec file and write a checkpoint.
    Run {
        /// Path to the run specification (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory to create or replace.
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a checkpointed campaign to its budget.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Summarize a checkpoint: progress, best score, strongest nodes.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// How many nodes to list.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Print the solution graph as JSON or DOT.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
    },
    /// Report how much each memory tier holds.
    MemoryStats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Json,
    Dot,
}

// ---------------------------------------------------------------------------
// Run specification

/// The environment a campaign scores its candidates against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EnvSpec {
    /// Hamming similarity to a fixed target string.
    Bitstring { target: String },
    /// Per-segment exact match against a segmented target.
    SegmentComposition { target: String, segments: usize },
    /// Score candidates by running an external command.
    Command {
        command: Vec<String>,
        timeout_secs: f64,
        score_path: String,
        baseline: String,
    },
}

/// Where proposals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GeneratorSpec {
    #[default]
    Bitstring,
    Remote {
        #[serde(flatten)]
        spec: RemoteModelSpec,
    },
}

/// Which operator schedule drives expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum PolicySpec {
    #[default]
    Default,
    PrimaryOnly,
}

/// Everything `run` needs, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunSpec {
    #[serde(flatten)]
    campaign: CampaignConfig,
    environment: EnvSpec,
    #[serde(default)]
    generator: GeneratorSpec,
    #[serde(default)]
    policy: PolicySpec,
    /// Attach the tiered memory store (hints, episodes, distilled
    /// insights) to the campaign.
    #[serde(default)]
    memory: bool,
}

fn load_run_spec(path: &Path) -> Result<RunSpec> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let spec: RunSpec = serde_json::from_str(&raw)
        .map_err(|e| Error::config(format!("cannot parse {}: {e}", path.display())))?;
    spec.campaign.validate()?;
    Ok(spec)
}

fn build_env(spec: &EnvSpec) -> Result<Box<dyn Environment>> {
    Ok(match spec {
        EnvSpec::Bitstring { target } => Box::new(BitstringEnv::new(target.clone())?),
        EnvSpec::SegmentComposition { target, segments } => {
            Box::new(SegmentCompositionEnv::new(target.clone(), *segments)?)
        }
        EnvSpec::Command {
            command,
            timeout_secs,
            score_path,
            baseline,
        } => Box::new(CommandEnv::new(
            command.clone(),
            *timeout_secs,
            score_path.clone(),
            Solution::new(baseline.clone(), SolutionKind::Text)?,
        )?),
    })
}

fn build_generator(spec: &GeneratorSpec) -> Result<Box<dyn ProposalGenerator>> {
    Ok(match spec {
        GeneratorSpec::Bitstring => Box::new(BitstringGenerator),
        GeneratorSpec::Remote { spec } => {
            spec.validate()?;
            Box::new(RemoteGenerator::new(spec.clone()))
        }
    })
}

fn build_policy(spec: PolicySpec) -> Box<dyn OperatorPolicy> {
    match spec {
        PolicySpec::Default => Box::new(DefaultPolicy),
        PolicySpec::PrimaryOnly => Box::new(PrimaryOnlyPolicy),
    }
}

fn fresh_memory(spec: &RunSpec) -> Result<Option<MemoryStore>> {
    if !spec.memory {
        return Ok(None);
    }
    let ids = Rng::seeded(spec.campaign.task.seed).split("memory-ids")?;
    Ok(Some(MemoryStore::new(HashEncoder::default(), ids)))
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_run(config: &Path, out: &Path) -> Result<()> {
    let spec = load_run_spec(config)?;
    let env = build_env(&spec.environment)?;
    let generator = build_generator(&spec.generator)?;
    let policy = build_policy(spec.policy);
    let mut memory = fresh_memory(&spec)?;

    let outcome = search::run(
        &spec.campaign,
        generator.as_ref(),
        env.as_ref(),
        policy.as_ref(),
        memory.as_mut(),
    )?;

    save_checkpoint(
        out,
        &spec.campaign,
        &outcome.state,
        &outcome.events,
        memory.as_ref(),
        None,
    )?;
    finish_campaign_dir(out, &spec, &outcome.solution)?;

    println!(
        "campaign {} finished: {} steps, {} evaluations",
        spec.campaign.task.id, outcome.state.step_index, outcome.state.evals_used
    );
    println!("best score: {:.4}", outcome.score);
    println!("solution: {}", out.join(BEST_SOLUTION_FILE).display());
    Ok(())
}

fn cmd_resume(checkpoint: &Path) -> Result<()> {
    let spec = load_run_spec(&checkpoint.join(RUN_SPEC_FILE))?;
    let loaded = load_checkpoint(checkpoint)?;
    let env = build_env(&spec.environment)?;
    let generator = build_generator(&spec.generator)?;
    let policy = build_policy(spec.policy);
    let mut memory = loaded.memory;

    let mut campaign = search::Campaign::resume(
        loaded.state,
        &loaded.config,
        generator.as_ref(),
        env.as_ref(),
        policy.as_ref(),
        memory.as_mut(),
    );
    let new_events = campaign.run_to_end()?;
    let best_solution = campaign.best_solution()?;
    let (_, score) = campaign.best();
    let (state, _) = campaign.into_parts();

    let mut events = loaded.events;
    events.extend(new_events);
    save_checkpoint(
        checkpoint,
        &loaded.config,
        &state,
        &events,
        memory.as_ref(),
        loaded.flow.as_ref(),
    )?;
    finish_campaign_dir(checkpoint, &spec, &best_solution)?;

    println!(
        "campaign {} resumed: {} steps, {} evaluations",
        loaded.config.task.id, state.step_index, state.evals_used
    );
    println!("best score: {:.4}", score);
    println!("solution: {}", checkpoint.join(BEST_SOLUTION_FILE).display());
    Ok(())
}

/// CLI-owned extras inside a checkpoint directory: the run spec (so
/// `resume` can rebuild the bindings) and the best payload as plain text.
fn finish_campaign_dir(dir: &Path, spec: &RunSpec, best: &Solution) -> Result<()> {
    std::fs::write(
        dir.join(RUN_SPEC_FILE),
        serde_json::to_string_pretty(spec).map_err(Error::from)?,
    )?;
    std::fs::write(dir.join(BEST_SOLUTION_FILE), format!("{}\n", best.payload))?;
    Ok(())
}

fn cmd_inspect(checkpoint: &Path, top: usize) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let graph = &loaded.state.graph;
    println!(
        "task {} — {}",
        loaded.config.task.id, loaded.config.task.objective_text
    );
    println!(
        "steps taken: {}  evaluations: {}/{}",
        loaded.state.step_index, loaded.state.evals_used, loaded.config.task.budget
    );
    println!(
        "nodes: {}  branches: {}  evaluated: {}",
        graph.len(),
        graph.branch_count(),
        graph.evaluated_count()
    );
    println!(
        "best score: {:.4} at node {}",
        loaded.state.best_score, loaded.state.best_node
    );
    println!("top nodes:");
    for id in graph.top_nodes(top) {
        let node = graph.node(id)?;
        let score = node
            .score_value()
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "  {}  score {}  visits {}  {}",
            node.id,
            score,
            node.visits,
            node.operator_tag.as_str()
        );
    }
    Ok(())
}

fn cmd_export(checkpoint: &Path, format: ExportFormat) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let snapshot = loaded.state.graph.snapshot();
    match format {
        ExportFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&snapshot).map_err(Error::from)?)
        }
        ExportFormat::Dot => println!("{}", render_dot(&snapshot)),
    }
    Ok(())
}

fn render_dot(snapshot: &GraphSnapshot) -> String {
    let mut out = String::from("digraph campaign {\n  rankdir=TB;\n  node [shape=box];\n");
    for node in &snapshot.nodes {
        let score = node
            .score_value()
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "unscored".into());
        out.push_str(&format!(
            "  \"{}\" [label=\"{}\\n{} {}\"];\n",
            node.id,
            node.id,
            node.operator_tag.as_str(),
            score
        ));
    }
    for (child, parent) in &snapshot.edges.primary {
        out.push_str(&format!("  \"{parent}\" -> \"{child}\";\n"));
    }
    for (child, reference) in snapshot
        .edges
        .cross_branch_refs
        .iter()
        .chain(&snapshot.edges.aggregation_sources)
    {
        out.push_str(&format!(
            "  \"{reference}\" -> \"{child}\" [style=dashed];\n"
        ));
    }
    out.push_str("}\n");
    out
}

fn cmd_memory_stats(checkpoint: &Path) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    match loaded.memory {
        None => println!("no memory tiers recorded"),
        Some(memory) => {
            println!("encoder dim: {}", memory.dim());
            println!("procedural signatures: {}", memory.signatures().len());
            println!("episodes: {}", memory.episodes().len());
            println!("distilled insights: {}", memory.library().len());
            println!("idea nodes: {}", memory.ideas().len());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dispatch

/// 0 on success, 2 when the inputs were unusable, 3 when the campaign
/// failed.
fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let outcome = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out),
        Command::Resume { checkpoint } => cmd_resume(&checkpoint),
        Command::Inspect { checkpoint, top } => cmd_inspect(&checkpoint, top),
        Command::Export { checkpoint, format } => cmd_export(&checkpoint, format),
        Command::MemoryStats { checkpoint } => cmd_memory_stats(&checkpoint),
    };
    match outcome {
        Ok(()) => 0,
        Err(error) => {
            eprintln!("error: {error}");
            exit_code(&error)
        }
    }
}

fn main() {
    env_logger::init();
    std::process::exit(cli_run(std::env::args_os()));
}
