use std::collections::BTreeMap;
use std::io::IsTerminal;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use aitwin_core::api::{self, ApiConfig, AppContext};
use aitwin_core::script::{render_transcript, run_script, RunOptions, Script};
use aitwin_core::session::{FeedbackMode, GOAL_COUNT};
use aitwin_core::stats::analysis_report;
use aitwin_core::store::{BlobStore, EventStore};
use aitwin_core::study::{make_cohort, LongTable, StudyPlan};
use aitwin_core::ScenarioRegistry;

#[derive(Parser)]
#[command(name = "aitwin", version, about = "Conversation-practice service and study tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// TOML configuration file. Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Run a scripted session against the mock providers and print its transcript.
    MockSession {
        #[arg(long, value_parser = parse_mode)]
        mode: FeedbackMode,
        /// Overrides the scenario named in the script.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        script: PathBuf,
        /// Append events to this JSON Lines log instead of keeping them in memory.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Store audio blobs in this directory.
        #[arg(long)]
        blobs: Option<PathBuf>,
    },
    /// Analyse a long-format study CSV.
    Analyze {
        csv: PathBuf,
        /// JSON plans from `aitwin plan`; enables the Condition x Order test.
        #[arg(long)]
        plans: Option<PathBuf>,
        /// Also write every table as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Inspect the built-in scenarios.
    Scenarios {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Generate counterbalanced plans for a cohort, as JSON.
    Plan {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Print the OpenAPI document.
    Openapi,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    List,
}

fn parse_mode(s: &str) -> Result<FeedbackMode, String> {
    s.parse()
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match Cli::parse().command {
        Command::Serve { config, bind } => serve(config, bind),
        Command::MockSession {
            mode,
            scenario,
            script,
            log,
            blobs,
        } => mock_session(mode, scenario, script, log, blobs),
        Command::Analyze { csv, plans, csv_out } => analyze(csv, plans, csv_out),
        Command::Scenarios {
            command: ScenarioCommand::List,
        } => {
            list_scenarios();
            Ok(())
        }
        Command::Plan { n, seed } => {
            println!("{}", serde_json::to_string_pretty(&make_cohort(n, seed))?);
            Ok(())
        }
        Command::Openapi => {
            print!("{}", api::openapi::openapi_pretty());
            Ok(())
        }
    }
}

fn serve(config: Option<PathBuf>, bind: Option<String>) -> Result<()> {
    let mut cfg = match &config {
        Some(path) => ApiConfig::load(path)?,
        None => ApiConfig::default(),
    };
    if let Some(bind) = bind {
        cfg.bind = bind;
    }
    // Blocking HTTP clients must be built outside the runtime and outlive it.
    let ctx = Arc::new(AppContext::from_config(&cfg).context("building service context")?);
    tracing::info!(provider = ?cfg.provider, events = ctx.store.lock().expect("store lock").last_seq(), "service ready");
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(api::serve(Arc::clone(&ctx), &cfg.bind))?;
    drop(runtime);
    drop(ctx);
    Ok(())
}

fn mock_session(
    mode: FeedbackMode,
    scenario: Option<String>,
    script: PathBuf,
    log: Option<PathBuf>,
    blobs: Option<PathBuf>,
) -> Result<()> {
    let text = std::fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
    let script = Script::from_yaml(&text)?;
    let mut store = match &log {
        Some(p) => EventStore::open(p)?,
        None => EventStore::in_memory(),
    };
    let blobs = match &blobs {
        Some(d) => BlobStore::on_disk(d)?,
        None => BlobStore::in_memory(),
    };
    let opts = RunOptions {
        scenario,
        ..RunOptions::new(mode)
    };
    let run = run_script(&script, &opts, &mut store, &blobs)?;
    print!("{}", render_transcript(&run));
    if run.goals_completed() != GOAL_COUNT {
        bail!(
            "only {} of {GOAL_COUNT} goals completed after {} turns",
            run.goals_completed(),
            run.learner_turns()
        );
    }
    Ok(())
}

fn analyze(csv: PathBuf, plans: Option<PathBuf>, csv_out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
    let matrices = LongTable::from_csv(&text)?.to_matrices()?;
    let groups = match &plans {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let plans: Vec<StudyPlan> = serde_json::from_str(&text).context("parsing plans")?;
            let map: BTreeMap<String, usize> = plans
                .iter()
                .map(|p| (p.participant_id.to_string(), p.order_group()))
                .collect();
            Some(map)
        }
        None => None,
    };
    let report = analysis_report(&matrices, groups.as_ref())?;
    print!("{report}");
    if let Some(out) = csv_out {
        std::fs::write(&out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn list_scenarios() {
    let registry = ScenarioRegistry::builtin();
    println!("{:<8} {:<28} FIRST GOAL", "ID", "TITLE");
    for s in registry.all() {
        println!(
            "{:<8} {:<28} {}",
            s.id,
            s.title,
            s.goals.first().map(String::as_str).unwrap_or("")
        );
    }
}
