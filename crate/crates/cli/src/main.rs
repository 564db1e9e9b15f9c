use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hts_core::harness::config::{Overrides, TaskType};
use hts_core::harness::report::emit_report;
use hts_core::harness::runlog::read_entries;
use hts_core::harness::{classify_entries, HarnessError, TopoSpec, Workspace, REPORT_JSON, RUN_LOG};
use hts_core::metrics::MetricId;
use hts_core::path::PathExpr;
use hts_core::topology::Structure;

#[derive(Parser)]
#[command(name = "chemhts", version, about = "Search and run stacked tool paths")]
struct Cli {
    /// Task config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for path evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score self-stacked depths for every tool and encapsulate the Top-k.
    Warmup,
    /// Run the full search and write report.json.
    Optimize {
        /// Ignore scores already in the run log.
        #[arg(long)]
        no_resume: bool,
    },
    /// Run one input through a path.
    Exec {
        #[arg(long)]
        path: String,
        #[arg(long)]
        input: String,
        /// Gold answer, required by the greedy policy.
        #[arg(long)]
        gold: Option<String>,
    },
    /// Score a path on a dataset file and log per-item predictions.
    Eval {
        #[arg(long)]
        path: String,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run a multi-agent topology baseline.
    Topo {
        /// chain, random, full_connected, layered, star or debate.
        #[arg(long)]
        structure: Structure,
        /// Number of agent nodes, not counting the aggregator.
        #[arg(long)]
        num: u32,
        #[arg(long, default_value_t = 1)]
        rounds: u32,
        #[arg(long, default_value = "")]
        question: String,
        /// Scores the final answer with the config metric.
        #[arg(long)]
        gold: Option<String>,
    },
    /// Behavior-pattern histogram over logged traces, as CSV.
    Classify {
        /// Run log; defaults to the config's.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        metric: Option<MetricId>,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Result tables from logged predictions.
    Report {
        /// Run log; defaults to the config's.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        task_type: Option<TaskTypeArg>,
        /// Directory for report.csv and report.txt; defaults to the log's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskTypeArg {
    Design,
    Captioning,
    Property,
    Reaction,
}

impl From<TaskTypeArg> for TaskType {
    fn from(t: TaskTypeArg) -> Self {
        match t {
            TaskTypeArg::Design => TaskType::Design,
            TaskTypeArg::Captioning => TaskType::Captioning,
            TaskTypeArg::Property => TaskType::Property,
            TaskTypeArg::Reaction => TaskType::Reaction,
        }
    }
}

/// Bad input from the caller; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_path(text: &str) -> Result<PathExpr> {
    PathExpr::parse(text).map_err(|e| usage(format!("invalid path {text:?}: {e}")))
}

impl Cli {
    fn workspace(&self) -> Result<Workspace> {
        let config = self
            .config
            .as_deref()
            .ok_or_else(|| usage("this command needs --config"))?;
        let overrides = Overrides {
            seed: self.seed,
            jobs: self.jobs,
        };
        Ok(Workspace::open(config, overrides, self.output_dir.clone())?)
    }

    /// Log file for read-only commands: explicit, else from the config.
    fn log_path(&self, explicit: Option<&Path>) -> Result<(PathBuf, Option<Workspace>)> {
        match explicit {
            Some(p) if p.as_os_str().is_empty() => Err(usage("empty run-log path")),
            Some(p) => Ok((
                p.to_path_buf(),
                self.config.as_ref().map(|_| self.workspace()).transpose()?,
            )),
            None => {
                let ws = self.workspace()?;
                Ok((ws.config.output_dir.join(RUN_LOG), Some(ws)))
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Warmup => {
            let result = cli.workspace()?.warmup()?;
            for entry in &result.board.entries {
                println!("{:.4}\t{}", entry.score, entry.path);
            }
            let selected: Vec<String> = result.board.selected.iter().map(ToString::to_string).collect();
            println!("selected: {}", selected.join(", "));
        }
        Command::Optimize { no_resume } => {
            let ws = cli.workspace()?;
            let (report, stats) = ws.optimize(!no_resume)?;
            println!("best: {} score {:.4}", report.best.path, report.best.score);
            println!(
                "stop: {}",
                serde_json::to_value(report.stop_reason)?.as_str().unwrap_or("")
            );
            println!("evaluations: {} cache hits: {}", stats.evaluations, stats.cache_hits);
            println!("report: {}", ws.config.output_dir.join(REPORT_JSON).display());
        }
        Command::Exec { path, input, gold } => {
            let path = parse_path(path)?;
            let trace = cli.workspace()?.exec(&path, input, gold.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&trace)?);
        }
        Command::Eval { path, dataset } => {
            let path = parse_path(path)?;
            let scored = cli.workspace()?.eval(&path, dataset)?;
            println!("{}", serde_json::to_string_pretty(&scored)?);
        }
        Command::Topo {
            structure,
            num,
            rounds,
            question,
            gold,
        } => {
            let ws = cli.workspace()?;
            let spec = TopoSpec {
                structure: *structure,
                num: *num,
                rounds: *rounds,
                seed: ws.config.seed,
                question: question.clone(),
                gold: gold.clone(),
            };
            let outcome = ws.topo(&spec)?;
            println!("{}", hts_core::harness::TopoOutcome::CSV_HEADER);
            println!("{}", outcome.csv_row());
        }
        Command::Classify { log, metric, out } => {
            let (log, ws) = cli.log_path(log.as_deref())?;
            let metric = metric
                .or(ws.as_ref().map(|w| w.config.metric))
                .unwrap_or(MetricId::Exact);
            let entries = read_entries(&log)?;
            let csv = classify_entries(&entries, metric)?.to_csv();
            if let Some(out) = out {
                std::fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{csv}");
        }
        Command::Report { log, task_type, out } => {
            let (log, ws) = cli.log_path(log.as_deref())?;
            let task_type = task_type
                .map(TaskType::from)
                .or(ws.as_ref().map(|w| w.config.task_type))
                .unwrap_or(TaskType::Design);
            let entries = read_entries(&log).map_err(|e| usage(e.to_string()))?;
            let dir = match out {
                Some(d) => d.clone(),
                None => log.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let table = emit_report(&entries, task_type, &dir).map_err(HarnessError::from)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|cause| {
        cause.is::<UsageError>() || cause.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_usage)
    });
    if is_usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
