//! Command implementations behind the `vitalnav` binary. Each command writes
//! its report to `out`, diagnostics to `err`, and returns the exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use vitalnav_core::graph::{load_corpus, load_graph, GraphError, TreatmentGraph};
use vitalnav_core::scenario::{run_scenario, Script};
use vitalnav_core::stats::{vital_occurrence_stats, StatsReport};
use vitalnav_core::validate::{validate_graph, ValidationReport};
use vitalnav_core::wire::TraceFile;
use vitalnav_core::{Engine, EngineConfig};
use vitalnav_service::{ServeError, ServiceConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FINDINGS: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "vitalnav", version, about = "Treatment-graph navigation with live vital signs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    #[default]
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check graphs for unreachable nodes and structural problems.
    Validate(ValidateArgs),
    /// Count vital requirements across a corpus of graphs.
    Stats(StatsArgs),
    /// Run a device trace and an operator script against one graph.
    Replay(ReplayArgs),
    /// Start the HTTP service and device listener.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Graph file or directory of graph files.
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory of graph files.
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Graph file, or a directory together with --graph-id. Defaults to the
    /// config's graph directory.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Which graph to run when several are loaded.
    #[arg(long)]
    pub graph_id: Option<String>,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub script: PathBuf,
    /// Service config supplying thresholds, dosage rules and timing settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// A failure that maps to an exit code and a message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let result = match cli.command {
        Command::Validate(args) => cmd_validate(&args, out),
        Command::Stats(args) => cmd_stats(&args, out),
        Command::Replay(args) => cmd_replay(&args, out),
        Command::Serve(args) => cmd_serve(&args, err),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            let _ = writeln!(err, "error: {}", failure.message);
            failure.code
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes()).map_err(|e| Failure { code: EXIT_INPUT, message: format!("write failed: {e}") })
}

fn load_graphs(path: &Path) -> Result<Vec<TreatmentGraph>, GraphError> {
    if path.is_dir() {
        load_corpus(path)
    } else {
        load_graph(path).map(|g| vec![g])
    }
}

pub fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let graphs = load_graphs(&args.graphs).map_err(|e| Failure::input(e.to_string()))?;
    let reports: Vec<ValidationReport> = graphs.iter().map(validate_graph).collect();
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n",
        Format::Table => validation_table(&reports),
    };
    write_out(out, &text)?;
    Ok(if reports.iter().all(ValidationReport::is_clean) { EXIT_OK } else { EXIT_FINDINGS })
}

fn validation_table(reports: &[ValidationReport]) -> String {
    let mut text = String::new();
    for report in reports {
        let status = if report.is_clean() { "ok" } else { "FINDINGS" };
        text.push_str(&format!("{}: {status}\n", report.graph_id));
        for finding in &report.findings {
            text.push_str(&format!("  - {finding}\n"));
        }
    }
    text
}

pub fn cmd_stats(args: &StatsArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    if !args.graphs.is_dir() {
        return Err(Failure::input(format!("{} is not a directory", args.graphs.display())));
    }
    let corpus = load_corpus(&args.graphs).map_err(|e| Failure::input(e.to_string()))?;
    let report = vital_occurrence_stats(&corpus);
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        Format::Table => stats_table(&report),
    };
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

fn ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.3}"))
}

fn stats_table(report: &StatsReport) -> String {
    let ranked = report.ranked_counts();
    let total: usize = ranked.iter().map(|(_, c)| c).sum();
    let width = ranked.iter().map(|(k, _)| k.name().len()).max().unwrap_or(4).max(4);
    let mut text = format!("{:<width$}  {:>5}  {:>6}\n", "kind", "count", "share");
    for (kind, count) in &ranked {
        let share = *count as f64 / total as f64;
        text.push_str(&format!("{:<width$}  {count:>5}  {share:>6.3}\n", kind.name()));
    }
    text.push_str(&format!(
        "\ntreatment paths needing vitals:     {}/{} ({})\n",
        report.treatment_paths.needing_vitals,
        report.treatment_paths.total,
        ratio(report.treatment_path_ratio())
    ));
    text.push_str(&format!(
        "standard procedures needing vitals: {}/{} ({})\n",
        report.standard_procedures.needing_vitals,
        report.standard_procedures.total,
        ratio(report.standard_procedure_ratio())
    ));
    text
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let service = match &args.config {
        Some(path) => Some(ServiceConfig::load(path).map_err(|e| Failure::input(e.to_string()))?),
        None => None,
    };
    let config = match &service {
        Some(service) => service.engine_config().map_err(|e| Failure::input(e.to_string()))?,
        None => EngineConfig::default(),
    };
    let graph_path = args
        .graphs
        .clone()
        .or_else(|| service.as_ref().map(|s| s.graph_dir.clone()))
        .ok_or_else(|| Failure::input("no graphs given: pass --graphs or --config"))?;
    let graphs = load_graphs(&graph_path).map_err(|e| Failure::input(e.to_string()))?;
    let graph_id = match (&args.graph_id, graphs.as_slice()) {
        (Some(id), _) => id.clone(),
        (None, [only]) => only.id().to_string(),
        (None, _) => return Err(Failure::input("several graphs loaded: pass --graph-id")),
    };
    let trace = TraceFile::parse(&read(&args.trace)?)
        .map_err(|e| Failure::input(format!("{}: {e}", args.trace.display())))?;
    let script =
        Script::parse(&read(&args.script)?).map_err(|e| Failure::input(format!("{}: {e}", args.script.display())))?;

    let mut engine = Engine::new(config, graphs);
    let outcome = match run_scenario(&mut engine, &graph_id, &trace, &script) {
        Ok(outcome) => outcome,
        Err(vitalnav_core::scenario::ScenarioError::Engine(e)) => return Err(Failure::input(e.to_string())),
        Err(e) => return Err(Failure { code: EXIT_FINDINGS, message: e.to_string() }),
    };
    write_out(out, &outcome.render())?;
    Ok(EXIT_OK)
}

pub fn cmd_serve(args: &ServeArgs, err: &mut dyn Write) -> Result<u8, Failure> {
    let config = ServiceConfig::load(&args.config).map_err(|e| Failure::input(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::input(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let service = vitalnav_service::serve(&config).await.map_err(|e| match e {
            ServeError::Config(e) => Failure::input(e.to_string()),
            ServeError::Bind { .. } => Failure::input(e.to_string()),
        })?;
        let _ = writeln!(err, "http on {}, devices on {}", service.http_addr, service.device_addr);
        let _ = err.flush();
        tokio::select! {
            result = service.wait() => result.map_err(|e| Failure::input(format!("server stopped: {e}")))?,
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(EXIT_OK)
    })
}
