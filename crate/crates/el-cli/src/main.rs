//! `el` — operator front end for the EL attack-graph engine.
//!
//! Subcommands: `validate`, `collapse`, `run`, `resume`, `export-dot`.
//! Run `el <subcommand> --help` for the flags. Exit codes: 0 the goal
//! fired (or the command succeeded), 1 validation violations, 2 the run
//! went quiescent, 3 a round/time limit stopped it, 4 unreadable or
//! malformed input, 5 environment construction failed. `EL_LOG`
//! (`quiet` | `rounds` | `substeps`) controls what lands on stderr
//! while a run executes; `--instrument` forces `substeps`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use el_core::collapse::collapse;
use el_core::dot::to_dot;
use el_core::engine::{
    Engine, EngineConfig, EngineView, Inspector, RoundReport, RunLimits, RunOutcome,
    SubStepRecord,
};
use el_core::format::{graph_from_json, graph_to_json, SnapshotFile};
use el_core::interactive::InteractiveEnvironment;
use el_core::live::{LiveConfig, LiveEnvironment};
use el_core::scenario::{EnvCheckpoint, Scenario, SimulatedEnvironment};
use el_core::validate::validate;
use el_core::{DurationMs, Environment, Graph, RunSummary, Timestamp};

#[derive(Parser)]
#[command(
    name = "el",
    version,
    about = "Validate, transform, and execute EL attack graphs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a graph against the structural rules.
    Validate {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Merge chained logic nodes into single join points.
    Collapse {
        #[arg(long)]
        graph: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a graph against a simulated or live environment.
    Run(RunArgs),
    /// Continue an interrupted run from a snapshot file.
    Resume(ResumeArgs),
    /// Render a graph as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        graph: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("world").required(true).args(["scenario", "live_config"])))]
struct RunArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Scenario file: deterministic simulated run on a virtual clock.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Live transport config: commands really execute, wall clock.
    #[arg(long)]
    live_config: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
#[command(group(ArgGroup::new("world").required(true).args(["scenario", "live_config"])))]
struct ResumeArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Snapshot produced by an earlier run with --snapshot-path.
    #[arg(long)]
    snapshot: PathBuf,
    /// Scenario file the interrupted run was using.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Live transport config. The wall clock restarts from zero, so
    /// pending delays stretch by the downtime.
    #[arg(long)]
    live_config: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct Tuning {
    /// Write the chronological trace here as JSON Lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// What to print on stdout when the run stops.
    #[arg(long, value_enum, default_value_t = OutputFormat::Summary)]
    format: OutputFormat,
    /// Stop after this many rounds in total (resumed rounds included).
    #[arg(long)]
    max_rounds: Option<u64>,
    /// Stop once the engine clock passes this budget.
    #[arg(long)]
    max_time_ms: Option<u64>,
    /// Merge operator atoms typed on stdin into the alert stream.
    #[arg(long)]
    interactive: bool,
    /// Log per-sub-step health records to stderr (same as EL_LOG=substeps).
    #[arg(long)]
    instrument: bool,
    /// Poll interval while waiting on live or operator sources.
    #[arg(long)]
    tick_ms: Option<u64>,
    /// Additionally write a snapshot every N rounds.
    #[arg(long, value_name = "N", requires = "snapshot_path")]
    snapshot_every: Option<u64>,
    /// Snapshot destination; written whenever the run stops, and at
    /// --snapshot-every boundaries.
    #[arg(long)]
    snapshot_path: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Summary,
    Jsonl,
}

/// An error that already knows its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn input(error: anyhow::Error) -> Self {
        Failure { code: 4, error }
    }
    fn environment(error: anyhow::Error) -> Self {
        Failure { code: 5, error }
    }
}

trait InputExt<T> {
    /// Treats the error as exit-code-4 "bad input".
    fn or_input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputExt<T> for Result<T, E> {
    fn or_input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::input(e.into()))
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.cmd {
        Cmd::Validate { graph } => cmd_validate(&graph),
        Cmd::Collapse { graph, out } => cmd_collapse(&graph, out.as_deref()),
        Cmd::ExportDot { graph, out } => cmd_export_dot(&graph, out.as_deref()),
        Cmd::Run(args) => {
            let world = WorldSpec::new(args.scenario, args.live_config, None)?;
            cmd_run(&args.graph, world, &args.tuning)
        }
        Cmd::Resume(args) => {
            let world = WorldSpec::new(args.scenario, args.live_config, Some(args.snapshot))?;
            cmd_run(&args.graph, world, &args.tuning)
        }
    }
}

fn load_graph(path: &Path) -> Result<Graph, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading graph file {}", path.display()))
        .or_input()?;
    graph_from_json(&text)
        .with_context(|| format!("parsing graph file {}", path.display()))
        .or_input()
}

fn write_out(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, content)
            .with_context(|| format!("writing {}", path.display()))
            .or_input(),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_validate(graph: &Path) -> Result<u8, Failure> {
    let g = load_graph(graph)?;
    let report = validate(&g);
    print!("{report}");
    Ok(if report.is_valid() { 0 } else { 1 })
}

fn cmd_collapse(graph: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let g = load_graph(graph)?;
    let collapsed = collapse(&g)
        .with_context(|| format!("collapsing {}", graph.display()))
        .or_input()?;
    write_out(out, &graph_to_json(&collapsed))?;
    Ok(0)
}

fn cmd_export_dot(graph: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let g = load_graph(graph)?;
    let report = validate(&g);
    if !report.is_valid() {
        eprint!("refusing to render an invalid graph:\n{report}");
        return Ok(1);
    }
    write_out(out, &to_dot(&g))?;
    Ok(0)
}

/// Which environment a run executes against, and an optional snapshot
/// to continue from.
struct WorldSpec {
    scenario: Option<PathBuf>,
    live_config: Option<PathBuf>,
    snapshot: Option<PathBuf>,
}

impl WorldSpec {
    fn new(
        scenario: Option<PathBuf>,
        live_config: Option<PathBuf>,
        snapshot: Option<PathBuf>,
    ) -> Result<Self, Failure> {
        // clap enforces exactly one of scenario/live_config.
        Ok(WorldSpec { scenario, live_config, snapshot })
    }

    fn is_live(&self) -> bool {
        self.live_config.is_some()
    }
}

/// The concrete environment stack behind a run. Spelled out as an enum
/// so snapshots can reach the simulated environment's checkpoint
/// through whatever wrapping is in place.
enum World {
    Sim(SimulatedEnvironment),
    SimOp(InteractiveEnvironment<SimulatedEnvironment>),
    Live(LiveEnvironment),
    LiveOp(InteractiveEnvironment<LiveEnvironment>),
}

impl World {
    fn env(&mut self) -> &mut dyn Environment {
        match self {
            World::Sim(e) => e,
            World::SimOp(e) => e,
            World::Live(e) => e,
            World::LiveOp(e) => e,
        }
    }

    fn checkpoint(&self) -> Option<EnvCheckpoint> {
        match self {
            World::Sim(e) => Some(e.checkpoint()),
            World::SimOp(e) => Some(e.inner().checkpoint()),
            World::Live(_) | World::LiveOp(_) => None,
        }
    }
}

fn build_world(
    spec: &WorldSpec,
    restored: Option<EnvCheckpoint>,
    interactive: bool,
) -> Result<World, Failure> {
    if let Some(path) = &spec.scenario {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading scenario file {}", path.display()))
            .or_input()?;
        let scenario = Scenario::from_json(&text)
            .with_context(|| format!("parsing scenario file {}", path.display()))
            .or_input()?;
        let env = match restored {
            Some(checkpoint) => SimulatedEnvironment::restore(scenario, checkpoint)
                .map_err(|msg| Failure::environment(anyhow::anyhow!(msg)))?,
            None => SimulatedEnvironment::new(scenario),
        };
        return Ok(if interactive {
            World::SimOp(InteractiveEnvironment::over_stdin(env))
        } else {
            World::Sim(env)
        });
    }

    let path = spec.live_config.as_ref().expect("clap guarantees one world source");
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading live config {}", path.display()))
        .or_input()?;
    let cfg = LiveConfig::from_json(&text)
        .with_context(|| format!("parsing live config {}", path.display()))
        .or_input()?;
    let env = LiveEnvironment::new(cfg);
    Ok(if interactive {
        World::LiveOp(InteractiveEnvironment::over_stdin(env))
    } else {
        World::Live(env)
    })
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Verbosity {
    Quiet,
    Rounds,
    SubSteps,
}

fn verbosity(instrument_flag: bool) -> Verbosity {
    if instrument_flag {
        return Verbosity::SubSteps;
    }
    match std::env::var("EL_LOG").ok().as_deref() {
        Some("rounds") | Some("1") => Verbosity::Rounds,
        Some("substeps") | Some("debug") | Some("2") => Verbosity::SubSteps,
        Some("quiet") | Some("off") | Some("0") | Some("") | None => Verbosity::Quiet,
        Some(other) => {
            eprintln!("warning: unknown EL_LOG value {other:?}, expected quiet|rounds|substeps");
            Verbosity::Quiet
        }
    }
}

struct LogInspector {
    verbosity: Verbosity,
}

impl Inspector for LogInspector {
    fn sub_step(&mut self, r: &SubStepRecord) {
        if self.verbosity >= Verbosity::SubSteps {
            eprintln!(
                "[r{} {} @{}] delayed={} active={} fired={} measure=({},{},{}) partition={} {}",
                r.round,
                r.step,
                r.time,
                r.delayed,
                r.active,
                r.fired,
                r.measure.loop_total,
                r.measure.path_total,
                r.measure.delayed_count,
                if r.partition_ok { "ok" } else { "VIOLATED" },
                if r.state_changed { "changed" } else { "unchanged" },
            );
        }
    }

    fn round_end(&mut self, report: &RoundReport, _view: &EngineView<'_>) {
        if self.verbosity >= Verbosity::Rounds {
            eprintln!(
                "[round {} @{}] alerts={} triggered={} newly_fired={} done={}",
                report.round,
                report.time,
                report.alerts.len(),
                Joined(&report.triggered),
                Joined(&report.newly_fired),
                report.done,
            );
        }
    }
}

/// Comma-joined node ids for log lines.
struct Joined<'a>(&'a std::collections::BTreeSet<el_core::NodeId>);

impl fmt::Display for Joined<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

fn cmd_run(graph_path: &Path, spec: WorldSpec, tuning: &Tuning) -> Result<u8, Failure> {
    let graph = load_graph(graph_path)?;

    let level = verbosity(tuning.instrument);
    let mut cfg = if spec.is_live() { EngineConfig::live() } else { EngineConfig::simulated() };
    if let Some(ms) = tuning.tick_ms {
        cfg = cfg.with_tick(ms);
    }
    if level >= Verbosity::SubSteps {
        cfg = cfg.with_instrumentation();
    }

    // An engine either starts fresh or continues from the snapshot; the
    // environment mirrors that choice.
    let snapshot_file = match &spec.snapshot {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading snapshot {}", path.display()))
                .or_input()?;
            Some(
                SnapshotFile::from_json(&text)
                    .with_context(|| format!("parsing snapshot {}", path.display()))
                    .or_input()?,
            )
        }
    };
    let mut engine = match &snapshot_file {
        None => Engine::new(&graph, cfg).or_input()?,
        Some(snapshot) => Engine::resume(&graph, cfg, snapshot).or_input()?,
    };
    let restored_env = snapshot_file.and_then(|s| s.env);
    let mut world = build_world(&spec, restored_env, tuning.interactive)?;

    let mut inspector = LogInspector { verbosity: level };
    let max_time = tuning.max_time_ms.map(DurationMs::new);
    let budget_spent = |summary: &RunSummary| {
        max_time.is_some_and(|b| {
            summary.final_time.since(Timestamp::ZERO).map_or(true, |used| used >= b.millis())
        })
    };

    let code = loop {
        // Pause at the next snapshot boundary if one is configured.
        let boundary = tuning.snapshot_every.map(|n| engine.round() + n.max(1));
        let max_rounds = match (boundary, tuning.max_rounds) {
            (Some(b), Some(m)) => Some(b.min(m)),
            (Some(b), None) => Some(b),
            (None, m) => m,
        };
        let limits = RunLimits { max_rounds, max_time };
        let summary = engine.run(world.env(), limits, Some(&mut inspector)).or_input()?;

        if let Some(path) = &tuning.snapshot_path {
            let snapshot = engine.snapshot(world.checkpoint());
            fs::write(path, snapshot.to_json())
                .with_context(|| format!("writing snapshot {}", path.display()))
                .or_input()?;
        }

        match summary.outcome {
            RunOutcome::Done => break 0,
            RunOutcome::Quiescent => break 2,
            RunOutcome::RoundLimit => {
                let user_rounds_hit = tuning.max_rounds.is_some_and(|m| engine.round() >= m);
                let at_boundary = boundary.is_some_and(|b| engine.round() >= b);
                if at_boundary && !user_rounds_hit && !budget_spent(&summary) {
                    continue; // only the snapshot boundary stopped us
                }
                break 3;
            }
        }
    };

    let outcome_word = match code {
        0 => "done",
        2 => "quiescent",
        _ => "limit",
    };
    eprintln!(
        "run {}: {} rounds, engine clock {}ms, graph {}",
        outcome_word,
        engine.round(),
        engine.now(),
        graph_path.display()
    );

    let trace = engine.state().trace();
    if let Some(path) = &tuning.trace {
        fs::write(path, trace.to_jsonl())
            .with_context(|| format!("writing trace {}", path.display()))
            .or_input()?;
    }
    match tuning.format {
        OutputFormat::Summary => print!("{}", trace.to_summary()),
        OutputFormat::Jsonl => print!("{}", trace.to_jsonl()),
    }

    Ok(code)
}
