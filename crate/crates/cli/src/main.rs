use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use progressive_sfm::pipeline::config::ConfigError;
use progressive_sfm::pipeline::run::{self, read_json, write_json, RunError, RunSummary, SceneSource, StreamDocument};
use progressive_sfm::pipeline::Scenario;
use progressive_sfm::pipeline::export::FinalModel;
use progressive_sfm::simulator::{evaluate, Ordering};

#[derive(Parser)]
#[command(name = "psfm", version, about = "Progressive structure from motion on synthetic match streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario's stream and run the pipeline over it.
    Run(RunArgs),
    /// Run the pipeline over a serialized stream written by `gen`.
    Replay(ReplayArgs),
    /// Score a finished run against its ground-truth scene.
    Eval(EvalArgs),
    /// Write the scene and stream of a scenario without running the pipeline.
    Gen(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Linear,
    Shuffled,
    Periodic,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Master seed, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ordering: Option<OrderingArg>,
    /// Period of the periodic ordering; defaults to cameras / fold.
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "psfm-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Stream JSON written by `gen`.
    #[arg(long)]
    stream: PathBuf,
    /// Scenario JSON supplying pipeline parameters.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    #[arg(long, default_value = "psfm-out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory containing `final/model.json` and `source.json`.
    #[arg(long)]
    out: PathBuf,
    /// Scenario whose scene to score against instead of the run's `source.json`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Pipeline(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Pipeline(e.to_string())
    }
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => Ok(Scenario::load(p)?),
        None => Ok(Scenario::default()),
    }
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario, Failure> {
        let mut s = load_scenario(self.scenario.as_deref())?;
        if let Some(o) = self.ordering {
            s.stream.ordering = match o {
                OrderingArg::Linear => Ordering::Linear,
                OrderingArg::Shuffled => Ordering::Shuffled { seed: s.seed },
                OrderingArg::Periodic => Ordering::Periodic { period: 0 },
            };
        }
        if let Ordering::Periodic { period } = &mut s.stream.ordering {
            if let Some(p) = self.period {
                *period = p;
            } else if *period == 0 {
                *period = s.scene.n_cameras / s.scene.fold.max(1);
            }
            if *period == 0 {
                return Err(Failure::Usage("--period must be positive".into()));
            }
        } else if self.period.is_some() {
            return Err(Failure::Usage("--period needs --ordering periodic".into()));
        }
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        if self.max_events.is_some() {
            s.max_events = self.max_events;
        }
        if let Some(n) = self.snapshot_every {
            s.snapshot_every = n;
        }
        if s.snapshot_every == 0 {
            return Err(Failure::Usage("--snapshot-every must be positive".into()));
        }
        Ok(s)
    }
}

// A closed stdout (say, piped into `head`) is not a failure of the run.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn report(summary: &RunSummary, out: &Path) {
    if let Some(last) = summary.rows.last() {
        say!(
            "events {} clusters_raw {} clusters_effective {} registered {} outliers {} recoveries {}",
            summary.rows.len(),
            last.clusters_raw,
            last.clusters_effective,
            last.registered,
            last.outliers,
            last.recoveries
        );
    }
    say!("wrote {}", out.display());
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => {
            let s = a.scenario.resolve()?;
            let summary = run::run_scenario(&s, Some(&a.out))?;
            report(&summary, &a.out);
        }
        Command::Gen(a) => {
            let s = a.scenario.resolve()?;
            let (scene, doc) = run::generate(&s)?;
            write_json(&a.out.join("scenario.json"), &s)?;
            write_json(&a.out.join("scene.json"), &scene)?;
            write_json(&a.out.join("stream.json"), &doc)?;
            say!("events {} wrote {}", doc.events.len(), a.out.display());
        }
        Command::Replay(a) => {
            if !a.stream.is_file() {
                return Err(Failure::Usage(format!("cannot read {}: no such file", a.stream.display())));
            }
            let mut s = load_scenario(a.scenario.as_deref())?;
            if let Some(seed) = a.seed {
                s = s.with_seed(seed);
            }
            let every = a.snapshot_every.unwrap_or(s.snapshot_every);
            if every == 0 {
                return Err(Failure::Usage("--snapshot-every must be positive".into()));
            }
            let mut doc: StreamDocument = read_json(&a.stream).map_err(|e| Failure::Usage(e.to_string()))?;
            if let Some(n) = a.max_events.or(s.max_events) {
                doc.events.truncate(n);
            }
            let summary = run::replay(&doc, s.resolved().3, Some(&a.out), every)?;
            report(&summary, &a.out);
        }
        Command::Eval(a) => {
            let model_path = a.out.join("final").join("model.json");
            if !model_path.is_file() {
                return Err(Failure::Usage(format!("cannot read {}: no such file", model_path.display())));
            }
            let source: SceneSource = match &a.scenario {
                Some(p) => {
                    let mut s = Scenario::load(p)?;
                    if let Some(seed) = a.seed {
                        s = s.with_seed(seed);
                    }
                    let (scene, scene_seed, _, _) = s.resolved();
                    SceneSource { scene, scene_seed }
                }
                None => {
                    let p = a.out.join("source.json");
                    if !p.is_file() {
                        return Err(Failure::Usage(format!("cannot read {}: no such file", p.display())));
                    }
                    read_json(&p)?
                }
            };
            let model: FinalModel = read_json(&model_path)?;
            let ev = evaluate(&run::model_components(&model), &source.build()?);
            write_json(&a.out.join("evaluation.json"), &ev)?;
            say!("{}", serde_json::to_string_pretty(&ev).expect("evaluation serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("psfm: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("psfm: {msg}");
            ExitCode::from(1)
        }
    }
}
