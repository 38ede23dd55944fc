use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use pedwarn::ego_state::EgoRecord;
use pedwarn::eval::{aggregate, evaluate, EvalReport};
use pedwarn::logs::{read_jsonl, write_jsonl, TruthRecord, WarningRecord};
use pedwarn::pipeline::{run_pipeline, run_pipeline_with_provider};
use pedwarn::plot::{analysis_tracks, timeline_events, timeline_svg, trajectory_svg};
use pedwarn::route::ROUTE_URL_ENV;
use pedwarn::scenario::presets;
use pedwarn::{Detection, Error, ProviderKind, RoutePath, RunConfig, Scenario};

const DETECTIONS: &str = "detections.jsonl";
const EGO: &str = "ego.jsonl";
const TRUTH: &str = "truth.jsonl";
const WARNINGS: &str = "warnings.jsonl";
const ROUTE: &str = "route.json";
const SCENARIO: &str = "scenario.json";

#[derive(Parser)]
#[command(
    name = "pedwarn",
    version,
    about = "Pedestrian early-warning simulator and log replayer"
)]
struct Cli {
    /// JSON run configuration. Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of a simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Preset name or path to a scenario JSON file.
    #[arg(long, global = true, default_value = "fig5")]
    scenario: String,
    /// Route source. Without it, `run` uses route.json from the input directory.
    #[arg(long, global = true, value_enum)]
    route_provider: Option<ProviderArg>,
    /// Routing service endpoint for the http provider.
    #[arg(long, global = true, env = ROUTE_URL_ENV)]
    route_url: Option<String>,
    /// Route JSON for the file provider.
    #[arg(long, global = true)]
    route_file: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Line,
    File,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Trajectory,
    Timeline,
}

#[derive(Subcommand)]
enum Command {
    /// Generate detection, ego and truth logs for a scenario.
    Simulate,
    /// Replay logs through the warning pipeline and write warnings.jsonl.
    Run {
        /// Directory holding detections.jsonl and ego.jsonl. Defaults to --out-dir.
        #[arg(long)]
        in_dir: Option<PathBuf>,
    },
    /// Score warnings against truth, either for existing logs or a batch of seeds.
    Eval {
        /// Evaluate warnings.jsonl, truth.jsonl and route.json in this directory.
        #[arg(long, conflicts_with = "seeds")]
        logs: Option<PathBuf>,
        /// Simulate and score this many consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Render an SVG figure from logs.
    Plot {
        #[arg(long, value_enum, default_value = "trajectory")]
        kind: PlotKind,
        /// Directory holding the logs. Defaults to --out-dir.
        #[arg(long)]
        in_dir: Option<PathBuf>,
        /// Output file. Defaults to <out-dir>/<kind>.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List presets, or print one as scenario JSON.
    Preset { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), String> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => simulate(cli, &cfg),
        Command::Run { in_dir } => run(cli, &cfg, in_dir.as_deref().unwrap_or(&cli.out_dir)),
        Command::Eval { logs: Some(dir), .. } => eval_logs(cli, &cfg, dir),
        Command::Eval { logs: None, seeds } => eval_batch(cli, &cfg, *seeds),
        Command::Plot { kind, in_dir, out } => plot(cli, &cfg, *kind, in_dir.as_deref(), out.as_deref()),
        Command::Preset { name } => preset(name.as_deref()),
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(with_path(path))?,
        None => RunConfig::default(),
    };
    if let Some(p) = cli.route_provider {
        cfg.route.provider = match p {
            ProviderArg::Line => ProviderKind::Line,
            ProviderArg::File => ProviderKind::File,
            ProviderArg::Http => ProviderKind::Http,
        };
    }
    if let Some(url) = &cli.route_url {
        cfg.route.url = Some(url.clone());
    }
    if let Some(file) = &cli.route_file {
        cfg.route.file = Some(file.clone());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// A preset by name, or a scenario file. Files that omit the camera or
/// sensor blocks take them from the run configuration.
fn load_scenario(name_or_path: &str, cfg: &RunConfig) -> Result<Scenario, String> {
    if let Some(s) = presets::get(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(format!(
            "unknown scenario {name_or_path:?}; presets are {}",
            presets::NAMES.join(", ")
        ));
    }
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("camera").or_insert_with(|| json!(cfg.camera));
        obj.entry("sensors").or_insert_with(|| json!(cfg.sensors));
    }
    serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_log<T: serde::Serialize>(dir: &Path, name: &str, records: &[T]) -> Result<(), String> {
    let path = dir.join(name);
    write_jsonl(&path, records).map_err(with_path(&path))
}

fn read_log<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, String> {
    let path = dir.join(name);
    read_jsonl(&path).map_err(with_path(&path))
}

fn read_optional_log<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, String> {
    if dir.join(name).exists() {
        read_log(dir, name)
    } else {
        Ok(Vec::new())
    }
}

fn read_route(path: &Path) -> Result<RoutePath, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    RoutePath::from_json(&text).map_err(with_path(path))
}

fn simulate(cli: &Cli, cfg: &RunConfig) -> Result<(), String> {
    let scenario = load_scenario(&cli.scenario, cfg)?.with_seed(cli.seed);
    let logs = scenario.generate().map_err(|e| e.to_string())?;
    let dir = &cli.out_dir;
    create_dir(dir)?;
    write_log(dir, DETECTIONS, &logs.detections)?;
    write_log(dir, EGO, &logs.ego)?;
    write_log(dir, TRUTH, &logs.truth)?;
    write_text(&dir.join(ROUTE), &(logs.route.to_json() + "\n"))?;
    let scenario_json = serde_json::to_string_pretty(&scenario).map_err(|e| e.to_string())?;
    write_text(&dir.join(SCENARIO), &(scenario_json + "\n"))?;
    eprintln!(
        "simulated {} (seed {}): {} detections, {} ego records -> {}",
        scenario.name,
        scenario.seed,
        logs.detections.len(),
        logs.ego.len(),
        dir.display()
    );
    Ok(())
}

fn run(cli: &Cli, cfg: &RunConfig, in_dir: &Path) -> Result<(), String> {
    let detections: Vec<Detection> = read_log(in_dir, DETECTIONS)?;
    let ego: Vec<EgoRecord> = read_optional_log(in_dir, EGO)?;
    let output = match cli.route_provider {
        None => {
            let route = read_route(&in_dir.join(ROUTE))?;
            run_pipeline(cfg, &detections, &ego, route)
        }
        Some(_) => {
            let mut cfg = cfg.clone();
            if cfg.route.provider == ProviderKind::File && cfg.route.file.is_none() {
                cfg.route.file = Some(in_dir.join(ROUTE));
            }
            run_pipeline_with_provider(&cfg, &detections, &ego)
        }
    }
    .map_err(|e| e.to_string())?;

    let records: Vec<WarningRecord> = output.warnings.iter().map(WarningRecord::from).collect();
    create_dir(&cli.out_dir)?;
    write_log(&cli.out_dir, WARNINGS, &records)?;
    eprintln!("{}", serde_json::to_string(&output.summary).map_err(|e| e.to_string())?);
    Ok(())
}

fn eval_logs(cli: &Cli, cfg: &RunConfig, dir: &Path) -> Result<(), String> {
    let warnings: Vec<WarningRecord> = read_log(dir, WARNINGS)?;
    let truth: Vec<TruthRecord> = read_log(dir, TRUTH)?;
    let route = read_route(&dir.join(ROUTE))?;
    let report =
        evaluate(&dir.display().to_string(), &warnings, &truth, &route, &cfg.conflict).map_err(|e| e.to_string())?;
    emit_report(
        cli,
        &json!({ "runs": [report], "aggregate": aggregate(std::slice::from_ref(&report)) }),
    )
}

fn eval_one(scenario: &Scenario, cfg: &RunConfig) -> Result<EvalReport, Error> {
    let logs = scenario.generate()?;
    let output = run_pipeline(cfg, &logs.detections, &logs.ego, logs.route.clone())?;
    let warnings: Vec<WarningRecord> = output.warnings.iter().map(WarningRecord::from).collect();
    let mut report = evaluate(&scenario.name, &warnings, &logs.truth, &logs.route, &cfg.conflict)?;
    report.seed = Some(scenario.seed);
    Ok(report)
}

fn eval_batch(cli: &Cli, cfg: &RunConfig, seeds: u64) -> Result<(), String> {
    let base = load_scenario(&cli.scenario, cfg)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let seeds: Vec<u64> = (cli.seed..cli.seed + seeds.max(1)).collect();
    let chunk = seeds.len().div_ceil(workers as usize).max(1);

    // Runs share nothing mutable; results are re-ordered by seed afterwards.
    let results: Vec<Result<EvalReport, Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                let base = &base;
                scope.spawn(move || {
                    part.iter()
                        .map(|&s| eval_one(&base.clone().with_seed(s), cfg))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("eval worker panicked"))
            .collect()
    });
    let reports: Vec<EvalReport> = results
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    emit_report(cli, &json!({ "runs": reports, "aggregate": aggregate(&reports) }))
}

fn emit_report(cli: &Cli, value: &serde_json::Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())? + "\n";
    create_dir(&cli.out_dir)?;
    write_text(&cli.out_dir.join("eval.json"), &text)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&value["aggregate"]).map_err(|e| e.to_string())?
    );
    Ok(())
}

fn plot(cli: &Cli, cfg: &RunConfig, kind: PlotKind, in_dir: Option<&Path>, out: Option<&Path>) -> Result<(), String> {
    let dir = in_dir.unwrap_or(&cli.out_dir);
    let detections: Vec<Detection> = read_optional_log(dir, DETECTIONS)?;
    let title = dir.display().to_string();
    let (svg, empty, name) = match kind {
        PlotKind::Trajectory => {
            let ego: Vec<EgoRecord> = read_optional_log(dir, EGO)?;
            let tracks = analysis_tracks(&detections, &ego, cfg.sensors).map_err(|e| e.to_string())?;
            (trajectory_svg(&tracks, &title), tracks.is_empty(), "trajectory.svg")
        }
        PlotKind::Timeline => {
            let warnings: Vec<WarningRecord> = read_optional_log(dir, WARNINGS)?;
            let events = timeline_events(&detections, &warnings);
            (timeline_svg(&events, &title), events.is_empty(), "timeline.svg")
        }
    };
    if empty {
        eprintln!("warning: no events in {}; writing empty axes", dir.display());
    }
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            create_dir(&cli.out_dir)?;
            cli.out_dir.join(name)
        }
    };
    write_text(&path, &(svg + "\n"))
}

fn preset(name: Option<&str>) -> Result<(), String> {
    match name {
        None => {
            for n in presets::NAMES {
                println!("{n:<12}{}", presets::describe(n).unwrap_or_default());
            }
            Ok(())
        }
        Some(n) => {
            let s = presets::get(n).ok_or_else(|| format!("unknown preset {n:?}"))?;
            println!("{}", serde_json::to_string_pretty(&s).map_err(|e| e.to_string())?);
            Ok(())
        }
    }
}
