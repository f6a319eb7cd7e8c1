//! The `mergesim` command line.
//!
//! Exit codes: `0` success, `2` a run ended in a failure verdict, `1` any
//! configuration, schema or I/O error. Inputs are fully validated before the
//! first file is written, and every file is written atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataio::{self, GeneratorConfig, ReplayConfig};
use crate::intent::intent_grid;
use crate::params::ModelParams;
use crate::rewards::{ObjectiveWeights, SocialOrientation};
use crate::sim::{self, ScenarioConfig, SimOutcome, Verdict};
use crate::world::VehicleId;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILURE_VERDICT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mergesim", version, about = "Highway forced-merging simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the one in the configuration when given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Replay merge episodes of one or more trajectory files.
    ReplayEval {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV files; each is one scene.
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = dataio::DEFAULT_FRAME_RATE)]
        frame_rate: f64,
    },
    /// Run the intent filter on one vehicle of a trajectory file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vehicle: u32,
        #[arg(long, default_value_t = dataio::DEFAULT_FRAME_RATE)]
        frame_rate: f64,
    },
    /// Drive a virtual copy of a recorded vehicle with the behavior model.
    Reproduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vehicle: u32,
        #[arg(long)]
        sigma: SocialOrientation,
        /// Weights `headway,progress,effort`; normalized to sum to one.
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        #[arg(long, default_value_t = dataio::DEFAULT_FRAME_RATE)]
        frame_rate: f64,
    },
    /// Write synthetic trajectory files and the bundled scenarios.
    GenScenarios {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::ReplayEval { common, data, frame_rate } => replay_eval(common, data, *frame_rate),
        Command::Infer {
            common,
            data,
            vehicle,
            frame_rate,
        } => infer(common, data, VehicleId(*vehicle), *frame_rate),
        Command::Reproduce {
            common,
            data,
            vehicle,
            sigma,
            weights,
            frame_rate,
        } => reproduce(common, data, VehicleId(*vehicle), *sigma, weights, *frame_rate),
        Command::GenScenarios { common, episodes } => gen_scenarios(common, *episodes),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, &target).with_context(|| format!("renaming to {}", target.display()))?;
    Ok(())
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[derive(Serialize)]
struct OutcomeSummary<'a> {
    scenario: &'a str,
    verdict: Verdict,
    merge_time: Option<f64>,
    steps: usize,
    final_beliefs: Vec<BeliefSummary>,
}

#[derive(Serialize)]
struct BeliefSummary {
    vehicle_id: VehicleId,
    top_cells: Vec<(String, f64)>,
}

fn top_cells(b: &crate::intent::IntentBelief, n: usize) -> Vec<(String, f64)> {
    let grid = intent_grid();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|a, c| b.get(*c).total_cmp(&b.get(*a)).then(a.cmp(c)));
    order.into_iter().take(n).map(|i| (grid[i].label(), b.get(i))).collect()
}

fn exit_for(verdicts: impl IntoIterator<Item = Verdict>) -> i32 {
    if verdicts.into_iter().all(Verdict::is_success) {
        EXIT_OK
    } else {
        EXIT_FAILURE_VERDICT
    }
}

fn simulate(common: &Common) -> anyhow::Result<i32> {
    let Some(path) = &common.config else {
        bail!("simulate requires --config");
    };
    let mut scenario: ScenarioConfig = read_json(path)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    scenario.validate().context("invalid scenario")?;
    let outcome = sim::run(&scenario)?;
    write_outcome(common, &scenario.name, &outcome)?;
    println!(
        "{}: {}{}",
        scenario.name,
        outcome.verdict,
        outcome.merge_time.map_or_else(String::new, |t| format!(" at t = {t} s"))
    );
    Ok(exit_for([outcome.verdict]))
}

fn write_outcome(common: &Common, name: &str, outcome: &SimOutcome) -> anyhow::Result<()> {
    let out = &common.out;
    match common.format {
        Format::Csv => {
            write_atomic(out, "trace.csv", &to_bytes(|b| outcome.write_trace_csv(b))?)?;
            write_atomic(out, "beliefs.csv", &to_bytes(|b| dataio::write_belief_csv(&outcome.belief_trace, b))?)?;
        }
        Format::Json => {
            write_atomic(out, "trace.json", &json_bytes(&outcome.trace)?)?;
            write_atomic(out, "beliefs.json", &json_bytes(&outcome.belief_trace)?)?;
        }
    }
    let summary = OutcomeSummary {
        scenario: name,
        verdict: outcome.verdict,
        merge_time: outcome.merge_time,
        steps: outcome.steps,
        final_beliefs: outcome
            .beliefs
            .iter()
            .map(|(id, b)| BeliefSummary {
                vehicle_id: *id,
                top_cells: top_cells(b, 3),
            })
            .collect(),
    };
    write_atomic(out, "outcome.json", &json_bytes(&summary)?)
}

fn replay_eval(common: &Common, data: &[PathBuf], frame_rate: f64) -> anyhow::Result<i32> {
    let cfg: ReplayConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => ReplayConfig::default(),
    };
    cfg.params.validate().context("invalid replay configuration")?;
    cfg.planner.validate().context("invalid replay configuration")?;
    let mut scenes = Vec::new();
    for path in data {
        let record = dataio::load_with_rate(path, frame_rate).with_context(|| format!("loading {}", path.display()))?;
        let road = dataio::road_for(path, &record)?;
        road.validate().with_context(|| format!("road of {}", path.display()))?;
        scenes.push((record, road));
    }
    let mut results = Vec::new();
    for (record, road) in &scenes {
        results.extend(dataio::replay_all(record, road, &cfg)?);
    }
    let summary = dataio::summarize(&results);
    match common.format {
        Format::Csv => {
            write_atomic(&common.out, "verdicts.csv", &to_bytes(|b| dataio::write_verdicts_csv(&results, b))?)?;
            write_atomic(&common.out, "summary.csv", &to_bytes(|b| dataio::write_summary_csv(&summary, b))?)?;
        }
        Format::Json => {
            let rows: Vec<_> = results
                .iter()
                .map(|r| (&r.recording_id, r.target, r.outcome.verdict, r.outcome.merge_time))
                .collect();
            write_atomic(&common.out, "verdicts.json", &json_bytes(&rows)?)?;
            write_atomic(&common.out, "summary.json", &json_bytes(&summary)?)?;
        }
    }
    for s in &summary {
        println!(
            "{}: {} merges, {} successes, {} collisions, {} ramp-end failures, {} timeouts, rate {:.1}%",
            s.recording, s.merges, s.successes, s.collisions, s.ramp_end_failures, s.timeouts, s.success_rate
        );
    }
    for r in results.iter().filter(|r| !r.outcome.verdict.is_success()) {
        println!("failed: {} vehicle {}: {}", r.recording_id, r.target, r.outcome.verdict);
    }
    Ok(exit_for(results.iter().map(|r| r.outcome.verdict)))
}

fn model_params(common: &Common) -> anyhow::Result<ModelParams> {
    let params: ModelParams = match &common.config {
        Some(p) => read_json(p)?,
        None => ModelParams::replay(),
    };
    params.validate().context("invalid model parameters")?;
    Ok(params)
}

fn infer(common: &Common, data: &Path, id: VehicleId, frame_rate: f64) -> anyhow::Result<i32> {
    let params = model_params(common)?;
    let record = dataio::load_with_rate(data, frame_rate).with_context(|| format!("loading {}", data.display()))?;
    let road = dataio::road_for(data, &record)?;
    let trace = dataio::infer_track(&record, id, &road, &params, 100.0)?;
    let rows: Vec<_> = trace.iter().map(|(t, b)| (*t, id, b.clone())).collect();
    match common.format {
        Format::Csv => write_atomic(&common.out, "beliefs.csv", &to_bytes(|b| dataio::write_belief_csv(&rows, b))?)?,
        Format::Json => write_atomic(&common.out, "beliefs.json", &json_bytes(&rows)?)?,
    }
    let last = &trace[trace.len() - 1].1;
    for (rank, (label, p)) in top_cells(last, 3).into_iter().enumerate() {
        println!("{}. {label} {p:.4}", rank + 1);
    }
    Ok(EXIT_OK)
}

fn reproduce(
    common: &Common,
    data: &Path,
    id: VehicleId,
    sigma: SocialOrientation,
    weights: &[f64],
    frame_rate: f64,
) -> anyhow::Result<i32> {
    let params = model_params(common)?;
    let &[h, p, e] = weights else {
        anyhow::bail!("--weights takes three values, got {}", weights.len());
    };
    let w = ObjectiveWeights::normalized([h, p, e])?;
    let record = dataio::load_with_rate(data, frame_rate).with_context(|| format!("loading {}", data.display()))?;
    let road = dataio::road_for(data, &record)?;
    let result = dataio::reproduce(&record, id, sigma, &w, &road, &params, 100.0)?;
    match common.format {
        Format::Csv => write_atomic(&common.out, "reproduce.csv", &to_bytes(|b| result.write_csv(b))?)?,
        Format::Json => write_atomic(&common.out, "reproduce.json", &json_bytes(&result)?)?,
    }
    println!(
        "vehicle {id}: final deviation {:.2} m, {} colliding epochs, filter best cell {}",
        result.final_deviation, result.collisions, result.best_cell
    );
    Ok(EXIT_OK)
}

fn gen_scenarios(common: &Common, episodes: usize) -> anyhow::Result<i32> {
    let seed = common.seed.unwrap_or(0);
    let kinds = [
        GeneratorConfig {
            episodes,
            seed,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            episodes,
            seed,
            ..GeneratorConfig::sealed()
        },
        GeneratorConfig {
            seed,
            ..GeneratorConfig::slow_leaders()
        },
    ];
    let mut files = Vec::new();
    for cfg in &kinds {
        let data = dataio::generate(cfg)?;
        let csv = to_bytes(|b| Ok(dataio::write_record(&data.record, b)?))?;
        files.push((format!("{}.csv", cfg.recording_id), csv));
        files.push((format!("{}.road.json", cfg.recording_id), json_bytes(&data.road)?));
    }
    for (name, text) in sim::bundled_scenarios() {
        files.push((format!("{name}.json"), text.as_bytes().to_vec()));
    }
    for (name, bytes) in &files {
        write_atomic(&common.out, name, bytes)?;
    }
    println!("wrote {} files to {}", files.len(), common.out.display());
    Ok(EXIT_OK)
}
