mod output;
mod sweep;

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use mode2::analytic::{capacity, plr};
use mode2::sim::{attempt_trace, run, write_trace_csv, SimConfig, SimError};
use mode2::{RawConfig, Scenario, ScenarioConfig};
use rayon::prelude::*;
use serde_json::json;

use output::{Cell, Format, Table};
use sweep::{grid, SweepParam, SweepSpec};

/// Packet loss rate and capacity of NR V2X Mode 2 broadcast with blind
/// repetitions, analytic model and Monte Carlo cross-check.
///
/// Parameter precedence: command-line flags, then the config file, then the
/// built-in reference scenario.
#[derive(Debug, Parser)]
#[command(name = "mode2", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic PLR for a list of generation rates.
    Plr {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Analytic capacity, optionally over a parameter grid.
    Capacity {
        #[command(flatten)]
        common: Common,
        #[arg(long = "vary", value_name = "NAME=START..STOP[:STEP]")]
        vary: Vec<SweepSpec>,
    },
    /// Capacity over a parameter grid (at least one --vary).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long = "vary", value_name = "NAME=START..STOP[:STEP]", required = true)]
        vary: Vec<SweepSpec>,
    },
    /// Run the simulator and print its report.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Generation rate, 1/s.
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        /// Also write the per-attempt trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep only packets whose id is a multiple of this in the trace.
        #[arg(long, default_value_t = 1, requires = "trace")]
        trace_every: u64,
    },
    /// Analytic PLR next to the simulated one.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON scenario file; missing keys take reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// UE density override, 1/m.
    #[arg(long, allow_negative_numbers = true)]
    phi: Option<f64>,
    /// Output file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Where to write the resolved configuration. Defaults to the output
    /// path with a `.config.json` extension, or `mode2.config.json`.
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Comma-separated generation rates, 1/s. An empty list gives no rows.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    lambda: Option<LambdaList>,
    #[arg(long = "vary", value_name = "NAME=START..STOP[:STEP]")]
    vary: Vec<SweepSpec>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measured slots per replication, after warm-up.
    #[arg(long, default_value_t = 20_000)]
    slots: u64,
    #[arg(long, default_value_t = 10)]
    replications: usize,
    #[arg(long, default_value_t = 1000)]
    num_ues: usize,
}

#[derive(Debug, Clone)]
struct LambdaList(Vec<f64>);

fn parse_list(s: &str) -> Result<LambdaList, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<Result<_, _>>()
        .map(LambdaList)
}

/// Failures of the numerics rather than of the inputs.
#[derive(Debug)]
struct Numerical(String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for Numerical {}

fn sim_error(e: SimError) -> anyhow::Error {
    match e {
        SimError::NoPairs => Numerical(e.to_string()).into(),
        e => e.into(),
    }
}

fn load_config(common: &Common) -> anyhow::Result<RawConfig> {
    let mut raw = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RawConfig::from_json(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RawConfig::default(),
    };
    if let Some(phi) = common.phi {
        raw.phi = phi;
    }
    Ok(raw)
}

fn sidecar_path(common: &Common) -> PathBuf {
    match (&common.sidecar, &common.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => out.with_extension("config.json"),
        (None, None) => PathBuf::from("mode2.config.json"),
    }
}

fn write_sidecar(common: &Common, value: serde_json::Value) -> anyhow::Result<()> {
    let path = sidecar_path(common);
    let text = serde_json::to_string_pretty(&value)? + "\n";
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn open_output(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit(common: &Common, table: &Table) -> anyhow::Result<()> {
    let mut out = open_output(common.out.as_deref())?;
    table.write(common.format.unwrap_or(Format::Csv), &mut out)?;
    out.flush()?;
    Ok(())
}

struct Point {
    values: Vec<f64>,
    cfg: ScenarioConfig,
}

fn describe(specs: &[SweepSpec], values: &[f64]) -> String {
    specs
        .iter()
        .zip(values)
        .map(|(s, v)| format!("{}={v}", s.param.name()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Grid points in output order. `lambda`, when present, is moved to the end
/// so it varies fastest.
fn points(
    base: &ScenarioConfig,
    mut specs: Vec<SweepSpec>,
    lambdas: Option<Vec<f64>>,
) -> anyhow::Result<(Vec<SweepSpec>, Vec<Point>)> {
    let mut seen = Vec::new();
    for s in &specs {
        if seen.contains(&s.param) {
            bail!("--vary {} given twice", s.param.name());
        }
        seen.push(s.param);
    }
    let has_lambda = seen.contains(&SweepParam::Lambda);
    if let Some(values) = lambdas {
        if has_lambda {
            bail!("use either --lambda or --vary lambda=..., not both");
        }
        specs.push(SweepSpec {
            param: SweepParam::Lambda,
            values,
        });
    } else if !has_lambda {
        specs.push(SweepSpec {
            param: SweepParam::Lambda,
            values: vec![base.lambda_rate],
        });
    }
    specs.sort_by_key(|s| s.param == SweepParam::Lambda);
    let pts = grid(&specs)
        .into_iter()
        .map(|values| {
            let mut cfg = base.clone();
            for (s, &v) in specs.iter().zip(&values) {
                s.param.apply(&mut cfg, v);
            }
            Point { values, cfg }
        })
        .collect();
    Ok((specs, pts))
}

fn sweep_cells(specs: &[SweepSpec], values: &[f64]) -> Vec<Cell> {
    specs
        .iter()
        .zip(values)
        .map(|(s, &v)| {
            if s.param.is_integer() {
                Cell::Int(v as u64)
            } else {
                Cell::Float(v)
            }
        })
        .collect()
}

fn flag(parts: &[(bool, &str)]) -> Cell {
    let set: Vec<&str> = parts.iter().filter(|p| p.0).map(|p| p.1).collect();
    Cell::Text(if set.is_empty() {
        "ok".to_string()
    } else {
        set.join("|")
    })
}

fn at_point<T, E: Into<anyhow::Error>>(
    r: Result<T, E>,
    specs: &[SweepSpec],
    values: &[f64],
) -> anyhow::Result<T> {
    r.map_err(|e| {
        let e = e.into();
        match describe(specs, values) {
            d if d.is_empty() => e,
            d => e.context(format!("at {d}")),
        }
    })
}

fn scenario_at(specs: &[SweepSpec], p: &Point) -> anyhow::Result<Scenario> {
    at_point(Scenario::new(p.cfg.clone()), specs, &p.values)
}

fn cmd_plr(common: &Common, grid_args: &GridArgs) -> anyhow::Result<()> {
    let raw = load_config(common)?;
    let base = raw.to_linear();
    let (specs, pts) = points(
        &base,
        grid_args.vary.clone(),
        grid_args.lambda.clone().map(|l| l.0),
    )?;
    write_sidecar(
        common,
        json!({
            "command": "plr",
            "scenario": raw,
            "scenario_si": base,
            "sweep": specs.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        }),
    )?;
    let scenarios = pts
        .iter()
        .map(|p| scenario_at(&specs, p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let results: Vec<_> = scenarios.par_iter().map(plr).collect();

    let mut columns: Vec<String> = specs.iter().map(|s| s.param.name().to_string()).collect();
    columns.extend(["plr", "error_estimate", "validity_flag"].map(String::from));
    let mut table = Table::new(columns);
    for (p, r) in pts.iter().zip(&results) {
        if !r.plr.is_finite() {
            return Err(Numerical(format!(
                "PLR is {} at {}",
                r.plr,
                describe(&specs, &p.values)
            ))
            .into());
        }
        let mut row = sweep_cells(&specs, &p.values);
        row.extend([
            Cell::Float(r.plr),
            Cell::Float(r.error_estimate),
            flag(&[(r.validity_warning, "model_strained")]),
        ]);
        table.rows.push(row);
    }
    emit(common, &table)
}

fn cmd_capacity(common: &Common, vary: &[SweepSpec]) -> anyhow::Result<()> {
    if vary.iter().any(|s| s.param == SweepParam::Lambda) {
        bail!("lambda cannot be swept for capacity, it is the result");
    }
    let raw = load_config(common)?;
    let base = raw.to_linear();
    let (mut specs, pts) = points(&base, vary.to_vec(), None)?;
    // the placeholder lambda column is not part of the output
    specs.pop();
    write_sidecar(
        common,
        json!({
            "command": "capacity",
            "scenario": raw,
            "scenario_si": base,
            "sweep": specs.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        }),
    )?;
    let results: Vec<_> = pts.par_iter().map(|p| capacity(&p.cfg)).collect();

    let mut columns: Vec<String> = specs.iter().map(|s| s.param.name().to_string()).collect();
    columns.extend(["capacity", "flag"].map(String::from));
    let mut table = Table::new(columns);
    for (p, r) in pts.iter().zip(results) {
        let c = at_point(r, &specs, &p.values)?;
        if !c.lambda_rate.is_finite() {
            return Err(Numerical(format!("capacity is {}", c.lambda_rate)).into());
        }
        let mut row = sweep_cells(&specs, &p.values[..specs.len()]);
        row.extend([
            Cell::Float(c.lambda_rate),
            flag(&[
                (c.above_search_limit, "above_search_limit"),
                (c.nonmonotone, "nonmonotone"),
                (c.validity_warning, "model_strained"),
            ]),
        ]);
        table.rows.push(row);
    }
    emit(common, &table)
}

fn sim_config(cfg: ScenarioConfig, args: &SimArgs) -> SimConfig {
    let base = SimConfig::new(cfg);
    SimConfig {
        num_ues: args.num_ues,
        num_slots: base.warmup_slots + args.slots,
        seed: args.seed,
        replications: args.replications,
        ..base
    }
}

/// Fewer losses than this and the simulated estimate is mostly noise.
const MEASURABLE_LOSSES: u64 = 10;

fn cmd_validate(common: &Common, grid_args: &GridArgs, sim: &SimArgs) -> anyhow::Result<()> {
    let raw = load_config(common)?;
    let base = raw.to_linear();
    let (specs, pts) = points(
        &base,
        grid_args.vary.clone(),
        grid_args.lambda.clone().map(|l| l.0),
    )?;
    let sims: Vec<SimConfig> = pts.iter().map(|p| sim_config(p.cfg.clone(), sim)).collect();
    write_sidecar(
        common,
        json!({
            "command": "validate",
            "scenario": raw,
            "scenario_si": base,
            "sweep": specs.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            "sim": sims,
        }),
    )?;
    let scenarios = pts
        .iter()
        .zip(&sims)
        .map(|(p, s)| at_point(s.validate(), &specs, &p.values))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let results: Vec<_> = scenarios
        .par_iter()
        .zip(&sims)
        .map(|(sc, s)| (plr(sc), run(s)))
        .collect();

    let mut columns: Vec<String> = specs.iter().map(|s| s.param.name().to_string()).collect();
    columns.extend(["plr_analytic", "plr_sim", "ci", "ratio", "flag"].map(String::from));
    let mut table = Table::new(columns);
    for (p, (analytic, report)) in pts.iter().zip(results) {
        let (estimate, ci, losses) = match report {
            Ok(r) => (r.plr_estimate, r.confidence_interval_95, r.losses),
            // too few packets to measure anything
            Err(SimError::NoPairs) => (f64::NAN, f64::NAN, 0),
            Err(e) => return Err(sim_error(e)),
        };
        let mut row = sweep_cells(&specs, &p.values);
        row.extend([
            Cell::Float(analytic.plr),
            Cell::Float(estimate),
            Cell::Float(ci),
            Cell::Float(analytic.plr / estimate),
            flag(&[
                (losses < MEASURABLE_LOSSES, "below_measurable"),
                (analytic.validity_warning, "model_strained"),
            ]),
        ]);
        table.rows.push(row);
    }
    emit(common, &table)
}

fn cmd_simulate(
    common: &Common,
    args: &SimArgs,
    lambda: Option<f64>,
    trace: Option<&Path>,
    trace_every: u64,
) -> anyhow::Result<()> {
    let mut raw = load_config(common)?;
    if let Some(l) = lambda {
        raw.lambda_rate = l;
    }
    if trace_every == 0 {
        bail!("--trace-every must be at least 1");
    }
    let sim = sim_config(raw.to_linear(), args);
    write_sidecar(
        common,
        json!({ "command": "simulate", "scenario": raw, "sim": sim }),
    )?;
    let report = run(&sim).map_err(sim_error)?;
    if let Some(path) = trace {
        let records = attempt_trace(&sim, |_, id| id % trace_every == 0).map_err(sim_error)?;
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_trace_csv(&records, &mut w)?;
        w.flush()?;
    }

    match common.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut out = open_output(common.out.as_deref())?;
            serde_json::to_writer_pretty(&mut out, &report)?;
            out.write_all(b"\n")?;
            out.flush()?;
            Ok(())
        }
        Format::Csv => {
            let mut table = Table::new(
                [
                    "lambda",
                    "plr_estimate",
                    "ci",
                    "pairs_measured",
                    "losses",
                    "losses_half_duplex",
                    "losses_interference",
                    "transmit_frequency",
                    "seed",
                ]
                .map(String::from)
                .to_vec(),
            );
            table.rows.push(vec![
                Cell::Float(sim.scenario.lambda_rate),
                Cell::Float(report.plr_estimate),
                Cell::Float(report.confidence_interval_95),
                Cell::Int(report.pairs_measured),
                Cell::Int(report.losses),
                Cell::Int(report.losses_half_duplex),
                Cell::Int(report.losses_interference),
                Cell::Float(report.transmit_frequency),
                Cell::Int(report.seed),
            ]);
            emit(common, &table)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plr { common, grid } => cmd_plr(common, grid),
        Command::Capacity { common, vary } | Command::Sweep { common, vary } => {
            cmd_capacity(common, vary)
        }
        Command::Simulate {
            common,
            sim,
            lambda,
            trace,
            trace_every,
        } => cmd_simulate(common, sim, *lambda, trace.as_deref(), *trace_every),
        Command::Validate { common, grid, sim } => cmd_validate(common, grid, sim),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Numerical>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
