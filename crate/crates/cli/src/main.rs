//! `frostman-lab <command> --config <path> [--out <dir>] [--threads N]`
//!
//! Exit status: 0 when every verdict passes, 1 on a bound violation, 2 on a
//! config or runtime error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use frostman_lab::experiments::*;
use frostman_lab::DEFAULT_BUDGET;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Command {
    Sharpness,
    IncidenceSweep,
    FourierDecay,
    L6Decay,
    EnergyXcheck,
    Regularize,
    MeasureIncidence,
    ConjectureProbe,
}

impl Command {
    fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }
}

#[derive(Parser, Debug)]
#[command(name = "frostman-lab", version, about = "Batch runner for the frostman-lab experiments")]
struct Cli {
    command: Command,
    /// JSON object or key=value file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the CSV tables; without it the tables go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("frostman-lab: {msg}");
    ExitCode::from(2)
}

fn typed<C: DeserializeOwned>(params: Map<String, Value>) -> Result<C, String> {
    serde_json::from_value(Value::Object(params)).map_err(|e| format!("config: {e}"))
}

fn budget(params: &mut Map<String, Value>) -> Result<u128, String> {
    let from_config = params.remove("budget");
    if let Ok(v) = std::env::var("FROSTMAN_LAB_BUDGET") {
        return v.trim().parse::<u128>().map_err(|_| format!("FROSTMAN_LAB_BUDGET '{v}' is not a non-negative integer"));
    }
    match from_config {
        None => Ok(DEFAULT_BUDGET),
        Some(Value::Number(n)) if n.as_u64().is_some() => Ok(n.as_u64().unwrap() as u128),
        Some(Value::String(s)) => s.parse().map_err(|_| format!("budget '{s}' is not a non-negative integer")),
        Some(other) => Err(format!("budget {other} is not a non-negative integer")),
    }
}

fn run(cmd: Command, params: Map<String, Value>, budget: u128) -> Result<Box<dyn Report>, String> {
    let lab = |e: frostman_lab::LabError| e.to_string();
    Ok(match cmd {
        Command::Sharpness => Box::new(sharpness(&typed(params)?, budget).map_err(lab)?),
        Command::IncidenceSweep => Box::new(incidence_sweep(&typed(params)?).map_err(lab)?),
        Command::FourierDecay => Box::new(fourier_decay(&typed(params)?).map_err(lab)?),
        Command::L6Decay => Box::new(l6_decay(&typed(params)?).map_err(lab)?),
        Command::EnergyXcheck => Box::new(energy_xcheck(&typed(params)?, budget).map_err(lab)?),
        Command::Regularize => Box::new(regularize_suite(&typed(params)?, budget).map_err(lab)?),
        Command::MeasureIncidence => Box::new(measure_incidence(&typed(params)?, budget).map_err(lab)?),
        Command::ConjectureProbe => Box::new(conjecture_probe(&typed(params)?, budget).map_err(lab)?),
    })
}

fn write_tables(report: &dyn Report, out: Option<&Path>) -> std::io::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            for t in report.tables() {
                std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
            }
            std::fs::write(dir.join("summary.txt"), report.summary() + "\n")
        }
        None => {
            for t in report.tables() {
                println!("{}", t.to_csv());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail("--threads must be positive");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(e);
        }
    }
    let text = match &cli.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => return fail(format!("{}: {e}", p.display())),
        },
        None => String::new(),
    };
    let mut params = match config::parse_config(&text) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    if let Some(c) = params.remove("command") {
        if c.as_str() != Some(cli.command.name().as_str()) {
            return fail(format!("config is for command {c}, not {}", cli.command.name()));
        }
    }
    let out = match params.remove("out") {
        Some(Value::String(s)) if cli.out.is_none() => Some(PathBuf::from(s)),
        Some(Value::String(_)) | None => cli.out.clone(),
        Some(other) => return fail(format!("out must be a path, got {other}")),
    };
    let budget = match budget(&mut params) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let report = match run(cli.command, params, budget) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_tables(report.as_ref(), out.as_deref()) {
        return fail(e);
    }
    println!("{}", report.summary());
    if report.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
