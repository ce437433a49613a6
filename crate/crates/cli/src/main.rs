//! `penal`: configuration-driven runner for the penalisation experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use penal_core::experiments::fmt17;
use penal_core::measure::phi_or_zero;
use penal_core::paths::simulate;
use penal_core::{dump, Error, TimeGrid};
use serde_json::json;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "penal", version, about = "Penalisation experiments for Markov processes")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "PENAL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location; overrides `[output].dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write report.json, report.csv and manifest.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Exit with status 4 when the experiment's acceptance check fails.
        #[arg(long)]
        check: bool,
    },
    /// Evaluate φ on the states of a CSV file and print a CSV to standard output.
    PhiEval {
        /// Model, weight and φ blocks (a full experiment configuration also works).
        #[arg(long)]
        config: PathBuf,
        /// CSV with three state columns and an optional header.
        #[arg(long)]
        states: PathBuf,
    },
    /// Write sampled paths of the configured model to a binary dump.
    DumpPaths {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the constants determined by the configured experiment and write them to constants.toml.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
}

/// Failures with their exit status.
enum Failure {
    Core(Error),
    Io(String),
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.kind(),
            Failure::Io(_) => "io",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Io(m) => m.clone(),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Core(Error::Numerical(_)) => 3,
            _ => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(&common.config).map_err(io_err(&common.config))?;
    let mut cfg = config::parse(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| "penal-out".into()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| Failure::Io(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v).expect("json values serialise");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn cmd_run(common: &Common, check: bool) -> ExitCode {
    let started = Instant::now();
    let cfg = match load(common) {
        Ok(c) => c,
        Err(f) => return fail_early(common.out.as_deref(), &f),
    };
    let dir = out_dir(&cfg);
    let outcome = (|| -> Result<bool, Failure> {
        let resolved = cfg.validate()?;
        let report = run::run(&cfg, &resolved)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join("report.json"), &report.json)?;
        write_csv(&dir.join("report.csv"), &report.header, &report.rows)?;
        Ok(report.check)
    })();
    let (status, code, error) = match &outcome {
        Ok(true) => ("ok", 0, None),
        Ok(false) if check => ("check_failed", 4, None),
        Ok(false) => ("ok", 0, None),
        Err(f) => ("error", f.code(), Some(f)),
    };
    let manifest = json!({
        "tool": "penal",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": toml::to_string(&cfg).unwrap_or_default(),
        "status": status,
        "check": outcome.as_ref().ok().copied(),
        "error": error.map(|f| json!({"kind": f.kind(), "message": f.message()})),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    if let Some(f) = error {
        eprintln!("{}", f.message());
    }
    if fs::create_dir_all(&dir).is_ok() {
        if let Err(f) = write_json(&dir.join("manifest.json"), &manifest) {
            eprintln!("{}", f.message());
        }
    }
    ExitCode::from(code)
}

/// Reports a failure that happened before the configuration was read.
fn fail_early(out: Option<&Path>, f: &Failure) -> ExitCode {
    eprintln!("{}", f.message());
    if let Some(dir) = out {
        let manifest = json!({
            "tool": "penal",
            "version": env!("CARGO_PKG_VERSION"),
            "status": "error",
            "error": {"kind": f.kind(), "message": f.message()},
        });
        if fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join("manifest.json"), &manifest);
        }
    }
    ExitCode::from(f.code())
}

fn cmd_phi_eval(config: &Path, states: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(io_err(config))?;
    let selection = config::parse_selection(&text)?;
    let phi = selection.build()?;
    let names = selection.model.model().coordinate_names();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(states)
        .map_err(|e| Failure::Io(format!("{}: {e}", states.display())))?;
    let stdout = io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    let fail = |e: csv::Error| Failure::Io(e.to_string());
    w.write_record([names[0], names[1], names[2], "phi", "error"]).map_err(fail)?;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Failure::Io(format!("{}: {e}", states.display())))?;
        let parsed: Option<Vec<f64>> = rec.iter().map(|f| f.parse().ok()).collect();
        let coords = match parsed {
            Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
            // a non-numeric first line is a header
            _ if line == 0 => continue,
            _ => {
                let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
                row.resize(3, String::new());
                row.truncate(3);
                row.extend([String::new(), "usage: expected three numeric columns".into()]);
                w.write_record(&row).map_err(fail)?;
                continue;
            }
        };
        let value = phi.eval_coords(coords).and_then(|v| {
            // outside the weight's domain φ is reported as an error, not 0
            let zero = phi_or_zero(&phi, coords)?;
            if zero == 0.0 && v != 0.0 {
                Err(Error::Domain("state outside the weight's domain".into()))
            } else {
                Ok(v)
            }
        });
        let (v, err) = match value {
            Ok(v) => (fmt17(v), String::new()),
            Err(e) => (String::new(), e.to_string()),
        };
        w.write_record([fmt17(coords[0]), fmt17(coords[1]), fmt17(coords[2]), v, err])
            .map_err(fail)?;
    }
    w.flush().map_err(|e| Failure::Io(e.to_string()))
}

fn cmd_dump(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let resolved = cfg.validate_paths()?;
    let x0 = *resolved
        .starts
        .first()
        .ok_or_else(|| Error::Config("sampling.starts needs at least one state".into()))?;
    let grid = TimeGrid::new(cfg.sampling.horizon()?, cfg.sampling.dt)?;
    let path = common.out.clone().unwrap_or_else(|| out_dir(&cfg).join("paths.bin"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for i in 0..cfg.sampling.n {
        let p = simulate(&resolved.dynamics, &x0, grid, cfg.seed, i as u64)?;
        dump::write_path(&mut w, &p).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

fn cmd_calibrate(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let resolved = cfg.validate()?;
    let constants = run::calibrate(&cfg, &resolved)?;
    let path = match &common.out {
        Some(p) if p.extension().is_some() => p.clone(),
        _ => out_dir(&cfg).join("constants.toml"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut table = toml::Table::new();
    for c in &constants {
        let mut entry = toml::Table::new();
        entry.insert("value".into(), c.value.into());
        if let Some(se) = c.se {
            entry.insert("se".into(), se.into());
        }
        table.insert(c.name.into(), entry.into());
    }
    let mut meta = toml::Table::new();
    meta.insert("experiment".into(), toml::Value::try_from(cfg.experiment).expect("enum serialises"));
    meta.insert("seed".into(), (cfg.seed as i64).into());
    meta.insert("n".into(), (cfg.sampling.n as i64).into());
    table.insert("source".into(), meta.into());
    fs::write(&path, toml::to_string(&table).expect("tables serialise")).map_err(io_err(&path))?;
    for c in &constants {
        println!("{} = {}", c.name, fmt17(c.value));
    }
    Ok(())
}

fn finish(r: Result<(), Failure>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match &cli.command {
        Command::Run { common, check } => cmd_run(common, *check),
        Command::PhiEval { config, states } => finish(cmd_phi_eval(config, states)),
        Command::DumpPaths { common } => finish(cmd_dump(common)),
        Command::Calibrate { common } => finish(cmd_calibrate(common)),
    }
}
