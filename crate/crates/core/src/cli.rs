//! Command-line front end: `analyze`, `simulate` and `sweep`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{self, AnalysisReport};
use crate::error::{Error, ReasonCode};
use crate::formation::{self, RigidityReport, UniquenessReport};
use crate::scenario::{InputError, ScenarioDocument, ScenarioFile};
use crate::simulator::{self, PreparedScenario, Scenario, SimResult, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_ABORT: i32 = 4;

/// Environment variable capping the number of sweep workers.
pub const WORKERS_ENV: &str = "BEARING_FORMATION_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "bearing-formation", version, about = "Bearing-based formation maneuver control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check uniqueness, rigidity and stability; print a JSON report.
    Analyze {
        file: PathBuf,
        /// Safety distance for the collision certificate.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run one closed-loop simulation and write CSV and JSON results.
    Simulate {
        file: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run one simulation per value of a numeric scenario key.
    Sweep {
        file: PathBuf,
        /// Dotted key, e.g. `controller.k_I`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for a library error raised while validating a scenario.
pub fn exit_code(e: &Error) -> i32 {
    match e.reason_code() {
        Some(ReasonCode::NonUniqueTarget) => EXIT_INFEASIBLE,
        _ => EXIT_INPUT,
    }
}

fn describe(e: &Error) -> String {
    match e {
        Error::Validation { .. } => e.to_string(),
        _ => match e.reason_code() {
            Some(code) => format!("{code}: {e}"),
            None => e.to_string(),
        },
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn fail(&mut self, code: i32, msg: impl std::fmt::Display) -> i32 {
        let _ = writeln!(self.err, "error: {msg}");
        code
    }
}

/// Parses arguments and runs a command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut io = Io { out, err };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(io.err, "{text}");
            } else {
                let _ = write!(io.out, "{text}");
            }
            return code;
        }
    };
    match cli.command {
        Command::Analyze { file, gamma, overrides } => cmd_analyze(&mut io, &file, gamma, &overrides),
        Command::Simulate {
            file,
            overrides,
            csv,
            json,
        } => cmd_simulate(&mut io, &file, &overrides, csv, json),
        Command::Sweep {
            file,
            param,
            values,
            overrides,
            out,
        } => cmd_sweep(&mut io, &file, &param, &values, &overrides, out.as_deref()),
    }
}

fn load(path: &Path, overrides: &[String]) -> Result<(ScenarioDocument, ScenarioFile), InputError> {
    let mut doc = ScenarioDocument::load(path)?;
    doc.apply_overrides(overrides)?;
    let file = doc.parse()?;
    Ok((doc, file))
}

/// Report for scenarios whose target formation is not unique.
#[derive(Debug, Serialize)]
struct InfeasibleReport {
    name: String,
    code: ReasonCode,
    message: String,
    uniqueness: UniquenessReport,
    rigidity: RigidityReport,
}

fn infeasible_report(sc: &Scenario, e: &Error) -> Option<InfeasibleReport> {
    let spec = formation::bearings_of(&sc.reference, &sc.graph).ok()?;
    let l = formation::BearingLaplacian::build(&sc.graph, &spec).ok()?;
    Some(InfeasibleReport {
        name: sc.name.clone(),
        code: ReasonCode::NonUniqueTarget,
        message: match e {
            Error::Validation { message, .. } => message.clone(),
            other => other.to_string(),
        },
        uniqueness: formation::check_uniqueness(&l),
        rigidity: formation::rigidity_report(&sc.reference, &sc.graph).ok()?,
    })
}

fn print_json<T: Serialize>(io: &mut Io, value: &T) {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    let _ = writeln!(io.out, "{text}");
}

fn prepare(io: &mut Io, sc: &Scenario) -> Result<PreparedScenario, i32> {
    sc.prepare().map_err(|e| {
        let code = exit_code(&e);
        if code == EXIT_INFEASIBLE {
            if let Some(r) = infeasible_report(sc, &e) {
                print_json(io, &r);
            }
        }
        io.fail(code, describe(&e))
    })
}

fn cmd_analyze(io: &mut Io, path: &Path, gamma: Option<f64>, overrides: &[String]) -> i32 {
    let (doc, file) = match load(path, overrides) {
        Ok(x) => x,
        Err(e) => return io.fail(EXIT_INPUT, e),
    };
    let sc = match file.to_scenario(&doc.default_name()) {
        Ok(s) => s,
        Err(e) => return io.fail(exit_code(&e), describe(&e)),
    };
    let prepared = match prepare(io, &sc) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let report: AnalysisReport = match analysis::analyze(&prepared, gamma.or(file.gamma())) {
        Ok(r) => r,
        Err(e) => return io.fail(exit_code(&e), describe(&e)),
    };
    for w in &report.warnings {
        let _ = writeln!(io.err, "warning: {}: {}", w.code, w.message);
    }
    print_json(io, &report);
    EXIT_OK
}

#[derive(Debug, Serialize)]
struct SimulateReport<'a> {
    name: &'a str,
    final_delta_p: f64,
    final_delta_v: f64,
    final_bearing_error: f64,
    min_distance: f64,
    converged: bool,
    time_to_threshold: Option<f64>,
    aborted: Option<&'a simulator::AbortInfo>,
    wall_time_s: f64,
    csv_path: String,
    json_path: String,
}

/// Writes both result files.
pub fn write_outputs(result: &SimResult, csv: &Path, json: &Path) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(csv)?);
    result.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(json)?);
    serde_json::to_writer(&mut w, &result.to_json())?;
    w.flush()
}

fn integral_warning(io: &mut Io, prepared: &PreparedScenario) {
    let cfg = prepared.controller();
    if !cfg.law.is_integral() {
        return;
    }
    if let Ok(bound) = analysis::integral_gain_bound(cfg.law, &prepared.laplacian, cfg.k_p, cfg.k_v) {
        if cfg.k_i >= bound {
            let _ = writeln!(
                io.err,
                "warning: {}: k_I = {} is not below the stability bound {bound}",
                ReasonCode::BadGainBound,
                cfg.k_i
            );
        }
    }
}

fn cmd_simulate(
    io: &mut Io,
    path: &Path,
    overrides: &[String],
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> i32 {
    let (doc, file) = match load(path, overrides) {
        Ok(x) => x,
        Err(e) => return io.fail(EXIT_INPUT, e),
    };
    let sc = match file.to_scenario(&doc.default_name()) {
        Ok(s) => s,
        Err(e) => return io.fail(exit_code(&e), describe(&e)),
    };
    let prepared = match prepare(io, &sc) {
        Ok(p) => p,
        Err(code) => return code,
    };
    integral_warning(io, &prepared);
    let outputs = file.outputs.clone();
    let csv = csv
        .or_else(|| outputs.as_ref().and_then(|o| o.csv_path.clone()))
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", sc.name)));
    let json = json
        .or_else(|| outputs.as_ref().and_then(|o| o.json_path.clone()))
        .unwrap_or_else(|| PathBuf::from(format!("{}.json", sc.name)));

    let start = Instant::now();
    let result = simulator::run_prepared(&prepared);
    let wall = start.elapsed().as_secs_f64();
    if let Err(e) = write_outputs(&result, &csv, &json) {
        return io.fail(EXIT_INPUT, format!("cannot write results: {e}"));
    }
    let s: Summary = result.summary();
    print_json(
        io,
        &SimulateReport {
            name: &sc.name,
            final_delta_p: s.final_delta_p,
            final_delta_v: s.final_delta_v,
            final_bearing_error: s.final_bearing_error,
            min_distance: s.min_distance,
            converged: s.converged,
            time_to_threshold: s.time_to_threshold,
            aborted: result.aborted.as_ref(),
            wall_time_s: wall,
            csv_path: csv.display().to_string(),
            json_path: json.display().to_string(),
        },
    );
    match &result.aborted {
        Some(a) => io.fail(EXIT_ABORT, format!("run aborted at t = {}: {}", a.time, a.reason)),
        None => EXIT_OK,
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub status: String,
    pub summary: Option<Summary>,
    pub message: Option<String>,
}

pub const SWEEP_HEADER: &str = "value,status,converged,time_to_threshold,min_distance,final_delta_p,final_delta_v";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        match &self.summary {
            Some(s) => format!(
                "{},{},{},{},{},{},{}",
                self.value,
                self.status,
                s.converged,
                opt(s.time_to_threshold),
                s.min_distance,
                s.final_delta_p,
                s.final_delta_v
            ),
            None => format!("{},{},false,,,,", self.value, self.status),
        }
    }
}

/// Number of sweep workers: the environment cap if set, else all cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn sweep_one(doc: &ScenarioDocument, param: &str, value: &str) -> SweepRow {
    let row = |status: &str, summary: Option<Summary>, message: Option<String>| SweepRow {
        value: value.to_string(),
        status: status.to_string(),
        summary,
        message,
    };
    let mut doc = doc.clone();
    if let Err(e) = doc.set(param, value) {
        return row("INPUT_ERROR", None, Some(e.to_string()));
    }
    let sc = match doc.parse() {
        Ok(f) => f.to_scenario(&doc.default_name()),
        Err(e) => return row("INPUT_ERROR", None, Some(e.to_string())),
    };
    let result = sc.and_then(|s| simulator::run(&s));
    match result {
        Ok(r) => {
            let status = if r.aborted.is_some() { "ABORTED" } else { "OK" };
            let message = r.aborted.as_ref().map(|a| a.reason.clone());
            row(status, Some(r.summary()), message)
        }
        Err(e) => {
            let code = e.reason_code().map(|c| c.as_str()).unwrap_or("ERROR");
            row(code, None, Some(describe(&e)))
        }
    }
}

/// Runs the sweep on a bounded worker pool; rows keep the order of `values`.
pub fn sweep(doc: &ScenarioDocument, param: &str, values: &[String]) -> Vec<SweepRow> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .expect("thread pool");
    pool.install(|| values.par_iter().map(|v| sweep_one(doc, param, v)).collect())
}

fn cmd_sweep(
    io: &mut Io,
    path: &Path,
    param: &str,
    values: &[String],
    overrides: &[String],
    out: Option<&Path>,
) -> i32 {
    let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return io.fail(EXIT_INPUT, "--values must list at least one value");
    }
    if let Some(bad) = values.iter().find(|v| v.parse::<f64>().is_err()) {
        return io.fail(EXIT_INPUT, format!("sweep value {bad:?} is not a number"));
    }
    let (doc, _) = match load(path, overrides) {
        Ok(x) => x,
        Err(e) => return io.fail(EXIT_INPUT, e),
    };
    let rows = sweep(&doc, param, &values);
    for r in &rows {
        if let Some(m) = &r.message {
            let _ = writeln!(io.err, "{} = {}: {}", param, r.value, m);
        }
    }
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    match out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                return io.fail(EXIT_INPUT, format!("cannot write {}: {e}", p.display()));
            }
        }
        None => {
            let _ = write!(io.out, "{text}");
        }
    }
    EXIT_OK
}
