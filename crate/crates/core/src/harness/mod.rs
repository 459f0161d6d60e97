//! Command-line experiment runner: configuration, replication orchestration
//! and CSV/JSON reports.
//!
//! Exit codes: `0` every acceptance bound met, `1` a bound failed, `2` usage
//! error, `3` numeric or I/O failure.

mod config;
mod experiments;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{defaults, parse_config, resolve, ExperimentConfig, ExperimentId, RawConfig, UsageError};
pub use experiments::ORACLE_THRESHOLDS_JSON;

pub const EXIT_OK: i32 = 0;
pub const EXIT_BOUND_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// One CSV row: a statistic at one value of the control variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub group: String,
    pub control: String,
    pub control_value: f64,
    pub statistic: String,
    pub value: f64,
    pub std_error: f64,
}

impl Row {
    pub fn new(group: impl Into<String>, control: &str, control_value: f64, statistic: &str, value: f64, std_error: f64) -> Self {
        Self {
            group: group.into(),
            control: control.to_string(),
            control_value,
            statistic: statistic.to_string(),
            value,
            std_error,
        }
    }
}

/// `log₂(statistic)` against `log₂(control)` for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fit {
    pub group: String,
    pub statistic: String,
    pub slope: f64,
    pub slope_std_error: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: String,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed: passed && !value.is_nan(),
            value,
            bound: bound.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub fits: Vec<Fit>,
    pub checks: Vec<Check>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: ExperimentId,
    version: &'static str,
    seed: u64,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config: &'a ExperimentConfig,
    fits: &'a [Fit],
    checks: &'a [Check],
    rows: usize,
    csv: String,
    wall_time_s: f64,
}

/// Runs an experiment on the configured number of worker threads.
pub fn run(config: &ExperimentConfig) -> crate::Result<ExperimentReport> {
    match config.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| crate::Error::Configuration(format!("thread pool: {e}")))?;
            pool.install(|| experiments::dispatch(config))
        }
        None => experiments::dispatch(config),
    }
}

fn fmt_f64(x: f64) -> String {
    // shortest round-trip representation, stable across platforms
    format!("{x}")
}

/// Writes the report's rows as CSV, preceded by a `#` comment naming the
/// columns.
pub fn write_csv<W: Write>(report: &ExperimentReport, w: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(
        w,
        "# {}: group = series label, control = swept variable, control_value = its value, \
         statistic = estimated quantity, value = estimate, std_error = standard error (0 if exact)",
        report.experiment
    )?;
    let mut cw = csv::Writer::from_writer(&mut w);
    cw.write_record(["group", "control", "control_value", "statistic", "value", "std_error"])?;
    for r in &report.rows {
        cw.write_record([
            r.group.as_str(),
            r.control.as_str(),
            &fmt_f64(r.control_value),
            r.statistic.as_str(),
            &fmt_f64(r.value),
            &fmt_f64(r.std_error),
        ])?;
    }
    cw.flush()?;
    drop(cw);
    w.flush()
}

fn csv_path(out: &Path, id: ExperimentId) -> PathBuf {
    out.join(format!("{id}.csv"))
}

/// JSON summary; `wall_time_s` is the only field that varies between
/// identical runs.
pub fn summary_json(report: &ExperimentReport, wall_time_s: f64) -> String {
    let s = Summary {
        experiment: report.experiment,
        version: env!("CARGO_PKG_VERSION"),
        seed: report.config.seed,
        passed: report.passed(),
        error: None,
        config: &report.config,
        fits: &report.fits,
        checks: &report.checks,
        rows: report.rows.len(),
        csv: csv_path(&report.config.out, report.experiment).display().to_string(),
        wall_time_s,
    };
    serde_json::to_string_pretty(&s).expect("summary is serialisable")
}

fn failure_json(config: &ExperimentConfig, error: &str, wall_time_s: f64) -> String {
    let s = Summary {
        experiment: config.experiment,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        passed: false,
        error: Some(error.to_string()),
        config,
        fits: &[],
        checks: &[],
        rows: 0,
        csv: String::new(),
        wall_time_s,
    };
    serde_json::to_string_pretty(&s).expect("summary is serialisable")
}

/// Runs the experiment, writes `<out>/<id>.csv` and `<out>/<id>.json`, prints
/// the summary on stdout and returns the exit code.
pub fn execute(config: &ExperimentConfig) -> i32 {
    let start = Instant::now();
    eprintln!("running {} (seed {}, {} reps)", config.experiment, config.seed, config.reps);
    let report = match run(config) {
        Ok(r) => r,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("numeric failure: {msg}");
            println!("{}", failure_json(config, &msg, start.elapsed().as_secs_f64()));
            return match e {
                crate::Error::Configuration(_) | crate::Error::NotGridAligned { .. } => EXIT_USAGE,
                _ => EXIT_NUMERIC,
            };
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let json = summary_json(&report, wall);
    let written = std::fs::create_dir_all(&config.out)
        .and_then(|_| std::fs::File::create(csv_path(&config.out, config.experiment)))
        .and_then(|f| write_csv(&report, f))
        .and_then(|_| std::fs::write(config.out.join(format!("{}.json", config.experiment)), &json));
    if let Err(e) = written {
        eprintln!("cannot write results to {}: {e}", config.out.display());
        return EXIT_NUMERIC;
    }
    println!("{json}");
    for c in &report.checks {
        eprintln!("{} {} = {} (bound {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    if report.passed() {
        EXIT_OK
    } else {
        EXIT_BOUND_FAILED
    }
}

#[derive(Debug, Parser)]
#[command(name = "kgqv", version, about = "Damped stochastic Klein-Gordon simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and print its JSON summary.
    Run {
        /// Flat JSON config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: RawConfig,
    },
}

/// Entry point shared by the binary and the tests.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config, flags } => match parse_config(config.as_deref(), flags) {
            Ok(cfg) => execute(&cfg),
            Err(e) => {
                eprintln!("usage error: {e}");
                EXIT_USAGE
            }
        },
    }
}
