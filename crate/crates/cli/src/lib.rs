//! `survplan` command-line front end.
//!
//! Every command parses and validates its whole configuration before
//! computing, and writes output only after the computation succeeds.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use survplan_core::config::{parse_document, CurvesDoc, DurationRequest, PowerRequest, RunConfig};
use survplan_core::design::SampleSizeResult;
use survplan_core::plan::{self, DurationReport, PowerReport, CURVES_CSV_HEADER};
use survplan_core::simulator::CurveRow;
use survplan_core::{Error, ErrorKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_COMPUTATION: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_PORT_CONFLICT: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "survplan",
    version,
    about = "Sample size, study duration and simulated power for time-to-event trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration document.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulation replicates; overrides the configuration.
    #[arg(long, global = true)]
    pub replicates: Option<u64>,
    /// Output file; overrides the configuration. Defaults to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Size the simulated trial with the true parameters instead of pilot estimates.
    #[arg(long, global = true)]
    pub true_params: bool,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample size per group for the configured design.
    Size,
    /// Follow-up duration giving the configured total enrolment `n_target`.
    Duration,
    /// Empirical power of the configured design by simulation.
    Power,
    /// Power curves over a scenario grid (CSV by default).
    Curves,
    /// Serve the JSON API.
    Serve {
        /// Listen address; overrides the configuration.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    PortConflict(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Computation => EXIT_COMPUTATION,
                ErrorKind::Infeasible => EXIT_INFEASIBLE,
            },
            CliError::PortConflict(_) => EXIT_PORT_CONFLICT,
            CliError::Io(_) => EXIT_COMPUTATION,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let Some(path) = &cli.config else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_document(&text).map_err(|e| CliError::Validation(e.to_string()))
}

fn require<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Validation(format!("configuration has no `{what}`")))
}

/// Output of a finished command, already rendered.
pub struct Rendered {
    pub text: String,
    pub out: Option<PathBuf>,
}

/// Runs everything except `serve`, returning the rendered output.
pub fn execute(cli: &Cli) -> Result<Rendered, CliError> {
    let cfg = load_config(cli)?;
    let out = cli.out.clone().or(cfg.out.as_ref().map(PathBuf::from));
    let text = match &cli.command {
        Command::Size => {
            let design = require(cfg.design, "design")?;
            let r = plan::size(&design)?;
            render_record(&r, &size_fields(&r), cli.format.unwrap_or(Format::Table))?
        }
        Command::Duration => {
            let req = DurationRequest {
                design: require(cfg.design, "design")?,
                n_target: require(cfg.n_target, "n_target")?,
            };
            let r = plan::duration(&req)?;
            render_record(&r, &duration_fields(&r), cli.format.unwrap_or(Format::Table))?
        }
        Command::Power => {
            let req = power_request(cli, cfg)?;
            let r = plan::power(&req, None)?;
            render_record(&r, &power_fields(&r), cli.format.unwrap_or(Format::Table))?
        }
        Command::Curves => {
            let doc = curves_doc(cli, cfg)?;
            let rows = plan::curves(&doc)?;
            render_curves(&rows, cli.format.unwrap_or(Format::Csv))?
        }
        Command::Serve { .. } => unreachable!("serve is handled by run"),
    };
    Ok(Rendered { text, out })
}

fn power_request(cli: &Cli, cfg: RunConfig) -> Result<PowerRequest, CliError> {
    let mut req =
        PowerRequest { design: require(cfg.design, "design")?, simulation: cfg.simulation.unwrap_or_default() };
    if let Some(s) = cli.seed {
        req.simulation.seed = s;
    }
    if let Some(r) = cli.replicates {
        req.simulation.replicates = r;
    }
    if cli.true_params {
        req.simulation.true_params = true;
    }
    plan::check_power_request(&req)?;
    Ok(req)
}

fn curves_doc(cli: &Cli, cfg: RunConfig) -> Result<CurvesDoc, CliError> {
    let mut doc = require(cfg.curves, "curves")?;
    if let Some(s) = cli.seed {
        doc.seed = s;
    }
    if let Some(r) = cli.replicates {
        doc.replicates = r;
    }
    if cli.true_params {
        return Err(CliError::Validation("--true-params applies to `power` only".into()));
    }
    doc.resolve_grid()?;
    Ok(doc)
}

type Fields = Vec<(&'static str, String)>;

fn size_fields(r: &SampleSizeResult) -> Fields {
    vec![
        ("n_per_group", r.n_per_group.to_string()),
        ("n_total", r.n_total.to_string()),
        ("n_per_group_exact", r.n_per_group_exact.to_string()),
        ("e0", r.e0.to_string()),
        ("e1", r.e1.to_string()),
        ("ets", r.ets.to_string()),
        ("expected_events", r.expected_events.to_string()),
    ]
}

fn duration_fields(r: &DurationReport) -> Fields {
    vec![
        ("followup", r.followup.to_string()),
        ("accrual", r.accrual.to_string()),
        ("study_duration", r.study_duration.to_string()),
        ("n_target", r.n_target.to_string()),
        ("n_total_at_followup", r.n_total_at_followup.to_string()),
        ("lower_bound", r.bounds.lower.to_string()),
        ("upper_bound", r.bounds.upper.to_string()),
    ]
}

fn power_fields(r: &PowerReport) -> Fields {
    let sizing = serde_json::to_value(r.sizing).expect("serializable");
    vec![
        ("true_family", r.true_family.to_string()),
        ("formula_family", r.formula_family.to_string()),
        ("sizing", sizing.as_str().unwrap_or_default().to_string()),
        ("n_per_group", r.n_per_group.to_string()),
        ("power", r.estimate.power.to_string()),
        ("se", r.estimate.se.to_string()),
        ("rejections", r.estimate.rejections.to_string()),
        ("non_converged", r.estimate.non_converged.to_string()),
        ("replicates", r.estimate.replicates.to_string()),
        ("seed", r.seed.to_string()),
    ]
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn render_record<T: Serialize>(value: &T, fields: &Fields, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(value).expect("serializable") + "\n"),
        Format::Csv => {
            let header: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
            csv_text(&header, [fields.iter().map(|(_, v)| v.clone()).collect()])
        }
        Format::Table => {
            let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let mut s = String::new();
            for (k, v) in fields {
                writeln!(s, "{k:<width$}  {v}").expect("string write");
            }
            Ok(s)
        }
    }
}

fn render_curves(rows: &[CurveRow], format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(rows).expect("serializable") + "\n"),
        Format::Csv => csv_text(&CURVES_CSV_HEADER, rows.iter().map(|r| plan::curve_row_fields(r).to_vec())),
        Format::Table => {
            let mut cells: Vec<Vec<String>> = vec![CURVES_CSV_HEADER.iter().map(|h| h.to_string()).collect()];
            cells.extend(rows.iter().map(|r| {
                plan::curve_row_fields(r).into_iter().map(|c| if c.is_empty() { "-".into() } else { c }).collect()
            }));
            let widths: Vec<usize> =
                (0..CURVES_CSV_HEADER.len()).map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
            let mut s = String::new();
            for row in &cells {
                let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
                writeln!(s, "{}", line.join("  ")).expect("string write");
            }
            Ok(s)
        }
    }
}

fn emit(r: Rendered) -> Result<(), CliError> {
    match r.out {
        Some(path) => {
            std::fs::write(&path, r.text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            print!("{}", r.text);
            Ok(())
        }
    }
}

fn serve(cli: &Cli, addr: Option<String>, threads: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let addr = addr.unwrap_or_else(|| cfg.service.unwrap_or_default().addr);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    rt.block_on(async {
        let state = survplan_service::AppState::new(threads);
        eprintln!("survplan {} listening on {addr}", survplan_service::VERSION);
        survplan_service::serve(&addr, state).await
    })
    .map_err(|e| match e {
        survplan_service::ServeError::PortConflict(_) => CliError::PortConflict(e.to_string()),
        other => CliError::Io(other.to_string()),
    })
}

/// Full command lifecycle; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| {
        let threads = survplan_service::thread_cap().map_err(CliError::Validation)?;
        if let Some(n) = threads {
            // a pool may already exist when embedded; the cap then applies to new pools only
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        match &cli.command {
            Command::Serve { addr } => serve(&cli, addr.clone(), threads),
            _ => emit(execute(&cli)?),
        }
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("survplan: {e}");
            e.exit_code()
        }
    }
}
