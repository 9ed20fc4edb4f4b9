//! Command dispatch and result serialization.
//!
//! Every command writes into an output directory; JSON documents are
//! pretty-printed and CSV numbers use a fixed 17-significant-digit
//! rendering so identical inputs give byte-identical files.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{GeometryError, StarryCompact};
use crate::linstab::{self, LinstabError, LinstabOptions, PhaseConstraints, RadiusAnalysis};
use crate::lyapunov::{self, LyapunovDistanceForm, LyapunovError, LyapunovForm, LyapunovNormalizedForm};
use crate::starry_transform::{self, PhaseRegion, TransformError, VerifyOptions};

pub use config::{parse_config, parse_config_value, AnalysisConfig, ConfigErrors, ConfigIssue, IssueCode};
use config::{InitialSetSpec, TraceForm};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOMINAL_VIOLATION: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Verify,
    LyapunovTrace,
    Sweep,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Linstab(#[from] LinstabError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Unsupported(String),
}

impl CliError {
    /// Module-qualified error code, e.g. `linstab::NominalViolation`.
    pub fn code(&self) -> String {
        match self {
            CliError::Config(e) => match e.0.first() {
                Some(i) => format!("config::{}", i.code.as_str()),
                None => "config::SchemaError".into(),
            },
            CliError::Linstab(e) => linstab_code(e),
            CliError::Transform(e) => transform_code(e),
            CliError::Lyapunov(e) => match e {
                LyapunovError::Dynamics(e) => qualified("dynamics", e),
                LyapunovError::Geometry(e) => qualified("geometry", e),
                LyapunovError::Transform(e) => transform_code(e),
                other => qualified("lyapunov", other),
            },
            CliError::Geometry(e) => qualified("geometry", e),
            CliError::Io { .. } => "cli::Io".into(),
            CliError::Unsupported(_) => "cli::Unsupported".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Linstab(LinstabError::NominalViolation { .. }) => EXIT_NOMINAL_VIOLATION,
            CliError::Config(_) => EXIT_INVALID,
            _ => EXIT_FAILURE,
        }
    }
}

fn linstab_code(e: &LinstabError) -> String {
    match e {
        LinstabError::Dynamics(e) => qualified("dynamics", e),
        LinstabError::Geometry(e) => qualified("geometry", e),
        other => qualified("linstab", other),
    }
}

fn transform_code(e: &TransformError) -> String {
    match e {
        TransformError::Dynamics(e) => qualified("dynamics", e),
        TransformError::Geometry(e) => qualified("geometry", e),
        other => qualified("starry_transform", other),
    }
}

/// `module::Variant`, taking the variant name from the derived `Debug`.
fn qualified<E: std::fmt::Debug>(module: &str, e: &E) -> String {
    let dbg = format!("{e:?}");
    let end = dbg.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(dbg.len());
    format!("{module}::{}", &dbg[..end])
}

/// What a successful command wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Fixed rendering used for every CSV number.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Applies command-line overrides to the raw document before validation.
pub fn apply_overrides(doc: &mut Value, grid: Option<usize>, samples: Option<usize>, seed: Option<u64>) {
    let Some(root) = doc.as_object_mut() else {
        return;
    };
    let opts = root.entry("options").or_insert_with(|| Value::Object(Default::default()));
    let Some(opts) = opts.as_object_mut() else {
        return;
    };
    if let Some(g) = grid {
        opts.insert("grid_size".into(), g.into());
    }
    if let Some(s) = samples {
        opts.insert("samples".into(), s.into());
    }
    if let Some(s) = seed {
        opts.insert("seed".into(), s.into());
    }
}

pub fn run(command: Command, config: &AnalysisConfig, out: &Path, emit_surface: bool) -> Result<Outcome, CliError> {
    fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })?;
    match command {
        Command::Analyze => analyze(config, out, emit_surface),
        Command::Verify => verify(config, out),
        Command::LyapunovTrace => trace(config, out),
        Command::Sweep => sweep(config, out),
    }
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn linear_constraints(config: &AnalysisConfig) -> Result<&PhaseConstraints, CliError> {
    match &config.constraints {
        PhaseRegion::Linear(c) => Ok(c),
        PhaseRegion::Sets(_) => Err(CliError::Unsupported(
            "radius analysis needs linear constraints (kind = \"linear\")".into(),
        )),
    }
}

fn radius_analysis(config: &AnalysisConfig, opts: LinstabOptions) -> Result<RadiusAnalysis, CliError> {
    if !config.system.is_linear() {
        return Err(CliError::Unsupported("radius analysis needs a linear system".into()));
    }
    let constraints = linear_constraints(config)?;
    let analysis = match &config.initial_set {
        InitialSetSpec::Ball { center, .. } => linstab::max_ball_radius(&config.system, constraints, center, opts)?,
        InitialSetSpec::Ellipsoid { center, q, .. } => {
            linstab::max_ellipsoid_radius(&config.system, constraints, center, q, opts)?
        }
        InitialSetSpec::GaugeTable(_) => {
            return Err(CliError::Unsupported("radius analysis needs a ball or ellipsoid initial set".into()))
        }
    };
    Ok(analysis)
}

fn analysis_options(config: &AnalysisConfig) -> LinstabOptions {
    LinstabOptions { grid_size: config.grid_size, step: Some(config.step) }
}

fn analyze(config: &AnalysisConfig, out: &Path, emit_surface: bool) -> Result<Outcome, CliError> {
    let analysis = radius_analysis(config, analysis_options(config))?;
    let mut cert = analysis.certificate;
    let report =
        linstab::attach_oracle(&config.system, linear_constraints(config)?, &mut cert, config.samples, config.seed, config.step)?;
    if !report.bracket_valid {
        cert.warnings.push("falsification oracle did not bracket c_star".into());
    }
    let configured = match &config.initial_set {
        InitialSetSpec::Ball { radius: Some(r), .. } if !config.free => Some(*r),
        InitialSetSpec::Ellipsoid { level: Some(c), .. } if !config.free => Some(c.sqrt()),
        _ => None,
    };
    if let Some(c) = configured.filter(|&c| c > cert.c_star) {
        cert.warnings.push(format!("configured initial set (radius {c}) exceeds c_star"));
    }

    let mut files = vec![write_file(out.join("certificate.json"), &to_json(&cert))?];
    if emit_surface {
        let mut csv = String::from("t,s,ratio\n");
        for cell in &analysis.surface {
            let _ = writeln!(csv, "{},{},{}", fmt_num(cell.t), cell.s, fmt_num(cell.ratio));
        }
        files.push(write_file(out.join("surface.csv"), &csv)?);
    }
    Ok(Outcome {
        files,
        summary: format!("c_star = {} at t = {}, s = {}", fmt_num(cert.c_star), fmt_num(cert.t_star), cert.s_star),
    })
}

fn fixed_initial_set(config: &AnalysisConfig) -> Result<StarryCompact, CliError> {
    config.initial_set.fixed_set().ok_or_else(|| {
        CliError::Config(ConfigErrors(vec![ConfigIssue {
            code: IssueCode::SchemaError,
            path: "/initial_set".into(),
            message: "this command needs a fixed initial set (radius or level)".into(),
        }]))
    })
}

fn verify(config: &AnalysisConfig, out: &Path) -> Result<Outcome, CliError> {
    let g0 = fixed_initial_set(config)?;
    let opts = VerifyOptions { samples: config.samples, seed: config.seed, step: config.step, extra_initial: Vec::new() };
    let report = starry_transform::verify_practical_stability(&config.system, &g0, &config.constraints, &opts)?;

    let mut csv = String::new();
    for i in 1..=g0.dim() {
        let _ = write!(csv, "x0_{i},");
    }
    csv.push_str("t,constraint,excess\n");
    for v in &report.violations {
        for x in &v.x0 {
            csv.push_str(&fmt_num(*x));
            csv.push(',');
        }
        let _ = writeln!(csv, "{},{},{}", fmt_num(v.t), v.constraint, fmt_num(v.excess));
    }
    let files = vec![
        write_file(out.join("report.json"), &to_json(&report))?,
        write_file(out.join("violations.csv"), &csv)?,
    ];
    Ok(Outcome {
        files,
        summary: format!(
            "stable = {} ({} of {} sampled trajectories left the region)",
            report.stable,
            report.violations.len(),
            report.samples_checked
        ),
    })
}

fn trace(config: &AnalysisConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = config.trace.as_ref().ok_or_else(|| {
        CliError::Config(ConfigErrors(vec![ConfigIssue {
            code: IssueCode::SchemaError,
            path: "/trace".into(),
            message: "lyapunov-trace needs a trace section with x0".into(),
        }]))
    })?;
    let g0 = fixed_initial_set(config)?;
    let form: Box<dyn LyapunovForm> = match spec.form {
        TraceForm::V => Box::new(LyapunovDistanceForm::with_step(
            g0,
            config.metric.clone(),
            config.system.clone(),
            config.step,
        )?),
        TraceForm::W => Box::new(LyapunovNormalizedForm::new(g0, config.system.clone(), config.step)?),
    };
    let report = lyapunov::monotonicity_report(form.as_ref(), &spec.x0, spec.time_samples)?;
    let mut csv = format!("t,{},max_increase\n", form.label());
    for ((t, v), inc) in report.times.iter().zip(&report.values).zip(report.cumulative_max_increase()) {
        let _ = writeln!(csv, "{},{},{}", fmt_num(*t), fmt_num(*v), fmt_num(inc));
    }
    Ok(Outcome {
        files: vec![write_file(out.join("trace.csv"), &csv)?],
        summary: format!(
            "{}: max_increase = {}, stdev = {}",
            form.label(),
            fmt_num(report.max_increase),
            fmt_num(report.stdev)
        ),
    })
}

fn sweep(config: &AnalysisConfig, out: &Path) -> Result<Outcome, CliError> {
    let spec = config.sweep.as_ref().ok_or_else(|| {
        CliError::Config(ConfigErrors(vec![ConfigIssue {
            code: IssueCode::SchemaError,
            path: "/sweep".into(),
            message: "sweep needs a sweep section with parameter and values".into(),
        }]))
    })?;
    let mut csv = String::from("value,c_star,t_star,s_star,status\n");
    let mut ok = 0usize;
    for &value in &spec.values {
        let mut doc = config.document.clone();
        if let Some(slot) = doc.pointer_mut(&spec.parameter) {
            *slot = value.into();
        }
        let result = parse_config_value(doc)
            .map_err(CliError::from)
            .and_then(|c| radius_analysis(&c, analysis_options(&c)));
        match result {
            Ok(a) => {
                ok += 1;
                let c = &a.certificate;
                let _ = writeln!(csv, "{},{},{},{},ok", fmt_num(value), fmt_num(c.c_star), fmt_num(c.t_star), c.s_star);
            }
            Err(e) => {
                let _ = writeln!(csv, "{},,,,{}", fmt_num(value), e.code());
            }
        }
    }
    Ok(Outcome {
        files: vec![write_file(out.join("sweep.csv"), &csv)?],
        summary: format!("{ok} of {} sweep points analyzed", spec.values.len()),
    })
}
