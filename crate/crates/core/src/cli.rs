//! Command-line front end.
//!
//! Exit codes: 0 success, 1 file or parse error, 2 invalid input or
//! configuration, 3 internal-consistency failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::cmatrix::{round_sig, sample_pure_state, DensityMatrix, SeededRng};
use crate::error::{Error, Result};
use crate::metrics::{
    agreement, closed_form_stats, deviation_bound_check, monte_carlo_stats, FidelityStats,
    DEFAULT_MC_SAMPLES,
};
use crate::teleport::{
    simulate_protocol, single_shot_fidelity, unconditional_output_closed, CorrectionFile,
    CorrectionSet, IsotropicResource, Preset,
};
use crate::weingarten::{clifford_ensemble, pauli_ensemble, verify_t_design, Ensemble};
use crate::witness::{
    classify, thresholds, wedge_boundary_points, wedge_geometry, write_boundary_csv,
};

/// Largest dimension accepted for wiring analysis.
pub const MAX_CLI_D: usize = 16;
/// Largest dimension for the explicit `d³` protocol simulation.
pub const MAX_SIMULATE_D: usize = 10;
/// Significant digits in emitted numbers.
pub const OUTPUT_DIGITS: usize = 12;
/// Allowed gap between simulated and closed-form outputs.
pub const SIMULATE_TOL: f64 = 1e-9;
pub const THREADS_ENV: &str = "FDWEDGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fdwedge",
    version,
    about = "Average fidelity and fidelity deviation of noisy qudit teleportation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form F and D of a wiring, with an optional Monte Carlo cross-check
    Metrics(MetricsArgs),
    /// Run the protocol explicitly and compare with the closed-form output
    Simulate(SimulateArgs),
    /// Witness lines on the (F, D) plane
    Wedge(WedgeArgs),
    /// Classify a measured (F, D) point
    Certify(CertifyArgs),
    /// Check whether an ensemble is a unitary k-design
    DesignCheck(DesignArgs),
    /// Haar Monte Carlo estimate of F and D
    HaarOracle(OracleArgs),
}

/// `--seed N` or `--seed random`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedArg {
    Fixed(u64),
    Random,
}

impl SeedArg {
    fn resolve(self) -> u64 {
        match self {
            SeedArg::Fixed(s) => s,
            SeedArg::Random => rand::random(),
        }
    }
}

impl FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "random" {
            return Ok(SeedArg::Random);
        }
        s.parse()
            .map(SeedArg::Fixed)
            .map_err(|_| format!("seed must be a 64-bit unsigned integer or \"random\", got {s:?}"))
    }
}

#[derive(Debug, Args)]
pub struct WiringArgs {
    /// Local dimension
    #[arg(long)]
    pub d: Option<usize>,
    /// Built-in wiring: ideal, all_traceless_hw, all_equal_traceless
    #[arg(long, conflicts_with = "corrections")]
    pub preset: Option<Preset>,
    /// Correction file: {"d", "V": [...]}, {"d", "X": [...]} or {"d", "preset"}
    #[arg(long)]
    pub corrections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub wiring: WiringArgs,
    /// Resource visibility
    #[arg(long)]
    pub p: f64,
    /// Monte Carlo samples for the cross-check; 0 skips it
    #[arg(long, default_value_t = 0)]
    pub mc_samples: usize,
    /// Agreement threshold in standard errors
    #[arg(long, default_value_t = 4.0)]
    pub mc_sigma: f64,
    #[arg(long, default_value = "0")]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub wiring: WiringArgs,
    #[arg(long)]
    pub p: f64,
    /// Number of Haar-random input states
    #[arg(long, default_value_t = 8)]
    pub inputs: usize,
    #[arg(long, default_value = "0")]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct WedgeArgs {
    #[arg(long)]
    pub d: usize,
    /// Bell-violation visibility; required for d >= 5
    #[arg(long)]
    pub p_bv: Option<f64>,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub d: usize,
    /// Measured average fidelity
    #[arg(long = "F")]
    pub f: f64,
    /// Measured fidelity deviation
    #[arg(long = "D")]
    pub dev: f64,
    #[arg(long)]
    pub p_bv: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BuiltinEnsemble {
    Pauli,
    Clifford24,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Ensemble file: {"d", "unitaries": [...]}
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    pub ensemble: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub builtin: Option<BuiltinEnsemble>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub wiring: WiringArgs,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value = "0")]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Rendered command output and the exit status to report after writing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub body: String,
    pub status: i32,
}

impl Report {
    fn ok(body: String) -> Self {
        Report { body, status: 0 }
    }
}

/// Rounds every float in `v` to [`OUTPUT_DIGITS`] significant digits.
/// Non-finite values become `null`.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            *v = serde_json::Number::from_f64(round_sig(x, OUTPUT_DIGITS))
                .map(Value::Number)
                .unwrap_or(Value::Null);
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

fn float(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn render(mut v: Value) -> String {
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
    s.push('\n');
    s
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn check_d(d: usize, max: usize) -> Result<()> {
    if !(2..=max).contains(&d) {
        return Err(Error::InvalidDimension(format!(
            "d = {d} not in [2, {max}]"
        )));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_wiring(w: &WiringArgs, max_d: usize) -> Result<CorrectionSet> {
    match (w.preset, &w.corrections) {
        (Some(preset), None) => {
            let d =
                w.d.ok_or_else(|| Error::Config("--d is required with --preset".into()))?;
            check_d(d, max_d)?;
            CorrectionSet::preset(d, preset)
        }
        (None, Some(path)) => {
            let file: CorrectionFile = read_json(path)?;
            if let Some(d) = w.d {
                if d != file.d {
                    return Err(Error::DimensionMismatch(format!(
                        "--d {d} but the correction file has d = {}",
                        file.d
                    )));
                }
            }
            check_d(file.d, max_d)?;
            file.into_correction_set()
        }
        (None, None) => Err(Error::Config(
            "one of --preset or --corrections is required".into(),
        )),
        (Some(_), Some(_)) => Err(Error::Config(
            "--preset and --corrections are mutually exclusive".into(),
        )),
    }
}

/// The stable key set for `(F, D)` reports.
pub fn stats_json(s: &FidelityStats) -> Map<String, Value> {
    let bound = deviation_bound_check(s);
    let mut m = Map::new();
    m.insert("d".into(), json!(s.d));
    m.insert("p".into(), float(s.p));
    m.insert("F".into(), float(s.f));
    m.insert("D".into(), float(s.dev));
    m.insert("F_max".into(), float(s.f_max));
    m.insert("F_min".into(), float(s.f_min));
    m.insert("s_d".into(), float(s.s_d));
    m.insert("D_bound".into(), float(s.d_bound));
    m.insert("bound_satisfied".into(), json!(bound.satisfied));
    m.insert("source".into(), to_value(&s.source));
    m.insert("stderr_F".into(), s.stderr_f.map_or(Value::Null, float));
    m.insert("stderr_D".into(), s.stderr_d.map_or(Value::Null, float));
    m.insert("delta_F".into(), float(s.delta_f));
    m.insert("D_max".into(), float(s.d_max));
    m.insert("bound_slack".into(), float(bound.slack));
    m
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<Report> {
    let cs = load_wiring(&a.wiring, MAX_CLI_D)?;
    let closed = closed_form_stats(&cs, a.p)?;
    let mut out = stats_json(&closed);
    let mut status = 0;
    if a.mc_samples > 0 {
        if a.mc_sigma.is_nan() || a.mc_sigma < 0.0 {
            return Err(Error::OutOfRange(format!(
                "--mc-sigma {} must be >= 0",
                a.mc_sigma
            )));
        }
        let seed = a.seed.resolve();
        let mc = monte_carlo_stats(&cs, a.p, a.mc_samples, seed)?;
        let agree = agreement(&closed, &mc, a.mc_sigma);
        let mut block = Map::new();
        block.insert("samples".into(), json!(a.mc_samples));
        block.insert("seed".into(), json!(seed));
        block.insert("F".into(), float(mc.f));
        block.insert("D".into(), float(mc.dev));
        block.insert("stderr_F".into(), mc.stderr_f.map_or(Value::Null, float));
        block.insert("stderr_D".into(), mc.stderr_d.map_or(Value::Null, float));
        block.insert("z_F".into(), float(agree.z_f));
        block.insert("z_D".into(), float(agree.z_d));
        block.insert("sigma".into(), float(a.mc_sigma));
        block.insert(
            "agreement".into(),
            json!(if agree.ok { "ok" } else { "mismatch" }),
        );
        out.insert("monte_carlo".into(), Value::Object(block));
        if !agree.ok {
            eprintln!(
                "error: closed form and Monte Carlo disagree (z_F = {:.3}, z_D = {:.3})",
                agree.z_f, agree.z_d
            );
            status = Error::Inconsistent(String::new()).exit_code();
        }
    }
    Ok(Report {
        body: render(Value::Object(out)),
        status,
    })
}

pub fn cmd_haar_oracle(a: &OracleArgs) -> Result<Report> {
    let cs = load_wiring(&a.wiring, MAX_CLI_D)?;
    let seed = a.seed.resolve();
    let mc = monte_carlo_stats(&cs, a.p, a.samples, seed)?;
    let mut out = stats_json(&mc);
    out.insert("samples".into(), json!(a.samples));
    out.insert("seed".into(), json!(seed));
    Ok(Report::ok(render(Value::Object(out))))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Report> {
    let cs = load_wiring(&a.wiring, MAX_SIMULATE_D)?;
    let d = cs.d();
    if a.inputs == 0 {
        return Err(Error::OutOfRange("--inputs must be >= 1".into()));
    }
    let resource = IsotropicResource::new(d, a.p)?;
    let seed = a.seed.resolve();
    let mut rng = SeededRng::new(seed, 0);
    let mut max_output = 0.0f64;
    let mut max_fidelity = 0.0f64;
    let mut max_branch = 0.0f64;
    let mut fidelity_sum = 0.0;
    for _ in 0..a.inputs {
        let phi = sample_pure_state(d, &mut rng);
        let rho = DensityMatrix::from_pure(&phi);
        let sim = simulate_protocol(&rho, &resource, &cs)?;
        let closed = unconditional_output_closed(&rho, &resource, &cs)?;
        max_output = max_output.max(sim.output.matrix().distance(closed.matrix()));
        let f_sim = sim.output.fidelity_with(&phi);
        let f_closed = single_shot_fidelity(&phi, &resource, &cs)?;
        max_fidelity = max_fidelity.max((f_sim - f_closed).abs());
        let uniform = 1.0 / (d * d) as f64;
        for prob in &sim.branch_probabilities {
            max_branch = max_branch.max((prob - uniform).abs());
        }
        fidelity_sum += f_sim;
    }
    let ok =
        max_output <= SIMULATE_TOL && max_fidelity <= SIMULATE_TOL && max_branch <= SIMULATE_TOL;
    let mut out = Map::new();
    out.insert("d".into(), json!(d));
    out.insert("p".into(), float(a.p));
    out.insert("inputs".into(), json!(a.inputs));
    out.insert("seed".into(), json!(seed));
    out.insert("max_output_deviation".into(), float(max_output));
    out.insert("max_fidelity_deviation".into(), float(max_fidelity));
    out.insert("max_branch_probability_deviation".into(), float(max_branch));
    out.insert(
        "mean_fidelity".into(),
        float(fidelity_sum / a.inputs as f64),
    );
    out.insert("ok".into(), json!(ok));
    let status = if ok {
        0
    } else {
        eprintln!("error: simulated and closed-form outputs differ by {max_output:e}");
        3
    };
    Ok(Report {
        body: render(Value::Object(out)),
        status,
    })
}

pub fn cmd_certify(a: &CertifyArgs) -> Result<Report> {
    let t = thresholds(a.d, a.p_bv)?;
    let g = wedge_geometry(&t);
    let v = classify(a.f, a.dev, &g)?;
    let mut out = Map::new();
    out.insert("d".into(), json!(a.d));
    out.insert("F".into(), float(a.f));
    out.insert("D".into(), float(a.dev));
    out.insert("p_c".into(), float(t.p_c));
    out.insert("p_bv".into(), float(t.p_bv));
    out.insert("p_bv_source".into(), to_value(&t.p_bv_source));
    out.insert("s_d".into(), float(g.s_d));
    out.insert("F_cl".into(), float(g.f_cl));
    out.insert("F_bv_max".into(), float(g.f_bv_max));
    out.insert("classification".into(), to_value(&v.classification));
    out.insert("margin_cl".into(), float(v.margin_cl));
    out.insert("margin_bv".into(), float(v.margin_bv));
    out.insert("p_lower_bound".into(), float(v.p_lower_bound));
    Ok(Report::ok(render(Value::Object(out))))
}

pub fn cmd_wedge(a: &WedgeArgs) -> Result<Report> {
    let t = thresholds(a.d, a.p_bv)?;
    let g = wedge_geometry(&t);
    let points = wedge_boundary_points(&g, a.points)?;
    let body = match a.format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_boundary_csv(&points, &mut buf)?;
            String::from_utf8(buf).expect("csv is ascii")
        }
        Format::Json => {
            let mut out = Map::new();
            out.insert("d".into(), json!(a.d));
            out.insert("p_c".into(), float(t.p_c));
            out.insert("p_bv".into(), float(t.p_bv));
            out.insert("p_bv_source".into(), to_value(&t.p_bv_source));
            out.insert("s_d".into(), float(g.s_d));
            out.insert("F_cl".into(), float(g.f_cl));
            out.insert("F_bv_max".into(), float(g.f_bv_max));
            out.insert("points".into(), to_value(&points));
            render(Value::Object(out))
        }
    };
    Ok(Report::ok(body))
}

pub fn cmd_design_check(a: &DesignArgs) -> Result<Report> {
    let (ensemble, source) = match (&a.ensemble, a.builtin) {
        (Some(path), None) => (read_json::<Ensemble>(path)?, "file"),
        (None, Some(BuiltinEnsemble::Pauli)) => (pauli_ensemble(), "pauli"),
        (None, Some(BuiltinEnsemble::Clifford24)) => (clifford_ensemble(), "clifford24"),
        _ => {
            return Err(Error::Config(
                "exactly one of --ensemble or --builtin is required".into(),
            ))
        }
    };
    ensemble.validate()?;
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(Error::OutOfRange(format!("--tol {} must be >= 0", a.tol)));
    }
    let report = verify_t_design(&ensemble.unitaries, a.k, ensemble.d, a.tol)?;
    let mut out = Map::new();
    out.insert("source".into(), json!(source));
    if let Value::Object(fields) = to_value(&report) {
        out.extend(fields);
    }
    Ok(Report::ok(render(Value::Object(out))))
}

pub fn dispatch(cmd: &Command) -> Result<Report> {
    match cmd {
        Command::Metrics(a) => cmd_metrics(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Wedge(a) => cmd_wedge(a),
        Command::Certify(a) => cmd_certify(a),
        Command::DesignCheck(a) => cmd_design_check(a),
        Command::HaarOracle(a) => cmd_haar_oracle(a),
    }
}

fn out_path(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Metrics(a) => a.out.as_deref(),
        Command::Simulate(a) => a.out.as_deref(),
        Command::Wedge(a) => a.out.as_deref(),
        Command::Certify(a) => a.out.as_deref(),
        Command::DesignCheck(a) => a.out.as_deref(),
        Command::HaarOracle(a) => a.out.as_deref(),
    }
}

/// Caps the rayon pool at `FDWEDGE_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer"))
        })?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn emit(report: &Report, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, &report.body)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(report.body.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = configure_threads()
        .and_then(|_| dispatch(&cli.command))
        .and_then(|r| emit(&r, out_path(&cli.command)).map(|_| r.status));
    match result {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
