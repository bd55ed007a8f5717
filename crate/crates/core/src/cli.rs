//! Command-line front end. Exit codes: 0 success, 1 invalid input,
//! 2 numerical failure, 64 usage error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{estimate_diffusion, mle_full, mle_restricted, KnownC};
use crate::experiments::{ergodic_average, run_study, StudyConfig, StudyMode};
use crate::matrix::Mat;
use crate::model::{classify, drift_check, lyapunov_certificate, stationary_moments, ModelSpec};
use crate::riccati::{stationary_cf, FLArgument};
use crate::simulator::{read_path, simulate_path, write_path, Scheme, SimConfig};

pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "adkit", version, about = "AD(1,n) affine diffusions: simulation, stationary law, estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the regime with the spectral evidence behind it.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one path and write it as CSV plus a .meta.json sidecar.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "euler")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drift MLE on a path CSV.
    #[command(group(ArgGroup::new("rho").required(true).args(["rho_known", "estimate_diffusion"])))]
    Estimate {
        #[arg(long)]
        path: PathBuf,
        /// JSON file holding ρ as nested arrays (or an object with a "rho" field).
        #[arg(long)]
        rho_known: Option<PathBuf>,
        /// Use the Cholesky factor of the realized-covariation estimate.
        #[arg(long)]
        estimate_diffusion: bool,
        /// Treat a and m as known (taken from --config).
        #[arg(long, requires = "config")]
        restricted: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary Fourier-Laplace transform E exp(-λY + iμᵀX).
    StationaryCf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        /// Comma-separated, length n.
        #[arg(long, allow_negative_numbers = true, value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time averages of named functionals along a path.
    ErgodicCheck {
        #[arg(long)]
        path: PathBuf,
        /// Repeatable; defaults to y and inv_y.
        #[arg(long = "functional")]
        functionals: Vec<String>,
        /// Adds the stationary limits of y and inv_y for comparison.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Foster-Lyapunov certificate and its lattice verification.
    Lyapunov {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value_t = 50.0)]
        y_max: f64,
        #[arg(long, default_value_t = 50.0)]
        x_max: f64,
        #[arg(long, default_value_t = 101)]
        per_axis: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo study from a study JSON, or from a spec plus flags.
    #[command(group(ArgGroup::new("source").required(true).args(["study", "config"])))]
    McStudy {
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long, requires_all = ["mode", "t_grid", "dt", "paths"])]
        config: Option<PathBuf>,
        /// consistency, normality, supercritical, ergodic or cf-compare.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long = "T-grid", value_delimiter = ',')]
        t_grid: Vec<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn read_spec(path: &Path) -> Result<ModelSpec> {
    let spec: ModelSpec = read_json(path)?;
    spec.ensure_valid()?;
    Ok(spec)
}

fn read_rho(path: &Path) -> Result<Mat> {
    let v: serde_json::Value = read_json(path)?;
    let m = match v.get("rho") {
        Some(inner) => inner.clone(),
        None => v,
    };
    serde_json::from_value(m).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(format!("serialization: {e}")))?;
    emit_text(out, &(text + "\n"))
}

#[derive(Serialize)]
struct CfOutput {
    lambda: f64,
    mu: Vec<f64>,
    re: f64,
    im: f64,
    tol: f64,
}

#[derive(Serialize)]
struct ErgodicOutput {
    #[serde(rename = "T")]
    horizon: f64,
    averages: Vec<ErgodicEntry>,
}

#[derive(Serialize)]
struct ErgodicEntry {
    functional: String,
    average: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stationary: Option<f64>,
}

#[derive(Serialize)]
struct LyapunovOutput {
    certificate: crate::model::LyapunovCertificate,
    y_range: (f64, f64),
    x_range: (f64, f64),
    per_axis: usize,
    drift_check: crate::model::DriftCheck,
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Classify { config, out } => {
            let spec = read_spec(&config)?;
            let class = classify(&spec)?;
            match out {
                Some(p) => emit_json(Some(&p), &class),
                None => emit_text(
                    None,
                    &format!(
                        "{}\nb = {}\nlambda_min(theta) = {}\nlambda_max(theta) = {}\n",
                        class.label, class.b, class.lambda_min_theta, class.lambda_max_theta
                    ),
                ),
            }
        }
        Command::Simulate { config, horizon, dt, seed, scheme, out } => {
            let spec = read_spec(&config)?;
            let scheme: Scheme = scheme.parse()?;
            let cfg = SimConfig::new(horizon, dt, seed).with_scheme(scheme);
            let path = simulate_path(&spec, &cfg)?;
            write_path(&path, Some(scheme), dt, &out)
        }
        Command::Estimate { path, rho_known, estimate_diffusion: est, restricted, config, out } => {
            let grid = read_path(&path)?;
            let rho = match (rho_known, est) {
                (Some(f), false) => read_rho(&f)?,
                (None, true) => estimate_diffusion(&grid)?.1,
                _ => return Err(Error::Input("exactly one of --rho-known and --estimate-diffusion is required".into())),
            };
            if restricted {
                let spec = read_spec(config.as_deref().expect("clap enforces --config"))?;
                if spec.n != grid.n {
                    return Err(Error::Input(format!("config has n = {} but the path has n = {}", spec.n, grid.n)));
                }
                emit_json(out.as_deref(), &mle_restricted(&grid, &rho, &KnownC::from_spec(&spec))?)
            } else {
                emit_json(out.as_deref(), &mle_full(&grid, &rho)?)
            }
        }
        Command::StationaryCf { config, lambda, mu, tol, out } => {
            let spec = read_spec(&config)?;
            let v = stationary_cf(&spec, &FLArgument::new(lambda, mu.clone()), tol)?;
            emit_json(out.as_deref(), &CfOutput { lambda, mu, re: v.re, im: v.im, tol })
        }
        Command::ErgodicCheck { path, functionals, config, out } => {
            let grid = read_path(&path)?;
            let moments = match config {
                Some(c) => Some(stationary_moments(&read_spec(&c)?)?),
                None => None,
            };
            let names = if functionals.is_empty() { vec!["y".to_string(), "inv_y".to_string()] } else { functionals };
            let mut averages = Vec::with_capacity(names.len());
            for name in names {
                let average = ergodic_average(&grid, &name)?;
                let f = crate::experiments::Functional::parse(&name, grid.n)?;
                let stationary = moments.and_then(|m| match f {
                    crate::experiments::Functional::Y => Some(m.mean_y_inf),
                    crate::experiments::Functional::InvY => Some(m.inv_mean_y_inf),
                    _ => None,
                });
                averages.push(ErgodicEntry { functional: f.to_string(), average, stationary });
            }
            emit_json(out.as_deref(), &ErgodicOutput { horizon: grid.horizon() - grid.times[0], averages })
        }
        Command::Lyapunov { config, c, r, y_max, x_max, per_axis, out } => {
            let spec = read_spec(&config)?;
            let cert = lyapunov_certificate(&spec, c, r)?;
            let (y_range, x_range) = ((0.0, y_max), (0.0, x_max));
            let check = drift_check(&spec, &cert, y_range, x_range, per_axis)?;
            emit_json(out.as_deref(), &LyapunovOutput { certificate: cert, y_range, x_range, per_axis, drift_check: check })
        }
        Command::McStudy { study, config, mode, t_grid, dt, paths, seed, out } => {
            let cfg = match (study, config) {
                (Some(f), None) => read_json::<StudyConfig>(&f)?,
                (None, Some(c)) => {
                    let mode: StudyMode = mode.as_deref().unwrap_or_default().parse()?;
                    StudyConfig::new(mode, read_spec(&c)?, t_grid, dt.unwrap_or(0.0), paths.unwrap_or(0), seed)
                }
                _ => return Err(Error::Input("exactly one of --study and --config is required".into())),
            };
            emit_json(out.as_deref(), &run_study(&cfg)?)
        }
    }
}
