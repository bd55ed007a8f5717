//! Time averages, empirical transforms and replayable Monte Carlo studies.
//!
//! A study is fully determined by its [`StudyConfig`]: replicate `k` is the
//! path simulated on RNG stream `k` of the study seed, up to the largest
//! horizon; shorter horizons are read off the same path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, KnownC, Y_FLOOR};
use crate::matrix::{self, Mat};
use crate::model::{classify, stationary_moments, ModelSpec, Regime};
use crate::riccati::{stationary_cf, FLArgument};
use crate::simulator::{sample_states, simulate_path_stream, spec_hash, PathGrid, Scheme, SimConfig, State};

pub const REPORT_SCHEMA: &str = "adkit-report-v1";

pub const CONSISTENCY_RATIO_BAND: (f64, f64) = (1.5, 2.7);
pub const NORMALITY_MEAN_BAND: (f64, f64) = (-0.15, 0.15);
pub const NORMALITY_VAR_BAND: (f64, f64) = (0.7, 1.3);
pub const NORMALITY_COV_MAX: f64 = 0.25;
pub const SUPERCRITICAL_STABILITY_MAX: f64 = 0.05;
pub const SUPERCRITICAL_IQR_BAND: (f64, f64) = (0.01, 100.0);
pub const ERGODIC_Y_TOL: f64 = 0.05;
pub const ERGODIC_INV_Y_TOL: f64 = 0.03;
pub const CF_TOL: f64 = 0.02;
const STATIONARY_CF_TOL: f64 = 1e-8;

/// A named function of the state, indices 1-based in names.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    Y,
    InvY,
    YSquared,
    X(usize),
    XSquared(usize),
    XOverY(usize),
    XXOverY(usize, usize),
}

impl Functional {
    /// Accepts `y`, `inv_y` (or `1/y`), `y^2`, `x1`, `x1^2`, `x1/y`, `x1*x2/y`;
    /// `x_1` is read as `x1`.
    pub fn parse(name: &str, n: usize) -> Result<Self> {
        let s: String = name.trim().to_ascii_lowercase().replace("x_", "x");
        let index = |t: &str| -> Result<usize> {
            let i: usize = t
                .strip_prefix('x')
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Error::Input(format!("unknown functional '{name}'")))?;
            if i == 0 || i > n {
                return Err(Error::Input(format!("functional '{name}' refers to x{i} but n = {n}")));
            }
            Ok(i - 1)
        };
        Ok(match s.as_str() {
            "y" => Functional::Y,
            "inv_y" | "1/y" => Functional::InvY,
            "y^2" | "y2" => Functional::YSquared,
            _ => {
                if let Some(num) = s.strip_suffix("/y") {
                    match num.split_once('*') {
                        Some((l, r)) => Functional::XXOverY(index(l)?, index(r)?),
                        None => Functional::XOverY(index(num)?),
                    }
                } else if let Some(base) = s.strip_suffix("^2") {
                    Functional::XSquared(index(base)?)
                } else {
                    Functional::X(index(&s)?)
                }
            }
        })
    }

    fn divides_by_y(self) -> bool {
        matches!(self, Functional::InvY | Functional::XOverY(_) | Functional::XXOverY(..))
    }

    pub fn eval(self, y: f64, x: &[f64]) -> f64 {
        match self {
            Functional::Y => y,
            Functional::InvY => 1.0 / y,
            Functional::YSquared => y * y,
            Functional::X(i) => x[i],
            Functional::XSquared(i) => x[i] * x[i],
            Functional::XOverY(i) => x[i] / y,
            Functional::XXOverY(i, j) => x[i] * x[j] / y,
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Functional::Y => write!(f, "y"),
            Functional::InvY => write!(f, "inv_y"),
            Functional::YSquared => write!(f, "y^2"),
            Functional::X(i) => write!(f, "x{}", i + 1),
            Functional::XSquared(i) => write!(f, "x{}^2", i + 1),
            Functional::XOverY(i) => write!(f, "x{}/y", i + 1),
            Functional::XXOverY(i, j) => write!(f, "x{}*x{}/y", i + 1, j + 1),
        }
    }
}

/// Left-endpoint time average `(1/T)∫f(Z_s)ds`. Functionals dividing by Y
/// skip steps with Y below the estimator's floor and average over the rest.
pub fn ergodic_average(path: &PathGrid, f: &str) -> Result<f64> {
    path.verify()?;
    let func = Functional::parse(f, path.n)?;
    let steps = path.len() - 1;
    let (mut num, mut den) = (Sum::default(), Sum::default());
    let mut skipped = 0usize;
    for l in 0..steps {
        let y = path.y[l];
        if func.divides_by_y() && y < Y_FLOOR {
            skipped += 1;
            continue;
        }
        let h = path.times[l + 1] - path.times[l];
        num.add(func.eval(y, path.x_at(l)) * h);
        den.add(h);
    }
    if skipped as f64 > estimator::MAX_SKIPPED_SHARE * steps as f64 {
        return Err(Error::Numerical(format!("{skipped} of {steps} steps have Y below {Y_FLOOR:e}")));
    }
    Ok(num.get() / den.get())
}

#[derive(Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn get(&self) -> f64 {
        self.s + self.c
    }
}

fn check_argument(arg: &FLArgument, n: usize) -> Result<()> {
    if !(arg.lambda.is_finite() && arg.lambda >= 0.0) {
        return Err(Error::Input(format!("lambda must be finite and nonnegative, got {}", arg.lambda)));
    }
    if arg.mu.len() != n || arg.mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("mu must be a finite vector of length {n}")));
    }
    Ok(())
}

fn cf_of_states<'a>(states: impl Iterator<Item = &'a State>, arg: &FLArgument) -> Complex64 {
    let (mut re, mut im, mut count) = (Sum::default(), Sum::default(), 0usize);
    for st in states {
        let phase: f64 = arg.mu.iter().zip(&st.x).map(|(m, x)| m * x).sum();
        let r = (-arg.lambda * st.y).exp();
        re.add(r * phase.cos());
        im.add(r * phase.sin());
        count += 1;
    }
    Complex64::new(re.get(), im.get()) / count as f64
}

fn grid_index(path: &PathGrid, at: f64) -> Result<usize> {
    let tol = 1e-9 * at.abs().max(1.0);
    path.times
        .iter()
        .position(|&t| (t - at).abs() <= tol)
        .ok_or_else(|| Error::Input(format!("time {at} is not a grid point of the path (horizon {})", path.horizon())))
}

/// `(1/N)Σ exp(−λY_t⁽ᵏ⁾ + iμᵀX_t⁽ᵏ⁾)` at grid time `at`.
pub fn empirical_cf(ensemble: &[PathGrid], arg: &FLArgument, at: f64) -> Result<Complex64> {
    let first = ensemble.first().ok_or_else(|| Error::Input("empty ensemble".into()))?;
    check_argument(arg, first.n)?;
    let mut states = Vec::with_capacity(ensemble.len());
    for p in ensemble {
        if p.n != first.n {
            return Err(Error::Input("ensemble paths have different dimensions".into()));
        }
        let l = grid_index(p, at)?;
        states.push(State { y: p.y[l], x: p.x_at(l).to_vec() });
    }
    Ok(cf_of_states(states.iter(), arg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    Consistency,
    Normality,
    Supercritical,
    Ergodic,
    CfCompare,
}

impl FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "consistency" => StudyMode::Consistency,
            "normality" => StudyMode::Normality,
            "supercritical" => StudyMode::Supercritical,
            "ergodic" => StudyMode::Ergodic,
            "cf-compare" => StudyMode::CfCompare,
            _ => return Err(Error::Input(format!("unknown study mode '{s}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub mode: StudyMode,
    pub spec: ModelSpec,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    /// Ergodic mode; defaults to `y` and `inv_y`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functionals: Vec<String>,
    /// CF comparison mode; defaults to [`default_cf_points`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cf_points: Vec<FLArgument>,
}

impl StudyConfig {
    pub fn new(mode: StudyMode, spec: ModelSpec, t_grid: Vec<f64>, dt: f64, n_paths: usize, seed: u64) -> Self {
        StudyConfig { mode, spec, t_grid, dt, n_paths, seed, scheme: None, functionals: Vec::new(), cf_points: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.ensure_valid()?;
        if self.t_grid.is_empty() {
            return Err(Error::Input("T_grid must not be empty".into()));
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Input("T_grid entries must be positive and finite".into()));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("T_grid must be strictly ascending".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Input("n_paths must be at least 1".into()));
        }
        self.sim_config().validate()?;
        for &t in &self.t_grid {
            let k = t / self.dt;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(Error::Input(format!("horizon {t} is not a multiple of dt = {}", self.dt)));
            }
        }
        Ok(())
    }

    fn sim_config(&self) -> SimConfig {
        let horizon = self.t_grid.last().copied().unwrap_or(0.0);
        SimConfig::new(horizon, self.dt, self.seed).with_scheme(self.scheme.unwrap_or(Scheme::EulerFullTruncation))
    }
}

/// Five arguments spread over moderate `λ` and `μ = s·(1,…,1)`.
pub fn default_cf_points(n: usize) -> Vec<FLArgument> {
    [(1.0, 0.5), (0.5, 1.0), (2.0, 0.0), (0.0, 1.0), (1.5, -0.7)]
        .iter()
        .map(|&(l, s)| FLArgument::new(l, vec![s; n]))
        .collect()
}

/// A tolerance check recorded as data. Bounds are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let passed = value.is_finite() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Check { name: name.into(), value, lower, upper, passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub replicate: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimate: Vec<f64>,
    /// `√T(τ̂ − τ)` (subcritical) or `Q_T(τ̃̂ − τ̃)` (supercritical).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normalized_error: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub standardized: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
}

impl Record {
    fn new(horizon: f64, replicate: usize) -> Self {
        Record {
            horizon,
            replicate,
            estimate: Vec::new(),
            normalized_error: Vec::new(),
            standardized: Vec::new(),
            error_inf: None,
            values: BTreeMap::new(),
        }
    }
}

/// A named summary vector, optionally tied to one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub values: Vec<f64>,
}

fn summary(name: impl Into<String>, horizon: Option<f64>, values: Vec<f64>) -> Summary {
    Summary { name: name.into(), horizon, values }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub version: String,
    pub mode: StudyMode,
    pub spec_hash: String,
    pub seed: u64,
    pub dt: f64,
    pub scheme: Scheme,
    #[serde(rename = "T_grid")]
    pub t_grid: Vec<f64>,
    pub n_paths: usize,
    pub records: Vec<Record>,
    pub summary: Vec<Summary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl StudyReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary(&self, name: &str, horizon: Option<f64>) -> Option<&Summary> {
        self.summary.iter().find(|s| s.name == name && s.horizon == horizon)
    }

    pub fn records_at(&self, horizon: f64) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.horizon == horizon)
    }
}

fn finish(cfg: &StudyConfig, records: Vec<Record>, summary: Vec<Summary>, checks: Vec<Check>) -> StudyReport {
    let passed = checks.iter().all(|c| c.passed);
    StudyReport {
        schema: REPORT_SCHEMA.to_string(),
        version: crate::VERSION.to_string(),
        mode: cfg.mode,
        spec_hash: spec_hash(&cfg.spec),
        seed: cfg.seed,
        dt: cfg.dt,
        scheme: cfg.scheme.unwrap_or(Scheme::EulerFullTruncation),
        t_grid: cfg.t_grid.clone(),
        n_paths: cfg.n_paths,
        records,
        summary,
        checks,
        passed,
    }
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    match cfg.mode {
        StudyMode::Consistency => run_consistency_study(cfg),
        StudyMode::Normality => run_normality_study(cfg),
        StudyMode::Supercritical => run_supercritical_study(cfg),
        StudyMode::Ergodic => run_ergodic_study(cfg),
        StudyMode::CfCompare => run_cf_compare_study(cfg),
    }
}

fn ensure_mode(cfg: &StudyConfig, mode: StudyMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::Input(format!("study config has mode {:?}, expected {:?}", cfg.mode, mode)));
    }
    cfg.validate()
}

fn require_subcritical(spec: &ModelSpec) -> Result<()> {
    let class = classify(spec)?;
    if class.label != Regime::Subcritical {
        return Err(Error::Precondition(format!("a subcritical spec is required, got {}", class.label)));
    }
    stationary_moments(spec).map(|_| ())
}

/// Path prefix ending at grid time `t`.
fn prefix(path: &PathGrid, t: f64) -> Result<PathGrid> {
    let l = grid_index(path, t)?;
    Ok(PathGrid {
        n: path.n,
        times: path.times[..=l].to_vec(),
        y: path.y[..=l].to_vec(),
        x: path.x[..(l + 1) * path.n].to_vec(),
        spec_hash: path.spec_hash.clone(),
        seed: path.seed,
    })
}

/// Runs `work` on every replicate in parallel and returns its outputs in
/// replicate order; the first failing replicate's error is returned.
fn per_replicate<T: Send>(cfg: &StudyConfig, work: impl Fn(usize, &PathGrid) -> Result<T> + Sync) -> Result<Vec<T>> {
    let sim = cfg.sim_config();
    let out: Vec<Result<T>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| {
            let path = simulate_path_stream(&cfg.spec, &sim, k as u64)?;
            work(k, &path)
        })
        .collect();
    out.into_iter().collect()
}

/// Reorders per-replicate record lists into horizon-major order.
fn horizon_major(per_rep: Vec<Vec<Record>>, n_t: usize) -> Vec<Record> {
    let mut out = Vec::with_capacity(per_rep.len() * n_t);
    for i in 0..n_t {
        for recs in &per_rep {
            out.push(recs[i].clone());
        }
    }
    out
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linearly interpolated sample quantile.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn tag(t: f64) -> String {
    format!("T{t}")
}

pub fn run_consistency_study(cfg: &StudyConfig) -> Result<StudyReport> {
    ensure_mode(cfg, StudyMode::Consistency)?;
    require_subcritical(&cfg.spec)?;
    let tau = cfg.spec.tau();
    let per_rep = per_replicate(cfg, |k, path| {
        cfg.t_grid
            .iter()
            .map(|&t| {
                let r = estimator::mle_full(&prefix(path, t)?, &cfg.spec.rho)?;
                let mut rec = Record::new(t, k);
                let err: Vec<f64> = r.tau_hat.iter().zip(&tau).map(|(a, b)| a - b).collect();
                rec.error_inf = Some(err.iter().fold(0.0, |m: f64, e| m.max(e.abs())));
                rec.normalized_error = err.iter().map(|e| e * t.sqrt()).collect();
                rec.estimate = r.tau_hat;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let records = horizon_major(per_rep, cfg.t_grid.len());
    let medians: Vec<f64> = cfg
        .t_grid
        .iter()
        .map(|&t| median(&records.iter().filter(|r| r.horizon == t).filter_map(|r| r.error_inf).collect::<Vec<_>>()))
        .collect();
    let mut summaries = vec![summary("median_error_inf", None, medians.clone())];
    let mut checks = Vec::new();
    for (i, w) in cfg.t_grid.windows(2).enumerate() {
        let ratio = medians[i] / medians[i + 1];
        summaries.push(summary(format!("median_ratio_{}_{}", tag(w[0]), tag(w[1])), None, vec![ratio]));
        checks.push(Check::new(
            format!("median_decrease_{}_{}", tag(w[0]), tag(w[1])),
            medians[i] - medians[i + 1],
            Some(f64::MIN_POSITIVE),
            None,
        ));
        checks.push(Check::new(
            format!("median_ratio_{}_{}", tag(w[0]), tag(w[1])),
            ratio,
            Some(CONSISTENCY_RATIO_BAND.0),
            Some(CONSISTENCY_RATIO_BAND.1),
        ));
    }
    Ok(finish(cfg, records, summaries, checks))
}

fn sample_covariance(rows: &[Vec<f64>]) -> Mat {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut c = Mat::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

pub fn run_normality_study(cfg: &StudyConfig) -> Result<StudyReport> {
    ensure_mode(cfg, StudyMode::Normality)?;
    require_subcritical(&cfg.spec)?;
    if cfg.n_paths < 2 {
        return Err(Error::Input("a normality study needs at least 2 replicates".into()));
    }
    let tau = cfg.spec.tau();
    let per_rep = per_replicate(cfg, |k, path| {
        cfg.t_grid
            .iter()
            .map(|&t| {
                let r = estimator::mle_full(&prefix(path, t)?, &cfg.spec.rho)?;
                let rate = r.info_matrix.scale(1.0 / r.horizon);
                let l = matrix::cholesky(&rate)?;
                let e: Vec<f64> = r.tau_hat.iter().zip(&tau).map(|(a, b)| (a - b) * r.horizon.sqrt()).collect();
                let mut rec = Record::new(t, k);
                rec.standardized = l.transpose().mul_vec(&e);
                rec.error_inf = Some(e.iter().fold(0.0, |m: f64, v| m.max(v.abs())) / r.horizon.sqrt());
                rec.normalized_error = e;
                rec.estimate = r.tau_hat;
                Ok((rec, rate))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let n_t = cfg.t_grid.len();
    let p = tau.len();
    let mut summaries = Vec::new();
    let mut checks = Vec::new();
    for (i, &t) in cfg.t_grid.iter().enumerate() {
        let mut mean_rate = Mat::zeros(p, p);
        for rep in &per_rep {
            mean_rate = &mean_rate + &rep[i].1;
        }
        let mean_rate = mean_rate.scale(1.0 / cfg.n_paths as f64);
        let v_hat = mean_rate.inverse()?;
        let v_hat = (&v_hat + &v_hat.transpose()).scale(0.5);
        let z: Vec<Vec<f64>> = per_rep.iter().map(|rep| rep[i].0.standardized.clone()).collect();
        let e: Vec<Vec<f64>> = per_rep.iter().map(|rep| rep[i].0.normalized_error.clone()).collect();
        let nz = z.len() as f64;
        let means: Vec<f64> = (0..p).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / nz).collect();
        let zc = sample_covariance(&z);
        let vars: Vec<f64> = (0..p).map(|j| zc[(j, j)]).collect();
        let cov = sample_covariance(&e);
        let disc = (&cov - &v_hat).frobenius_norm() / v_hat.frobenius_norm();
        let vmin = matrix::spectrum(&v_hat)?.lambda_min();
        let h = Some(t);
        summaries.push(summary("standardized_mean", h, means.clone()));
        summaries.push(summary("standardized_variance", h, vars.clone()));
        summaries.push(summary("v_hat", h, v_hat.as_slice().to_vec()));
        summaries.push(summary("empirical_covariance", h, cov.as_slice().to_vec()));
        summaries.push(summary("covariance_discrepancy", h, vec![disc]));
        for j in 0..p {
            checks.push(Check::new(
                format!("mean_{j}_{}", tag(t)),
                means[j],
                Some(NORMALITY_MEAN_BAND.0),
                Some(NORMALITY_MEAN_BAND.1),
            ));
            checks.push(Check::new(
                format!("variance_{j}_{}", tag(t)),
                vars[j],
                Some(NORMALITY_VAR_BAND.0),
                Some(NORMALITY_VAR_BAND.1),
            ));
        }
        checks.push(Check::new(format!("covariance_discrepancy_{}", tag(t)), disc, None, Some(NORMALITY_COV_MAX)));
        checks.push(Check::new(format!("v_hat_min_eigenvalue_{}", tag(t)), vmin, Some(f64::MIN_POSITIVE), None));
    }
    let records = horizon_major(per_rep.into_iter().map(|rep| rep.into_iter().map(|(r, _)| r).collect()).collect(), n_t);
    Ok(finish(cfg, records, summaries, checks))
}

/// `λ_max(θ) < b < 0` and `diag(P⁻¹m)P⁻¹κ ≤ 0` componentwise.
pub fn check_supercritical_hypotheses(spec: &ModelSpec) -> Result<()> {
    spec.ensure_valid()?;
    let sp = spec.theta_spectrum()?;
    if !(spec.b < 0.0 && sp.lambda_max() < spec.b) {
        return Err(Error::Precondition(format!(
            "lambda_max(theta) < b < 0 is required, got b={} and lambda_max(theta)={}",
            spec.b,
            sp.lambda_max()
        )));
    }
    let pm = sp.inverse_modal.mul_vec(&spec.m);
    let pk = sp.inverse_modal.mul_vec(&spec.kappa);
    for (i, (u, v)) in pm.iter().zip(&pk).enumerate() {
        if u * v > 1e-12 * (u.abs() * v.abs()).max(1.0) {
            return Err(Error::Precondition(format!(
                "diag(P^-1 m) P^-1 kappa must be nonpositive, component {} is {}",
                i + 1,
                u * v
            )));
        }
    }
    Ok(())
}

pub fn run_supercritical_study(cfg: &StudyConfig) -> Result<StudyReport> {
    ensure_mode(cfg, StudyMode::Supercritical)?;
    check_supercritical_hypotheses(&cfg.spec)?;
    let spec = &cfg.spec;
    let class = classify(spec)?;
    let lmin = spec.theta_spectrum()?.lambda_min();
    let tt = spec.tau_tilde();
    let known = KnownC::from_spec(spec);
    let per_rep = per_replicate(cfg, |k, path| {
        cfg.t_grid
            .iter()
            .map(|&t| {
                let pre = prefix(path, t)?;
                let r = estimator::mle_restricted(&pre, &spec.rho, &known)?;
                let q = estimator::normalizer(&class, spec, t)?;
                let mut rec = Record::new(t, k);
                rec.normalized_error =
                    r.tau_tilde_hat.iter().zip(&tt).enumerate().map(|(j, (a, b))| (a - b) * q[(j, j)]).collect();
                rec.error_inf = Some(r.tau_tilde_hat.iter().zip(&tt).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs())));
                rec.estimate = r.tau_tilde_hat;
                let last = pre.len() - 1;
                let mut iy = Sum::default();
                for l in 0..last {
                    iy.add(pre.y[l] * (pre.times[l + 1] - pre.times[l]));
                }
                let eb = (spec.b * t).exp();
                rec.values.insert("exp_bT_Y_T".into(), eb * pre.y[last]);
                rec.values.insert("exp_bT_int_Y".into(), eb * iy.get());
                for (i, x) in pre.x_at(last).iter().enumerate() {
                    rec.values.insert(format!("exp_lminT_X{}_T", i + 1), (lmin * t).exp() * x);
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let n_t = cfg.t_grid.len();
    let records = horizon_major(per_rep.clone(), n_t);
    let mut summaries = Vec::new();
    let mut checks = Vec::new();
    for &t in &cfg.t_grid {
        let q = estimator::normalizer(&class, spec, t)?;
        let logq: Vec<f64> = (0..q.rows()).map(|j| q[(j, j)].ln()).collect();
        summaries.push(summary("log_q_diag", Some(t), logq));
    }
    if n_t >= 2 {
        let (i0, i1) = (n_t - 2, n_t - 1);
        let (t0, t1) = (cfg.t_grid[i0], cfg.t_grid[i1]);
        let changes: Vec<f64> = per_rep
            .iter()
            .map(|rep| {
                let a = rep[i0].values["exp_bT_int_Y"];
                let b = rep[i1].values["exp_bT_int_Y"];
                (b - a).abs() / b.abs()
            })
            .collect();
        let med = median(&changes);
        summaries.push(summary(format!("median_rel_change_exp_bT_int_Y_{}_{}", tag(t0), tag(t1)), None, vec![med]));
        checks.push(Check::new(
            format!("stability_exp_bT_int_Y_{}_{}", tag(t0), tag(t1)),
            med,
            None,
            Some(SUPERCRITICAL_STABILITY_MAX),
        ));
    }
    let t_last = *cfg.t_grid.last().unwrap_or(&0.0);
    let p = tt.len();
    let mut iqrs = Vec::with_capacity(p);
    for j in 0..p {
        let v: Vec<f64> = per_rep.iter().map(|rep| rep[n_t - 1].normalized_error[j]).collect();
        let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
        iqrs.push(iqr);
        checks.push(Check::new(
            format!("scaled_error_iqr_{j}_{}", tag(t_last)),
            iqr,
            Some(SUPERCRITICAL_IQR_BAND.0),
            Some(SUPERCRITICAL_IQR_BAND.1),
        ));
    }
    summaries.push(summary("scaled_error_iqr", Some(t_last), iqrs));
    Ok(finish(cfg, records, summaries, checks))
}

pub fn run_ergodic_study(cfg: &StudyConfig) -> Result<StudyReport> {
    ensure_mode(cfg, StudyMode::Ergodic)?;
    let names: Vec<String> =
        if cfg.functionals.is_empty() { vec!["y".into(), "inv_y".into()] } else { cfg.functionals.clone() };
    let funcs = names.iter().map(|s| Functional::parse(s, cfg.spec.n)).collect::<Result<Vec<_>>>()?;
    let per_rep = per_replicate(cfg, |k, path| {
        cfg.t_grid
            .iter()
            .map(|&t| {
                let pre = prefix(path, t)?;
                let mut rec = Record::new(t, k);
                for f in &funcs {
                    let name = f.to_string();
                    rec.values.insert(name.clone(), ergodic_average(&pre, &name)?);
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let records = horizon_major(per_rep, cfg.t_grid.len());
    let median_at = |t: f64, f: &Functional| {
        median(&records.iter().filter(|r| r.horizon == t).map(|r| r.values[&f.to_string()]).collect::<Vec<_>>())
    };
    let mut summaries = Vec::new();
    for f in &funcs {
        let meds = cfg.t_grid.iter().map(|&t| median_at(t, f)).collect();
        summaries.push(summary(format!("median_{f}"), None, meds));
    }
    let mut checks = Vec::new();
    let subcritical = classify(&cfg.spec).map(|c| c.label == Regime::Subcritical).unwrap_or(false);
    if let (true, Ok(mom)) = (subcritical, stationary_moments(&cfg.spec)) {
        let t = *cfg.t_grid.last().unwrap_or(&0.0);
        for f in &funcs {
            let (target, tol) = match f {
                Functional::Y => (mom.mean_y_inf, ERGODIC_Y_TOL),
                Functional::InvY => (mom.inv_mean_y_inf, ERGODIC_INV_Y_TOL),
                _ => continue,
            };
            checks.push(Check::new(format!("{f}_{}", tag(t)), median_at(t, f), Some(target - tol), Some(target + tol)));
        }
    }
    Ok(finish(cfg, records, summaries, checks))
}

pub fn run_cf_compare_study(cfg: &StudyConfig) -> Result<StudyReport> {
    ensure_mode(cfg, StudyMode::CfCompare)?;
    require_subcritical(&cfg.spec)?;
    let n = cfg.spec.n;
    let points = if cfg.cf_points.is_empty() { default_cf_points(n) } else { cfg.cf_points.clone() };
    for p in &points {
        check_argument(p, n)?;
    }
    let exact = points.iter().map(|p| stationary_cf(&cfg.spec, p, STATIONARY_CF_TOL)).collect::<Result<Vec<_>>>()?;
    let states = sample_states(&cfg.spec, &cfg.sim_config(), cfg.n_paths, &cfg.t_grid)?;
    let mut records = Vec::with_capacity(cfg.t_grid.len() * cfg.n_paths);
    let mut summaries = Vec::new();
    let mut checks = Vec::new();
    for (i, &t) in cfg.t_grid.iter().enumerate() {
        for (k, row) in states.iter().enumerate() {
            let mut rec = Record::new(t, k);
            rec.values.insert("Y".into(), row[i].y);
            for (j, x) in row[i].x.iter().enumerate() {
                rec.values.insert(format!("X{}", j + 1), *x);
            }
            records.push(rec);
        }
        for (j, (p, ex)) in points.iter().zip(&exact).enumerate() {
            let emp = cf_of_states(states.iter().map(|row| &row[i]), p);
            let diff = (emp - ex).norm();
            let mut v = vec![p.lambda];
            v.extend_from_slice(&p.mu);
            v.extend([emp.re, emp.im, ex.re, ex.im, diff]);
            summaries.push(summary(format!("cf_point_{j}"), Some(t), v));
            checks.push(Check::new(format!("cf_point_{j}_{}", tag(t)), diff, None, Some(CF_TOL)));
        }
    }
    Ok(finish(cfg, records, summaries, checks))
}
