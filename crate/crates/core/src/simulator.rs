//! Path simulation: full-truncation Euler, or exact CIR transitions for Y with
//! an Euler step for X, plus the exact CIR transition density.
//!
//! Every path draws from its own ChaCha8 stream: the generator is seeded with
//! the configured seed and path `k` uses stream `k`. Ensembles are therefore
//! bit-identical whatever the thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub const MAX_STEPS: f64 = 1e9;
pub const MAX_ENSEMBLE_WORK: f64 = 1e10;
/// Below this level Y carries no usable Brownian information for the X-block.
const Y_IMPLIED_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerFullTruncation,
    ExactCir,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" | "euler-full-truncation" => Ok(Scheme::EulerFullTruncation),
            "exact" | "exact-cir" => Ok(Scheme::ExactCir),
            other => Err(Error::Input(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, seed: u64) -> Self {
        SimConfig { horizon, dt, scheme: Scheme::EulerFullTruncation, seed }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Input(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Input(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > self.horizon {
            return Err(Error::Input(format!("dt={} exceeds horizon={}", self.dt, self.horizon)));
        }
        if self.horizon / self.dt > MAX_STEPS {
            return Err(Error::Guard(format!("T/dt = {:e} exceeds {MAX_STEPS:e}", self.horizon / self.dt)));
        }
        Ok(())
    }

    /// Number of steps; a `dt` that does not divide `T` gets a shortened last step.
    pub fn steps(&self) -> usize {
        let ratio = self.horizon / self.dt;
        let r = ratio.round();
        if (ratio - r).abs() <= 1e-9 * ratio {
            r as usize
        } else {
            ratio.ceil() as usize
        }
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let l = self.steps();
        let mut t: Vec<f64> = (0..l).map(|i| i as f64 * self.dt).collect();
        t.push(self.horizon);
        t
    }
}

/// Sampled trajectory. `x` is stored flat: the state at grid point `l` is `x[l*n..(l+1)*n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    pub n: usize,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub spec_hash: String,
    pub seed: u64,
}

impl PathGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, l: usize) -> &[f64] {
        &self.x[l * self.n..(l + 1) * self.n]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// Checks lengths, nonnegativity of Y and the time grid. Spacing must be
    /// uniform except for a possibly shorter final step.
    pub fn verify(&self) -> Result<()> {
        let l = self.times.len();
        if self.n == 0 {
            return Err(Error::Input("path has no X components".into()));
        }
        if l < 2 {
            return Err(Error::Input("path needs at least two grid points".into()));
        }
        if self.y.len() != l || self.x.len() != l * self.n {
            return Err(Error::Input("path columns have unequal lengths".into()));
        }
        if let Some(i) = self.y.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Input(format!("Y at row {i} is negative or non-finite")));
        }
        if let Some(i) = self.x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("X entry {i} is non-finite")));
        }
        let h = self.times[1] - self.times[0];
        let tol = 1e-12 * self.horizon().abs().max(1.0);
        for w in 0..l - 1 {
            let step = self.times[w + 1] - self.times[w];
            if step.is_nan() || step <= 0.0 {
                return Err(Error::Input(format!("times not strictly increasing at row {}", w + 1)));
            }
            let last = w == l - 2;
            if (step - h).abs() > tol && !(last && step < h) {
                return Err(Error::Input(format!("non-uniform time spacing at row {}", w + 1)));
            }
        }
        Ok(())
    }
}

/// SHA-256 of the spec's canonical JSON, hex encoded.
pub fn spec_hash(spec: &ModelSpec) -> String {
    let json = serde_json::to_string(spec).expect("spec serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Stepper<'a> {
    spec: &'a ModelSpec,
    rho_j1: Vec<f64>,
    rho_jj: crate::matrix::Mat,
    noise: Vec<f64>,
    drift_x: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a ModelSpec) -> Self {
        Stepper {
            spec,
            rho_j1: spec.rho_j1(),
            rho_jj: spec.rho_jj(),
            noise: vec![0.0; spec.n],
            drift_x: vec![0.0; spec.n],
        }
    }

    /// X ← X + (m − κy − θX)h + √y (ρ_J1 ΔB¹ + ρ_JJ ΔBᴶ), with ΔBᴶ drawn here.
    fn step_x(&mut self, rng: &mut ChaCha8Rng, x: &mut [f64], y: f64, h: f64, db1: f64) {
        let s = self.spec;
        let n = s.n;
        let sh = h.sqrt();
        for v in self.noise.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sh * z;
        }
        let sy = y.sqrt();
        for i in 0..n {
            let tx: f64 = s.theta.row(i).iter().zip(x.iter()).map(|(t, v)| t * v).sum();
            let diff: f64 = self.rho_jj.row(i).iter().zip(&self.noise).map(|(r, v)| r * v).sum();
            self.drift_x[i] = (s.m[i] - s.kappa[i] * y - tx) * h + sy * (self.rho_j1[i] * db1 + diff);
        }
        for (xi, dx) in x.iter_mut().zip(&self.drift_x) {
            *xi += dx;
        }
    }
}

/// One exact CIR transition over `h`.
fn cir_exact_step(rng: &mut ChaCha8Rng, a: f64, b: f64, rho11: f64, y: f64, h: f64) -> f64 {
    let s2 = rho11 * rho11;
    let (c, decay) = cir_scale(b, s2, h);
    let delta = 4.0 * a / s2;
    let lambda = y * decay / c;
    let k = if lambda > 0.0 {
        Poisson::new(0.5 * lambda).expect("finite positive Poisson mean").sample(rng)
    } else {
        0.0
    };
    let g = Gamma::new(0.5 * delta + k, 2.0).expect("positive gamma shape").sample(rng);
    c * g
}

/// Scale `c` and decay `e^{−bh}` of the noncentral χ² representation.
fn cir_scale(b: f64, s2: f64, h: f64) -> (f64, f64) {
    if b == 0.0 {
        (0.25 * s2 * h, 1.0)
    } else {
        (-s2 * (-b * h).exp_m1() / (4.0 * b), (-b * h).exp())
    }
}

/// Runs one path on `stream`, calling `visit(l, y, x)` at every grid point.
fn drive(spec: &ModelSpec, config: &SimConfig, stream: u64, mut visit: impl FnMut(usize, f64, &[f64])) {
    let mut rng = stream_rng(config.seed, stream);
    let times = config.time_grid();
    let mut st = Stepper::new(spec);
    let (a, b, r11) = (spec.a, spec.b, spec.rho11());
    let mut y = spec.y0;
    let mut x = spec.x0.clone();
    visit(0, y.max(0.0), &x);
    for l in 1..times.len() {
        let h = times[l] - times[l - 1];
        match config.scheme {
            Scheme::EulerFullTruncation => {
                let yp = y.max(0.0);
                let z: f64 = rng.sample(StandardNormal);
                let db1 = h.sqrt() * z;
                let y_next = y + (a - b * yp) * h + r11 * yp.sqrt() * db1;
                st.step_x(&mut rng, &mut x, yp, h, db1);
                y = y_next;
            }
            Scheme::ExactCir => {
                let y_next = cir_exact_step(&mut rng, a, b, r11, y, h);
                let db1 = if y > Y_IMPLIED_FLOOR {
                    (y_next - y - (a - b * y) * h) / (r11 * y.sqrt())
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    h.sqrt() * z
                };
                st.step_x(&mut rng, &mut x, y, h, db1);
                y = y_next;
            }
        }
        visit(l, y.max(0.0), &x);
    }
}

fn check_inputs(spec: &ModelSpec, config: &SimConfig) -> Result<()> {
    spec.ensure_valid()?;
    config.validate()
}

/// Simulates one path on RNG stream 0.
pub fn simulate_path(spec: &ModelSpec, config: &SimConfig) -> Result<PathGrid> {
    simulate_path_stream(spec, config, 0)
}

/// Simulates one path on an explicit RNG stream.
pub fn simulate_path_stream(spec: &ModelSpec, config: &SimConfig, stream: u64) -> Result<PathGrid> {
    check_inputs(spec, config)?;
    Ok(simulate_unchecked(spec, config, stream, spec_hash(spec)))
}

fn simulate_unchecked(spec: &ModelSpec, config: &SimConfig, stream: u64, hash: String) -> PathGrid {
    let times = config.time_grid();
    let len = times.len();
    let mut ys = Vec::with_capacity(len);
    let mut xs = Vec::with_capacity(len * spec.n);
    drive(spec, config, stream, |_, y, x| {
        ys.push(y);
        xs.extend_from_slice(x);
    });
    PathGrid { n: spec.n, times, y: ys, x: xs, spec_hash: hash, seed: config.seed }
}

fn ensemble_guard(config: &SimConfig, n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::Input("n_paths must be at least 1".into()));
    }
    let work = n_paths as f64 * config.steps() as f64;
    if work > MAX_ENSEMBLE_WORK {
        return Err(Error::Guard(format!("n_paths*steps = {work:e} exceeds {MAX_ENSEMBLE_WORK:e}")));
    }
    Ok(())
}

/// Path `k` uses stream `k`; output is ordered by `k`.
pub fn simulate_ensemble(spec: &ModelSpec, config: &SimConfig, n_paths: usize) -> Result<Vec<PathGrid>> {
    check_inputs(spec, config)?;
    ensemble_guard(config, n_paths)?;
    let hash = spec_hash(spec);
    Ok((0..n_paths as u64).into_par_iter().map(|k| simulate_unchecked(spec, config, k, hash.clone())).collect())
}

/// State `(y, x)` of one path at a requested time.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub y: f64,
    pub x: Vec<f64>,
}

/// Same streams as [`simulate_ensemble`], but keeps only the states at `times`
/// (each must be a grid point). Result is indexed `[path][time]`.
pub fn sample_states(spec: &ModelSpec, config: &SimConfig, n_paths: usize, times: &[f64]) -> Result<Vec<Vec<State>>> {
    check_inputs(spec, config)?;
    ensemble_guard(config, n_paths)?;
    let grid = config.time_grid();
    let tol = 1e-9 * config.horizon.max(1.0);
    let mut wanted = Vec::with_capacity(times.len());
    for &t in times {
        let idx = grid
            .iter()
            .position(|&g| (g - t).abs() <= tol)
            .ok_or_else(|| Error::Input(format!("time {t} is not on the simulation grid")))?;
        wanted.push(idx);
    }
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![State { y: 0.0, x: Vec::new() }; wanted.len()];
            drive(spec, config, k, |l, y, x| {
                for (slot, &w) in wanted.iter().enumerate() {
                    if w == l {
                        out[slot] = State { y, x: x.to_vec() };
                    }
                }
            });
            out
        })
        .collect())
}

/// Density of `Y_t = y_to` given `Y_0 = y_from` for `dY = (a − bY)dt + ρ₁₁√Y dB`.
///
/// Uses `Y_t = c·χ'²(δ, λ)` with `δ = 4a/ρ₁₁²`, and sums the Poisson mixture of
/// central χ² densities (the Bessel-I series) in log space outward from its mode.
pub fn cir_transition_density(a: f64, b: f64, rho11: f64, t: f64, y_from: f64, y_to: f64) -> Result<f64> {
    for (name, v) in [("a", a), ("b", b), ("rho11", rho11), ("t", t), ("y_from", y_from), ("y_to", y_to)] {
        if !v.is_finite() {
            return Err(Error::Input(format!("{name} must be finite")));
        }
    }
    if a <= 0.0 || t <= 0.0 || y_from <= 0.0 || rho11 == 0.0 {
        return Err(Error::Input("density requires a > 0, t > 0, y_from > 0 and rho11 != 0".into()));
    }
    if y_to <= 0.0 {
        return Ok(0.0);
    }
    let s2 = rho11 * rho11;
    let (c, decay) = cir_scale(b, s2, t);
    let delta = 4.0 * a / s2;
    let half_lam = 0.5 * y_from * decay / c;
    let x = y_to / c;
    let log_term = |j: f64| {
        let k = delta + 2.0 * j;
        let log_pois = -half_lam + j * half_lam.ln() - ln_gamma(j + 1.0);
        let log_chi = (0.5 * k - 1.0) * (0.5 * x).ln() - 0.5 * x - ln_gamma(0.5 * k) - std::f64::consts::LN_2;
        log_pois + log_chi
    };
    let mode = half_lam.floor();
    let peak = log_term(mode);
    let mut sum = 1.0;
    let mut j = mode + 1.0;
    loop {
        let r = (log_term(j) - peak).exp();
        sum += r;
        if r < 1e-17 * sum && j > mode + 2.0 {
            break;
        }
        j += 1.0;
    }
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let r = (log_term(j) - peak).exp();
        sum += r;
        if r < 1e-17 * sum {
            break;
        }
        j -= 1.0;
    }
    Ok((peak.exp() * sum / c).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub spec_hash: String,
    pub seed: u64,
    pub scheme: Option<Scheme>,
    pub dt: f64,
    pub horizon: f64,
    pub n: usize,
    pub version: String,
}

pub fn meta_path(csv: &Path) -> std::path::PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

pub fn path_to_csv(path: &PathGrid) -> String {
    let mut out = String::with_capacity(path.len() * 24 * (path.n + 2));
    out.push_str("t,Y");
    for i in 1..=path.n {
        let _ = write!(out, ",X{i}");
    }
    out.push('\n');
    for l in 0..path.len() {
        let _ = write!(out, "{},{}", path.times[l], path.y[l]);
        for v in path.x_at(l) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes `<file>` as CSV and `<file>.meta.json` alongside it.
pub fn write_path(path: &PathGrid, scheme: Option<Scheme>, dt: f64, file: &Path) -> Result<()> {
    fs::write(file, path_to_csv(path)).map_err(|e| Error::io(file.display().to_string(), e))?;
    let meta = PathMeta {
        spec_hash: path.spec_hash.clone(),
        seed: path.seed,
        scheme,
        dt,
        horizon: path.horizon(),
        n: path.n,
        version: crate::VERSION.to_string(),
    };
    let mp = meta_path(file);
    let txt = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&mp, txt).map_err(|e| Error::io(mp.display().to_string(), e))
}

pub fn path_from_csv(text: &str) -> Result<PathGrid> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Input("empty path file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.len().saturating_sub(2);
    let expected: Vec<String> =
        ["t".to_string(), "Y".to_string()].into_iter().chain((1..=n).map(|i| format!("X{i}"))).collect();
    if n == 0 || cols != expected {
        return Err(Error::Input(format!("path header must be t,Y,X1..Xn, got '{header}'")));
    }
    let (mut times, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Input(format!("row {}: {e}", row + 1)))?;
        if vals.len() != n + 2 {
            return Err(Error::Input(format!("row {} has {} fields, expected {}", row + 1, vals.len(), n + 2)));
        }
        times.push(vals[0]);
        y.push(vals[1]);
        x.extend_from_slice(&vals[2..]);
    }
    let p = PathGrid { n, times, y, x, spec_hash: String::new(), seed: 0 };
    p.verify()?;
    Ok(p)
}

/// Reads a CSV path; provenance fields come from the sidecar when it exists.
pub fn read_path(file: &Path) -> Result<PathGrid> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file.display().to_string(), e))?;
    let mut p = path_from_csv(&text)?;
    let mp = meta_path(file);
    if let Ok(txt) = fs::read_to_string(&mp) {
        let meta: PathMeta =
            serde_json::from_str(&txt).map_err(|e| Error::Input(format!("{}: {e}", mp.display())))?;
        p.spec_hash = meta.spec_hash;
        p.seed = meta.seed;
    }
    Ok(p)
}
