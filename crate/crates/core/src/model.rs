//! Model parameters, admissibility, regime classification, first moments,
//! the ρ_J1 decoupling transform and the Foster–Lyapunov certificate.
//!
//! The process is `Z = (Y, X)` on `ℝ₊ × ℝⁿ`:
//!
//! ```text
//! dY = (a − bY) dt + ρ₁₁ √Y dB¹
//! dX = (m − κY − θX) dt + √Y (ρ_J1 dB¹ + ρ_JJ dBᴶ)
//! ```
//!
//! with ρ lower triangular of size `d = n + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Mat, Spectrum};

/// Tolerance for "eigenvalue equals 0" and "eigenvalue equals b".
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub m: Vec<f64>,
    pub kappa: Vec<f64>,
    pub theta: Mat,
    pub rho: Mat,
    pub y0: f64,
    pub x0: Vec<f64>,
}

/// One failed admissibility check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl Violation {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Violation { code, message: message.into() }
    }
}

impl ModelSpec {
    pub fn d(&self) -> usize {
        self.n + 1
    }

    pub fn rho11(&self) -> f64 {
        self.rho[(0, 0)]
    }

    pub fn rho_j1(&self) -> Vec<f64> {
        (1..=self.n).map(|i| self.rho[(i, 0)]).collect()
    }

    pub fn rho_jj(&self) -> Mat {
        self.rho.block(1, 1, self.n, self.n)
    }

    /// ρρᵀ.
    pub fn diffusion(&self) -> Mat {
        &self.rho * &self.rho.transpose()
    }

    /// σ₁² = ρ₁₁², the squared volatility of Y.
    pub fn sigma1_sq(&self) -> f64 {
        self.rho11() * self.rho11()
    }

    pub fn theta_spectrum(&self) -> Result<Spectrum> {
        Ok(matrix::spectrum(&self.theta)?)
    }

    /// Drift `(a − by, m − κy − θx)`.
    pub fn drift(&self, y: f64, x: &[f64]) -> (f64, Vec<f64>) {
        let tx = self.theta.mul_vec(x);
        let dx = (0..self.n).map(|i| self.m[i] - self.kappa[i] * y - tx[i]).collect();
        (self.a - self.b * y, dx)
    }

    /// Drift parameters stacked as (a, b, m₁, κ₁, θ₁₁…θ₁ₙ, …, mₙ, κₙ, θₙ₁…θₙₙ).
    pub fn tau(&self) -> Vec<f64> {
        let mut t = vec![self.a, self.b];
        for i in 0..self.n {
            t.push(self.m[i]);
            t.push(self.kappa[i]);
            t.extend_from_slice(self.theta.row(i));
        }
        t
    }

    /// Drift parameters without (a, m): (b, κ₁, θ₁₁…θ₁ₙ, …, κₙ, θₙ₁…θₙₙ).
    pub fn tau_tilde(&self) -> Vec<f64> {
        let mut t = vec![self.b];
        for i in 0..self.n {
            t.push(self.kappa[i]);
            t.extend_from_slice(self.theta.row(i));
        }
        t
    }

    /// Copy of `self` with drift parameters replaced from a `tau()`-ordered vector.
    pub fn with_tau(&self, tau: &[f64]) -> Result<ModelSpec> {
        let n = self.n;
        if tau.len() != (n + 1) * (n + 1) + 1 {
            return Err(Error::Input(format!("tau has length {}, expected {}", tau.len(), (n + 1) * (n + 1) + 1)));
        }
        let mut s = self.clone();
        s.a = tau[0];
        s.b = tau[1];
        for i in 0..n {
            let base = 2 + i * (n + 2);
            s.m[i] = tau[base];
            s.kappa[i] = tau[base + 1];
            for j in 0..n {
                s.theta[(i, j)] = tau[base + 2 + j];
            }
        }
        Ok(s)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v))
        }
    }
}

/// Checks every admissibility condition; an empty list means the spec is usable.
pub fn validate(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = spec.n;
    if n == 0 {
        out.push(Violation::new("n_zero", "n must be at least 1"));
        return out;
    }
    let d = n + 1;
    let shape_ok = [
        ("m", spec.m.len() == n),
        ("kappa", spec.kappa.len() == n),
        ("x0", spec.x0.len() == n),
        ("theta", spec.theta.rows() == n && spec.theta.cols() == n),
        ("rho", spec.rho.rows() == d && spec.rho.cols() == d),
    ];
    for (name, ok) in shape_ok {
        if !ok {
            out.push(Violation::new("shape", format!("{name} has the wrong shape for n={n}")));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let scalars = [("a", spec.a), ("b", spec.b), ("y0", spec.y0)];
    let finite = scalars.iter().all(|(_, v)| v.is_finite())
        && spec.m.iter().chain(&spec.kappa).chain(&spec.x0).all(|v| v.is_finite());
    if !finite {
        out.push(Violation::new("non_finite", "all parameters must be finite"));
        return out;
    }
    if spec.a <= 0.0 {
        out.push(Violation::new("a_nonpositive", "a must be positive"));
    }
    if spec.y0 <= 0.0 {
        out.push(Violation::new("y0_nonpositive", "y0 must be positive"));
    }

    if !spec.rho.is_lower_triangular() {
        out.push(Violation::new("rho_not_lower_triangular", "rho must be lower triangular"));
    }
    if (0..d).any(|i| spec.rho[(i, i)] <= 0.0) {
        out.push(Violation::new("rho_diagonal", "rho must have a strictly positive diagonal"));
    }
    for i in 0..d {
        let s: f64 = spec.rho.row(i).iter().map(|v| v * v).sum();
        if !(s.is_finite() && s > 0.0) {
            out.push(Violation::new("sigma_nonpositive", format!("row {} of rho has zero norm", i + 1)));
        }
    }
    if matrix::cholesky(&spec.diffusion()).is_err() {
        out.push(Violation::new("rho_not_pd", "rho rhoᵀ must be positive definite"));
    }

    match matrix::spectrum(&spec.theta) {
        Err(e) => out.push(Violation::new("theta_spectrum", format!("theta must be real diagonalizable: {e}"))),
        Ok(sp) => {
            let ev = &sp.eigenvalues;
            let pos = ev.iter().all(|&l| l > ZERO_TOL);
            let neg = ev.iter().all(|&l| l < -ZERO_TOL);
            let zero = ev.iter().all(|&l| l.abs() <= ZERO_TOL);
            if !(pos || neg || zero) {
                out.push(Violation::new("theta_mixed_sign", "theta spectrum must have uniform sign"));
            }
            let eq_b = ev.iter().filter(|&&l| (l - spec.b).abs() <= ZERO_TOL).count();
            if eq_b != 0 && eq_b != ev.len() {
                out.push(Violation::new(
                    "theta_partial_b",
                    "theta eigenvalues must be either all equal to b or all different from b",
                ));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeClass {
    pub label: Regime,
    pub b: f64,
    pub lambda_min_theta: f64,
    pub lambda_max_theta: f64,
}

pub fn classify(spec: &ModelSpec) -> Result<RegimeClass> {
    let sp = spec.theta_spectrum()?;
    let (lmin, lmax, b) = (sp.lambda_min(), sp.lambda_max(), spec.b);
    let is_zero = |v: f64| v.abs() <= ZERO_TOL;
    let theta_zero = is_zero(lmin) && is_zero(lmax);
    let label = if b > ZERO_TOL && lmin > ZERO_TOL {
        Regime::Subcritical
    } else if (b >= -ZERO_TOL && theta_zero) || (is_zero(b) && lmin > ZERO_TOL) {
        Regime::Critical
    } else if b.min(lmax) < -ZERO_TOL {
        Regime::Supercritical
    } else {
        return Err(Error::Unsupported(format!(
            "b={b} with theta spectrum [{lmin}, {lmax}] falls outside the three regimes"
        )));
    };
    Ok(RegimeClass { label, b, lambda_min_theta: lmin, lambda_max_theta: lmax })
}

/// E(Y_t) given E(Y₀) = `ey0`.
pub fn mean_y(spec: &ModelSpec, t: f64, ey0: f64) -> f64 {
    let (a, b) = (spec.a, spec.b);
    if b == 0.0 {
        ey0 + a * t
    } else {
        a / b + (ey0 - a / b) * (-b * t).exp()
    }
}

/// E(X_t) given E(Y₀) = `ey0`, E(X₀) = `ex0`, evaluated in the eigenbasis of θ.
pub fn mean_x(spec: &ModelSpec, t: f64, ey0: f64, ex0: &[f64]) -> Result<Vec<f64>> {
    if ex0.len() != spec.n {
        return Err(Error::Input(format!("ex0 has length {}, expected {}", ex0.len(), spec.n)));
    }
    let sp = spec.theta_spectrum()?;
    let (a, b) = (spec.a, spec.b);
    let pinv = &sp.inverse_modal;
    let x0m = pinv.mul_vec(ex0);
    let mm = pinv.mul_vec(&spec.m);
    let km = pinv.mul_vec(&spec.kappa);
    let mut modal = Vec::with_capacity(spec.n);
    for (k, &lam) in sp.eigenvalues.iter().enumerate() {
        let lam_zero = lam.abs() <= ZERO_TOL;
        // ∫₀ᵗ e^{−λ(t−s)} ds
        let phi1 = if lam_zero { t } else { -(-lam * t).exp_m1() / lam };
        // ∫₀ᵗ e^{−λ(t−s)} E(Y_s) ds
        let y_term = if b.abs() > ZERO_TOL {
            let g = if (lam - b).abs() <= ZERO_TOL {
                t * (-b * t).exp()
            } else {
                ((-b * t).exp() - (-lam * t).exp()) / (lam - b)
            };
            (a / b) * phi1 + (ey0 - a / b) * g
        } else {
            let h = if lam_zero { 0.5 * t * t } else { (t - phi1) / lam };
            ey0 * phi1 + a * h
        };
        modal.push((-lam * t).exp() * x0m[k] + phi1 * mm[k] - y_term * km[k]);
    }
    Ok(sp.modal.mul_vec(&modal))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments {
    pub mean_y_inf: f64,
    pub inv_mean_y_inf: f64,
}

/// E(Y_∞) = a/b and E(1/Y_∞) = 2b/(2a − σ₁²).
pub fn stationary_moments(spec: &ModelSpec) -> Result<StationaryMoments> {
    let s2 = spec.sigma1_sq();
    if spec.b <= 0.0 {
        return Err(Error::Precondition(format!("b > 0 is required, got b={}", spec.b)));
    }
    if 2.0 * spec.a <= s2 {
        return Err(Error::Precondition(format!(
            "a > sigma1^2/2 is required, got a={} and sigma1^2/2={}",
            spec.a,
            s2 / 2.0
        )));
    }
    Ok(StationaryMoments { mean_y_inf: spec.a / spec.b, inv_mean_y_inf: 2.0 * spec.b / (2.0 * spec.a - s2) })
}

/// Rewrites the model in the coordinates `X̃ = X − (Y/ρ₁₁) ρ_J1`, which zeroes ρ_J1.
pub fn decouple(spec: &ModelSpec) -> ModelSpec {
    let rj1 = spec.rho_j1();
    if rj1.iter().all(|&v| v == 0.0) {
        return spec.clone();
    }
    let r11 = spec.rho11();
    let theta_r = spec.theta.mul_vec(&rj1);
    let mut out = spec.clone();
    for i in 0..spec.n {
        out.m[i] = spec.m[i] - spec.a / r11 * rj1[i];
        out.kappa[i] = spec.kappa[i] - (spec.b * rj1[i] - theta_r[i]) / r11;
        out.x0[i] = spec.x0[i] - spec.y0 / r11 * rj1[i];
        out.rho[(i + 1, 0)] = 0.0;
    }
    out
}

/// Constants of the drift inequality `𝒜V + cV ≤ d` for `V(y,x) = y² + r‖x‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub c: f64,
    pub r: f64,
    pub d: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: Mat,
    pub c4: Vec<f64>,
    /// Open upper bound on `c`.
    pub c_bound: f64,
    /// Open upper bound on `r`; `None` when κ = 0 and any `r > 0` works.
    pub r_bound: Option<f64>,
}

/// Builds the certificate, choosing `c = λ∧b` and `r` at half its bound when omitted.
///
/// λ is the smallest eigenvalue of the symmetric part of θ, which is what the
/// quadratic form `xᵀθx` actually needs; it is λ_min(θ) for symmetric θ.
pub fn lyapunov_certificate(spec: &ModelSpec, c: Option<f64>, r: Option<f64>) -> Result<LyapunovCertificate> {
    spec.ensure_valid()?;
    let n = spec.n;
    let b = spec.b;
    let sp = spec.theta_spectrum()?;
    if b <= 0.0 || sp.lambda_min() <= 0.0 {
        return Err(Error::Precondition("certificate requires b > 0 and theta positive definite".into()));
    }
    let sym = (&spec.theta + &spec.theta.transpose()).scale(0.5);
    let lam = matrix::spectrum(&sym)?.lambda_min();
    if lam <= 0.0 {
        return Err(Error::Precondition(
            "symmetric part of theta is not positive definite; no quadratic certificate exists".into(),
        ));
    }
    let c_bound = 2.0 * lam.min(b);
    let c = c.unwrap_or(lam.min(b));
    if !(c > 0.0 && c < c_bound) {
        return Err(Error::Precondition(format!("c must lie in (0, {c_bound}), got {c}")));
    }
    let kk: f64 = spec.kappa.iter().map(|v| v * v).sum();
    let r_bound = (kk > 0.0).then(|| (2.0 * lam - c) * (2.0 * b - c) / kk);
    let r = r.unwrap_or(match r_bound {
        Some(rb) => 0.5 * rb,
        None => 1.0,
    });
    if !(r > 0.0 && r.is_finite() && r_bound.is_none_or(|rb| r < rb)) {
        let upper = r_bound.map_or("inf".to_string(), |v| v.to_string());
        return Err(Error::Precondition(format!("r must lie in (0, {upper}), got {r}")));
    }

    let c1 = 2.0 * spec.a + spec.sigma1_sq() + r * x_trace(spec);
    let c2 = 2.0 * b - c;
    let mut c3 = Mat::identity(n).scale(r * (2.0 * lam - c));
    for i in 0..n {
        for j in 0..n {
            c3[(i, j)] -= r * r / c2 * spec.kappa[i] * spec.kappa[j];
        }
    }
    let c4: Vec<f64> = (0..n).map(|i| 2.0 * r * spec.m[i] - r * c1 / c2 * spec.kappa[i]).collect();
    let sol = c3.solve(&Mat::column(&c4))?;
    let quad: f64 = c4.iter().zip(sol.as_slice()).map(|(u, v)| u * v).sum();
    let d = c1 * c1 / (4.0 * c2) + 0.25 * quad;
    Ok(LyapunovCertificate { c, r, d, c1, c2, c3, c4, c_bound, r_bound })
}

/// ‖ρ_J1‖² + tr(ρ_JJ ρ_JJᵀ): the summed variance rate of X per unit of Y.
fn x_trace(spec: &ModelSpec) -> f64 {
    (1..spec.d()).map(|i| spec.rho.row(i).iter().map(|v| v * v).sum::<f64>()).sum()
}

/// Generator of the process applied to `V(y,x) = y² + r‖x‖²`.
pub fn generator_apply(spec: &ModelSpec, r: f64, y: f64, x: &[f64]) -> f64 {
    let (dy, dx) = spec.drift(y, x);
    let first = 2.0 * y * dy + 2.0 * r * x.iter().zip(&dx).map(|(u, v)| u * v).sum::<f64>();
    first + y * (spec.sigma1_sq() + r * x_trace(spec))
}

pub fn lyapunov_v(r: f64, y: f64, x: &[f64]) -> f64 {
    y * y + r * x.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub points: usize,
    pub violations: usize,
    /// max of `𝒜V + cV − d` over the lattice.
    pub worst_margin: f64,
}

/// Evaluates `𝒜V + cV ≤ d` on a uniform lattice `y ∈ y_range`, `x ∈ x_range`ⁿ.
pub fn drift_check(
    spec: &ModelSpec,
    cert: &LyapunovCertificate,
    y_range: (f64, f64),
    x_range: (f64, f64),
    per_axis: usize,
) -> Result<DriftCheck> {
    let n = spec.n;
    if per_axis < 2 {
        return Err(Error::Input("lattice needs at least 2 points per axis".into()));
    }
    let total = (per_axis as f64).powi(n as i32 + 1);
    if total > 1e8 {
        return Err(Error::Guard(format!("lattice of {total:e} points exceeds 1e8")));
    }
    let axis = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (per_axis - 1) as f64;
    let slack = 1e-9 * cert.d.abs().max(1.0);
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let (mut points, mut violations, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
    loop {
        for (xi, &k) in x.iter_mut().zip(&idx) {
            *xi = axis(x_range.0, x_range.1, k);
        }
        for ky in 0..per_axis {
            let y = axis(y_range.0, y_range.1, ky);
            let lhs = generator_apply(spec, cert.r, y, &x) + cert.c * lyapunov_v(cert.r, y, &x);
            let margin = lhs - cert.d;
            worst = worst.max(margin);
            if margin > slack {
                violations += 1;
            }
            points += 1;
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    Ok(DriftCheck { points, violations, worst_margin: worst })
}

/// Reference subcritical model: n=1, a=2, b=1, m=κ=0.5, θ=1, ρ=I₂, y0=1, x0=0.
pub fn reference_subcritical() -> ModelSpec {
    ModelSpec {
        n: 1,
        a: 2.0,
        b: 1.0,
        m: vec![0.5],
        kappa: vec![0.5],
        theta: Mat::identity(1),
        rho: Mat::identity(2),
        y0: 1.0,
        x0: vec![0.0],
    }
}

/// Reference supercritical model: n=1, a=2, b=−1, m=1, κ=−0.5, θ=−2, ρ=I₂, y0=1, x0=0.
pub fn reference_supercritical() -> ModelSpec {
    ModelSpec {
        n: 1,
        a: 2.0,
        b: -1.0,
        m: vec![1.0],
        kappa: vec![-0.5],
        theta: Mat::from_diag(&[-2.0]),
        rho: Mat::identity(2),
        y0: 1.0,
        x0: vec![0.0],
    }
}
