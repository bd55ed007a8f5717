//! Riccati flow of the Fourier–Laplace exponent and the stationary law.
//!
//! For `ν = (−λ, iμ)` the exponent `𝒦_t` solves
//!
//! ```text
//! 𝒦' = (ρ₁₁²/2)𝒦² − (b − iρ₁₁α)𝒦 − iβ − γ/2 − α²/2,   𝒦₀ = −λ
//! α(t) = ρ_J1ᵀ e^{−tθᵀ} μ
//! β(t) = κᵀ e^{−tθᵀ} μ
//! γ(t) = vec(ρ_JJ ρ_JJᵀ)ᵀ e^{−t(θᵀ⊕θᵀ)} (μ⊗μ)
//! ```
//!
//! and `E exp(−λY_∞ + iμᵀX_∞) = exp(a ∫₀^∞ 𝒦_s ds + iμᵀθ⁻¹m)` in the
//! subcritical regime. The solver evaluates α, β, γ as exponential sums over
//! the spectrum of θ; [`riccati_rhs`] evaluates them through `expm` instead.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, kron, kron_sum, Mat, Spectrum};
use crate::model::ModelSpec;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
/// Slack for the `Re 𝒦 ≤ 0` monitor, relative to `max(1, |𝒦₀|)`.
const MONITOR_SLACK: f64 = 1e-12;

/// `(λ, μ)` with `u₁ = −λ`, `u₂ = μ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FLArgument {
    pub lambda: f64,
    pub mu: Vec<f64>,
}

impl FLArgument {
    pub fn new(lambda: f64, mu: Vec<f64>) -> Self {
        FLArgument { lambda, mu }
    }

    fn check(&self, n: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Input(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if self.mu.len() != n || self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("mu must be a finite vector of length {n}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    /// ∫₀ᵀ 𝒦_s ds, integrated alongside 𝒦.
    pub integral: Complex64,
    /// Present for subcritical specs only.
    pub tail_bound: Option<TailBound>,
}

impl RiccatiSolution {
    pub fn last(&self) -> Complex64 {
        *self.values.last().expect("solution has at least one point")
    }
}

/// `Σ_j c_j e^{−r_j t}`.
#[derive(Clone, Debug)]
struct ExpSum {
    rates: Vec<f64>,
    coef: Vec<Complex64>,
}

impl ExpSum {
    fn eval(&self, t: f64) -> Complex64 {
        self.rates.iter().zip(&self.coef).map(|(r, c)| c * (-r * t).exp()).sum()
    }
}

/// Exponential-sum forms of `vᵀ e^{−tθᵀ} u` and `wᵀ e^{−t(θᵀ⊕θᵀ)} u3`, built from θ = P D P⁻¹.
struct Modal {
    sp: Spectrum,
}

impl Modal {
    fn new(theta: &Mat) -> Result<Self> {
        Ok(Modal { sp: matrix::spectrum(theta)? })
    }

    /// `vᵀ e^{−tθᵀ} u = Σ_k (P⁻¹v)_k (Pᵀu)_k e^{−λ_k t}`.
    fn linear(&self, v: &[f64], u: &[Complex64]) -> ExpSum {
        let n = v.len();
        let pv = self.sp.inverse_modal.mul_vec(v);
        let pt = &self.sp.modal;
        let coef = (0..n)
            .map(|k| {
                let ptu: Complex64 = (0..n).map(|i| pt[(i, k)] * u[i]).sum();
                pv[k] * ptu
            })
            .collect();
        ExpSum { rates: self.sp.eigenvalues.clone(), coef }
    }

    /// `wᵀ (e^{−tθᵀ} ⊗ e^{−tθᵀ}) u3`, indexed over eigenvalue pairs.
    fn quadratic(&self, w: &[f64], u3: &[Complex64]) -> ExpSum {
        let n = self.sp.eigenvalues.len();
        let pinv2 = kron(&self.sp.inverse_modal, &self.sp.inverse_modal);
        let p2 = kron(&self.sp.modal, &self.sp.modal);
        let left = pinv2.mul_vec(w);
        let mut rates = Vec::with_capacity(n * n);
        let mut coef = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                let idx = k * n + l;
                let right: Complex64 = (0..n * n).map(|i| p2[(i, idx)] * u3[i]).sum();
                rates.push(self.sp.eigenvalues[k] + self.sp.eigenvalues[l]);
                coef.push(left[idx] * right);
            }
        }
        ExpSum { rates, coef }
    }
}

fn real_to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn mu_kron(mu: &[f64]) -> Vec<f64> {
    kron(&Mat::column(mu), &Mat::column(mu)).as_slice().to_vec()
}

/// Right-hand side of the Riccati equation at `(t, K)`, with the matrix
/// exponentials evaluated by `expm`.
pub fn riccati_rhs(spec: &ModelSpec, t: f64, k: Complex64, arg: &FLArgument) -> Result<Complex64> {
    arg.check(spec.n)?;
    let r11 = spec.rho11();
    let e = matrix::expm(&spec.theta.transpose().scale(-t))?;
    let emu = e.mul_vec(&arg.mu);
    let dot = |v: &[f64]| v.iter().zip(&emu).map(|(a, b)| a * b).sum::<f64>();
    let alpha = dot(&spec.rho_j1());
    let beta = dot(&spec.kappa);
    let tt = spec.theta.transpose();
    let e2 = matrix::expm(&kron_sum(&tt, &tt)?.scale(-t))?;
    let rjj = spec.rho_jj();
    let w = matrix::vec(&(&rjj * &rjj.transpose()));
    let gamma: f64 = w.as_slice().iter().zip(e2.mul_vec(&mu_kron(&arg.mu))).map(|(a, b)| a * b).sum();
    Ok(0.5 * r11 * r11 * k * k - (spec.b - I * (r11 * alpha)) * k - I * beta - 0.5 * gamma - 0.5 * alpha * alpha)
}

/// Fast evaluation of the same right-hand side through the spectrum of θ.
struct Rhs {
    half_s2: f64,
    r11: f64,
    b: f64,
    alpha: ExpSum,
    beta: ExpSum,
    gamma: ExpSum,
}

impl Rhs {
    fn new(spec: &ModelSpec, mu: &[f64]) -> Result<Self> {
        let modal = Modal::new(&spec.theta)?;
        let muc = real_to_complex(mu);
        let rjj = spec.rho_jj();
        let w = matrix::vec(&(&rjj * &rjj.transpose()));
        Ok(Rhs {
            half_s2: 0.5 * spec.sigma1_sq(),
            r11: spec.rho11(),
            b: spec.b,
            alpha: modal.linear(&spec.rho_j1(), &muc),
            beta: modal.linear(&spec.kappa, &muc),
            gamma: modal.quadratic(w.as_slice(), &real_to_complex(&mu_kron(mu))),
        })
    }

    fn eval(&self, t: f64, k: Complex64) -> Complex64 {
        let alpha = self.alpha.eval(t).re;
        let beta = self.beta.eval(t).re;
        let gamma = self.gamma.eval(t).re;
        self.half_s2 * k * k - (self.b - I * (self.r11 * alpha)) * k - I * beta - 0.5 * gamma - 0.5 * alpha * alpha
    }
}

struct Flow {
    times: Vec<f64>,
    values: Vec<Complex64>,
    integral: Complex64,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `K' = f(t, K)` together with `∫K` on `[0, horizon]`.
///
/// The state is treated as four real components; each accepted step has
/// local error below `tol · max(1, |component|)`. With `monitor`, any
/// `Re K > slack` aborts.
fn integrate(
    f: impl Fn(f64, Complex64) -> Complex64,
    k0: Complex64,
    horizon: f64,
    tol: f64,
    monitor: bool,
) -> Result<Flow> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Input(format!("tol must be positive, got {tol}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Input(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    let slack = MONITOR_SLACK * k0.norm().max(1.0);
    let mut t = 0.0;
    let mut k = k0;
    let mut int = Complex64::new(0.0, 0.0);
    let mut times = vec![0.0];
    let mut values = vec![k0];
    if horizon == 0.0 {
        return Ok(Flow { times, values, integral: int });
    }
    let mut h = (horizon * 1e-2).min(1e-2);
    let mut fk = f(t, k);
    while t < horizon {
        let last = t + h >= horizon;
        if last {
            h = horizon - t;
        }
        let mut stages = [Complex64::new(0.0, 0.0); 7];
        stages[0] = fk;
        for s in 1..7 {
            let mut incr = Complex64::new(0.0, 0.0);
            for (j, st) in stages.iter().enumerate().take(s) {
                incr += A[s][j] * st;
            }
            stages[s] = f(t + C[s] * h, k + h * incr);
        }
        // The integral's derivative at each stage is the stage's K value.
        let mut kv = [Complex64::new(0.0, 0.0); 7];
        kv[0] = k;
        for s in 1..7 {
            let mut incr = Complex64::new(0.0, 0.0);
            for (j, st) in stages.iter().enumerate().take(s) {
                incr += A[s][j] * st;
            }
            kv[s] = k + h * incr;
        }
        let zero = Complex64::new(0.0, 0.0);
        let (mut dk5, mut dk4, mut di5, mut di4) = (zero, zero, zero, zero);
        for s in 0..7 {
            dk5 += B5[s] * stages[s];
            dk4 += B4[s] * stages[s];
            di5 += B5[s] * kv[s];
            di4 += B4[s] * kv[s];
        }
        let k_new: Complex64 = k + h * dk5;
        let i_new: Complex64 = int + h * di5;
        let ek = h * (dk5 - dk4);
        let ei = h * (di5 - di4);
        let err = [
            ek.re.abs() / (tol * k_new.re.abs().max(1.0)),
            ek.im.abs() / (tol * k_new.im.abs().max(1.0)),
            ei.re.abs() / (tol * i_new.re.abs().max(1.0)),
            ei.im.abs() / (tol * i_new.im.abs().max(1.0)),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if !err.is_finite() {
            return Err(Error::Numerical(format!("Riccati flow diverged near t={t}")));
        }
        if err <= 1.0 {
            t = if last { horizon } else { t + h };
            k = k_new;
            int = i_new;
            fk = stages[6];
            if monitor && k.re > slack {
                return Err(Error::Numerical(format!(
                    "Re K = {:e} > 0 at t={t}: integrator left the admissible half-plane",
                    k.re
                )));
            }
            times.push(t);
            values.push(k);
        }
        let factor: f64 = if err == 0.0 { 5.0 } else { (0.9f64 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * t.max(1.0) {
            return Err(Error::Numerical(format!("step size underflow at t={t}")));
        }
    }
    Ok(Flow { times, values, integral: int })
}

fn is_subcritical(spec: &ModelSpec) -> Result<bool> {
    Ok(spec.b > 0.0 && spec.theta_spectrum()?.lambda_min() > 0.0)
}

/// Flow of `𝒦_t(−λ, μ)` on `[0, horizon]`.
pub fn solve_riccati(spec: &ModelSpec, arg: &FLArgument, horizon: f64, tol: f64) -> Result<RiccatiSolution> {
    arg.check(spec.n)?;
    solve_riccati_from(spec, Complex64::new(-arg.lambda, 0.0), &arg.mu, horizon, tol)
}

/// Same flow from an arbitrary initial value `u₁` with `Re u₁ ≤ 0`.
pub fn solve_riccati_from(
    spec: &ModelSpec,
    u1: Complex64,
    mu: &[f64],
    horizon: f64,
    tol: f64,
) -> Result<RiccatiSolution> {
    spec.ensure_valid()?;
    if mu.len() != spec.n {
        return Err(Error::Input(format!("mu must have length {}", spec.n)));
    }
    if !(u1.re <= 0.0 && u1.is_finite()) {
        return Err(Error::Input(format!("initial value must have nonpositive real part, got {u1}")));
    }
    let rhs = Rhs::new(spec, mu)?;
    let flow = integrate(|t, k| rhs.eval(t, k), u1, horizon, tol, true)?;
    let tail_bound = if is_subcritical(spec)? { Some(tail_bound_from(spec, u1, mu)?) } else { None };
    Ok(RiccatiSolution { times: flow.times, values: flow.values, integral: flow.integral, tail_bound })
}

/// `|𝒦_t(−λ, μ)| ≤ C₁ e^{−C₂t}`.
pub fn tail_bound(spec: &ModelSpec, arg: &FLArgument) -> Result<TailBound> {
    arg.check(spec.n)?;
    tail_bound_from(spec, Complex64::new(-arg.lambda, 0.0), &arg.mu)
}

/// Bound for general `u₁`. With ρ_J1 ≠ 0 the constants are computed for the
/// decoupled model at the shifted argument, and the `|α(t)|/ρ₁₁` term that
/// separates the two flows is added to C₁.
fn tail_bound_from(spec: &ModelSpec, u1: Complex64, mu: &[f64]) -> Result<TailBound> {
    spec.ensure_valid()?;
    if !is_subcritical(spec)? {
        return Err(Error::Precondition("tail bound requires b > 0 and theta positive definite".into()));
    }
    let sp = spec.theta_spectrum()?;
    let cond = sp.condition();
    let lmin = sp.lambda_min();
    let b = spec.b;
    let r11 = spec.rho11();
    let rj1 = spec.rho_j1();
    let norm1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mu1 = norm1(mu);
    let dec = crate::model::decouple(spec);
    let shift: f64 = mu.iter().zip(&rj1).map(|(m, r)| m * r).sum::<f64>() / r11;
    let u1d = u1 + I * shift;

    let c2 = lmin.min(0.5 * b);
    let gap = if (b - lmin).abs() <= crate::model::ZERO_TOL {
        2.0 / (std::f64::consts::E * b)
    } else {
        1.0 / (b - lmin).abs()
    };
    let c3 = u1d.norm() + norm1(&dec.kappa) * mu1 * cond * gap;
    let rjj = spec.rho_jj();
    let w = matrix::vec(&(&rjj * &rjj.transpose()));
    let u3 = 0.5 * mu1 * mu1;
    let c4 = 0.5 * r11 * r11 * c3 * c3 + norm1(w.as_slice()) * u3 * cond * cond;
    let c5 = -u1d.re + 2.0 * c4 / b;
    let c1 = (c5 * c5 + c3 * c3).sqrt() + norm1(&rj1) * mu1 * cond / r11;
    Ok(TailBound { c1, c2, c3, c4, c5 })
}

/// `E exp(−λY_∞ + iμᵀX_∞)` for a subcritical spec, with the integral
/// truncated where the tail bound drops its contribution below `tol`.
pub fn stationary_cf(spec: &ModelSpec, arg: &FLArgument, tol: f64) -> Result<Complex64> {
    arg.check(spec.n)?;
    stationary_cf_from(spec, Complex64::new(-arg.lambda, 0.0), &arg.mu, tol)
}

/// `exp(a ∫₀^∞ 𝒦_s(u₁, μ) ds + iμᵀθ⁻¹m)` for general `u₁` with `Re u₁ ≤ 0`.
pub fn stationary_cf_from(spec: &ModelSpec, u1: Complex64, mu: &[f64], tol: f64) -> Result<Complex64> {
    spec.ensure_valid()?;
    if !is_subcritical(spec)? {
        return Err(Error::Precondition("stationary law requires b > 0 and theta positive definite".into()));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Input(format!("tol must be positive, got {tol}")));
    }
    let tb = tail_bound_from(spec, u1, mu)?;
    let a = spec.a;
    let budget = 0.5 * tol;
    let horizon = if tb.c1 == 0.0 { 1.0 } else { ((a * tb.c1 / (tb.c2 * budget)).ln() / tb.c2).max(1.0) };
    let ode_tol = (1e-3 * tol).clamp(1e-13, 1e-8);
    let sol = solve_riccati_from(spec, u1, mu, horizon, ode_tol)?;
    let tm = spec.theta.solve(&Mat::column(&spec.m))?;
    let phase: f64 = mu.iter().zip(tm.as_slice()).map(|(a, b)| a * b).sum();
    Ok((a * sol.integral + I * phase).exp())
}

/// Closed-form `ψ₂`, `ψ₃` and integrated `ψ₁` of the Riccati system on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiFlow {
    pub times: Vec<f64>,
    pub psi1: Vec<Complex64>,
    pub psi2: Vec<Vec<Complex64>>,
    pub psi3: Vec<Vec<Complex64>>,
    pub psi1_integral: Complex64,
}

/// `ψ₂(t) = e^{−tθᵀ}u₂`, `ψ₃(t) = e^{−t(θᵀ⊕θᵀ)}u₃`, and
/// `ψ₁' = (ρ₁₁²/2)ψ₁² − bψ₁ + κᵀψ₂ + vec(ρ_JJρ_JJᵀ)ᵀψ₃`, `ψ₁(0) = u₁`.
/// Only defined for ρ_J1 = 0; decouple first otherwise.
pub fn psi_system(
    spec: &ModelSpec,
    u1: Complex64,
    u2: &[Complex64],
    u3: &[Complex64],
    horizon: f64,
    tol: f64,
) -> Result<PsiFlow> {
    spec.ensure_valid()?;
    let n = spec.n;
    if u2.len() != n || u3.len() != n * n {
        return Err(Error::Input(format!("u2 must have length {n} and u3 length {}", n * n)));
    }
    if spec.rho_j1().iter().any(|&v| v != 0.0) {
        return Err(Error::Precondition("psi system needs rho_J1 = 0; apply decouple first".into()));
    }
    let modal = Modal::new(&spec.theta)?;
    let rjj = spec.rho_jj();
    let w = matrix::vec(&(&rjj * &rjj.transpose()));
    let lin = modal.linear(&spec.kappa, u2);
    let quad = modal.quadratic(w.as_slice(), u3);
    let (hs2, b) = (0.5 * spec.sigma1_sq(), spec.b);
    let f = |t: f64, p: Complex64| hs2 * p * p - b * p + lin.eval(t) + quad.eval(t);
    let flow = integrate(f, u1, horizon, tol, false)?;

    let tt = spec.theta.transpose();
    let ks = kron_sum(&tt, &tt)?;
    let mut psi2 = Vec::with_capacity(flow.times.len());
    let mut psi3 = Vec::with_capacity(flow.times.len());
    for &t in &flow.times {
        psi2.push(complex_mul(&matrix::expm(&tt.scale(-t))?, u2));
        psi3.push(complex_mul(&matrix::expm(&ks.scale(-t))?, u3));
    }
    Ok(PsiFlow { times: flow.times, psi1: flow.values, psi2, psi3, psi1_integral: flow.integral })
}

fn complex_mul(m: &Mat, v: &[Complex64]) -> Vec<Complex64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}
