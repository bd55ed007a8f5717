//! Drift maximum likelihood on a sampled path.
//!
//! With `S(z) = y ρρᵀ` and the drift written as `Λ(z) τ` (full model) or
//! `c − Λ̃(z) τ̃` (a and m known), the continuous-record MLEs are
//!
//! ```text
//! τ̂ = (∫ΛᵀS⁻¹Λ ds)⁻¹ ∫ΛᵀS⁻¹ dZ
//! τ̃̂ = (∫Λ̃ᵀS⁻¹Λ̃ ds)⁻¹ (∫Λ̃ᵀS⁻¹c ds − ∫Λ̃ᵀS⁻¹ dZ)
//! ```
//!
//! Both integrals are discretized with left endpoints on the path grid.
//! τ is ordered (a, b, m₁, κ₁, θ₁₁…θ₁ₙ, …, mₙ, κₙ, θₙ₁…θₙₙ) and τ̃ drops a and
//! the m's; every serialized result carries the tag [`ORDERING`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Mat};
use crate::model::{ModelSpec, Regime, RegimeClass};
use crate::simulator::PathGrid;

pub const ORDERING: &str = "duffie-ad1n-v1";
/// Steps with Y below this are left out of the S⁻¹-weighted sums.
pub const Y_FLOOR: f64 = 1e-10;
/// Largest tolerated share of skipped steps.
pub const MAX_SKIPPED_SHARE: f64 = 1e-3;
pub const MAX_CONDITION: f64 = 1e12;

/// Λ(z): d × (d²+1).
pub fn lambda_matrix(y: f64, x: &[f64]) -> Mat {
    let n = x.len();
    let d = n + 1;
    let mut l = Mat::zeros(d, d * d + 1);
    l[(0, 0)] = 1.0;
    l[(0, 1)] = -y;
    for i in 0..n {
        let base = 2 + i * (n + 2);
        l[(i + 1, base)] = 1.0;
        l[(i + 1, base + 1)] = -y;
        for j in 0..n {
            l[(i + 1, base + 2 + j)] = -x[j];
        }
    }
    l
}

/// Λ̃(z): d × (d²−n), with drift `c − Λ̃(z)τ̃`.
pub fn lambda_tilde(y: f64, x: &[f64]) -> Mat {
    let n = x.len();
    let d = n + 1;
    let mut l = Mat::zeros(d, d * d - n);
    l[(0, 0)] = y;
    for i in 0..n {
        let base = 1 + i * (n + 1);
        l[(i + 1, base)] = y;
        for j in 0..n {
            l[(i + 1, base + 1 + j)] = x[j];
        }
    }
    l
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub tau_hat: Vec<f64>,
    pub info_matrix: Mat,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// 2-norm condition number of the diagonally equilibrated information matrix.
    pub condition_number: f64,
    pub rho_used: Mat,
    pub skipped_steps: usize,
    pub ordering: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedMleResult {
    pub tau_tilde_hat: Vec<f64>,
    pub info_matrix: Mat,
    pub known_c: KnownC,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub condition_number: f64,
    pub rho_used: Mat,
    pub skipped_steps: usize,
    pub ordering: String,
}

/// The drift intercepts `(a, m)` treated as known by the restricted estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownC {
    pub a: f64,
    pub m: Vec<f64>,
}

impl KnownC {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        KnownC { a: spec.a, m: spec.m.clone() }
    }
}

/// Neumaier-compensated running sum.
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

struct Normal {
    info: Mat,
    rhs: Vec<f64>,
    skipped: usize,
}

/// `W = (ρρᵀ)⁻¹`. Any ρ with ρρᵀ positive definite is accepted.
fn weight(rho: &Mat, d: usize) -> Result<Mat> {
    if rho.rows() != d || rho.cols() != d {
        return Err(Error::Input(format!("rho must be {d}x{d}, got {}x{}", rho.rows(), rho.cols())));
    }
    let s = &(rho * &rho.transpose());
    let s = (s + &s.transpose()).scale(0.5);
    matrix::cholesky(&s).map_err(|e| Error::Input(format!("rho rhoᵀ is not positive definite: {e}")))?;
    Ok(s.inverse()?)
}

/// Accumulates `Σ DᵀWD/y Δt` and `Σ DᵀW v / y` over the path, where `D` is
/// the design at the left endpoint and `v` is supplied per step.
fn accumulate(
    path: &PathGrid,
    rho: &Mat,
    p: usize,
    design: impl Fn(f64, &[f64]) -> Mat,
    increment: impl Fn(&[f64], f64) -> Vec<f64>,
) -> Result<Normal> {
    path.verify()?;
    let n = path.n;
    let d = n + 1;
    let w = weight(rho, d)?;
    let steps = path.len() - 1;
    let mut info = vec![Sum::default(); p * p];
    let mut rhs = vec![Sum::default(); p];
    let mut skipped = 0usize;
    let mut dz = vec![0.0; d];
    for l in 0..steps {
        let y = path.y[l];
        if y < Y_FLOOR {
            skipped += 1;
            continue;
        }
        let x = path.x_at(l);
        let h = path.times[l + 1] - path.times[l];
        dz[0] = path.y[l + 1] - y;
        for (i, v) in path.x_at(l + 1).iter().zip(x).map(|(a, b)| a - b).enumerate() {
            dz[i + 1] = v;
        }
        let v = increment(&dz, h);
        let dm = design(y, x);
        let wd = (&w * &dm).scale(1.0 / y);
        let wv = w.mul_vec(&v);
        for i in 0..p {
            for j in i..p {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += dm[(k, i)] * wd[(k, j)];
                }
                info[i * p + j].add(acc * h);
            }
            let mut acc = 0.0;
            for k in 0..d {
                acc += dm[(k, i)] * wv[k];
            }
            rhs[i].add(acc / y);
        }
    }
    if skipped as f64 > MAX_SKIPPED_SHARE * steps as f64 {
        return Err(Error::Numerical(format!(
            "{skipped} of {steps} steps have Y below {Y_FLOOR:e} (limit {:.1}%)",
            100.0 * MAX_SKIPPED_SHARE
        )));
    }
    let mut m = Mat::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = info[i * p + j].get();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(Normal { info: m, rhs: rhs.iter().map(Sum::get).collect(), skipped })
}

/// Solves `M x = r` for symmetric positive definite `M` after scaling rows
/// and columns to unit diagonal. Returns the solution and the condition
/// number of the scaled matrix.
fn equilibrated_solve(m: &Mat, r: &[f64]) -> Result<(Vec<f64>, f64)> {
    let p = m.rows();
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let v = m[(i, i)];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Numerical(format!("information matrix has non-positive diagonal entry {i}")));
        }
        scale.push(1.0 / v.sqrt());
    }
    let mut me = m.clone();
    for i in 0..p {
        for j in 0..p {
            me[(i, j)] *= scale[i] * scale[j];
        }
    }
    let ev = matrix::spectrum(&me)?.eigenvalues;
    let (lo, hi) = (ev[0], ev[p - 1]);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond.is_nan() || cond > MAX_CONDITION {
        return Err(Error::Numerical(format!("information matrix is ill-conditioned (condition number {cond:e})")));
    }
    let l = matrix::cholesky(&me)?;
    let rs: Vec<f64> = r.iter().zip(&scale).map(|(a, s)| a * s).collect();
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[(i, k)] * z[k]).sum();
        z[i] = (rs[i] - s) / l[(i, i)];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (z[i] - s) / l[(i, i)];
    }
    Ok((x.iter().zip(&scale).map(|(a, s)| a * s).collect(), cond))
}

/// `ρρᵀ` from realized covariation over `∫Y ds`, and its Cholesky factor.
pub fn estimate_diffusion(path: &PathGrid) -> Result<(Mat, Mat)> {
    path.verify()?;
    let d = path.n + 1;
    let mut qv = vec![Sum::default(); d * d];
    let mut iy = Sum::default();
    let mut dz = vec![0.0; d];
    for l in 0..path.len() - 1 {
        dz[0] = path.y[l + 1] - path.y[l];
        for (i, (a, b)) in path.x_at(l + 1).iter().zip(path.x_at(l)).enumerate() {
            dz[i + 1] = a - b;
        }
        for i in 0..d {
            for j in i..d {
                qv[i * d + j].add(dz[i] * dz[j]);
            }
        }
        iy.add(path.y[l] * (path.times[l + 1] - path.times[l]));
    }
    let denom = iy.get();
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::Numerical("integral of Y over the path is zero".into()));
    }
    let mut s = Mat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = qv[i * d + j].get() / denom;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let rho = matrix::cholesky(&s).map_err(|e| Error::Numerical(format!("estimated diffusion matrix: {e}")))?;
    Ok((s, rho))
}

pub fn mle_full(path: &PathGrid, rho: &Mat) -> Result<MleResult> {
    let n = path.n;
    let p = (n + 1) * (n + 1) + 1;
    let normal = accumulate(path, rho, p, lambda_matrix, |dz, _| dz.to_vec())?;
    let (tau_hat, cond) = equilibrated_solve(&normal.info, &normal.rhs)?;
    if tau_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("estimate is not finite".into()));
    }
    Ok(MleResult {
        tau_hat,
        info_matrix: normal.info,
        horizon: path.horizon() - path.times[0],
        condition_number: cond,
        rho_used: rho.clone(),
        skipped_steps: normal.skipped,
        ordering: ORDERING.to_string(),
    })
}

pub fn mle_restricted(path: &PathGrid, rho: &Mat, known_c: &KnownC) -> Result<RestrictedMleResult> {
    let n = path.n;
    if known_c.m.len() != n {
        return Err(Error::Input(format!("known m must have length {n}")));
    }
    let p = (n + 1) * (n + 1) - n;
    let mut c = vec![known_c.a];
    c.extend_from_slice(&known_c.m);
    let normal = accumulate(path, rho, p, lambda_tilde, |dz, h| c.iter().zip(dz).map(|(ci, z)| ci * h - z).collect())?;
    let (tau, cond) = equilibrated_solve(&normal.info, &normal.rhs)?;
    if tau.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("estimate is not finite".into()));
    }
    Ok(RestrictedMleResult {
        tau_tilde_hat: tau,
        info_matrix: normal.info,
        known_c: known_c.clone(),
        horizon: path.horizon() - path.times[0],
        condition_number: cond,
        rho_used: rho.clone(),
        skipped_steps: normal.skipped,
        ordering: ORDERING.to_string(),
    })
}

/// `(1/T) ∫ΛᵀS⁻¹Λ ds`.
pub fn info_rate(path: &PathGrid, rho: &Mat) -> Result<Mat> {
    let p = (path.n + 1) * (path.n + 1) + 1;
    let normal = accumulate(path, rho, p, lambda_matrix, |dz, _| dz.to_vec())?;
    matrix::cholesky(&normal.info).map_err(|e| Error::Numerical(format!("information matrix: {e}")))?;
    Ok(normal.info.scale(1.0 / (path.horizon() - path.times[0])))
}

/// Diagonal rate matrix for the estimation error: `√T·I` (size d²+1) in the
/// subcritical case; `Q_T` (size d²−n, for τ̃) in the supercritical case.
pub fn normalizer(regime: &RegimeClass, spec: &ModelSpec, horizon: f64) -> Result<Mat> {
    let n = spec.n;
    let d = n + 1;
    match regime.label {
        Regime::Subcritical => Ok(Mat::identity(d * d + 1).scale(horizon.sqrt())),
        Regime::Supercritical => {
            let b = spec.b;
            let lmin = spec.theta_spectrum()?.lambda_min();
            let eb = (-b * horizon / 2.0).exp();
            let ex = ((b - 2.0 * lmin) * horizon / 2.0).exp();
            let mut diag = vec![eb];
            for _ in 0..n {
                diag.push(eb);
                diag.extend(std::iter::repeat_n(ex, n));
            }
            Ok(Mat::from_diag(&diag))
        }
        Regime::Critical => Err(Error::Unsupported("no normalization is available in the critical regime".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify, reference_subcritical, reference_supercritical};
    use crate::simulator::{simulate_path, spec_hash, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(times: Vec<f64>, y: Vec<f64>, x: Vec<f64>, n: usize) -> PathGrid {
        PathGrid { n, times, y, x, spec_hash: String::new(), seed: 0 }
    }

    #[test]
    fn design_matrices_by_hand() {
        let l = lambda_matrix(2.0, &[3.0]);
        assert_eq!(l.to_rows(), vec![vec![1.0, -2.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, -2.0, -3.0]]);
        let lt = lambda_tilde(2.0, &[3.0]);
        assert_eq!(lt.to_rows(), vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 3.0]]);
        let s = reference_subcritical();
        let dr = lt.mul_vec(&s.tau_tilde());
        let (dy, dx) = s.drift(2.0, &[3.0]);
        assert_eq!((s.a - dr[0], s.m[0] - dr[1]), (dy, dx[0]));
    }

    #[test]
    fn design_reproduces_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = reference_subcritical();
        s.n = 3;
        for _ in 0..20 {
            let tau: Vec<f64> = (0..17).map(|_| rng.random_range(-2.0..2.0)).collect();
            s.m = vec![0.0; 3];
            s.kappa = vec![0.0; 3];
            s.theta = Mat::zeros(3, 3);
            let t = s.with_tau(&tau).unwrap();
            let y = rng.random_range(0.0..5.0);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = lambda_matrix(y, &x).mul_vec(&tau);
            let (dy, dx) = t.drift(y, &x);
            assert!((got[0] - dy).abs() < 1e-13);
            for i in 0..3 {
                assert!((got[i + 1] - dx[i]).abs() < 1e-13);
            }
            let tt = t.tau_tilde();
            let c = [t.a, t.m[0], t.m[1], t.m[2]];
            let lt = lambda_tilde(y, &x).mul_vec(&tt);
            assert!((c[0] - lt[0] - dy).abs() < 1e-13);
            for i in 0..3 {
                assert!((c[i + 1] - lt[i + 1] - dx[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn diffusion_by_hand() {
        let p = grid(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 2.0], vec![0.0, 0.0, 1.0], 1);
        let (s, r) = estimate_diffusion(&p).unwrap();
        // Σ ΔZΔZᵀ = I and ∫Y ds = 1·0.5 + 2·0.5.
        assert!((&s - &Mat::identity(2).scale(1.0 / 1.5)).max_abs() < 1e-15);
        assert!((&r - &Mat::identity(2).scale((1.0f64 / 1.5).sqrt())).max_abs() < 1e-15);
        let flat = grid(vec![0.0, 0.5, 1.0], vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0], 1);
        assert!(matches!(estimate_diffusion(&flat), Err(Error::Numerical(_))));
    }

    #[test]
    fn diffusion_time_relabel_scales_inversely() {
        let s = reference_subcritical();
        let p = simulate_path(&s, &SimConfig::new(2.0, 1e-3, 4)).unwrap();
        let (s1, _) = estimate_diffusion(&p).unwrap();
        let mut q = p.clone();
        for t in q.times.iter_mut() {
            *t *= 3.0;
        }
        let (s3, _) = estimate_diffusion(&q).unwrap();
        assert!((&s1.scale(1.0 / 3.0) - &s3).max_abs() < 1e-14 * s1.max_abs());
    }

    #[test]
    fn diffusion_recovery_from_simulation() {
        let mut s = reference_subcritical();
        s.rho = Mat::from_rows(&[vec![0.8, 0.0], vec![0.3, 0.6]]).unwrap();
        let p = simulate_path(&s, &SimConfig::new(10.0, 1e-4, 11)).unwrap();
        let (sh, rh) = estimate_diffusion(&p).unwrap();
        let truth = s.diffusion();
        assert!((&sh - &truth).frobenius_norm() / truth.frobenius_norm() <= 0.02);
        assert!(rh.is_lower_triangular());
        assert!((&(&rh * &rh.transpose()) - &sh).max_abs() <= 1e-10);
    }

    // Noise-free path from RK4 on the drift: the estimator sees only quadrature error.
    fn ode_path(spec: &ModelSpec, horizon: f64, dt: f64) -> PathGrid {
        let steps = (horizon / dt).round() as usize;
        let n = spec.n;
        let f = |z: &[f64]| {
            let (dy, dx) = spec.drift(z[0], &z[1..]);
            let mut v = vec![dy];
            v.extend(dx);
            v
        };
        let mut z = vec![spec.y0];
        z.extend_from_slice(&spec.x0);
        let (mut times, mut ys, mut xs) = (vec![0.0], vec![z[0]], z[1..].to_vec());
        for l in 0..steps {
            let k1 = f(&z);
            let add = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(u, v)| u + s * v).collect::<Vec<_>>();
            let k2 = f(&add(&z, &k1, dt / 2.0));
            let k3 = f(&add(&z, &k2, dt / 2.0));
            let k4 = f(&add(&z, &k3, dt));
            for i in 0..=n {
                z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            times.push((l + 1) as f64 * dt);
            ys.push(z[0]);
            xs.extend_from_slice(&z[1..]);
        }
        grid(times, ys, xs, n)
    }

    #[test]
    fn ode_limit_full_and_restricted() {
        let mut s = reference_subcritical();
        s.theta = Mat::from_diag(&[2.5]);
        s.y0 = 5.0;
        s.x0 = vec![3.0];
        let p = ode_path(&s, 3.0, 1e-4);
        let r = mle_full(&p, &s.rho).unwrap();
        let err = r.tau_hat.iter().zip(s.tau()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-2, "full err {err}");
        let rr = mle_restricted(&p, &s.rho, &KnownC::from_spec(&s)).unwrap();
        let err = rr.tau_tilde_hat.iter().zip(s.tau_tilde()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-2, "restricted err {err}");
        assert_eq!(mle_full(&p, &s.rho).unwrap(), r);
        assert_eq!(r.ordering, ORDERING);
    }

    #[test]
    fn euler_drift_path_is_fit_exactly() {
        // With ΔZ = Λτ Δt exactly, normal equations hold with zero residual.
        let mut s = reference_subcritical();
        s.theta = Mat::from_diag(&[2.5]);
        s.y0 = 5.0;
        s.x0 = vec![3.0];
        let dt = 1e-3;
        let (mut y, mut x) = (s.y0, s.x0[0]);
        let (mut times, mut ys, mut xs) = (vec![0.0], vec![y], vec![x]);
        for l in 0..3000 {
            let (dy, dx) = s.drift(y, &[x]);
            y += dy * dt;
            x += dx[0] * dt;
            times.push((l + 1) as f64 * dt);
            ys.push(y);
            xs.push(x);
        }
        let r = mle_full(&grid(times, ys, xs, 1), &s.rho).unwrap();
        for (a, b) in r.tau_hat.iter().zip(s.tau()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn info_rate_is_symmetric_positive_definite() {
        let s = reference_subcritical();
        let p = simulate_path(&s, &SimConfig::new(20.0, 1e-2, 3)).unwrap();
        let ir = info_rate(&p, &s.rho).unwrap();
        assert_eq!(ir.max_asymmetry(), 0.0);
        assert!(matrix::cholesky(&ir).is_ok());
    }

    #[test]
    fn permutation_equivariance() {
        let s = ModelSpec {
            n: 2,
            a: 2.0,
            b: 1.0,
            m: vec![0.5, -0.3],
            kappa: vec![0.5, 0.2],
            theta: Mat::from_rows(&[vec![1.5, 0.2], vec![0.1, 0.8]]).unwrap(),
            rho: Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.3, 0.9, 0.0], vec![-0.2, 0.4, 0.7]]).unwrap(),
            y0: 1.0,
            x0: vec![0.0, 0.0],
        };
        let p = simulate_path(&s, &SimConfig::new(50.0, 1e-2, 8)).unwrap();
        let r = mle_full(&p, &s.rho).unwrap();
        // Swap X1 and X2 in the data and in the rows of ρ.
        let mut q = p.clone();
        for l in 0..q.len() {
            q.x.swap(2 * l, 2 * l + 1);
        }
        let mut rho_p = s.rho.clone();
        for j in 0..3 {
            let t = rho_p[(1, j)];
            rho_p[(1, j)] = rho_p[(2, j)];
            rho_p[(2, j)] = t;
        }
        let rp = mle_full(&q, &rho_p).unwrap();
        // τ = (a, b, m1, κ1, θ11, θ12, m2, κ2, θ21, θ22); swapping gives
        // (a, b, m2, κ2, θ22, θ21, m1, κ1, θ12, θ11).
        let t = &r.tau_hat;
        let want = [t[0], t[1], t[6], t[7], t[9], t[8], t[2], t[3], t[5], t[4]];
        for (g, w) in rp.tau_hat.iter().zip(want) {
            assert!((g - w).abs() < 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn y_floor_violation_is_reported() {
        let n = 3000;
        let times: Vec<f64> = (0..n).map(|l| l as f64 * 0.01).collect();
        let mut y: Vec<f64> = (0..n).map(|l| 1.0 + 0.5 * (l as f64 * 0.37).sin()).collect();
        for v in y.iter_mut().take(10) {
            *v = 0.0;
        }
        let x: Vec<f64> = (0..n).map(|l| (l as f64 * 0.11).cos()).collect();
        let p = grid(times, y, x, 1);
        match mle_full(&p, &Mat::identity(2)) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("below")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_design_is_rejected() {
        // Constant X makes the θ column a multiple of the m column.
        let n = 200;
        let times: Vec<f64> = (0..n).map(|l| l as f64 * 0.01).collect();
        let y: Vec<f64> = (0..n).map(|l| 1.0 + 0.5 * (l as f64 * 0.37).sin()).collect();
        let p = grid(times, y, vec![1.0; n], 1);
        assert!(matches!(mle_full(&p, &Mat::identity(2)), Err(Error::Numerical(_))));
    }

    #[test]
    fn normalizer_examples() {
        let s = reference_subcritical();
        let q = normalizer(&classify(&s).unwrap(), &s, 100.0).unwrap();
        assert_eq!(q, Mat::identity(5).scale(10.0));
        let sup = reference_supercritical();
        let q = normalizer(&classify(&sup).unwrap(), &sup, 10.0).unwrap();
        let want = [5f64.exp(), 5f64.exp(), 15f64.exp()];
        for i in 0..3 {
            assert!((q[(i, i)] - want[i]).abs() < 1e-12 * want[i]);
        }
        let q20 = normalizer(&classify(&sup).unwrap(), &sup, 20.0).unwrap();
        assert!((0..3).all(|i| q20[(i, i)] > q[(i, i)]));
        let mut crit = s.clone();
        crit.b = 0.0;
        assert!(matches!(normalizer(&classify(&crit).unwrap(), &crit, 10.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn result_json_has_documented_fields() {
        let s = reference_subcritical();
        let p = simulate_path(&s, &SimConfig::new(20.0, 1e-2, 3)).unwrap();
        assert_eq!(p.spec_hash, spec_hash(&s));
        let r = mle_full(&p, &s.rho).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["tau_hat", "info_matrix", "T", "condition_number", "rho_used", "ordering"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["ordering"], "duffie-ad1n-v1");
        let back: MleResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
