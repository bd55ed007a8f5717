//! Long-horizon and Monte Carlo checks of the estimator against the
//! stationary limits of the reference subcritical model.

use adkit::estimator::{info_rate, mle_full, mle_restricted, KnownC};
use adkit::model::reference_subcritical;
use adkit::simulator::{simulate_path, simulate_path_stream, SimConfig};

#[test]
fn info_rate_limits() {
    // W = I, so the (a,a) entry is (1/T)∫1/Y and the (b,b) entry is (1/T)∫Y.
    let s = reference_subcritical();
    let p = simulate_path(&s, &SimConfig::new(2000.0, 1e-2, 77)).unwrap();
    let ir = info_rate(&p, &s.rho).unwrap();
    let inv_y = 2.0 * s.b / (2.0 * s.a - s.sigma1_sq());
    assert!((ir[(0, 0)] / inv_y - 1.0).abs() <= 0.05, "{}", ir[(0, 0)]);
    assert!((ir[(1, 1)] / (s.a / s.b) - 1.0).abs() <= 0.05, "{}", ir[(1, 1)]);
    assert!((ir[(0, 1)] + 1.0).abs() < 1e-12);
}

#[test]
fn info_rate_stabilizes() {
    let s = reference_subcritical();
    let p = simulate_path(&s, &SimConfig::new(2000.0, 1e-2, 78)).unwrap();
    let half = {
        let l = p.len() / 2;
        let mut q = p.clone();
        q.times.truncate(l + 1);
        q.y.truncate(l + 1);
        q.x.truncate(l + 1);
        q
    };
    assert_eq!(half.horizon(), 1000.0);
    let a = info_rate(&half, &s.rho).unwrap();
    let b = info_rate(&p, &s.rho).unwrap();
    assert!((&a - &b).frobenius_norm() / b.frobenius_norm() < 0.10);
}

#[test]
fn restricted_and_full_agree_on_shared_parameters() {
    let s = reference_subcritical();
    let cfg = SimConfig::new(400.0, 1e-2, 79);
    let (mut full_b, mut res_b, mut diff) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..20 {
        let p = simulate_path_stream(&s, &cfg, k).unwrap();
        let f = mle_full(&p, &s.rho).unwrap();
        let r = mle_restricted(&p, &s.rho, &KnownC::from_spec(&s)).unwrap();
        // Shared: b, κ, θ at positions (1, 3, 4) of τ and (0, 1, 2) of τ̃.
        for (i, j) in [(1, 0), (3, 1), (4, 2)] {
            diff.push((f.tau_hat[i] - r.tau_tilde_hat[j]).abs());
        }
        full_b.push(f.tau_hat[1]);
        res_b.push(r.tau_tilde_hat[0]);
    }
    let sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mean_diff = diff.iter().sum::<f64>() / diff.len() as f64;
    // Agreement within the full estimator's own dispersion; the restricted one is tighter.
    assert!(mean_diff < sd(&full_b), "{mean_diff} vs {}", sd(&full_b));
    assert!(sd(&res_b) < sd(&full_b));
}

#[test]
fn halving_dt_moves_estimate_less_than_dispersion() {
    let s = reference_subcritical();
    let mut shifts = Vec::new();
    let mut spread = Vec::new();
    for k in 0..10 {
        let fine = simulate_path_stream(&s, &SimConfig::new(200.0, 5e-3, 80), k).unwrap();
        // Every other point of the fine path is the same path sampled at 2Δt.
        let mut coarse = fine.clone();
        coarse.times = fine.times.iter().step_by(2).copied().collect();
        coarse.y = fine.y.iter().step_by(2).copied().collect();
        coarse.x = fine.x.iter().step_by(2).copied().collect();
        let a = mle_full(&fine, &s.rho).unwrap().tau_hat;
        let b = mle_full(&coarse, &s.rho).unwrap().tau_hat;
        shifts.push(a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
        spread.push(a.iter().zip(s.tau()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    assert!(med(&mut shifts) < med(&mut spread), "{shifts:?} vs {spread:?}");
}
