//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use adkit::estimator::estimate_diffusion;
use adkit::experiments::{run_study, StudyConfig, StudyMode};
use adkit::matrix::{self, Mat};
use adkit::model::{self, drift_check, lyapunov_certificate, mean_x, mean_y, reference_subcritical, reference_supercritical, ModelSpec, Regime};
use adkit::riccati::{solve_riccati, solve_riccati_from, stationary_cf, FLArgument};
use adkit::simulator::{sample_states, simulate_path, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn seed(criterion: u64) -> u64 {
    1000 + criterion
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    (a - b).max_abs() / b.max_abs().max(1.0)
}

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    let v: Vec<f64> = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    Mat::from_vec(r, c, v)
}

fn matrix_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed(1));
    let dim = |rng: &mut ChaCha8Rng| rng.random_range(1..=4usize);
    let (mut e1, mut e2, mut e3) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let (p, q, r, s, t, u) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let a = random_mat(&mut rng, p, q);
        let b = random_mat(&mut rng, r, s);
        let c = random_mat(&mut rng, q, t);
        let d = random_mat(&mut rng, s, u);
        let lhs = &matrix::kron(&a, &b) * &matrix::kron(&c, &d);
        e1 = e1.max(rel(&lhs, &matrix::kron(&(&a * &c), &(&b * &d))));
    }
    for _ in 0..200 {
        let (p, q, r, s) = (dim(&mut rng), dim(&mut rng), dim(&mut rng), dim(&mut rng));
        let a = random_mat(&mut rng, p, q);
        let b = random_mat(&mut rng, q, r);
        let c = random_mat(&mut rng, r, s);
        let lhs = matrix::vec(&(&(&a * &b) * &c));
        e2 = e2.max(rel(&lhs, &(&matrix::kron(&c.transpose(), &a) * &matrix::vec(&b))));
    }
    for _ in 0..200 {
        let (p, q) = (dim(&mut rng), dim(&mut rng));
        let a = random_mat(&mut rng, p, p);
        let b = random_mat(&mut rng, q, q);
        let lhs = matrix::expm(&matrix::kron_sum(&a, &b).unwrap()).unwrap();
        e3 = e3.max(rel(&lhs, &matrix::kron(&matrix::expm(&a).unwrap(), &matrix::expm(&b).unwrap())));
    }
    let ok = e1 <= 1e-10 && e2 <= 1e-10 && e3 <= 1e-10;
    (ok, format!("max defects: mixed-product {e1:.2e}, vec {e2:.2e}, exp(A⊕B) {e3:.2e} (tol 1e-10)"))
}

fn critical_spec() -> ModelSpec {
    let mut s = reference_subcritical();
    s.b = 0.0;
    s
}

fn moment_formulas() -> Outcome {
    let specs = [("subcritical", reference_subcritical()), ("critical", critical_spec()), ("supercritical", reference_supercritical())];
    let times = [0.5, 1.0, 2.0];
    let n_paths = 10_000;
    let mut worst = 0.0f64;
    for (name, spec) in &specs {
        let label = model::classify(spec).unwrap().label;
        assert_eq!(label.to_string(), *name);
        let cfg = SimConfig::new(2.0, 1e-3, seed(2));
        let states = sample_states(spec, &cfg, n_paths, &times).unwrap();
        for (i, &t) in times.iter().enumerate() {
            let mut comps: Vec<(f64, Vec<f64>)> = vec![(mean_y(spec, t, spec.y0), states.iter().map(|r| r[i].y).collect())];
            let mx = mean_x(spec, t, spec.y0, &spec.x0).unwrap();
            for (j, m) in mx.iter().enumerate() {
                comps.push((*m, states.iter().map(|r| r[i].x[j]).collect()));
            }
            for (exact, sample) in comps {
                let n = sample.len() as f64;
                let mean = sample.iter().sum::<f64>() / n;
                let sd = (sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let z = (mean - exact).abs() / (sd / n.sqrt());
                worst = worst.max(z);
            }
        }
    }
    (worst <= 3.0, format!("max |mean − closed form| / MC s.e. = {worst:.3} over 3 regimes × 3 times × (Y, X) (limit 3)"))
}

fn riccati_closed_form() -> Outcome {
    let s = reference_subcritical();
    let k1 = solve_riccati(&s, &FLArgument::new(1.0, vec![0.0]), 1.0, 1e-12).unwrap().last();
    let e = std::f64::consts::E;
    let closed = -1.0 / (1.5 * e - 0.5);
    let d1 = (k1.re - closed).abs().max(k1.im.abs());
    let cf = stationary_cf(&s, &FLArgument::new(1.0, vec![0.0]), 1e-9).unwrap();
    let d2 = (cf - 16.0 / 81.0).norm();
    let ok = d1 <= 1e-8 && d2 <= 1e-6;
    (
        ok,
        format!(
            "K_1(-1,0) = {:.10} vs closed form -1/(1.5e-0.5) = {closed:.10} (|diff| {d1:.1e}, tol 1e-8); stationary_cf(1,0) = {:.10} vs 16/81 (|diff| {d2:.1e}, tol 1e-6)",
            k1.re, cf.re
        ),
    )
}

fn semigroup() -> Outcome {
    let s = reference_subcritical();
    let mut rng = ChaCha8Rng::seed_from_u64(seed(4));
    let grid = [0.2, 0.5, 1.0, 1.5, 2.5];
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let lam = rng.random_range(0.0..3.0);
        let mu = vec![rng.random_range(-3.0..3.0)];
        let arg = FLArgument::new(lam, mu.clone());
        for &t in &grid {
            let kt = solve_riccati(&s, &arg, t, 1e-12).unwrap().last();
            let mu_t = matrix::expm(&s.theta.transpose().scale(-t)).unwrap().mul_vec(&mu);
            for &u in &grid {
                let direct = solve_riccati(&s, &arg, t + u, 1e-12).unwrap().last();
                let chained = solve_riccati_from(&s, kt, &mu_t, u, 1e-12).unwrap().last();
                worst = worst.max((direct - chained).norm());
            }
        }
    }
    (worst <= 1e-8, format!("max |K_(t+s)(u) − K_s(K_t(u), e^(-tθᵀ)μ)| = {worst:.2e} over 5×5 grid × 20 arguments (tol 1e-8)"))
}

fn stationary_law() -> Outcome {
    let cfg = StudyConfig::new(StudyMode::CfCompare, reference_subcritical(), vec![50.0], 1e-2, 10_000, seed(5));
    let r = run_study(&cfg).unwrap();
    let worst = r.checks.iter().map(|c| c.value).fold(0.0, f64::max);
    (r.passed && r.checks.len() == 5, format!("max |empirical_cf − stationary_cf| = {worst:.4} at 5 points, T=50, N=10^4 (tol 0.02)"))
}

fn ergodic_averages() -> Outcome {
    let cfg = StudyConfig::new(StudyMode::Ergodic, reference_subcritical(), vec![2000.0], 1e-2, 1, seed(6));
    let r = run_study(&cfg).unwrap();
    let y = r.check("y_T2000").unwrap();
    let iy = r.check("inv_y_T2000").unwrap();
    (
        y.passed && iy.passed,
        format!("mean Y = {:.4} (2 ± 0.05), mean 1/Y = {:.4} (2/3 ± 0.03)", y.value, iy.value),
    )
}

fn lyapunov() -> Outcome {
    let s = reference_subcritical();
    let cert = lyapunov_certificate(&s, None, None).unwrap();
    let chk = drift_check(&s, &cert, (0.0, 50.0), (0.0, 50.0), 101).unwrap();
    (
        chk.violations == 0 && chk.points == 101 * 101,
        format!(
            "c={}, r={}, d={}: {} violations on {} lattice points, worst margin {:.3}",
            cert.c, cert.r, cert.d, chk.violations, chk.points, chk.worst_margin
        ),
    )
}

fn diffusion_recovery() -> Outcome {
    let s = reference_subcritical();
    let p = simulate_path(&s, &SimConfig::new(10.0, 1e-4, seed(8))).unwrap();
    let (sh, rh) = estimate_diffusion(&p).unwrap();
    let truth = s.diffusion();
    let err = (&sh - &truth).frobenius_norm() / truth.frobenius_norm();
    let defect = (&(&rh * &rh.transpose()) - &sh).max_abs();
    (
        err <= 0.02 && defect <= 1e-10 && rh.is_lower_triangular(),
        format!("relative Frobenius error {err:.4} (≤ 0.02), LLᵀ defect {defect:.1e} (≤ 1e-10), lower triangular {}", rh.is_lower_triangular()),
    )
}

fn consistency() -> Outcome {
    let cfg = StudyConfig::new(StudyMode::Consistency, reference_subcritical(), vec![100.0, 400.0], 1e-2, 100, seed(9));
    let r = run_study(&cfg).unwrap();
    let med = &r.summary("median_error_inf", None).unwrap().values;
    let ratio = r.check("median_ratio_T100_T400").unwrap().value;
    (r.passed, format!("median ‖τ̂−τ‖∞: T=100 {:.4}, T=400 {:.4}, ratio {ratio:.3} (in [1.5, 2.7])", med[0], med[1]))
}

fn normality() -> Outcome {
    let cfg = StudyConfig::new(StudyMode::Normality, reference_subcritical(), vec![400.0], 1e-2, 500, seed(10));
    let r = run_study(&cfg).unwrap();
    let means = &r.summary("standardized_mean", Some(400.0)).unwrap().values;
    let vars = &r.summary("standardized_variance", Some(400.0)).unwrap().values;
    let disc = r.summary("covariance_discrepancy", Some(400.0)).unwrap().values[0];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    (
        r.passed,
        format!("means [{}] (|·| ≤ 0.15), variances [{}] (in [0.7,1.3]), covariance discrepancy {disc:.3} (≤ 0.25)", fmt(means), fmt(vars)),
    )
}

fn supercritical() -> Outcome {
    let spec = reference_supercritical();
    assert_eq!(model::classify(&spec).unwrap().label, Regime::Supercritical);
    let cfg = StudyConfig::new(StudyMode::Supercritical, spec, vec![15.0, 20.0], 1e-2, 200, seed(11));
    let r = run_study(&cfg).unwrap();
    let stab = r.check("stability_exp_bT_int_Y_T15_T20").unwrap().value;
    let iqr = &r.summary("scaled_error_iqr", Some(20.0)).unwrap().values;
    (
        r.passed,
        format!(
            "median relative change of e^(bT)∫Y ds, T=15→20: {stab:.4} (≤ 0.05); Q_T-scaled error IQR at T=20: [{}] (in [0.01, 100])",
            iqr.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_adkit");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&reference_subcritical()).unwrap()).unwrap();
    let rho = d.join("rho.json");
    std::fs::write(&rho, serde_json::to_string(&Mat::identity(2)).unwrap()).unwrap();
    let s = spec.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("classify", vec![]),
        ("simulate", vec!["p.csv", "p.csv.meta.json"]),
        ("estimate-known", vec!["e1.json"]),
        ("estimate-diffusion", vec!["e2.json"]),
        ("estimate-restricted", vec!["e3.json"]),
        ("stationary-cf", vec!["cf.json"]),
        ("ergodic-check", vec!["erg.json"]),
        ("lyapunov", vec!["lyap.json"]),
        ("mc-study", vec!["study.json"]),
    ];
    let argv = |name: &str, run: usize| -> Vec<String> {
        let o = |f: &str| d.join(format!("{run}_{f}")).to_str().unwrap().to_string();
        let p = d.join(format!("{run}_p.csv")).to_str().unwrap().to_string();
        let v: Vec<String> = match name {
            "classify" => vec!["classify".into(), "--config".into(), s.into()],
            "simulate" => ["simulate", "--config", s, "--T", "10", "--dt", "0.01", "--seed", "42", "--out"]
                .iter()
                .map(|x| x.to_string())
                .chain([p])
                .collect(),
            "estimate-known" => vec!["estimate".into(), "--path".into(), p, "--rho-known".into(), rho.to_str().unwrap().into(), "--out".into(), o("e1.json")],
            "estimate-diffusion" => vec!["estimate".into(), "--path".into(), p, "--estimate-diffusion".into(), "--out".into(), o("e2.json")],
            "estimate-restricted" => vec![
                "estimate".into(),
                "--path".into(),
                p,
                "--rho-known".into(),
                rho.to_str().unwrap().into(),
                "--restricted".into(),
                "--config".into(),
                s.into(),
                "--out".into(),
                o("e3.json"),
            ],
            "stationary-cf" => ["stationary-cf", "--config", s, "--lambda", "1", "--mu", "0.5", "--out"].iter().map(|x| x.to_string()).chain([o("cf.json")]).collect(),
            "ergodic-check" => vec!["ergodic-check".into(), "--path".into(), p, "--config".into(), s.into(), "--out".into(), o("erg.json")],
            "lyapunov" => ["lyapunov", "--config", s, "--out"].iter().map(|x| x.to_string()).chain([o("lyap.json")]).collect(),
            "mc-study" => ["mc-study", "--config", s, "--mode", "consistency", "--T-grid", "5,10", "--dt", "0.01", "--paths", "8", "--seed", "3", "--out"]
                .iter()
                .map(|x| x.to_string())
                .chain([o("study.json")])
                .collect(),
            _ => unreachable!(),
        };
        v
    };
    let mut failures = Vec::new();
    let mut stdouts: Vec<Vec<Vec<u8>>> = vec![Vec::new(), Vec::new()];
    for (run, outs) in stdouts.iter_mut().enumerate() {
        for (name, _) in &commands {
            let out = Command::new(bin).args(argv(name, run)).output().unwrap();
            if !out.status.success() {
                failures.push(format!("{name} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
            }
            outs.push(out.stdout);
        }
    }
    let mut compared = 0;
    for (i, (name, files)) in commands.iter().enumerate() {
        if stdouts[0][i] != stdouts[1][i] {
            failures.push(format!("{name}: stdout differs"));
        }
        compared += 1;
        for f in files {
            let a = std::fs::read(d.join(format!("0_{f}"))).unwrap_or_default();
            let b = std::fs::read(d.join(format!("1_{f}"))).unwrap_or_default();
            if a.is_empty() || a != b {
                failures.push(format!("{name}: {f} differs or is empty"));
            }
            compared += 1;
        }
    }
    let detail = if failures.is_empty() {
        format!("{} commands run twice, {compared} outputs byte-identical", commands.len())
    } else {
        failures.join("; ")
    };
    (failures.is_empty(), detail)
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("matrix identities", matrix_identities),
        ("moment formulas", moment_formulas),
        ("Riccati vs closed form", riccati_closed_form),
        ("semigroup law", semigroup),
        ("stationary-law agreement", stationary_law),
        ("ergodic averages", ergodic_averages),
        ("Lyapunov certificate", lyapunov),
        ("diffusion recovery", diffusion_recovery),
        ("MLE consistency", consistency),
        ("asymptotic normality", normality),
        ("supercritical scaling", supercritical),
        ("CLI determinism", determinism),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if let Some(fl) = &filter {
            if *fl != id && !name.contains(fl.as_str()) {
                continue;
            }
        }
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("{} [{id:>2}] {name}: {detail} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
