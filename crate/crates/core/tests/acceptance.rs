//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero when any criterion fails.
//!
//! `cargo test --release -p sde-bridge --test acceptance -- 1 4 7` runs a subset.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use sde_bridge::bridge::{adaptive_weights, bridge_fit, PenaltyConfig};
use sde_bridge::experiments::{
    bootstrap_predict, compare_joint_disjoint, content_hash, fit_methods, load_series_csv, run_mc, write_selection_csv,
    write_summary_csv, DeltaRule, McConfig, McSummary, Method,
};
use sde_bridge::linalg::Matrix;
use sde_bridge::model::{builtin, linear3d, linear3d_truth, trig2d, trig2d_truth, Bounds, ParamVector, SdeModel};
use sde_bridge::qmle::{QmleMethod, QmleOptions};
use sde_bridge::simulate::{euler_simulate, standard_normal_block, RngSpec};
use sde_bridge::tuning::{ks_gaussian, ljung_box_with, residuals, AcfConvention};

type Outcome = Result<String, String>;

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_pd(rng: &mut ChaCha8Rng, p: usize) -> Matrix<f64> {
    let a = Matrix::from_row_major(p, p, (0..p * p).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut g = a.transpose().matmul(&a);
    for i in 0..p {
        g[(i, i)] += 0.1;
    }
    g
}

fn random_theta(rng: &mut ChaCha8Rng, p1: usize, p2: usize) -> ParamVector<f64> {
    let mut draw = |k: usize| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    ParamVector::new(draw(p1), draw(p2))
}

fn zero_penalty_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = PenaltyConfig { lambda0: 0.0, gamma0: 0.0, ..PenaltyConfig::reference() };
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = rng.random_range(2..=8);
        let p1 = rng.random_range(1..p);
        let g = random_pd(&mut rng, p);
        let init = random_theta(&mut rng, p1, p - p1);
        let w = adaptive_weights(&init, &cfg);
        let r = bridge_fit(&init, &g, &w, &cfg, &Bounds::unbounded(p));
        for (a, b) in r.theta_hat.to_vec().iter().zip(init.to_vec()) {
            worst = worst.max((a - b).abs());
        }
    }
    pass_if(worst <= 1e-10, format!("50 instances, max deviation {worst:.1e} (tol 1e-10)"))
}

fn soft_threshold_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=8);
        let p1 = rng.random_range(1..p);
        let diag: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..5.0)).collect();
        let init = random_theta(&mut rng, p1, p - p1);
        let cfg = PenaltyConfig {
            q1: 1.0,
            q2: 1.0,
            lambda0: rng.random_range(0.0..4.0),
            gamma0: rng.random_range(0.0..4.0),
            delta1: 1.0,
            delta2: 1.0,
        };
        let w = adaptive_weights(&init, &cfg);
        let r = bridge_fit(&init, &Matrix::from_diag(&diag), &w, &cfg, &Bounds::unbounded(p));
        let weights: Vec<f64> = w.w_alpha.iter().chain(&w.w_beta).copied().collect();
        for (j, (&x, t)) in r.theta_hat.to_vec().iter().zip(init.to_vec()).enumerate() {
            let want = t.signum() * (t.abs() - weights[j] / (2.0 * diag[j])).max(0.0);
            worst = worst.max((x - want).abs());
        }
    }
    pass_if(worst <= 1e-8, format!("100 instances, max deviation {worst:.1e} (tol 1e-8)"))
}

/// Minimum of `(x − c)ᵀ G (x − c) + w₁|x₁|^q + w₂|x₂|^q` over the grid with step
/// 1e-3 on [−5, 5]².
fn grid_minimum(g: &Matrix<f64>, c: &[f64], w: &[f64], q: f64) -> f64 {
    let pts: Vec<f64> = (0..=10_000).map(|k| (k as f64 - 5000.0) * 1e-3).collect();
    let pen = |wj: f64| -> Vec<f64> { pts.iter().map(|t| wj * t.abs().powf(q)).collect() };
    let (pa, pb) = (pen(w[0]), pen(w[1]));
    let (g11, g12, g22) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
    let mut best = f64::INFINITY;
    for (i, &a) in pts.iter().enumerate() {
        let da = a - c[0];
        let base = g11 * da * da + pa[i];
        let cross = 2.0 * g12 * da;
        for (j, &b) in pts.iter().enumerate() {
            let db = b - c[1];
            let v = base + db * (cross + g22 * db) + pb[j];
            if v < best {
                best = v;
            }
        }
    }
    best
}

fn brute_force_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-3;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut count = 0;
    for &q in &[0.5, 0.9, 1.0] {
        for _ in 0..10 {
            let g = random_pd(&mut rng, 2);
            let init = random_theta(&mut rng, 1, 1);
            let cfg = PenaltyConfig { q1: q, q2: q, ..PenaltyConfig::reference() };
            let w = adaptive_weights(&init, &cfg);
            let r = bridge_fit(&init, &g, &w, &cfg, &Bounds::unbounded(2));
            let c = init.to_vec();
            let weights = [w.w_alpha[0], w.w_beta[0]];
            let best = grid_minimum(&g, &c, &weights, q);
            // sup of |F(x) − F(y)| over |x − y|∞ ≤ h/2 inside the square
            let gnorm = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| g[(i, j)].abs()).sum::<f64>();
            let reach = 5.0 + c[0].abs().max(c[1].abs());
            let bound = gnorm * h * (2.0 * reach + h) + weights.iter().map(|w| w * (h / 2.0).powf(q)).sum::<f64>();
            worst_gap = worst_gap.max(r.objective - best - bound);
            count += 1;
        }
    }
    pass_if(worst_gap <= 0.0, format!("{count} instances, max (fit − grid − bound) {worst_gap:.3e}"))
}

fn residual_recovery() -> Outcome {
    let mut worst = 0.0f64;
    let cases: [(SdeModel<f64>, ParamVector<f64>, Vec<f64>, f64); 2] =
        [(linear3d(None), linear3d_truth(), vec![1.0, 1.0, 1.0], 0.1), (trig2d(), trig2d_truth(), vec![1.0, 1.0], 0.1)];
    for (model, truth, x0, delta) in &cases {
        let n = 1000;
        let rng = RngSpec::new(4, 0);
        let path = euler_simulate(model, truth, x0, n, *delta, &rng).map_err(|e| format!("{}: {e}", model.name()))?;
        let r = residuals(model, &path, truth).map_err(|e| format!("{}: {e}", model.name()))?;
        let d = model.dim_noise();
        let z: Vec<f64> = standard_normal_block(&rng, n * d);
        for i in 0..n {
            for j in 0..d {
                worst = worst.max((r.values[(i, j)] - z[i * d + j]).abs());
            }
        }
    }
    pass_if(worst <= 1e-10, format!("linear3d and trig2d, max deviation {worst:.1e} (tol 1e-10)"))
}

fn ljung_box_calibration() -> Outcome {
    let critical = ChiSquared::new(10.0).unwrap().inverse_cdf(0.95);
    let mut rejected = 0;
    for k in 0..500 {
        let z: Vec<f64> = standard_normal_block(&RngSpec::new(5, k), 1000);
        let q = ljung_box_with(&z, 10, AcfConvention::Standard).map_err(|e| e.to_string())?;
        rejected += usize::from(q > critical);
    }
    let rate = rejected as f64 / 500.0;
    pass_if((0.03..=0.08).contains(&rate), format!("rejection rate {rate:.3} (band [0.03, 0.08])"))
}

fn ks_sanity() -> Outcome {
    let mut below = 0;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let z: Vec<f64> = standard_normal_block(&RngSpec::new(6, k), 10_000);
        let d = ks_gaussian(&z);
        worst = worst.max(d);
        below += usize::from(d < 0.025);
    }
    pass_if(below >= 99, format!("{below}/100 trials below 0.025, largest {worst:.4}"))
}

fn mc_hashes(cfg: &McConfig<f64>, threads: usize) -> Result<Vec<String>, String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
    let s = pool.install(|| run_mc(cfg)).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    write_summary_csv(&s, &mut summary).map_err(|e| e.to_string())?;
    let mut selection = Vec::new();
    write_selection_csv(&s, &mut selection).map_err(|e| e.to_string())?;
    let json = serde_json::to_vec_pretty(&s).map_err(|e| e.to_string())?;
    Ok(vec![content_hash(&summary), content_hash(&selection), content_hash(&json)])
}

fn determinism() -> Outcome {
    let mut cfg = McConfig::new("linear3d", linear3d_truth(), vec![1.0; 3], 500);
    cfg.replicates = 4;
    cfg.seed = 7;
    let one = mc_hashes(&cfg, 1)?;
    let four = mc_hashes(&cfg, 4)?;
    pass_if(one == four, format!("summary hash {} (1 thread) vs {} (4 threads)", &one[0][..12], &four[0][..12]))
}

fn linear3d_study(n: usize, replicates: usize) -> Result<McSummary<f64>, String> {
    let mut cfg = McConfig::new("linear3d", linear3d_truth(), vec![1.0; 3], n);
    cfg.replicates = replicates;
    cfg.delta_rule = DeltaRule::HighFrequency;
    cfg.seed = 2024;
    let t = Instant::now();
    let s = run_mc(&cfg).map_err(|e| e.to_string())?;
    eprintln!("  linear3d n={n} N={replicates}: {:.0} s, {} failed", t.elapsed().as_secs_f64(), s.failed);
    Ok(s)
}

const ZERO_DRIFT: [&str; 4] = ["alpha21", "alpha31", "alpha32", "alpha33"];
const ZERO_DIFFUSION: [&str; 5] = ["beta11", "beta21", "beta22", "beta31", "beta32"];

fn zero_freq(s: &McSummary<f64>, m: Method, name: &str) -> f64 {
    s.method(m).and_then(|ms| ms.param(name)).map_or(f64::NAN, |p| p.zero_freq)
}

fn selection_ordering(s1000: &McSummary<f64>) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ZERO_DRIFT {
        let (b, l) = (zero_freq(s1000, Method::Bridge, name), zero_freq(s1000, Method::Lasso, name));
        ok &= b - l >= 0.10;
        parts.push(format!("{name} {b:.3}/{l:.3}"));
    }
    pass_if(ok, format!("bridge/lasso zero freq: {} (need margin 0.10)", parts.join(", ")))
}

/// Zero-selection frequencies over the first `k` replicates.
fn zero_freq_prefix(s: &McSummary<f64>, m: Method, name: &str, k: usize) -> f64 {
    let Some(ms) = s.method(m) else { return f64::NAN };
    let Some(j) = ms.params.iter().position(|p| p.name == name) else { return f64::NAN };
    let rows = &ms.estimates[..k.min(ms.estimates.len())];
    rows.iter().filter(|e| e[j] == 0.0).count() as f64 / rows.len() as f64
}

fn diffusion_selection(s10000: &McSummary<f64>) -> Outcome {
    let k = 100;
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [Method::Qmle, Method::Bridge, Method::Lasso] {
        let freqs: Vec<f64> = ZERO_DIFFUSION.iter().map(|name| zero_freq_prefix(s10000, m, name, k)).collect();
        let low = freqs.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= low >= 0.85;
        parts.push(format!("{} min {low:.3}", m.as_str()));
    }
    pass_if(ok, format!("N={k}: {} (need 0.85)", parts.join(", ")))
}

fn consistency_trend(s500: &McSummary<f64>, s10000: &McSummary<f64>) -> Outcome {
    let (a, b) = (s500.method(Method::Bridge).unwrap(), s10000.method(Method::Bridge).unwrap());
    let mut worse = Vec::new();
    let mut nonzero = 0;
    for (p, q) in a.params.iter().zip(&b.params) {
        if p.truth == 0.0 {
            continue;
        }
        nonzero += 1;
        if q.mse >= p.mse {
            worse.push(format!("{} {:.4} -> {:.4}", p.name, p.mse, q.mse));
        }
    }
    if worse.is_empty() {
        Ok(format!("all {nonzero} nonzero parameters improve from n=500 to n=10000"))
    } else {
        Err(format!("no improvement: {}", worse.join(", ")))
    }
}

fn joint_vs_disjoint() -> Outcome {
    let mut cfg: McConfig<f64> = McConfig::new("trig2d", trig2d_truth(), vec![1.0, 1.0], 1000);
    cfg.replicates = 300;
    cfg.delta_rule = DeltaRule::Horizon(10.0);
    cfg.psi0 = PenaltyConfig { q1: 0.9, q2: 0.9, lambda0: 10.0, gamma0: 10.0, delta1: 2.5, delta2: 2.5 };
    cfg.seed = 2025;
    let t = Instant::now();
    let s = compare_joint_disjoint(&cfg).map_err(|e| e.to_string())?;
    eprintln!("  trig2d N=300: {:.0} s", t.elapsed().as_secs_f64());
    let joint = s.method(Method::Bridge).unwrap();
    let dis = s.method(Method::Disjoint).unwrap();
    let (mj, md) = (joint.param("beta11").unwrap().mse, dis.param("beta11").unwrap().mse);
    let ratio = md / mj;
    let ratio_ok = ratio >= 2.0;
    let mut gap = 0.0f64;
    for (p, q) in joint.params.iter().zip(&dis.params) {
        if p.truth == 0.0 {
            gap = gap.max((p.zero_freq - q.zero_freq).abs());
        }
    }
    pass_if(
        ratio_ok && gap <= 0.05,
        format!(
            "beta11 mse joint {mj:.3e} disjoint {md:.3e} ratio {ratio:.3} (need 2), max freq gap {gap:.3} (need 0.05)"
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn tuning_stability() -> Outcome {
    let mut cfg = McConfig::new("linear3d", linear3d_truth(), vec![1.0; 3], 1000);
    cfg.replicates = 50;
    cfg.tune = true;
    cfg.methods = vec![Method::Bridge];
    cfg.seed = 2026;
    let t = Instant::now();
    let s = run_mc(&cfg).map_err(|e| e.to_string())?;
    eprintln!("  tuned linear3d N=50: {:.0} s", t.elapsed().as_secs_f64());
    let col = |f: fn(&PenaltyConfig<f64>) -> f64| median(s.tuned.iter().map(f).collect());
    let (l, q1, q2) = (col(|p| p.lambda0), col(|p| p.q1), col(|p| p.q2));
    pass_if(
        (1.0..=3.0).contains(&l) && (0.8..=1.0).contains(&q1) && (0.8..=1.0).contains(&q2),
        format!("{} tuned, medians lambda0 {l:.3}, q1 {q1:.3}, q2 {q2:.3}", s.tuned.len()),
    )
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn predictive_pipeline() -> Outcome {
    let model = builtin::<f64>("linear4d", None).unwrap();
    let delta = 1.0 / 252.0;
    let series = load_series_csv(&fixture_dir().join("linear4d.csv"), delta).map_err(|e| e.to_string())?;
    let n_train = 3031;
    let rows = series.path.n() + 1;
    let train = series.path.slice(0, n_train - 1);
    let test = Matrix::from_rows(&(n_train..rows).map(|i| series.path.state(i).to_vec()).collect::<Vec<_>>());
    let psi = PenaltyConfig { q1: 0.9, q2: 0.9, lambda0: 10.0, gamma0: 10.0, delta1: 2.5, delta2: 2.5 };
    let qopts = QmleOptions { method: QmleMethod::QuasiNewton, ..QmleOptions::default() };
    let fits =
        fit_methods(&model, &train, &[Method::Qmle, Method::Bridge], &psi, 1e-3, &qopts).map_err(|e| e.to_string())?;
    let mut mse = Vec::new();
    for (m, theta) in &fits {
        let r = bootstrap_predict(&model, theta, train.last_state(), delta, 1000, &test, 11, m.as_str())
            .map_err(|e| e.to_string())?;
        mse.push(r.series.iter().map(|s| s.mse).collect::<Vec<f64>>());
    }
    let wins = mse[0].iter().zip(&mse[1]).filter(|(q, b)| b <= q).count();
    let detail: Vec<String> =
        mse[0].iter().zip(&mse[1]).enumerate().map(|(c, (q, b))| format!("X{} {b:.3}/{q:.3}", c + 1)).collect();
    pass_if(wins >= 3, format!("bridge wins {wins}/4 (need 3); bridge/qmle mse {}", detail.join(", ")))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |k: usize| args.is_empty() || args.iter().any(|a| a == &k.to_string());

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |k: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(k) {
            let t = Instant::now();
            let out = f();
            let status = if out.is_ok() { "PASS" } else { "FAIL" };
            let detail = match &out {
                Ok(d) | Err(d) => d.clone(),
            };
            println!("criterion {k:>2} {status} {name}: {detail} [{:.1} s]", t.elapsed().as_secs_f64());
            results.push((k, name, out));
        }
    };

    record(1, "zero-penalty identity", &zero_penalty_identity);
    record(2, "soft-threshold oracle", &soft_threshold_oracle);
    record(3, "brute-force equivalence", &brute_force_equivalence);
    record(4, "residual recovery", &residual_recovery);
    record(5, "Ljung-Box calibration", &ljung_box_calibration);
    record(6, "KS sanity", &ks_sanity);
    record(7, "determinism across thread counts", &determinism);

    if wanted(8) {
        let s1000 = linear3d_study(1000, 200);
        record(8, "selection ordering at n=1000", &|| selection_ordering(s1000.as_ref().map_err(Clone::clone)?));
    }
    if wanted(9) || wanted(10) {
        let s10000 = linear3d_study(10_000, 200);
        record(9, "diffusion selection at n=10000", &|| diffusion_selection(s10000.as_ref().map_err(Clone::clone)?));
        if wanted(10) {
            let s500 = linear3d_study(500, 200);
            record(10, "consistency trend", &|| {
                consistency_trend(s500.as_ref().map_err(Clone::clone)?, s10000.as_ref().map_err(Clone::clone)?)
            });
        }
    }
    record(11, "joint versus disjoint", &joint_vs_disjoint);
    record(12, "tuning stability", &tuning_stability);
    record(13, "predictive pipeline", &predictive_pipeline);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
