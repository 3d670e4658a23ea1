use sde_bridge::experiments::{
    bootstrap_predict, load_series_csv_str, run_mc, write_path_csv, write_summary_csv, DeltaRule, McConfig, Method,
};
use sde_bridge::linalg::Matrix;
use sde_bridge::model::{linear, ParamVector};
use sde_bridge::simulate::{euler_simulate, RngSpec};

fn ou_config(replicates: usize) -> McConfig<f64> {
    let mut cfg = McConfig::new("linear1d", ParamVector::new(vec![0.5, -1.0], vec![0.4, 0.0]), vec![0.5], 300);
    cfg.delta_rule = DeltaRule::Fixed(0.05);
    cfg.replicates = replicates;
    cfg.seed = 17;
    cfg
}

#[test]
fn single_replicate_mse_is_squared_error() {
    let s = run_mc(&ou_config(1)).unwrap();
    for m in &s.methods {
        for (j, p) in m.params.iter().enumerate() {
            let e = m.estimates[0][j];
            assert_eq!(p.mse, (e - p.truth).powi(2));
            assert_eq!(p.mean, e);
            assert_eq!(p.zero_freq, if e == 0.0 { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn summaries_respect_bias_variance_and_frequency_ranges() {
    let s = run_mc(&ou_config(8)).unwrap();
    assert_eq!(s.succeeded + s.failed, 8);
    for m in &s.methods {
        for p in &m.params {
            assert!(p.mse + 1e-12 >= (p.mean - p.truth).powi(2), "{}: {p:?}", m.method.as_str());
            assert!((0.0..=1.0).contains(&p.zero_freq));
        }
    }
}

fn summary_bytes(threads: usize) -> Vec<u8> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let s = pool.install(|| run_mc(&ou_config(6))).unwrap();
    let mut out = Vec::new();
    write_summary_csv(&s, &mut out).unwrap();
    out.extend(serde_json::to_vec(&s).unwrap());
    out
}

#[test]
fn mc_output_does_not_depend_on_the_thread_count() {
    assert_eq!(summary_bytes(1), summary_bytes(3));
}

#[test]
fn constant_model_gives_degenerate_bands() {
    let model = linear::<f64>(2, None);
    let theta = ParamVector::zeros(6, 6);
    let test = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.5, 2.0], vec![1.0, 1.0]]);
    let r = bootstrap_predict(&model, &theta, &[1.0, 2.0], 0.1, 20, &test, 3, "qmle").unwrap();
    assert_eq!(r.paths, 20);
    for (c, s) in r.series.iter().enumerate() {
        let start = [1.0, 2.0][c];
        for band in [&s.mean, &s.q025, &s.q10, &s.q90, &s.q975] {
            assert!(band.iter().all(|&v| v == start));
        }
        let want: f64 = (0..3).map(|i| (test[(i, c)] - start).powi(2)).sum::<f64>() / 3.0;
        assert!((s.mse - want).abs() < 1e-15);
    }
}

#[test]
fn one_step_one_path_prediction_is_the_euler_step() {
    let model = linear::<f64>(1, None);
    let theta = ParamVector::new(vec![0.2, -0.5], vec![0.3, 0.0]);
    let test = Matrix::from_rows(&[vec![0.7]]);
    let r = bootstrap_predict(&model, &theta, &[1.0], 0.01, 1, &test, 5, "qmle").unwrap();
    let sim = euler_simulate(&model, &theta, &[1.0], 1, 0.01, &RngSpec::new(5, 0)).unwrap();
    let x = sim.values[(1, 0)];
    let s = &r.series[0];
    assert_eq!(s.mean[0], x);
    assert_eq!(s.q025[0], x);
    assert_eq!(s.mse, (0.7 - x).powi(2));
}

#[test]
fn brownian_bands_match_normal_quantiles() {
    let model = linear::<f64>(1, None);
    let theta = ParamVector::new(vec![0.0, 0.0], vec![1.0, 0.0]);
    let steps = 20;
    let delta = 0.05;
    let test = Matrix::zeros(steps, 1);
    let r = bootstrap_predict(&model, &theta, &[0.0], delta, 10_000, &test, 9, "qmle").unwrap();
    let s = &r.series[0];
    for i in 0..steps {
        let sd = (delta * (i + 1) as f64).sqrt();
        assert!((s.q975[i] - 1.96 * sd).abs() < 0.05 * sd + 0.01, "step {i}: {} vs {}", s.q975[i], 1.96 * sd);
        assert!((s.q025[i] + 1.96 * sd).abs() < 0.05 * sd + 0.01);
        assert!(s.q025[i] <= s.q10[i] && s.q10[i] <= s.q90[i] && s.q90[i] <= s.q975[i]);
    }
}

#[test]
fn simulated_csv_reloads_bit_identically() {
    let model = linear::<f64>(2, None);
    let theta = ParamVector::new(vec![0.1, -1.0, 0.3, -0.2, 0.0, -0.7], vec![0.5, 0.1, 0.0, 0.4, 0.0, 0.2]);
    let path = euler_simulate(&model, &theta, &[0.3, -0.1], 250, 1.0 / 7.0, &RngSpec::new(12, 1)).unwrap();
    let mut buf = Vec::new();
    write_path_csv(&path, &["X1".into(), "X2".into()], &mut buf).unwrap();
    let back = load_series_csv_str::<f64>(std::str::from_utf8(&buf).unwrap(), path.delta).unwrap();
    assert_eq!(back.path, path);
}

#[test]
fn method_rows_follow_the_requested_order() {
    let mut cfg = ou_config(2);
    cfg.methods = vec![Method::Lasso, Method::Qmle];
    let s = run_mc(&cfg).unwrap();
    let order: Vec<Method> = s.methods.iter().map(|m| m.method).collect();
    assert_eq!(order, vec![Method::Lasso, Method::Qmle]);
}
