use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use sde_bridge::bridge::{adaptive_weights, apply_zero_tol, bridge_fit, diagonal_blocks, disjoint_fit, PenaltyConfig};
use sde_bridge::experiments::{
    bootstrap_predict, compare_joint_disjoint, content_hash, fit_methods, load_series_csv, run_mc, write_bands_csv,
    write_path_csv, write_selection_csv, write_sidecar, write_summary_csv, write_tuning_csv, McSummary, Method,
    PredictReport,
};
use sde_bridge::linalg::Matrix;
use sde_bridge::model::{builtin, builtin_truth, ParamVector, SdeModel};
use sde_bridge::qmle::{qmle_fit_auto, QmleMethod, QmleOptions};
use sde_bridge::simulate::{euler_simulate_with, high_freq_grid, RngSpec, SimOptions};
use sde_bridge::tuning::{tune_from_fit, AcfConvention, TuneOptions, TuningSpace};
use serde::Serialize;
use serde_json::json;

use crate::args::{AcfArg, EstimateArgs, MethodArg, ModelArgs, OptimizerArg, PenaltyArgs, SimulateArgs, TuneArgs};
use crate::config::{McKind, McRun, PredictRun};

/// Failure of a subcommand; the variant picks the exit code.
#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Runtime(sde_bridge::Error),
}

impl From<sde_bridge::Error> for CliError {
    fn from(e: sde_bridge::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// Machine-readable form written to standard error.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(problems) => json!({ "error": { "kind": "config", "problems": problems } }),
            CliError::Runtime(e) => json!({ "error": { "kind": error_kind(e), "message": e.to_string() } }),
        }
    }
}

fn error_kind(e: &sde_bridge::Error) -> &'static str {
    use sde_bridge::Error::*;
    match e {
        Evaluation { .. } => "evaluation",
        Explosion { .. } => "explosion",
        SingularDiffusion { .. } => "singular_diffusion",
        DegenerateSeries => "degenerate_series",
        InvalidArgument(_) => "invalid_argument",
        TuningFailed { .. } => "tuning_failed",
        TooManyFailures { .. } => "too_many_failures",
        Parse { .. } => "parse",
        Io(_) => "io",
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_check(errs: Vec<String>) -> CliResult<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(errs))
    }
}

fn load_model(args: &ModelArgs, errs: &mut Vec<String>) -> Option<SdeModel<f64>> {
    if let Some(m) = args.truncate_sigma {
        if !(m > 0.0 && m.is_finite()) {
            errs.push(format!("truncate-sigma must be positive, got {m}"));
        }
    }
    let model = builtin::<f64>(&args.model, args.truncate_sigma);
    if model.is_none() {
        errs.push(format!("unknown model '{}' (expected linear3d, trig2d or linear<d>d with d in 1..=9)", args.model));
    }
    model
}

fn penalty_from(args: &PenaltyArgs) -> PenaltyConfig<f64> {
    PenaltyConfig {
        q1: args.q1,
        q2: args.q2,
        lambda0: args.lambda0,
        gamma0: args.gamma0,
        delta1: args.delta1,
        delta2: args.delta2,
    }
}

fn qmle_options(opt: OptimizerArg) -> QmleOptions<f64> {
    let method = match opt {
        OptimizerArg::Simplex => QmleMethod::Simplex,
        OptimizerArg::QuasiNewton => QmleMethod::QuasiNewton,
    };
    QmleOptions { method, ..QmleOptions::default() }
}

fn hash_of<C: Serialize>(config: &C) -> String {
    content_hash(serde_json::to_string(config).unwrap_or_default().as_bytes())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(sde_bridge::Error::Io(format!("{}: {e}", path.display()))))
}

/// Writes `value` as pretty JSON to `output`, or to standard output.
fn emit_json<C: Serialize>(value: &serde_json::Value, output: Option<&Path>, config: &C, seed: u64) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n";
    match output {
        Some(path) => {
            std::fs::write(path, &text)
                .map_err(|e| CliError::Runtime(sde_bridge::Error::Io(format!("{}: {e}", path.display()))))?;
            sidecar_for(path, config, seed)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// `<file>.json` next to a single output file.
fn sidecar_for<C: Serialize>(path: &Path, config: &C, seed: u64) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("output").to_string();
    write_sidecar(&dir, &format!("{name}.json"), config, seed, &[name.as_str()])?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    command: &'static str,
    model: &'a str,
    truncate_sigma: Option<f64>,
    n: usize,
    delta: f64,
    seed: u64,
    stream: u64,
    refine: usize,
    x0: &'a [f64],
    theta: &'a ParamVector<f64>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut errs = Vec::new();
    let model = load_model(&args.model, &mut errs);
    if args.n < 1 {
        errs.push("n must be at least 1".into());
    }
    let delta = args.delta.unwrap_or_else(|| high_freq_grid(args.n.max(1)));
    if !(delta > 0.0 && delta.is_finite()) {
        errs.push(format!("delta must be positive, got {delta}"));
    }
    if args.refine < 1 {
        errs.push("refine must be at least 1".into());
    }
    let theta = match (&args.theta, &args.alpha, &args.beta) {
        (Some(file), _, _) => match std::fs::read_to_string(file) {
            Ok(text) => match serde_json::from_str::<ParamVector<f64>>(&text) {
                Ok(t) => Some(t),
                Err(e) => {
                    errs.push(format!("{}: {e}", file.display()));
                    None
                }
            },
            Err(e) => {
                errs.push(format!("cannot read {}: {e}", file.display()));
                None
            }
        },
        (None, Some(a), Some(b)) => Some(ParamVector::new(a.clone(), b.clone())),
        (None, None, None) => {
            let t = builtin_truth::<f64>(&args.model.model);
            if t.is_none() && model.is_some() {
                errs.push(format!(
                    "model '{}' has no built-in truth; pass --alpha and --beta or --theta",
                    args.model.model
                ));
            }
            t
        }
        _ => {
            errs.push("--alpha and --beta must be given together".into());
            None
        }
    };
    let mut x0 = args.x0.clone().unwrap_or_default();
    if let Some(m) = &model {
        if x0.is_empty() {
            x0 = vec![1.0; m.dim_state()];
        }
        if x0.len() != m.dim_state() {
            errs.push(format!("x0 must have {} entries, got {}", m.dim_state(), x0.len()));
        }
        if let Some(t) = &theta {
            if t.alpha.len() != m.p1() || t.beta.len() != m.p2() {
                errs.push(format!(
                    "model '{}' takes {} alpha and {} beta values, got {} and {}",
                    m.name(),
                    m.p1(),
                    m.p2(),
                    t.alpha.len(),
                    t.beta.len()
                ));
            }
        }
    }
    config_check(errs)?;
    let (model, theta) = (model.expect("checked"), theta.expect("checked"));

    let config = SimulateConfig {
        command: "simulate",
        model: &args.model.model,
        truncate_sigma: args.model.truncate_sigma,
        n: args.n,
        delta,
        seed: args.seed,
        stream: args.stream,
        refine: args.refine,
        x0: &x0,
        theta: &theta,
    };
    info!("config hash {} seed {}", hash_of(&config), args.seed);
    let opts = SimOptions { refine: args.refine, ..SimOptions::default() };
    let path = euler_simulate_with(&model, &theta, &x0, args.n, delta, &RngSpec::new(args.seed, args.stream), &opts)?;
    let names: Vec<String> = (1..=model.dim_state()).map(|i| format!("X{i}")).collect();
    match &args.output {
        Some(out) => {
            write_path_csv(&path, &names, create(out)?)?;
            sidecar_for(out, &config, args.seed)?;
        }
        None => write_path_csv(&path, &names, std::io::stdout().lock())?,
    }
    Ok(())
}

fn input_checks(delta: f64, errs: &mut Vec<String>) {
    if !(delta > 0.0 && delta.is_finite()) {
        errs.push(format!("delta must be positive, got {delta}"));
    }
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Qmle => Method::Qmle,
        MethodArg::Bridge => Method::Bridge,
        MethodArg::Lasso => Method::Lasso,
        MethodArg::Disjoint => Method::Disjoint,
    }
}

pub fn estimate(args: &EstimateArgs) -> CliResult<()> {
    let mut errs = Vec::new();
    let model = load_model(&args.model, &mut errs);
    input_checks(args.input.delta, &mut errs);
    let psi = penalty_from(&args.penalty);
    errs.extend(psi.problems());
    if !(args.zero_tol >= 0.0) {
        errs.push(format!("zero-tol must be non-negative, got {}", args.zero_tol));
    }
    config_check(errs)?;
    let model = model.expect("checked");
    let method = method_of(args.method);

    let series = load_series_csv::<f64>(&args.input.input, args.input.delta)?;
    check_width(&model, series.path.dim())?;
    let config = json!({
        "command": "estimate",
        "input": args.input.input,
        "model": model.name(),
        "truncate_sigma": args.model.truncate_sigma,
        "delta": args.input.delta,
        "method": method,
        "optimizer": qmle_options(args.input.optimizer).method,
        "penalty": psi,
        "zero_tol": args.zero_tol,
    });
    info!("config hash {}", hash_of(&config));

    let fit = qmle_fit_auto(&model, &series.path, &qmle_options(args.input.optimizer))?;
    let names = json!({ "alpha": model.alpha_names(), "beta": model.beta_names() });
    let out = if method == Method::Qmle {
        json!({
            "model": model.name(),
            "method": method,
            "n": series.path.n(),
            "delta": args.input.delta,
            "names": names,
            "theta_hat": fit.theta_hat,
            "objective": fit.objective,
            "curvature": fit.curvature.to_rows(),
            "converged": fit.converged,
            "gradient_norm": fit.gradient_norm,
            "pd_repaired": fit.pd_repaired,
        })
    } else {
        let cfg = if method == Method::Lasso { psi.as_lasso() } else { psi };
        let w = adaptive_weights(&fit.theta_hat, &cfg);
        let res = match method {
            Method::Disjoint => {
                let (g1, g2) = diagonal_blocks(&fit.curvature, model.p1());
                disjoint_fit(
                    &fit.theta_hat.alpha,
                    &fit.theta_hat.beta,
                    &g1,
                    &g2,
                    &w,
                    &cfg,
                    model.bounds_alpha(),
                    model.bounds_beta(),
                )
            }
            _ => bridge_fit(&fit.theta_hat, &fit.curvature, &w, &cfg, &model.bounds()),
        };
        let theta = apply_zero_tol(&res.theta_hat, args.zero_tol);
        let active = |v: &[f64]| v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect::<Vec<_>>();
        json!({
            "model": model.name(),
            "method": method,
            "n": series.path.n(),
            "delta": args.input.delta,
            "names": names,
            "penalty": cfg,
            "zero_tol": args.zero_tol,
            "theta_hat": theta,
            "objective": res.objective,
            "curvature": fit.curvature.to_rows(),
            "converged": res.converged && fit.converged,
            "active_alpha": active(&theta.alpha),
            "active_beta": active(&theta.beta),
            "sweeps": res.sweeps,
            "initial": { "theta_hat": fit.theta_hat, "objective": fit.objective, "converged": fit.converged },
        })
    };
    emit_json(&out, args.input.output.as_deref(), &config, 0)
}

fn check_width(model: &SdeModel<f64>, width: usize) -> CliResult<()> {
    if width != model.dim_state() {
        return Err(CliError::Runtime(sde_bridge::Error::InvalidArgument(format!(
            "input has {width} series but model '{}' has state dimension {}",
            model.name(),
            model.dim_state()
        ))));
    }
    Ok(())
}

pub fn tune(args: &TuneArgs) -> CliResult<()> {
    let mut errs = Vec::new();
    let model = load_model(&args.model, &mut errs);
    input_checks(args.input.delta, &mut errs);
    let space = TuningSpace::<f64>::default();
    let psi0 = if args.psi0.len() == 6 {
        let p = PenaltyConfig::from_array(&args.psi0);
        errs.extend(p.problems());
        if !space.contains(&p) {
            errs.push("psi0 lies outside the tuning box".into());
        }
        Some(p)
    } else {
        errs.push(format!("psi0 needs 6 values (q1,q2,lambda0,gamma0,delta1,delta2), got {}", args.psi0.len()));
        None
    };
    if !(args.eps > 0.0) {
        errs.push(format!("eps must be positive, got {}", args.eps));
    }
    if args.max_iter < 1 {
        errs.push("max-iter must be at least 1".into());
    }
    if args.lags < 1 {
        errs.push("lags must be at least 1".into());
    }
    config_check(errs)?;
    let (model, psi0) = (model.expect("checked"), psi0.expect("checked"));

    let series = load_series_csv::<f64>(&args.input.input, args.input.delta)?;
    check_width(&model, series.path.dim())?;
    if args.lags >= series.path.n() {
        return Err(CliError::Config(vec![format!(
            "lags must be below the number of increments ({})",
            series.path.n()
        )]));
    }
    let acf = match args.acf {
        AcfArg::LagAveraged => AcfConvention::LagAveraged,
        AcfArg::Standard => AcfConvention::Standard,
    };
    let config = json!({
        "command": "tune",
        "input": args.input.input,
        "model": model.name(),
        "delta": args.input.delta,
        "psi0": psi0,
        "eps": args.eps,
        "max_iter": args.max_iter,
        "lags": args.lags,
        "acf": acf,
    });
    info!("config hash {}", hash_of(&config));
    let fit = qmle_fit_auto(&model, &series.path, &qmle_options(args.input.optimizer))?;
    let opts = TuneOptions { eps: args.eps, max_iter: args.max_iter, lags: args.lags, acf, ..TuneOptions::default() };
    let result = tune_from_fit(&model, &series.path, &fit, &psi0, &space, &opts)?;
    let out = serde_json::to_value(&result).expect("tuning result serializes");
    emit_json(&out, args.input.output.as_deref(), &config, 0)
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Runtime(sde_bridge::Error::InvalidArgument(e.to_string())))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(sde_bridge::Error::Io(format!("{}: {e}", dir.display()))))
}

fn write_mc_outputs(run: &McRun, summary: &McSummary<f64>) -> CliResult<serde_json::Value> {
    let dir = &run.global.output_dir;
    ensure_dir(dir)?;
    write_summary_csv(summary, create(&dir.join("summary.csv"))?)?;
    write_selection_csv(summary, create(&dir.join("selection.csv"))?)?;
    write_tuning_csv(summary, create(&dir.join("tuning.csv"))?)?;
    let mut full = serde_json::to_string_pretty(summary).expect("summary serializes");
    full.push('\n');
    std::fs::write(dir.join("summary.json"), full)?;
    let files = ["summary.csv", "selection.csv", "tuning.csv", "summary.json"];
    let hashes = write_sidecar(dir, "run.json", run, run.global.seed, &files)?;
    Ok(json!({
        "output_dir": dir,
        "replicates": summary.replicates,
        "succeeded": summary.succeeded,
        "failed": summary.failed,
        "redrawn": summary.redrawn,
        "files": files.iter().zip(hashes).map(|(f, h)| json!({ "file": f, "hash": h })).collect::<Vec<_>>(),
    }))
}

pub fn mc(run: &McRun, kind: McKind) -> CliResult<()> {
    info!("config hash {} seed {}", hash_of(run), run.global.seed);
    let summary = with_pool(run.global.threads, || match kind {
        McKind::Mc => run_mc(&run.mc),
        McKind::Compare => compare_joint_disjoint(&run.mc),
    })??;
    let report = write_mc_outputs(run, &summary)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("JSON values serialize"));
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn predict(run: &PredictRun) -> CliResult<()> {
    info!("config hash {} seed {}", hash_of(run), run.global.seed);
    let model = builtin::<f64>(&run.model, run.truncate_sigma).expect("validated model id");
    let series = load_series_csv::<f64>(&run.data, run.delta)?;
    check_width(&model, series.path.dim())?;
    let rows = series.path.n() + 1;
    if run.n_train >= rows {
        return Err(CliError::Config(vec![format!("n_train must be below the number of rows ({rows})")]));
    }
    let train = series.path.slice(0, run.n_train - 1);
    let test_rows: Vec<Vec<f64>> = (run.n_train..rows).map(|i| series.path.state(i).to_vec()).collect();
    let test = Matrix::from_rows(&test_rows);
    let qopts = QmleOptions { method: run.qmle_method, ..QmleOptions::default() };

    let (fits, reports) = with_pool(run.global.threads, || -> sde_bridge::Result<_> {
        let fits = fit_methods(&model, &train, &run.methods, &run.psi, run.zero_tol, &qopts)?;
        let reports = fits
            .iter()
            .map(|(m, theta)| {
                bootstrap_predict(
                    &model,
                    theta,
                    train.last_state(),
                    run.delta,
                    run.paths,
                    &test,
                    run.global.seed,
                    m.as_str(),
                )
            })
            .collect::<sde_bridge::Result<Vec<PredictReport<f64>>>>()?;
        Ok((fits, reports))
    })??;

    let dir = &run.global.output_dir;
    ensure_dir(dir)?;
    let mut files = Vec::new();
    let mut w = csv::Writer::from_writer(create(&dir.join("predict.csv"))?);
    w.write_record(["method", "series", "mse", "paths", "failed"]).map_err(csv_err)?;
    for r in &reports {
        for (c, s) in r.series.iter().enumerate() {
            w.write_record([
                r.method.clone(),
                series.names[c].clone(),
                format!("{:.16e}", s.mse),
                r.paths.to_string(),
                r.failed.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    files.push("predict.csv".to_string());
    for (c, name) in series.names.iter().enumerate() {
        let file = format!("bands_{}.csv", file_stem(name));
        let observed: Vec<f64> = test_rows.iter().map(|r| r[c]).collect();
        write_bands_csv(&reports, c, &observed, create(&dir.join(&file))?)?;
        files.push(file);
    }
    let estimates: Vec<_> = fits
        .iter()
        .map(|(m, theta)| {
            let zero = |v: &[f64], names: &[String]| {
                names.iter().zip(v).filter(|(_, x)| **x == 0.0).map(|(n, _)| n.clone()).collect::<Vec<_>>()
            };
            json!({
                "method": m,
                "theta_hat": theta,
                "zero_alpha": zero(&theta.alpha, model.alpha_names()),
                "zero_beta": zero(&theta.beta, model.beta_names()),
            })
        })
        .collect();
    std::fs::write(dir.join("estimates.json"), serde_json::to_string_pretty(&estimates).expect("serializes") + "\n")?;
    files.push("estimates.json".to_string());
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    let hashes = write_sidecar(dir, "run.json", run, run.global.seed, &names)?;

    let mse: Vec<_> = reports
        .iter()
        .map(|r| {
            let per: serde_json::Map<String, serde_json::Value> =
                r.series.iter().enumerate().map(|(c, s)| (series.names[c].clone(), json!(s.mse))).collect();
            json!({ "method": r.method, "mse": per })
        })
        .collect();
    let report = json!({
        "output_dir": dir,
        "n_train": run.n_train,
        "n_test": test_rows.len(),
        "mse": mse,
        "files": names.iter().zip(hashes).map(|(f, h)| json!({ "file": f, "hash": h })).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("JSON values serialize"));
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(sde_bridge::Error::Io(e.to_string()))
}
