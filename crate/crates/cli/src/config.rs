//! TOML configs for `mc`, `compare` and `predict`.
//!
//! Parsing is two-phase: every key is first checked against the schema so all
//! unknown keys are reported together, then the table is deserialized and the
//! resolved values are range-checked, again collecting every problem.

use std::path::{Path, PathBuf};

use sde_bridge::bridge::PenaltyConfig;
use sde_bridge::experiments::{DeltaRule, McConfig, Method, QmleStart};
use sde_bridge::model::{builtin, builtin_truth, ParamVector};
use sde_bridge::qmle::QmleMethod;
use serde::{Deserialize, Serialize};

/// Every reason a config was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiSection {
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    pub lambda0: Option<f64>,
    pub gamma0: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
}

impl PsiSection {
    fn resolve(&self, base: PenaltyConfig<f64>) -> PenaltyConfig<f64> {
        PenaltyConfig {
            q1: self.q1.unwrap_or(base.q1),
            q2: self.q2.unwrap_or(base.q2),
            lambda0: self.lambda0.unwrap_or(base.lambda0),
            gamma0: self.gamma0.unwrap_or(base.gamma0),
            delta1: self.delta1.unwrap_or(base.delta1),
            delta2: self.delta2.unwrap_or(base.delta2),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub eps: Option<f64>,
    pub max_iter: Option<usize>,
    pub lags: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmleSection {
    pub method: Option<String>,
    pub start: Option<String>,
}

/// Raw `mc` / `compare` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub model: Option<String>,
    pub truncate_sigma: Option<f64>,
    pub truth: Option<TruthSection>,
    pub x0: Option<Vec<f64>>,
    pub n: Option<usize>,
    #[serde(rename = "N")]
    pub replicates: Option<usize>,
    pub delta_rule: Option<String>,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub psi0: Option<PsiSection>,
    pub tune: Option<bool>,
    pub tuning: Option<TuningSection>,
    pub qmle: Option<QmleSection>,
    pub zero_tol: Option<f64>,
    pub max_attempts: Option<u64>,
}

/// Raw `predict` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub model: Option<String>,
    pub truncate_sigma: Option<f64>,
    pub data: Option<PathBuf>,
    pub delta: Option<f64>,
    pub n_train: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub psi: Option<PsiSection>,
    pub zero_tol: Option<f64>,
    #[serde(rename = "N")]
    pub paths: Option<usize>,
    pub qmle: Option<QmleSection>,
}

const GLOBAL_KEYS: &[&str] = &["seed", "threads", "output_dir", "log_level"];
const MC_KEYS: &[&str] = &[
    "model",
    "truncate_sigma",
    "truth",
    "x0",
    "n",
    "N",
    "delta_rule",
    "horizon",
    "delta",
    "methods",
    "psi0",
    "tune",
    "tuning",
    "qmle",
    "zero_tol",
    "max_attempts",
];
const PREDICT_KEYS: &[&str] =
    &["model", "truncate_sigma", "data", "delta", "n_train", "methods", "psi", "zero_tol", "N", "qmle"];
const PSI_KEYS: &[&str] = &["q1", "q2", "lambda0", "gamma0", "delta1", "delta2"];

fn section_keys(name: &str) -> Option<&'static [&'static str]> {
    match name {
        "truth" => Some(&["alpha", "beta"]),
        "psi0" | "psi" => Some(PSI_KEYS),
        "tuning" => Some(&["eps", "max_iter", "lags"]),
        "qmle" => Some(&["method", "start"]),
        _ => None,
    }
}

fn unknown_keys(table: &toml::Table, allowed: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for (key, value) in table {
        if !GLOBAL_KEYS.contains(&key.as_str()) && !allowed.contains(&key.as_str()) {
            out.push(format!("unknown key '{key}'"));
            continue;
        }
        if let (Some(keys), toml::Value::Table(sub)) = (section_keys(key), value) {
            for k in sub.keys() {
                if !keys.contains(&k.as_str()) {
                    out.push(format!("unknown key '{key}.{k}'"));
                }
            }
        }
    }
    out
}

fn parse_file<F: for<'de> Deserialize<'de>>(text: &str, allowed: &[&str]) -> Result<F, ConfigErrors> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![e.to_string()]))?;
    let unknown = unknown_keys(&table, allowed);
    if !unknown.is_empty() {
        return Err(ConfigErrors(unknown));
    }
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().to_string();
        ConfigErrors(vec![if path == "." { msg } else { format!("{path}: {msg}") }])
    })
}

pub fn parse_mc_file(text: &str) -> Result<McFile, ConfigErrors> {
    parse_file(text, MC_KEYS)
}

pub fn parse_predict_file(text: &str) -> Result<PredictFile, ConfigErrors> {
    parse_file(text, PREDICT_KEYS)
}

pub fn read_config(path: &Path) -> Result<String, ConfigErrors> {
    std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("cannot read {}: {e}", path.display())]))
}

/// Settings shared by every experiment subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Global {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output_dir: PathBuf,
    pub log_level: String,
}

const LOG_LEVELS: &[&str] = &["off", "error", "warn", "info", "debug", "trace"];

pub fn check_log_level(level: &str, errs: &mut Vec<String>) {
    if !LOG_LEVELS.contains(&level) {
        errs.push(format!("log_level must be one of {}, got '{level}'", LOG_LEVELS.join(", ")));
    }
}

pub fn check_threads(threads: Option<usize>, errs: &mut Vec<String>) {
    if threads == Some(0) {
        errs.push("threads must be at least 1".into());
    }
}

fn parse_methods(raw: &[String], errs: &mut Vec<String>) -> Vec<Method> {
    let mut out: Vec<Method> = Vec::new();
    for s in raw {
        match s.parse::<Method>() {
            Ok(m) if !out.contains(&m) => out.push(m),
            Ok(_) => errs.push(format!("method '{s}' listed twice")),
            Err(e) => errs.push(e),
        }
    }
    out
}

fn parse_qmle(
    section: &Option<QmleSection>,
    default_start: QmleStart,
    errs: &mut Vec<String>,
) -> (QmleMethod, QmleStart) {
    let s = section.clone().unwrap_or_default();
    let method = match s.method.as_deref() {
        None | Some("quasi-newton") => QmleMethod::QuasiNewton,
        Some("simplex") => QmleMethod::Simplex,
        Some(o) => {
            errs.push(format!("qmle.method must be 'simplex' or 'quasi-newton', got '{o}'"));
            QmleMethod::QuasiNewton
        }
    };
    let start = match s.start.as_deref() {
        None => default_start,
        Some("truth") => QmleStart::Truth,
        Some("pilot") => QmleStart::Pilot,
        Some(o) => {
            errs.push(format!("qmle.start must be 'truth' or 'pilot', got '{o}'"));
            default_start
        }
    };
    (method, start)
}

fn model_dims(id: &str, truncate: Option<f64>, errs: &mut Vec<String>) -> Option<(usize, usize, usize)> {
    if let Some(m) = truncate {
        if !(m > 0.0 && m.is_finite()) {
            errs.push(format!("truncate_sigma must be positive, got {m}"));
        }
    }
    match builtin::<f64>(id, None) {
        Some(m) => Some((m.dim_state(), m.p1(), m.p2())),
        None => {
            errs.push(format!("unknown model '{id}' (expected linear3d, trig2d or linear<d>d with d in 1..=9)"));
            None
        }
    }
}

/// A fully resolved `mc` / `compare` run.
#[derive(Debug, Clone, Serialize)]
pub struct McRun {
    pub global: Global,
    pub mc: McConfig<f64>,
}

/// Which experiment the file drives; `compare` defaults to the two-dimensional setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McKind {
    Mc,
    Compare,
}

pub fn resolve_mc(file: &McFile, kind: McKind) -> Result<McRun, ConfigErrors> {
    let mut errs = Vec::new();
    let default_model = match kind {
        McKind::Mc => "linear3d",
        McKind::Compare => "trig2d",
    };
    let model = file.model.clone().unwrap_or_else(|| default_model.to_string());
    let dims = model_dims(&model, file.truncate_sigma, &mut errs);

    let truth = match (&file.truth, builtin_truth::<f64>(&model)) {
        (Some(t), _) => Some(ParamVector::new(t.alpha.clone(), t.beta.clone())),
        (None, Some(t)) => Some(t),
        (None, None) => {
            if dims.is_some() {
                errs.push(format!("model '{model}' has no built-in truth; set [truth] alpha and beta"));
            }
            None
        }
    };
    if let (Some((_, p1, p2)), Some(t)) = (dims, &truth) {
        if t.alpha.len() != p1 || t.beta.len() != p2 {
            errs.push(format!(
                "truth must have {p1} alpha and {p2} beta entries for '{model}', got {} and {}",
                t.alpha.len(),
                t.beta.len()
            ));
        }
        if !t.is_finite() {
            errs.push("truth entries must be finite".into());
        }
    }
    let x0 = match (&file.x0, dims) {
        (Some(x), Some((d, _, _))) => {
            if x.len() != d {
                errs.push(format!("x0 must have {d} entries for '{model}', got {}", x.len()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                errs.push("x0 entries must be finite".into());
            }
            x.clone()
        }
        (Some(x), None) => x.clone(),
        (None, Some((d, _, _))) => vec![1.0; d],
        (None, None) => Vec::new(),
    };

    let n = file.n.unwrap_or(1000);
    let replicates = file.replicates.unwrap_or(match kind {
        McKind::Mc => 100,
        McKind::Compare => 1000,
    });
    let default_rule = match kind {
        McKind::Mc => "high-frequency",
        McKind::Compare => "horizon",
    };
    let delta_rule = match file.delta_rule.as_deref().unwrap_or(default_rule) {
        "high-frequency" => {
            if file.horizon.is_some() || file.delta.is_some() {
                errs.push("horizon and delta only apply to delta_rule 'horizon' and 'fixed'".into());
            }
            DeltaRule::HighFrequency
        }
        "horizon" => {
            let t = file.horizon.unwrap_or(10.0);
            if !(t > 0.0 && t.is_finite()) {
                errs.push(format!("horizon must be positive, got {t}"));
            }
            DeltaRule::Horizon(t)
        }
        "fixed" => match file.delta {
            Some(d) => {
                if !(d > 0.0 && d.is_finite()) {
                    errs.push(format!("delta must be positive, got {d}"));
                }
                DeltaRule::Fixed(d)
            }
            None => {
                errs.push("delta_rule 'fixed' requires delta".into());
                DeltaRule::HighFrequency
            }
        },
        other => {
            errs.push(format!("delta_rule must be 'high-frequency', 'horizon' or 'fixed', got '{other}'"));
            DeltaRule::HighFrequency
        }
    };

    let methods = match (&file.methods, kind) {
        (Some(_), McKind::Compare) => {
            errs.push("methods is fixed to bridge and disjoint for compare".into());
            vec![Method::Bridge, Method::Disjoint]
        }
        (Some(raw), McKind::Mc) => parse_methods(raw, &mut errs),
        (None, McKind::Mc) => vec![Method::Qmle, Method::Bridge, Method::Lasso],
        (None, McKind::Compare) => vec![Method::Bridge, Method::Disjoint],
    };
    let base = match kind {
        McKind::Mc => PenaltyConfig::reference(),
        McKind::Compare => PenaltyConfig { q1: 0.9, q2: 0.9, lambda0: 10.0, gamma0: 10.0, delta1: 2.5, delta2: 2.5 },
    };
    let psi0 = file.psi0.clone().unwrap_or_default().resolve(base);

    let tuning = file.tuning.clone().unwrap_or_default();
    let tune_eps = tuning.eps.unwrap_or(1e-4);
    if !(tune_eps > 0.0) {
        errs.push(format!("tuning.eps must be positive, got {tune_eps}"));
    }
    let tune_max_iter = tuning.max_iter.unwrap_or(100);
    if tune_max_iter < 1 {
        errs.push("tuning.max_iter must be at least 1".into());
    }
    let lags = tuning.lags.unwrap_or(10);
    if lags < 1 || lags >= n {
        errs.push(format!("tuning.lags must lie in [1, n), got {lags}"));
    }
    let (qmle_method, qmle_start) = parse_qmle(&file.qmle, QmleStart::Truth, &mut errs);

    let global = Global {
        seed: file.seed.unwrap_or(1),
        threads: file.threads,
        output_dir: file.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        log_level: file.log_level.clone().unwrap_or_else(|| "warn".into()),
    };
    check_log_level(&global.log_level, &mut errs);
    check_threads(global.threads, &mut errs);

    let mc = McConfig {
        model,
        truncate_sigma: file.truncate_sigma,
        theta_true: truth.unwrap_or_else(|| ParamVector::zeros(0, 0)),
        x0,
        n,
        delta_rule,
        replicates,
        methods,
        psi0,
        tune: file.tune.unwrap_or(false),
        tune_eps,
        tune_max_iter,
        lags,
        qmle_method,
        qmle_start,
        zero_tol: file.zero_tol.unwrap_or(0.0),
        seed: global.seed,
        max_attempts: file.max_attempts.unwrap_or(5),
    };
    for p in mc.problems() {
        if !errs.contains(&p) {
            errs.push(p);
        }
    }
    if errs.is_empty() {
        Ok(McRun { global, mc })
    } else {
        Err(ConfigErrors(errs))
    }
}

/// A fully resolved `predict` run.
#[derive(Debug, Clone, Serialize)]
pub struct PredictRun {
    pub global: Global,
    pub model: String,
    pub truncate_sigma: Option<f64>,
    pub data: PathBuf,
    pub delta: f64,
    pub n_train: usize,
    pub methods: Vec<Method>,
    pub psi: PenaltyConfig<f64>,
    pub zero_tol: f64,
    pub paths: usize,
    pub qmle_method: QmleMethod,
}

/// `base_dir` anchors a relative `data` path (the config file's directory).
pub fn resolve_predict(file: &PredictFile, base_dir: &Path) -> Result<PredictRun, ConfigErrors> {
    let mut errs = Vec::new();
    let model = file.model.clone().unwrap_or_else(|| "linear4d".to_string());
    model_dims(&model, file.truncate_sigma, &mut errs);
    let data = match &file.data {
        Some(p) if p.is_relative() => base_dir.join(p),
        Some(p) => p.clone(),
        None => {
            errs.push("data is required".into());
            PathBuf::new()
        }
    };
    let delta = file.delta.unwrap_or(1.0 / 252.0);
    if !(delta > 0.0 && delta.is_finite()) {
        errs.push(format!("delta must be positive, got {delta}"));
    }
    let n_train = file.n_train.unwrap_or(0);
    if file.n_train.is_none() {
        errs.push("n_train is required".into());
    } else if n_train < 3 {
        errs.push(format!("n_train must be at least 3, got {n_train}"));
    }
    let methods =
        parse_methods(file.methods.as_deref().unwrap_or(&["qmle".into(), "bridge".into(), "lasso".into()]), &mut errs);
    if methods.is_empty() {
        errs.push("methods must not be empty".into());
    }
    let base = PenaltyConfig { q1: 0.9, q2: 0.9, lambda0: 10.0, gamma0: 10.0, delta1: 2.5, delta2: 2.5 };
    let psi = file.psi.clone().unwrap_or_default().resolve(base);
    errs.extend(psi.problems());
    let zero_tol = file.zero_tol.unwrap_or(1e-3);
    if !(zero_tol >= 0.0) {
        errs.push("zero_tol must be non-negative".into());
    }
    let paths = file.paths.unwrap_or(1000);
    if paths < 1 {
        errs.push("N must be at least 1".into());
    }
    let (qmle_method, _) = parse_qmle(&file.qmle, QmleStart::Pilot, &mut errs);
    if file.qmle.as_ref().is_some_and(|q| q.start.is_some()) {
        errs.push("qmle.start does not apply to predict".into());
    }
    let global = Global {
        seed: file.seed.unwrap_or(1),
        threads: file.threads,
        output_dir: file.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        log_level: file.log_level.clone().unwrap_or_else(|| "warn".into()),
    };
    check_log_level(&global.log_level, &mut errs);
    check_threads(global.threads, &mut errs);
    if errs.is_empty() {
        Ok(PredictRun {
            global,
            model,
            truncate_sigma: file.truncate_sigma,
            data,
            delta,
            n_train,
            methods,
            psi,
            zero_tol,
            paths,
            qmle_method,
        })
    } else {
        Err(ConfigErrors(errs))
    }
}
