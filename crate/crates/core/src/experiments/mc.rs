use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{adaptive_weights, apply_zero_tol, bridge_fit, diagonal_blocks, disjoint_fit, PenaltyConfig};
use crate::error::{Error, Result};
use crate::model::{builtin, ParamVector, SdeModel, SparsityMask};
use crate::qmle::{qmle_fit, qmle_fit_auto, FitResult, QmleMethod, QmleOptions};
use crate::scalar::Real;
use crate::simulate::{euler_simulate, high_freq_grid, RngSpec, SamplePath};
use crate::tuning::{tune_from_fit, TuneOptions, TuningSpace};

/// Estimators compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qmle,
    Bridge,
    Lasso,
    Disjoint,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Qmle => "qmle",
            Method::Bridge => "bridge",
            Method::Lasso => "lasso",
            Method::Disjoint => "disjoint",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "qmle" => Ok(Method::Qmle),
            "bridge" => Ok(Method::Bridge),
            "lasso" => Ok(Method::Lasso),
            "disjoint" => Ok(Method::Disjoint),
            other => Err(format!("unknown method '{other}' (expected qmle, bridge, lasso or disjoint)")),
        }
    }
}

/// How the sampling step depends on n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaRule<T> {
    /// `Δ = n^{-1/3}`.
    HighFrequency,
    /// `Δ = T / n` for a fixed horizon T.
    Horizon(T),
    Fixed(T),
}

impl<T: Real> DeltaRule<T> {
    pub fn delta(&self, n: usize) -> T {
        match *self {
            DeltaRule::HighFrequency => high_freq_grid(n),
            DeltaRule::Horizon(t) => t / T::lit(n as f64),
            DeltaRule::Fixed(d) => d,
        }
    }
}

/// Where the quasi-likelihood optimizer starts in each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QmleStart {
    /// The data-generating parameter.
    #[default]
    Truth,
    /// Every model starting point, keeping the best fit.
    Pilot,
}

/// Monte Carlo study definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig<T> {
    pub model: String,
    pub truncate_sigma: Option<T>,
    pub theta_true: ParamVector<T>,
    pub x0: Vec<T>,
    pub n: usize,
    pub delta_rule: DeltaRule<T>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub psi0: PenaltyConfig<T>,
    /// Tune the Bridge configuration per replicate, starting at `psi0`.
    pub tune: bool,
    pub tune_eps: T,
    pub tune_max_iter: usize,
    pub lags: usize,
    pub qmle_method: QmleMethod,
    pub qmle_start: QmleStart,
    /// Estimates with magnitude below this are reported as zero.
    pub zero_tol: T,
    pub seed: u64,
    /// Simulation attempts per replicate before it counts as failed.
    pub max_attempts: u64,
}

impl<T: Real> McConfig<T> {
    /// Defaults for the given model and truth; everything else can be overwritten.
    pub fn new(model: &str, theta_true: ParamVector<T>, x0: Vec<T>, n: usize) -> Self {
        Self {
            model: model.to_string(),
            truncate_sigma: None,
            theta_true,
            x0,
            n,
            delta_rule: DeltaRule::HighFrequency,
            replicates: 100,
            methods: vec![Method::Qmle, Method::Bridge, Method::Lasso],
            psi0: PenaltyConfig::reference(),
            tune: false,
            tune_eps: T::lit(1e-4),
            tune_max_iter: 100,
            lags: 10,
            qmle_method: QmleMethod::QuasiNewton,
            qmle_start: QmleStart::Truth,
            zero_tol: T::zero(),
            seed: 1,
            max_attempts: 5,
        }
    }

    pub fn delta(&self) -> T {
        self.delta_rule.delta(self.n)
    }

    /// All violated constraints.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.replicates < 1 {
            out.push("replicates must be at least 1".to_string());
        }
        if self.methods.is_empty() {
            out.push("methods must not be empty".to_string());
        }
        if self.n < 2 {
            out.push("n must be at least 2".to_string());
        }
        let d = self.delta();
        if !(d > T::zero()) || !d.is_finite() {
            out.push(format!("delta must be positive and finite, got {d}"));
        }
        if !(self.zero_tol >= T::zero()) {
            out.push("zero_tol must be non-negative".to_string());
        }
        if self.max_attempts < 1 {
            out.push("max_attempts must be at least 1".to_string());
        }
        out.extend(self.psi0.problems());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary<T> {
    pub name: String,
    pub truth: T,
    pub mean: T,
    pub std_dev: T,
    pub mse: T,
    /// Fraction of replicates estimating exactly zero.
    pub zero_freq: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary<T> {
    pub method: Method,
    pub params: Vec<ParamSummary<T>>,
    /// Estimates per successful replicate, in replicate order.
    pub estimates: Vec<Vec<T>>,
}

impl<T: Real> MethodSummary<T> {
    pub fn param(&self, name: &str) -> Option<&ParamSummary<T>> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Five-number summary plus mean and standard deviation of one tuned coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary<T> {
    pub name: String,
    pub min: T,
    pub q1: T,
    pub median: T,
    pub mean: T,
    pub q3: T,
    pub max: T,
    pub std_dev: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary<T> {
    pub model: String,
    pub n: usize,
    pub delta: T,
    pub x0: Vec<T>,
    pub replicates: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Replicates that needed at least one fresh stream after an explosion.
    pub redrawn: usize,
    pub zero_mask: SparsityMask,
    pub methods: Vec<MethodSummary<T>>,
    /// Tuned configuration per successful replicate (empty without tuning).
    pub tuned: Vec<PenaltyConfig<T>>,
    pub tuning: Vec<TuningSummary<T>>,
}

impl<T: Real> McSummary<T> {
    pub fn method(&self, m: Method) -> Option<&MethodSummary<T>> {
        self.methods.iter().find(|s| s.method == m)
    }
}

struct Replicate<T> {
    estimates: Vec<Vec<T>>,
    tuned: Option<PenaltyConfig<T>>,
    redrawn: bool,
}

/// Runs the study on a built-in model.
pub fn run_mc<T: Real>(cfg: &McConfig<T>) -> Result<McSummary<T>> {
    let model = builtin::<T>(&cfg.model, cfg.truncate_sigma)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{}'", cfg.model)))?;
    run_mc_model(&model, cfg)
}

/// Same paths and initial estimates for the joint Bridge fit and the disjoint fit.
pub fn compare_joint_disjoint<T: Real>(cfg: &McConfig<T>) -> Result<McSummary<T>> {
    let cfg = McConfig { methods: vec![Method::Bridge, Method::Disjoint], ..cfg.clone() };
    run_mc(&cfg)
}

/// Simulate → QMLE → penalized fits for every replicate, in parallel; results
/// are reduced in replicate order so the schedule cannot change them.
pub fn run_mc_model<T: Real>(model: &SdeModel<T>, cfg: &McConfig<T>) -> Result<McSummary<T>> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    if cfg.theta_true.alpha.len() != model.p1() || cfg.theta_true.beta.len() != model.p2() {
        return Err(Error::InvalidArgument("theta_true does not match the model's parameter dimensions".into()));
    }
    if cfg.x0.len() != model.dim_state() {
        return Err(Error::InvalidArgument("x0 does not match the model's state dimension".into()));
    }
    let outcomes: Vec<Result<Replicate<T>>> =
        (0..cfg.replicates).into_par_iter().map(|k| replicate(model, cfg, k as u64)).collect();

    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("replicate {k} failed: {e}");
                failed += 1;
            }
        }
    }
    if failed * 5 > cfg.replicates {
        return Err(Error::TooManyFailures { failed, total: cfg.replicates });
    }
    let names = model.param_names();
    let truth = cfg.theta_true.to_vec();
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let estimates: Vec<Vec<T>> = ok.iter().map(|r| r.estimates[m].clone()).collect();
            MethodSummary { method, params: summarize(&names, &truth, &estimates), estimates }
        })
        .collect();
    let tuned: Vec<PenaltyConfig<T>> = ok.iter().filter_map(|r| r.tuned).collect();
    Ok(McSummary {
        model: cfg.model.clone(),
        n: cfg.n,
        delta: cfg.delta(),
        x0: cfg.x0.clone(),
        replicates: cfg.replicates,
        succeeded: ok.len(),
        failed,
        redrawn: ok.iter().filter(|r| r.redrawn).count(),
        zero_mask: SparsityMask::from_truth(&cfg.theta_true),
        methods,
        tuning: summarize_tuning(&tuned),
        tuned,
    })
}

fn replicate<T: Real>(model: &SdeModel<T>, cfg: &McConfig<T>, k: u64) -> Result<Replicate<T>> {
    let delta = cfg.delta();
    let mut path: Option<SamplePath<T>> = None;
    let mut last_err = None;
    for attempt in 0..cfg.max_attempts {
        let rng = RngSpec::new(cfg.seed, (k << 8) | attempt);
        match euler_simulate(model, &cfg.theta_true, &cfg.x0, cfg.n, delta, &rng) {
            Ok(p) => {
                path = Some(p);
                if attempt > 0 {
                    log::debug!("replicate {k} redrawn {attempt} time(s)");
                }
                break;
            }
            Err(e @ Error::Explosion { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    let redrawn = last_err.is_some();
    let path = path.ok_or_else(|| last_err.expect("explosion recorded"))?;
    let opts = QmleOptions { method: cfg.qmle_method, ..QmleOptions::default() };
    let fit = match cfg.qmle_start {
        QmleStart::Truth => qmle_fit(model, &path, &cfg.theta_true, &opts)?,
        QmleStart::Pilot => qmle_fit_auto(model, &path, &opts)?,
    };
    let mut tuned = None;
    let mut estimates = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let theta = match m {
            Method::Qmle => fit.theta_hat.clone(),
            Method::Bridge if cfg.tune => {
                let topts = TuneOptions {
                    eps: cfg.tune_eps,
                    max_iter: cfg.tune_max_iter,
                    lags: cfg.lags,
                    ..TuneOptions::default()
                };
                let t = tune_from_fit(model, &path, &fit, &cfg.psi0, &TuningSpace::default(), &topts)?;
                tuned = Some(t.psi_star);
                t.theta_hat
            }
            Method::Bridge => penalized(model, &fit, &cfg.psi0),
            Method::Lasso => penalized(model, &fit, &cfg.psi0.as_lasso()),
            Method::Disjoint => {
                let w = adaptive_weights(&fit.theta_hat, &cfg.psi0);
                let (g1, g2) = diagonal_blocks(&fit.curvature, model.p1());
                disjoint_fit(
                    &fit.theta_hat.alpha,
                    &fit.theta_hat.beta,
                    &g1,
                    &g2,
                    &w,
                    &cfg.psi0,
                    model.bounds_alpha(),
                    model.bounds_beta(),
                )
                .theta_hat
            }
        };
        estimates.push(apply_zero_tol(&theta, cfg.zero_tol).to_vec());
    }
    Ok(Replicate { estimates, tuned, redrawn })
}

fn penalized<T: Real>(model: &SdeModel<T>, fit: &FitResult<T>, psi: &PenaltyConfig<T>) -> ParamVector<T> {
    let w = adaptive_weights(&fit.theta_hat, psi);
    bridge_fit(&fit.theta_hat, &fit.curvature, &w, psi, &model.bounds()).theta_hat
}

fn summarize<T: Real>(names: &[String], truth: &[T], estimates: &[Vec<T>]) -> Vec<ParamSummary<T>> {
    let m = T::lit(estimates.len().max(1) as f64);
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<T> = estimates.iter().map(|e| e[j]).collect();
            let mean = col.iter().copied().sum::<T>() / m;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let mse = col.iter().map(|&v| (v - truth[j]) * (v - truth[j])).sum::<T>() / m;
            let zeros = col.iter().filter(|v| v.is_zero()).count();
            ParamSummary {
                name: name.clone(),
                truth: truth[j],
                mean,
                std_dev: var.sqrt(),
                mse,
                zero_freq: T::lit(zeros as f64) / m,
            }
        })
        .collect()
}

fn summarize_tuning<T: Real>(tuned: &[PenaltyConfig<T>]) -> Vec<TuningSummary<T>> {
    if tuned.is_empty() {
        return Vec::new();
    }
    let names = ["q1", "q2", "lambda0", "gamma0", "delta1", "delta2"];
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = tuned.iter().map(|p| p.to_array()[j].as_f64()).collect();
            let m = col.len() as f64;
            let mean = col.iter().sum::<f64>() / m;
            let sd = if col.len() > 1 {
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            let q = |p: f64| T::lit(super::predict::quantile(&col, p));
            TuningSummary {
                name: name.to_string(),
                min: q(0.0),
                q1: q(0.25),
                median: q(0.5),
                mean: T::lit(mean),
                q3: q(0.75),
                max: q(1.0),
                std_dev: T::lit(sd),
            }
        })
        .collect()
}
