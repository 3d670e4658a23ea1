use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::mc::Method;
use crate::bridge::{adaptive_weights, apply_zero_tol, bridge_fit, diagonal_blocks, disjoint_fit, PenaltyConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ParamVector, SdeModel};
use crate::qmle::{qmle_fit_auto, QmleOptions};
use crate::scalar::Real;
use crate::simulate::{euler_simulate, RngSpec, SamplePath};

/// Empirical quantile of `values` at level `p` in [0, 1].
pub fn quantile(values: &[f64], p: f64) -> f64 {
    Data::new(values.to_vec()).quantile(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPrediction<T> {
    pub name: String,
    /// Average squared error over time points and bootstrap paths.
    pub mse: T,
    /// The same average restricted to each time point.
    pub mse_by_time: Vec<T>,
    pub mean: Vec<T>,
    pub q025: Vec<T>,
    pub q10: Vec<T>,
    pub q90: Vec<T>,
    pub q975: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport<T> {
    pub method: String,
    pub n_te: usize,
    pub paths: usize,
    /// Bootstrap paths dropped after repeated explosions.
    pub failed: usize,
    pub series: Vec<SeriesPrediction<T>>,
}

/// Parametric bootstrap: `n_paths` Euler paths of `test.rows()` steps from
/// `last_train_state` under `theta_fit`, scored against the test rows.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_predict<T: Real>(
    model: &SdeModel<T>,
    theta_fit: &ParamVector<T>,
    last_train_state: &[T],
    delta: T,
    n_paths: usize,
    test: &Matrix<T>,
    seed: u64,
    method: &str,
) -> Result<PredictReport<T>> {
    let n_te = test.rows();
    let d = model.dim_state();
    if n_te < 1 || test.cols() != d {
        return Err(Error::InvalidArgument(format!("test data must have at least one row and {d} columns")));
    }
    if n_paths < 1 {
        return Err(Error::InvalidArgument("the number of bootstrap paths must be at least 1".into()));
    }
    let sims: Vec<Option<SamplePath<T>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            (0..5u64).find_map(|attempt| {
                euler_simulate(model, theta_fit, last_train_state, n_te, delta, &RngSpec::new(seed, (k << 8) | attempt))
                    .ok()
            })
        })
        .collect();
    let failed = sims.iter().filter(|s| s.is_none()).count();
    if failed * 5 > n_paths {
        return Err(Error::TooManyFailures { failed, total: n_paths });
    }
    let sims: Vec<SamplePath<T>> = sims.into_iter().flatten().collect();
    let m = sims.len() as f64;
    let series = (0..d)
        .map(|c| {
            let mut mse_by_time = Vec::with_capacity(n_te);
            let (mut mean, mut q025, mut q10, mut q90, mut q975) = (vec![], vec![], vec![], vec![], vec![]);
            let mut total = 0.0;
            for i in 0..n_te {
                let x = test[(i, c)].as_f64();
                let draws: Vec<f64> = sims.iter().map(|p| p.values[(i + 1, c)].as_f64()).collect();
                let se = draws.iter().map(|v| (x - v) * (x - v)).sum::<f64>();
                total += se;
                mse_by_time.push(T::lit(se / m));
                mean.push(T::lit(draws.iter().sum::<f64>() / m));
                let mut data = Data::new(draws);
                q025.push(T::lit(data.quantile(0.025)));
                q10.push(T::lit(data.quantile(0.10)));
                q90.push(T::lit(data.quantile(0.90)));
                q975.push(T::lit(data.quantile(0.975)));
            }
            SeriesPrediction {
                name: format!("X{}", c + 1),
                mse: T::lit(total / (m * n_te as f64)),
                mse_by_time,
                mean,
                q025,
                q10,
                q90,
                q975,
            }
        })
        .collect();
    Ok(PredictReport { method: method.to_string(), n_te, paths: sims.len(), failed, series })
}

/// QMLE on `train` followed by each requested penalized fit; estimates below
/// `zero_tol` in magnitude are set to zero (the reduced model).
pub fn fit_methods<T: Real>(
    model: &SdeModel<T>,
    train: &SamplePath<T>,
    methods: &[Method],
    psi: &PenaltyConfig<T>,
    zero_tol: T,
    opts: &QmleOptions<T>,
) -> Result<Vec<(Method, ParamVector<T>)>> {
    let fit = qmle_fit_auto(model, train, opts)?;
    let w = adaptive_weights(&fit.theta_hat, psi);
    let lasso = psi.as_lasso();
    Ok(methods
        .iter()
        .map(|&m| {
            let theta = match m {
                Method::Qmle => fit.theta_hat.clone(),
                Method::Bridge => bridge_fit(&fit.theta_hat, &fit.curvature, &w, psi, &model.bounds()).theta_hat,
                Method::Lasso => {
                    let wl = adaptive_weights(&fit.theta_hat, &lasso);
                    bridge_fit(&fit.theta_hat, &fit.curvature, &wl, &lasso, &model.bounds()).theta_hat
                }
                Method::Disjoint => {
                    let (g1, g2) = diagonal_blocks(&fit.curvature, model.p1());
                    let b = (model.bounds_alpha(), model.bounds_beta());
                    disjoint_fit(&fit.theta_hat.alpha, &fit.theta_hat.beta, &g1, &g2, &w, psi, b.0, b.1).theta_hat
                }
            };
            (m, apply_zero_tol(&theta, zero_tol))
        })
        .collect())
}
