//! Residual diagnostics and residual-driven selection of the penalty
//! configuration.
//!
//! A candidate ψ is scored by fitting the Bridge estimator, standardizing the
//! one-step Euler innovations at the fit, and adding the Ljung–Box statistic
//! (summed over components) to the Kolmogorov–Smirnov distance from N(0, 1)
//! (maximum over components). A projected simplex search minimizes the score.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bridge::{adaptive_weights, bridge_fit, PenaltyConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Bounds, ParamVector, SdeModel};
use crate::optim::NelderMead;
use crate::qmle::{qmle_fit_auto, FitResult, QmleOptions};
use crate::scalar::Real;
use crate::simulate::SamplePath;

/// Smallest admissible ratio of the extreme eigenvalues of Σ.
const MIN_EIGEN_RATIO: f64 = 1e-12;

/// Standardized residuals, one row per increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries<T> {
    pub values: Matrix<T>,
}

impl<T: Real> ResidualSeries<T> {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn d(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.n()).map(|i| self.values[(i, c)]).collect()
    }
}

/// Matrix applied to the scaled innovation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Whitening {
    /// `σ⁻¹` when σ is square, falling back to `Σ^{-1/2}` otherwise. Inverts
    /// the Euler step exactly, so residuals at the generating θ are the
    /// simulator's normal draws.
    #[default]
    Diffusion,
    /// Symmetric inverse square root `Σ^{-1/2}` from the eigendecomposition.
    Symmetric,
}

/// `r_i = Δ^{-1/2} W(X_i, β) (X_{i+1} − X_i − Δ b(X_i, α))`.
pub fn residuals<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    theta: &ParamVector<T>,
) -> Result<ResidualSeries<T>> {
    residuals_with(model, path, theta, Whitening::default())
}

pub fn residuals_with<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    theta: &ParamVector<T>,
    whitening: Whitening,
) -> Result<ResidualSeries<T>> {
    let d = model.dim_state();
    let r = model.dim_noise();
    if path.dim() != d {
        return Err(Error::InvalidArgument(format!("path has {} components, model expects {d}", path.dim())));
    }
    let n = path.n();
    let delta = path.delta;
    let scale = T::one() / delta.sqrt();
    let ratio = T::lit(MIN_EIGEN_RATIO);
    let mut out = Matrix::zeros(n, d);
    let mut b = vec![T::zero(); d];
    let mut s = vec![T::zero(); d * r];
    let mut innov = vec![T::zero(); d];
    for i in 0..n {
        let x = path.state(i);
        let xn = path.state(i + 1);
        model.drift_into(x, &theta.alpha, &mut b);
        model.diffusion_into(x, &theta.beta, &mut s);
        for j in 0..d {
            innov[j] = xn[j] - x[j] - delta * b[j];
        }
        if model.is_diagonal_diffusion() {
            let diag: Vec<T> = (0..d).map(|j| s[j * r + j]).collect();
            let (lo, hi) = diag.iter().fold((T::infinity(), T::zero()), |(lo, hi), &v| (lo.min(v * v), hi.max(v * v)));
            if !(lo > ratio * hi) || !(hi > T::zero()) {
                return Err(Error::SingularDiffusion { index: i });
            }
            for j in 0..d {
                let w = if whitening == Whitening::Symmetric { diag[j].abs() } else { diag[j] };
                out[(i, j)] = scale * innov[j] / w;
            }
            continue;
        }
        let sigma = Matrix::from_row_major(d, r, s.clone());
        let (vals, vecs) = sigma.gram().symmetric_eigen();
        let hi = vals.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if !(vals[0] > ratio * hi) || !(hi > T::zero()) {
            return Err(Error::SingularDiffusion { index: i });
        }
        let w = match (whitening, r == d) {
            (Whitening::Diffusion, true) => sigma.inverse().ok_or(Error::SingularDiffusion { index: i })?,
            _ => Matrix::from_eigen(&vals.iter().map(|&v| T::one() / v.sqrt()).collect::<Vec<_>>(), &vecs),
        };
        let z = w.mul_vec(&innov);
        for j in 0..d {
            out[(i, j)] = scale * z[j];
        }
    }
    if !out.is_finite() {
        return Err(Error::Evaluation {
            which: "residuals",
            x: vec![],
            params: theta.to_vec().iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(ResidualSeries { values: out })
}

/// Normalization of the sample autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcfConvention {
    /// Lag-j covariance averaged over its `n − j` terms, variance over `n`.
    #[default]
    LagAveraged,
    /// Both sums divided by `n`.
    Standard,
}

/// Ljung–Box statistic `Q_ℓ = n(n+2) Σ_{j=1}^{ℓ} ρ̂_j² / (n−j)`.
pub fn ljung_box<T: Real>(series: &[T], ell: usize) -> Result<T> {
    ljung_box_with(series, ell, AcfConvention::default())
}

pub fn ljung_box_with<T: Real>(series: &[T], ell: usize, convention: AcfConvention) -> Result<T> {
    let n = series.len();
    if ell == 0 || n <= ell {
        return Err(Error::InvalidArgument(format!("Ljung-Box needs n > lags >= 1 (n = {n}, lags = {ell})")));
    }
    let nf = T::lit(n as f64);
    let mean = series.iter().copied().sum::<T>() / nf;
    let centered: Vec<T> = series.iter().map(|&v| v - mean).collect();
    let var = centered.iter().map(|&v| v * v).sum::<T>() / nf;
    if !(var > T::zero()) || !var.is_finite() {
        return Err(Error::DegenerateSeries);
    }
    let mut q = T::zero();
    for j in 1..=ell {
        let cov: T = centered[..n - j].iter().zip(&centered[j..]).map(|(&a, &b)| a * b).sum();
        let m = T::lit((n - j) as f64);
        let cov = match convention {
            AcfConvention::LagAveraged => cov / m,
            AcfConvention::Standard => cov / nf,
        };
        let rho = cov / var;
        q = q + rho * rho / m;
    }
    Ok(nf * (nf + T::lit(2.0)) * q)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `sup_x |F̂_n(x) − Φ(x)|`, evaluated on both sides of every order statistic.
pub fn ks_gaussian<T: Real>(series: &[T]) -> T {
    let mut xs: Vec<f64> = series.iter().map(|v| v.as_f64()).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let phi = normal_cdf(x);
        d = d.max((i as f64 + 1.0) / n - phi).max(phi - i as f64 / n);
    }
    T::lit(d)
}

/// Sum of per-component Ljung–Box statistics plus the largest per-component
/// KS distance.
pub fn combined_score<T: Real>(res: &ResidualSeries<T>, ell: usize) -> Result<T> {
    combined_score_with(res, ell, AcfConvention::default())
}

pub fn combined_score_with<T: Real>(res: &ResidualSeries<T>, ell: usize, convention: AcfConvention) -> Result<T> {
    let mut q = T::zero();
    let mut ks = T::zero();
    for c in 0..res.d() {
        let col = res.column(c);
        q = q + ljung_box_with(&col, ell, convention)?;
        ks = ks.max(ks_gaussian(&col));
    }
    Ok(q + ks)
}

/// Search box Ψ for the six tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningSpace<T> {
    pub q: (T, T),
    pub lambda0: (T, T),
    pub gamma0: (T, T),
    pub delta: (T, T),
}

impl<T: Real> Default for TuningSpace<T> {
    fn default() -> Self {
        let l = T::lit;
        Self { q: (l(0.01), l(1.0)), lambda0: (l(0.1), l(10.0)), gamma0: (l(0.1), l(10.0)), delta: (l(0.1), l(2.0)) }
    }
}

impl<T: Real> TuningSpace<T> {
    pub fn bounds(&self) -> Bounds<T> {
        let (q, l, g, d) = (self.q, self.lambda0, self.gamma0, self.delta);
        Bounds::new(vec![q.0, q.0, l.0, g.0, d.0, d.0], vec![q.1, q.1, l.1, g.1, d.1, d.1])
    }

    pub fn contains(&self, psi: &PenaltyConfig<T>) -> bool {
        self.bounds().contains(&psi.to_array())
    }

    /// Clips to the box, then lifts each δ_i to at least `1 − q_i + 10⁻³`.
    pub fn project(&self, v: &mut [T]) {
        let b = self.bounds();
        b.project(v);
        let margin = T::lit(1e-3);
        for (qi, di) in [(0, 4), (1, 5)] {
            v[di] = v[di].max(T::one() - v[qi] + margin).min(b.upper[di]);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TuneOptions<T> {
    /// Stop once successive scores differ by less than this.
    pub eps: T,
    pub max_iter: usize,
    /// Ljung–Box lag count ℓ.
    pub lags: usize,
    pub acf: AcfConvention,
    pub whitening: Whitening,
    /// Initial simplex edge as a fraction of `max(1, ‖ψ₀‖∞)`, shared by all coordinates.
    pub initial_step: T,
}

impl<T: Real> Default for TuneOptions<T> {
    fn default() -> Self {
        Self {
            eps: T::lit(1e-4),
            max_iter: 100,
            lags: 10,
            acf: AcfConvention::LagAveraged,
            whitening: Whitening::Diffusion,
            initial_step: T::lit(0.1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint<T> {
    pub psi: PenaltyConfig<T>,
    /// `None` when the fit or its residuals failed.
    pub score: Option<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult<T> {
    pub psi_star: PenaltyConfig<T>,
    pub score: T,
    pub trace: Vec<TracePoint<T>>,
    pub converged: bool,
    /// Bridge estimate at `psi_star`.
    pub theta_hat: ParamVector<T>,
}

/// Runs the QMLE and then [`tune_from_fit`].
pub fn tune<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    psi0: &PenaltyConfig<T>,
    space: &TuningSpace<T>,
    eps: T,
    max_iter: usize,
) -> Result<TuneResult<T>> {
    let fit = qmle_fit_auto(model, path, &QmleOptions::default())?;
    let opts = TuneOptions { eps, max_iter, ..TuneOptions::default() };
    tune_from_fit(model, path, &fit, psi0, space, &opts)
}

/// Bridge estimate at ψ and its combined residual score.
pub fn score_psi<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    fit: &FitResult<T>,
    psi: &PenaltyConfig<T>,
    opts: &TuneOptions<T>,
) -> Result<(ParamVector<T>, T)> {
    let w = adaptive_weights(&fit.theta_hat, psi);
    let b = bridge_fit(&fit.theta_hat, &fit.curvature, &w, psi, &model.bounds());
    let res = residuals_with(model, path, &b.theta_hat, opts.whitening)?;
    let s = combined_score_with(&res, opts.lags, opts.acf)?;
    Ok((b.theta_hat, s))
}

/// Projected Nelder–Mead over Ψ on the residual score, starting at `psi0`.
///
/// The iterate after each simplex step is the best vertex; the search stops
/// when two consecutive iterate scores differ by less than `eps`. The best ψ
/// ever evaluated is returned.
pub fn tune_from_fit<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    fit: &FitResult<T>,
    psi0: &PenaltyConfig<T>,
    space: &TuningSpace<T>,
    opts: &TuneOptions<T>,
) -> Result<TuneResult<T>> {
    if !space.contains(psi0) {
        return Err(Error::InvalidArgument("psi0 lies outside the tuning space".into()));
    }
    let problems = psi0.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    let trace: RefCell<Vec<TracePoint<T>>> = RefCell::new(Vec::new());
    let best: RefCell<Option<(PenaltyConfig<T>, T, ParamVector<T>)>> = RefCell::new(None);
    let objective = |v: &[T]| -> T {
        let psi = PenaltyConfig::from_array(v);
        let outcome = score_psi(model, path, fit, &psi, opts).ok().filter(|(_, s)| s.is_finite());
        trace.borrow_mut().push(TracePoint { psi, score: outcome.as_ref().map(|(_, s)| *s) });
        match outcome {
            Some((theta, s)) => {
                let mut b = best.borrow_mut();
                if b.as_ref().is_none_or(|(_, bs, _)| s < *bs) {
                    *b = Some((psi, s, theta));
                }
                s
            }
            None => T::infinity(),
        }
    };

    let x0 = psi0.to_array();
    let converged = if !opts.eps.is_finite() {
        objective(&x0);
        true
    } else {
        let project = |v: &mut [T]| space.project(v);
        let size = opts.initial_step * crate::scalar::max_abs(&x0).max(T::one());
        let steps = vec![size; x0.len()];
        let mut nm = NelderMead::new(objective, &x0, &steps, &project);
        let mut prev = nm.best().1;
        let mut converged = false;
        for _ in 0..opts.max_iter {
            nm.step();
            let cur = nm.best().1;
            if (cur - prev).abs() < opts.eps {
                converged = true;
                break;
            }
            prev = cur;
        }
        converged
    };
    let trace = trace.into_inner();
    match best.into_inner() {
        Some((psi_star, score, theta_hat)) => Ok(TuneResult { psi_star, score, trace, converged, theta_hat }),
        None => Err(Error::TuningFailed { evaluations: trace.len() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linear, Bounds};
    use crate::simulate::{euler_simulate, standard_normal_block, RngSpec};

    fn brownian(d: usize) -> SdeModel<f64> {
        linear(d, None).with_bounds(Bounds::unbounded(d * (d + 1)), Bounds::unbounded(d * (d + 1)))
    }

    #[test]
    fn residuals_hand_value() {
        // Σ = 4, Δ = 0.25, increment 1, no drift → r = 1.
        let m = brownian(1);
        let path = SamplePath::from_rows(&[vec![0.0], vec![1.0]], 0.25, 0.0).unwrap();
        let theta = ParamVector::new(vec![0.0, 0.0], vec![2.0, 0.0]);
        let r = residuals(&m, &path, &theta).unwrap();
        assert!((r.values[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn residuals_equal_increments_for_standard_brownian() {
        let m = brownian(2);
        let rows = vec![vec![0.0, 0.0], vec![0.3, -1.0], vec![1.0, 2.0]];
        let path = SamplePath::from_rows(&rows, 1.0, 0.0).unwrap();
        let theta = ParamVector::new(vec![0.0; 6], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = residuals(&m, &path, &theta).unwrap();
        assert_eq!(r.values.to_rows(), vec![vec![0.3, -1.0], vec![0.7, 3.0]]);
    }

    #[test]
    fn residuals_recover_simulation_draws() {
        let m = crate::model::trig2d::<f64>();
        let truth = crate::model::trig2d_truth();
        let rng = RngSpec::new(11, 0);
        let path = euler_simulate(&m, &truth, &[1.0, 1.0], 200, 0.01, &rng).unwrap();
        let z: Vec<f64> = standard_normal_block(&rng, 400);
        let r = residuals(&m, &path, &truth).unwrap();
        for i in 0..200 {
            for j in 0..2 {
                assert!((r.values[(i, j)] - z[2 * i + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_diffusion_reports_index() {
        let m = brownian(1);
        let path = SamplePath::from_rows(&[vec![1.0], vec![0.0], vec![1.0]], 1.0, 0.0).unwrap();
        // σ(x) = x vanishes at the second state.
        let theta = ParamVector::new(vec![0.0, 0.0], vec![0.0, 1.0]);
        assert_eq!(residuals(&m, &path, &theta).unwrap_err(), Error::SingularDiffusion { index: 1 });
    }

    #[test]
    fn ljung_box_examples() {
        let n = 1000;
        let constant_step: Vec<f64> = (0..n).map(|i| i as f64).collect();
        assert!(ljung_box(&constant_step, 1).unwrap() >= n as f64 * 0.9);
        let alternating: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(ljung_box(&alternating, 1).unwrap() > 0.0);
        assert_eq!(ljung_box(&[1.0, 1.0, 1.0], 1).unwrap_err(), Error::DegenerateSeries);
        assert!(ljung_box(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_gaussian(&[0.0]), 0.5);
        let far: f64 = ks_gaussian(&[10.0; 5]);
        assert!((far - 1.0).abs() < 1e-12);
        assert!(ks_gaussian(&[-0.5, 0.25, 3.0]) <= 1.0);
    }

    #[test]
    fn single_component_score_is_q_plus_ks() {
        let z: Vec<f64> = standard_normal_block(&RngSpec::new(3, 0), 300);
        let res = ResidualSeries { values: Matrix::from_row_major(300, 1, z.clone()) };
        let s = combined_score(&res, 10).unwrap();
        assert!((s - (ljung_box(&z, 10).unwrap() + ks_gaussian(&z))).abs() < 1e-12);
    }

    #[test]
    fn projection_enforces_delta_constraint() {
        let space = TuningSpace::<f64>::default();
        let mut v = [0.5, 0.95, 20.0, 0.0, 0.1, 0.1];
        space.project(&mut v);
        assert_eq!(v[2], 10.0);
        assert_eq!(v[3], 0.1);
        assert!((v[4] - 0.501).abs() < 1e-12);
        assert_eq!(v[5], 0.1);
        assert!(PenaltyConfig::from_array(&v).problems().is_empty());
    }
}
