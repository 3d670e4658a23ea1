//! Gaussian quasi-likelihood contrast, its minimizer (the initial estimator
//! θ̃), and the curvature matrix Ĝ used by the penalized objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Bounds, ParamVector, SdeModel};
use crate::optim::{self, QuasiNewtonOptions, SimplexOptions};
use crate::scalar::{max_abs, Real};
use crate::simulate::SamplePath;

/// Largest admissible condition number of Σ along the path.
const MAX_CONDITION: f64 = 1e12;

/// Negative quasi-log-likelihood of the Euler transition:
///
/// ```text
/// ½ Σ_{i=1..n} [ log det Σ(X_{i-1}, β)
///                + Δ⁻¹ (ΔX_i − Δ b(X_{i-1}, α))ᵀ Σ⁻¹(X_{i-1}, β) (ΔX_i − Δ b(X_{i-1}, α)) ]
/// ```
///
/// Coefficients are evaluated at the left endpoint of each increment.
pub fn quasi_neg_loglik<T: Real>(model: &SdeModel<T>, path: &SamplePath<T>, theta: &ParamVector<T>) -> Result<T> {
    let d = model.dim_state();
    let r = model.dim_noise();
    if path.dim() != d {
        return Err(Error::InvalidArgument(format!("path has {} components, model expects {d}", path.dim())));
    }
    if theta.alpha.len() != model.p1() || theta.beta.len() != model.p2() {
        return Err(Error::InvalidArgument("parameter dimensions do not match the model".into()));
    }
    let delta = path.delta;
    let inv_delta = T::one() / delta;
    let max_cond = T::lit(MAX_CONDITION);
    let mut b = vec![T::zero(); d];
    let mut s = vec![T::zero(); d * r];
    let mut resid = vec![T::zero(); d];
    let mut sig = Matrix::zeros(d, d);
    let mut total = T::zero();
    for i in 1..=path.n() {
        let x = path.state(i - 1);
        let xn = path.state(i);
        model.drift_into(x, &theta.alpha, &mut b);
        model.diffusion_into(x, &theta.beta, &mut s);
        for j in 0..d {
            resid[j] = xn[j] - x[j] - delta * b[j];
        }
        let (logdet, quad) = if model.is_diagonal_diffusion() {
            // One logarithm per step: log det Σ = log Π σ_jj².
            let mut det = T::one();
            let mut quad = T::zero();
            let (mut lo, mut hi) = (T::infinity(), T::zero());
            for j in 0..d {
                let v = s[j * r + j] * s[j * r + j];
                lo = lo.min(v);
                hi = hi.max(v);
                det = det * v;
                quad = quad + resid[j] * resid[j] / v;
            }
            if !(lo > T::zero()) || hi > max_cond * lo {
                return Err(Error::SingularDiffusion { index: i - 1 });
            }
            let logdet = if det.is_normal() && det.is_finite() {
                det.ln()
            } else {
                (0..d).map(|j| (s[j * r + j] * s[j * r + j]).ln()).sum()
            };
            (logdet, quad)
        } else {
            for p in 0..d {
                for q in 0..=p {
                    let mut v = T::zero();
                    for k in 0..r {
                        v = v + s[p * r + k] * s[q * r + k];
                    }
                    sig[(p, q)] = v;
                    sig[(q, p)] = v;
                }
            }
            let l = sig.cholesky().ok_or(Error::SingularDiffusion { index: i - 1 })?;
            let diag = l.diag();
            let (lo, hi) = diag.iter().fold((T::infinity(), T::zero()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi * hi > max_cond * lo * lo {
                return Err(Error::SingularDiffusion { index: i - 1 });
            }
            // Forward substitution L y = resid; quad = |y|².
            let mut quad = T::zero();
            let mut y = resid.clone();
            for p in 0..d {
                let mut v = y[p];
                for q in 0..p {
                    v = v - l[(p, q)] * y[q];
                }
                y[p] = v / l[(p, p)];
                quad = quad + y[p] * y[p];
            }
            (T::lit(2.0) * diag.iter().map(|v| v.ln()).sum::<T>(), quad)
        };
        total = total + logdet + quad * inv_delta;
    }
    let value = total * T::lit(0.5);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation {
            which: "quasi-likelihood",
            x: vec![],
            params: theta.to_vec().iter().map(|v| v.as_f64()).collect(),
        })
    }
}

/// Which minimizer backs [`qmle_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QmleMethod {
    /// Projected simplex, one restart from the best point, then a coordinate parabola polish.
    #[default]
    Simplex,
    /// Projected BFGS with finite-difference gradients.
    QuasiNewton,
}

#[derive(Debug, Clone, Copy)]
pub struct QmleOptions<T> {
    pub method: QmleMethod,
    /// Relative tolerance on the projected gradient: `‖∇‖∞ ≤ tol · max(1, |ℓ|)`.
    pub tol_grad: T,
    pub max_iter: usize,
    /// Relative finite-difference step for the curvature matrix.
    pub hessian_step: T,
}

impl<T: Real> Default for QmleOptions<T> {
    fn default() -> Self {
        Self { method: QmleMethod::Simplex, tol_grad: T::lit(1e-6), max_iter: 20_000, hessian_step: T::lit(1e-4) }
    }
}

/// Initial estimator and curvature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub theta_hat: ParamVector<T>,
    pub objective: T,
    /// Ĝ: finite-difference Hessian of the contrast at `theta_hat`, repaired to be PD.
    pub curvature: Matrix<T>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: T,
    pub pd_repaired: bool,
    /// The Hessian stencil was shifted inward because `theta_hat` sits within one step of a bound.
    pub hessian_one_sided: bool,
}

/// Contrast as a function of the concatenated parameter; rejected points map to `+∞`.
pub fn contrast_fn<'a, T: Real>(model: &'a SdeModel<T>, path: &'a SamplePath<T>) -> impl FnMut(&[T]) -> T + 'a {
    let p1 = model.p1();
    move |v: &[T]| quasi_neg_loglik(model, path, &ParamVector::from_slice(p1, v)).unwrap_or(T::infinity())
}

/// Minimizes the quasi-likelihood contrast within the model's bounds.
pub fn qmle_fit<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    init: &ParamVector<T>,
    opts: &QmleOptions<T>,
) -> Result<FitResult<T>> {
    let bounds = model.bounds();
    let x0 = init.to_vec();
    if x0.len() != model.n_params() {
        return Err(Error::InvalidArgument("initial value has the wrong length".into()));
    }
    if !bounds.contains(&x0) {
        return Err(Error::InvalidArgument("initial value lies outside the parameter bounds".into()));
    }
    // Surface errors such as a singular diffusion at the starting point.
    quasi_neg_loglik(model, path, init)?;

    let (x, iterations) = match opts.method {
        QmleMethod::Simplex => {
            let sopts = SimplexOptions { max_iter: opts.max_iter, ..SimplexOptions::default() };
            let first = optim::nelder_mead(contrast_fn(model, path), &x0, &bounds, &sopts);
            let restart = optim::nelder_mead(
                contrast_fn(model, path),
                &first.x,
                &bounds,
                &SimplexOptions { initial_step: sopts.initial_step * T::lit(0.2), ..sopts },
            );
            let polish = optim::coordinate_polish(contrast_fn(model, path), &restart.x, &bounds, 500, T::lit(1e-14));
            (polish.x, first.iterations + restart.iterations + polish.iterations)
        }
        QmleMethod::QuasiNewton => {
            let qopts = QuasiNewtonOptions { max_iter: opts.max_iter, grad_tol: opts.tol_grad, ..Default::default() };
            let r = optim::projected_bfgs(contrast_fn(model, path), &x0, &bounds, &qopts);
            (r.x, r.iterations)
        }
    };
    let theta_hat = ParamVector::from_slice(model.p1(), &x);
    let objective = quasi_neg_loglik(model, path, &theta_hat)?;
    let mut f = contrast_fn(model, path);
    let grad = optim::fd_gradient(&mut f, &x, objective, &bounds, T::lit(6e-6));
    let gradient_norm = max_abs(&optim::projected_gradient(&x, &grad, &bounds));
    let converged = gradient_norm <= opts.tol_grad * objective.abs().max(T::one());
    let hess = hessian_fd(model, path, &theta_hat, opts.hessian_step)?;
    let (curvature, pd_repaired) = pd_repair(&hess.matrix);
    Ok(FitResult {
        theta_hat,
        objective,
        curvature,
        iterations,
        converged,
        gradient_norm,
        pd_repaired,
        hessian_one_sided: hess.one_sided,
    })
}

/// [`qmle_fit`] from each of the model's starting points
/// ([`SdeModel::starting_points`]) with a finite contrast; the fit with the
/// smallest contrast wins.
pub fn qmle_fit_auto<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    opts: &QmleOptions<T>,
) -> Result<FitResult<T>> {
    let mut best: Option<FitResult<T>> = None;
    let mut last_err = None;
    for start in model.starting_points(path) {
        match qmle_fit(model, path, &start, opts) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one starting point"))
}

/// Finite-difference Hessian and whether the stencil had to be shifted.
#[derive(Debug, Clone)]
pub struct Hessian<T> {
    pub matrix: Matrix<T>,
    pub one_sided: bool,
}

/// Central-difference Hessian of the quasi-likelihood contrast, symmetrized.
pub fn hessian_fd<T: Real>(
    model: &SdeModel<T>,
    path: &SamplePath<T>,
    theta: &ParamVector<T>,
    rel_step: T,
) -> Result<Hessian<T>> {
    let p1 = model.p1();
    let mut step = rel_step;
    let mut last_err = None;
    // A stencil point can cross a zero of σ near some observation; shrink the
    // step and retry before giving up.
    for _ in 0..4 {
        let mut first_err = None;
        let f = |v: &[T]| match quasi_neg_loglik(model, path, &ParamVector::from_slice(p1, v)) {
            Ok(val) => val,
            Err(e) => {
                first_err.get_or_insert(e);
                T::nan()
            }
        };
        let h = fd_hessian(f, &theta.to_vec(), &model.bounds(), step);
        match first_err {
            None => return Ok(h),
            Some(e) => last_err = Some(e),
        }
        step = step * T::lit(0.1);
    }
    Err(last_err.expect("at least one attempt"))
}

/// Central-difference Hessian of an arbitrary function. Coordinates closer
/// than one step to a bound are evaluated around a center moved inward by
/// that step (first-order accurate there), and `one_sided` is set.
pub fn fd_hessian<T: Real, F: FnMut(&[T]) -> T>(mut f: F, x: &[T], bounds: &Bounds<T>, rel_step: T) -> Hessian<T> {
    let p = x.len();
    let h: Vec<T> = x.iter().map(|v| rel_step * v.abs().max(T::one())).collect();
    let mut c = x.to_vec();
    let mut one_sided = false;
    for j in 0..p {
        let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
        if hi - lo >= T::lit(2.0) * h[j] {
            let shifted = c[j].max(lo + h[j]).min(hi - h[j]);
            if shifted != c[j] {
                one_sided = true;
                c[j] = shifted;
            }
        }
    }
    let f0 = f(&c);
    let mut m = Matrix::zeros(p, p);
    let mut y = c.clone();
    let mut eval = |y: &mut Vec<T>, shifts: &[(usize, T)]| {
        for &(j, s) in shifts {
            y[j] = c[j] + s;
        }
        let v = f(y);
        for &(j, _) in shifts {
            y[j] = c[j];
        }
        v
    };
    for i in 0..p {
        let fp = eval(&mut y, &[(i, h[i])]);
        let fm = eval(&mut y, &[(i, -h[i])]);
        m[(i, i)] = (fp - T::lit(2.0) * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&mut y, &[(i, h[i]), (j, h[j])]);
            let fpm = eval(&mut y, &[(i, h[i]), (j, -h[j])]);
            let fmp = eval(&mut y, &[(i, -h[i]), (j, h[j])]);
            let fmm = eval(&mut y, &[(i, -h[i]), (j, -h[j])]);
            let v = (fpp - fpm - fmp + fmm) / (T::lit(4.0) * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Hessian { matrix: m.symmetrized(), one_sided }
}

/// Raises every eigenvalue below `1e-8 · trace / p` to that floor.
/// Returns the (possibly) modified matrix and whether a repair happened.
pub fn pd_repair<T: Real>(g: &Matrix<T>) -> (Matrix<T>, bool) {
    let p = g.rows();
    if p == 0 {
        return (g.clone(), false);
    }
    let g = g.symmetrized();
    let (mut vals, vecs) = g.symmetric_eigen();
    let scale = vals.iter().map(|v| v.abs()).sum::<T>().max(g.trace().abs());
    let floor = T::lit(1e-8) * scale / T::lit(p as f64);
    let floor = if floor > T::zero() { floor } else { T::lit(1e-8) };
    if vals.iter().all(|&v| v >= floor) {
        return (g, false);
    }
    for v in vals.iter_mut() {
        *v = v.max(floor);
    }
    (Matrix::from_eigen(&vals, &vecs), true)
}

/// Rate matrix `A_n = diag((nΔ)^{-1/2} I_{p₁}, n^{-1/2} I_{p₂})`, returned as its diagonal.
pub fn rate_diagonal<T: Real>(p1: usize, p2: usize, n: usize, delta: T) -> Vec<T> {
    let nf = T::lit(n as f64);
    let a = (nf * delta).sqrt().recip();
    let b = nf.sqrt().recip();
    std::iter::repeat_n(a, p1).chain(std::iter::repeat_n(b, p2)).collect()
}

/// `A_n Ĝ A_n` for the diagonal rate matrix above.
pub fn scaled_curvature<T: Real>(g: &Matrix<T>, rates: &[T]) -> Matrix<T> {
    let mut out = g.clone();
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            out[(i, j)] = g[(i, j)] * rates[i] * rates[j];
        }
    }
    out
}
