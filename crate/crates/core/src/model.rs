//! Parametric diffusion families `dX = b(X, α) dt + σ(X, β) dW`.
//!
//! A model is a pair of closures plus metadata (dimensions, parameter names,
//! box bounds). Two families ship built in: the affine drift / affine diagonal
//! diffusion family (`linear3d`, or `linear<d>d` for other dimensions) and the
//! two-dimensional trigonometric model (`trig2d`).

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::simulate::SamplePath;

/// Drift closure: `(x, alpha, out)`, writes `b(x, α)` into `out` (length d).
pub type DriftFn<T> = dyn Fn(&[T], &[T], &mut [T]) + Send + Sync;
/// Diffusion closure: `(x, beta, out)`, writes `σ(x, β)` row-major (d × r).
pub type DiffusionFn<T> = dyn Fn(&[T], &[T], &mut [T]) + Send + Sync;
/// Cheap data-driven starting values for quasi-likelihood fitting.
pub type PilotFn<T> = dyn Fn(&SamplePath<T>) -> Vec<ParamVector<T>> + Send + Sync;

/// Closed box `[lower, upper]` in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> Bounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bounds length mismatch");
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u), "empty box");
        Self { lower, upper }
    }

    pub fn uniform(dim: usize, lo: T, hi: T) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::uniform(dim, T::neg_infinity(), T::infinity())
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, v: &[T]) -> bool {
        v.len() == self.len() && v.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| x >= l && x <= u)
    }

    pub fn project(&self, v: &mut [T]) {
        for (x, (&l, &u)) in v.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.max(l).min(u);
        }
    }

    pub fn midpoint(&self) -> Vec<T> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                if l.is_finite() && u.is_finite() {
                    (l + u) * T::lit(0.5)
                } else if l.is_finite() {
                    l
                } else if u.is_finite() {
                    u
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// Concatenation of two boxes.
    pub fn chain(&self, other: &Self) -> Self {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        Self { lower, upper }
    }
}

/// Grouped parameter θ = (α, β): drift block first, diffusion block second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(alpha: Vec<T>, beta: Vec<T>) -> Self {
        Self { alpha, beta }
    }

    pub fn zeros(p1: usize, p2: usize) -> Self {
        Self { alpha: vec![T::zero(); p1], beta: vec![T::zero(); p2] }
    }

    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_slice(p1: usize, v: &[T]) -> Self {
        Self { alpha: v[..p1].to_vec(), beta: v[p1..].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamVector<U> {
        ParamVector {
            alpha: self.alpha.iter().map(|x| U::lit(x.as_f64())).collect(),
            beta: self.beta.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// Known zero pattern of a true parameter (0-based indices per group).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    pub zero_alpha: BTreeSet<usize>,
    pub zero_beta: BTreeSet<usize>,
}

impl SparsityMask {
    /// Reads the zero pattern off a parameter vector.
    pub fn from_truth<T: Real>(theta: &ParamVector<T>) -> Self {
        let zeros = |v: &[T]| v.iter().enumerate().filter(|(_, x)| x.is_zero()).map(|(i, _)| i).collect();
        Self { zero_alpha: zeros(&theta.alpha), zero_beta: zeros(&theta.beta) }
    }

    /// Number of nonzero coordinates (p₁⁰, p₂⁰).
    pub fn nonzero_counts(&self, p1: usize, p2: usize) -> (usize, usize) {
        (p1 - self.zero_alpha.len(), p2 - self.zero_beta.len())
    }
}

/// A parametric SDE family with box bounds on both parameter groups.
#[derive(Clone)]
pub struct SdeModel<T> {
    name: String,
    dim_state: usize,
    dim_noise: usize,
    alpha_names: Vec<String>,
    beta_names: Vec<String>,
    drift: Arc<DriftFn<T>>,
    diffusion: Arc<DiffusionFn<T>>,
    bounds_alpha: Bounds<T>,
    bounds_beta: Bounds<T>,
    diagonal_diffusion: bool,
    default_init: Option<ParamVector<T>>,
    pilot: Option<Arc<PilotFn<T>>>,
}

impl<T> fmt::Debug for SdeModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("p1", &self.alpha_names.len())
            .field("p2", &self.beta_names.len())
            .finish()
    }
}

impl<T: Real> SdeModel<T> {
    /// Creates a model with unbounded parameter boxes and generic names.
    pub fn new<D, S>(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        p1: usize,
        p2: usize,
        drift: D,
        diffusion: S,
    ) -> Self
    where
        D: Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
        S: Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim_state,
            dim_noise,
            alpha_names: (1..=p1).map(|i| format!("alpha{i}")).collect(),
            beta_names: (1..=p2).map(|i| format!("beta{i}")).collect(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            bounds_alpha: Bounds::unbounded(p1),
            bounds_beta: Bounds::unbounded(p2),
            diagonal_diffusion: false,
            default_init: None,
            pilot: None,
        }
    }

    pub fn with_bounds(mut self, alpha: Bounds<T>, beta: Bounds<T>) -> Self {
        assert_eq!(alpha.len(), self.p1(), "alpha bounds length");
        assert_eq!(beta.len(), self.p2(), "beta bounds length");
        self.bounds_alpha = alpha;
        self.bounds_beta = beta;
        self
    }

    pub fn with_names(mut self, alpha: Vec<String>, beta: Vec<String>) -> Self {
        assert_eq!(alpha.len(), self.p1());
        assert_eq!(beta.len(), self.p2());
        self.alpha_names = alpha;
        self.beta_names = beta;
        self
    }

    /// Declares that σ(x, β) is diagonal (d = r) for every input.
    pub fn with_diagonal_diffusion(mut self) -> Self {
        assert_eq!(self.dim_state, self.dim_noise, "diagonal diffusion needs d = r");
        self.diagonal_diffusion = true;
        self
    }

    pub fn with_default_init(mut self, init: ParamVector<T>) -> Self {
        self.default_init = Some(init);
        self
    }

    pub fn with_pilot<P>(mut self, pilot: P) -> Self
    where
        P: Fn(&SamplePath<T>) -> Vec<ParamVector<T>> + Send + Sync + 'static,
    {
        self.pilot = Some(Arc::new(pilot));
        self
    }

    /// Finite pilot estimates for `path`, projected into the bounds, followed
    /// by [`Self::default_init`].
    pub fn starting_points(&self, path: &SamplePath<T>) -> Vec<ParamVector<T>> {
        let mut out: Vec<ParamVector<T>> = self
            .pilot
            .as_ref()
            .map(|f| f(path))
            .unwrap_or_default()
            .into_iter()
            .filter(|p| p.is_finite() && p.alpha.len() == self.p1() && p.beta.len() == self.p2())
            .map(|mut p| {
                self.bounds_alpha.project(&mut p.alpha);
                self.bounds_beta.project(&mut p.beta);
                p
            })
            .collect();
        let fallback = self.default_init();
        if !out.contains(&fallback) {
            out.push(fallback);
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn p1(&self) -> usize {
        self.alpha_names.len()
    }

    pub fn p2(&self) -> usize {
        self.beta_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.p1() + self.p2()
    }

    pub fn alpha_names(&self) -> &[String] {
        &self.alpha_names
    }

    pub fn beta_names(&self) -> &[String] {
        &self.beta_names
    }

    pub fn param_names(&self) -> Vec<String> {
        self.alpha_names.iter().chain(&self.beta_names).cloned().collect()
    }

    pub fn bounds_alpha(&self) -> &Bounds<T> {
        &self.bounds_alpha
    }

    pub fn bounds_beta(&self) -> &Bounds<T> {
        &self.bounds_beta
    }

    /// Bounds of the concatenated parameter (α, β).
    pub fn bounds(&self) -> Bounds<T> {
        self.bounds_alpha.chain(&self.bounds_beta)
    }

    pub fn is_diagonal_diffusion(&self) -> bool {
        self.diagonal_diffusion
    }

    /// Starting point for quasi-likelihood fitting: the model-provided one,
    /// or the midpoint of the bounds.
    pub fn default_init(&self) -> ParamVector<T> {
        self.default_init
            .clone()
            .unwrap_or_else(|| ParamVector { alpha: self.bounds_alpha.midpoint(), beta: self.bounds_beta.midpoint() })
    }

    pub fn in_bounds(&self, theta: &ParamVector<T>) -> bool {
        self.bounds_alpha.contains(&theta.alpha) && self.bounds_beta.contains(&theta.beta)
    }

    /// Writes `b(x, α)` into `out` without allocating or checking finiteness.
    #[inline]
    pub fn drift_into(&self, x: &[T], alpha: &[T], out: &mut [T]) {
        (self.drift)(x, alpha, out)
    }

    /// Writes `σ(x, β)` (row-major d × r) into `out` without checks.
    #[inline]
    pub fn diffusion_into(&self, x: &[T], beta: &[T], out: &mut [T]) {
        (self.diffusion)(x, beta, out)
    }

    /// `b(x, α)`.
    pub fn drift_eval(&self, x: &[T], alpha: &[T]) -> Result<Vec<T>> {
        self.check_dims(x, alpha.len(), self.p1())?;
        let mut out = vec![T::zero(); self.dim_state];
        self.drift_into(x, alpha, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(eval_error("drift", x, alpha))
        }
    }

    /// `σ(x, β)` as a d × r matrix.
    pub fn sigma_eval(&self, x: &[T], beta: &[T]) -> Result<Matrix<T>> {
        self.check_dims(x, beta.len(), self.p2())?;
        let mut out = vec![T::zero(); self.dim_state * self.dim_noise];
        self.diffusion_into(x, beta, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(Matrix::from_row_major(self.dim_state, self.dim_noise, out))
        } else {
            Err(eval_error("diffusion", x, beta))
        }
    }

    /// `Σ(x, β) = σσᵀ(x, β)`.
    pub fn sigma_sq(&self, x: &[T], beta: &[T]) -> Result<Matrix<T>> {
        Ok(self.sigma_eval(x, beta)?.gram())
    }

    fn check_dims(&self, x: &[T], got: usize, want: usize) -> Result<()> {
        if x.len() != self.dim_state {
            return Err(Error::InvalidArgument(format!(
                "state has length {}, model {} expects {}",
                x.len(),
                self.name,
                self.dim_state
            )));
        }
        if got != want {
            return Err(Error::InvalidArgument(format!(
                "parameter block has length {got}, model {} expects {want}",
                self.name
            )));
        }
        Ok(())
    }
}

fn eval_error<T: Real>(which: &'static str, x: &[T], params: &[T]) -> Error {
    Error::Evaluation {
        which,
        x: x.iter().map(|v| v.as_f64()).collect(),
        params: params.iter().map(|v| v.as_f64()).collect(),
    }
}

/// Affine model in dimension `d`:
/// `dX = (α₀ + A X) dt + diag(β₀ + B X) dW`.
///
/// Parameters are stored row by row: component `i` owns
/// `(α_{i0}, α_{i1}, …, α_{id})` and likewise for β. Every coordinate is
/// bounded by `[-10, 10]`. With `truncate = Some(M)` each diffusion entry
/// whose magnitude reaches `M` is replaced by `M`.
pub fn linear<T: Real>(d: usize, truncate: Option<T>) -> SdeModel<T> {
    assert!(d >= 1, "dimension must be positive");
    let p = d * (d + 1);
    let affine = move |x: &[T], coef: &[T], i: usize| {
        let row = &coef[i * (d + 1)..(i + 1) * (d + 1)];
        let mut s = row[0];
        for j in 0..d {
            s = s + row[j + 1] * x[j];
        }
        s
    };
    let drift = move |x: &[T], alpha: &[T], out: &mut [T]| {
        for (i, o) in out.iter_mut().enumerate().take(d) {
            *o = affine(x, alpha, i);
        }
    };
    let diffusion = move |x: &[T], beta: &[T], out: &mut [T]| {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for i in 0..d {
            let s = affine(x, beta, i);
            out[i * d + i] = match truncate {
                Some(m) if s.abs() >= m => m,
                _ => s,
            };
        }
    };
    let names = |prefix: &str| -> Vec<String> {
        (1..=d).flat_map(|i| (0..=d).map(move |j| (i, j))).map(|(i, j)| format!("{prefix}{i}{j}")).collect()
    };
    // Positive diffusion intercepts select the branch with σ > 0; the
    // Gaussian contrast is invariant under (β₀, B) → −(β₀, B).
    let mut init = ParamVector::zeros(p, p);
    for i in 0..d {
        init.beta[i * (d + 1)] = T::one();
    }
    let ten = T::lit(10.0);
    SdeModel::new(format!("linear{d}d"), d, d, p, p, drift, diffusion)
        .with_names(names("alpha"), names("beta"))
        .with_bounds(Bounds::uniform(p, -ten, ten), Bounds::uniform(p, -ten, ten))
        .with_diagonal_diffusion()
        .with_default_init(init)
        .with_pilot(move |path| linear_pilot(d, path))
}

/// Regression estimates for the affine model. The drift comes from least
/// squares of `ΔX_i / Δ` on `(1, X)`. For the diffusion, with drift
/// residuals `r`, two candidates are returned: a linear fit of
/// `√(π/2) |r_i| / √Δ` (which targets `|σ|`), and a quadratic fit of
/// `r_i² / Δ` (which targets `σ² = (β₀ + β·x)²`) factored through its
/// constant and linear terms. The second stays correct when σ changes sign
/// along the path.
fn linear_pilot<T: Real>(d: usize, path: &SamplePath<T>) -> Vec<ParamVector<T>> {
    let n = path.n();
    let k = d + 1;
    let kq = k + d * (d + 1) / 2;
    if path.dim() != d || n <= kq {
        return Vec::new();
    }
    let features = |x: &[T], out: &mut Vec<T>| {
        out.clear();
        out.push(T::one());
        out.extend_from_slice(x);
        for a in 0..d {
            for b in a..d {
                out.push(x[a] * x[b]);
            }
        }
    };
    let mut gram = Matrix::zeros(kq, kq);
    let mut f = Vec::with_capacity(kq);
    for i in 0..n {
        features(path.state(i), &mut f);
        for a in 0..kq {
            for b in 0..=a {
                gram[(a, b)] = gram[(a, b)] + f[a] * f[b];
            }
        }
    }
    for a in 0..kq {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let lin: Vec<usize> = (0..k).collect();
    let gram_lin = gram.submatrix(&lin);
    let delta = path.delta;
    let abs_scale = T::lit((std::f64::consts::PI / 2.0).sqrt()) / delta.sqrt();
    let mut alpha = Vec::with_capacity(d * k);
    let mut beta_abs = Vec::with_capacity(d * k);
    let mut beta_sq = Vec::with_capacity(d * k);
    for c in 0..d {
        let mut xty = vec![T::zero(); k];
        for i in 0..n {
            features(path.state(i), &mut f);
            let y = (path.state(i + 1)[c] - path.state(i)[c]) / delta;
            for a in 0..k {
                xty[a] = xty[a] + f[a] * y;
            }
        }
        let Some(a_c) = gram_lin.solve_spd(&xty) else { return Vec::new() };
        let mut xtz = vec![T::zero(); k];
        let mut xtq = vec![T::zero(); kq];
        for i in 0..n {
            features(path.state(i), &mut f);
            let fitted: T = f[..k].iter().zip(&a_c).map(|(&u, &v)| u * v).sum();
            let r = path.state(i + 1)[c] - path.state(i)[c] - delta * fitted;
            for a in 0..k {
                xtz[a] = xtz[a] + f[a] * r.abs() * abs_scale;
            }
            for a in 0..kq {
                xtq[a] = xtq[a] + f[a] * r * r / delta;
            }
        }
        let Some(b_abs) = gram_lin.solve_spd(&xtz) else { return Vec::new() };
        beta_abs.extend(b_abs);
        match gram.solve_spd(&xtq) {
            Some(q) if q[0] > T::zero() => {
                let b0 = q[0].sqrt();
                beta_sq.push(b0);
                beta_sq.extend(q[1..k].iter().map(|&l| l / (T::lit(2.0) * b0)));
            }
            _ => beta_sq.extend(beta_abs[c * k..(c + 1) * k].iter().copied()),
        }
        alpha.extend(a_c);
    }
    vec![ParamVector::new(alpha.clone(), beta_sq), ParamVector::new(alpha, beta_abs)]
}

/// The three-dimensional affine model with the Granger-type sparsity pattern.
pub fn linear3d<T: Real>(truncate: Option<T>) -> SdeModel<T> {
    let m = linear(3, truncate);
    SdeModel { name: "linear3d".into(), ..m }
}

/// True parameter of the three-dimensional affine study.
///
/// Nonzero drift: α₁₀ = α₁₁ = α₂₀ = α₂₂ = −1.5, α₁₂ = α₁₃ = α₂₃ = 0.75,
/// α₃₀ = 1.5. Nonzero diffusion: β₁₀ = β₂₀ = β₃₀ = 1.5,
/// β₁₂ = β₁₃ = β₂₃ = β₃₃ = 0.4. Everything else is zero.
pub fn linear3d_truth<T: Real>() -> ParamVector<T> {
    let a = [-1.5, -1.5, 0.75, 0.75, -1.5, 0.0, -1.5, 0.75, 1.5, 0.0, 0.0, 0.0];
    let b = [1.5, 0.0, 0.4, 0.4, 1.5, 0.0, 0.0, 0.4, 1.5, 0.0, 0.0, 0.4];
    ParamVector::new(a.iter().map(|&v| T::lit(v)).collect(), b.iter().map(|&v| T::lit(v)).collect())
}

/// Two-dimensional model with cubic/trigonometric drift and a diffusion
/// matrix whose off-diagonal entries are fixed at one:
///
/// ```text
/// b(x, α) = (−α₁₁ x₁³ + α₁₂ (sin x₂ + 2),  α₂₁ (cos x₁ + 2) − α₂₂ x₂)
/// σ(x, β) = [[β₁₁, 1], [1, β₂₂]]
/// ```
///
/// α = (α₁₁, α₁₂, α₂₁, α₂₂) ∈ [0, 10]⁴, β = (β₁₁, β₂₂) ∈ [0, 10]².
pub fn trig2d<T: Real>() -> SdeModel<T> {
    let two = T::lit(2.0);
    let drift = move |x: &[T], a: &[T], out: &mut [T]| {
        out[0] = -a[0] * x[0] * x[0] * x[0] + a[1] * (x[1].sin() + two);
        out[1] = a[2] * (x[0].cos() + two) - a[3] * x[1];
    };
    let diffusion = |_x: &[T], b: &[T], out: &mut [T]| {
        out[0] = b[0];
        out[1] = T::one();
        out[2] = T::one();
        out[3] = b[1];
    };
    let ten = T::lit(10.0);
    SdeModel::new("trig2d", 2, 2, 4, 2, drift, diffusion)
        .with_names(
            ["alpha11", "alpha12", "alpha21", "alpha22"].map(String::from).to_vec(),
            ["beta11", "beta22"].map(String::from).to_vec(),
        )
        .with_bounds(Bounds::uniform(4, T::zero(), ten), Bounds::uniform(2, T::zero(), ten))
}

/// True parameter of the joint-versus-disjoint comparison: α = (1, 0, 0, 1), β = (0, 0).
pub fn trig2d_truth<T: Real>() -> ParamVector<T> {
    let (o, z) = (T::one(), T::zero());
    ParamVector::new(vec![o, z, z, o], vec![z, z])
}

/// Looks up a built-in model by id: `linear3d`, `trig2d` or `linear<d>d`.
pub fn builtin<T: Real>(id: &str, truncate_sigma: Option<T>) -> Option<SdeModel<T>> {
    match id {
        "linear3d" => Some(linear3d(truncate_sigma)),
        "trig2d" => Some(trig2d()),
        _ => {
            let d: usize = id.strip_prefix("linear")?.strip_suffix('d')?.parse().ok()?;
            (1..=9).contains(&d).then(|| linear(d, truncate_sigma))
        }
    }
}

/// Data-generating parameter shipped with a built-in model, if it has one.
pub fn builtin_truth<T: Real>(id: &str) -> Option<ParamVector<T>> {
    match id {
        "linear3d" => Some(linear3d_truth()),
        "trig2d" => Some(trig2d_truth()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn linear_drift_at_origin_is_intercept() {
        let m = linear3d::<f64>(None);
        let mut alpha = vec![0.0; 12];
        alpha[0] = -1.5;
        alpha[4] = -1.5;
        alpha[8] = 1.5;
        assert_eq!(m.drift_eval(&[0.0, 0.0, 0.0], &alpha).unwrap(), vec![-1.5, -1.5, 1.5]);
    }

    #[test]
    fn linear_drift_all_ones_matrix() {
        let m = linear3d::<f64>(None);
        let mut alpha = vec![1.0; 12];
        for i in 0..3 {
            alpha[i * 4] = 0.0;
        }
        assert_eq!(m.drift_eval(&[1.0, 1.0, 1.0], &alpha).unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn trig_drift_at_zero_state() {
        let m = trig2d::<f64>();
        let b = m.drift_eval(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_sigma_examples() {
        let m = linear3d::<f64>(None);
        let mut beta = vec![0.0; 12];
        beta[0] = 1.5;
        beta[4] = 1.5;
        beta[8] = 1.5;
        let s = m.sigma_eval(&[0.0; 3], &beta).unwrap();
        assert_eq!(s, Matrix::from_diag(&[1.5, 1.5, 1.5]));

        let mut beta = vec![0.0; 12];
        beta[..4].copy_from_slice(&[1.5, 0.0, 0.4, 0.4]);
        let s = m.sigma_eval(&[1.0, 0.0, 0.0], &beta).unwrap();
        assert!(close(s[(0, 0)], 1.5));
    }

    #[test]
    fn trig_sigma_fixed_off_diagonals() {
        let m = trig2d::<f64>();
        let s = m.sigma_eval(&[3.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        assert_eq!(m.sigma_sq(&[3.0, -1.0], &[0.0, 0.0]).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn sigma_sq_of_diagonal() {
        let diag = SdeModel::<f64>::new(
            "diag",
            3,
            3,
            0,
            3,
            |_, _, o: &mut [f64]| o.fill(0.0),
            |_, b: &[f64], o: &mut [f64]| {
                o.fill(0.0);
                for i in 0..3 {
                    o[i * 3 + i] = b[i];
                }
            },
        );
        let s = diag.sigma_sq(&[0.0; 3], &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s, Matrix::from_diag(&[4.0, 9.0, 16.0]));
    }

    #[test]
    fn truth_evaluates_to_stated_affine_forms() {
        let m = linear3d::<f64>(None);
        let t = linear3d_truth::<f64>();
        let x = [0.3, -1.2, 2.5];
        let b = m.drift_eval(&x, &t.alpha).unwrap();
        assert!(close(b[0], -1.5 - 1.5 * x[0] + 0.75 * x[1] + 0.75 * x[2]));
        assert!(close(b[1], -1.5 - 1.5 * x[1] + 0.75 * x[2]));
        assert!(close(b[2], 1.5));
        let s = m.sigma_eval(&x, &t.beta).unwrap();
        assert!(close(s[(0, 0)], 1.5 + 0.4 * x[1] + 0.4 * x[2]));
        assert!(close(s[(1, 1)], 1.5 + 0.4 * x[2]));
        assert!(close(s[(2, 2)], 1.5 + 0.4 * x[2]));
        let mask = SparsityMask::from_truth(&t);
        assert_eq!(mask.zero_alpha.iter().copied().collect::<Vec<_>>(), vec![5, 9, 10, 11]);
        assert_eq!(mask.zero_beta.iter().copied().collect::<Vec<_>>(), vec![1, 5, 6, 9, 10]);
        assert_eq!(m.alpha_names()[5], "alpha21");
        assert_eq!(m.beta_names()[10], "beta32");
    }

    #[test]
    fn truncation_caps_diffusion() {
        let m = linear3d::<f64>(Some(5.0));
        let mut beta = vec![0.0; 12];
        beta[0] = 7.0;
        beta[4] = -9.0;
        beta[8] = 1.0;
        let s = m.sigma_eval(&[0.0; 3], &beta).unwrap();
        assert_eq!(s.diag(), vec![5.0, 5.0, 1.0]);
    }

    #[test]
    fn non_finite_drift_is_reported() {
        let m = SdeModel::<f64>::new("bad", 1, 1, 1, 1, |x, a, o| o[0] = a[0] / x[0], |_, b, o| o[0] = b[0]);
        match m.drift_eval(&[0.0], &[1.0]) {
            Err(Error::Evaluation { which: "drift", x, .. }) => assert_eq!(x, vec![0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(builtin::<f64>("linear3d", None).unwrap().n_params(), 24);
        assert_eq!(builtin::<f64>("linear4d", None).unwrap().n_params(), 40);
        assert_eq!(builtin::<f64>("trig2d", None).unwrap().n_params(), 6);
        assert!(builtin::<f64>("custom", None).is_none());
    }
}
