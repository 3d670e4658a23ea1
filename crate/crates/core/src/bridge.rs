//! Adaptive Bridge-type estimator: least-squares approximation of the
//! contrast around the initial estimator plus one weighted ℓ^q penalty per
//! parameter group,
//!
//! ```text
//! F(θ) = (θ − θ̃)ᵀ Ĝ (θ − θ̃) + Σ_j λ_j |α_j|^{q₁} + Σ_k γ_k |β_k|^{q₂},
//! ```
//!
//! minimized by cyclic coordinate descent. Every one-dimensional subproblem
//! `a t² + b t + w |t|^q` is solved globally (closed-form soft threshold for
//! `q = 1`, safeguarded Newton on the convex branch of the derivative for
//! `q < 1`), so coordinates land on exact zeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Bounds, ParamVector};
use crate::scalar::{max_abs, Real};

/// Tuning vector ψ = (q₁, q₂, λ₀, γ₀, δ₁, δ₂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig<T> {
    pub q1: T,
    pub q2: T,
    pub lambda0: T,
    pub gamma0: T,
    pub delta1: T,
    pub delta2: T,
}

impl<T: Real> PenaltyConfig<T> {
    /// Validated constructor.
    pub fn new(q1: T, q2: T, lambda0: T, gamma0: T, delta1: T, delta2: T) -> Result<Self> {
        let cfg = Self { q1, q2, lambda0, gamma0, delta1, delta2 };
        let problems = cfg.problems();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }

    /// ψ₀ = (0.9, 0.9, 2, 2, 1, 1), the starting point of the tuning study.
    pub fn reference() -> Self {
        let l = T::lit;
        Self { q1: l(0.9), q2: l(0.9), lambda0: l(2.0), gamma0: l(2.0), delta1: l(1.0), delta2: l(1.0) }
    }

    /// Same amounts with both exponents set to one (adaptive LASSO).
    pub fn as_lasso(&self) -> Self {
        Self { q1: T::one(), q2: T::one(), ..*self }
    }

    pub fn to_array(&self) -> [T; 6] {
        [self.q1, self.q2, self.lambda0, self.gamma0, self.delta1, self.delta2]
    }

    /// Unchecked inverse of [`Self::to_array`].
    pub fn from_array(v: &[T]) -> Self {
        Self { q1: v[0], q2: v[1], lambda0: v[2], gamma0: v[3], delta1: v[4], delta2: v[5] }
    }

    /// Every violated constraint, as human-readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, q) in [("q1", self.q1), ("q2", self.q2)] {
            if !(q > T::zero() && q <= T::one()) {
                out.push(format!("{name} must lie in (0,1], got {q}"));
            }
        }
        for (name, v) in [("lambda0", self.lambda0), ("gamma0", self.gamma0)] {
            if !(v >= T::zero() && v.is_finite()) {
                out.push(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        for (dname, d, qname, q) in [("delta1", self.delta1, "q1", self.q1), ("delta2", self.delta2, "q2", self.q2)] {
            if !d.is_finite() || !(d > T::one() - q) {
                out.push(format!(
                    "{dname} must satisfy {dname} > 1 - {qname} (got {dname} = {d}, 1 - {qname} = {})",
                    T::one() - q
                ));
            }
        }
        out
    }
}

/// Per-coordinate penalty amounts λ_j (drift) and γ_k (diffusion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector<T> {
    pub w_alpha: Vec<T>,
    pub w_beta: Vec<T>,
}

/// Guard for initial estimates at (or numerically at) zero.
#[derive(Debug, Clone, Copy)]
pub struct WeightRule<T> {
    /// `|θ̃_j|` below this counts as zero.
    pub floor: T,
    /// Weight assigned to such coordinates.
    pub cap: T,
}

impl<T: Real> Default for WeightRule<T> {
    fn default() -> Self {
        Self { floor: T::lit(1e-12), cap: T::lit(1e12) }
    }
}

/// `λ_j = λ₀ / |α̃_j|^{δ₁}`, `γ_k = γ₀ / |β̃_k|^{δ₂}` with the default zero guard.
pub fn adaptive_weights<T: Real>(theta_init: &ParamVector<T>, cfg: &PenaltyConfig<T>) -> WeightVector<T> {
    adaptive_weights_with(theta_init, cfg, &WeightRule::default())
}

pub fn adaptive_weights_with<T: Real>(
    theta_init: &ParamVector<T>,
    cfg: &PenaltyConfig<T>,
    rule: &WeightRule<T>,
) -> WeightVector<T> {
    let weigh = |v: &[T], amount: T, exponent: T| -> Vec<T> {
        v.iter()
            .map(|&x| {
                if amount == T::zero() {
                    T::zero()
                } else if x.abs() < rule.floor {
                    rule.cap
                } else {
                    (amount / x.abs().powf(exponent)).min(rule.cap)
                }
            })
            .collect()
    };
    WeightVector {
        w_alpha: weigh(&theta_init.alpha, cfg.lambda0, cfg.delta1),
        w_beta: weigh(&theta_init.beta, cfg.gamma0, cfg.delta2),
    }
}

/// Penalized least-squares objective F(θ).
pub fn bridge_objective<T: Real>(
    theta: &ParamVector<T>,
    theta_init: &ParamVector<T>,
    g: &Matrix<T>,
    w: &WeightVector<T>,
    cfg: &PenaltyConfig<T>,
) -> T {
    let problem = Problem::joint(theta_init, g, w, cfg, None);
    problem.objective(&theta.to_vec())
}

/// Outcome of a penalized fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeResult<T> {
    pub theta_hat: ParamVector<T>,
    pub objective: T,
    /// Indices (within the drift group) of nonzero coordinates.
    pub active_alpha: Vec<usize>,
    pub active_beta: Vec<usize>,
    pub restarts_used: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// A one-dimensional subproblem fell back to a grid scan.
    pub grid_fallback: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BridgeOptions<T> {
    pub max_sweeps: usize,
    /// Stop when the largest coordinate move is below `tol · (1 + ‖θ‖∞)`.
    pub tol: T,
}

impl<T: Real> Default for BridgeOptions<T> {
    fn default() -> Self {
        Self { max_sweeps: 500, tol: T::lit(1e-8) }
    }
}

/// Adaptive Bridge estimate with the cross-group curvature retained.
pub fn bridge_fit<T: Real>(
    theta_init: &ParamVector<T>,
    g: &Matrix<T>,
    w: &WeightVector<T>,
    cfg: &PenaltyConfig<T>,
    bounds: &Bounds<T>,
) -> BridgeResult<T> {
    bridge_fit_with(theta_init, g, w, cfg, bounds, &BridgeOptions::default())
}

pub fn bridge_fit_with<T: Real>(
    theta_init: &ParamVector<T>,
    g: &Matrix<T>,
    w: &WeightVector<T>,
    cfg: &PenaltyConfig<T>,
    bounds: &Bounds<T>,
    opts: &BridgeOptions<T>,
) -> BridgeResult<T> {
    let p1 = theta_init.alpha.len();
    let problem = Problem::joint(theta_init, g, w, cfg, Some(bounds));
    let fit = problem.solve(opts);
    let theta_hat = ParamVector::from_slice(p1, &fit.x);
    BridgeResult {
        active_alpha: nonzero(&theta_hat.alpha),
        active_beta: nonzero(&theta_hat.beta),
        theta_hat,
        objective: fit.objective,
        restarts_used: fit.starts,
        sweeps: fit.sweeps,
        converged: fit.converged,
        grid_fallback: fit.grid_fallback,
    }
}

/// Drift and diffusion groups penalized separately, each against its own
/// curvature block; cross-group curvature is discarded.
#[allow(clippy::too_many_arguments)]
pub fn disjoint_fit<T: Real>(
    alpha_init: &[T],
    beta_init: &[T],
    g1: &Matrix<T>,
    g2: &Matrix<T>,
    w: &WeightVector<T>,
    cfg: &PenaltyConfig<T>,
    bounds_alpha: &Bounds<T>,
    bounds_beta: &Bounds<T>,
) -> BridgeResult<T> {
    let opts = BridgeOptions::default();
    let a = Problem::group(alpha_init, g1, &w.w_alpha, cfg.q1, bounds_alpha).solve(&opts);
    let b = Problem::group(beta_init, g2, &w.w_beta, cfg.q2, bounds_beta).solve(&opts);
    let theta_hat = ParamVector::new(a.x, b.x);
    BridgeResult {
        active_alpha: nonzero(&theta_hat.alpha),
        active_beta: nonzero(&theta_hat.beta),
        theta_hat,
        objective: a.objective + b.objective,
        restarts_used: a.starts + b.starts,
        sweeps: a.sweeps.max(b.sweeps),
        converged: a.converged && b.converged,
        grid_fallback: a.grid_fallback || b.grid_fallback,
    }
}

/// Splits Ĝ into its drift (p₁ × p₁) and diffusion (p₂ × p₂) diagonal blocks.
pub fn diagonal_blocks<T: Real>(g: &Matrix<T>, p1: usize) -> (Matrix<T>, Matrix<T>) {
    let p = g.rows();
    let a: Vec<usize> = (0..p1).collect();
    let b: Vec<usize> = (p1..p).collect();
    (g.submatrix(&a), g.submatrix(&b))
}

/// Sets coordinates with `|θ_j| < tol` to exactly zero.
pub fn apply_zero_tol<T: Real>(theta: &ParamVector<T>, tol: T) -> ParamVector<T> {
    let cut = |v: &[T]| v.iter().map(|&x| if x.abs() < tol { T::zero() } else { x }).collect();
    ParamVector::new(cut(&theta.alpha), cut(&theta.beta))
}

fn nonzero<T: Real>(v: &[T]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, x)| !x.is_zero()).map(|(i, _)| i).collect()
}

/// Finite-sample magnitudes of the rate conditions on the penalty amounts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport<T> {
    /// `λ₀ / √(nΔ)`, should vanish.
    pub drift_vanishing: T,
    /// `(nΔ)^{(δ₁−2+q₁)/2} λ₀`, should diverge.
    pub drift_diverging: T,
    /// `γ₀ / √n`, should vanish.
    pub diffusion_vanishing: T,
    /// `n^{(δ₂−2+q₂)/2} γ₀`, should diverge.
    pub diffusion_diverging: T,
}

pub fn rate_condition_check<T: Real>(cfg: &PenaltyConfig<T>, n: usize, delta: T) -> RateReport<T> {
    let nf = T::lit(n as f64);
    let t = nf * delta;
    let two = T::lit(2.0);
    RateReport {
        drift_vanishing: cfg.lambda0 / t.sqrt(),
        drift_diverging: t.powf((cfg.delta1 - two + cfg.q1) / two) * cfg.lambda0,
        diffusion_vanishing: cfg.gamma0 / nf.sqrt(),
        diffusion_diverging: nf.powf((cfg.delta2 - two + cfg.q2) / two) * cfg.gamma0,
    }
}

/// `(x − c)ᵀ G (x − c) + Σ w_j |x_j|^{q_j}` over a box.
struct Problem<'a, T> {
    g: &'a Matrix<T>,
    center: Vec<T>,
    weights: Vec<T>,
    q: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
}

struct Solution<T> {
    x: Vec<T>,
    objective: T,
    starts: usize,
    sweeps: usize,
    converged: bool,
    grid_fallback: bool,
}

impl<'a, T: Real> Problem<'a, T> {
    fn joint(
        theta_init: &ParamVector<T>,
        g: &'a Matrix<T>,
        w: &WeightVector<T>,
        cfg: &PenaltyConfig<T>,
        bounds: Option<&Bounds<T>>,
    ) -> Self {
        let p1 = theta_init.alpha.len();
        let p = theta_init.len();
        let bounds = bounds.cloned().unwrap_or_else(|| Bounds::unbounded(p));
        let mut weights = w.w_alpha.clone();
        weights.extend_from_slice(&w.w_beta);
        let q = (0..p).map(|j| if j < p1 { cfg.q1 } else { cfg.q2 }).collect();
        Self { g, center: theta_init.to_vec(), weights, q, lower: bounds.lower, upper: bounds.upper }
    }

    fn group(init: &[T], g: &'a Matrix<T>, w: &[T], q: T, bounds: &Bounds<T>) -> Self {
        Self {
            g,
            center: init.to_vec(),
            weights: w.to_vec(),
            q: vec![q; init.len()],
            lower: bounds.lower.clone(),
            upper: bounds.upper.clone(),
        }
    }

    fn objective(&self, x: &[T]) -> T {
        let d: Vec<T> = x.iter().zip(&self.center).map(|(&a, &b)| a - b).collect();
        let pen: T = x.iter().zip(self.weights.iter().zip(&self.q)).map(|(&v, (&w, &q))| penalty(w, v, q)).sum();
        self.g.quad_form(&d) + pen
    }

    fn project(&self, x: &mut [T]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(l).min(u);
        }
    }

    /// Multi-start from θ̃, from 0, and from the q = 1 solution.
    fn solve(&self, opts: &BridgeOptions<T>) -> Solution<T> {
        let p = self.center.len();
        let mut from_center = self.center.clone();
        self.project(&mut from_center);
        let mut from_zero = vec![T::zero(); p];
        self.project(&mut from_zero);

        let mut grid_fallback = false;
        let mut sweeps = 0;
        let mut starts = vec![from_center.clone(), from_zero];
        if self.q.iter().any(|&q| q < T::one()) {
            let convex = Problem { q: vec![T::one(); p], ..self.shallow() };
            let (x1, s1, _, fb) = convex.descend(from_center, opts);
            sweeps += s1;
            grid_fallback |= fb;
            starts.push(x1);
        }
        let mut best: Option<(Vec<T>, T, bool)> = None;
        let n_starts = starts.len();
        for start in starts {
            let (x, s, conv, fb) = self.descend(start, opts);
            sweeps += s;
            grid_fallback |= fb;
            let f = self.objective(&x);
            if best.as_ref().is_none_or(|(_, bf, _)| f < *bf) {
                best = Some((x, f, conv));
            }
        }
        let (x, objective, converged) = best.expect("at least one start");
        Solution { x, objective, starts: n_starts, sweeps, converged, grid_fallback }
    }

    fn shallow(&self) -> Self {
        Self {
            g: self.g,
            center: self.center.clone(),
            weights: self.weights.clone(),
            q: self.q.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    /// Cyclic coordinate descent from `x`. Returns (x, sweeps, converged, grid_fallback).
    fn descend(&self, mut x: Vec<T>, opts: &BridgeOptions<T>) -> (Vec<T>, usize, bool, bool) {
        let p = x.len();
        self.project(&mut x);
        // gd = G (x − c)
        let diff: Vec<T> = x.iter().zip(&self.center).map(|(&a, &b)| a - b).collect();
        let mut gd = self.g.mul_vec(&diff);
        let two = T::lit(2.0);
        let mut fallback = false;
        for sweep in 1..=opts.max_sweeps {
            let mut max_move = T::zero();
            for j in 0..p {
                let a = self.g[(j, j)];
                let other = gd[j] - a * (x[j] - self.center[j]);
                let b = two * (other - a * self.center[j]);
                let (t, fb) = solve_scalar(a, b, self.weights[j], self.q[j], self.lower[j], self.upper[j], x[j]);
                fallback |= fb;
                let step = t - x[j];
                if step != T::zero() {
                    for i in 0..p {
                        gd[i] = gd[i] + self.g[(i, j)] * step;
                    }
                    x[j] = t;
                    max_move = max_move.max(step.abs());
                }
            }
            if max_move <= opts.tol * (T::one() + max_abs(&x)) {
                return (x, sweep, true, fallback);
            }
        }
        (x, opts.max_sweeps, false, fallback)
    }
}

#[inline]
fn penalty<T: Real>(w: T, t: T, q: T) -> T {
    if w == T::zero() || t == T::zero() {
        T::zero()
    } else if q == T::one() {
        w * t.abs()
    } else {
        w * t.abs().powf(q)
    }
}

/// Global minimizer of `a t² + b t + w |t|^q` over `[lo, hi]`, `a > 0`.
///
/// Candidates: 0 (if admissible), the box ends, the current value, and the
/// clipped local minimum on the half-line of sign `−sign(b)`. Ties favour 0.
/// The second component reports whether the grid fallback was used.
pub fn solve_scalar<T: Real>(a: T, b: T, w: T, q: T, lo: T, hi: T, current: T) -> (T, bool) {
    let clip = |t: T| t.max(lo).min(hi);
    let value = |t: T| a * t * t + b * t + penalty(w, t, q);
    let two = T::lit(2.0);
    let mut candidates: Vec<T> = Vec::with_capacity(6);
    if lo <= T::zero() && hi >= T::zero() {
        candidates.push(T::zero());
    }
    candidates.push(clip(current));
    if lo.is_finite() {
        candidates.push(lo);
    }
    if hi.is_finite() {
        candidates.push(hi);
    }
    let mut fallback = false;
    if !(a > T::zero()) {
        // Degenerate curvature: only box ends and zero are meaningful.
    } else if w == T::zero() {
        candidates.push(clip(-b / (two * a)));
    } else if q == T::one() {
        // Soft threshold.
        let shrunk = (b.abs() - w).max(T::zero()) / (two * a);
        candidates.push(clip(-b.signum() * shrunk));
    } else if b != T::zero() {
        let s = -b.signum();
        let bb = b.abs();
        let one = T::one();
        // h(u) = a u² − |b| u + w u^q on u > 0; h' is convex with minimum at u_m.
        let dh = |u: T| two * a * u - bb + w * q * u.powf(q - one);
        let u_m = (w * q * (one - q) / (two * a)).powf(one / (two - q));
        let u_hi = bb / (two * a);
        if u_m.is_finite() && u_m < u_hi && dh(u_m) < T::zero() {
            match increasing_root(&dh, u_m, u_hi) {
                Some(u) => candidates.push(clip(s * u)),
                None => {
                    fallback = true;
                    let steps = 2000;
                    let mut best = (T::zero(), value(T::zero()));
                    for k in 0..=steps {
                        let u = u_m + (u_hi - u_m) * T::lit(k as f64 / steps as f64);
                        let t = clip(s * u);
                        let v = value(t);
                        if v < best.1 {
                            best = (t, v);
                        }
                    }
                    candidates.push(best.0);
                }
            }
        }
    }
    let mut best = candidates[0];
    let mut best_v = value(best);
    for &t in &candidates[1..] {
        let v = value(t);
        if v < best_v || (v == best_v && t.abs() < best.abs()) {
            best = t;
            best_v = v;
        }
    }
    (best, fallback)
}

/// Root of an increasing function on `[lo, hi]` with `f(lo) < 0 < f(hi)`,
/// by Newton steps safeguarded with bisection.
fn increasing_root<T: Real, F: Fn(T) -> T>(f: &F, lo: T, hi: T) -> Option<T> {
    let (mut lo, mut hi) = (lo, hi);
    if !(f(lo) < T::zero()) || !(f(hi) >= T::zero()) {
        return None;
    }
    let mut x = hi;
    for _ in 0..200 {
        let fx = f(x);
        if fx == T::zero() {
            return Some(x);
        }
        if fx < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= T::epsilon() * T::lit(4.0) * hi.abs().max(T::min_positive_value()) {
            return Some(hi);
        }
        // Secant-free Newton using a symmetric difference of the derivative.
        let h = (hi - lo) * T::lit(1e-6);
        let slope = (f(x + h) - f(x - h)) / (T::lit(2.0) * h);
        let newton = x - fx / slope;
        x = if newton.is_finite() && newton > lo && newton < hi { newton } else { (lo + hi) * T::lit(0.5) };
    }
    Some(hi)
}
