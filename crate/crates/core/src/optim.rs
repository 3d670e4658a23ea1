//! Box-constrained minimizers used for quasi-likelihood fitting and for the
//! tuning-parameter search: a projected Nelder–Mead simplex, a coordinate
//! parabola polish, and a projected BFGS driven by finite-difference
//! gradients.
//!
//! Objectives may return `+∞` (or NaN, treated as `+∞`) for rejected points.

use crate::model::Bounds;
use crate::scalar::{max_abs, Real};

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct OptimResult<T> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each accepted iteration.
    pub history: Vec<T>,
}

#[inline]
fn sanitize<T: Real>(v: T) -> T {
    if v.is_nan() {
        T::infinity()
    } else {
        v
    }
}

/// Stepwise Nelder–Mead simplex whose trial points are passed through a
/// projection (box clipping, or any idempotent map onto the feasible set).
pub struct NelderMead<'a, T, F> {
    f: F,
    project: &'a dyn Fn(&mut [T]),
    simplex: Vec<Vec<T>>,
    values: Vec<T>,
    pub evaluations: usize,
    pub iterations: usize,
}

impl<'a, T: Real, F: FnMut(&[T]) -> T> NelderMead<'a, T, F> {
    /// Builds the initial simplex `x0, x0 + s_j e_j`. When the forward vertex
    /// collapses onto `x0` under projection the step is taken backwards.
    pub fn new(mut f: F, x0: &[T], steps: &[T], project: &'a dyn Fn(&mut [T])) -> Self {
        let n = x0.len();
        let mut start = x0.to_vec();
        project(&mut start);
        let mut simplex = vec![start.clone()];
        let mut values = vec![sanitize(f(&start))];
        for j in 0..n {
            let mut v = start.clone();
            v[j] = v[j] + steps[j];
            project(&mut v);
            if v[j] == start[j] {
                v[j] = v[j] - steps[j];
                project(&mut v);
            }
            values.push(sanitize(f(&v)));
            simplex.push(v);
        }
        let evaluations = n + 1;
        let mut nm = Self { f, project, simplex, values, evaluations, iterations: 0 };
        nm.sort();
        nm
    }

    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].partial_cmp(&self.values[b]).unwrap_or(std::cmp::Ordering::Equal));
        self.simplex = idx.iter().map(|&i| self.simplex[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn eval(&mut self, x: &mut [T]) -> T {
        (self.project)(x);
        self.evaluations += 1;
        sanitize((self.f)(x))
    }

    pub fn best(&self) -> (&[T], T) {
        (&self.simplex[0], self.values[0])
    }

    /// Objective values at the vertices, best first.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Spread of objective values across the simplex.
    pub fn value_spread(&self) -> T {
        let worst = *self.values.last().expect("non-empty simplex");
        worst - self.values[0]
    }

    /// Largest coordinate distance of any vertex from the best vertex.
    pub fn diameter(&self) -> T {
        let best = &self.simplex[0];
        self.simplex
            .iter()
            .skip(1)
            .flat_map(|v| v.iter().zip(best).map(|(&a, &b)| (a - b).abs()))
            .fold(T::zero(), T::max)
    }

    /// One reflection / expansion / contraction / shrink iteration.
    pub fn step(&mut self) {
        let n = self.simplex.len() - 1;
        let (alpha, gamma, rho, shrink) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
        let mut centroid = vec![T::zero(); n];
        for v in &self.simplex[..n] {
            for (c, &x) in centroid.iter_mut().zip(v) {
                *c = *c + x;
            }
        }
        let inv = T::one() / T::lit(n as f64);
        centroid.iter_mut().for_each(|c| *c = *c * inv);
        let worst = self.simplex[n].clone();
        let along = |t: T| -> Vec<T> { centroid.iter().zip(&worst).map(|(&c, &w)| c + t * (c - w)).collect() };

        let mut xr = along(alpha);
        let fr = self.eval(&mut xr);
        if fr < self.values[0] {
            let mut xe = along(gamma);
            let fe = self.eval(&mut xe);
            if fe < fr {
                self.replace_worst(xe, fe);
            } else {
                self.replace_worst(xr, fr);
            }
        } else if fr < self.values[n - 1] {
            self.replace_worst(xr, fr);
        } else {
            let outside = fr < self.values[n];
            let mut xc = if outside { along(rho) } else { along(-rho) };
            let fc = self.eval(&mut xc);
            if fc < if outside { fr } else { self.values[n] } {
                self.replace_worst(xc, fc);
            } else {
                let best = self.simplex[0].clone();
                for i in 1..=n {
                    let mut v: Vec<T> =
                        best.iter().zip(&self.simplex[i]).map(|(&b, &x)| b + shrink * (x - b)).collect();
                    let fv = self.eval(&mut v);
                    self.simplex[i] = v;
                    self.values[i] = fv;
                }
            }
        }
        self.iterations += 1;
        self.sort();
    }

    fn replace_worst(&mut self, x: Vec<T>, fx: T) {
        let n = self.simplex.len() - 1;
        self.simplex[n] = x;
        self.values[n] = fx;
    }

    pub fn into_best(self) -> (Vec<T>, T) {
        (self.simplex[0].clone(), self.values[0])
    }
}

/// Stopping rules for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions<T> {
    /// Initial simplex edge relative to the box width (or `max(1, |x|)` when unbounded).
    pub initial_step: T,
    pub max_iter: usize,
    pub f_tol: T,
    pub x_tol: T,
}

impl<T: Real> Default for SimplexOptions<T> {
    fn default() -> Self {
        Self { initial_step: T::lit(0.05), max_iter: 20_000, f_tol: T::lit(1e-12), x_tol: T::lit(1e-10) }
    }
}

/// Initial simplex edges for a start point inside a box.
pub fn simplex_steps<T: Real>(x0: &[T], bounds: &Bounds<T>, rel: T) -> Vec<T> {
    x0.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&x, (&l, &u))| {
            let w = u - l;
            if w.is_finite() && w > T::zero() {
                rel * w
            } else {
                rel * x.abs().max(T::one())
            }
        })
        .collect()
}

/// Runs the projected simplex to convergence.
pub fn nelder_mead<T: Real, F: FnMut(&[T]) -> T>(
    f: F,
    x0: &[T],
    bounds: &Bounds<T>,
    opts: &SimplexOptions<T>,
) -> OptimResult<T> {
    let project = |v: &mut [T]| bounds.project(v);
    let steps = simplex_steps(x0, bounds, opts.initial_step);
    let mut nm = NelderMead::new(f, x0, &steps, &project);
    let mut history = vec![nm.best().1];
    let mut converged = false;
    while nm.iterations < opts.max_iter {
        let fb = nm.best().1;
        let scale = fb.abs().max(T::one());
        if nm.value_spread() <= opts.f_tol * scale && nm.diameter() <= opts.x_tol * (max_abs(nm.best().0) + T::one()) {
            converged = true;
            break;
        }
        nm.step();
        history.push(nm.best().1);
    }
    let (iterations, evaluations) = (nm.iterations, nm.evaluations);
    let (x, f) = nm.into_best();
    OptimResult { x, f, iterations, evaluations, converged, history }
}

/// Coordinate-wise parabola refinement: for each coordinate, fit a parabola
/// through `x_j - h, x_j, x_j + h` and jump to its vertex when that improves.
pub fn coordinate_polish<T: Real, F: FnMut(&[T]) -> T>(
    mut f: F,
    x0: &[T],
    bounds: &Bounds<T>,
    max_sweeps: usize,
    rel_tol: T,
) -> OptimResult<T> {
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut fx = sanitize(f(&x));
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut h: Vec<T> = x.iter().map(|v| T::lit(1e-3) * v.abs().max(T::one())).collect();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let f_start = fx;
        for j in 0..x.len() {
            let xj = x[j];
            let mut probe = |v: T, x: &mut Vec<T>| {
                x[j] = v;
                evaluations += 1;
                sanitize(f(x))
            };
            let lo = (xj - h[j]).max(bounds.lower[j]);
            let hi = (xj + h[j]).min(bounds.upper[j]);
            if hi - lo <= T::zero() {
                x[j] = xj;
                continue;
            }
            let fl = if lo < xj { probe(lo, &mut x) } else { fx };
            let fh = if hi > xj { probe(hi, &mut x) } else { fx };
            let mut best = (xj, fx);
            if fl < best.1 {
                best = (lo, fl);
            }
            if fh < best.1 {
                best = (hi, fh);
            }
            // Vertex of the interpolating parabola through three distinct abscissae.
            if lo < xj && hi > xj {
                let (a, b, c) = (lo, xj, hi);
                let num = (b - a) * (b - a) * (fx - fh) - (b - c) * (b - c) * (fx - fl);
                let den = (b - a) * (fx - fh) - (b - c) * (fx - fl);
                if den != T::zero() {
                    let v = b - T::lit(0.5) * num / den;
                    if v.is_finite() {
                        let v = v.max(bounds.lower[j]).min(bounds.upper[j]);
                        let fv = probe(v, &mut x);
                        if fv < best.1 {
                            best = (v, fv);
                        }
                    }
                }
            }
            x[j] = best.0;
            fx = best.1;
            let moved = (best.0 - xj).abs();
            h[j] = if moved > T::zero() { moved.max(h[j] * T::lit(0.5)) } else { h[j] * T::lit(0.25) }
                .max(T::epsilon().sqrt() * xj.abs().max(T::one()));
        }
        history.push(fx);
        if (f_start - fx).abs() <= rel_tol * fx.abs().max(T::one()) {
            converged = true;
            break;
        }
    }
    OptimResult { x, f: fx, iterations: sweeps, evaluations, converged, history }
}

/// Central finite-difference gradient. Near a bound the stencil switches to
/// a one-sided difference that stays inside the box.
pub fn fd_gradient<T: Real, F: FnMut(&[T]) -> T>(f: &mut F, x: &[T], fx: T, bounds: &Bounds<T>, rel_step: T) -> Vec<T> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = rel_step * x[j].abs().max(T::one());
            let xj = x[j];
            let up = xj + h <= bounds.upper[j];
            let down = xj - h >= bounds.lower[j];
            let fp = if up {
                xp[j] = xj + h;
                f(&xp)
            } else {
                T::nan()
            };
            let fm = if down {
                xp[j] = xj - h;
                f(&xp)
            } else {
                T::nan()
            };
            // A side that is out of the box or hits a barrier is dropped.
            let g = match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (T::lit(2.0) * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => T::zero(),
            };
            xp[j] = xj;
            g
        })
        .collect()
}

/// Gradient with components that push against an active bound removed.
pub fn projected_gradient<T: Real>(x: &[T], g: &[T], bounds: &Bounds<T>) -> Vec<T> {
    x.iter()
        .zip(g)
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(
            |((&xj, &gj), (&l, &u))| {
                if (xj <= l && gj > T::zero()) || (xj >= u && gj < T::zero()) {
                    T::zero()
                } else {
                    gj
                }
            },
        )
        .collect()
}

/// Stopping rules for [`projected_bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct QuasiNewtonOptions<T> {
    pub max_iter: usize,
    /// Convergence when `‖projected gradient‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: T,
    pub fd_step: T,
}

impl<T: Real> Default for QuasiNewtonOptions<T> {
    fn default() -> Self {
        Self { max_iter: 2000, grad_tol: T::lit(1e-6), fd_step: T::lit(6e-6) }
    }
}

/// Projected BFGS with Armijo backtracking along the projected path.
pub fn projected_bfgs<T: Real, F: FnMut(&[T]) -> T>(
    mut f: F,
    x0: &[T],
    bounds: &Bounds<T>,
    opts: &QuasiNewtonOptions<T>,
) -> OptimResult<T> {
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut obj = |x: &[T]| {
        evaluations += 1;
        sanitize(f(x))
    };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut fx = obj(&x);
    let mut history = vec![fx];
    if !fx.is_finite() {
        drop(obj);
        return OptimResult { x, f: fx, iterations: 0, evaluations, converged: false, history };
    }
    let mut g = fd_gradient(&mut obj, &x, fx, bounds, opts.fd_step);
    let mut hinv: Option<Vec<T>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let c1 = T::lit(1e-4);
    while iterations < opts.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        if max_abs(&pg) <= opts.grad_tol * fx.abs().max(T::one()) {
            converged = true;
            break;
        }
        iterations += 1;
        let active: Vec<bool> = pg.iter().zip(&g).map(|(&p, &gj)| p == T::zero() && gj != T::zero()).collect();
        let direction = |h: &Option<Vec<T>>| -> Vec<T> {
            match h {
                Some(h) => (0..n)
                    .map(|i| {
                        if active[i] {
                            return T::zero();
                        }
                        -(0..n).filter(|&k| !active[k]).map(|k| h[i * n + k] * g[k]).sum::<T>()
                    })
                    .collect(),
                None => {
                    let s = T::one() / max_abs(&pg).max(T::one());
                    pg.iter().map(|&p| -p * s).collect()
                }
            }
        };
        let mut d = direction(&hinv);
        let slope: T = d.iter().zip(&g).map(|(&a, &b)| a * b).sum();
        if !(slope < T::zero()) {
            hinv = None;
            d = direction(&hinv);
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut t = T::one();
            for _ in 0..60 {
                let mut xn: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
                bounds.project(&mut xn);
                let decrease: T = xn.iter().zip(&x).zip(&g).map(|((&a, &b), &gj)| (a - b) * gj).sum();
                let fn_ = obj(&xn);
                if fn_.is_finite() && fn_ <= fx + c1 * decrease.min(T::zero()) && xn != x {
                    accepted = Some((xn, fn_));
                    break;
                }
                t = t * T::lit(0.5);
            }
            if accepted.is_some() || attempt == 1 || hinv.is_none() {
                break;
            }
            hinv = None;
            d = direction(&hinv);
        }
        let Some((xn, fn_)) = accepted else { break };
        let gn = fd_gradient(&mut obj, &xn, fn_, bounds, opts.fd_step);
        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy: T = s.iter().zip(&y).map(|(&a, &b)| a * b).sum();
        let yy: T = y.iter().map(|&v| v * v).sum();
        if sy > T::lit(1e-12) * yy.sqrt() * s.iter().map(|&v| v * v).sum::<T>().sqrt() {
            let h = hinv.get_or_insert_with(|| {
                let gamma = sy / yy;
                let mut id = vec![T::zero(); n * n];
                for i in 0..n {
                    id[i * n + i] = gamma;
                }
                id
            });
            bfgs_update(h, &s, &y, sy);
        }
        let rel_change = (fx - fn_).abs() / fx.abs().max(T::one());
        x = xn;
        fx = fn_;
        g = gn;
        history.push(fx);
        if rel_change < T::epsilon() * T::lit(4.0) && max_abs(&s) <= T::epsilon().sqrt() * (max_abs(&x) + T::one()) {
            // Stalled at the resolution of the finite-difference gradient.
            let pg = projected_gradient(&x, &g, bounds);
            converged = max_abs(&pg) <= opts.grad_tol.sqrt() * fx.abs().max(T::one());
            break;
        }
    }
    drop(obj);
    OptimResult { x, f: fx, iterations, evaluations, converged, history }
}

fn bfgs_update<T: Real>(h: &mut [T], s: &[T], y: &[T], sy: T) {
    let n = s.len();
    let rho = T::one() / sy;
    let hy: Vec<T> = (0..n).map(|i| (0..n).map(|k| h[i * n + k] * y[k]).sum()).collect();
    let yhy: T = y.iter().zip(&hy).map(|(&a, &b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = h[i * n + j] - rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let b = Bounds::uniform(2, -5.0, 5.0);
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &b, &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn simplex_respects_bounds() {
        let b = Bounds::new(vec![2.0, -1.0], vec![3.0, 1.0]);
        let r = nelder_mead(|x: &[f64]| x[0] * x[0] + x[1] * x[1], &[2.5, 0.5], &b, &SimplexOptions::default());
        assert!((r.x[0] - 2.0).abs() < 1e-8 && r.x[1].abs() < 1e-5);
    }

    #[test]
    fn bfgs_on_ill_conditioned_quadratic() {
        let b = Bounds::unbounded(3);
        let f = |x: &[f64]| 1e4 * (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + 0.5 * (x[0] + x[2]).powi(2);
        let r = projected_bfgs(f, &[0.0, 0.0, 0.0], &b, &QuasiNewtonOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] + 2.0).abs() < 1e-5 && (r.x[2] + 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn bfgs_stops_on_active_bound() {
        let b = Bounds::uniform(2, 0.0, 10.0);
        let f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 3.0).powi(2);
        let r = projected_bfgs(f, &[5.0, 5.0], &b, &QuasiNewtonOptions::default());
        assert!(r.converged);
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn polish_reaches_separable_minimum() {
        let b = Bounds::uniform(2, -10.0, 10.0);
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 4.0 * (x[1] + 0.7).powi(2);
        let r = coordinate_polish(f, &[0.0, 0.0], &b, 200, 1e-15);
        assert!((r.x[0] - 0.3).abs() < 1e-8 && (r.x[1] + 0.7).abs() < 1e-8, "{:?}", r.x);
    }

    /// Finite to the left of `x = 1`, a wall beyond it.
    fn walled(x: &[f64]) -> f64 {
        if x[0] < 1.0 {
            (x[0] - 2.0).powi(2) + x[1] * x[1]
        } else {
            f64::INFINITY
        }
    }

    #[test]
    fn gradient_next_to_a_wall_is_one_sided() {
        let x = [1.0 - 1e-7, 0.5];
        let g = fd_gradient(&mut walled, &x, walled(&x), &Bounds::unbounded(2), 1e-5);
        assert!((g[0] + 2.0).abs() < 1e-3, "{g:?}");
        assert!((g[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_never_climbs_against_a_wall() {
        let r = projected_bfgs(walled, &[0.0, 3.0], &Bounds::unbounded(2), &QuasiNewtonOptions::default());
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.history);
        assert!(r.x[0] < 1.0 && r.f < 4.0);
    }
}
