//! Euler–Maruyama path generation with reproducible random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ParamVector, SdeModel};
use crate::scalar::Real;

/// Identifies one independent random sequence: a global seed plus a stream
/// index (typically the replicate number).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Fresh generator positioned at the start of the `(seed, stream)` sequence.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A different stream derived from this one, for auxiliary draws that
    /// must not overlap the simulation noise.
    pub fn substream(&self, tag: u64) -> Self {
        Self { seed: self.seed, stream: self.stream ^ tag.rotate_left(40) }
    }
}

/// `count` iid standard normal draws from the `(seed, stream)` sequence.
pub fn standard_normal_block<T: Real>(rng: &RngSpec, count: usize) -> Vec<T> {
    let mut g = rng.rng();
    (0..count).map(|_| T::lit(g.sample::<f64, _>(StandardNormal))).collect()
}

/// Step size of the high-frequency design, `Δ_n = n^{-1/3}`.
pub fn high_freq_grid<T: Real>(n: usize) -> T {
    assert!(n >= 1, "n must be positive");
    T::one() / T::lit(n as f64).cbrt()
}

/// Equally spaced observations `X_{t_0}, …, X_{t_n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath<T> {
    pub times: Vec<T>,
    /// `(n + 1) × d`, one row per observation.
    pub values: Matrix<T>,
    pub delta: T,
}

impl<T: Real> SamplePath<T> {
    /// Builds a path from observation rows starting at time `t0`.
    pub fn from_rows(rows: &[Vec<T>], delta: T, t0: T) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument("a path needs at least two observations".into()));
        }
        if !(delta > T::zero()) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("ragged observation rows".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        let times = (0..rows.len()).map(|i| t0 + delta * T::lit(i as f64)).collect();
        Ok(Self { times, values: Matrix::from_rows(rows), delta })
    }

    /// Number of increments.
    pub fn n(&self) -> usize {
        self.values.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn last_state(&self) -> &[T] {
        self.state(self.n())
    }

    /// Column `c` as a series.
    pub fn component(&self, c: usize) -> Vec<T> {
        (0..=self.n()).map(|i| self.values[(i, c)]).collect()
    }

    /// Observations `start..=end` (inclusive) as a new path.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let rows: Vec<Vec<T>> = (start..=end).map(|i| self.state(i).to_vec()).collect();
        Self { times: self.times[start..=end].to_vec(), values: Matrix::from_rows(&rows), delta: self.delta }
    }
}

/// Tuning knobs of the Euler scheme.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions<T> {
    /// Internal sub-steps per observation interval (1 = simulate on the grid).
    pub refine: usize,
    /// A state coordinate above this magnitude counts as an explosion.
    pub explosion_threshold: T,
}

impl<T: Real> Default for SimOptions<T> {
    fn default() -> Self {
        Self { refine: 1, explosion_threshold: T::lit(1e8) }
    }
}

/// Euler–Maruyama path on the observation grid with default options.
pub fn euler_simulate<T: Real>(
    model: &SdeModel<T>,
    theta: &ParamVector<T>,
    x0: &[T],
    n: usize,
    delta: T,
    rng: &RngSpec,
) -> Result<SamplePath<T>> {
    euler_simulate_with(model, theta, x0, n, delta, rng, &SimOptions::default())
}

/// `X_{i+1} = X_i + b(X_i, α) h + σ(X_i, β) √h Z_i` with `h = Δ / refine`;
/// every `refine`-th state is recorded. The normal vectors `Z_i` are read in
/// order from the `(seed, stream)` sequence, `r` draws per sub-step.
pub fn euler_simulate_with<T: Real>(
    model: &SdeModel<T>,
    theta: &ParamVector<T>,
    x0: &[T],
    n: usize,
    delta: T,
    rng: &RngSpec,
    opts: &SimOptions<T>,
) -> Result<SamplePath<T>> {
    let d = model.dim_state();
    let r = model.dim_noise();
    if n < 1 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::InvalidArgument("delta must be positive and finite".into()));
    }
    if x0.len() != d || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("x0 must be finite with the model's state dimension".into()));
    }
    if theta.alpha.len() != model.p1() || theta.beta.len() != model.p2() {
        return Err(Error::InvalidArgument("parameter dimensions do not match the model".into()));
    }
    let refine = opts.refine.max(1);
    let h = delta / T::lit(refine as f64);
    let sqrt_h = h.sqrt();

    let mut g = rng.rng();
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut b = vec![T::zero(); d];
    let mut s = vec![T::zero(); d * r];
    let mut z = vec![T::zero(); r];
    for step in 0..n {
        for _ in 0..refine {
            model.drift_into(&x, &theta.alpha, &mut b);
            model.diffusion_into(&x, &theta.beta, &mut s);
            for zk in z.iter_mut() {
                *zk = T::lit(g.sample::<f64, _>(StandardNormal));
            }
            for i in 0..d {
                let mut noise = T::zero();
                for (k, zk) in z.iter().enumerate() {
                    noise = noise + s[i * r + k] * *zk;
                }
                x[i] = x[i] + b[i] * h + noise * sqrt_h;
            }
            if x.iter().any(|v| !v.is_finite() || v.abs() > opts.explosion_threshold) {
                return Err(Error::Explosion { step: step + 1 });
            }
        }
        values.extend_from_slice(&x);
    }
    let times = (0..=n).map(|i| delta * T::lit(i as f64)).collect();
    Ok(SamplePath { times, values: Matrix::from_row_major(n + 1, d, values), delta })
}
