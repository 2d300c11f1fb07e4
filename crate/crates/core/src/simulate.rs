//! Path simulation for the detection statistic and the raw observation
//! process.
//!
//! The statistic follows the linear SDE `d psi = (rho + b psi) dt -
//! mu psi dB`, which has the variation-of-constants solution
//!
//! ```text
//! psi_t = Phi_t (x0 + rho * integral_0^t Phi_s^{-1} ds),
//! Phi_t = exp((b - mu^2/2) t - mu B_t).
//! ```
//!
//! Paths are generated from this closed form with a trapezoidal quadrature
//! of the inner integral on the grid: positivity of `psi` is preserved by
//! construction and the only discretization error is the second-order
//! quadrature. An Euler-Maruyama stepper is kept as an independent
//! reference scheme for convergence checks.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::validate_grid;
use crate::model::{DisorderModel, StopProblem, UniformPrior};
use crate::rng::path_rng;

/// Maximum fraction of paths that may be dropped for overflow before a run
/// is considered failed.
pub const MAX_OVERFLOW_FRACTION: f64 = 1e-4;

/// A reproducible ensemble of Brownian increments on a fixed grid.
///
/// The batch stores no sample data: path `i` is regenerated on demand from
/// ChaCha stream `i` of the batch seed, so the ensemble is bit-identical
/// across runs and independent of scheduling or thread count.
#[derive(Debug, Clone)]
pub struct PathBatch {
    seed: u64,
    n_paths: usize,
    times: Vec<f64>,
    /// Normal draws discarded per stream before the first increment. Lets
    /// several batches expose nested tails of the same Brownian paths:
    /// `skip = k` on the grid tail `t_k..t_n` reuses the step-aligned
    /// draws of the full-grid batch with the same seed.
    skip: usize,
}

impl PathBatch {
    pub fn new(seed: u64, n_paths: usize, times: Vec<f64>) -> Result<Self> {
        validate_grid(&times)?;
        Ok(Self { seed, n_paths, times, skip: 0 })
    }

    /// Batch on a tail grid whose streams are step-aligned with a full-grid
    /// batch of the same seed (the first `skip` draws of every stream are
    /// discarded).
    pub fn with_aligned_tail(
        seed: u64,
        n_paths: usize,
        times: Vec<f64>,
        skip: usize,
    ) -> Result<Self> {
        validate_grid(&times)?;
        Ok(Self { seed, n_paths, times, skip })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Writes the Brownian increments of one path (`Normal(0, dt_k)` per
    /// step) into `out`, which must hold exactly [`Self::steps`] values.
    pub fn fill_increments(&self, path: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.steps());
        assert!(path < self.n_paths);
        let mut rng = path_rng(self.seed, path as u64);
        for _ in 0..self.skip {
            let _: f64 = rng.sample(StandardNormal);
        }
        for (k, slot) in out.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *slot = z * (self.times[k + 1] - self.times[k]).sqrt();
        }
    }

    pub fn increments(&self, path: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.steps()];
        self.fill_increments(path, &mut out);
        out
    }
}

/// One simulated statistic path on a grid.
#[derive(Debug, Clone)]
pub struct PsiPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// True when an exponential in the closed form left the f64 range; such
    /// paths are excluded from estimates and counted by the caller.
    pub overflow: bool,
}

/// Closed-form statistic values for a given driver path.
///
/// `driver` holds the running values `B_{t_k}` with `driver[0] = 0`;
/// `elapsed` holds `t_k - t_0`. Returns `true` on overflow.
pub(crate) fn psi_exact_into(
    b: f64,
    mu: f64,
    rho: f64,
    x0: f64,
    elapsed: &[f64],
    driver: &[f64],
    out: &mut [f64],
) -> bool {
    debug_assert_eq!(elapsed.len(), driver.len());
    debug_assert_eq!(elapsed.len(), out.len());
    let drift = b - 0.5 * mu * mu;
    let mut overflow = false;
    let mut integral = 0.0;
    let mut prev_inv = 1.0; // 1/Phi at s = 0
    let mut prev_s = 0.0;
    for k in 0..elapsed.len() {
        let s = elapsed[k];
        let log_phi = drift * s - mu * driver[k];
        let phi = log_phi.exp();
        let inv = (-log_phi).exp();
        integral += 0.5 * (prev_inv + inv) * (s - prev_s);
        let psi = phi * (x0 + rho * integral);
        if !psi.is_finite() || !phi.is_finite() || !inv.is_finite() {
            overflow = true;
        }
        out[k] = psi;
        prev_inv = inv;
        prev_s = s;
    }
    overflow
}

/// Simulates one statistic path with the exact (variation-of-constants)
/// scheme from a path of Brownian increments.
pub fn psi_path_exact(
    problem: &StopProblem,
    x0: f64,
    times: &[f64],
    increments: &[f64],
) -> Result<PsiPath> {
    validate_grid(times)?;
    if increments.len() != times.len() - 1 {
        return Err(Error::GridMismatch(format!(
            "{} increments for {} grid nodes",
            increments.len(),
            times.len()
        )));
    }
    let mut driver = vec![0.0; times.len()];
    for (k, dw) in increments.iter().enumerate() {
        driver[k + 1] = driver[k] + dw;
    }
    let elapsed: Vec<f64> = times.iter().map(|t| t - times[0]).collect();
    let mut values = vec![0.0; times.len()];
    let overflow =
        psi_exact_into(problem.b, problem.mu, problem.rho, x0, &elapsed, &driver, &mut values);
    Ok(PsiPath { times: times.to_vec(), values, overflow })
}

/// Euler-Maruyama stepper for the same SDE. Reference scheme only: it does
/// not preserve positivity and has lower strong order than the exact
/// scheme.
pub fn euler_path(
    problem: &StopProblem,
    x0: f64,
    times: &[f64],
    increments: &[f64],
) -> Result<Vec<f64>> {
    validate_grid(times)?;
    if increments.len() != times.len() - 1 {
        return Err(Error::GridMismatch(format!(
            "{} increments for {} grid nodes",
            increments.len(),
            times.len()
        )));
    }
    let mut values = vec![0.0; times.len()];
    values[0] = x0;
    for k in 0..increments.len() {
        let dt = times[k + 1] - times[k];
        let psi = values[k];
        values[k + 1] = psi + (problem.rho + problem.b * psi) * dt - problem.mu * psi * increments[k];
    }
    Ok(values)
}

/// Simulates a whole batch of statistic paths; deterministic in
/// `(seed, n_paths, grid)` and independent across path index.
pub fn simulate_batch(problem: &StopProblem, x0: f64, batch: &PathBatch) -> Result<Vec<PsiPath>> {
    let paths: Vec<PsiPath> = (0..batch.n_paths())
        .into_par_iter()
        .map(|i| {
            let incs = batch.increments(i);
            psi_path_exact(problem, x0, batch.times(), &incs)
                .expect("batch grid validated at construction")
        })
        .collect();
    let dropped = paths.iter().filter(|p| p.overflow).count();
    let limit = (MAX_OVERFLOW_FRACTION * batch.n_paths() as f64).ceil() as usize;
    if dropped > limit {
        return Err(Error::TooManyOverflows { dropped, total: batch.n_paths(), limit });
    }
    Ok(paths)
}

/// Simulates the observed process `X_t = mu1 t + (mu2 - mu1)(t - theta)^+ +
/// sigma B_t` on the grid. The drift switch is applied exactly within the
/// step containing `theta`, so drift handling carries no discretization
/// bias.
pub fn simulate_disorder_path(
    model: &DisorderModel,
    theta: f64,
    times: &[f64],
    increments: &[f64],
) -> Result<Vec<f64>> {
    validate_grid(times)?;
    if increments.len() != times.len() - 1 {
        return Err(Error::GridMismatch(format!(
            "{} increments for {} grid nodes",
            increments.len(),
            times.len()
        )));
    }
    if !(0.0..=model.horizon()).contains(&theta) {
        return Err(Error::Domain(format!("theta = {theta} outside [0, T]")));
    }
    let mut x = vec![0.0; times.len()];
    for k in 0..increments.len() {
        let (t0, t1) = (times[k], times[k + 1]);
        let before = (theta.min(t1) - t0.min(theta)).max(0.0);
        let after = (t1 - theta.max(t0)).max(0.0);
        x[k + 1] = x[k]
            + model.mu1() * before
            + model.mu2() * after
            + model.sigma() * increments[k];
    }
    Ok(x)
}

/// Builds the statistic path driven by an observed path: normalizes to
/// `Xtilde = (X - mu1 t)/sigma` and applies the closed form with `b = 0`,
/// `mu = snr`, `rho` and initial mass from the prior.
pub fn psi_from_observation(
    model: &DisorderModel,
    prior: &UniformPrior,
    times: &[f64],
    x_path: &[f64],
) -> Result<PsiPath> {
    validate_grid(times)?;
    if x_path.len() != times.len() {
        return Err(Error::GridMismatch(format!(
            "{} observations for {} grid nodes",
            x_path.len(),
            times.len()
        )));
    }
    let driver: Vec<f64> = times
        .iter()
        .zip(x_path)
        .map(|(&t, &x)| (x - model.mu1() * t) / model.sigma())
        .collect();
    let mut values = vec![0.0; times.len()];
    let overflow = psi_exact_into(
        0.0,
        model.snr(),
        prior.rho(),
        prior.g0(),
        times,
        &driver,
        &mut values,
    );
    Ok(PsiPath { times: times.to_vec(), values, overflow })
}
