//! Monte Carlo estimation of the integral equation terms
//!
//! ```text
//! F(x, t) = integral_0^{T-t} E_x[ e^{lambda s} (f(t+s) - psi_s)
//!                                 1{psi_s < a(t+s)} ] ds
//! ```
//!
//! used both for locating the stopping boundary (root of `F(., t_k)`) and
//! for the value of the problem (`x = psi0`, `t = 0`).
//!
//! The closed-form scheme writes every path as `psi_s(x) = Phi_s x +
//! Phi_s rho J_s` with coefficients independent of the start level, so one
//! ensemble supports many candidate levels with common random numbers:
//! [`VolterraEstimator`] materializes the coefficients once and
//! re-evaluates at each new `x` with a linear sweep. Estimates at nearby
//! levels are then strongly positively correlated, which keeps the root
//! search stable. One-shot estimates at a single level
//! ([`volterra_integral`], [`value_integral`]) stream the paths instead and
//! hold no per-node state.
//!
//! Time integration is a composite trapezoid over the grid nodes and the
//! indicator is evaluated at the nodes only, with no sub-step crossing
//! detection.

use rayon::prelude::*;

use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::model::StopProblem;
use crate::simulate::{PathBatch, MAX_OVERFLOW_FRACTION};

/// Default path counts: boundary solving tolerates more noise per node than
/// a final value estimate.
pub const DEFAULT_SOLVE_PATHS: usize = 20_000;
pub const DEFAULT_VALUE_PATHS: usize = 200_000;

/// Seed and ensemble size of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub seed: u64,
    pub n_paths: usize,
}

/// A Monte Carlo estimate of one time integral.
#[derive(Debug, Clone, Copy)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Paths entering the estimate (overflowed paths excluded).
    pub n_paths: usize,
}

impl IntegralEstimate {
    pub const EXACT_ZERO: IntegralEstimate =
        IntegralEstimate { value: 0.0, std_error: 0.0, n_paths: 0 };
}

/// Treatment of the `s = 0` node of the time quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartNode {
    /// Weight the node by the indicator `1{x < a(t)}` against the supplied
    /// boundary value at the start time.
    Indicator,
    /// Weight the node by 1/2: when the start level sits exactly on the
    /// threshold, the probability that the path is below it an instant
    /// later tends to 1/2, so this is the limit value of the integrand.
    /// The boundary solver uses this rule because at the root the start
    /// level *is* the threshold.
    HalfCrossing,
}

/// Node data shared by both estimation paths: trapezoid weight times
/// discount, gain level and threshold per node of the tail grid.
struct NodeGrid {
    elapsed: Vec<f64>,
    weight: Vec<f64>,
    gain: Vec<f64>,
    threshold: Vec<f64>,
}

impl NodeGrid {
    fn new(problem: &StopProblem, times: &[f64], thresholds: &[f64]) -> Result<Self> {
        if thresholds.len() != times.len() {
            return Err(Error::GridMismatch(
                "threshold values do not cover the tail".into(),
            ));
        }
        let last = times.len() - 1;
        let elapsed: Vec<f64> = times.iter().map(|t| t - times[0]).collect();
        let weight: Vec<f64> = (0..=last)
            .map(|j| {
                let left = if j == 0 { elapsed[0] } else { elapsed[j - 1] };
                let right = if j == last { elapsed[last] } else { elapsed[j + 1] };
                0.5 * (right - left) * (problem.lambda * elapsed[j]).exp()
            })
            .collect();
        let gain: Vec<f64> = times.iter().map(|&t| problem.gain_at(t)).collect();
        Ok(Self { elapsed, weight, gain, threshold: thresholds.to_vec() })
    }

    fn head(&self, x: f64, start: StartNode) -> f64 {
        match start {
            StartNode::Indicator => {
                if x < self.threshold[0] {
                    self.weight[0] * (self.gain[0] - x)
                } else {
                    0.0
                }
            }
            StartNode::HalfCrossing => 0.5 * self.weight[0] * (self.gain[0] - x),
        }
    }
}

fn summarize(per_path: &[Option<f64>], total: usize) -> Result<IntegralEstimate> {
    let dropped = per_path.iter().filter(|v| v.is_none()).count();
    let limit = (MAX_OVERFLOW_FRACTION * total as f64).ceil() as usize;
    if dropped > limit {
        return Err(Error::TooManyOverflows { dropped, total, limit });
    }
    let n = total - dropped;
    if n == 0 {
        return Ok(IntegralEstimate::EXACT_ZERO);
    }
    let mean = per_path.iter().flatten().sum::<f64>() / n as f64;
    let var = if n > 1 {
        per_path.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(IntegralEstimate { value: mean, std_error: (var / n as f64).sqrt(), n_paths: n })
}

/// Path ensemble for a fixed start time, reusable across start levels.
/// Memory is `2 * n_paths * nodes` doubles; prefer [`volterra_integral`]
/// for a single start level.
pub struct VolterraEstimator {
    nodes: NodeGrid,
    n_paths: usize,
    dropped: usize,
    /// Row-major `[path][node]`: psi = scale * x + shift.
    scale: Vec<f64>,
    shift: Vec<f64>,
    valid: Vec<bool>,
}

impl VolterraEstimator {
    /// Builds the ensemble for the tail of `boundary` starting at grid node
    /// `start`. `batch.times()` must equal that tail.
    pub fn new(
        problem: &StopProblem,
        boundary: &Boundary,
        start: usize,
        batch: &PathBatch,
    ) -> Result<Self> {
        if start + 1 >= boundary.grid().len() {
            return Err(Error::Grid("start node has an empty tail".into()));
        }
        Self::with_tail(problem, &boundary.grid()[start..], &boundary.values()[start..], batch)
    }

    /// As [`Self::new`] but with explicit tail threshold values (the solver
    /// passes the partially known boundary here).
    pub fn with_tail(
        problem: &StopProblem,
        times: &[f64],
        thresholds: &[f64],
        batch: &PathBatch,
    ) -> Result<Self> {
        if batch.times() != times {
            return Err(Error::GridMismatch(
                "batch grid differs from the boundary tail".into(),
            ));
        }
        let nodes = NodeGrid::new(problem, times, thresholds)?;
        let n_paths = batch.n_paths();
        let row = times.len();
        let drift = problem.b - 0.5 * problem.mu * problem.mu;
        let (mu, rho) = (problem.mu, problem.rho);
        let elapsed = nodes.elapsed.clone();

        let mut scale = vec![0.0; n_paths * row];
        let mut shift = vec![0.0; n_paths * row];
        let mut valid = vec![true; n_paths];
        scale
            .par_chunks_mut(row)
            .zip(shift.par_chunks_mut(row))
            .zip(valid.par_iter_mut())
            .enumerate()
            .for_each(|(p, ((srow, crow), ok))| {
                let mut increments = vec![0.0; row - 1];
                batch.fill_increments(p, &mut increments);
                let mut driver = 0.0;
                let mut integral = 0.0;
                let mut prev_inv = 1.0;
                srow[0] = 1.0;
                crow[0] = 0.0;
                let mut finite = true;
                for j in 1..row {
                    driver += increments[j - 1];
                    let log_phi = drift * elapsed[j] - mu * driver;
                    let phi = log_phi.exp();
                    let inv = (-log_phi).exp();
                    integral += 0.5 * (prev_inv + inv) * (elapsed[j] - elapsed[j - 1]);
                    prev_inv = inv;
                    srow[j] = phi;
                    crow[j] = phi * rho * integral;
                    finite &= phi.is_finite() && inv.is_finite() && crow[j].is_finite();
                }
                *ok = finite;
            });

        let dropped = valid.iter().filter(|v| !**v).count();
        let limit = (MAX_OVERFLOW_FRACTION * n_paths as f64).ceil() as usize;
        if dropped > limit {
            return Err(Error::TooManyOverflows { dropped, total: n_paths, limit });
        }

        Ok(Self { nodes, n_paths, dropped, scale, shift, valid })
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Estimates the integral for start level `x` over the shared ensemble.
    pub fn estimate(&self, x: f64, start: StartNode) -> IntegralEstimate {
        let row = self.nodes.elapsed.len();
        let head = self.nodes.head(x, start);
        let per_path: Vec<Option<f64>> = (0..self.n_paths)
            .into_par_iter()
            .map(|p| {
                if !self.valid[p] {
                    return None;
                }
                let scale = &self.scale[p * row..(p + 1) * row];
                let shift = &self.shift[p * row..(p + 1) * row];
                let mut acc = head;
                for j in 1..row {
                    let psi = scale[j] * x + shift[j];
                    if psi < self.nodes.threshold[j] {
                        acc += self.nodes.weight[j] * (self.nodes.gain[j] - psi);
                    }
                }
                Some(acc)
            })
            .collect();
        summarize(&per_path, self.n_paths).expect("drop limit already enforced at build")
    }
}

/// Streaming single-level estimate; no per-node state is kept.
fn estimate_streaming(
    problem: &StopProblem,
    times: &[f64],
    thresholds: &[f64],
    batch: &PathBatch,
    x: f64,
    start: StartNode,
) -> Result<IntegralEstimate> {
    if batch.times() != times {
        return Err(Error::GridMismatch(
            "batch grid differs from the boundary tail".into(),
        ));
    }
    let nodes = NodeGrid::new(problem, times, thresholds)?;
    let head = nodes.head(x, start);
    let drift = problem.b - 0.5 * problem.mu * problem.mu;
    let (mu, rho) = (problem.mu, problem.rho);
    let per_path: Vec<Option<f64>> = (0..batch.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut increments = vec![0.0; times.len() - 1];
            batch.fill_increments(p, &mut increments);
            let mut driver = 0.0;
            let mut integral = 0.0;
            let mut prev_inv = 1.0;
            let mut acc = head;
            for j in 1..times.len() {
                driver += increments[j - 1];
                let log_phi = drift * nodes.elapsed[j] - mu * driver;
                let phi = log_phi.exp();
                let inv = (-log_phi).exp();
                integral += 0.5 * (prev_inv + inv) * (nodes.elapsed[j] - nodes.elapsed[j - 1]);
                prev_inv = inv;
                let psi = phi * (x + rho * integral);
                if !psi.is_finite() {
                    return None;
                }
                if psi < nodes.threshold[j] {
                    acc += nodes.weight[j] * (nodes.gain[j] - psi);
                }
            }
            Some(acc)
        })
        .collect();
    summarize(&per_path, batch.n_paths())
}

/// One-shot estimate of `F(x, t)` at grid node `start` against a fully
/// known boundary. At `start = n` (i.e. `t = T`) the integration range is
/// empty and the exact value 0 is returned with zero error.
pub fn volterra_integral(
    problem: &StopProblem,
    x: f64,
    start: usize,
    boundary: &Boundary,
    batch: &PathBatch,
) -> Result<IntegralEstimate> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::Domain(format!("start level x = {x} must be >= 0")));
    }
    if start >= boundary.grid().len() {
        return Err(Error::Grid(format!("start node {start} out of range")));
    }
    if start + 1 == boundary.grid().len() {
        return Ok(IntegralEstimate { n_paths: batch.n_paths(), ..IntegralEstimate::EXACT_ZERO });
    }
    estimate_streaming(
        problem,
        &boundary.grid()[start..],
        &boundary.values()[start..],
        batch,
        x,
        StartNode::Indicator,
    )
}

/// Estimate of the generic problem value: the same integrand started at
/// `(x, t) = (psi0, 0)` against the solved boundary. The caller maps the
/// result to the original payoff with [`StopProblem::map_value`].
///
/// If `psi0 >= a(0)` the rule stops immediately and the generic value is
/// exactly 0 (no Monte Carlo involved).
pub fn value_integral(
    problem: &StopProblem,
    boundary: &Boundary,
    batch: &PathBatch,
) -> Result<IntegralEstimate> {
    let grid = boundary.grid();
    if grid[0] != 0.0 || (boundary.horizon() - problem.horizon).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!(
            "boundary spans [{}, {}], problem horizon is {}",
            grid[0],
            boundary.horizon(),
            problem.horizon
        )));
    }
    if problem.psi0 >= boundary.values()[0] {
        return Ok(IntegralEstimate { n_paths: batch.n_paths(), ..IntegralEstimate::EXACT_ZERO });
    }
    volterra_integral(problem, problem.psi0, 0, boundary, batch)
}
