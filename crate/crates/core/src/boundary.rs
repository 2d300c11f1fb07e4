//! The optimal stopping boundary and the backward-induction solver.
//!
//! The boundary `a(t)` is characterized on each grid as follows: pin the
//! terminal value `a(T) = f(T-)`, then walk backwards; at node `t_k` the
//! value `a(t_k)` is the root in `x` of the estimated integral
//! `F_k(x) = integral_0^{T-t_k} E_x[e^{lambda s}(f(t_k+s) - psi_s)
//! 1{psi_s < a(t_k+s)}] ds`, which only involves already-solved boundary
//! values. `F_k` is positive below the boundary (waiting still has value)
//! and is pushed negative above it by the `s = 0` quadrature node, so a
//! bisection on a doubling bracket finds the root.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::expectation::{IntegralEstimate, McConfig, StartNode, VolterraEstimator};
use crate::grid::validate_grid;
use crate::model::StopProblem;
use crate::rng::{derive_seed, tag};
use crate::simulate::{PathBatch, PsiPath};

/// Absolute bisection tolerance on the boundary level.
pub const ROOT_TOLERANCE: f64 = 1e-4;
/// Bracket expansion limit (doublings of the upper end).
const MAX_BRACKET_DOUBLINGS: u32 = 60;
/// Roots below this level are reported as exactly zero.
const ZERO_FLOOR: f64 = 1e-8;

/// Terminal boundary level `a(T) = f(T-)`.
pub fn terminal_value(problem: &StopProblem) -> f64 {
    problem.gain_at(problem.horizon)
}

/// A stopping boundary sampled on a time grid. Between nodes the boundary
/// is piecewise constant taking the left node's value, matching how the
/// indicator is evaluated in the integral estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl Boundary {
    /// Structural validation only (finite nonnegative levels on a strictly
    /// increasing grid); solver outputs additionally satisfy the
    /// nonincreasing and gain-envelope properties.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} boundary values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Domain("boundary values must be finite and >= 0".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of grid steps (nodes minus one).
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Piecewise-constant-left evaluation: `a(t) = a(t_k)` for
    /// `t in [t_k, t_{k+1})`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= t);
        self.values[k.saturating_sub(1)]
    }

    /// First grid index where `psi >= a(t)`; `expired` is set when the path
    /// never reaches the boundary and stopping happens at the horizon.
    pub fn first_crossing(&self, psi_values: &[f64]) -> Crossing {
        debug_assert_eq!(psi_values.len(), self.values.len());
        for (k, (&psi, &a)) in psi_values.iter().zip(&self.values).enumerate() {
            if psi >= a {
                return Crossing { index: k, expired: false };
            }
        }
        Crossing { index: self.values.len() - 1, expired: true }
    }

    /// CSV serialization, header `t,a`, shortest round-trip float formatting
    /// (lossless on re-parse).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a\n");
        for (t, a) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{t},{a}").unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == "t,a" => {}
            _ => return Err(Error::Csv { line: 1, reason: "expected header `t,a`".into() }),
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (t, a) = line.split_once(',').ok_or(Error::Csv {
                line: i + 1,
                reason: "expected two comma-separated fields".into(),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Csv {
                    line: i + 1,
                    reason: format!("bad number `{s}`: {e}"),
                })
            };
            grid.push(parse(t)?);
            values.push(parse(a)?);
        }
        Self::new(grid, values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Where a path first meets the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    pub index: usize,
    pub expired: bool,
}

/// First crossing of a simulated path, with a grid compatibility check.
pub fn stop_time_on_path(boundary: &Boundary, path: &PsiPath) -> Result<Crossing> {
    if path.times != boundary.grid {
        return Err(Error::GridMismatch("path and boundary grids differ".into()));
    }
    Ok(boundary.first_crossing(&path.values))
}

/// Diagnostics accumulated during a solve.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    /// Backward-pass nodes where the root stayed at the lower bracket
    /// (monotonicity or gain envelope).
    pub clamped_nodes: Vec<usize>,
    /// Nodes whose polished root was moved by the monotone projection by
    /// more than the root tolerance.
    pub projected_nodes: Vec<usize>,
    pub max_projection_shift: f64,
    /// Nodes where the root was below [`ZERO_FLOOR`] and reported as 0.
    pub floored_nodes: Vec<usize>,
    /// Bisections terminated because the objective fell below its own
    /// standard error.
    pub noise_floor_stops: usize,
    /// Total overflowed paths across all nodes.
    pub dropped_paths: usize,
    pub warnings: Vec<String>,
}

/// Solves the boundary on `grid` by backward induction.
///
/// The backward pass walks `k = n-1 .. 0`, each node solving its equation
/// against the already-solved tail with an independent deterministic
/// sub-batch; within a node every candidate level shares the batch (common
/// random numbers). The raw roots are deliberately *not* clamped against
/// the next node during the sweep: a running clamp would absorb only the
/// upward half of the root noise and ratchet the level through flat
/// stretches of the boundary, leaving the solved curve systematically off
/// its own equations. Instead the raw roots carry symmetric noise and
/// monotonicity is restored post-root-finding by isotonic (least-squares)
/// projection, which averages the noise inside flat stretches.
///
/// The returned boundary is nonincreasing with `a(t_k) >= f(t_k)` and
/// `a(T) = f(T-)`.
pub fn solve_boundary(
    problem: &StopProblem,
    grid: &[f64],
    mc: &McConfig,
) -> Result<(Boundary, SolveReport)> {
    validate_grid(grid)?;
    if grid[0] != 0.0 || (grid[grid.len() - 1] - problem.horizon).abs() > 1e-9 {
        return Err(Error::Grid(format!(
            "grid must cover [0, {}], got [{}, {}]",
            problem.horizon,
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    let n = grid.len() - 1;
    let mut raw = vec![0.0; n + 1];
    raw[n] = terminal_value(problem);
    let mut report = SolveReport::default();

    for k in (0..n).rev() {
        let batch = PathBatch::new(
            derive_seed(mc.seed, tag::SOLVE_NODE, k as u64),
            mc.n_paths,
            grid[k..].to_vec(),
        )?;
        let lo = problem.gain_at(grid[k]);
        let root = solve_node(problem, grid, k, &raw[k..], &batch, lo, &mut report)?;
        raw[k] = floor_root(root, k, &mut report);
    }

    let mut values = isotonic_nonincreasing(&raw[..n]);
    values.push(raw[n]);
    for k in 0..n {
        // The projection cannot go below the gain envelope; the envelope is
        // itself nonincreasing, so the floor preserves monotonicity.
        values[k] = values[k].max(problem.gain_at(grid[k])).max(raw[n]);
        let shift = (values[k] - raw[k]).abs();
        if shift > ROOT_TOLERANCE {
            report.projected_nodes.push(k);
        }
        report.max_projection_shift = report.max_projection_shift.max(shift);
    }

    Ok((Boundary::new(grid.to_vec(), values)?, report))
}

fn solve_node(
    problem: &StopProblem,
    grid: &[f64],
    k: usize,
    tail_values: &[f64],
    batch: &PathBatch,
    lo: f64,
    report: &mut SolveReport,
) -> Result<f64> {
    // Threshold at the start node is irrelevant under HalfCrossing.
    let mut tail = tail_values.to_vec();
    tail[0] = f64::INFINITY;
    let estimator = VolterraEstimator::with_tail(problem, &grid[k..], &tail, batch)?;
    report.dropped_paths += estimator.dropped();
    let objective = |x: f64| estimator.estimate(x, StartNode::HalfCrossing);
    find_root(&objective, grid[k], lo, report, k)
}

fn floor_root(root: f64, node: usize, report: &mut SolveReport) -> f64 {
    if root < ZERO_FLOOR {
        if root != 0.0 {
            report.floored_nodes.push(node);
        }
        0.0
    } else {
        root
    }
}

/// Least-squares projection onto nonincreasing sequences
/// (pool-adjacent-violators on the reversed order).
fn isotonic_nonincreasing(raw: &[f64]) -> Vec<f64> {
    // (sum, count) blocks over the reversed (nondecreasing) sequence
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(raw.len());
    for &v in raw.iter().rev() {
        let mut block = (v, 1);
        while let Some(&(sum, len)) = blocks.last() {
            if block.0 * len as f64 <= sum * block.1 as f64 {
                blocks.pop();
                block = (block.0 + sum, block.1 + len);
            } else {
                break;
            }
        }
        blocks.push(block);
    }
    let mut out = Vec::with_capacity(raw.len());
    for &(sum, len) in &blocks {
        out.extend(std::iter::repeat(sum / len as f64).take(len));
    }
    out.reverse();
    out
}

fn find_root(
    objective: &dyn Fn(f64) -> IntegralEstimate,
    t: f64,
    lo: f64,
    report: &mut SolveReport,
    node: usize,
) -> Result<f64> {
    let mut lo = lo;
    let f_lo = objective(lo);
    if f_lo.value <= 0.0 {
        // Root at or below the lower bracket: keep the bracket value so the
        // boundary stays above the gain envelope and nonincreasing.
        if f_lo.value < -3.0 * f_lo.std_error {
            report.warnings.push(format!(
                "node {node} (t = {t}): objective {:.3e} significantly negative at lower bracket {lo}",
                f_lo.value
            ));
        }
        report.clamped_nodes.push(node);
        return Ok(lo);
    }
    if f_lo.value < f_lo.std_error {
        // Below the noise floor the root is statistically at the bracket.
        report.noise_floor_stops += 1;
        return Ok(lo);
    }

    let mut hi = lo + 1.0;
    let mut f_hi = objective(hi);
    let mut doublings = 0;
    while f_hi.value > 0.0 {
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::BracketFailure {
                t,
                lo,
                hi,
                f_lo: f_lo.value,
                f_hi: f_hi.value,
            });
        }
        hi *= 2.0;
        f_hi = objective(hi);
    }

    // Bisect to the absolute tolerance, stopping early once the objective
    // is below its own noise. Near the horizon the estimates turn almost
    // deterministic (the standard error collapses faster than the
    // objective's slope); when the residual at the x-tolerance still
    // exceeds the noise, the bisection keeps going until it does not.
    let mut best = 0.5 * (lo + hi);
    loop {
        let mid = 0.5 * (lo + hi);
        let f_mid = objective(mid);
        best = mid;
        if f_mid.value.abs() < f_mid.std_error {
            report.noise_floor_stops += 1;
            break;
        }
        if hi - lo <= ROOT_TOLERANCE && f_mid.value.abs() <= 3.0 * f_mid.std_error {
            break;
        }
        if hi - lo <= 1e-11 {
            break;
        }
        if f_mid.value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;
    use crate::model::{DisorderModel, ProblemKind, UniformPrior};

    fn figure_problem(kind: ProblemKind) -> StopProblem {
        let model = DisorderModel::new(1.0, -1.0, 1.0, 1.0).unwrap();
        let prior = UniformPrior::new(0.0, 1.0, 1.0).unwrap();
        StopProblem::for_kind(kind, &model, &prior).unwrap()
    }

    #[test]
    fn terminal_levels() {
        assert_eq!(terminal_value(&figure_problem(ProblemKind::Linear)), 0.5);
        assert!(terminal_value(&figure_problem(ProblemKind::Geometric)).abs() < 1e-15);
        // geometric with an atom at T: f(T-) = (mu1/|mu2|)(1 - g0 - rho T)
        let model = DisorderModel::new(1.0, -1.0, 1.0, 1.0).unwrap();
        let prior = UniformPrior::new(0.0, 0.5, 1.0).unwrap();
        let p = StopProblem::geometric(&model, &prior).unwrap();
        assert!((terminal_value(&p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn value_at_is_left_constant() {
        let b = Boundary::new(vec![0.0, 0.5, 1.0], vec![2.0, 1.5, 1.0]).unwrap();
        assert_eq!(b.value_at(0.0), 2.0);
        assert_eq!(b.value_at(0.49), 2.0);
        assert_eq!(b.value_at(0.5), 1.5);
        assert_eq!(b.value_at(0.99), 1.5);
        assert_eq!(b.value_at(1.0), 1.0);
    }

    #[test]
    fn crossing_cases() {
        let b = Boundary::new(vec![0.0, 0.5, 1.0], vec![2.0, 1.5, 1.0]).unwrap();
        // immediate stop
        let c = b.first_crossing(&[2.5, 0.0, 0.0]);
        assert_eq!((c.index, c.expired), (0, false));
        // never crosses
        let c = b.first_crossing(&[0.1, 0.2, 0.3]);
        assert_eq!((c.index, c.expired), (2, true));
        // crossing exactly at the horizon node is not "expired"
        let c = b.first_crossing(&[0.1, 0.2, 1.0]);
        assert_eq!((c.index, c.expired), (2, false));
    }

    #[test]
    fn raising_boundary_never_stops_earlier() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &(
                    proptest::collection::vec(0.0f64..3.0, 8),
                    proptest::collection::vec(0.0f64..2.0, 8),
                    0.001f64..1.0,
                ),
                |(psi, mut levels, eps)| {
                    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let grid: Vec<f64> = (0..8).map(|k| k as f64 / 7.0).collect();
                    let low = Boundary::new(grid.clone(), levels.clone()).unwrap();
                    let high =
                        Boundary::new(grid, levels.iter().map(|v| v + eps).collect()).unwrap();
                    prop_assert!(
                        high.first_crossing(&psi).index >= low.first_crossing(&psi).index
                    );
                    Ok(())
                },
            )
            .unwrap();
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let b = Boundary::new(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![0.987654321987654, 0.7654320987654321, 0.5000000000000001, 0.5],
        )
        .unwrap();
        let text = b.to_csv();
        let back = Boundary::from_csv(&text).unwrap();
        assert_eq!(b, back);
        assert!(text.starts_with("t,a\n"));
    }

    #[test]
    fn csv_errors_are_positional() {
        assert!(matches!(
            Boundary::from_csv("time,level\n0,1\n"),
            Err(Error::Csv { line: 1, .. })
        ));
        assert!(matches!(
            Boundary::from_csv("t,a\n0,1\n0.5;0.9\n"),
            Err(Error::Csv { line: 3, .. })
        ));
        assert!(matches!(
            Boundary::from_csv("t,a\n0,abc\n"),
            Err(Error::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn one_step_solve_matches_dense_scan() {
        // On the grid {0, T} the root can be located by brute-force scan of
        // the same objective; bisection must land within resolution. A
        // prior with G(0) > 0 keeps the one-interval equation nondegenerate
        // (with g0 = 0 the quadrature pins psi_T >= rho T / 2 = a(T), so
        // the indicator never fires and the root sits exactly at the
        // terminal level).
        let model = DisorderModel::new(1.0, -1.0, 1.0, 1.0).unwrap();
        let prior = UniformPrior::new(0.5, 0.5, 1.0).unwrap();
        let problem = StopProblem::linear(&model, &prior).unwrap();
        let grid = vec![0.0, 1.0];
        let mc = McConfig { seed: 77, n_paths: 4_000 };
        let (boundary, _) = solve_boundary(&problem, &grid, &mc).unwrap();
        assert_eq!(boundary.values()[1], 0.5);
        let root = boundary.values()[0];

        let batch = PathBatch::new(
            derive_seed(mc.seed, tag::SOLVE_NODE, 0),
            mc.n_paths,
            grid.clone(),
        )
        .unwrap();
        let est = VolterraEstimator::with_tail(
            &problem,
            &grid,
            &[f64::INFINITY, 0.5],
            &batch,
        )
        .unwrap();
        let mut scan_root = None;
        let mut prev = est.estimate(0.5, StartNode::HalfCrossing).value;
        assert!(prev > 0.0, "objective not positive at the gain level: {prev}");
        let mut x = 0.5;
        while x < 3.0 {
            let next_x = x + 1e-4;
            let next = est.estimate(next_x, StartNode::HalfCrossing).value;
            if prev > 0.0 && next <= 0.0 {
                scan_root = Some(next_x);
                break;
            }
            prev = next;
            x = next_x;
        }
        let scan_root = scan_root.expect("scan found no sign change");
        // The noise-floor early stop resolves the root only up to
        // se / |slope|; allow that width on top of the scan resolution.
        let h = 0.02;
        let f_hi = est.estimate(scan_root + h, StartNode::HalfCrossing);
        let f_lo = est.estimate(scan_root - h, StartNode::HalfCrossing);
        let slope = (f_hi.value - f_lo.value) / (2.0 * h);
        let width = (f_hi.std_error / slope.abs()).max(ROOT_TOLERANCE);
        assert!(
            (scan_root - root).abs() <= 2.0 * ROOT_TOLERANCE + 3.0 * width,
            "bisection {root} vs scan {scan_root} (noise width {width})"
        );
    }

    #[test]
    fn solved_boundaries_have_the_right_shape() {
        let mc = McConfig { seed: 5, n_paths: 3_000 };
        let grid = uniform_grid(1.0, 50);

        let lin = figure_problem(ProblemKind::Linear);
        let (bl, _) = solve_boundary(&lin, &grid, &mc).unwrap();
        assert_eq!(*bl.values().last().unwrap(), 0.5);
        assert!(bl.values()[0] > 0.5, "a(0) = {} should exceed a(T)", bl.values()[0]);
        for (k, w) in bl.values().windows(2).enumerate() {
            assert!(w[0] >= w[1], "boundary increased at node {k}");
            assert!(w[0] >= lin.gain_at(grid[k]) - 1e-12);
        }

        let geo = figure_problem(ProblemKind::Geometric);
        let (bg, _) = solve_boundary(&geo, &grid, &mc).unwrap();
        assert_eq!(*bg.values().last().unwrap(), 0.0);
        assert!(bg.values()[0] > 0.0);
        for (k, w) in bg.values().windows(2).enumerate() {
            assert!(w[0] >= w[1], "boundary increased at node {k}");
            assert!(w[0] >= geo.gain_at(grid[k]) - 1e-12, "below gain envelope at node {k}");
        }
    }

    #[test]
    fn scaling_the_integrand_does_not_move_the_root() {
        // The concrete form of the node equation carries an extra factor of
        // payoff_scale in the integrand relative to the generic form. The
        // factor scales the estimate and its standard error together, so
        // every bisection decision is identical and the roots coincide.
        let problem = figure_problem(ProblemKind::Linear);
        let grid = uniform_grid(1.0, 8);
        let k = 4;
        let batch = PathBatch::new(
            derive_seed(21, tag::SOLVE_NODE, k as u64),
            2_000,
            grid[k..].to_vec(),
        )
        .unwrap();
        let mut tail = vec![0.55; grid.len() - k];
        *tail.last_mut().unwrap() = 0.5;
        tail[0] = f64::INFINITY;
        let est = VolterraEstimator::with_tail(&problem, &grid[k..], &tail, &batch).unwrap();
        let scale = problem.payoff_scale;
        let generic = |x: f64| est.estimate(x, StartNode::HalfCrossing);
        let concrete = |x: f64| {
            let e = est.estimate(x, StartNode::HalfCrossing);
            IntegralEstimate {
                value: scale * e.value,
                std_error: scale * e.std_error,
                n_paths: e.n_paths,
            }
        };
        let mut r1 = SolveReport::default();
        let mut r2 = SolveReport::default();
        let a = find_root(&generic, grid[k], 0.55, &mut r1, k).unwrap();
        let b = find_root(&concrete, grid[k], 0.55, &mut r2, k).unwrap();
        assert_eq!(a, b, "generic root {a} vs concrete root {b}");
    }

    #[test]
    fn refining_the_grid_barely_moves_the_boundary() {
        let problem = figure_problem(ProblemKind::Linear);
        let mc = McConfig { seed: 13, n_paths: 4_000 };
        let (coarse, _) = solve_boundary(&problem, &uniform_grid(1.0, 25), &mc).unwrap();
        let (fine, _) = solve_boundary(&problem, &uniform_grid(1.0, 50), &mc).unwrap();
        let mut max_delta = 0.0f64;
        for (k, &t) in coarse.grid().iter().enumerate() {
            let delta = (coarse.values()[k] - fine.value_at(t)).abs();
            max_delta = max_delta.max(delta);
        }
        assert!(max_delta < 0.05, "grid refinement moved the boundary by {max_delta}");
    }
}
