//! Independent validation of solved boundaries against the raw disorder
//! model.
//!
//! Nothing here reuses the expectation engine's integrand path: policies
//! are scored by simulating the observation process itself (random change
//! time, drift switch, noise), running the stopping rule on the statistic
//! computed *from the observations*, and averaging the realized payoff.
//! The change-of-measure identities
//!
//! ```text
//! E X_tau                      = E~ integral_0^tau (mu1 - (mu1-mu2) psi_s) ds
//! E exp(X_tau - sigma^2 tau/2) = 1 + E~ integral_0^tau e^{mu1 s}
//!                                      [mu1 (1-G(s)) - |mu2| psi_s] ds
//! ```
//!
//! (`E~` the respective reference-measure expectation) are checked
//! numerically for simple rules, which exercises exactly the reduction the
//! boundary solver builds on.

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::expectation::{McConfig, StartNode, VolterraEstimator};
use crate::grid::node_index;
use crate::model::{DisorderModel, ProblemKind, StopProblem, UniformPrior};
use crate::rng::{derive_seed, path_rng, tag};
use crate::simulate::{
    psi_from_observation, psi_path_exact, simulate_disorder_path, PathBatch,
    MAX_OVERFLOW_FRACTION,
};

/// A stopping rule evaluated at grid resolution.
#[derive(Debug, Clone)]
pub enum StoppingRule {
    /// Stop at a fixed time (must be a grid node).
    FixedTime(f64),
    /// Stop when the statistic first reaches a constant level, else at T.
    Threshold(f64),
    /// Stop when the statistic first reaches a time-dependent boundary,
    /// else at T.
    Curve(Boundary),
}

impl StoppingRule {
    pub fn name(&self) -> String {
        match self {
            StoppingRule::FixedTime(t) => format!("fixed time {t}"),
            StoppingRule::Threshold(l) => format!("threshold {l}"),
            StoppingRule::Curve(_) => "solved boundary".to_string(),
        }
    }

    /// Grid index at which this rule stops on a statistic path.
    fn stop_index(&self, grid: &[f64], psi: &[f64]) -> Result<usize> {
        let n = grid.len() - 1;
        match self {
            StoppingRule::FixedTime(t) => node_index(grid, *t)
                .ok_or_else(|| Error::GridMismatch(format!("time {t} is not a grid node"))),
            StoppingRule::Threshold(level) => {
                Ok(psi.iter().position(|&v| v >= *level).unwrap_or(n))
            }
            StoppingRule::Curve(boundary) => {
                if boundary.grid() != grid {
                    return Err(Error::GridMismatch(
                        "rule boundary is on a different grid".into(),
                    ));
                }
                Ok(boundary.first_crossing(psi).index)
            }
        }
    }
}

/// Raw-model estimate of a policy's expected payoff.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PolicyEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Fraction of paths whose stop index is the horizon node.
    pub frac_at_horizon: f64,
    pub n_paths: usize,
}

fn payoff(kind: ProblemKind, model: &DisorderModel, x_at_stop: f64, t_at_stop: f64) -> f64 {
    match kind {
        ProblemKind::Linear => x_at_stop,
        ProblemKind::Geometric => {
            (x_at_stop - 0.5 * model.sigma() * model.sigma() * t_at_stop).exp()
        }
    }
}

/// Scores several rules on one shared ensemble of raw disorder paths
/// (common random numbers across rules).
pub fn evaluate_policies(
    model: &DisorderModel,
    prior: &UniformPrior,
    kind: ProblemKind,
    rules: &[StoppingRule],
    grid: &[f64],
    mc: &McConfig,
) -> Result<Vec<PolicyEstimate>> {
    let batch = PathBatch::new(derive_seed(mc.seed, tag::POLICY, 0), mc.n_paths, grid.to_vec())?;
    let theta_seed = derive_seed(mc.seed, tag::THETA, 0);
    let n = grid.len() - 1;

    // Fail fast on rules that do not fit the grid.
    for rule in rules {
        rule.stop_index(grid, &vec![0.0; grid.len()])?;
    }

    let per_path: Vec<Option<Vec<(f64, bool)>>> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let theta = prior.sample_theta(&mut path_rng(theta_seed, p as u64));
            let increments = batch.increments(p);
            let x = simulate_disorder_path(model, theta, grid, &increments)
                .expect("grid validated");
            let psi = psi_from_observation(model, prior, grid, &x).expect("grid validated");
            if psi.overflow {
                return None;
            }
            Some(
                rules
                    .iter()
                    .map(|rule| {
                        let idx = rule.stop_index(grid, &psi.values).expect("checked above");
                        (payoff(kind, model, x[idx], grid[idx]), idx == n)
                    })
                    .collect(),
            )
        })
        .collect();

    let dropped = per_path.iter().filter(|r| r.is_none()).count();
    let limit = (MAX_OVERFLOW_FRACTION * mc.n_paths as f64).ceil() as usize;
    if dropped > limit {
        return Err(Error::TooManyOverflows { dropped, total: mc.n_paths, limit });
    }
    let used = mc.n_paths - dropped;

    Ok((0..rules.len())
        .map(|r| {
            let mut sum = 0.0;
            let mut at_end = 0usize;
            for row in per_path.iter().flatten() {
                sum += row[r].0;
                at_end += row[r].1 as usize;
            }
            let mean = sum / used as f64;
            let var = per_path
                .iter()
                .flatten()
                .map(|row| (row[r].0 - mean).powi(2))
                .sum::<f64>()
                / (used - 1).max(1) as f64;
            PolicyEstimate {
                mean,
                std_error: (var / used as f64).sqrt(),
                frac_at_horizon: at_end as f64 / used as f64,
                n_paths: used,
            }
        })
        .collect())
}

/// Scores one rule; see [`evaluate_policies`].
pub fn evaluate_policy(
    model: &DisorderModel,
    prior: &UniformPrior,
    kind: ProblemKind,
    rule: &StoppingRule,
    grid: &[f64],
    mc: &McConfig,
) -> Result<PolicyEstimate> {
    Ok(evaluate_policies(model, prior, kind, std::slice::from_ref(rule), grid, mc)?
        .remove(0))
}

/// Result of one two-sided numerical check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Combined standard error `sqrt(se_lhs^2 + se_rhs^2)`.
    pub std_error: f64,
    pub pass: bool,
}

impl CheckResult {
    fn two_sided(name: String, lhs: (f64, f64), rhs: (f64, f64)) -> Self {
        let std_error = (lhs.1 * lhs.1 + rhs.1 * rhs.1).sqrt();
        let pass = (lhs.0 - rhs.0).abs() <= 3.0 * std_error;
        CheckResult { name, lhs: lhs.0, rhs: rhs.0, std_error, pass }
    }
}

/// Checks one change-of-measure identity: the raw-model payoff of `rule`
/// (left side) against the reference-measure running-integral
/// representation (right side), each with its own independent ensemble.
pub fn check_lemma_identity(
    model: &DisorderModel,
    prior: &UniformPrior,
    kind: ProblemKind,
    rule: &StoppingRule,
    grid: &[f64],
    mc: &McConfig,
) -> Result<CheckResult> {
    let lhs = evaluate_policy(model, prior, kind, rule, grid, mc)?;

    let problem = StopProblem::for_kind(kind, model, prior)?;
    let batch = PathBatch::new(
        derive_seed(mc.seed, tag::IDENTITY_PSI, 0),
        mc.n_paths,
        grid.to_vec(),
    )?;
    let integrals: Vec<Option<f64>> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let increments = batch.increments(p);
            let psi = psi_path_exact(&problem, problem.psi0, grid, &increments)
                .expect("grid validated");
            if psi.overflow {
                return None;
            }
            let idx = rule.stop_index(grid, &psi.values).expect("validated by lhs pass");
            // trapezoid of e^{lambda s}(f(s) - psi_s) up to the stop node
            let h = |j: usize| {
                (problem.lambda * grid[j]).exp() * (problem.gain_at(grid[j]) - psi.values[j])
            };
            let mut acc = 0.0;
            for j in 1..=idx {
                acc += 0.5 * (h(j - 1) + h(j)) * (grid[j] - grid[j - 1]);
            }
            Some(acc)
        })
        .collect();

    let dropped = integrals.iter().filter(|v| v.is_none()).count();
    let limit = (MAX_OVERFLOW_FRACTION * mc.n_paths as f64).ceil() as usize;
    if dropped > limit {
        return Err(Error::TooManyOverflows { dropped, total: mc.n_paths, limit });
    }
    let used = mc.n_paths - dropped;
    let mean = integrals.iter().flatten().sum::<f64>() / used as f64;
    let var = integrals.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (used - 1).max(1) as f64;
    let rhs = (
        problem.map_value(mean),
        problem.payoff_scale * (var / used as f64).sqrt(),
    );

    Ok(CheckResult::two_sided(
        format!("identity {kind} / {}", rule.name()),
        (lhs.mean, lhs.std_error),
        rhs,
    ))
}

/// Dominance report: the solved rule against a set of alternatives under
/// common random numbers.
#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    pub solved: PolicyEstimate,
    pub alternatives: Vec<(String, PolicyEstimate)>,
    pub pass: bool,
}

/// Checks that no alternative rule (stop now, hold to T, constant
/// thresholds) beats the solved boundary by more than 3 combined standard
/// errors.
pub fn dominance_check(
    model: &DisorderModel,
    prior: &UniformPrior,
    kind: ProblemKind,
    boundary: &Boundary,
    mc: &McConfig,
) -> Result<DominanceReport> {
    let grid = boundary.grid().to_vec();
    let horizon = boundary.horizon();
    let a0 = boundary.values()[0];
    let a_t = *boundary.values().last().unwrap();
    let rules = vec![
        StoppingRule::Curve(boundary.clone()),
        StoppingRule::FixedTime(0.0),
        StoppingRule::FixedTime(horizon),
        StoppingRule::Threshold(a0),
        StoppingRule::Threshold(0.5 * (a0 + a_t)),
        StoppingRule::Threshold(a_t),
    ];
    let mut estimates = evaluate_policies(model, prior, kind, &rules, &grid, mc)?;
    let solved = estimates.remove(0);
    let mut pass = true;
    let alternatives: Vec<(String, PolicyEstimate)> = rules[1..]
        .iter()
        .zip(estimates)
        .map(|(rule, est)| {
            let combined = (solved.std_error.powi(2) + est.std_error.powi(2)).sqrt();
            pass &= solved.mean >= est.mean - 3.0 * combined;
            (rule.name(), est)
        })
        .collect();
    Ok(DominanceReport { solved, alternatives, pass })
}

/// Stop-at-horizon thresholds for [`dichotomy_check`].
#[derive(Debug, Clone, Copy)]
pub struct DichotomyTolerance {
    /// Largest acceptable `P(tau = T)` for the geometric problem (pure
    /// grid artifact when the prior has no atom).
    pub max_geometric: f64,
    /// Smallest acceptable `P(tau = T)` for the linear problem.
    pub min_linear: f64,
}

impl Default for DichotomyTolerance {
    fn default() -> Self {
        Self { max_geometric: 0.02, min_linear: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub frac_linear_at_horizon: f64,
    pub frac_geometric_at_horizon: f64,
    pub std_error_linear: f64,
    pub std_error_geometric: f64,
    pub pass_linear: bool,
    pub pass_geometric: bool,
}

/// With no prior mass at T the geometric boundary ends at 0, forcing a
/// crossing before the horizon (up to grid resolution), while the linear
/// boundary ends at a positive level and is avoided with positive
/// probability. Measures both stop-at-horizon fractions on the raw model.
pub fn dichotomy_check(
    model: &DisorderModel,
    prior: &UniformPrior,
    linear: &Boundary,
    geometric: &Boundary,
    mc: &McConfig,
    tol: DichotomyTolerance,
) -> Result<DichotomyReport> {
    if prior.atom_at_horizon() > 1e-9 {
        return Err(Error::Domain(
            "dichotomy check requires a prior without mass at T".into(),
        ));
    }
    if linear.grid() != geometric.grid() {
        return Err(Error::GridMismatch("boundaries are on different grids".into()));
    }
    let grid = linear.grid();
    let n = grid.len() - 1;
    let batch = PathBatch::new(derive_seed(mc.seed, tag::POLICY, 1), mc.n_paths, grid.to_vec())?;
    let theta_seed = derive_seed(mc.seed, tag::THETA, 1);

    let flags: Vec<(bool, bool)> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let theta = prior.sample_theta(&mut path_rng(theta_seed, p as u64));
            let increments = batch.increments(p);
            let x = simulate_disorder_path(model, theta, grid, &increments)
                .expect("grid validated");
            let psi = psi_from_observation(model, prior, grid, &x).expect("grid validated");
            (
                linear.first_crossing(&psi.values).index == n,
                geometric.first_crossing(&psi.values).index == n,
            )
        })
        .collect();

    let m = mc.n_paths as f64;
    let frac_lin = flags.iter().filter(|f| f.0).count() as f64 / m;
    let frac_geo = flags.iter().filter(|f| f.1).count() as f64 / m;
    let se = |f: f64| (f * (1.0 - f) / m).sqrt();
    Ok(DichotomyReport {
        frac_linear_at_horizon: frac_lin,
        frac_geometric_at_horizon: frac_geo,
        std_error_linear: se(frac_lin),
        std_error_geometric: se(frac_geo),
        pass_linear: frac_lin > tol.min_linear,
        pass_geometric: frac_geo < tol.max_geometric,
    })
}

/// One node of the self-consistency check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualNode {
    pub t: f64,
    pub residual: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub nodes: Vec<ResidualNode>,
    /// Fraction of nodes with |residual| <= 3 standard errors.
    pub frac_within: f64,
    pub pass: bool,
}

/// Plugs the solved boundary back into its own node equations with fresh
/// ensembles: residuals should vanish within Monte Carlo noise at (at
/// least) 95% of nodes.
pub fn residual_check(
    problem: &StopProblem,
    boundary: &Boundary,
    mc: &McConfig,
) -> Result<ResidualReport> {
    let grid = boundary.grid();
    let n = grid.len() - 1;
    let mut nodes = Vec::with_capacity(n);
    for k in 0..n {
        let batch = PathBatch::new(
            derive_seed(mc.seed, tag::RESIDUAL, k as u64),
            mc.n_paths,
            grid[k..].to_vec(),
        )?;
        let est =
            VolterraEstimator::with_tail(problem, &grid[k..], &boundary.values()[k..], &batch)?;
        let r = est.estimate(boundary.values()[k], StartNode::HalfCrossing);
        nodes.push(ResidualNode { t: grid[k], residual: r.value, std_error: r.std_error });
    }
    let within = nodes
        .iter()
        .filter(|r| r.residual.abs() <= 3.0 * r.std_error)
        .count();
    let frac_within = within as f64 / n as f64;
    Ok(ResidualReport { nodes, frac_within, pass: frac_within >= 0.95 })
}

/// Machine-readable validation report (one entry per executed check).
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(checks: Vec<CheckResult>) -> Self {
        let passed = checks.iter().all(|c| c.pass);
        Self { checks, passed }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_grid;

    fn figure() -> (DisorderModel, UniformPrior) {
        (
            DisorderModel::new(1.0, -1.0, 1.0, 1.0).unwrap(),
            UniformPrior::new(0.0, 1.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn degenerate_rules_have_exact_payoffs() {
        let (model, prior) = figure();
        let grid = uniform_grid(1.0, 20);
        let mc = McConfig { seed: 3, n_paths: 2_000 };
        // threshold 0 stops at once (psi_0 = 0 >= 0): payoff 0 / 1 exactly
        let zero = StoppingRule::Threshold(0.0);
        let lin = evaluate_policy(&model, &prior, ProblemKind::Linear, &zero, &grid, &mc).unwrap();
        assert_eq!(lin.mean, 0.0);
        assert_eq!(lin.std_error, 0.0);
        let geo =
            evaluate_policy(&model, &prior, ProblemKind::Geometric, &zero, &grid, &mc).unwrap();
        assert_eq!(geo.mean, 1.0);
        assert_eq!(geo.std_error, 0.0);
        assert_eq!(geo.frac_at_horizon, 0.0);
    }

    #[test]
    fn hold_to_horizon_payoff_is_zero_on_figure_model() {
        // E X_T = mu1 T + (mu2 - mu1) E (T - theta)^+ = 1 - 2 * 0.5 = 0.
        let (model, prior) = figure();
        let grid = uniform_grid(1.0, 20);
        let mc = McConfig { seed: 4, n_paths: 40_000 };
        let rule = StoppingRule::FixedTime(1.0);
        let est = evaluate_policy(&model, &prior, ProblemKind::Linear, &rule, &grid, &mc).unwrap();
        assert!(
            est.mean.abs() <= 3.0 * est.std_error,
            "E X_T = {} +- {}",
            est.mean,
            est.std_error
        );
        assert_eq!(est.frac_at_horizon, 1.0);
    }

    #[test]
    fn identity_anchor_at_half_horizon() {
        // E X_{1/2} = mu1/2 + (mu2 - mu1) E (1/2 - theta)^+ = 0.5 - 0.25.
        let (model, prior) = figure();
        let grid = uniform_grid(1.0, 20);
        let mc = McConfig { seed: 5, n_paths: 40_000 };
        let rule = StoppingRule::FixedTime(0.5);
        let check =
            check_lemma_identity(&model, &prior, ProblemKind::Linear, &rule, &grid, &mc).unwrap();
        assert!((check.lhs - 0.25).abs() <= 3.0 * check.std_error, "lhs {} ", check.lhs);
        assert!(check.pass, "lhs {} vs rhs {} +- {}", check.lhs, check.rhs, check.std_error);
    }

    #[test]
    fn identities_hold_for_simple_rules() {
        let (model, prior) = figure();
        let grid = uniform_grid(1.0, 20);
        let mc = McConfig { seed: 6, n_paths: 20_000 };
        for kind in [ProblemKind::Linear, ProblemKind::Geometric] {
            for rule in [
                StoppingRule::FixedTime(0.0),
                StoppingRule::FixedTime(0.5),
                StoppingRule::Threshold(0.75),
            ] {
                let check = check_lemma_identity(&model, &prior, kind, &rule, &grid, &mc).unwrap();
                assert!(
                    check.pass,
                    "{}: lhs {} vs rhs {} +- {}",
                    check.name, check.lhs, check.rhs, check.std_error
                );
            }
        }
    }

    #[test]
    fn fixed_time_rule_must_sit_on_the_grid() {
        let (model, prior) = figure();
        let grid = uniform_grid(1.0, 3);
        let mc = McConfig { seed: 7, n_paths: 10 };
        let rule = StoppingRule::FixedTime(0.5);
        assert!(
            evaluate_policy(&model, &prior, ProblemKind::Linear, &rule, &grid, &mc).is_err()
        );
    }

    #[test]
    fn report_serialization_is_stable() {
        let report = ValidationReport::new(vec![CheckResult {
            name: "demo".into(),
            lhs: 1.0,
            rhs: 1.5,
            std_error: 0.5,
            pass: true,
        }]);
        let a = report.to_json();
        let b = report.to_json();
        assert_eq!(a, b);
        assert!(a.contains("\"demo\""));
        assert!(a.ends_with('\n'));
    }
}
