//! Domain types: the observed process with a drift change, the prior on the
//! change time, and the generic optimal stopping problem both concrete
//! problems reduce to.
//!
//! The observation is `X_t = mu1*t + (mu2 - mu1)*(t - theta)^+ + sigma*B_t`:
//! drift `mu1 > 0` before the random change time `theta`, drift `mu2 < 0`
//! after. The detection statistic `psi` (a likelihood-ratio average over the
//! prior) satisfies `d psi = rho dt - mu * psi dXtilde` with
//! `Xtilde = (X - mu1 t)/sigma` and signal-to-noise ratio
//! `mu = (mu1 - mu2)/sigma`. Under the reference measures used to price the
//! two problems, `psi` follows the generic dynamics
//! `d psi = (rho + b*psi) dt - mu*psi dB`, and the objective is
//! `sup_tau E integral_0^tau e^{lambda s} (f(s) - psi_s) ds` for a
//! nonincreasing gain level `f`. [`StopProblem`] carries `(lambda, b, rho,
//! mu, f)` plus the affine map back to the original payoff.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Observed-process parameters. The drift switches from `mu1` to `mu2` at
/// the disorder time; `snr` is the size of the switch in noise units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisorderModel {
    mu1: f64,
    mu2: f64,
    sigma: f64,
    horizon: f64,
}

impl DisorderModel {
    /// Requires `mu1 > 0 > mu2`, `sigma > 0`, `horizon > 0`.
    pub fn new(mu1: f64, mu2: f64, sigma: f64, horizon: f64) -> Result<Self> {
        fn check(key: &'static str, ok: bool, reason: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter { key, reason: reason.to_string() })
            }
        }
        check("mu1", mu1.is_finite() && mu1 > 0.0, "must be finite and > 0")?;
        check("mu2", mu2.is_finite() && mu2 < 0.0, "must be finite and < 0")?;
        check("sigma", sigma.is_finite() && sigma > 0.0, "must be finite and > 0")?;
        check("T", horizon.is_finite() && horizon > 0.0, "must be finite and > 0")?;
        Ok(Self { mu1, mu2, sigma, horizon })
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Signal-to-noise ratio `(mu1 - mu2) / sigma`; always > 0.
    pub fn snr(&self) -> f64 {
        (self.mu1 - self.mu2) / self.sigma
    }
}

/// Law of the disorder time on [0, T]: mass `g0` at 0, constant density
/// `rho` on [0, T), and the leftover mass `1 - g0 - rho*T` as an atom at T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPrior {
    g0: f64,
    rho: f64,
    horizon: f64,
}

impl UniformPrior {
    /// Requires `g0 in [0, 1)` and `rho in (0, (1 - g0)/T]`.
    pub fn new(g0: f64, rho: f64, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter {
                key: "T",
                reason: "must be finite and > 0".into(),
            });
        }
        if !(g0.is_finite() && (0.0..1.0).contains(&g0)) {
            return Err(Error::InvalidParameter {
                key: "g0",
                reason: "must lie in [0, 1)".into(),
            });
        }
        // Tolerate rounding in rho = (1 - g0)/T given as a decimal.
        let max_rho = (1.0 - g0) / horizon;
        if !(rho.is_finite() && rho > 0.0 && rho <= max_rho * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::InvalidParameter {
                key: "rho",
                reason: format!("must lie in (0, (1 - g0)/T] = (0, {max_rho}]"),
            });
        }
        Ok(Self { g0, rho, horizon })
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Mass at the right endpoint, `1 - g0 - rho*T`, clamped against
    /// rounding noise.
    pub fn atom_at_horizon(&self) -> f64 {
        (1.0 - self.g0 - self.rho * self.horizon).max(0.0)
    }

    /// Distribution function: `g0 + rho*t` on [0, T), jumping to 1 at T.
    pub fn cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            0.0
        } else if t < self.horizon {
            self.g0 + self.rho * t
        } else {
            1.0
        }
    }

    /// Left limit of the cdf at T, `g0 + rho*T` (< 1 exactly when there is
    /// an atom at T).
    pub fn cdf_at_horizon_left(&self) -> f64 {
        (self.g0 + self.rho * self.horizon).min(1.0)
    }

    /// Mean of the disorder time.
    pub fn mean(&self) -> f64 {
        let t = self.horizon;
        self.rho * t * t / 2.0 + self.atom_at_horizon() * t
    }

    /// Draws a disorder time by inverting the cdf with a single uniform:
    /// 0 with probability `g0`, uniform on [0, T) with probability `rho*T`,
    /// T otherwise.
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.g0 {
            0.0
        } else if u < self.g0 + self.rho * self.horizon {
            (u - self.g0) / self.rho
        } else {
            self.horizon
        }
    }
}

/// Nonincreasing gain level `f(t)` of the generic stopping problem,
/// strictly positive on [0, T). Closed forms cover both concrete problems;
/// `Custom` is an extension hook (its evaluation at T must return the left
/// limit `f(T-)`).
#[derive(Clone)]
pub enum GainFunction {
    Constant(f64),
    Affine { value0: f64, slope: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl GainFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            GainFunction::Constant(c) => *c,
            GainFunction::Affine { value0, slope } => value0 + slope * t,
            GainFunction::Custom(f) => f(t),
        }
    }
}

impl fmt::Debug for GainFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainFunction::Constant(c) => write!(f, "Constant({c})"),
            GainFunction::Affine { value0, slope } => {
                write!(f, "Affine {{ value0: {value0}, slope: {slope} }}")
            }
            GainFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Which concrete problem a generic instance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Maximize `E X_tau`.
    Linear,
    /// Maximize `E exp(X_tau - sigma^2 tau / 2)`.
    Geometric,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::Linear => write!(f, "linear"),
            ProblemKind::Geometric => write!(f, "geometric"),
        }
    }
}

/// Generic finite-horizon stopping problem
///
/// ```text
/// V_gen = sup_{tau <= T} E integral_0^tau e^{lambda s} (f(s) - psi_s) ds,
/// d psi = (rho + b psi) dt - mu psi dB,   psi_0 = psi0,
/// ```
///
/// whose solution maps back to the original problem through
/// `V = payoff_offset + payoff_scale * V_gen`.
#[derive(Debug, Clone)]
pub struct StopProblem {
    pub lambda: f64,
    pub b: f64,
    pub rho: f64,
    pub mu: f64,
    pub gain: GainFunction,
    pub psi0: f64,
    pub payoff_scale: f64,
    pub payoff_offset: f64,
    pub horizon: f64,
}

impl StopProblem {
    /// Reduction of the linear problem `sup E X_tau`: no discounting, the
    /// statistic keeps its raw dynamics (`b = 0`), constant gain level
    /// `mu1/(mu1 - mu2)`, and payoff map `V = (mu1 - mu2) * V_gen`.
    pub fn linear(model: &DisorderModel, prior: &UniformPrior) -> Result<Self> {
        check_horizons(model, prior)?;
        Ok(Self {
            lambda: 0.0,
            b: 0.0,
            rho: prior.rho(),
            mu: model.snr(),
            gain: GainFunction::Constant(model.mu1() / (model.mu1() - model.mu2())),
            psi0: prior.g0(),
            payoff_scale: model.mu1() - model.mu2(),
            payoff_offset: 0.0,
            horizon: model.horizon(),
        })
    }

    /// Reduction of the geometric problem `sup E exp(X_tau - sigma^2 tau/2)`:
    /// the measure change tilts the driver by `sigma`, so the statistic
    /// gains mean reversion `b = -(mu1 - mu2)`, the integrand is discounted
    /// by `e^{mu1 s}`, the gain level decays with the prior tail
    /// `f(t) = (mu1/|mu2|) (1 - G(t))`, and `V = 1 + |mu2| * V_gen`.
    pub fn geometric(model: &DisorderModel, prior: &UniformPrior) -> Result<Self> {
        check_horizons(model, prior)?;
        let ratio = model.mu1() / model.mu2().abs();
        Ok(Self {
            lambda: model.mu1(),
            b: -(model.mu1() - model.mu2()),
            rho: prior.rho(),
            mu: model.snr(),
            gain: GainFunction::Affine {
                value0: ratio * (1.0 - prior.g0()),
                slope: -ratio * prior.rho(),
            },
            psi0: prior.g0(),
            payoff_scale: model.mu2().abs(),
            payoff_offset: 1.0,
            horizon: model.horizon(),
        })
    }

    pub fn for_kind(
        kind: ProblemKind,
        model: &DisorderModel,
        prior: &UniformPrior,
    ) -> Result<Self> {
        match kind {
            ProblemKind::Linear => Self::linear(model, prior),
            ProblemKind::Geometric => Self::geometric(model, prior),
        }
    }

    /// Gain level at time t; at t = T this is the left limit `f(T-)` (the
    /// closed forms extend continuously).
    pub fn gain_at(&self, t: f64) -> f64 {
        self.gain.eval(t)
    }

    /// Maps a generic value estimate back to the original payoff scale.
    pub fn map_value(&self, v_gen: f64) -> f64 {
        self.payoff_offset + self.payoff_scale * v_gen
    }
}

fn check_horizons(model: &DisorderModel, prior: &UniformPrior) -> Result<()> {
    if (model.horizon() - prior.horizon()).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            key: "T",
            reason: format!(
                "model horizon {} and prior horizon {} differ",
                model.horizon(),
                prior.horizon()
            ),
        });
    }
    Ok(())
}

/// Converts a posterior probability `pi = P(theta <= t | observations)` to
/// the detection statistic via `psi = pi (1 - G(t)) / (1 - pi)`.
pub fn psi_from_pi(pi: f64, g_t: f64) -> Result<f64> {
    if !(pi.is_finite() && (0.0..1.0).contains(&pi)) {
        return Err(Error::Domain(format!("pi = {pi} must lie in [0, 1)")));
    }
    if !(g_t.is_finite() && (0.0..=1.0).contains(&g_t)) {
        return Err(Error::Domain(format!("g_t = {g_t} must lie in [0, 1]")));
    }
    Ok(pi * (1.0 - g_t) / (1.0 - pi))
}

/// Inverse of [`psi_from_pi`]: `pi = psi / (psi + 1 - G(t))`.
pub fn pi_from_psi(psi: f64, g_t: f64) -> Result<f64> {
    if !(psi.is_finite() && psi >= 0.0) {
        return Err(Error::Domain(format!("psi = {psi} must be >= 0")));
    }
    if !(g_t.is_finite() && (0.0..=1.0).contains(&g_t)) {
        return Err(Error::Domain(format!("g_t = {g_t} must lie in [0, 1]")));
    }
    let denom = psi + 1.0 - g_t;
    if denom <= 0.0 {
        return Err(Error::Domain(format!(
            "pi undefined for psi = {psi}, g_t = {g_t}"
        )));
    }
    Ok(psi / denom)
}
