//! Step-size policies producing `eta_t` from the iteration history.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, unsupported, Result};
use crate::linalg::Weights;
use crate::problems::Problem;

/// Denominator below which a Barzilai-Borwein step is declared degenerate.
pub const BB_DEGENERATE_DENOMINATOR: f64 = 1e-15;

fn default_beta() -> f64 {
    1.0
}

fn default_nu() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    1e-8
}

/// Declarative form of a step policy, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Constant {
        eta: f64,
    },
    /// `C / (t + beta)^nu`.
    Diminishing {
        #[serde(rename = "C")]
        c: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_nu")]
        nu: f64,
    },
    /// `C / (ceil(t/s) + beta)^nu`, with `ceil(0/s) = 0`.
    Staircase {
        #[serde(rename = "C")]
        c: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_nu")]
        nu: f64,
        s: u64,
    },
    /// `C / sqrt(sum_{j<=t} ||g_j||^2 + eps)`.
    AdaptiveAccumulator {
        #[serde(rename = "C")]
        c: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// `||w_t - w_{t-1}|| / ||g_t - g_{t-1}||`, `eta0` at `t = 0`.
    BarzilaiBorwein { eta0: f64 },
    /// `g^T g / g^T Q g` on quadratics.
    ExactQuadratic,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64, name: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("schedule parameter {name} must be positive")))
            }
        };
        match *self {
            ScheduleSpec::Constant { eta } => positive(eta, "eta"),
            ScheduleSpec::Diminishing { c, beta, nu } => {
                positive(c, "C")?;
                positive(beta, "beta")?;
                if nu >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("schedule parameter nu must be nonnegative"))
                }
            }
            ScheduleSpec::Staircase { c, beta, nu, s } => {
                ScheduleSpec::Diminishing { c, beta, nu }.validate()?;
                if s >= 1 {
                    Ok(())
                } else {
                    Err(invalid("staircase width s must be at least 1"))
                }
            }
            ScheduleSpec::AdaptiveAccumulator { c, epsilon } => {
                positive(c, "C")?;
                if epsilon >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("schedule parameter epsilon must be nonnegative"))
                }
            }
            ScheduleSpec::BarzilaiBorwein { eta0 } => positive(eta0, "eta0"),
            ScheduleSpec::ExactQuadratic => Ok(()),
        }
    }

    /// Closed-form `eta_t` for schedules that ignore the history.
    pub fn eta_at(&self, t: u64) -> Option<f64> {
        match *self {
            ScheduleSpec::Constant { eta } => Some(eta),
            ScheduleSpec::Diminishing { c, beta, nu } => Some(c / (t as f64 + beta).powf(nu)),
            ScheduleSpec::Staircase { c, beta, nu, s } => {
                Some(c / (t.div_ceil(s) as f64 + beta).powf(nu))
            }
            _ => None,
        }
    }

    pub fn is_history_free(&self) -> bool {
        self.eta_at(0).is_some()
    }
}

/// A stateful step policy; one instance per run.
#[derive(Debug, Clone)]
pub struct StepPolicy {
    spec: ScheduleSpec,
    accumulated: f64,
    previous: Option<(Weights, Weights)>,
    last_step: Option<f64>,
    degenerate: bool,
    degenerate_count: usize,
}

impl StepPolicy {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(StepPolicy {
            spec,
            accumulated: 0.0,
            previous: None,
            last_step: None,
            degenerate: false,
            degenerate_count: 0,
        })
    }

    pub fn constant(eta: f64) -> Result<Self> {
        Self::new(ScheduleSpec::Constant { eta })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Running `sum ||g_j||^2` of the adaptive accumulator.
    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    /// Whether the last emitted Barzilai-Borwein step used the fallback.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate_count
    }

    /// Emits `eta_t` given the current point `w` and the gradient `g` defining
    /// the direction there.
    pub fn next_step(&mut self, t: u64, w: &Weights, g: &Weights, problem: &Problem) -> Result<f64> {
        self.degenerate = false;
        let eta = match self.spec {
            ScheduleSpec::Constant { .. }
            | ScheduleSpec::Diminishing { .. }
            | ScheduleSpec::Staircase { .. } => self.spec.eta_at(t).expect("history-free"),
            ScheduleSpec::AdaptiveAccumulator { c, epsilon } => {
                self.accumulated += g.norm_sq();
                let denom = (self.accumulated + epsilon).sqrt();
                if denom > 0.0 {
                    c / denom
                } else {
                    return Err(invalid(
                        "adaptive accumulator with epsilon = 0 saw only zero gradients",
                    ));
                }
            }
            ScheduleSpec::BarzilaiBorwein { eta0 } => {
                let eta = match &self.previous {
                    None => eta0,
                    Some((w_prev, g_prev)) => {
                        let num = w.dist_sq(w_prev).sqrt();
                        let den = g.dist_sq(g_prev).sqrt();
                        let candidate = num / den;
                        if den < BB_DEGENERATE_DENOMINATOR || !(candidate > 0.0) || !candidate.is_finite() {
                            self.degenerate = true;
                            self.degenerate_count += 1;
                            self.last_step.unwrap_or(eta0)
                        } else {
                            candidate
                        }
                    }
                };
                self.previous = Some((w.clone(), g.clone()));
                eta
            }
            ScheduleSpec::ExactQuadratic => {
                let qg = problem.hessian_vec(g).ok_or_else(|| {
                    unsupported("exact line search needs a quadratic objective")
                })?;
                let gg = g.norm_sq();
                let gqg = g.dot(&qg);
                if gg == 0.0 {
                    // stationary point: the step is irrelevant
                    let l = problem.constants().l;
                    self.last_step.unwrap_or(if l > 0.0 { 1.0 / l } else { 1.0 })
                } else if gqg <= 0.0 {
                    return Err(unsupported("nonpositive curvature along the gradient"));
                } else {
                    gg / gqg
                }
            }
        };
        self.last_step = Some(eta);
        Ok(eta)
    }
}

/// Barzilai-Borwein step from two explicit (point, gradient) pairs.
pub fn barzilai_borwein(w_prev: &Weights, g_prev: &Weights, w: &Weights, g: &Weights) -> Option<f64> {
    let den = g.dist_sq(g_prev).sqrt();
    if den < BB_DEGENERATE_DENOMINATOR {
        None
    } else {
        Some(w.dist_sq(w_prev).sqrt() / den)
    }
}
