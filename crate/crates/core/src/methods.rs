//! Deterministic iteration engines built on the update
//! `w^{t+1} = P(w^t + eta_t d^t)`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::prox::ProxKind;
use crate::record::{NesterovStep, OracleCounts, RunRecord};
use crate::schedules::StepPolicy;

/// Rule for the accelerated sequence `theta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaRule {
    /// `theta_{t-1} = (t + 1)/2`.
    HalfShift,
    /// Largest `theta_t` with `theta_t (theta_t - 1) = theta_{t-1}^2`.
    Recurrence,
}

impl ThetaRule {
    /// `theta_{-1}`.
    pub fn initial_prev(self) -> f64 {
        match self {
            ThetaRule::HalfShift => 0.5,
            ThetaRule::Recurrence => 0.0,
        }
    }

    /// `theta_k` for `k >= 0`, given `theta_{k-1}`.
    pub fn next(self, k: usize, theta_prev: f64) -> f64 {
        match self {
            ThetaRule::HalfShift => (k as f64 + 2.0) / 2.0,
            ThetaRule::Recurrence => {
                if k == 0 {
                    1.0
                } else {
                    0.5 * (1.0 + (1.0 + 4.0 * theta_prev * theta_prev).sqrt())
                }
            }
        }
    }
}

/// Iterates a theta rule, yielding `(theta_{t-1}, theta_t)` pairs.
#[derive(Debug, Clone)]
pub struct ThetaSequence {
    rule: ThetaRule,
    k: usize,
    theta_prev: f64,
}

impl ThetaSequence {
    pub fn new(rule: ThetaRule) -> Self {
        ThetaSequence {
            rule,
            k: 0,
            theta_prev: rule.initial_prev(),
        }
    }

    pub fn reset(&mut self) {
        *self = ThetaSequence::new(self.rule);
    }
}

impl Iterator for ThetaSequence {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<(f64, f64)> {
        let theta = self.rule.next(self.k, self.theta_prev);
        let pair = (self.theta_prev, theta);
        self.theta_prev = theta;
        self.k += 1;
        Some(pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restart {
    #[default]
    None,
    /// Reset `u` and `theta` whenever `F(w^{t+1}) > F(w^t)`.
    FunctionValue,
}

/// Dual-averaging weights `gamma_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaRule {
    Constant { value: f64 },
    /// `gamma_j = j + 1`.
    Linear,
}

impl GammaRule {
    pub fn weight(&self, j: usize) -> f64 {
        match *self {
            GammaRule::Constant { value } => value,
            GammaRule::Linear => j as f64 + 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    Gd,
    Subgradient,
    ProxGrad { prox: ProxKind },
    HeavyBall { beta: f64 },
    Nesterov { theta: ThetaRule },
    DualAveraging { gamma: GammaRule, eta: f64 },
    NoisyGd { sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(flatten)]
    pub kind: MethodKind,
    #[serde(default)]
    pub restart: Restart,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        MethodSpec {
            kind,
            restart: Restart::None,
        }
    }

    /// Whether the engine consumes a [`StepPolicy`].
    pub fn uses_schedule(&self) -> bool {
        !matches!(
            self.kind,
            MethodKind::Nesterov { .. } | MethodKind::DualAveraging { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            MethodKind::HeavyBall { beta } if !(0.0..1.0).contains(beta) => {
                Err(invalid("heavy-ball beta must lie in [0, 1)"))
            }
            MethodKind::NoisyGd { sigma, .. } if !(*sigma >= 0.0) => {
                Err(invalid("noise sigma must be nonnegative"))
            }
            MethodKind::DualAveraging { eta, gamma } => {
                if !(*eta > 0.0) {
                    return Err(invalid("dual averaging eta must be positive"));
                }
                if let GammaRule::Constant { value } = gamma {
                    if !(*value > 0.0) {
                        return Err(invalid("dual averaging weights must be positive"));
                    }
                }
                Ok(())
            }
            MethodKind::ProxGrad { prox } => prox.validate(None),
            _ => Ok(()),
        }
    }
}

fn check_step(w: &Weights, t: usize) -> Result<()> {
    if w.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { t })
    }
}

fn check_start(problem: &Problem, w0: &Weights, horizon: usize) -> Result<()> {
    if horizon < 1 {
        return Err(invalid("horizon T must be at least 1"));
    }
    w0.check_dim(problem.dim())?;
    if !w0.is_finite() {
        return Err(invalid("w0 has non-finite entries"));
    }
    Ok(())
}

/// Runs `horizon` steps of `method` from `w0`.
///
/// Nesterov and dual averaging ignore `policy` and dispatch to
/// [`run_nesterov`] and [`run_dual_averaging`].
pub fn run_deterministic(
    problem: &Problem,
    method: &MethodSpec,
    policy: &mut StepPolicy,
    w0: &Weights,
    horizon: usize,
) -> Result<RunRecord> {
    method.validate()?;
    match &method.kind {
        MethodKind::Nesterov { theta } => {
            return run_nesterov(problem, *theta, method.restart, w0, horizon)
        }
        MethodKind::DualAveraging { gamma, eta } => {
            return run_dual_averaging(problem, *gamma, *eta, w0, horizon)
        }
        _ => {}
    }
    check_start(problem, w0, horizon)?;
    if problem.is_composite() && matches!(method.kind, MethodKind::Gd | MethodKind::HeavyBall { .. } | MethodKind::NoisyGd { .. }) {
        return Err(invalid(
            "gradient methods need a smooth objective; use subgradient or prox_grad",
        ));
    }
    if let MethodKind::ProxGrad { prox } = &method.kind {
        match (problem.l1_weight(), prox) {
            (Some(lambda), ProxKind::L1 { lambda: mu }) if lambda == *mu => {}
            (Some(lambda), _) => {
                return Err(invalid(format!(
                    "prox_grad on a composite objective needs prox l1 with lambda = {lambda}"
                )))
            }
            (None, _) => return Err(invalid("prox_grad requires a composite objective")),
        }
    }

    let started = Instant::now();
    let seed = match method.kind {
        MethodKind::NoisyGd { seed, .. } => Some(seed),
        _ => None,
    };
    let mut noise = match method.kind {
        MethodKind::NoisyGd { sigma, seed } => Some((
            ChaCha8Rng::seed_from_u64(seed),
            Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?,
        )),
        _ => None,
    };

    let mut record = RunRecord::start(seed);
    let mut counts = OracleCounts::default();
    let mut w = w0.clone();
    let mut w_prev = w0.clone();
    record.push_iterate(problem, w.clone(), counts)?;

    for t in 0..horizon {
        let grad = match method.kind {
            MethodKind::Subgradient => problem.subgradient(&w)?,
            _ => problem.grad(&w)?,
        };
        counts.grads += 1;
        let direction = match &mut noise {
            Some((rng, normal)) => {
                Weights::new(grad.iter().map(|g| g + normal.sample(rng)).collect())
            }
            None => grad,
        };
        let eta = policy.next_step(t as u64, &w, &direction, problem)?;
        if policy.is_degenerate() {
            record.degenerate_steps += 1;
        }
        let mut next = w.add_scaled(-eta, &direction);
        match &method.kind {
            MethodKind::ProxGrad { prox } => {
                next = prox.apply(eta, &next)?;
                counts.prox += 1;
            }
            MethodKind::HeavyBall { beta } if *beta != 0.0 => {
                next.axpy(*beta, &w.sub(&w_prev));
            }
            _ => {}
        }
        check_step(&next, t + 1)?;
        record.set_last_eta(eta);
        record.directions.push(direction);
        w_prev = std::mem::replace(&mut w, next);
        record.push_iterate(problem, w.clone(), counts)?;
    }
    record.wall_time = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Accelerated gradient in three-sequence form with step `1/L`:
/// `z = (1 - 1/theta) w + u/theta`, `w+ = z - grad F(z)/L`,
/// `u+ = u - (theta/L) grad F(z)`, `u^0 = w^0`.
pub fn run_nesterov(
    problem: &Problem,
    rule: ThetaRule,
    restart: Restart,
    w0: &Weights,
    horizon: usize,
) -> Result<RunRecord> {
    check_start(problem, w0, horizon)?;
    let l = problem.constants().l;
    if !(l > 0.0) || !l.is_finite() {
        return Err(invalid("accelerated method needs a certified L > 0"));
    }
    if problem.is_composite() {
        return Err(invalid("accelerated method needs a smooth objective"));
    }
    let started = Instant::now();
    let mut record = RunRecord::start(None);
    let mut counts = OracleCounts::default();
    let mut thetas = ThetaSequence::new(rule);
    let mut w = w0.clone();
    let mut u = w0.clone();
    let mut value = problem.value(&w)?;
    record.push_iterate(problem, w.clone(), counts)?;

    for t in 0..horizon {
        let (theta_prev, theta) = thetas.next().expect("infinite sequence");
        let z = w.scale(1.0 - 1.0 / theta).add_scaled(1.0 / theta, &u);
        let g = problem.grad(&z)?;
        counts.grads += 1;
        let next = z.add_scaled(-1.0 / l, &g);
        let u_next = u.add_scaled(-theta / l, &g);
        check_step(&next, t + 1)?;
        check_step(&u_next, t + 1)?;
        let beta = if t == 0 { 0.0 } else { (theta_prev - 1.0) / theta };
        record.nesterov.push(NesterovStep {
            theta_prev,
            theta,
            beta,
            u: u.clone(),
            u_next: u_next.clone(),
        });
        record.set_last_eta(1.0 / l);
        record.directions.push(g);
        u = u_next;
        if restart == Restart::FunctionValue {
            let next_value = problem.value(&next)?;
            counts.values += 1;
            if next_value > value {
                u = next.clone();
                thetas.reset();
                record.restarts.push(t + 1);
            }
            value = next_value;
        }
        w = next;
        record.push_iterate(problem, w.clone(), counts)?;
    }
    record.wall_time = started.elapsed().as_secs_f64();
    Ok(record)
}

/// `w^{t+1} = w^0 - eta sum_{j<=t} gamma_j grad F(w^j)`.
pub fn run_dual_averaging(
    problem: &Problem,
    gamma: GammaRule,
    eta: f64,
    w0: &Weights,
    horizon: usize,
) -> Result<RunRecord> {
    MethodSpec::new(MethodKind::DualAveraging { gamma, eta }).validate()?;
    check_start(problem, w0, horizon)?;
    if problem.is_composite() {
        return Err(invalid("dual averaging needs a smooth objective"));
    }
    let started = Instant::now();
    let mut record = RunRecord::start(None);
    let mut counts = OracleCounts::default();
    let mut sum = Weights::zeros(problem.dim());
    let mut w = w0.clone();
    record.push_iterate(problem, w.clone(), counts)?;
    for t in 0..horizon {
        let g = problem.grad(&w)?;
        counts.grads += 1;
        let weight = gamma.weight(t);
        sum.axpy(weight, &g);
        let next = w0.add_scaled(-eta, &sum);
        check_step(&next, t + 1)?;
        record.set_last_eta(eta * weight);
        record.directions.push(g);
        w = next;
        record.push_iterate(problem, w.clone(), counts)?;
    }
    record.wall_time = started.elapsed().as_secs_f64();
    Ok(record)
}

/// The dual-averaging point `w^0 - eta sum_j gamma_j g^j` for given gradients.
pub fn dual_averaging_point(w0: &Weights, eta: f64, gammas: &[f64], grads: &[Weights]) -> Weights {
    let mut sum = Weights::zeros(w0.dim());
    for (gamma, g) in gammas.iter().zip(grads) {
        sum.axpy(*gamma, g);
    }
    w0.add_scaled(-eta, &sum)
}
