//! Stochastic gradient estimators for finite sums and the unified two-loop
//! driver (stages with a snapshot, inner loop of estimator steps), including
//! its loopless single-loop variant.

use std::time::Instant;

use itertools::Itertools;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, unsupported, Error, Result};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::prox::ProxKind;
use crate::record::{OracleCounts, RunRecord};
use crate::schedules::StepPolicy;

/// Largest number of minibatches an enumeration routine will visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Mixing weight `beta_t` of the hybrid estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaRule {
    Constant { beta: f64 },
    /// `min(1, c / (t + 1)^exponent)`.
    Power { c: f64, exponent: f64 },
}

impl BetaRule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            BetaRule::Constant { beta } => beta,
            BetaRule::Power { c, exponent } => (c / (t as f64 + 1.0).powf(exponent)).min(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaRule::Constant { beta } => (0.0..=1.0).contains(&beta),
            BetaRule::Power { c, exponent } => c >= 0.0 && exponent >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("hybrid beta must lie in [0, 1]"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `(1/b) sum_{i in S} grad F_i(w)`.
    MiniBatch { b: usize },
    /// `v_hat + grad F(w, S) - grad F(w_hat, S)`.
    Svrg { b: usize },
    /// `v_prev + grad F(w, S) - grad F(w_prev, S)`.
    Sarah { b: usize },
    /// `(1 - beta) * sarah + beta * grad F(w, S)` on the same batch.
    Hybrid { b: usize, beta: BetaRule },
}

impl EstimatorKind {
    pub fn batch_size(&self) -> usize {
        match *self {
            EstimatorKind::MiniBatch { b }
            | EstimatorKind::Svrg { b }
            | EstimatorKind::Sarah { b }
            | EstimatorKind::Hybrid { b, .. } => b,
        }
    }

    /// Component gradients per estimate.
    pub fn cost(&self) -> u64 {
        let b = self.batch_size() as u64;
        match self {
            EstimatorKind::MiniBatch { .. } => b,
            _ => 2 * b,
        }
    }

    /// Whether the conditional mean equals the true gradient.
    pub fn is_unbiased(&self) -> bool {
        matches!(self, EstimatorKind::MiniBatch { .. } | EstimatorKind::Svrg { .. })
    }

    pub fn is_recursive(&self) -> bool {
        matches!(self, EstimatorKind::Sarah { .. } | EstimatorKind::Hybrid { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::MiniBatch { .. } => "minibatch",
            EstimatorKind::Svrg { .. } => "svrg",
            EstimatorKind::Sarah { .. } => "sarah",
            EstimatorKind::Hybrid { .. } => "hybrid",
        }
    }
}

/// Uniform sampling of `b` distinct indices out of `n`, returned sorted.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n: usize,
    b: usize,
}

impl BatchSampler {
    pub fn new(n: usize, b: usize, seed: u64) -> Result<Self> {
        if b == 0 || b > n {
            return Err(invalid(format!("batch size {b} outside 1..={n}")));
        }
        Ok(BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
            b,
        })
    }

    pub fn sample(&mut self) -> Vec<usize> {
        let mut batch = index::sample(&mut self.rng, self.n, self.b).into_vec();
        batch.sort_unstable();
        batch
    }
}

/// Mutable estimator state: snapshot, previous point and estimate, counters.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    kind: EstimatorKind,
    n: usize,
    snapshot: Option<(Weights, Weights)>,
    previous: Option<(Weights, Weights)>,
    step: usize,
    last_v: Option<Weights>,
    sampler: BatchSampler,
}

impl EstimatorState {
    pub fn new(kind: EstimatorKind, problem: &Problem, seed: u64) -> Result<Self> {
        if problem.is_composite() {
            return Err(invalid("stochastic estimators need the smooth part only"));
        }
        if let EstimatorKind::Hybrid { beta, .. } = kind {
            beta.validate()?;
        }
        let n = problem.num_components();
        Ok(EstimatorState {
            kind,
            n,
            snapshot: None,
            previous: None,
            step: 0,
            last_v: None,
            sampler: BatchSampler::new(n, kind.batch_size(), seed)?,
        })
    }

    pub fn kind(&self) -> &EstimatorKind {
        &self.kind
    }

    pub fn last_v(&self) -> Option<&Weights> {
        self.last_v.as_ref()
    }

    pub fn snapshot(&self) -> Option<&(Weights, Weights)> {
        self.snapshot.as_ref()
    }

    pub fn previous(&self) -> Option<&(Weights, Weights)> {
        self.previous.as_ref()
    }

    /// Iteration counter used by the hybrid `beta_t` rule.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Stores `(w_hat, grad F(w_hat))` as the SVRG snapshot; returns the full gradient.
    pub fn set_snapshot(&mut self, problem: &Problem, w_hat: &Weights) -> Result<Weights> {
        let g = problem.grad(w_hat)?;
        self.snapshot = Some((w_hat.clone(), g.clone()));
        Ok(g)
    }

    /// Sets the recursion anchor `(w, v)` directly.
    pub fn set_previous(&mut self, w: Weights, v: Weights) {
        self.last_v = Some(v.clone());
        self.previous = Some((w, v));
    }

    /// Starts a recursive estimator at `v^0 = grad F(w^0)`; returns `v^0`.
    pub fn restart_recursion(&mut self, problem: &Problem, w0: &Weights) -> Result<Weights> {
        let g = problem.grad(w0)?;
        self.set_previous(w0.clone(), g.clone());
        Ok(g)
    }

    /// The estimate at `w` for a given batch, without touching the state.
    pub fn evaluate(&self, problem: &Problem, w: &Weights, batch: &[usize]) -> Result<Weights> {
        if batch.is_empty() || batch.iter().any(|&i| i >= self.n) {
            return Err(invalid("batch indices out of range"));
        }
        let mean_at = |x: &Weights| -> Result<Weights> {
            let mut acc = Weights::zeros(problem.dim());
            for &i in batch {
                acc.axpy(1.0, &problem.component_grad(i, x)?);
            }
            Ok(acc.scale(1.0 / batch.len() as f64))
        };
        let g_w = mean_at(w)?;
        match self.kind {
            EstimatorKind::MiniBatch { .. } => Ok(g_w),
            EstimatorKind::Svrg { .. } => {
                let (w_hat, v_hat) = self
                    .snapshot
                    .as_ref()
                    .ok_or_else(|| Error::InvalidState("SVRG estimate before a snapshot".into()))?;
                let correction = g_w.sub(&mean_at(w_hat)?);
                Ok(v_hat.add(&correction))
            }
            EstimatorKind::Sarah { .. } | EstimatorKind::Hybrid { .. } => {
                let (w_prev, v_prev) = self.previous.as_ref().ok_or_else(|| {
                    Error::InvalidState("recursive estimate before v^0 was set".into())
                })?;
                let sarah = v_prev.add(&g_w.sub(&mean_at(w_prev)?));
                match self.kind {
                    EstimatorKind::Hybrid { beta, .. } => {
                        let beta = beta.at(self.step);
                        if beta == 1.0 {
                            Ok(g_w)
                        } else if beta == 0.0 {
                            Ok(sarah)
                        } else {
                            Ok(sarah.scale(1.0 - beta).add_scaled(beta, &g_w))
                        }
                    }
                    _ => Ok(sarah),
                }
            }
        }
    }

    /// Computes the estimate for `batch` and advances the state.
    pub fn estimate_with_batch(
        &mut self,
        problem: &Problem,
        w: &Weights,
        batch: &[usize],
    ) -> Result<Weights> {
        let v = self.evaluate(problem, w, batch)?;
        if self.kind.is_recursive() {
            self.previous = Some((w.clone(), v.clone()));
        }
        self.step += 1;
        self.last_v = Some(v.clone());
        Ok(v)
    }

    /// Samples a batch and returns the estimate at `w`.
    pub fn estimate(&mut self, problem: &Problem, w: &Weights) -> Result<Weights> {
        let batch = self.sampler.sample();
        self.estimate_with_batch(problem, w, &batch)
    }
}

/// `C(n, b)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, b: usize) -> u128 {
    if b > n {
        return 0;
    }
    let b = b.min(n - b);
    let mut acc: u128 = 1;
    for i in 0..b {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Every size-`b` subset of `0..n` in lexicographic order.
pub fn all_batches(n: usize, b: usize) -> Result<Vec<Vec<usize>>> {
    if b == 0 || b > n {
        return Err(invalid(format!("batch size {b} outside 1..={n}")));
    }
    if binomial(n, b) > ENUMERATION_LIMIT {
        return Err(unsupported(format!(
            "C({n}, {b}) batches exceed the enumeration limit"
        )));
    }
    Ok((0..n).combinations(b).collect())
}

/// Exact mean and variance `E||v - grad F(w)||^2` of the next estimate over
/// all batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedMoments {
    pub mean: Weights,
    pub variance: f64,
    pub max_norm_sq: f64,
}

pub fn enumerate_moments(
    state: &EstimatorState,
    problem: &Problem,
    w: &Weights,
) -> Result<EnumeratedMoments> {
    let batches = all_batches(state.n, state.kind.batch_size())?;
    let grad = problem.grad(w)?;
    let mut sum = Weights::zeros(problem.dim());
    let mut variance = 0.0;
    let mut max_norm_sq: f64 = 0.0;
    for batch in &batches {
        let v = state.evaluate(problem, w, batch)?;
        variance += v.dist_sq(&grad);
        max_norm_sq = max_norm_sq.max(v.norm_sq());
        sum.axpy(1.0, &v);
    }
    let count = batches.len() as f64;
    Ok(EnumeratedMoments {
        mean: sum.scale(1.0 / count),
        variance: variance / count,
        max_norm_sq,
    })
}

/// Exact average of the next estimate over every batch.
pub fn enumerate_conditional_mean(
    state: &EstimatorState,
    problem: &Problem,
    w: &Weights,
) -> Result<Weights> {
    Ok(enumerate_moments(state, problem, w)?.mean)
}

/// How the next stage's snapshot is chosen from the stage iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRule {
    #[default]
    LastIterate,
    UniformRandom,
}

/// Configuration of the unified stochastic driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdDriverSpec {
    pub estimator: EstimatorKind,
    /// Number of outer stages `S`; 0 runs a single loop of `horizon` steps.
    #[serde(default)]
    pub stages: usize,
    /// Inner length `T_s` of every stage.
    #[serde(default = "default_inner")]
    pub inner: usize,
    #[serde(default)]
    pub snapshot: SnapshotRule,
    /// Snapshot refresh probability of the loopless variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loopless: Option<f64>,
    /// Optional proximal map `P` applied after each step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox: Option<ProxKind>,
}

fn default_inner() -> usize {
    1
}

impl SgdDriverSpec {
    pub fn single_loop(estimator: EstimatorKind) -> Self {
        SgdDriverSpec {
            estimator,
            stages: 0,
            inner: 1,
            snapshot: SnapshotRule::LastIterate,
            loopless: None,
            prox: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner == 0 {
            return Err(invalid("inner stage length must be at least 1"));
        }
        if let Some(rho) = self.loopless {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(invalid("loopless probability must lie in (0, 1]"));
            }
            if self.stages > 0 {
                return Err(invalid("loopless runs take no stages"));
            }
        }
        if let Some(prox) = &self.prox {
            prox.validate(None)?;
        }
        Ok(())
    }

    /// Total number of steps: `sum_s T_s` with stages, `horizon` otherwise.
    pub fn total_steps(&self, horizon: usize) -> usize {
        if self.stages > 0 {
            self.stages * self.inner
        } else {
            horizon
        }
    }
}

/// Runs the unified stochastic method.
///
/// Full gradients are charged as `n` component gradients, so
/// `totals().component_grads` is the total gradient work.
pub fn run_unified_sgd(
    problem: &Problem,
    spec: &SgdDriverSpec,
    policy: &mut StepPolicy,
    w0: &Weights,
    horizon: usize,
    seed: u64,
) -> Result<RunRecord> {
    spec.validate()?;
    w0.check_dim(problem.dim())?;
    let total = spec.total_steps(horizon);
    if total == 0 {
        return Err(invalid("run needs at least one step"));
    }
    let started = Instant::now();
    let n = problem.num_components() as u64;
    let mut state = EstimatorState::new(spec.estimator, problem, seed)?;
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(1);

    let mut record = RunRecord::start(Some(seed));
    let mut counts = OracleCounts::default();
    let mut w = w0.clone();
    record.push_iterate(problem, w.clone(), counts)?;

    // Stage boundaries: true at global steps where a snapshot is taken.
    let stage_len = if spec.stages > 0 { spec.inner } else { total };
    let mut stage_iterates: Vec<Weights> = Vec::new();
    let mut pending_anchor: Option<Weights> = None;

    for k in 0..total {
        let at_stage_start = k % stage_len == 0;
        let refresh = if spec.loopless.is_some() {
            k == 0 || aux.random_bool(spec.loopless.unwrap_or(1.0))
        } else {
            at_stage_start
        };
        if at_stage_start && spec.stages > 0 && k > 0 {
            if let Some(anchor) = pending_anchor.take() {
                w = anchor;
                record.iterates.pop();
                record.rows.pop();
                record.push_iterate(problem, w.clone(), counts)?;
            }
            stage_iterates.clear();
        }
        stage_iterates.push(w.clone());

        let mut direction = None;
        if refresh && !matches!(spec.estimator, EstimatorKind::MiniBatch { .. }) {
            let full = state.set_snapshot(problem, &w)?;
            counts.component_grads += n;
            if spec.estimator.is_recursive() {
                state.set_previous(w.clone(), full.clone());
                direction = Some(full);
            }
        }
        let v = match direction {
            Some(v) => v,
            None => {
                let v = state.estimate(problem, &w)?;
                counts.component_grads += spec.estimator.cost();
                v
            }
        };

        let eta = policy.next_step(k as u64, &w, &v, problem)?;
        if policy.is_degenerate() {
            record.degenerate_steps += 1;
        }
        let mut next = w.add_scaled(-eta, &v);
        if let Some(prox) = &spec.prox {
            next = prox.apply(eta, &next)?;
            counts.prox += 1;
        }
        if !next.is_finite() {
            return Err(Error::Diverged { t: k + 1 });
        }
        record.set_last_eta(eta);
        record.directions.push(v);
        w = next;
        record.push_iterate(problem, w.clone(), counts)?;

        let stage_done = spec.stages > 0 && (k + 1) % stage_len == 0;
        if stage_done && spec.snapshot == SnapshotRule::UniformRandom {
            stage_iterates.push(w.clone());
            let pick = aux.random_range(0..stage_iterates.len());
            pending_anchor = Some(stage_iterates[pick].clone());
        }
    }
    record.wall_time = started.elapsed().as_secs_f64();
    Ok(record)
}
