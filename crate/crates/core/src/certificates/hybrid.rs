use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{all_batches, BetaRule, EstimatorKind, SgdDriverSpec};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::record::RunRecord;
use crate::schedules::ScheduleSpec;

use super::{CertificateRow, CertificateTrace, Scheme};

/// Smallest ensemble accepted by [`certify_hybrid`].
pub const MIN_ENSEMBLE: usize = 20;
const PARAM_TOL: f64 = 1e-12;

/// Constant parameters of the single-loop hybrid method and its certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridCertParams {
    /// Smoothness constant used for both `F` and the average smoothness.
    pub l: f64,
    pub eta: f64,
    pub c: f64,
    pub beta: f64,
    /// Variance bound of the fresh minibatch term `u^t`.
    pub sigma_hat_sq: f64,
    /// Initial variance budget `sigma_{-1}^2`.
    pub sigma_init_sq: f64,
}

impl HybridCertParams {
    /// `c = (1 - L eta + 2 L^2 eta^2) / (2 L^2 eta)`.
    pub fn c_for(l: f64, eta: f64) -> f64 {
        (1.0 - l * eta + 2.0 * l * l * eta * eta) / (2.0 * l * l * eta)
    }

    /// Smallest `beta` with `(1 - beta)^2 <= 1 - 2 L^2 eta^2 / (1 - L eta + 2 L^2 eta^2)`.
    pub fn beta_min(l: f64, eta: f64) -> f64 {
        let a = 2.0 * l * l * eta * eta;
        1.0 - (1.0 - a / (1.0 - l * eta + a)).sqrt()
    }

    /// `eta = 1/(L (T+1)^{1/3})`, matching `c`, `beta = beta_min` and
    /// `sigma_{-1}^2 = (T+1)^{-2/3}`.
    pub fn for_horizon(l: f64, horizon: usize, sigma_hat_sq: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(invalid("hybrid parameters need L > 0"));
        }
        let t1 = (horizon + 1) as f64;
        let eta = 1.0 / (l * t1.cbrt());
        Ok(HybridCertParams {
            l,
            eta,
            c: Self::c_for(l, eta),
            beta: Self::beta_min(l, eta),
            sigma_hat_sq,
            sigma_init_sq: t1.powf(-2.0 / 3.0),
        })
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Right minus left side of the two parameter conditions:
    /// `eta (1 - L eta) - 2 L^2 eta^2 c (1-beta)^2` and `(c - eta) - c (1-beta)^2`.
    pub fn condition_residuals(&self) -> (f64, f64) {
        let (l, eta, c) = (self.l, self.eta, self.c);
        let q = (1.0 - self.beta).powi(2);
        (
            eta * (1.0 - l * eta) - 2.0 * l * l * eta * eta * c * q,
            (c - eta) - c * q,
        )
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.eta > 0.0 && self.l * self.eta <= 1.0 + PARAM_TOL) {
            return fail(format!("eta = {} outside (0, 1/L]", self.eta));
        }
        if !(self.c > 0.0) {
            return fail("c must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail("beta must lie in [0, 1]".into());
        }
        let (r1, r2) = self.condition_residuals();
        if r1 < -PARAM_TOL || r2 < -PARAM_TOL {
            return fail(format!("parameter conditions violated: residuals {r1:e}, {r2:e}"));
        }
        let a = 2.0 * self.l * self.l * self.eta * self.eta;
        let limit = 1.0 - a / (1.0 - self.l * self.eta + a);
        if (1.0 - self.beta).powi(2) > limit + PARAM_TOL {
            return fail(format!("beta = {} below the feasible range", self.beta));
        }
        Ok(())
    }

    /// Upper bound on `E[(1/(T+1)) sum_t ||grad F(w^t)||^2]`.
    pub fn bound(&self, initial_gap: f64, v0_norm_sq: f64, horizon: usize) -> f64 {
        let t1 = (horizon + 1) as f64;
        let (l, eta) = (self.l, self.eta);
        2.0 * initial_gap / (eta * t1)
            + v0_norm_sq / t1
            + self.sigma_init_sq / (2.0 * l * l * eta * eta * t1)
            + self.beta * self.beta * self.sigma_hat_sq / (l * l * eta * eta)
    }
}

/// Single-loop hybrid driver (batch size 1) and its constant schedule.
pub fn hybrid_driver(params: &HybridCertParams) -> (SgdDriverSpec, ScheduleSpec) {
    (
        SgdDriverSpec::single_loop(EstimatorKind::Hybrid {
            b: 1,
            beta: BetaRule::Constant { beta: params.beta },
        }),
        ScheduleSpec::Constant { eta: params.eta },
    )
}

/// Largest enumerated minibatch variance `E||grad F(w, S) - grad F(w)||^2`
/// over the given points.
pub fn minibatch_variance_sup<'a>(
    problem: &Problem,
    b: usize,
    points: impl IntoIterator<Item = &'a Weights>,
) -> Result<f64> {
    let batches = all_batches(problem.num_components(), b)?;
    let mut sup: f64 = 0.0;
    for w in points {
        let grad = problem.grad(w)?;
        let mut total = 0.0;
        for batch in &batches {
            let mut mean = Weights::zeros(problem.dim());
            for &i in batch {
                mean.axpy(1.0, &problem.component_grad(i, w)?);
            }
            total += mean.scale(1.0 / b as f64).dist_sq(&grad);
        }
        sup = sup.max(total / batches.len() as f64);
    }
    Ok(sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridCertificate {
    pub params: HybridCertParams,
    /// Ensemble mean of `(1/(T+1)) sum_t ||grad F(w^t)||^2`.
    pub metric_mean: f64,
    pub std_err: f64,
    pub bound: f64,
    /// `3 * std_err`.
    pub margin: f64,
    pub ensemble: usize,
    /// Ensemble-averaged recursion terms; recorded, not asserted.
    pub trace: CertificateTrace,
}

/// Checks the parameter conditions and the averaged-gradient bound on an
/// ensemble of independent runs started from the same point.
pub fn certify_hybrid(
    runs: &[RunRecord],
    params: &HybridCertParams,
    problem: &Problem,
) -> Result<HybridCertificate> {
    params.check()?;
    if runs.len() < MIN_ENSEMBLE {
        return Err(invalid(format!(
            "hybrid certificate needs at least {MIN_ENSEMBLE} runs, got {}",
            runs.len()
        )));
    }
    let f_star = problem
        .constants()
        .f_star
        .ok_or_else(|| invalid("hybrid certificate needs F*"))?;
    let horizon = runs[0].horizon();
    if horizon == 0 || runs.iter().any(|r| r.horizon() != horizon || r.directions.len() != horizon) {
        return Err(invalid("ensemble runs must share a positive horizon"));
    }
    let k = runs.len() as f64;
    let metrics: Vec<f64> = runs
        .iter()
        .map(|r| r.rows.iter().map(|row| row.grad_norm_sq).sum::<f64>() / (horizon + 1) as f64)
        .collect();
    let metric_mean = metrics.iter().sum::<f64>() / k;
    let var = metrics.iter().map(|m| (m - metric_mean).powi(2)).sum::<f64>() / (k - 1.0);
    let std_err = var.sqrt() / k.sqrt();

    let initial_gap = runs[0].rows[0].value - f_star;
    let v0_sq = runs[0].directions[0].norm_sq();
    let bound = params.bound(initial_gap, v0_sq, horizon);

    let (l, eta, c) = (params.l, params.eta, params.c);
    let e = c * params.beta * params.beta * params.sigma_hat_sq;
    let potential = |run: &RunRecord, t: usize| -> Result<f64> {
        let gap = run.rows[t].value - f_star;
        let (v_sq, sigma_sq) = if t == 0 {
            (v0_sq, params.sigma_init_sq)
        } else {
            let v = &run.directions[t - 1];
            let g = problem.grad(&run.iterates[t - 1])?;
            (v.norm_sq(), v.dist_sq(&g))
        };
        Ok(gap + 0.5 * eta * (1.0 - l * eta) * v_sq + 0.5 * (c - eta) * sigma_sq)
    };
    let mut rows = Vec::with_capacity(horizon);
    let mut d = 0.0;
    for run in runs {
        d += potential(run, 0)? / k;
    }
    for t in 0..horizon {
        let mut d_next = 0.0;
        let mut delta = 0.0;
        for run in runs {
            d_next += potential(run, t + 1)? / k;
            delta += 0.5 * eta * run.rows[t].grad_norm_sq / k;
        }
        rows.push(CertificateRow::new(t, d, d_next, delta, e));
        d = d_next;
    }
    if let Some(last) = rows.last_mut() {
        last.bound = Some(bound + 3.0 * std_err);
        last.metric = Some(metric_mean);
    }
    let trace = CertificateTrace {
        scheme: Scheme::HybridVr,
        rows,
        root_bias: None,
        paths: None,
    };
    if metric_mean > bound + 3.0 * std_err {
        return Err(Error::CertificateFailure {
            location: format!("ensemble bound at T={horizon}"),
            slack: bound + 3.0 * std_err - metric_mean,
        });
    }
    Ok(HybridCertificate {
        params: *params,
        metric_mean,
        std_err,
        bound,
        margin: 3.0 * std_err,
        ensemble: runs.len(),
        trace,
    })
}
