use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::record::RunRecord;

/// How the reported point is formed from the iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMode {
    LastIterate,
    /// Mean of `w^0..w^T`.
    UniformAverage,
    /// `sum_t gamma_t w^t / S_T` over the first `weights.len()` iterates.
    WeightedAverage { weights: Vec<f64> },
    /// Weighted by the steps actually taken, over `w^0..w^{T-1}`.
    StepWeighted,
    /// The iterate with the smallest gradient norm (first one on ties).
    BestGradIterate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputCertificate {
    pub w_hat: Weights,
    /// Iterate index for selection modes.
    pub index: Option<usize>,
    pub value: f64,
    pub gap: Option<f64>,
    pub grad_norm_sq: f64,
    /// `(1/S_T) sum gamma_t F(w^t) - F(w_hat)` for averaging modes on convex problems.
    pub jensen_slack: Option<f64>,
}

fn weighted(run: &RunRecord, problem: &Problem, weights: &[f64]) -> Result<(Weights, Option<f64>)> {
    if weights.is_empty() || weights.len() > run.iterates.len() {
        return Err(invalid(format!(
            "{} weights for {} iterates",
            weights.len(),
            run.iterates.len()
        )));
    }
    if weights.iter().any(|g| !(*g >= 0.0)) {
        return Err(invalid("averaging weights must be nonnegative"));
    }
    let s: f64 = weights.iter().sum();
    if !(s > 0.0) {
        return Err(invalid("averaging weights sum to zero"));
    }
    let mut acc = Weights::zeros(problem.dim());
    let mut mean_value = 0.0;
    for (g, row) in weights.iter().zip(&run.rows) {
        acc.axpy(*g, &run.iterates[row.t]);
        mean_value += g * row.value;
    }
    let w_hat = acc.scale(1.0 / s);
    let jensen = if problem.constants().convex {
        Some(mean_value / s - problem.value(&w_hat)?)
    } else {
        None
    };
    Ok((w_hat, jensen))
}

/// Forms the output point of `run` and reports its optimality metrics.
///
/// For averaging modes on convex problems, asserts Jensen's inequality
/// `F(w_hat) <= (1/S_T) sum gamma_t F(w^t) + 1e-9`.
pub fn certify_output(run: &RunRecord, mode: &OutputMode, problem: &Problem) -> Result<OutputCertificate> {
    if run.iterates.is_empty() {
        return Err(invalid("output certification of an empty run"));
    }
    let (w_hat, index, jensen_slack) = match mode {
        OutputMode::LastIterate => {
            let t = run.iterates.len() - 1;
            (run.iterates[t].clone(), Some(t), None)
        }
        OutputMode::BestGradIterate => {
            let mut best = 0;
            for (t, row) in run.rows.iter().enumerate() {
                if row.grad_norm_sq < run.rows[best].grad_norm_sq {
                    best = t;
                }
            }
            (run.iterates[best].clone(), Some(best), None)
        }
        OutputMode::UniformAverage => {
            let (w, j) = weighted(run, problem, &vec![1.0; run.iterates.len()])?;
            (w, None, j)
        }
        OutputMode::WeightedAverage { weights } => {
            let (w, j) = weighted(run, problem, weights)?;
            (w, None, j)
        }
        OutputMode::StepWeighted => {
            let (w, j) = weighted(run, problem, &run.steps())?;
            (w, None, j)
        }
    };
    if let Some(slack) = jensen_slack {
        if slack < -1e-9 {
            return Err(Error::CertificateFailure {
                location: "Jensen inequality of the averaged output".into(),
                slack,
            });
        }
    }
    let value = problem.value(&w_hat)?;
    Ok(OutputCertificate {
        gap: problem.constants().f_star.map(|fs| value - fs),
        grad_norm_sq: problem.min_norm_subgradient(&w_hat)?.norm_sq(),
        value,
        w_hat,
        index,
        jensen_slack,
    })
}
