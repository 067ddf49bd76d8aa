use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problems::StructureConstants;
use crate::record::{OracleCounts, RunRecord};

/// Closed-form rate bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateBound {
    /// `F(w^t) - F* <= L R^2 / (2t)` for gradient descent with step `1/L`.
    GdConvex,
    /// `F(w^t) - F* <= 2 L R^2 / (t+1)^2` for the accelerated method.
    Nesterov,
    /// Averaged subgradient/SGD iterate with `eta = C/sqrt(T+1)`:
    /// `R^2/(2C sqrt(T+1)) + M^2 C/(2 sqrt(T+1))`.
    SgdConstantHorizon { c: f64 },
    /// Averaged iterate with `eta_t = C/sqrt(t+1)`:
    /// `(R^2 + M^2 C^2 (1 + ln(T+1))) / (4C (sqrt(T+1) - 1))`.
    SgdSqrtDecay { c: f64 },
    /// `(R^2 + M^2 sum eta_t^2) / (2 sum eta_t)` for explicit steps.
    WeightedAverage { steps: Vec<f64> },
}

/// Constants entering the bounds; `r` is `||w^0 - w*||`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l: Option<f64>,
    pub r: Option<f64>,
    pub m: Option<f64>,
}

impl BoundInputs {
    pub fn from_constants(constants: &StructureConstants, r: f64) -> Self {
        BoundInputs {
            l: Some(constants.l),
            r: Some(r),
            m: constants.m,
        }
    }
}

fn need(value: Option<f64>, name: &str) -> Result<f64> {
    value.ok_or_else(|| invalid(format!("bound needs constant {name}")))
}

/// Evaluates `bound` at iterate index `t` (for the averaged bounds, `t = T`).
pub fn evaluate_bound(bound: &RateBound, inputs: &BoundInputs, t: usize) -> Result<f64> {
    let tf = t as f64;
    match bound {
        RateBound::GdConvex => {
            if t == 0 {
                return Err(invalid("GdConvex bound starts at t = 1"));
            }
            let (l, r) = (need(inputs.l, "L")?, need(inputs.r, "R")?);
            Ok(l * r * r / (2.0 * tf))
        }
        RateBound::Nesterov => {
            let (l, r) = (need(inputs.l, "L")?, need(inputs.r, "R")?);
            Ok(2.0 * l * r * r / ((tf + 1.0) * (tf + 1.0)))
        }
        RateBound::SgdConstantHorizon { c } => {
            let (r, m) = (need(inputs.r, "R")?, need(inputs.m, "M")?);
            let root = (tf + 1.0).sqrt();
            Ok(r * r / (2.0 * c * root) + m * m * c / (2.0 * root))
        }
        RateBound::SgdSqrtDecay { c } => {
            if t == 0 {
                return Err(invalid("SgdSqrtDecay bound starts at T = 1"));
            }
            let (r, m) = (need(inputs.r, "R")?, need(inputs.m, "M")?);
            let denom = 4.0 * c * ((tf + 1.0).sqrt() - 1.0);
            Ok((r * r + m * m * c * c * (1.0 + (tf + 1.0).ln())) / denom)
        }
        RateBound::WeightedAverage { steps } => {
            let (r, m) = (need(inputs.r, "R")?, need(inputs.m, "M")?);
            let used = &steps[..steps.len().min(t + 1)];
            let s: f64 = used.iter().sum();
            if !(s > 0.0) {
                return Err(invalid("weighted bound needs positive steps"));
            }
            let sq: f64 = used.iter().map(|e| e * e).sum();
            Ok((r * r + m * m * sq) / (2.0 * s))
        }
    }
}

/// `ceil(L R^2 / (2 eps))`: gradient steps that guarantee `F - F* <= eps`.
pub fn gd_iteration_bound(l: f64, r: f64, eps: f64) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(invalid("target accuracy must be positive"));
    }
    Ok((l * r * r / (2.0 * eps)).ceil() as u64)
}

/// Total oracle calls of a run.
pub fn oracle_complexity(run: &RunRecord) -> OracleCounts {
    run.totals()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(l: f64, r: f64, m: f64) -> BoundInputs {
        BoundInputs {
            l: Some(l),
            r: Some(r),
            m: Some(m),
        }
    }

    #[test]
    fn substitution_examples() {
        assert_eq!(evaluate_bound(&RateBound::GdConvex, &inputs(1.0, 2.0, 0.0), 4).unwrap(), 0.5);
        assert_eq!(evaluate_bound(&RateBound::Nesterov, &inputs(1.0, 1.0, 0.0), 9).unwrap(), 0.02);
        let sgd = RateBound::SgdConstantHorizon { c: 1.0 };
        assert!((evaluate_bound(&sgd, &inputs(1.0, 1.0, 1.0), 99).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sqrt_decay_dominates_weighted_sum() {
        // the closed form relaxes the exact weighted expression
        let c = 0.7;
        for t in [1usize, 10, 1000] {
            let steps: Vec<f64> = (0..=t).map(|j| c / ((j + 1) as f64).sqrt()).collect();
            let exact = evaluate_bound(&RateBound::WeightedAverage { steps }, &inputs(1.0, 2.0, 3.0), t).unwrap();
            let closed = evaluate_bound(&RateBound::SgdSqrtDecay { c }, &inputs(1.0, 2.0, 3.0), t).unwrap();
            assert!(exact <= closed);
        }
    }

    #[test]
    fn missing_constants_rejected() {
        let partial = BoundInputs {
            l: Some(1.0),
            r: None,
            m: None,
        };
        assert!(evaluate_bound(&RateBound::Nesterov, &partial, 3).is_err());
        assert!(evaluate_bound(&RateBound::GdConvex, &inputs(1.0, 1.0, 1.0), 0).is_err());
        assert_eq!(gd_iteration_bound(2.0, 1.0, 1e-2).unwrap(), 100);
    }
}
