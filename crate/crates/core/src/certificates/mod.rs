//! Convergence certificates built on the recursion
//! `D_{t+1} + Delta_t <= omega_t D_t + E_t`.
//!
//! Each scheme maps a run to the potential `D_t`, the progress term
//! `Delta_t` and the error term `E_t`; the trace then records the slack
//! `omega_t D_t + E_t - D_{t+1} - Delta_t` and, where a closed-form rate
//! exists, the bound and the observed metric it controls.

mod bounds;
mod deterministic;
mod hybrid;
mod output;
mod rate;
mod stochastic;

pub use bounds::{evaluate_bound, gd_iteration_bound, oracle_complexity, BoundInputs, RateBound};
pub use deterministic::{certify_deterministic, deterministic_trace};
pub use hybrid::{
    certify_hybrid, hybrid_driver, minibatch_variance_sup, HybridCertParams, HybridCertificate,
};
pub use output::{certify_output, OutputCertificate, OutputMode};
pub use rate::{fit_loglog, fit_rate, MIN_FIT_POINTS};
pub use stochastic::{certify_stochastic_enumerated, stochastic_trace, PATH_LIMIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::methods::MethodKind;

/// Relative slack tolerance of pathwise certificates.
pub const DETERMINISTIC_SLACK_TOL: f64 = 1e-9;
/// Absolute slack tolerance of enumerated stochastic certificates.
pub const STOCHASTIC_SLACK_TOL: f64 = 1e-12;
/// Lower limit on `Delta_t`.
pub const DELTA_TOL: f64 = 1e-12;
/// Tolerance on bound dominance, relative to `max(1, bound)`.
pub const BOUND_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `D = 1/2 ||w - w*||^2`, `Delta = eta gap`, `E = eta^2 ||g||^2 / 2`.
    SubgradientConvex,
    /// `D = F - F*`, `Delta = eta (1 - L eta/2) ||grad F||^2`, `E = 0`.
    GdNonconvex,
    /// `D = (L/2) ||w - w*||^2 + t gap`, `Delta = t ||grad F||^2 / (2L)`, `E = 0`.
    GdConvex,
    /// `D = theta_{t-1}^2 gap + (L/2) ||u - w*||^2`.
    NesterovConvex,
    SgdConvexEnumerated,
    SgdNonconvexEnumerated,
    HybridVr,
}

impl Scheme {
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Scheme::SgdConvexEnumerated | Scheme::SgdNonconvexEnumerated | Scheme::HybridVr
        )
    }

    /// Whether a deterministic method produces runs this scheme can certify.
    pub fn accepts_method(self, method: &MethodKind) -> bool {
        match self {
            Scheme::SubgradientConvex => {
                matches!(method, MethodKind::Subgradient | MethodKind::Gd)
            }
            Scheme::GdNonconvex | Scheme::GdConvex => matches!(method, MethodKind::Gd),
            Scheme::NesterovConvex => matches!(method, MethodKind::Nesterov { .. }),
            _ => false,
        }
    }

    fn slack_floor(self, d: f64) -> f64 {
        match self {
            Scheme::SgdConvexEnumerated | Scheme::SgdNonconvexEnumerated => -STOCHASTIC_SLACK_TOL,
            _ => -DETERMINISTIC_SLACK_TOL * (1.0 + d.abs()),
        }
    }
}

/// One recursion step `t -> t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub t: usize,
    pub d: f64,
    /// `D_{t+1}`, or its conditional expectation for stochastic schemes.
    pub d_next: f64,
    pub delta: f64,
    pub e: f64,
    pub omega: f64,
    pub slack: f64,
    /// Closed-form bound on `metric`, where the scheme has one.
    pub bound: Option<f64>,
    pub metric: Option<f64>,
    /// Batch indices leading to this node of an expectation tree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<usize>>,
    /// Absolute rounding allowance added to the slack tolerance, for terms
    /// that multiply a cancellation-prone gap `F(w) - F*` by a large weight.
    #[serde(default)]
    pub rounding: f64,
}

impl CertificateRow {
    pub(crate) fn new(t: usize, d: f64, d_next: f64, delta: f64, e: f64) -> Self {
        CertificateRow {
            t,
            d,
            d_next,
            delta,
            e,
            omega: 1.0,
            slack: d + e - d_next - delta,
            bound: None,
            metric: None,
            path: None,
            rounding: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateTrace {
    pub scheme: Scheme,
    pub rows: Vec<CertificateRow>,
    /// `||E[v^0] - grad F(w^0)||` for enumerated certificates.
    pub root_bias: Option<f64>,
    /// Number of complete batch sequences in an expectation tree.
    pub paths: Option<u64>,
}

/// The first assertion a trace fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub location: String,
    pub kind: ViolationKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Slack,
    NegativeDelta,
    Bound,
    NonFinite,
}

impl CertificateTrace {
    pub fn min_slack(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.slack).reduce(f64::min)
    }

    /// `sum_t Delta_t` and `D_0 - D_{T} + sum_t E_t` over consecutive rows.
    pub fn telescoped(&self) -> Option<(f64, f64)> {
        let first = self.rows.first()?;
        let last = self.rows.last()?;
        let delta: f64 = self.rows.iter().map(|r| r.delta).sum();
        let e: f64 = self.rows.iter().map(|r| r.e).sum();
        Some((delta, first.d - last.d_next + e))
    }

    pub fn first_violation(&self) -> Option<Violation> {
        for (i, row) in self.rows.iter().enumerate() {
            let location = match &row.path {
                Some(path) => format!("t={} path={:?}", row.t, path),
                None => format!("t={}", row.t),
            };
            let violation = |kind, value| {
                Some(Violation {
                    row: i,
                    location: location.clone(),
                    kind,
                    value,
                })
            };
            let quantities = [row.d, row.d_next, row.delta, row.e, row.slack];
            if quantities.iter().any(|v| !v.is_finite()) {
                return violation(ViolationKind::NonFinite, f64::NAN);
            }
            if self.scheme == Scheme::HybridVr {
                // ensemble averages: only the bound is asserted
            } else {
                if row.delta < -DELTA_TOL {
                    return violation(ViolationKind::NegativeDelta, row.delta);
                }
                if row.slack < self.scheme.slack_floor(row.d) - row.rounding {
                    return violation(ViolationKind::Slack, row.slack);
                }
            }
            if let (Some(bound), Some(metric)) = (row.bound, row.metric) {
                if metric > bound + BOUND_TOL * bound.abs().max(1.0) {
                    return violation(ViolationKind::Bound, bound - metric);
                }
            }
        }
        None
    }

    /// Asserts every recursion step, `Delta_t >= 0` and bound dominance.
    pub fn check(&self) -> Result<()> {
        match self.first_violation() {
            None => Ok(()),
            Some(v) => Err(Error::CertificateFailure {
                location: v.location,
                slack: v.value,
            }),
        }
    }
}
