//! Per-run traces shared by the deterministic and stochastic engines.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Weights;
use crate::problems::Problem;

/// Cumulative oracle usage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub values: u64,
    pub grads: u64,
    pub component_grads: u64,
    pub prox: u64,
}

impl OracleCounts {
    /// Gradient work in component-gradient units: a full gradient of an
    /// `n`-term sum costs `n`.
    pub fn gradient_work(&self, n: usize) -> u64 {
        self.grads * n as u64 + self.component_grads
    }
}

/// One row per iterate `w^t`, `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub value: f64,
    pub gap: Option<f64>,
    /// `||grad F(w^t)||^2`; the minimal-norm subgradient for composite objectives.
    pub grad_norm_sq: f64,
    pub dist_sq: Option<f64>,
    /// Step taken from `w^t`; absent on the final row.
    pub eta: Option<f64>,
    /// Oracle calls spent to produce `w^t`.
    pub oracle: OracleCounts,
}

/// Accelerated-method quantities for step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NesterovStep {
    pub theta_prev: f64,
    pub theta: f64,
    /// Momentum coefficient `beta_t = (theta_{t-1} - 1)/theta_t` of the two-sequence form.
    pub beta: f64,
    pub u: Weights,
    /// `u^{t+1}` before any restart reset.
    pub u_next: Weights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<TraceRow>,
    pub iterates: Vec<Weights>,
    /// Direction-defining vector applied at each step (gradient, subgradient
    /// or stochastic estimate).
    pub directions: Vec<Weights>,
    pub nesterov: Vec<NesterovStep>,
    /// Iterate indices at which a restart fired.
    pub restarts: Vec<usize>,
    pub degenerate_steps: usize,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Seconds; excluded from determinism comparisons.
    pub wall_time: f64,
}

impl RunRecord {
    pub(crate) fn start(seed: Option<u64>) -> Self {
        RunRecord {
            rows: Vec::new(),
            iterates: Vec::new(),
            directions: Vec::new(),
            nesterov: Vec::new(),
            restarts: Vec::new(),
            degenerate_steps: 0,
            seed,
            config_hash: None,
            wall_time: 0.0,
        }
    }

    /// Appends the row for the next iterate.
    pub(crate) fn push_iterate(
        &mut self,
        problem: &Problem,
        w: Weights,
        oracle: OracleCounts,
    ) -> Result<()> {
        let value = problem.value(&w)?;
        let row = TraceRow {
            t: self.rows.len(),
            value,
            gap: problem.constants().f_star.map(|fs| value - fs),
            grad_norm_sq: problem.min_norm_subgradient(&w)?.norm_sq(),
            dist_sq: problem.dist_sq_to_opt(&w),
            eta: None,
            oracle,
        };
        self.rows.push(row);
        self.iterates.push(w);
        Ok(())
    }

    pub(crate) fn set_last_eta(&mut self, eta: f64) {
        if let Some(row) = self.rows.last_mut() {
            row.eta = Some(eta);
        }
    }

    /// Number of steps taken.
    pub fn horizon(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn totals(&self) -> OracleCounts {
        self.rows.last().map(|r| r.oracle).unwrap_or_default()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.eta).collect()
    }

    pub fn last_iterate(&self) -> Option<&Weights> {
        self.iterates.last()
    }

    /// Trace equality ignoring wall time.
    pub fn same_trace(&self, other: &RunRecord) -> bool {
        self.rows == other.rows
            && self.iterates == other.iterates
            && self.directions == other.directions
            && self.nesterov == other.nesterov
            && self.restarts == other.restarts
            && self.seed == other.seed
    }
}
