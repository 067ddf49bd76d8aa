use crate::error::{invalid, unsupported, Result};
use crate::estimators::{all_batches, binomial, EstimatorKind, EstimatorState};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::schedules::ScheduleSpec;

use super::{CertificateRow, CertificateTrace, Scheme};

/// Largest number of batch sequences an expectation tree may contain.
pub const PATH_LIMIT: u128 = 1_000_000;

struct Tree<'a> {
    problem: &'a Problem,
    state: EstimatorState,
    batches: Vec<Vec<usize>>,
    steps: Vec<f64>,
}

impl Tree<'_> {
    /// Estimates at `w` for every batch, in batch order.
    fn draws(&self, w: &Weights) -> Result<Vec<Weights>> {
        self.batches
            .iter()
            .map(|b| self.state.evaluate(self.problem, w, b))
            .collect()
    }

    /// Max `||v||^2` and max conditional variance over all internal nodes.
    fn extremes(&self, w: &Weights, t: usize, acc: &mut (f64, f64)) -> Result<()> {
        if t == self.steps.len() {
            return Ok(());
        }
        let grad = self.problem.grad(w)?;
        let draws = self.draws(w)?;
        let mut variance = 0.0;
        for v in &draws {
            acc.0 = acc.0.max(v.norm_sq());
            variance += v.dist_sq(&grad);
        }
        acc.1 = acc.1.max(variance / draws.len() as f64);
        for v in &draws {
            self.extremes(&w.add_scaled(-self.steps[t], v), t + 1, acc)?;
        }
        Ok(())
    }
}

/// Builds the exact expectation-tree trace of an unbiased estimator without
/// asserting it. One row per internal node, in depth-first order.
pub fn stochastic_trace(
    problem: &Problem,
    estimator: EstimatorKind,
    schedule: &ScheduleSpec,
    w0: &Weights,
    horizon: usize,
    scheme: Scheme,
) -> Result<CertificateTrace> {
    if !matches!(scheme, Scheme::SgdConvexEnumerated | Scheme::SgdNonconvexEnumerated) {
        return Err(invalid(format!("{scheme:?} is not an enumerated scheme")));
    }
    if !estimator.is_unbiased() {
        return Err(unsupported(format!(
            "enumerated certificates need an unbiased estimator, got {}",
            estimator.name()
        )));
    }
    schedule.validate()?;
    if !schedule.is_history_free() {
        return Err(unsupported("enumerated certificates need a history-free schedule"));
    }
    if horizon == 0 {
        return Err(invalid("horizon T must be at least 1"));
    }
    w0.check_dim(problem.dim())?;
    let n = problem.num_components();
    let b = estimator.batch_size();
    let per_level = binomial(n, b);
    let paths = (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(per_level));
    let paths = match paths {
        Some(p) if p <= PATH_LIMIT => p,
        _ => {
            return Err(unsupported(format!(
                "C({n},{b})^{horizon} batch sequences exceed {PATH_LIMIT}"
            )))
        }
    };

    let mut state = EstimatorState::new(estimator, problem, 0)?;
    if matches!(estimator, EstimatorKind::Svrg { .. }) {
        state.set_snapshot(problem, w0)?;
    }
    let tree = Tree {
        problem,
        state,
        batches: all_batches(n, b)?,
        steps: (0..horizon)
            .map(|t| schedule.eta_at(t as u64).expect("history-free"))
            .collect(),
    };

    let c = problem.constants();
    let (w_star, f_star) = match scheme {
        Scheme::SgdConvexEnumerated => (
            Some(
                c.w_star
                    .clone()
                    .ok_or_else(|| invalid("SgdConvexEnumerated certificate needs w*"))?,
            ),
            c.f_star
                .ok_or_else(|| invalid("SgdConvexEnumerated certificate needs F*"))?,
        ),
        _ => (None, c.f_star.unwrap_or(0.0)),
    };
    let mut extremes = (0.0, 0.0);
    tree.extremes(w0, 0, &mut extremes)?;
    let (m_sq, sigma_sq) = extremes;
    let l = c.l;

    let potential = |w: &Weights| -> Result<f64> {
        Ok(match &w_star {
            Some(ws) => 0.5 * w.dist_sq(ws),
            None => problem.value(w)? - f_star,
        })
    };

    let mut rows = Vec::new();
    let mut root_bias = None;
    // explicit DFS stack of (point, depth, path)
    let mut stack = vec![(w0.clone(), 0usize, Vec::<usize>::new())];
    while let Some((w, t, path)) = stack.pop() {
        if t == horizon {
            continue;
        }
        let eta = tree.steps[t];
        let draws = tree.draws(&w)?;
        let children: Vec<Weights> = draws.iter().map(|v| w.add_scaled(-eta, v)).collect();
        let mut expected = 0.0;
        for child in &children {
            expected += potential(child)?;
        }
        expected /= children.len() as f64;
        if t == 0 {
            let mut mean = Weights::zeros(problem.dim());
            for v in &draws {
                mean.axpy(1.0, v);
            }
            let mean = mean.scale(1.0 / draws.len() as f64);
            root_bias = Some(mean.dist_sq(&problem.grad(&w)?).sqrt());
        }
        let (delta, e) = match scheme {
            Scheme::SgdConvexEnumerated => {
                (eta * (problem.value(&w)? - f_star), 0.5 * eta * eta * m_sq)
            }
            _ => (
                eta * (1.0 - 0.5 * l * eta) * problem.grad(&w)?.norm_sq(),
                0.5 * l * eta * eta * sigma_sq,
            ),
        };
        let mut row = CertificateRow::new(t, potential(&w)?, expected, delta, e);
        row.path = Some(path.clone());
        rows.push(row);
        for (k, child) in children.into_iter().enumerate().rev() {
            let mut child_path = path.clone();
            child_path.push(k);
            stack.push((child, t + 1, child_path));
        }
    }
    Ok(CertificateTrace {
        scheme,
        rows,
        root_bias,
        paths: Some(paths as u64),
    })
}

/// Builds the expectation-tree trace and asserts every node inequality
/// `E[D_{t+1} | node] + Delta_t <= D_t + E_t` to 1e-12.
pub fn certify_stochastic_enumerated(
    problem: &Problem,
    estimator: EstimatorKind,
    schedule: &ScheduleSpec,
    w0: &Weights,
    horizon: usize,
    scheme: Scheme,
) -> Result<CertificateTrace> {
    let trace = stochastic_trace(problem, estimator, schedule, w0, horizon, scheme)?;
    trace.check()?;
    Ok(trace)
}
