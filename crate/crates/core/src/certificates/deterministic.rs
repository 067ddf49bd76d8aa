use crate::error::{invalid, Result};
use crate::linalg::Weights;
use crate::problems::Problem;
use crate::record::RunRecord;

use super::{CertificateRow, CertificateTrace, Scheme};

fn need<T>(value: Option<T>, what: &str, scheme: Scheme) -> Result<T> {
    value.ok_or_else(|| invalid(format!("{scheme:?} certificate needs {what}")))
}

/// Builds the per-step trace of a deterministic scheme without asserting it.
pub fn deterministic_trace(
    run: &RunRecord,
    problem: &Problem,
    scheme: Scheme,
) -> Result<CertificateTrace> {
    if scheme.is_stochastic() {
        return Err(invalid(format!(
            "{scheme:?} is certified on expectation trees, not single runs"
        )));
    }
    let horizon = run.horizon();
    if horizon == 0 || run.directions.len() != horizon {
        return Err(invalid("certificate needs a run with at least one recorded step"));
    }
    let c = problem.constants();
    let steps = run.steps();
    let gap = |t: usize| -> Result<f64> {
        need(run.rows[t].gap, "F*", scheme)
    };
    // absolute error of a gap formed as F(w^t) - F*
    let gap_err = |t: usize| -> f64 {
        4.0 * f64::EPSILON * (run.rows[t].value.abs() + c.f_star.unwrap_or(0.0).abs())
    };
    let mut rows = Vec::with_capacity(horizon);

    match scheme {
        Scheme::SubgradientConvex => {
            let w_star = need(c.w_star.as_ref(), "w*", scheme)?;
            let f_star = need(c.f_star, "F*", scheme)?;
            let r_sq = run.iterates[0].dist_sq(w_star);
            let mut weighted = Weights::zeros(problem.dim());
            let (mut s, mut sq) = (0.0, 0.0);
            for t in 0..horizon {
                let eta = steps[t];
                let g_sq = run.directions[t].norm_sq();
                let d = 0.5 * run.iterates[t].dist_sq(w_star);
                let d_next = 0.5 * run.iterates[t + 1].dist_sq(w_star);
                let mut row = CertificateRow::new(t, d, d_next, eta * gap(t)?, 0.5 * eta * eta * g_sq);
                weighted.axpy(eta, &run.iterates[t]);
                s += eta;
                sq += eta * eta * c.m.map_or(g_sq, |m| g_sq.max(m * m));
                let average = weighted.scale(1.0 / s);
                row.metric = Some(problem.value(&average)? - f_star);
                row.bound = Some((r_sq + sq) / (2.0 * s));
                rows.push(row);
            }
        }
        Scheme::GdNonconvex => {
            let l = c.l;
            let offset = c.f_star.unwrap_or(0.0);
            let d0 = run.rows[0].value - offset;
            let mut best = f64::INFINITY;
            let mut weight = 0.0;
            for t in 0..horizon {
                let eta = steps[t];
                let coeff = eta * (1.0 - 0.5 * l * eta);
                let grad_sq = run.rows[t].grad_norm_sq;
                let mut row = CertificateRow::new(
                    t,
                    run.rows[t].value - offset,
                    run.rows[t + 1].value - offset,
                    coeff * grad_sq,
                    0.0,
                );
                best = best.min(grad_sq);
                weight += coeff;
                if c.f_star.is_some() && weight > 0.0 {
                    row.metric = Some(best);
                    row.bound = Some(d0 / weight);
                }
                rows.push(row);
            }
        }
        Scheme::GdConvex => {
            let l = c.l;
            if !(l > 0.0) {
                return Err(invalid("GdConvex certificate needs L > 0"));
            }
            let w_star = need(c.w_star.as_ref(), "w*", scheme)?;
            let r_sq = run.iterates[0].dist_sq(w_star);
            let potential = |t: usize| -> Result<f64> {
                Ok(0.5 * l * run.iterates[t].dist_sq(w_star) + t as f64 * gap(t)?)
            };
            for t in 0..horizon {
                let delta = t as f64 / (2.0 * l) * run.rows[t].grad_norm_sq;
                let mut row = CertificateRow::new(t, potential(t)?, potential(t + 1)?, delta, 0.0);
                row.rounding = t as f64 * gap_err(t) + (t + 1) as f64 * gap_err(t + 1);
                row.metric = Some(gap(t + 1)?);
                row.bound = Some(l * r_sq / (2.0 * (t + 1) as f64));
                rows.push(row);
            }
        }
        Scheme::NesterovConvex => {
            let l = c.l;
            let w_star = need(c.w_star.as_ref(), "w*", scheme)?;
            if run.nesterov.len() != horizon {
                return Err(invalid("NesterovConvex certificate needs an accelerated run"));
            }
            let r_sq = run.iterates[0].dist_sq(w_star);
            for (t, step) in run.nesterov.iter().enumerate() {
                let (tp, th) = (step.theta_prev, step.theta);
                let d = tp * tp * gap(t)? + 0.5 * l * step.u.dist_sq(w_star);
                let d_next = th * th * gap(t + 1)? + 0.5 * l * step.u_next.dist_sq(w_star);
                let delta = (tp * tp - th * (th - 1.0)) * gap(t)?;
                let mut row = CertificateRow::new(t, d, d_next, delta, 0.0);
                row.rounding = (2.0 * tp * tp + th * (th - 1.0)) * gap_err(t) + th * th * gap_err(t + 1);
                row.metric = Some(gap(t + 1)?);
                row.bound = Some(2.0 * l * r_sq / ((t + 2) as f64).powi(2));
                rows.push(row);
            }
        }
        _ => unreachable!("stochastic schemes rejected above"),
    }
    Ok(CertificateTrace {
        scheme,
        rows,
        root_bias: None,
        paths: None,
    })
}

/// Builds the trace and asserts every step of the recursion.
pub fn certify_deterministic(
    run: &RunRecord,
    problem: &Problem,
    scheme: Scheme,
) -> Result<CertificateTrace> {
    let trace = deterministic_trace(run, problem, scheme)?;
    trace.check()?;
    Ok(trace)
}
