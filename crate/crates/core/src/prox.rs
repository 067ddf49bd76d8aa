//! Proximal operators `prox_{gamma g}(w) = argmin_z gamma g(z) + 1/2 ||z - w||^2`.
//!
//! Three evaluation routes are provided: closed forms for separable and
//! projection cases ([`prox`]), the Moreau identity through the conjugate
//! ([`prox_via_moreau`]), and a scalar root solve on the optimality equation
//! for smooth separable `g`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, unsupported, Error, Result};
use crate::linalg::Weights;
use crate::problems::{soft_threshold, Problem};

/// Iteration cap of the scalar optimality-equation solver.
pub const SCALAR_SOLVE_MAX_ITER: usize = 200;
/// Residual target of the scalar optimality-equation solver.
pub const SCALAR_SOLVE_TOL: f64 = 1e-12;

/// Convex differentiable scalar function applied coordinatewise.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ScalarFunction {
    /// `weight * huber_delta(z)`.
    Huber { delta: f64, weight: f64 },
    /// `weight * log(cosh(z))`.
    LogCosh { weight: f64 },
    /// `weight * z^4 / 4`.
    Quartic { weight: f64 },
    /// User-supplied function with first and second derivatives.
    #[serde(skip)]
    Custom(CustomScalar),
}

/// Callback triple `(g, g', g'')` for [`ScalarFunction::Custom`].
#[derive(Clone)]
pub struct CustomScalar {
    pub value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub second_derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ScalarFunction {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            ScalarFunction::Huber { delta, weight } => {
                if z.abs() <= *delta {
                    weight * 0.5 * z * z
                } else {
                    weight * delta * (z.abs() - 0.5 * delta)
                }
            }
            ScalarFunction::LogCosh { weight } => {
                // log cosh z = |z| + log(1 + e^{-2|z|}) - log 2
                let a = z.abs();
                weight * (a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
            }
            ScalarFunction::Quartic { weight } => weight * 0.25 * z.powi(4),
            ScalarFunction::Custom(c) => (c.value)(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            ScalarFunction::Huber { delta, weight } => weight * z.clamp(-delta, *delta),
            ScalarFunction::LogCosh { weight } => weight * z.tanh(),
            ScalarFunction::Quartic { weight } => weight * z.powi(3),
            ScalarFunction::Custom(c) => (c.derivative)(z),
        }
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        match self {
            ScalarFunction::Huber { delta, weight } => {
                if z.abs() < *delta {
                    *weight
                } else {
                    0.0
                }
            }
            ScalarFunction::LogCosh { weight } => {
                let t = z.tanh();
                weight * (1.0 - t * t)
            }
            ScalarFunction::Quartic { weight } => 3.0 * weight * z * z,
            ScalarFunction::Custom(c) => (c.second_derivative)(z),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ScalarFunction::Huber { delta, weight } => *delta > 0.0 && *weight >= 0.0,
            ScalarFunction::LogCosh { weight } | ScalarFunction::Quartic { weight } => {
                *weight >= 0.0
            }
            ScalarFunction::Custom(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("scalar function parameters out of range"))
        }
    }
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFunction::Huber { delta, weight } => f
                .debug_struct("Huber")
                .field("delta", delta)
                .field("weight", weight)
                .finish(),
            ScalarFunction::LogCosh { weight } => {
                f.debug_struct("LogCosh").field("weight", weight).finish()
            }
            ScalarFunction::Quartic { weight } => {
                f.debug_struct("Quartic").field("weight", weight).finish()
            }
            ScalarFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for ScalarFunction {
    fn eq(&self, other: &Self) -> bool {
        use ScalarFunction::*;
        match (self, other) {
            (Huber { delta: a, weight: b }, Huber { delta: c, weight: d }) => a == c && b == d,
            (LogCosh { weight: a }, LogCosh { weight: b }) => a == b,
            (Quartic { weight: a }, Quartic { weight: b }) => a == b,
            (Custom(a), Custom(b)) => Arc::ptr_eq(&a.derivative, &b.derivative),
            _ => false,
        }
    }
}

/// The function `g` whose proximal operator is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxKind {
    Zero,
    /// `lambda ||z||_1`.
    L1 { lambda: f64 },
    /// `(lambda/2) ||z||^2`.
    SqL2 { lambda: f64 },
    /// Indicator of `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Indicator of `{||z|| <= radius}`.
    L2Ball { radius: f64 },
    /// `lambda sum_B ||z_B||` over a partition of the coordinates.
    GroupL2 { blocks: Vec<Vec<usize>>, lambda: f64 },
    /// `sum_i g(z_i)` for a convex differentiable scalar `g`.
    ScalarSeparable { function: ScalarFunction },
}

/// A prox operator with its step `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxSpec {
    #[serde(flatten)]
    pub kind: ProxKind,
    pub gamma: f64,
}

impl ProxSpec {
    pub fn new(kind: ProxKind, gamma: f64) -> Result<Self> {
        let spec = ProxSpec { kind, gamma };
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid("prox gamma must be positive"));
        }
        spec.kind.validate(None)?;
        Ok(spec)
    }
}

impl ProxKind {
    /// Checks parameters; with `dim` also checks dimension-dependent shapes.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            ProxKind::Zero => Ok(()),
            ProxKind::L1 { lambda } | ProxKind::SqL2 { lambda } => {
                if *lambda >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("prox weight must be nonnegative"))
                }
            }
            ProxKind::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(invalid("box bounds have different lengths"));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(invalid("box requires lo <= hi componentwise"));
                }
                match dim {
                    Some(p) if p != lo.len() => Err(invalid(format!(
                        "box has dimension {} but w has dimension {p}",
                        lo.len()
                    ))),
                    _ => Ok(()),
                }
            }
            ProxKind::L2Ball { radius } => {
                if *radius >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("ball radius must be nonnegative"))
                }
            }
            ProxKind::GroupL2 { blocks, lambda } => {
                if !(*lambda >= 0.0) {
                    return Err(invalid("prox weight must be nonnegative"));
                }
                let p = blocks.iter().map(Vec::len).sum::<usize>();
                let mut seen = vec![false; p];
                for &i in blocks.iter().flatten() {
                    if i >= p || seen[i] {
                        return Err(invalid("group blocks must partition 0..p"));
                    }
                    seen[i] = true;
                }
                match dim {
                    Some(d) if d != p => Err(invalid(format!(
                        "group blocks cover {p} coordinates but w has dimension {d}"
                    ))),
                    _ => Ok(()),
                }
            }
            ProxKind::ScalarSeparable { function } => function.validate(),
        }
    }

    /// `g(z)`; `+inf` outside the domain of indicator kinds.
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            ProxKind::Zero => 0.0,
            ProxKind::L1 { lambda } => lambda * z.iter().map(|v| v.abs()).sum::<f64>(),
            ProxKind::SqL2 { lambda } => 0.5 * lambda * crate::linalg::dot(z, z),
            ProxKind::Box { lo, hi } => {
                if z.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l <= v && v <= h) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxKind::L2Ball { radius } => {
                if crate::linalg::dot(z, z).sqrt() <= *radius {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxKind::GroupL2 { blocks, lambda } => {
                lambda
                    * blocks
                        .iter()
                        .map(|b| b.iter().map(|&i| z[i] * z[i]).sum::<f64>().sqrt())
                        .sum::<f64>()
            }
            ProxKind::ScalarSeparable { function } => z.iter().map(|v| function.value(*v)).sum(),
        }
    }

    /// `prox_{gamma g}(w)`.
    pub fn apply(&self, gamma: f64, w: &Weights) -> Result<Weights> {
        if !(gamma > 0.0) {
            return Err(invalid("prox gamma must be positive"));
        }
        self.validate(Some(w.dim()))?;
        Ok(match self {
            ProxKind::Zero => w.clone(),
            ProxKind::L1 { lambda } => {
                Weights::new(w.iter().map(|v| soft_threshold(*v, gamma * lambda)).collect())
            }
            ProxKind::SqL2 { lambda } => w.scale(1.0 / (1.0 + gamma * lambda)),
            ProxKind::Box { lo, hi } => Weights::new(
                w.iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect(),
            ),
            ProxKind::L2Ball { radius } => project_ball(w, *radius),
            ProxKind::GroupL2 { blocks, lambda } => {
                let mut out = w.clone();
                let tau = gamma * lambda;
                for block in blocks {
                    let norm = block.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt();
                    let factor = if norm <= tau { 0.0 } else { 1.0 - tau / norm };
                    for &i in block {
                        out[i] = factor * w[i];
                    }
                }
                out
            }
            ProxKind::ScalarSeparable { function } => {
                let mut out = Vec::with_capacity(w.dim());
                for &v in w.iter() {
                    out.push(solve_scalar_prox(function, gamma, v)?);
                }
                Weights::new(out)
            }
        })
    }

    /// `prox_{gamma g}(w)` computed as `w - gamma prox_{g*/gamma}(w/gamma)`.
    pub fn apply_via_moreau(&self, gamma: f64, w: &Weights) -> Result<Weights> {
        if !(gamma > 0.0) {
            return Err(invalid("prox gamma must be positive"));
        }
        self.validate(Some(w.dim()))?;
        let scaled = w.scale(1.0 / gamma);
        let dual = match self {
            // g* is the indicator of {0}
            ProxKind::Zero => Weights::zeros(w.dim()),
            // g* is the indicator of the l_inf ball of radius lambda
            ProxKind::L1 { lambda } => {
                Weights::new(scaled.iter().map(|v| v.clamp(-lambda, *lambda)).collect())
            }
            // g*(y) = ||y||^2 / (2 lambda)
            ProxKind::SqL2 { lambda } => scaled.scale(gamma * lambda / (1.0 + gamma * lambda)),
            // g* is the indicator of a product of l2 balls of radius lambda
            ProxKind::GroupL2 { blocks, lambda } => {
                let mut out = scaled.clone();
                for block in blocks {
                    let norm = block.iter().map(|&i| scaled[i] * scaled[i]).sum::<f64>().sqrt();
                    if norm > *lambda {
                        for &i in block {
                            out[i] = scaled[i] * lambda / norm;
                        }
                    }
                }
                out
            }
            ProxKind::Box { .. } | ProxKind::L2Ball { .. } | ProxKind::ScalarSeparable { .. } => {
                return Err(unsupported(format!(
                    "no conjugate implemented for {}",
                    self.name()
                )))
            }
        };
        Ok(w.add_scaled(-gamma, &dual))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProxKind::Zero => "zero",
            ProxKind::L1 { .. } => "l1",
            ProxKind::SqL2 { .. } => "sq_l2",
            ProxKind::Box { .. } => "box",
            ProxKind::L2Ball { .. } => "l2_ball",
            ProxKind::GroupL2 { .. } => "group_l2",
            ProxKind::ScalarSeparable { .. } => "scalar_separable",
        }
    }
}

/// `prox_{gamma g}(w)` for a full spec.
pub fn prox(spec: &ProxSpec, w: &Weights) -> Result<Weights> {
    spec.kind.apply(spec.gamma, w)
}

/// Dual route through the Moreau identity; agrees with [`prox`] where supported.
pub fn prox_via_moreau(spec: &ProxSpec, w: &Weights) -> Result<Weights> {
    spec.kind.apply_via_moreau(spec.gamma, w)
}

/// `G_beta(w) = (w - prox_{beta g}(w - beta grad f(w))) / beta`.
///
/// With [`ProxKind::Zero`] the gradient of the smooth part is returned as is.
pub fn gradient_mapping(problem: &Problem, g: &ProxKind, w: &Weights, beta: f64) -> Result<Weights> {
    if !(beta > 0.0) {
        return Err(invalid("gradient mapping needs beta > 0"));
    }
    let grad = problem.grad(w)?;
    if matches!(g, ProxKind::Zero) {
        return Ok(grad);
    }
    let z = g.apply(beta, &w.add_scaled(-beta, &grad))?;
    Ok(w.sub(&z).scale(1.0 / beta))
}

fn project_ball(w: &Weights, radius: f64) -> Weights {
    let norm = w.norm();
    if norm <= radius {
        w.clone()
    } else {
        w.scale(radius / norm)
    }
}

/// Solves `g'(z) + (z - w)/gamma = 0` by bisection with Newton polishing.
fn solve_scalar_prox(g: &ScalarFunction, gamma: f64, w: f64) -> Result<f64> {
    let residual = |z: f64| g.derivative(z) + (z - w) / gamma;
    let spread = gamma * g.derivative(w).abs() + 1.0;
    let (mut lo, mut hi) = (w - spread, w + spread);
    let mut z = w;
    for _ in 0..SCALAR_SOLVE_MAX_ITER {
        let r = residual(z);
        if r.abs() <= SCALAR_SOLVE_TOL {
            return Ok(z);
        }
        if r > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let slope = g.second_derivative(z) + 1.0 / gamma;
        let newton = z - r / slope;
        z = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * (1.0 + z.abs()) {
            // bracket collapsed to adjacent floats: z is the rounded root
            let r = residual(z);
            if r.abs() <= SCALAR_SOLVE_TOL * (1.0 + g.derivative(z).abs() + z.abs() / gamma) {
                return Ok(z);
            }
        }
    }
    Err(Error::NumericFailure {
        what: "scalar prox solve".into(),
        iterations: SCALAR_SOLVE_MAX_ITER,
    })
}
