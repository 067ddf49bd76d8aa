//! Objective instances with exact oracles and certified structure constants.
//!
//! Every instance carries the constants the convergence bounds need: the
//! smoothness modulus `L`, the convexity modulus `mu`, an optional subgradient
//! bound `M` on a declared region `||w - w*|| <= R`, and the optimum
//! `(w*, F*)` whenever it can be computed.
//!
//! Finite sums follow the convention `F(w) = (1/n) sum_i F_i(w)`. For
//! least-squares and logistic data the per-sample terms are scaled by `n` so
//! that the convention holds for the data-fitting objectives as written.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, unsupported, Error, Result};
use crate::linalg::{power_iteration, DenseMatrix, Weights};

/// `F(w) = 1/2 w^T Q w + q^T w + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    #[serde(rename = "Q")]
    pub hessian: DenseMatrix,
    pub q: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

impl QuadraticTerm {
    pub fn new(hessian: DenseMatrix, q: Vec<f64>, c: f64) -> Self {
        QuadraticTerm { hessian, q, c }
    }

    fn value(&self, w: &[f64]) -> f64 {
        let qw = self.hessian.matvec(w);
        0.5 * crate::linalg::dot(w, &qw) + crate::linalg::dot(&self.q, w) + self.c
    }

    fn grad(&self, w: &[f64]) -> Weights {
        let mut g = self.hessian.matvec(w);
        for (gi, qi) in g.iter_mut().zip(&self.q) {
            *gi += qi;
        }
        g
    }

    fn validate(&self) -> Result<usize> {
        let p = self.q.len();
        if p == 0 {
            return Err(invalid("quadratic term has dimension 0"));
        }
        if self.hessian.rows() != p || self.hessian.cols() != p {
            return Err(invalid(format!(
                "Q must be {p}x{p}, got {}x{}",
                self.hessian.rows(),
                self.hessian.cols()
            )));
        }
        if self.hessian.max_asymmetry() > 1e-12 {
            return Err(invalid("Q is not symmetric within 1e-12"));
        }
        Ok(p)
    }
}

/// The objective families supported by the lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic(QuadraticTerm),
    /// `F(w) = 1/2 ||X^T w - y||^2` with `X` of shape `p x n`.
    LeastSquares {
        #[serde(rename = "X")]
        x: DenseMatrix,
        y: Vec<f64>,
    },
    /// `F(w) = sum_i log(1 + exp(y_i x_i^T w))` with labels `y_i = +-1`.
    Logistic {
        #[serde(rename = "X")]
        x: DenseMatrix,
        y: Vec<f64>,
    },
    /// `F(w) = f(w) + lambda ||w||_1` for a smooth `f`.
    CompositeL1 { inner: Box<ProblemKind>, lambda: f64 },
    /// `F(w) = (1/n) sum_i F_i(w)` with quadratic components.
    FiniteSumQuadratic { components: Vec<QuadraticTerm> },
}

/// A problem document as stored in fixture files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(flatten)]
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_radius: Option<f64>,
}

/// Certified structure constants of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureConstants {
    /// Smoothness modulus of the smooth part.
    pub l: f64,
    /// Convexity modulus; negative for weakly convex instances.
    pub mu: f64,
    /// Average smoothness `sqrt(lambda_max((1/n) sum Q_i^T Q_i))` for finite sums.
    pub l_average: Option<f64>,
    /// Subgradient bound, valid on `||w - w*|| <= region_radius` unless global.
    pub m: Option<f64>,
    pub f_star: Option<f64>,
    pub w_star: Option<Weights>,
    pub region_radius: Option<f64>,
    pub convex: bool,
}

/// Cap on reference proximal-gradient iterations for composite optima.
pub const COMPOSITE_REFERENCE_ITERATIONS: usize = 1_000_000;

/// An immutable problem instance: oracles plus certified constants.
#[derive(Debug, Clone)]
pub struct Problem {
    kind: ProblemKind,
    dim: usize,
    samples: Vec<Weights>,
    constants: StructureConstants,
}

impl Problem {
    /// Validates `kind` and certifies its constants without a region.
    pub fn new(kind: ProblemKind) -> Result<Self> {
        Self::with_region(kind, None)
    }

    pub fn with_region(kind: ProblemKind, region_radius: Option<f64>) -> Result<Self> {
        if let Some(r) = region_radius {
            if !(r >= 0.0) {
                return Err(invalid("region radius must be nonnegative"));
            }
        }
        let dim = validate(&kind)?;
        let samples = match smooth_part(&kind) {
            ProblemKind::LeastSquares { x, .. } | ProblemKind::Logistic { x, .. } => {
                (0..x.cols()).map(|i| x.column(i)).collect()
            }
            _ => Vec::new(),
        };
        let mut problem = Problem {
            kind,
            dim,
            samples,
            constants: StructureConstants {
                l: 0.0,
                mu: 0.0,
                l_average: None,
                m: None,
                f_star: None,
                w_star: None,
                region_radius,
                convex: false,
            },
        };
        problem.constants = certify_constants(&problem, region_radius)?;
        Ok(problem)
    }

    pub fn from_spec(spec: ProblemSpec) -> Result<Self> {
        Self::with_region(spec.kind, spec.region_radius)
    }

    /// Parses a JSON fixture document.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ProblemSpec =
            serde_json::from_str(text).map_err(|e| invalid(format!("problem document: {e}")))?;
        Self::from_spec(spec)
    }

    /// Replaces the recorded optimum, e.g. with a value computed offline.
    pub fn with_optimum(mut self, w_star: Weights, f_star: f64) -> Result<Self> {
        w_star.check_dim(self.dim)?;
        self.constants.w_star = Some(w_star);
        self.constants.f_star = Some(f_star);
        Ok(self)
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &StructureConstants {
        &self.constants
    }

    pub fn is_composite(&self) -> bool {
        matches!(self.kind, ProblemKind::CompositeL1 { .. })
    }

    /// The `lambda` of a composite instance.
    pub fn l1_weight(&self) -> Option<f64> {
        match &self.kind {
            ProblemKind::CompositeL1 { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    /// Number of finite-sum components (1 for non-sum objectives).
    pub fn num_components(&self) -> usize {
        match smooth_part(&self.kind) {
            ProblemKind::FiniteSumQuadratic { components } => components.len(),
            ProblemKind::LeastSquares { y, .. } | ProblemKind::Logistic { y, .. } => y.len(),
            _ => 1,
        }
    }

    /// `F(w)`; includes the `lambda ||w||_1` term for composite instances.
    pub fn value(&self, w: &Weights) -> Result<f64> {
        w.check_dim(self.dim)?;
        let smooth = self.smooth_value_unchecked(smooth_part(&self.kind), w);
        Ok(match &self.kind {
            ProblemKind::CompositeL1 { lambda, .. } => smooth + lambda * w.norm_l1(),
            _ => smooth,
        })
    }

    /// Value of the smooth part `f` only.
    pub fn smooth_value(&self, w: &Weights) -> Result<f64> {
        w.check_dim(self.dim)?;
        Ok(self.smooth_value_unchecked(smooth_part(&self.kind), w))
    }

    fn smooth_value_unchecked(&self, kind: &ProblemKind, w: &Weights) -> f64 {
        match kind {
            ProblemKind::Quadratic(term) => term.value(w),
            ProblemKind::LeastSquares { y, .. } => self
                .samples
                .iter()
                .zip(y)
                .map(|(xi, yi)| {
                    let r = xi.dot(w) - yi;
                    0.5 * r * r
                })
                .sum(),
            ProblemKind::Logistic { y, .. } => self
                .samples
                .iter()
                .zip(y)
                .map(|(xi, yi)| softplus(yi * xi.dot(w)))
                .sum(),
            ProblemKind::FiniteSumQuadratic { components } => {
                let n = components.len() as f64;
                components.iter().map(|c| c.value(w)).sum::<f64>() / n
            }
            ProblemKind::CompositeL1 { .. } => unreachable!("smooth_part strips composites"),
        }
    }

    /// Gradient of the smooth part. For finite sums this is exactly the mean
    /// of [`Problem::component_grad`] over all components, summed in index order.
    pub fn grad(&self, w: &Weights) -> Result<Weights> {
        w.check_dim(self.dim)?;
        Ok(self.grad_unchecked(w))
    }

    fn grad_unchecked(&self, w: &Weights) -> Weights {
        match smooth_part(&self.kind) {
            ProblemKind::Quadratic(term) => term.grad(w),
            _ => {
                let n = self.num_components();
                let mut acc = Weights::zeros(self.dim);
                for i in 0..n {
                    acc.axpy(1.0, &self.component_grad_unchecked(i, w));
                }
                acc.scale(1.0 / n as f64)
            }
        }
    }

    /// `grad F_i(w)` for the `i`-th finite-sum component.
    pub fn component_grad(&self, i: usize, w: &Weights) -> Result<Weights> {
        w.check_dim(self.dim)?;
        let n = self.num_components();
        if i >= n {
            return Err(invalid(format!("component index {i} out of range 0..{n}")));
        }
        Ok(self.component_grad_unchecked(i, w))
    }

    pub(crate) fn component_grad_unchecked(&self, i: usize, w: &Weights) -> Weights {
        let kind = smooth_part(&self.kind);
        match kind {
            ProblemKind::Quadratic(term) => term.grad(w),
            ProblemKind::FiniteSumQuadratic { components } => components[i].grad(w),
            ProblemKind::LeastSquares { y, .. } => {
                let n = y.len() as f64;
                let xi = &self.samples[i];
                let r = xi.dot(w) - y[i];
                xi.scale(n * r)
            }
            ProblemKind::Logistic { y, .. } => {
                let n = y.len() as f64;
                let xi = &self.samples[i];
                let z = y[i] * xi.dot(w);
                xi.scale(n * sigmoid(z) * y[i])
            }
            ProblemKind::CompositeL1 { .. } => unreachable!("smooth_part strips composites"),
        }
    }

    /// An element of the subdifferential; the sign of a zero coordinate is 0.
    pub fn subgradient(&self, w: &Weights) -> Result<Weights> {
        w.check_dim(self.dim)?;
        let g = self.grad_unchecked(w);
        match &self.kind {
            ProblemKind::CompositeL1 { lambda, .. } => {
                if !self.constants.convex {
                    return Err(unsupported("subgradient of a nonconvex nonsmooth objective"));
                }
                Ok(Weights::new(
                    g.iter()
                        .zip(w.iter())
                        .map(|(gi, wi)| gi + lambda * sign0(*wi))
                        .collect(),
                ))
            }
            _ => Ok(g),
        }
    }

    /// Minimal-norm element of the subdifferential of a composite objective;
    /// the gradient for smooth ones. Zero exactly at stationary points.
    pub fn min_norm_subgradient(&self, w: &Weights) -> Result<Weights> {
        w.check_dim(self.dim)?;
        let g = self.grad_unchecked(w);
        match &self.kind {
            ProblemKind::CompositeL1 { lambda, .. } => Ok(Weights::new(
                g.iter()
                    .zip(w.iter())
                    .map(|(gi, wi)| {
                        if *wi != 0.0 {
                            gi + lambda * wi.signum()
                        } else {
                            gi.signum() * (gi.abs() - lambda).max(0.0)
                        }
                    })
                    .collect(),
            )),
            _ => Ok(g),
        }
    }

    /// Hessian-vector product for objectives with constant curvature.
    pub fn hessian_vec(&self, v: &Weights) -> Option<Weights> {
        if v.dim() != self.dim {
            return None;
        }
        match &self.kind {
            ProblemKind::Quadratic(term) => Some(term.hessian.matvec(v)),
            ProblemKind::FiniteSumQuadratic { components } => {
                let mut acc = Weights::zeros(self.dim);
                for c in components {
                    acc.axpy(1.0, &c.hessian.matvec(v));
                }
                Some(acc.scale(1.0 / components.len() as f64))
            }
            ProblemKind::LeastSquares { .. } => {
                let mut acc = Weights::zeros(self.dim);
                for xi in &self.samples {
                    acc.axpy(xi.dot(v), xi);
                }
                Some(acc)
            }
            _ => None,
        }
    }

    /// `F(w) - F*` when the optimum is known.
    pub fn gap(&self, w: &Weights) -> Result<Option<f64>> {
        let f = self.value(w)?;
        Ok(self.constants.f_star.map(|fs| f - fs))
    }

    /// `||w - w*||^2` when the minimizer is known.
    pub fn dist_sq_to_opt(&self, w: &Weights) -> Option<f64> {
        self.constants.w_star.as_ref().map(|ws| w.dist_sq(ws))
    }
}

fn smooth_part(kind: &ProblemKind) -> &ProblemKind {
    match kind {
        ProblemKind::CompositeL1 { inner, .. } => inner,
        other => other,
    }
}

fn validate(kind: &ProblemKind) -> Result<usize> {
    match kind {
        ProblemKind::Quadratic(term) => term.validate(),
        ProblemKind::LeastSquares { x, y } | ProblemKind::Logistic { x, y } => {
            if x.rows() == 0 || x.cols() == 0 {
                return Err(invalid("data matrix X must be nonempty (p x n)"));
            }
            if y.len() != x.cols() {
                return Err(invalid(format!(
                    "X has {} samples but y has {} entries",
                    x.cols(),
                    y.len()
                )));
            }
            if matches!(kind, ProblemKind::Logistic { .. }) && y.iter().any(|v| v.abs() != 1.0) {
                return Err(invalid("logistic labels must be +1 or -1"));
            }
            Ok(x.rows())
        }
        ProblemKind::CompositeL1 { inner, lambda } => {
            if !(*lambda >= 0.0) {
                return Err(invalid("lambda must be nonnegative"));
            }
            if matches!(**inner, ProblemKind::CompositeL1 { .. }) {
                return Err(invalid("composite inner part must be smooth"));
            }
            validate(inner)
        }
        ProblemKind::FiniteSumQuadratic { components } => {
            let first = components
                .first()
                .ok_or_else(|| invalid("finite sum needs at least one component"))?;
            let p = first.validate()?;
            for c in components {
                if c.validate()? != p {
                    return Err(invalid("finite-sum components have different dimensions"));
                }
            }
            Ok(p)
        }
    }
}

/// Computes `L`, `mu`, `M`, `w*` and `F*` for a validated problem.
///
/// `L` comes from power iteration on the curvature operator (on `Q^2` for
/// possibly indefinite `Q`), `mu` from power iteration on `L I - H`.
pub fn certify_constants(
    problem: &Problem,
    region_radius: Option<f64>,
) -> Result<StructureConstants> {
    let p = problem.dim;
    let smooth = smooth_part(&problem.kind);
    let (l, mu, l_average) = match smooth {
        ProblemKind::Quadratic(term) => {
            let (l, mu) = symmetric_extremes(&term.hessian)?;
            (l, mu, None)
        }
        ProblemKind::FiniteSumQuadratic { components } => {
            let n = components.len() as f64;
            let mean = components
                .iter()
                .fold(DenseMatrix::zeros(p, p), |acc, c| acc.add(&c.hessian))
                .scale(1.0 / n);
            let (l, mu) = symmetric_extremes(&mean)?;
            let avg_sq = power_iteration(p, |x| {
                let mut acc = Weights::zeros(p);
                for c in components {
                    let qx = c.hessian.matvec(x);
                    acc.axpy(1.0, &c.hessian.matvec(&qx));
                }
                acc.scale(1.0 / n)
            })?;
            (l, mu, Some(avg_sq.max(0.0).sqrt()))
        }
        ProblemKind::LeastSquares { .. } | ProblemKind::Logistic { .. } => {
            let gram = |x: &[f64]| {
                let mut acc = Weights::zeros(p);
                for xi in &problem.samples {
                    acc.axpy(crate::linalg::dot(xi, x), xi);
                }
                acc
            };
            let top = power_iteration(p, gram)?;
            if matches!(smooth, ProblemKind::Logistic { .. }) {
                (0.25 * top, 0.0, None)
            } else {
                let shifted = power_iteration(p, |x| {
                    let g = gram(x);
                    Weights::new(x.iter().zip(g.iter()).map(|(xi, gi)| top * xi - gi).collect())
                })?;
                (top, (top - shifted).max(0.0), None)
            }
        }
        ProblemKind::CompositeL1 { .. } => unreachable!(),
    };
    let tol = 1e-10 * l.max(1.0);
    let convex = mu >= -tol;

    // Minimizer of the smooth part.
    let smooth_star = match smooth {
        ProblemKind::Quadratic(term) if convex => quadratic_minimizer(&term.hessian, &term.q),
        ProblemKind::FiniteSumQuadratic { components } if convex => {
            let n = components.len() as f64;
            let mean_h = components
                .iter()
                .fold(DenseMatrix::zeros(p, p), |acc, c| acc.add(&c.hessian))
                .scale(1.0 / n);
            let mut mean_q = vec![0.0; p];
            for c in components {
                for (m, qi) in mean_q.iter_mut().zip(&c.q) {
                    *m += qi / n;
                }
            }
            quadratic_minimizer(&mean_h, &mean_q)
        }
        ProblemKind::LeastSquares { y, .. } => {
            let mut gram = DenseMatrix::zeros(p, p);
            let mut rhs = vec![0.0; p];
            for (xi, yi) in problem.samples.iter().zip(y) {
                for a in 0..p {
                    rhs[a] += xi[a] * yi;
                    for b in 0..p {
                        gram[(a, b)] += xi[a] * xi[b];
                    }
                }
            }
            gram.solve(&rhs)
        }
        _ => None,
    };

    let mut constants = StructureConstants {
        l,
        mu,
        l_average,
        m: None,
        f_star: None,
        w_star: None,
        region_radius,
        convex,
    };

    match &problem.kind {
        ProblemKind::CompositeL1 { inner, lambda } => {
            let sqrt_p = (p as f64).sqrt();
            let inner_is_zero = matches!(&**inner, ProblemKind::Quadratic(t)
                if t.hessian.is_zero() && t.q.iter().all(|v| *v == 0.0));
            if inner_is_zero {
                constants.w_star = Some(Weights::zeros(p));
                constants.f_star = Some(problem.value(&Weights::zeros(p))?);
                constants.m = Some(lambda * sqrt_p);
            } else if convex && l > 0.0 {
                if let Some(ws) = composite_reference_solution(problem, l)? {
                    constants.f_star = Some(problem.value(&ws)?);
                    if let Some(r) = region_radius {
                        let g = problem.grad_unchecked(&ws);
                        constants.m = Some(g.norm() + l * r + lambda * sqrt_p);
                    }
                    constants.w_star = Some(ws);
                }
            }
        }
        ProblemKind::Logistic { .. } => {
            constants.m = Some(problem.samples.iter().map(|x| x.norm()).sum());
        }
        _ => {
            if let Some(ws) = smooth_star {
                constants.f_star = Some(problem.value(&ws)?);
                if let Some(r) = region_radius {
                    constants.m = Some(l * r);
                }
                constants.w_star = Some(ws);
            }
        }
    }
    Ok(constants)
}

/// Spectral norm and smallest eigenvalue of a symmetric matrix.
fn symmetric_extremes(h: &DenseMatrix) -> Result<(f64, f64)> {
    let p = h.rows();
    if h.is_zero() {
        return Ok((0.0, 0.0));
    }
    let norm_sq = power_iteration(p, |x| h.matvec(&h.matvec(x)))?;
    let l = norm_sq.max(0.0).sqrt();
    let shifted = power_iteration(p, |x| {
        let hx = h.matvec(x);
        Weights::new(x.iter().zip(hx.iter()).map(|(xi, hi)| l * xi - hi).collect())
    })?;
    Ok((l, l - shifted))
}

fn quadratic_minimizer(h: &DenseMatrix, q: &[f64]) -> Option<Weights> {
    if q.iter().all(|v| *v == 0.0) {
        return Some(Weights::zeros(q.len()));
    }
    let neg_q: Vec<f64> = q.iter().map(|v| -v).collect();
    h.solve(&neg_q)
}

/// Proximal-gradient reference solve for composite optima, step `1/L`.
fn composite_reference_solution(problem: &Problem, l: f64) -> Result<Option<Weights>> {
    let lambda = problem.l1_weight().unwrap_or(0.0);
    let step = 1.0 / l;
    let mut w = Weights::zeros(problem.dim);
    for _ in 0..COMPOSITE_REFERENCE_ITERATIONS {
        let g = problem.grad_unchecked(&w);
        let next = Weights::new(
            w.iter()
                .zip(g.iter())
                .map(|(wi, gi)| soft_threshold(wi - step * gi, step * lambda))
                .collect(),
        );
        if !next.is_finite() {
            return Ok(None);
        }
        let moved = next.dist_sq(&w).sqrt();
        w = next;
        if moved <= 1e-15 * (1.0 + w.norm()) {
            return Ok(Some(w));
        }
    }
    Ok(Some(w))
}

pub(crate) fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x.abs() <= tau {
        0.0
    } else {
        x - tau * x.signum()
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Convenience constructors for common fixtures.
pub mod fixtures {
    use super::*;

    pub fn quadratic(hessian: DenseMatrix, q: Vec<f64>) -> Result<Problem> {
        Problem::new(ProblemKind::Quadratic(QuadraticTerm::new(hessian, q, 0.0)))
    }

    /// `1/2 ||w||^2` in R^p.
    pub fn half_norm_sq(p: usize) -> Result<Problem> {
        quadratic(DenseMatrix::identity(p), vec![0.0; p])
    }

    /// `lambda ||w||_1` in R^p.
    pub fn l1_norm(p: usize, lambda: f64) -> Result<Problem> {
        Problem::new(ProblemKind::CompositeL1 {
            inner: Box::new(ProblemKind::Quadratic(QuadraticTerm::new(
                DenseMatrix::zeros(p, p),
                vec![0.0; p],
                0.0,
            ))),
            lambda,
        })
    }

    /// Scalar components `F_i(w) = 1/2 (w - a_i)^2`.
    pub fn shifted_scalar_sum(centers: &[f64]) -> Result<Problem> {
        Problem::new(ProblemKind::FiniteSumQuadratic {
            components: centers
                .iter()
                .map(|a| QuadraticTerm::new(DenseMatrix::identity(1), vec![-a], 0.5 * a * a))
                .collect(),
        })
    }
}

impl From<ProblemKind> for ProblemSpec {
    fn from(kind: ProblemKind) -> Self {
        ProblemSpec {
            kind,
            region_radius: None,
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Problem::from_json(s)
    }
}
