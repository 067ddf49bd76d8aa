#![allow(dead_code)]

use descentlab::problems::{Problem, ProblemKind, QuadraticTerm};
use descentlab::{DenseMatrix, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Weights {
    Weights::new((0..p).map(|_| rng.random_range(-scale..scale)).collect())
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let entries = (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    DenseMatrix::from_rows(entries).unwrap()
}

/// `A^T A / p + shift I` for a random square `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, p: usize, shift: f64) -> DenseMatrix {
    let a = random_matrix(rng, p, p);
    let mut q = a.transpose().matmul(&a).scale(1.0 / p as f64);
    for i in 0..p {
        q[(i, i)] += shift;
    }
    q
}

/// Symmetric matrix with entries in `[-scale, scale]`; usually indefinite.
pub fn random_symmetric(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> DenseMatrix {
    let a = random_matrix(rng, p, p);
    a.add(&a.transpose()).scale(0.5 * scale)
}

/// `H diag(eigs) H` with `H` a Householder reflection, so the spectrum is known exactly.
pub fn spd_with_spectrum(rng: &mut ChaCha8Rng, eigs: &[f64]) -> DenseMatrix {
    let p = eigs.len();
    let v = random_vec(rng, p, 1.0);
    let nv = v.norm_sq();
    let mut h = DenseMatrix::identity(p);
    for i in 0..p {
        for j in 0..p {
            h[(i, j)] -= 2.0 * v[i] * v[j] / nv;
        }
    }
    h.matmul(&DenseMatrix::diag(eigs)).matmul(&h)
}

pub fn quadratic(q: DenseMatrix, lin: Weights) -> Problem {
    Problem::new(ProblemKind::Quadratic(QuadraticTerm::new(q, lin.into_vec(), 0.0))).unwrap()
}

pub fn random_quadratic(seed: u64, p: usize, shift: f64) -> Problem {
    let mut r = rng(seed);
    let q = random_spd(&mut r, p, shift);
    let lin = random_vec(&mut r, p, 1.0);
    quadratic(q, lin)
}

/// Finite sum of `n` quadratics in `R^p`; `indefinite` adds mean-zero
/// symmetric perturbations so individual components are nonconvex while the
/// mean stays positive definite.
pub fn random_finite_sum(seed: u64, n: usize, p: usize, indefinite: f64) -> Problem {
    let mut r = rng(seed);
    let base = random_spd(&mut r, p, 0.5);
    let perturb: Vec<DenseMatrix> = (0..n).map(|_| random_symmetric(&mut r, p, indefinite)).collect();
    let mut mean = DenseMatrix::zeros(p, p);
    for m in &perturb {
        mean = mean.add(m);
    }
    let mean = mean.scale(1.0 / n as f64);
    let components = perturb
        .iter()
        .map(|m| {
            let h = base.add(m).add(&mean.scale(-1.0));
            QuadraticTerm::new(h, random_vec(&mut r, p, 1.0).into_vec(), 0.0)
        })
        .collect();
    Problem::new(ProblemKind::FiniteSumQuadratic { components }).unwrap()
}

pub fn max_abs_diff(a: &Weights, b: &Weights) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
