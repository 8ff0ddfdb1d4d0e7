//! Independent oracles and random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use addsel::basis::BlockGram;
use addsel::subsets;

/// Block Gram BᵀB/N of a random matrix with a shared factor.
pub fn random_gram<R: Rng>(rng: &mut R, dims: &[usize], shared: f64) -> BlockGram {
    let d: usize = dims.iter().sum();
    let rows = 3 * d + 5;
    let loadings: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b = DMatrix::<f64>::zeros(rows, d);
    for i in 0..rows {
        let u: f64 = rng.sample(StandardNormal);
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            b[(i, c)] = z + shared * loadings[c] * u;
        }
    }
    BlockGram::new(b.transpose() * &b / rows as f64, dims).unwrap()
}

pub fn random_dims<R: Rng>(rng: &mut R, q: usize, max_dim: usize) -> Vec<usize> {
    (0..q).map(|_| rng.random_range(1..=max_dim)).collect()
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn chol_l(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("positive definite block").l()
}

/// σ_max(L1⁻¹ G12 L2⁻ᵀ).
pub fn cos_angle(g11: &DMatrix<f64>, g22: &DMatrix<f64>, g12: &DMatrix<f64>) -> f64 {
    let x = chol_l(g11).solve_lower_triangular(g12).unwrap();
    let y = chol_l(g22).solve_lower_triangular(&x.transpose()).unwrap();
    y.singular_values().max()
}

/// ρ by enumerating every pair of disjoint nonempty sets of size ≤ q*.
pub fn rho(gram: &BlockGram, qstar: usize) -> f64 {
    let q = gram.q();
    let mut best = 0.0_f64;
    for a in subsets::up_to(q, qstar).skip(1) {
        let rest: Vec<usize> = (0..q).filter(|j| !a.contains(j)).collect();
        for k in 1..=qstar.min(rest.len()) {
            for b in subsets::of_size(&rest, k) {
                best = best.max(cos_angle(&gram.sub(&a), &gram.sub(&b), &gram.cross(&a, &b)));
            }
        }
    }
    best
}

/// Extreme eigenvalues of the block-whitened Gram of `set`.
pub fn whitened_extremes(gram: &BlockGram, set: &[usize]) -> (f64, f64) {
    let dims: Vec<usize> = set.iter().map(|&j| gram.block_dim(j)).collect();
    let total: usize = dims.iter().sum();
    let mut w = DMatrix::zeros(total, total);
    let mut at = 0;
    for (i, &j) in set.iter().enumerate() {
        let inv = chol_l(&gram.sub(&[j])).try_inverse().unwrap();
        w.view_mut((at, at), (dims[i], dims[i])).copy_from(&inv);
        at += dims[i];
    }
    let m = &w * gram.sub(set) * w.transpose();
    let ev = ((&m + m.transpose()) * 0.5).symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// (ε_{2q*}, ε'_{q*}) by enumerating every set of the admissible sizes.
pub fn epsilons(gram: &BlockGram, qstar: usize) -> (f64, f64) {
    let q = gram.q();
    let mut eps = 0.0_f64;
    for set in subsets::up_to(q, (2 * qstar).min(q)).skip(1) {
        eps = eps.max(1.0 - whitened_extremes(gram, &set).0);
    }
    let mut eps_prime = 0.0_f64;
    for set in subsets::up_to(q, qstar.min(q)).skip(1) {
        eps_prime = eps_prime.max(whitened_extremes(gram, &set).1 - 1.0);
    }
    (eps, eps_prime)
}

/// Operator norm of a symmetric matrix by power iteration on M².
pub fn power_iteration_norm(m: &DMatrix<f64>, iters: usize) -> f64 {
    let sq = m * m;
    let mut v = nalgebra::DVector::from_fn(m.nrows(), |i, _| 1.0 + 0.1 * i as f64);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = &sq * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.norm();
        v = w / norm;
    }
    lambda.sqrt()
}

/// Probabilists' Gauss–Hermite nodes and weights (weights sum to one), via
/// the Golub–Welsch eigenproblem.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
