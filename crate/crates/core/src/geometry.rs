//! Population geometry of the additive subspaces: minimal angles, the
//! restricted-isometry-type constants and the signal strengths κ_l.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{phi, BasisSpec, BlockGram};
use crate::error::{Error, Result};
use crate::law::DesignLaw;
use crate::linalg::{inv_sqrt_spd, spectral_norm, sym_eigen, sym_extremes, EIGEN_FLOOR};
use crate::simulate::AdditiveModel;
use crate::subsets::{self, binom, check_budget, DEFAULT_BUDGET};

const BUDGET_HINT: &str = "reduce q* or restrict the analysis to a subset of covariates";

/// Largest subset size for which κ_l is enumerated exhaustively.
pub const MAX_KAPPA_SUPPORT: usize = 20;

/// Minimum number of grid points per covariate for the sup-norm ratio.
pub const MIN_GRID: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub qstar: usize,
    pub rho_qstar: f64,
    pub eps_2qstar: f64,
    pub eps_prime_qstar: f64,
    /// Absent when no model (or an empty active set) was supplied.
    pub kappa: Option<f64>,
    pub kappa_l: Vec<f64>,
    /// Grid lower bound of φ_{2q*}; absent unless requested.
    pub phi_2qstar: Option<f64>,
    pub ric_chain_holds: bool,
}

/// Cosine of the minimal angle between the column spans of two Gram blocks:
/// the largest singular value of G11^{-1/2} G12 G22^{-1/2}, clipped to [0,1].
pub fn min_angle_cos(g11: &DMatrix<f64>, g22: &DMatrix<f64>, g12: &DMatrix<f64>) -> Result<f64> {
    if g12.nrows() != g11.nrows() || g12.ncols() != g22.nrows() {
        return Err(Error::Dimension {
            expected: g11.nrows(),
            got: g12.nrows(),
        });
    }
    if g11.nrows() == 0 || g22.nrows() == 0 {
        return Ok(0.0);
    }
    let w1 = inv_sqrt_spd(g11, "G11")?;
    let w2 = inv_sqrt_spd(g22, "G22")?;
    Ok(whitened_cos(&w1, &w2, g12))
}

fn whitened_cos(w1: &DMatrix<f64>, w2: &DMatrix<f64>, g12: &DMatrix<f64>) -> f64 {
    spectral_norm(&(w1 * g12 * w2)).clamp(0.0, 1.0)
}

fn set_label(set: &[usize]) -> String {
    format!("G{set:?}")
}

/// ρ_{q*} from a block Gram: the worst minimal-angle cosine over disjoint
/// pairs (J₁, J₂) with |J₁|, |J₂| ≤ q*.
///
/// The cosine can only grow when either set grows, so only pairs that cannot
/// be enlarged are visited: both of size q* when q ≥ 2q*, otherwise the
/// partitions of all covariates.
pub fn rho_qstar_from_gram(gram: &BlockGram, qstar: usize, budget: u128) -> Result<f64> {
    let q = gram.q();
    if qstar == 0 || q < 2 {
        return Ok(0.0);
    }
    let k = qstar.min(q);
    let pairs = maximal_pairs(q, k);
    let count = pairs.len() as u128;
    check_budget(count, budget, BUDGET_HINT)?;
    let mut cache: HashMap<Vec<usize>, DMatrix<f64>> = HashMap::new();
    let mut best = 0.0_f64;
    for (a, b) in pairs {
        for set in [&a, &b] {
            if !cache.contains_key(set) {
                let w = inv_sqrt_spd(&gram.sub(set), &set_label(set))?;
                cache.insert(set.clone(), w);
            }
        }
        let c = whitened_cos(&cache[&a], &cache[&b], &gram.cross(&a, &b));
        best = best.max(c);
        if best >= 1.0 {
            break;
        }
    }
    Ok(best)
}

/// Unordered disjoint pairs (J₁ < J₂ lexicographically) that cannot be
/// enlarged within the size cap `k`.
fn maximal_pairs(q: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..q).collect();
    let mut out = Vec::new();
    if q >= 2 * k {
        for a in subsets::of_size(&all, k) {
            let rest = subsets::difference(&all, &a);
            for b in subsets::of_size(&rest, k) {
                if a < b {
                    out.push((a.clone(), b));
                }
            }
        }
    } else {
        for size in 1..=k {
            for a in subsets::of_size(&all, size) {
                let b = subsets::difference(&all, &a);
                if b.len() <= k && !b.is_empty() && a < b {
                    out.push((a, b));
                }
            }
        }
    }
    out
}

/// Number of disjoint pairs visited by [`rho_qstar_from_gram`].
pub fn pair_count(q: usize, qstar: usize) -> u128 {
    let k = qstar.min(q);
    if q >= 2 * k {
        binom(q, k).saturating_mul(binom(q - k, k)) / 2
    } else {
        maximal_pairs(q, k).len() as u128
    }
}

pub fn rho_qstar(spec: &BasisSpec, law: &DesignLaw, qstar: usize, budget: u128) -> Result<f64> {
    check_budget(pair_count(spec.q(), qstar), budget, BUDGET_HINT)?;
    rho_qstar_from_gram(&law.block_gram(spec)?, qstar, budget)
}

/// Block-normalised Gram D^{-1/2} G D^{-1/2} over all covariates.
fn normalised_gram(gram: &BlockGram) -> Result<DMatrix<f64>> {
    let q = gram.q();
    let total = gram.matrix().nrows();
    let mut w = DMatrix::zeros(total, total);
    let off = gram.offsets().to_vec();
    for j in 0..q {
        let d = gram.block_dim(j);
        if d == 0 {
            continue;
        }
        let wj = inv_sqrt_spd(&gram.sub(&[j]), &set_label(&[j]))?;
        w.view_mut((off[j], off[j]), (d, d)).copy_from(&wj);
    }
    Ok(&w * gram.matrix() * &w)
}

/// (ε_{2q*}, ε'_{q*}) from a block Gram.
///
/// Both extremes are monotone in the subset (eigenvalue interlacing of
/// principal submatrices), so only subsets of the largest admissible size
/// are visited.
pub fn epsilon_constants_from_gram(
    gram: &BlockGram,
    qstar: usize,
    budget: u128,
) -> Result<(f64, f64)> {
    let q = gram.q();
    let big = (2 * qstar).min(q);
    let small = qstar.min(q);
    let count = binom(q, big).saturating_add(binom(q, small));
    check_budget(count, budget, BUDGET_HINT)?;
    let norm = normalised_gram(gram)?;
    let all: Vec<usize> = (0..q).collect();
    let mut eps = 0.0_f64;
    for set in subsets::of_size(&all, big) {
        let cols = gram.columns(&set);
        if cols.is_empty() {
            continue;
        }
        let (lo, _) = sym_extremes(&crate::linalg::principal(&norm, &cols));
        eps = eps.max(1.0 - lo);
    }
    let mut eps_prime = 0.0_f64;
    for set in subsets::of_size(&all, small) {
        let cols = gram.columns(&set);
        if cols.is_empty() {
            continue;
        }
        let (_, hi) = sym_extremes(&crate::linalg::principal(&norm, &cols));
        eps_prime = eps_prime.max(hi - 1.0);
    }
    Ok((eps.max(0.0), eps_prime.max(0.0)))
}

pub fn epsilon_constants(
    spec: &BasisSpec,
    law: &DesignLaw,
    qstar: usize,
    budget: u128,
) -> Result<(f64, f64)> {
    epsilon_constants_from_gram(&law.block_gram(spec)?, qstar, budget)
}

/// κ and (κ_1, …, κ_s) of a model under a design law.
pub fn kappa_values(model: &AdditiveModel, law: &DesignLaw) -> Result<(f64, Vec<f64>)> {
    let comps = model.active_components();
    if comps.len() > MAX_KAPPA_SUPPORT {
        return Err(Error::BudgetExceeded {
            count: 1u128 << comps.len(),
            budget: 1u128 << MAX_KAPPA_SUPPORT,
            hint: "active set too large for exhaustive κ enumeration".into(),
        });
    }
    let gram = law.function_gram(&comps)?;
    kappa_from_function_gram(&gram)
}

/// κ_l = min over l-subsets S of 1ᵀ F_S 1 for a Gram F of component functions.
pub fn kappa_from_function_gram(f: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let s = f.nrows();
    if s == 0 {
        return Err(Error::domain("κ is undefined for an empty active set"));
    }
    let mut kappa_l = vec![f64::INFINITY; s];
    for mask in 1u32..(1u32 << s) {
        let idx: Vec<usize> = (0..s).filter(|i| mask >> i & 1 == 1).collect();
        let v: f64 = idx
            .iter()
            .flat_map(|&a| idx.iter().map(move |&b| f[(a, b)]))
            .sum();
        let l = idx.len();
        kappa_l[l - 1] = kappa_l[l - 1].min(v);
    }
    let kappa = kappa_l.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((kappa, kappa_l))
}

/// Whether 1 − ε_{2q*} ≥ (1 − ρ²)^{log₂ q* + 1}, up to 1e-12 rounding.
///
/// This inequality does not hold in general: two one-dimensional blocks at
/// cosine ρ already give 1 − ε₂ = 1 − ρ. See [`ric_chain_lower_bound`].
pub fn check_ric_chain(rho: f64, eps_2qstar: f64, qstar: usize) -> bool {
    let exponent = (qstar.max(1) as f64).log2() + 1.0;
    1.0 - eps_2qstar >= (1.0 - rho * rho).powf(exponent) - 1e-12
}

/// A valid lower bound on 1 − ε_{2q*} from ρ_{q*}: splitting a set of size
/// 2q* in halves ⌈log₂ q*⌉ + 1 times, each split costing a factor 1 − ρ.
pub fn ric_chain_lower_bound(rho: f64, qstar: usize) -> f64 {
    let levels = (qstar.max(1) as f64).log2().ceil() + 1.0;
    (1.0 - rho).powf(levels)
}

/// Values of the (population-centered) basis of V_j on a grid.
fn grid_block(spec: &BasisSpec, law: &DesignLaw, j: usize, grid: &[f64]) -> Result<DMatrix<f64>> {
    let means = law.basis_means(j, spec.level(j))?;
    let idx: Vec<usize> = spec.indices(j).collect();
    Ok(DMatrix::from_fn(grid.len(), idx.len(), |t, c| {
        let k = idx[c];
        let shift = if spec.is_centered(j) {
            means[k - 1]
        } else {
            0.0
        };
        phi(k, grid[t]) - shift
    }))
}

/// Grid lower bound of φ_J = sup_x √(b(x)ᵀ G_J⁻¹ b(x) / d_J).
///
/// One covariate is searched exhaustively over `grid_size` points. Several
/// covariates are searched by coordinate ascent from deterministic starts.
pub fn sup_norm_ratio(
    spec: &BasisSpec,
    law: &DesignLaw,
    set: &[usize],
    grid_size: usize,
) -> Result<f64> {
    let gram = law.block_gram(spec)?;
    sup_norm_ratio_with(spec, law, &gram, set, grid_size)
}

fn sup_norm_ratio_with(
    spec: &BasisSpec,
    law: &DesignLaw,
    gram: &BlockGram,
    set: &[usize],
    grid_size: usize,
) -> Result<f64> {
    if grid_size < MIN_GRID {
        return Err(Error::domain(format!(
            "grid size {grid_size} below {MIN_GRID}"
        )));
    }
    let d = spec.d_set(set);
    if d == 0 {
        return Err(Error::domain("sup-norm ratio needs d_J ≥ 1"));
    }
    let g = gram.sub(set);
    let (values, vectors) = sym_eigen(&g);
    if values[0] < EIGEN_FLOOR {
        return Err(Error::Singular {
            block: set_label(set),
            min_eigenvalue: values[0],
        });
    }
    let ginv = DMatrix::from_fn(d, d, |i, k| {
        (0..d)
            .map(|e| vectors[(i, e)] * vectors[(k, e)] / values[e])
            .sum()
    });
    let grid: Vec<f64> = (0..grid_size)
        .map(|t| t as f64 / (grid_size - 1) as f64)
        .collect();
    let blocks: Vec<DMatrix<f64>> = set
        .iter()
        .map(|&j| grid_block(spec, law, j, &grid))
        .collect::<Result<_>>()?;
    let mut offs = vec![0];
    for b in &blocks {
        offs.push(offs.last().unwrap() + b.ncols());
    }
    let live: Vec<usize> = (0..set.len()).filter(|&a| blocks[a].ncols() > 0).collect();

    // Per-block quadratic terms b_jᵀ (G⁻¹)_jj b_j over the grid.
    let diag_terms: Vec<Vec<f64>> = (0..set.len())
        .map(|a| {
            let r = offs[a]..offs[a + 1];
            let sub = ginv
                .view((r.start, r.start), (r.len(), r.len()))
                .into_owned();
            (0..grid_size)
                .map(|t| {
                    let b = blocks[a].row(t).transpose();
                    (b.transpose() * &sub * &b)[(0, 0)]
                })
                .collect()
        })
        .collect();

    let objective = |state: &[usize]| -> f64 {
        let mut b = DVector::zeros(d);
        for a in 0..set.len() {
            for c in 0..blocks[a].ncols() {
                b[offs[a] + c] = blocks[a][(state[a], c)];
            }
        }
        (b.transpose() * &ginv * &b)[(0, 0)]
    };

    if live.len() == 1 {
        let best = diag_terms[live[0]].iter().copied().fold(0.0_f64, f64::max);
        return Ok((best.max(0.0) / d as f64).sqrt());
    }

    let mut starts: Vec<Vec<usize>> = Vec::new();
    for frac in [0usize, 1, 2, 3] {
        starts.push(vec![frac * (grid_size - 1) / 4; set.len()]);
    }
    // each covariate at its own single-block maximiser
    starts.push((0..set.len()).map(|a| argmax(&diag_terms[a])).collect());
    let mut best = 0.0_f64;
    for mut state in starts {
        let mut value = objective(&state);
        for _sweep in 0..50 {
            let mut improved = false;
            for &a in &live {
                // linear term 2 b_aᵀ (G⁻¹)_{a,rest} b_rest
                let mut rest = DVector::zeros(d);
                for (other, blk) in blocks.iter().enumerate() {
                    if other == a {
                        continue;
                    }
                    for c in 0..blk.ncols() {
                        rest[offs[other] + c] = blk[(state[other], c)];
                    }
                }
                let cross = ginv.rows(offs[a], offs[a + 1] - offs[a]) * &rest;
                let base = (rest.transpose() * &ginv * &rest)[(0, 0)];
                let (t_best, v_best) = (0..grid_size)
                    .map(|t| {
                        let lin: f64 = (0..blocks[a].ncols())
                            .map(|c| blocks[a][(t, c)] * cross[c])
                            .sum();
                        (t, base + diag_terms[a][t] + 2.0 * lin)
                    })
                    .fold(
                        (state[a], value),
                        |acc, x| if x.1 > acc.1 + 1e-15 { x } else { acc },
                    );
                if t_best != state[a] {
                    state[a] = t_best;
                    value = v_best;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        best = best.max(value);
    }
    Ok((best.max(0.0) / d as f64).sqrt())
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
        )
        .0
}

/// φ_{2q*} = max over nonempty |J| ≤ 2q* of the grid sup-norm ratio.
pub fn phi_qstar(
    spec: &BasisSpec,
    law: &DesignLaw,
    size: usize,
    grid_size: usize,
    budget: u128,
) -> Result<f64> {
    let q = spec.q();
    check_budget(subsets::count_up_to(q, size), budget, BUDGET_HINT)?;
    let gram = law.block_gram(spec)?;
    let mut best = 0.0_f64;
    for set in subsets::up_to(q, size).skip(1) {
        if spec.d_set(&set) == 0 {
            continue;
        }
        best = best.max(sup_norm_ratio_with(spec, law, &gram, &set, grid_size)?);
    }
    Ok(best)
}

/// Samples random pairs (h₁, h₂) and checks ‖h₁ + h₂‖² ≥ (1 − ρ²)‖h₁‖².
pub fn verify_angle_equivalence(
    g11: &DMatrix<f64>,
    g22: &DMatrix<f64>,
    g12: &DMatrix<f64>,
    trials: usize,
    seed: u64,
) -> Result<bool> {
    let rho = min_angle_cos(g11, g22, g12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d1, d2) = (g11.nrows(), g22.nrows());
    for _ in 0..trials {
        let a = DVector::from_fn(d1, |_, _| StandardNormal.sample(&mut rng));
        let b = DVector::from_fn(d2, |_, _| StandardNormal.sample(&mut rng));
        let (sum, h1) = pair_norms(g11, g22, g12, &a, &b);
        if sum < (1.0 - rho * rho) * h1 - 1e-10 * h1.max(1.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// (‖h₁ + h₂‖², ‖h₁‖²) for coefficient vectors in the two bases.
pub fn pair_norms(
    g11: &DMatrix<f64>,
    g22: &DMatrix<f64>,
    g12: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> (f64, f64) {
    let h1 = (a.transpose() * g11 * a)[(0, 0)];
    let cross = (a.transpose() * g12 * b)[(0, 0)];
    let h2 = (b.transpose() * g22 * b)[(0, 0)];
    (h1 + 2.0 * cross + h2, h1)
}

/// Coefficients of the extremal pair: h₁ of unit norm along the top
/// canonical direction and h₂ = −Π_{H₂} h₁.
pub fn extremal_pair(
    g11: &DMatrix<f64>,
    g22: &DMatrix<f64>,
    g12: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let w1 = inv_sqrt_spd(g11, "G11")?;
    let w2 = inv_sqrt_spd(g22, "G22")?;
    let m = &w1 * g12 * &w2;
    let svd = m.clone().svd(true, true);
    let top = (0..svd.singular_values.len())
        .max_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .ok_or_else(|| Error::domain("empty blocks"))?;
    let u = svd.u.as_ref().unwrap().column(top).into_owned();
    let v = svd.v_t.as_ref().unwrap().row(top).transpose();
    let sigma = svd.singular_values[top];
    Ok((&w1 * u, -(&w2 * v) * sigma))
}

/// ‖f − Π_J f‖² for f with coefficient vector `coeffs` in the full basis,
/// where Π_J is the population projection onto V_J.
pub fn population_projection_residual(
    gram: &BlockGram,
    coeffs: &DVector<f64>,
    set: &[usize],
) -> Result<f64> {
    let g = gram.matrix();
    let total = (coeffs.transpose() * g * coeffs)[(0, 0)];
    let cols = gram.columns(set);
    if cols.is_empty() {
        return Ok(total);
    }
    let gj = gram.sub(set);
    let b = DVector::from_iterator(
        cols.len(),
        cols.iter().map(|&c| (g.row(c) * coeffs)[(0, 0)]),
    );
    let chol = gj.cholesky().ok_or_else(|| Error::Singular {
        block: set_label(set),
        min_eigenvalue: sym_extremes(&gram.sub(set)).0,
    })?;
    let x = chol.solve(&b);
    Ok((total - b.dot(&x)).max(0.0))
}

/// Options for [`geometry_report`].
#[derive(Debug, Clone)]
pub struct GeometryOptions {
    pub budget: u128,
    /// Grid points per covariate for φ_{2q*}; `None` skips it.
    pub grid_size: Option<usize>,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        GeometryOptions {
            budget: DEFAULT_BUDGET,
            grid_size: None,
        }
    }
}

pub fn geometry_report(
    spec: &BasisSpec,
    law: &DesignLaw,
    model: Option<&AdditiveModel>,
    qstar: usize,
    opts: &GeometryOptions,
) -> Result<GeometryReport> {
    let gram = law.block_gram(spec)?;
    check_budget(pair_count(spec.q(), qstar), opts.budget, BUDGET_HINT)?;
    let rho = rho_qstar_from_gram(&gram, qstar, opts.budget)?;
    if rho >= 1.0 {
        return Err(Error::assumption(format!(
            "ρ_{{q*}} = {rho} is not below 1"
        )));
    }
    let (eps, eps_prime) = epsilon_constants_from_gram(&gram, qstar, opts.budget)?;
    let (kappa, kappa_l) = match model {
        Some(m) if !m.active.is_empty() => {
            let (k, kl) = kappa_values(m, law)?;
            (Some(k), kl)
        }
        _ => (None, Vec::new()),
    };
    let phi = match opts.grid_size {
        Some(g) => Some(phi_qstar(spec, law, 2 * qstar, g, opts.budget)?),
        None => None,
    };
    Ok(GeometryReport {
        qstar,
        rho_qstar: rho,
        eps_2qstar: eps,
        eps_prime_qstar: eps_prime,
        kappa,
        kappa_l,
        phi_2qstar: phi,
        ric_chain_holds: check_ric_chain(rho, eps, qstar),
    })
}
