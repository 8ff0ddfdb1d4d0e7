//! Trigonometric function system, the spaces V_j and the scaled design blocks.
//!
//! Basis indices are 1-based as in the usual trigonometric enumeration:
//! φ₁ = 1, φ₂ₖ = √2 cos(2πkx), φ₂ₖ₊₁ = √2 sin(2πkx). Covariate indices are
//! 0-based everywhere in the crate.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::DesignLaw;

/// Evaluates φ_k(x) without argument checks.
#[inline]
pub fn phi(k: usize, x: f64) -> f64 {
    if k == 1 {
        1.0
    } else {
        let freq = (k / 2) as f64;
        let arg = 2.0 * PI * freq * x;
        if k.is_multiple_of(2) {
            SQRT_2 * arg.cos()
        } else {
            SQRT_2 * arg.sin()
        }
    }
}

/// Evaluates φ_k(x) for k ≥ 1 and x ∈ [0, 1].
pub fn eval_basis(k: usize, x: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("basis index must be at least 1"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("x = {x} outside [0, 1]")));
    }
    Ok(phi(k, x))
}

/// Frequency of basis index k (0 for the constant).
#[inline]
pub fn frequency(k: usize) -> usize {
    k / 2
}

/// Per-covariate truncation levels and centering flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    m: Vec<usize>,
    centered: Vec<bool>,
}

impl BasisSpec {
    pub fn new(m: Vec<usize>, centered: Vec<bool>) -> Result<Self> {
        if m.len() != centered.len() {
            return Err(Error::Dimension {
                expected: m.len(),
                got: centered.len(),
            });
        }
        if let Some(j) = m.iter().position(|&mj| mj == 0) {
            return Err(Error::domain(format!("m[{j}] must be at least 1")));
        }
        Ok(BasisSpec { m, centered })
    }

    /// Same level and centering for every covariate.
    pub fn uniform(q: usize, m: usize, centered: bool) -> Result<Self> {
        Self::new(vec![m; q], vec![centered; q])
    }

    pub fn q(&self) -> usize {
        self.m.len()
    }

    pub fn level(&self, j: usize) -> usize {
        self.m[j]
    }

    pub fn levels(&self) -> &[usize] {
        &self.m
    }

    pub fn is_centered(&self, j: usize) -> bool {
        self.centered[j]
    }

    pub fn max_level(&self) -> usize {
        self.m.iter().copied().max().unwrap_or(1)
    }

    /// Replaces the level of one covariate.
    pub fn with_level(&self, j: usize, m: usize) -> Result<Self> {
        let mut levels = self.m.clone();
        levels[j] = m;
        Self::new(levels, self.centered.clone())
    }

    /// First basis index spanning V_j.
    pub fn first_index(&self, j: usize) -> usize {
        if self.centered[j] {
            2
        } else {
            1
        }
    }

    /// Basis indices spanning V_j.
    pub fn indices(&self, j: usize) -> std::ops::RangeInclusive<usize> {
        self.first_index(j)..=self.m[j]
    }

    /// dim V_j.
    pub fn dim(&self, j: usize) -> usize {
        if self.centered[j] {
            self.m[j] - 1
        } else {
            self.m[j]
        }
    }

    /// d_J = Σ_{j∈J} dim V_j.
    pub fn d_set(&self, set: &[usize]) -> usize {
        set.iter().map(|&j| self.dim(j)).sum()
    }

    /// d_l = max_{|J| = l} d_J.
    pub fn d_l(&self, l: usize) -> usize {
        let mut dims: Vec<usize> = (0..self.q()).map(|j| self.dim(j)).collect();
        dims.sort_unstable_by(|a, b| b.cmp(a));
        dims.iter().take(l).sum()
    }

    /// Column offsets of each block in the concatenated design.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.q() + 1);
        off.push(0);
        for j in 0..self.q() {
            off.push(off[j] + self.dim(j));
        }
        off
    }
}

/// How centered blocks are centered.
#[derive(Debug, Clone, PartialEq)]
pub enum Centering {
    /// Subtract the sample mean of each column.
    Empirical,
    /// Subtract known population means, indexed `[covariate][k - 1]`.
    Population(Vec<Vec<f64>>),
}

impl Centering {
    /// Population centering with the basis means of `law`.
    pub fn population(spec: &BasisSpec, law: &DesignLaw) -> Result<Self> {
        let means = (0..spec.q())
            .map(|j| law.basis_means(j, spec.level(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Centering::Population(means))
    }
}

/// Builds one design block: column k holds φ_k(xⁱ)/√n for the basis indices
/// of V_j. Centered blocks are centered according to `centering`; passing
/// `None` leaves the raw values (exact for the uniform density, where φ_k,
/// k ≥ 2, already has mean zero).
pub fn build_design_block(
    xcol: &[f64],
    m: usize,
    centered: bool,
    centering: Option<&[f64]>,
    empirical: bool,
) -> Result<DMatrix<f64>> {
    let n = xcol.len();
    if n == 0 {
        return Err(Error::domain("empty covariate column"));
    }
    if m == 0 {
        return Err(Error::domain("truncation level must be at least 1"));
    }
    if let Some(bad) = xcol.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::domain(format!("x = {bad} outside [0, 1]")));
    }
    let first = if centered { 2 } else { 1 };
    let cols = m + 1 - first;
    let scale = 1.0 / (n as f64).sqrt();
    let mut block = DMatrix::zeros(n, cols);
    for (c, k) in (first..=m).enumerate() {
        let mut col: Vec<f64> = xcol.iter().map(|&x| phi(k, x)).collect();
        if centered {
            let shift = if empirical {
                col.iter().sum::<f64>() / n as f64
            } else {
                centering.map_or(0.0, |means| means[k - 1])
            };
            col.iter_mut().for_each(|v| *v -= shift);
        }
        for (i, v) in col.into_iter().enumerate() {
            block[(i, c)] = v * scale;
        }
    }
    Ok(block)
}

/// Concatenated scaled design A = (A_1, …, A_q) with fixed column order:
/// ascending covariate, then ascending basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBlocks {
    matrix: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl DesignBlocks {
    /// Builds the blocks of all covariates from an n × q matrix in [0,1].
    pub fn build(x: &DMatrix<f64>, spec: &BasisSpec, centering: &Centering) -> Result<Self> {
        if x.ncols() != spec.q() {
            return Err(Error::Dimension {
                expected: spec.q(),
                got: x.ncols(),
            });
        }
        let blocks = (0..spec.q())
            .map(|j| {
                let col: Vec<f64> = x.column(j).iter().copied().collect();
                match centering {
                    Centering::Empirical => {
                        build_design_block(&col, spec.level(j), spec.is_centered(j), None, true)
                    }
                    Centering::Population(means) => build_design_block(
                        &col,
                        spec.level(j),
                        spec.is_centered(j),
                        Some(&means[j]),
                        false,
                    ),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    /// Assembles blocks given directly (all with the same number of rows).
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = blocks.first().map_or(0, |b| b.nrows());
        let mut offsets = vec![0];
        for b in &blocks {
            if b.nrows() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: b.nrows(),
                });
            }
            offsets.push(offsets.last().unwrap() + b.ncols());
        }
        let mut matrix = DMatrix::zeros(n, *offsets.last().unwrap());
        for (j, b) in blocks.iter().enumerate() {
            matrix.view_mut((0, offsets[j]), b.shape()).copy_from(b);
        }
        Ok(DesignBlocks { matrix, offsets })
    }

    /// One single-column block per column of `a` (the d_j = 1 case).
    pub fn from_columns(a: DMatrix<f64>) -> Self {
        let offsets = (0..=a.ncols()).collect();
        DesignBlocks { matrix: a, offsets }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn q(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_dim(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    /// Column indices of A_J.
    pub fn columns(&self, set: &[usize]) -> Vec<usize> {
        set.iter()
            .flat_map(|&j| self.offsets[j]..self.offsets[j + 1])
            .collect()
    }

    /// A_J as a dense matrix (blocks in the order given; callers pass sorted sets).
    pub fn select(&self, set: &[usize]) -> DMatrix<f64> {
        let cols = self.columns(set);
        self.matrix.select_columns(cols.iter())
    }

    /// Full Gram matrix AᵀA with its block structure.
    pub fn gram(&self) -> BlockGram {
        BlockGram {
            gram: self.matrix.transpose() * &self.matrix,
            offsets: self.offsets.clone(),
        }
    }
}

/// A symmetric matrix partitioned into per-covariate blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGram {
    gram: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl BlockGram {
    pub fn new(gram: DMatrix<f64>, dims: &[usize]) -> Result<Self> {
        let mut offsets = vec![0];
        for d in dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let total = *offsets.last().unwrap();
        if gram.nrows() != total || gram.ncols() != total {
            return Err(Error::Dimension {
                expected: total,
                got: gram.nrows(),
            });
        }
        Ok(BlockGram { gram, offsets })
    }

    pub fn q(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_dim(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.q()).map(|j| self.block_dim(j)).collect()
    }

    pub fn columns(&self, set: &[usize]) -> Vec<usize> {
        set.iter()
            .flat_map(|&j| self.offsets[j]..self.offsets[j + 1])
            .collect()
    }

    /// G_J (blocks of `set` in the given order).
    pub fn sub(&self, set: &[usize]) -> DMatrix<f64> {
        let cols = self.columns(set);
        crate::linalg::principal(&self.gram, &cols)
    }

    /// Cross block G_{J1,J2}.
    pub fn cross(&self, a: &[usize], b: &[usize]) -> DMatrix<f64> {
        crate::linalg::submatrix(&self.gram, &self.columns(a), &self.columns(b))
    }

    /// Block-diagonal part D_J of G_J.
    pub fn block_diag(&self, set: &[usize]) -> DMatrix<f64> {
        let d: usize = set.iter().map(|&j| self.block_dim(j)).sum();
        let mut out = DMatrix::zeros(d, d);
        let mut at = 0;
        for &j in set {
            let dj = self.block_dim(j);
            let cols: Vec<usize> = (self.offsets[j]..self.offsets[j + 1]).collect();
            out.view_mut((at, at), (dj, dj))
                .copy_from(&crate::linalg::principal(&self.gram, &cols));
            at += dj;
        }
        out
    }

    /// True when the matrix is exactly the identity.
    pub fn is_identity(&self) -> bool {
        let n = self.gram.nrows();
        (0..n).all(|i| (0..n).all(|j| self.gram[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }
}

/// Gram matrix of the concatenated basis of V_J under the design law.
pub fn population_gram(spec: &BasisSpec, law: &DesignLaw, set: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&bad) = set.iter().find(|&&j| j >= spec.q()) {
        return Err(Error::domain(format!("covariate {bad} out of range")));
    }
    Ok(law.block_gram(spec)?.sub(set))
}

/// A finite trigonometric series Σ c_k φ_k; `coeffs[i]` multiplies φ_{i+1}.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigSeries {
    pub coeffs: Vec<f64>,
}

impl TrigSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        TrigSeries { coeffs }
    }

    pub fn zero() -> Self {
        TrigSeries { coeffs: Vec::new() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| c * phi(i + 1, x))
            .sum()
    }

    /// Highest basis index with a nonzero coefficient (0 for the zero series).
    pub fn support(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|&c| c != 0.0)
            .map_or(0, |i| i + 1)
    }

    /// Σ c_k², the L² norm under the uniform density.
    pub fn norm_sq_uniform(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Σ_k (2πk)^{2α}(θ²_{2k} + θ²_{2k+1}).
    pub fn sobolev_energy(&self, alpha: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| (2.0 * PI * frequency(i + 1) as f64).powf(2.0 * alpha) * c * c)
            .sum()
    }

    /// Coefficients on basis indices 1..=m (zero padded).
    pub fn head(&self, m: usize) -> TrigSeries {
        let mut c = self.coeffs.clone();
        c.resize(m, 0.0);
        TrigSeries { coeffs: c }
    }

    /// Σ_{k>m} c_k².
    pub fn tail_energy(&self, m: usize) -> f64 {
        self.coeffs.iter().skip(m).map(|c| c * c).sum()
    }

    /// Σ_{k>m} |c_k|.
    pub fn tail_l1(&self, m: usize) -> f64 {
        self.coeffs.iter().skip(m).map(|c| c.abs()).sum()
    }

    pub fn values(&self, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(xs.len(), xs.iter().map(|&x| self.eval(x)))
    }
}
