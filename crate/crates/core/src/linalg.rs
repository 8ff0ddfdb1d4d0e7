//! Small dense linear-algebra helpers shared by the geometry, selection and
//! diagnostics modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor below which a Gram block is treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues only, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut v: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

/// Returns (λ_min, λ_max) of a symmetric matrix.
pub fn sym_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    if ev.is_empty() {
        return (0.0, 0.0);
    }
    (ev[0], ev[ev.len() - 1])
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric inverse square root of a positive definite matrix.
///
/// Fails with [`Error::Singular`] when the smallest eigenvalue is below
/// [`EIGEN_FLOOR`]; there is no silent regularisation.
pub fn inv_sqrt_spd(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (values, vectors) = sym_eigen(m);
    if values[0] < EIGEN_FLOOR {
        return Err(Error::Singular {
            block: label.to_string(),
            min_eigenvalue: values[0],
        });
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| vectors[(i, j)] / values[j].sqrt());
    Ok(&scaled * vectors.transpose())
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = sym_extremes(m);
    lo.abs().max(hi.abs())
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    sym_extremes(&g).1.max(0.0).sqrt()
}

/// Principal submatrix on the given (sorted) index list.
pub fn principal(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Submatrix on arbitrary row and column index lists.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Householder QR with column pivoting on remaining column norms.
///
/// Factorisation stops once every remaining column norm is at most
/// `rel_tol` times the largest initial column norm; the number of completed
/// steps is the numerical rank.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors stored below (and on) the diagonal, R above.
    work: DMatrix<f64>,
    betas: Vec<f64>,
    r_diag: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (n, p) = a.shape();
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut norms: Vec<f64> = (0..p).map(|j| work.column(j).norm_squared()).collect();
        let max_norm = norms.iter().copied().fold(0.0_f64, f64::max).sqrt();
        let tol = rel_tol * max_norm;
        let steps = n.min(p);
        let mut betas = Vec::with_capacity(steps);
        let mut r_diag = Vec::with_capacity(steps);
        let mut rank = 0;

        for k in 0..steps {
            // Recompute trailing norms exactly; downdating loses accuracy at
            // the sizes used here and the cost is negligible.
            for j in k..p {
                norms[j] = work.view_range(k.., j).norm_squared();
            }
            let (piv, best) =
                (k..p)
                    .map(|j| (j, norms[j]))
                    .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if max_norm == 0.0 || best.sqrt() <= tol {
                break;
            }
            if piv != k {
                work.swap_columns(k, piv);
                perm.swap(k, piv);
                norms.swap(k, piv);
            }
            let alpha = work.view_range(k.., k).norm();
            let x0 = work[(k, k)];
            let diag = if x0 >= 0.0 { -alpha } else { alpha };
            // v = x - diag e1, stored in place; beta = 2 / vᵀv
            work[(k, k)] = x0 - diag;
            let vnorm2 = work.view_range(k.., k).norm_squared();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for j in (k + 1)..p {
                let mut dot = 0.0;
                for i in k..n {
                    dot += work[(i, k)] * work[(i, j)];
                }
                let s = beta * dot;
                for i in k..n {
                    let vi = work[(i, k)];
                    work[(i, j)] -= s * vi;
                }
            }
            betas.push(beta);
            r_diag.push(diag);
            rank += 1;
        }
        PivotedQr {
            work,
            betas,
            r_diag,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.work.ncols()
    }

    /// Applies Qᵀ (restricted to the completed reflectors) in place.
    pub fn qt_mul(&self, y: &mut DVector<f64>) {
        let n = self.work.nrows();
        for k in 0..self.rank {
            let mut dot = 0.0;
            for i in k..n {
                dot += self.work[(i, k)] * y[i];
            }
            let s = self.betas[k] * dot;
            for i in k..n {
                y[i] -= s * self.work[(i, k)];
            }
        }
    }

    /// Squared Euclidean norm of the projection of `y` onto the column space.
    pub fn projected_norm_sq(&self, y: &DVector<f64>) -> f64 {
        let mut z = y.clone();
        self.qt_mul(&mut z);
        z.rows(0, self.rank).norm_squared()
    }

    /// The projection of `y` onto the column space.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.work.nrows();
        let mut z = y.clone();
        self.qt_mul(&mut z);
        for i in self.rank..n {
            z[i] = 0.0;
        }
        // apply Q = H_1 ... H_r
        for k in (0..self.rank).rev() {
            let mut dot = 0.0;
            for i in k..n {
                dot += self.work[(i, k)] * z[i];
            }
            let s = self.betas[k] * dot;
            for i in k..n {
                z[i] -= s * self.work[(i, k)];
            }
        }
        z
    }

    /// Ratio |r_11| / |r_kk| over the completed steps.
    pub fn condition_estimate(&self) -> f64 {
        match (self.r_diag.first(), self.r_diag.last()) {
            (Some(a), Some(b)) if *b != 0.0 => a.abs() / b.abs(),
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 1.0,
        }
    }

    /// Least-squares coefficients in the original column order. Requires
    /// full column rank.
    pub fn solve_least_squares(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.work.ncols();
        if self.rank < p {
            return Err(Error::RankDeficient {
                message: format!("numerical rank {} < {} columns", self.rank, p),
                condition: f64::INFINITY,
            });
        }
        let mut z = y.clone();
        self.qt_mul(&mut z);
        let mut x = DVector::zeros(p);
        for k in (0..p).rev() {
            let mut acc = z[k];
            for j in (k + 1)..p {
                acc -= self.work[(k, j)] * x[j];
            }
            x[k] = acc / self.r_diag[k];
        }
        let mut out = DVector::zeros(p);
        for (k, &col) in self.perm.iter().enumerate() {
            out[col] = x[k];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let w = inv_sqrt_spd(&m, "d").unwrap();
        assert!((w[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((w[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match inv_sqrt_spd(&m, "G11") {
            Err(Error::Singular { block, .. }) => assert_eq!(block, "G11"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pivoted_qr_detects_rank() {
        // third column = first + second
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, -1.0, 1.0],
        );
        let qr = PivotedQr::new(&a, 1e-10);
        assert_eq!(qr.rank(), 2);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let p = qr.project(&y);
        // residual orthogonal to the columns
        let r = &y - &p;
        assert!((a.transpose() * r).norm() < 1e-10);
        assert!((p.norm_squared() - qr.projected_norm_sq(&y)).abs() < 1e-10);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let a =
            DMatrix::from_row_slice(5, 2, &[1.0, 0.3, 1.0, -0.2, 1.0, 0.9, 1.0, 1.4, 1.0, -0.7]);
        let y = DVector::from_vec(vec![0.5, -0.1, 1.2, 2.0, -0.6]);
        let x = PivotedQr::new(&a, 1e-10).solve_least_squares(&y).unwrap();
        let ata = a.transpose() * &a;
        let aty = a.transpose() * &y;
        let x_ne = ata.lu().solve(&aty).unwrap();
        assert!((x - x_ne).norm() < 1e-12);
    }
}
