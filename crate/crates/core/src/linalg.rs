//! Dense kernels shared by the operator, selection and recovery code.
//!
//! Householder QR is written out here because the operator construction needs
//! the full orthogonal factor, which `nalgebra::QR` does not expose. Singular
//! value decompositions go through `faer`; the `nalgebra` SVD loses accuracy
//! on some rank-deficient inputs. Symmetric eigenproblems stay on `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `max |AᵀA − I|`.
pub fn orthogonality_defect(a: &DMatrix<f64>) -> f64 {
    let gram = a.tr_mul(a);
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => {
            let (row, col) = (pos % m.nrows(), pos / m.nrows());
            Err(Error::NonFinite(format!("{what} entry ({row}, {col})")))
        }
    }
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    // the decomposition only fails on non-finite input
    let mut sv = match to_faer(a).singular_values() {
        Ok(sv) => sv,
        Err(_) => return vec![f64::NAN; a.nrows().min(a.ncols())],
    };
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Thin SVD `A = U Σ Vᵀ`, returning the singular values (descending) and `U`.
pub fn left_singular_vectors(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (m, n) = (a.nrows(), a.ncols());
    let k = m.min(n);
    if k == 0 {
        return Ok((Vec::new(), DMatrix::zeros(m, 0)));
    }
    ensure_finite(a, "SVD input")?;
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::Degenerate(format!("SVD did not converge: {e:?}")))?;
    let (u, s) = (svd.U(), svd.S().column_vector());
    let values: Vec<f64> = (0..k).map(|i| s[i]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let sorted = order.iter().map(|&i| values[i]).collect();
    Ok((sorted, DMatrix::from_fn(m, k, |i, j| u[(i, order[j])])))
}

/// Smallest of the `min(m, n)` singular values, 0 for an empty matrix.
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Householder QR factorization `A = Q R` keeping the reflectors, so both the
/// thin and the full orthogonal factor can be formed.
#[derive(Debug, Clone)]
pub struct Householder {
    rows: usize,
    cols: usize,
    reflectors: Vec<(DVector<f64>, f64)>,
    r: DMatrix<f64>,
}

impl Householder {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let steps = m.min(n);
        let mut reflectors = Vec::with_capacity(steps);
        for j in 0..steps {
            let mut v: DVector<f64> = r.view((j, j), (m - j, 1)).column(0).clone_owned();
            let alpha = v.norm();
            if alpha == 0.0 {
                reflectors.push((v, 0.0));
                continue;
            }
            let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
            v[0] += sign * alpha;
            let beta = 2.0 / v.norm_squared();
            let mut block = r.view_mut((j, j), (m - j, n - j));
            let w = block.tr_mul(&v);
            block -= (&v * beta) * w.transpose();
            // Exact zeros below the diagonal.
            for i in (j + 1)..m {
                r[(i, j)] = 0.0;
            }
            reflectors.push((v, beta));
        }
        Householder {
            rows: m,
            cols: n,
            reflectors,
            r,
        }
    }

    /// Upper-triangular factor, `min(m, n) × n`.
    pub fn r(&self) -> DMatrix<f64> {
        let k = self.rows.min(self.cols);
        self.r.rows(0, k).upper_triangle()
    }

    /// Applies `Qᵀ` to `b` in place.
    pub fn apply_qt(&self, b: &mut DMatrix<f64>) {
        for (j, (v, beta)) in self.reflectors.iter().enumerate() {
            if *beta == 0.0 {
                continue;
            }
            let mut block = b.rows_mut(j, self.rows - j);
            let w = block.tr_mul(v);
            block -= (v * *beta) * w.transpose();
        }
    }

    /// Applies `Q` to `b` in place.
    pub fn apply_q(&self, b: &mut DMatrix<f64>) {
        for (j, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if *beta == 0.0 {
                continue;
            }
            let mut block = b.rows_mut(j, self.rows - j);
            let w = block.tr_mul(v);
            block -= (v * *beta) * w.transpose();
        }
    }

    /// Full `m × m` orthogonal factor.
    pub fn q_full(&self) -> DMatrix<f64> {
        let mut q = DMatrix::identity(self.rows, self.rows);
        self.apply_q(&mut q);
        q
    }

    /// Thin `m × min(m, n)` orthogonal factor.
    pub fn q_thin(&self) -> DMatrix<f64> {
        let k = self.rows.min(self.cols);
        let mut q = DMatrix::identity(self.rows, k);
        self.apply_q(&mut q);
        q
    }
}

/// Orthonormal basis of the orthogonal complement of the column space of
/// `basis` (assumed to have orthonormal columns): columns `r..N` of the full
/// Householder factor.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = basis.shape();
    if r == 0 {
        return DMatrix::identity(n, n);
    }
    let q = Householder::new(basis).q_full();
    q.columns(r, n - r).clone_owned()
}

fn back_substitute(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.ncols();
    let mut x = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut acc = b[(i, c)];
            for j in (i + 1)..n {
                acc -= r[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = acc / r[(i, i)];
        }
    }
    x
}

/// Solves `Rᵀ y = b` for upper-triangular `R`.
fn forward_substitute_transposed(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.ncols();
    let mut y = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut acc = b[(i, c)];
            for j in 0..i {
                acc -= r[(j, i)] * y[(j, c)];
            }
            y[(i, c)] = acc / r[(i, i)];
        }
    }
    y
}

/// Least-squares solution of `A X = B` through Householder QR.
///
/// Tall or square `A` gives the ordinary least-squares solution (which is
/// `(AᵀA)⁻¹AᵀB` without forming the normal equations); wide `A` gives the
/// minimum-norm solution. `A` must have full rank `min(m, n)`; callers check
/// conditioning beforehand.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m >= n {
        let qr = Householder::new(a);
        let mut qtb = b.clone();
        qr.apply_qt(&mut qtb);
        let top = qtb.rows(0, n).clone_owned();
        back_substitute(&qr.r(), &top)
    } else {
        let qr = Householder::new(&a.transpose());
        let y = forward_substitute_transposed(&qr.r(), b);
        let mut padded = DMatrix::zeros(n, b.ncols());
        padded.rows_mut(0, m).copy_from(&y);
        qr.apply_q(&mut padded);
        padded
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues ascending.
pub fn symmetric_eigen_ascending(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = select_columns(&eig.eigenvectors, &order);
    (values, vectors)
}

/// Checksum of a matrix: SHA-256 over its shape and little-endian entries in
/// column-major order.
pub fn matrix_checksum(m: &DMatrix<f64>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

pub fn bytes_checksum(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 3, &[2.0, -1.0, 0.5, 1.0, 3.0, -2.0, 0.0, 1.0, 4.0, -1.0, 2.0, 1.0])
    }

    #[test]
    fn householder_reconstructs_input() {
        let a = sample();
        let qr = Householder::new(&a);
        let q = qr.q_thin();
        let recon = &q * qr.r();
        assert!(max_abs(&(recon - &a)) < 1e-13);
        assert!(orthogonality_defect(&qr.q_full()) < 1e-14);
    }

    #[test]
    fn complement_is_orthogonal_to_basis() {
        let a = sample();
        let q = Householder::new(&a).q_thin();
        let comp = orthogonal_complement(&q);
        assert_eq!(comp.shape(), (4, 1));
        assert!(max_abs(&q.tr_mul(&comp)) < 1e-14);
        assert!(orthogonality_defect(&comp) < 1e-14);
    }

    #[test]
    fn least_squares_tall_matches_normal_equations() {
        let a = sample();
        let b = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let x = solve_least_squares(&a, &b);
        let normal = (a.tr_mul(&a)).try_inverse().unwrap() * a.tr_mul(&b);
        assert!(max_abs(&(x - normal)) < 1e-12);
    }

    #[test]
    fn least_squares_wide_is_minimum_norm() {
        let a = sample().transpose();
        let b = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 2.0]);
        let x = solve_least_squares(&a, &b);
        assert!(max_abs(&(&a * &x - &b)) < 1e-12);
        // Minimum-norm solutions lie in the row space of A.
        let pinv = a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
        assert!(max_abs(&(x - pinv * b)) < 1e-12);
    }

    #[test]
    fn eigen_is_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen_ascending(&a);
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        assert!(orthogonality_defect(&vecs) < 1e-14);
    }

    #[test]
    fn svd_of_a_rank_one_product() {
        // u vᵀ with |u| = 3, |v| = 5
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        let v = DMatrix::from_column_slice(1, 4, &[3.0, 0.0, 4.0, 0.0]);
        let a = &u * &v;
        let sv = singular_values(&a);
        assert!((sv[0] - 15.0).abs() < 1e-12 && sv[1].abs() < 1e-12);
        let (vals, left) = left_singular_vectors(&a).unwrap();
        assert_eq!(left.shape(), (3, 3));
        assert!((vals[0] - 15.0).abs() < 1e-12);
        assert!((left[(0, 0)].abs() - 1.0 / 3.0).abs() < 1e-12);
        assert!(orthogonality_defect(&left) < 1e-13);
        assert!(singular_values(&DMatrix::zeros(0, 4)).is_empty());
    }

    #[test]
    fn non_finite_is_located() {
        let mut a = DMatrix::zeros(2, 2);
        a[(1, 0)] = f64::NAN;
        let err = ensure_finite(&a, "X").unwrap_err();
        assert!(err.to_string().contains("(1, 0)"));
    }
}
