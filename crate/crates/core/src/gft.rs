//! Data-driven graph Fourier basis.
//!
//! The leading `r` basis vectors are the Gram–Schmidt orthonormalization of a
//! maximal set of linearly independent columns of the data, taken left to
//! right; the remaining `N − r` vectors complete an orthonormal basis. Under
//! this basis every column of the data has a zero response outside the first
//! `r` frequencies, and the response of the selected columns is upper
//! triangular with a positive diagonal (a thin QR factorization).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynsim::SignalMatrix;
use crate::error::{Error, Result};
use crate::linalg;

pub const OPERATOR_SCHEMA: &str = "wdn-gft/operator/v1";

/// Relative residual above which a column counts as independent.
pub const INDEPENDENCE_TOLERANCE: f64 = 1e-10;
/// Relative residual at or below which orthogonalization is declared broken.
pub const BREAKDOWN_TOLERANCE: f64 = 1e-12;
/// Relative magnitude under which a frequency response row counts as zero.
pub const BANDLIMIT_TOLERANCE: f64 = 1e-8;

/// Orthonormal GFT basis `F = [f_1 … f_N]`; the transform is `Fᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GftOperator {
    basis: DMatrix<f64>,
    cutoff: usize,
    independent_columns: Vec<usize>,
    node_ids: Vec<String>,
    source_checksum: String,
}

/// Frequency response `X̃ = Fᵀ X` and the rows that carry signal.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub coefficients: DMatrix<f64>,
    pub active_band: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandlimitCheck {
    pub holds: bool,
    /// Largest magnitude in the response rows at and beyond `band`.
    pub residual: f64,
}

/// Two passes of classical Gram–Schmidt against the accepted vectors.
fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    linalg::singular_values(x).first().copied().unwrap_or(0.0)
}

/// Greedy left-to-right selection: returns the column indices and the
/// orthonormalized vectors, in selection order.
fn orthonormalize_columns(x: &DMatrix<f64>, rank: usize) -> Result<(Vec<usize>, Vec<DVector<f64>>)> {
    let scale = spectral_norm(x);
    if rank == 0 || scale == 0.0 {
        return Err(Error::Degenerate("zero signal has no independent columns".into()));
    }
    let mut chosen = Vec::with_capacity(rank);
    let mut vectors: Vec<DVector<f64>> = Vec::with_capacity(rank);
    for j in 0..x.ncols() {
        if chosen.len() == rank {
            break;
        }
        let mut v = x.column(j).clone_owned();
        project_out(&mut v, &vectors);
        let norm = v.norm();
        if norm > INDEPENDENCE_TOLERANCE * scale {
            chosen.push(j);
            vectors.push(v / norm);
        }
    }
    // The left-to-right pass can fall short when the singular-value rank and
    // the column residuals disagree near the tolerance; pivot on the largest
    // remaining residual for the rest.
    while chosen.len() < rank {
        let mut best: Option<(usize, DVector<f64>, f64)> = None;
        for j in (0..x.ncols()).filter(|j| !chosen.contains(j)) {
            let mut v = x.column(j).clone_owned();
            project_out(&mut v, &vectors);
            let norm = v.norm();
            if best.as_ref().is_none_or(|(_, _, b)| norm > *b) {
                best = Some((j, v, norm));
            }
        }
        let Some((j, v, norm)) = best else {
            return Err(Error::Breakdown {
                column: x.ncols(),
                norm: 0.0,
            });
        };
        if norm <= BREAKDOWN_TOLERANCE * scale {
            return Err(Error::Breakdown { column: j, norm });
        }
        chosen.push(j);
        vectors.push(v / norm);
    }
    Ok((chosen, vectors))
}

/// Maximal linearly independent columns of the signal, earliest first.
/// A column is kept when its residual against the span of the kept columns
/// exceeds `1e-10 · ‖X‖₂`; exactly `rank(X)` columns are returned.
pub fn independent_columns(x: &SignalMatrix) -> Result<Vec<usize>> {
    Ok(orthonormalize_columns(x.data(), x.rank())?.0)
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn orient_by_largest(v: &mut DVector<f64>) {
    let mut pivot = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if !v.is_empty() && v[pivot] < 0.0 {
        v.neg_mut();
    }
}

/// Orthonormal basis of the leading `r` frequencies.
///
/// Gram–Schmidt on the selected columns is the textbook route, but the earliest
/// independent columns of transport data are often a Krylov-like set whose
/// smallest singular value sits at rounding level; the computed span then
/// drifts away from the data. The same thin QR factor is obtained stably by
/// projecting the selected columns onto an orthonormal basis `P` of the column
/// space (pivoted Householder QR) and factoring the small `r × r` block.
fn leading_basis(x: &DMatrix<f64>, chosen: &[usize]) -> Vec<DVector<f64>> {
    let r = chosen.len();
    let p = x.clone().col_piv_qr().q().columns(0, r).into_owned();
    let block = p.tr_mul(&linalg::select_columns(x, chosen));
    let qr = linalg::Householder::new(&block);
    let mut q = qr.q_full();
    let diag = qr.r();
    for j in 0..r {
        if diag[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let f = p * q;
    f.column_iter().map(|c| c.clone_owned()).collect()
}

pub fn build_gft(x: &SignalMatrix) -> Result<GftOperator> {
    let n = x.node_count();
    let (chosen, _) = orthonormalize_columns(x.data(), x.rank())?;
    let mut vectors = leading_basis(x.data(), &chosen);
    let r = chosen.len();

    let leading = DMatrix::from_columns(&vectors);
    let complement = linalg::orthogonal_complement(&leading);
    for (i, col) in complement.column_iter().enumerate() {
        let mut v = col.clone_owned();
        project_out(&mut v, &vectors);
        let norm = v.norm();
        if norm <= BREAKDOWN_TOLERANCE {
            return Err(Error::Breakdown { column: r + i, norm });
        }
        v /= norm;
        orient_by_largest(&mut v);
        vectors.push(v);
    }
    debug_assert_eq!(vectors.len(), n);
    Ok(GftOperator {
        basis: DMatrix::from_columns(&vectors),
        cutoff: r,
        independent_columns: chosen,
        node_ids: x.node_ids().to_vec(),
        source_checksum: x.checksum(),
    })
}

impl GftOperator {
    /// Wraps an existing orthonormal basis with a designated cutoff.
    pub fn from_basis(basis: DMatrix<f64>, cutoff: usize, node_ids: Vec<String>) -> Result<Self> {
        if !basis.is_square() || basis.nrows() != node_ids.len() {
            return Err(Error::DimensionMismatch(format!(
                "basis {}x{} with {} node ids",
                basis.nrows(),
                basis.ncols(),
                node_ids.len()
            )));
        }
        if cutoff > basis.ncols() {
            return Err(Error::DimensionMismatch(format!("cutoff {cutoff} > {}", basis.ncols())));
        }
        linalg::ensure_finite(&basis, "basis")?;
        let defect = linalg::orthogonality_defect(&basis);
        if defect > 1e-10 {
            return Err(Error::InvalidArgument(format!("basis is not orthonormal (defect {defect:e})")));
        }
        Ok(GftOperator {
            basis,
            cutoff,
            independent_columns: Vec::new(),
            node_ids,
            source_checksum: String::new(),
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `|R_cutoff|`, the number of frequencies that carry the source signal.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn independent_columns(&self) -> &[usize] {
        &self.independent_columns
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.basis.nrows()
    }

    pub fn source_checksum(&self) -> &str {
        &self.source_checksum
    }

    /// Checksum of the basis; sampling plans refer to their operator by it.
    pub fn checksum(&self) -> String {
        linalg::matrix_checksum(&self.basis)
    }

    /// `F_VR` for `R = {1, …, cutoff}`.
    pub fn low_frequency_block(&self) -> DMatrix<f64> {
        self.basis.columns(0, self.cutoff).clone_owned()
    }

    /// Leading `r × r` block of the response of the selected source columns.
    pub fn triangular_factor(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.node_count() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, operator {}",
                x.nrows(),
                self.node_count()
            )));
        }
        if let Some(&bad) = self.independent_columns.iter().find(|&&c| c >= x.ncols()) {
            return Err(Error::DimensionMismatch(format!("source column {bad} missing")));
        }
        let cols = linalg::select_columns(x, &self.independent_columns);
        Ok(self.low_frequency_block().tr_mul(&cols))
    }
}

/// `X̃ = Fᵀ X`; rows whose largest magnitude exceeds `1e-8 ·` the global
/// maximum form the active band.
pub fn forward_gft(op: &GftOperator, x: &DMatrix<f64>) -> Result<FrequencyResponse> {
    if x.nrows() != op.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, operator {}",
            x.nrows(),
            op.node_count()
        )));
    }
    let coefficients = op.basis.tr_mul(x);
    let active_band = active_rows(&coefficients, BANDLIMIT_TOLERANCE);
    Ok(FrequencyResponse {
        coefficients,
        active_band,
    })
}

pub(crate) fn active_rows(coefficients: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let global = linalg::max_abs(coefficients);
    if global == 0.0 {
        return Vec::new();
    }
    (0..coefficients.nrows())
        .filter(|&i| coefficients.row(i).iter().any(|v| v.abs() > tol * global))
        .collect()
}

/// Checks that rows `band, …, N−1` of `Fᵀ X` are at most `1e-8 · max|X|`.
pub fn verify_bandlimited(op: &GftOperator, x: &DMatrix<f64>, band: usize) -> Result<BandlimitCheck> {
    let response = forward_gft(op, x)?;
    let tail = band.min(op.node_count());
    let residual = response
        .coefficients
        .rows(tail, op.node_count() - tail)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(BandlimitCheck {
        holds: residual <= BANDLIMIT_TOLERANCE * linalg::max_abs(x),
        residual,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct OperatorMeta {
    schema: String,
    node_count: usize,
    cutoff: usize,
    independent_columns: Vec<usize>,
    node_ids: Vec<String>,
    source_checksum: String,
    basis_checksum: String,
    basis_file: String,
}

fn basis_path(meta_path: &Path) -> PathBuf {
    let stem = meta_path.file_stem().and_then(|s| s.to_str()).unwrap_or("operator");
    meta_path.with_file_name(format!("{stem}.basis.csv"))
}

impl GftOperator {
    /// Writes `<path>` (JSON metadata) and `<stem>.basis.csv` (the basis,
    /// one row per node, shortest round-trip decimals).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let basis_file = basis_path(path);
        let meta = OperatorMeta {
            schema: OPERATOR_SCHEMA.to_string(),
            node_count: self.node_count(),
            cutoff: self.cutoff,
            independent_columns: self.independent_columns.clone(),
            node_ids: self.node_ids.clone(),
            source_checksum: self.source_checksum.clone(),
            basis_checksum: self.checksum(),
            basis_file: basis_file
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let mut csv = String::new();
        for row in self.basis.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            csv.push_str(&fields.join(","));
            csv.push('\n');
        }
        fs::write(&basis_file, csv)?;
        fs::write(path, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let meta: OperatorMeta =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::parse(&name, e.to_string()))?;
        if meta.schema != OPERATOR_SCHEMA {
            return Err(Error::parse(&name, format!("unsupported schema `{}`", meta.schema)));
        }
        let basis_file = path.with_file_name(&meta.basis_file);
        let text = fs::read_to_string(&basis_file)?;
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(r, line)| {
                line.split(',')
                    .enumerate()
                    .map(|(c, cell)| {
                        cell.trim().parse::<f64>().map_err(|_| {
                            Error::parse(basis_file.display().to_string(), format!("row {}, column {}", r + 1, c + 1))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = meta.node_count;
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::parse(&name, format!("basis file is not {n}x{n}")));
        }
        let basis = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        if linalg::matrix_checksum(&basis) != meta.basis_checksum {
            return Err(Error::parse(&name, "basis checksum mismatch"));
        }
        let mut op = GftOperator::from_basis(basis, meta.cutoff, meta.node_ids)?;
        op.independent_columns = meta.independent_columns;
        op.source_checksum = meta.source_checksum;
        Ok(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(rows: usize, cols: usize, values: &[f64]) -> SignalMatrix {
        SignalMatrix::from_matrix(DMatrix::from_row_slice(rows, cols, values)).unwrap()
    }

    #[test]
    fn proportional_columns_keep_the_first() {
        let x = signal(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(independent_columns(&x).unwrap(), vec![0]);
    }

    #[test]
    fn identity_keeps_everything() {
        let x = SignalMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(independent_columns(&x).unwrap(), vec![0, 1, 2]);
        let op = build_gft(&x).unwrap();
        assert_eq!(op.basis(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn dependent_sum_column_is_skipped() {
        // columns c1, c2, c1 + c2, c3
        let x = signal(
            4,
            4,
            &[
                1.0, 0.0, 1.0, 0.0, //
                2.0, 1.0, 3.0, 0.0, //
                0.0, 1.0, 1.0, 1.0, //
                1.0, -1.0, 0.0, 2.0,
            ],
        );
        assert_eq!(x.rank(), 3);
        assert_eq!(independent_columns(&x).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn zero_signal_is_rejected() {
        let x = SignalMatrix::from_matrix(DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(independent_columns(&x), Err(Error::Degenerate(_))));
        assert!(build_gft(&x).is_err());
    }

    #[test]
    fn single_column_example() {
        let x = signal(2, 1, &[3.0, 4.0]);
        let op = build_gft(&x).unwrap();
        let f = op.basis();
        assert!((f[(0, 0)] - 0.6).abs() < 1e-15 && (f[(1, 0)] - 0.8).abs() < 1e-15);
        // Orthocomplement ±[−0.8, 0.6], oriented so its largest entry is positive.
        assert!((f[(0, 1)] - 0.8).abs() < 1e-15 && (f[(1, 1)] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn zero_response_has_empty_band() {
        let x = signal(2, 1, &[3.0, 4.0]);
        let op = build_gft(&x).unwrap();
        let resp = forward_gft(&op, &DMatrix::zeros(2, 3)).unwrap();
        assert!(resp.active_band.is_empty());
        assert!(verify_bandlimited(&op, &DMatrix::zeros(2, 3), 0).unwrap().holds);
        assert!(forward_gft(&op, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn identity_operator_band_check() {
        let op = GftOperator::from_basis(DMatrix::identity(3, 3), 3, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let check = verify_bandlimited(&op, &DMatrix::identity(3, 3), 2).unwrap();
        assert!(!check.holds);
        assert_eq!(check.residual, 1.0);
    }

    #[test]
    fn save_and_load() {
        let x = signal(3, 2, &[1.0, 0.3, 2.0, -1.0, 0.5, 0.25]);
        let op = build_gft(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.json");
        op.save(&path).unwrap();
        assert_eq!(GftOperator::load(&path).unwrap(), op);
    }
}
