//! Comparison schemes: sampling on Laplacian eigenvectors, and compressed
//! sensing with a PCA or DCT sparsifying basis.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynsim::SignalMatrix;
use crate::error::{Error, Result};
use crate::gft::active_rows;
use crate::graph::LaplacianSpectrum;
use crate::linalg;
use crate::sampling::{self, RecoveryFlag, RecoveryReport, SamplingPlan, Scheme, Scoring};

/// Default relative tolerance for the active Laplacian band.
pub const LAPLACIAN_BAND_TOLERANCE: f64 = 1e-8;
/// Relative threshold for counting a coefficient as nonzero.
pub const SPARSITY_TOLERANCE: f64 = 1e-8;

/// Frequencies where some time step has `|(F_lapᵀ x_k)_i| > tol · max`.
pub fn laplacian_band_select(spec: &LaplacianSpectrum, x: &DMatrix<f64>, tol: f64) -> Result<Vec<usize>> {
    if x.nrows() != spec.len() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, spectrum {}",
            x.nrows(),
            spec.len()
        )));
    }
    Ok(active_rows(&spec.eigenvectors.tr_mul(x), tol))
}

pub fn laplacian_select(spec: &LaplacianSpectrum, band: &[usize], budget: usize) -> Result<SamplingPlan> {
    let nodes = sampling::select_rows(&spec.eigenvectors, band, budget, Scoring::Incremental)?;
    SamplingPlan::new(
        &spec.eigenvectors,
        nodes,
        band.to_vec(),
        linalg::matrix_checksum(&spec.eigenvectors),
    )
}

pub fn laplacian_recover(samples: &DMatrix<f64>, spec: &LaplacianSpectrum, plan: &SamplingPlan) -> Result<RecoveryReport> {
    sampling::recover_direct(samples, &spec.eigenvectors, plan, Scheme::Laplacian)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsKind {
    Pca,
    Dct,
}

/// Invertible sparsifying basis `x_k = P c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsBasis {
    pub matrix: DMatrix<f64>,
    pub kind: CsKind,
    /// `γ`, the largest per-time-step support of the coefficients.
    pub sparsity: usize,
}

impl CsBasis {
    /// `C = P⁻¹ X`.
    pub fn coefficients(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} rows, basis {}",
                x.nrows(),
                self.matrix.nrows()
            )));
        }
        if linalg::orthogonality_defect(&self.matrix) <= 1e-10 {
            return Ok(self.matrix.tr_mul(x));
        }
        self.matrix
            .clone()
            .lu()
            .solve(x)
            .ok_or_else(|| Error::Degenerate("basis is singular".into()))
    }

    /// Same basis with `γ` measured on `x`.
    pub fn with_sparsity_of(mut self, x: &DMatrix<f64>) -> Result<Self> {
        self.sparsity = sparsity(&self.coefficients(x)?);
        Ok(self)
    }
}

/// Largest count over columns of entries above `1e-8 ·` the column maximum.
pub fn sparsity(coefficients: &DMatrix<f64>) -> usize {
    coefficients
        .column_iter()
        .map(|c| {
            let top = c.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            if top == 0.0 {
                0
            } else {
                c.iter().filter(|v| v.abs() > SPARSITY_TOLERANCE * top).count()
            }
        })
        .max()
        .unwrap_or(0)
}

fn orient_columns(p: &mut DMatrix<f64>) {
    for mut col in p.column_iter_mut() {
        let mut pivot = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Uncentered PCA basis: the leading `r` left singular vectors of `X`,
/// completed to an orthonormal basis.
pub fn build_pca_basis(x: &SignalMatrix) -> Result<CsBasis> {
    let r = x.rank();
    if r == 0 {
        return Err(Error::Degenerate("PCA basis of a zero signal".into()));
    }
    let (_, u) = linalg::left_singular_vectors(x.data())?;
    let mut lead = u.columns(0, r).into_owned();
    orient_columns(&mut lead);
    let mut rest = linalg::orthogonal_complement(&lead);
    orient_columns(&mut rest);
    let n = x.node_count();
    let mut p = DMatrix::zeros(n, n);
    p.columns_mut(0, r).copy_from(&lead);
    p.columns_mut(r, n - r).copy_from(&rest);
    CsBasis {
        matrix: p,
        kind: CsKind::Pca,
        sparsity: 0,
    }
    .with_sparsity_of(x.data())
}

/// Orthonormal DCT-II basis, `P[n][k] = α_k cos(π (2n + 1) k / 2N)`.
/// `γ` is left at `N` until measured with [`CsBasis::with_sparsity_of`].
pub fn build_dct_basis(n: usize) -> Result<CsBasis> {
    if n == 0 {
        return Err(Error::InvalidArgument("DCT basis needs N >= 1".into()));
    }
    let nf = n as f64;
    let matrix = DMatrix::from_fn(n, n, |i, k| {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    });
    Ok(CsBasis {
        matrix,
        kind: CsKind::Dct,
        sparsity: n,
    })
}

/// Proximal-gradient basis pursuit, `min ‖c‖₁ s.t. A c = y`.
///
/// FISTA with adaptive restart runs on `½‖Ac − y‖² + λ‖c‖₁` while `λ`
/// decreases geometrically from `‖Aᵀy‖∞ / 2` to `lambda_floor · ‖Aᵀy‖∞`.
/// After each stage the iterate's support is refit by least squares; the
/// refit is returned as soon as it satisfies `A c = y` and admits a dual
/// certificate `‖Aᵀv‖∞ ≤ 1`, `A_Tᵀ v = sign(c_T)`, which proves it is a
/// basis-pursuit minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Solver {
    /// Stop a stage when `‖c⁺ − c‖ ≤ tolerance · max(1, ‖c‖)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lambda_floor: f64,
    pub lambda_ratio: f64,
}

impl Default for L1Solver {
    fn default() -> Self {
        L1Solver {
            tolerance: 1e-9,
            max_iterations: 50_000,
            lambda_floor: 1e-13,
            lambda_ratio: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution {
    pub coefficients: DVector<f64>,
    pub iterations: usize,
    /// Certified basis-pursuit optimum, or the last stage converged.
    pub converged: bool,
    pub certified: bool,
}

fn soft_threshold(v: &mut DVector<f64>, t: f64) {
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - t).max(0.0);
    }
}

/// Refits `c` on its support and checks the optimality certificate. The
/// support is first taken with a small relative cut to shed shrinkage
/// leftovers, then as every nonzero entry.
fn polish(a: &DMatrix<f64>, y: &DVector<f64>, c: &DVector<f64>) -> Option<DVector<f64>> {
    let top = c.amax();
    if top == 0.0 {
        return None;
    }
    let trimmed: Vec<usize> = (0..c.len()).filter(|&i| c[i].abs() > 1e-9 * top).collect();
    let nonzero: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
    polish_on(a, y, &trimmed).or_else(|| {
        if nonzero.len() > trimmed.len() {
            polish_on(a, y, &nonzero)
        } else {
            None
        }
    })
}

fn polish_on(a: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let n = a.ncols();
    if support.len() > a.nrows() {
        return None;
    }
    let at = linalg::select_columns(a, support);
    let sv = linalg::singular_values(&at);
    if *sv.last()? < 1e-10 * sv[0] {
        return None;
    }
    let ymat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let ct = linalg::solve_least_squares(&at, &ymat);
    let residual = (&at * &ct - &ymat).norm();
    if residual > 1e-12 * y.norm().max(f64::MIN_POSITIVE) {
        return None;
    }
    let signs = DMatrix::from_fn(support.len(), 1, |i, _| ct[(i, 0)].signum());
    if signs.iter().any(|&s| s == 0.0) {
        return None;
    }
    let v = linalg::solve_least_squares(&at.transpose(), &signs);
    let dual = a.tr_mul(&v);
    if dual.amax() > 1.0 + 1e-9 {
        return None;
    }
    let mut out = DVector::zeros(n);
    for (pos, &i) in support.iter().enumerate() {
        out[i] = ct[(pos, 0)];
    }
    Some(out)
}

impl L1Solver {
    pub fn solve(&self, a: &DMatrix<f64>, y: &DVector<f64>, lipschitz: f64) -> L1Solution {
        let n = a.ncols();
        let aty = a.tr_mul(y);
        let lambda_max = aty.amax();
        if lambda_max == 0.0 {
            return L1Solution {
                coefficients: DVector::zeros(n),
                iterations: 0,
                converged: true,
                certified: true,
            };
        }
        let step = 1.0 / lipschitz;
        let mut x = DVector::zeros(n);
        let mut iterations = 0;
        let mut lambda = 0.5 * lambda_max;
        let floor = self.lambda_floor * lambda_max;
        let mut stage_converged;
        loop {
            let mut z = x.clone();
            let mut t = 1.0_f64;
            stage_converged = false;
            while iterations < self.max_iterations {
                iterations += 1;
                let grad = a.tr_mul(&(a * &z - y));
                let mut next = &z - grad * step;
                soft_threshold(&mut next, lambda * step);
                let delta = &next - &x;
                let change = delta.norm();
                // Restart momentum when it points uphill.
                if (&z - &next).dot(&delta) > 0.0 {
                    t = 1.0;
                    z = next.clone();
                } else {
                    let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                    z = &next + delta * ((t - 1.0) / t_next);
                    t = t_next;
                }
                x = next;
                if change <= self.tolerance * x.norm().max(1.0) {
                    stage_converged = true;
                    break;
                }
            }
            if let Some(exact) = polish(a, y, &x) {
                return L1Solution {
                    coefficients: exact,
                    iterations,
                    converged: true,
                    certified: true,
                };
            }
            if iterations >= self.max_iterations || lambda <= floor {
                break;
            }
            lambda = (lambda * self.lambda_ratio).max(floor);
        }
        L1Solution {
            coefficients: x,
            iterations,
            converged: stage_converged,
            certified: false,
        }
    }
}

/// Per-time-step ℓ1 recovery from the rows `nodes` of `X`.
pub struct CsProblem<'a> {
    basis: &'a CsBasis,
    a: DMatrix<f64>,
    lipschitz: f64,
    solver: L1Solver,
}

impl<'a> CsProblem<'a> {
    pub fn new(basis: &'a CsBasis, nodes: &[usize], solver: L1Solver) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("compressed sensing needs at least one sample".into()));
        }
        if let Some(&bad) = nodes.iter().find(|&&i| i >= basis.matrix.nrows()) {
            return Err(Error::DimensionMismatch(format!("node {bad} out of range")));
        }
        let a = linalg::select_rows(&basis.matrix, nodes);
        let top = linalg::singular_values(&a)[0];
        Ok(CsProblem {
            basis,
            a,
            lipschitz: (top * top).max(f64::MIN_POSITIVE),
            solver,
        })
    }

    /// Recovered signal column for one sampled time step.
    pub fn solve_column(&self, y: &DVector<f64>) -> (DVector<f64>, L1Solution) {
        let sol = self.solver.solve(&self.a, y, self.lipschitz);
        (&self.basis.matrix * &sol.coefficients, sol)
    }
}

pub fn cs_recover(samples: &DMatrix<f64>, basis: &CsBasis, nodes: &[usize], solver: L1Solver) -> Result<RecoveryReport> {
    if samples.nrows() != nodes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sampled rows for {} nodes",
            samples.nrows(),
            nodes.len()
        )));
    }
    linalg::ensure_finite(samples, "samples")?;
    let problem = CsProblem::new(basis, nodes, solver)?;
    let n = basis.matrix.nrows();
    let mut estimate = DMatrix::zeros(n, samples.ncols());
    let mut stalled = Vec::new();
    for k in 0..samples.ncols() {
        let (col, sol) = problem.solve_column(&samples.column(k).clone_owned());
        if !sol.converged {
            stalled.push(k);
        }
        estimate.set_column(k, &col);
    }
    let scheme = match basis.kind {
        CsKind::Pca => Scheme::CsPca,
        CsKind::Dct => Scheme::CsDct,
    };
    let plan = SamplingPlan::new(
        &basis.matrix,
        nodes.to_vec(),
        (0..n).collect(),
        linalg::matrix_checksum(&basis.matrix),
    )?;
    let flags = if stalled.is_empty() {
        Vec::new()
    } else {
        vec![RecoveryFlag::SolverNotConverged { time_steps: stalled }]
    };
    Ok(RecoveryReport::new(estimate, scheme, plan, flags))
}

/// Seeded random sensor order; prefixes give nested sampling sets.
pub fn random_node_order(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, n, n).into_vec()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipCheck {
    pub delta: f64,
    pub subset_size: usize,
    pub satisfied: bool,
    /// All supports were enumerated.
    pub exhaustive: bool,
}

/// Exhaustive enumeration is used up to this many supports.
pub const RIP_EXHAUSTIVE_LIMIT: u128 = 10_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > RIP_EXHAUSTIVE_LIMIT * 1000 {
            return u128::MAX;
        }
    }
    acc
}

fn support_delta(a: &DMatrix<f64>, support: &[usize]) -> f64 {
    let at = linalg::select_columns(a, support);
    let (eig, _) = linalg::symmetric_eigen_ascending(&at.tr_mul(&at));
    (eig[eig.len() - 1] - 1.0).abs().max((1.0 - eig[0]).abs())
}

/// `δ_{2γ}` of `P_SV`: the largest `|‖P_SV c‖² − 1|` over unit `2γ`-sparse `c`.
///
/// Each support contributes the extreme eigenvalues of its Gram matrix.
/// All supports are enumerated when there are at most 10⁴ of them;
/// otherwise `trials` random supports are drawn and the result is a lower
/// estimate.
pub fn rip_estimate(basis: &DMatrix<f64>, nodes: &[usize], gamma: usize, trials: usize, seed: u64) -> Result<RipCheck> {
    if trials == 0 {
        return Err(Error::InvalidArgument("RIP estimate needs at least one trial".into()));
    }
    if gamma == 0 {
        return Err(Error::InvalidArgument("sparsity must be at least 1".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&i| i >= basis.nrows()) {
        return Err(Error::DimensionMismatch(format!("node {bad} out of range")));
    }
    let n = basis.ncols();
    let k = (2 * gamma).min(n);
    let a = linalg::select_rows(basis, nodes);
    let mut delta = 0.0_f64;
    let exhaustive = binomial(n, k) <= RIP_EXHAUSTIVE_LIMIT;
    if exhaustive {
        let mut support: Vec<usize> = (0..k).collect();
        loop {
            delta = delta.max(support_delta(&a, &support));
            // Next combination in lexicographic order.
            let Some(i) = (0..k).rev().find(|&i| support[i] < n - k + i) else {
                break;
            };
            support[i] += 1;
            for j in i + 1..k {
                support[j] = support[j - 1] + 1;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..trials {
            let mut support = index::sample(&mut rng, n, k).into_vec();
            support.sort_unstable();
            delta = delta.max(support_delta(&a, &support));
        }
    }
    Ok(RipCheck {
        delta,
        subset_size: nodes.len(),
        satisfied: delta < 1.0,
        exhaustive,
    })
}
