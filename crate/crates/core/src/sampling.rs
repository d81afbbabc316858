//! Sensor selection by greedy maximization of `σ_min(F_SR)` and recovery of
//! the full signal from the sampled rows.
//!
//! Candidate scores are exact smallest singular values. Rather than running
//! an SVD of every `(|S|+1) × |R|` candidate matrix, the greedy step reuses one
//! symmetric eigendecomposition per step: while the candidate matrix is wide
//! (or square) its row Gram matrix is a bordered diagonal, otherwise its
//! column Gram matrix is a rank-one update, and in both cases the smallest
//! eigenvalue is the root of a secular equation found by bisection.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gft::GftOperator;
use crate::linalg;

pub const PLAN_SCHEMA: &str = "wdn-gft/sampling-plan/v1";

/// Scores within this distance count as tied; the lower node index wins.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Recovery rejects `F_SE` with `σ_min < 1e-10 · σ_max`.
pub const CONDITIONING_GUARD: f64 = 1e-10;
/// A best score at or below this is a rank-deficient candidate set.
const DEGENERATE_SIGMA: f64 = 1e-10;
/// Below this the Gram-based score has lost too many digits; rescore by SVD.
const RESCORE_BELOW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Gft,
    Laplacian,
    CsPca,
    CsDct,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Gft, Scheme::Laplacian, Scheme::CsPca, Scheme::CsDct];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gft => "gft",
            Scheme::Laplacian => "laplacian",
            Scheme::CsPca => "cs_pca",
            Scheme::CsDct => "cs_dct",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

/// Ordered sensor set `S`, frequency band `R` (0-based column indices of the
/// basis) and the conditioning `σ_min(F_SR)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub nodes: Vec<usize>,
    pub band: Vec<usize>,
    pub sigma_min: f64,
    pub operator_ref: String,
}

impl SamplingPlan {
    /// Builds a plan and records `σ_min(F_SR)` by direct SVD.
    pub fn new(basis: &DMatrix<f64>, nodes: Vec<usize>, band: Vec<usize>, operator_ref: String) -> Result<Self> {
        check_indices(&nodes, basis.nrows(), "node")?;
        check_indices(&band, basis.ncols(), "frequency")?;
        let sigma_min = if nodes.is_empty() || band.is_empty() {
            0.0
        } else {
            linalg::sigma_min(&linalg::submatrix(basis, &nodes, &band))
        };
        Ok(SamplingPlan {
            nodes,
            band,
            sigma_min,
            operator_ref,
        })
    }

    /// `rank(F_SR) = |R|` up to the degeneracy threshold.
    pub fn is_full_rank(&self) -> bool {
        self.nodes.len() >= self.band.len() && self.sigma_min > DEGENERATE_SIGMA
    }
}

fn check_indices(indices: &[usize], bound: usize, what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= bound {
            return Err(Error::DimensionMismatch(format!("{what} index {i} out of range for {bound}")));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidArgument(format!("duplicate {what} index {i}")));
        }
    }
    Ok(())
}

/// How candidate rows are scored in [`select_rows`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scoring {
    /// Secular-equation update from one eigendecomposition per step.
    #[default]
    Incremental,
    /// SVD of every candidate matrix.
    Exact,
}

/// Smallest eigenvalue of `[[diag(λ), z], [zᵀ, d]]`, `λ` ascending.
fn bordered_min_eig(lambda: &[f64], z: &[f64], d: f64) -> f64 {
    let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut hi = lambda[0].min(d);
    let mut lo = hi - znorm;
    if znorm == 0.0 {
        return hi;
    }
    let f = |x: f64| d - x - lambda.iter().zip(z).map(|(l, zi)| zi * zi / (l - x)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest eigenvalue of `diag(λ) + z zᵀ`, `λ` ascending.
fn rank_one_min_eig(lambda: &[f64], z: &[f64]) -> f64 {
    let z2: f64 = z.iter().map(|v| v * v).sum();
    let mut lo = lambda[0];
    let mut hi = lambda[0] + z2;
    if lambda.len() > 1 {
        hi = hi.min(lambda[1]);
    }
    let g = |x: f64| 1.0 + lambda.iter().zip(z).map(|(l, zi)| zi * zi / (l - x)).sum::<f64>();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `σ_min` of `B_{S ∪ {i}}` for every row `i` of `b`, given the rows already
/// selected. Rows in `selected` get `-inf`.
fn incremental_scores(b: &DMatrix<f64>, selected: &[usize]) -> Vec<f64> {
    let (n, m) = b.shape();
    let k = selected.len();
    let row_sq: Vec<f64> = (0..n).map(|i| b.row(i).norm_squared()).collect();
    let mut scores = vec![f64::NEG_INFINITY; n];
    if k == 0 {
        for i in 0..n {
            scores[i] = row_sq[i].sqrt();
        }
        return scores;
    }
    let bs = linalg::select_rows(b, selected);
    let taken: HashSet<usize> = selected.iter().copied().collect();
    if k < m {
        let (lambda, q) = linalg::symmetric_eigen_ascending(&(&bs * bs.transpose()));
        let w = q.tr_mul(&bs);
        let z = b * w.transpose();
        for i in (0..n).filter(|i| !taken.contains(i)) {
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            scores[i] = bordered_min_eig(&lambda, &zi, row_sq[i]).max(0.0).sqrt();
        }
    } else {
        let (lambda, q) = linalg::symmetric_eigen_ascending(&bs.tr_mul(&bs));
        let z = b * q;
        for i in (0..n).filter(|i| !taken.contains(i)) {
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            scores[i] = rank_one_min_eig(&lambda, &zi).max(0.0).sqrt();
        }
    }
    scores
}

fn exact_scores(b: &DMatrix<f64>, selected: &[usize]) -> Vec<f64> {
    let mut rows = selected.to_vec();
    rows.push(0);
    (0..b.nrows())
        .map(|i| {
            if selected.contains(&i) {
                return f64::NEG_INFINITY;
            }
            *rows.last_mut().unwrap() = i;
            linalg::sigma_min(&linalg::select_rows(b, &rows))
        })
        .collect()
}

/// First index whose score exceeds every earlier one by more than the tie
/// tolerance.
fn argmax_lowest(scores: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b + TIE_TOLERANCE) {
            best = Some((i, s));
        }
    }
    best
}

/// Greedy row selection on `basis[:, band]`: each step appends the row that
/// maximizes the smallest singular value of the selected rows. Returns the
/// rows in selection order.
pub fn select_rows(basis: &DMatrix<f64>, band: &[usize], budget: usize, scoring: Scoring) -> Result<Vec<usize>> {
    let n = basis.nrows();
    if budget == 0 {
        return Err(Error::InvalidArgument("sampling budget must be at least 1".into()));
    }
    if budget > n {
        return Err(Error::InvalidArgument(format!("sampling budget {budget} exceeds {n} nodes")));
    }
    if band.is_empty() {
        return Err(Error::DimensionMismatch("empty frequency band".into()));
    }
    if band.len() > n {
        return Err(Error::DimensionMismatch(format!("band of {} frequencies on {n} nodes", band.len())));
    }
    check_indices(band, basis.ncols(), "frequency")?;
    let b = linalg::select_columns(basis, band);
    let mut selected = Vec::with_capacity(budget);
    while selected.len() < budget {
        let mut scores = match scoring {
            Scoring::Incremental => incremental_scores(&b, &selected),
            Scoring::Exact => exact_scores(&b, &selected),
        };
        let (mut pick, mut best) = argmax_lowest(&scores).expect("budget ≤ N leaves a candidate");
        if scoring == Scoring::Incremental && best < RESCORE_BELOW {
            scores = exact_scores(&b, &selected);
            (pick, best) = argmax_lowest(&scores).expect("candidate");
        }
        if best <= DEGENERATE_SIGMA && selected.len() < band.len() {
            return Err(Error::DegenerateOperator(format!(
                "every candidate leaves F_SR rank-deficient after {} of {} required nodes",
                selected.len(),
                band.len()
            )));
        }
        selected.push(pick);
    }
    Ok(selected)
}

/// Greedy plan for `R = {1, …, band}` on a GFT operator.
pub fn greedy_select(op: &GftOperator, band: usize, budget: usize) -> Result<SamplingPlan> {
    greedy_select_band(op, &(0..band).collect::<Vec<_>>(), budget)
}

pub fn greedy_select_band(op: &GftOperator, band: &[usize], budget: usize) -> Result<SamplingPlan> {
    let nodes = select_rows(op.basis(), band, budget, Scoring::Incremental)?;
    SamplingPlan::new(op.basis(), nodes, band.to_vec(), op.checksum())
}

/// Rows of `x` indexed by the plan's nodes, in plan order.
pub fn sample(x: &DMatrix<f64>, plan: &SamplingPlan) -> Result<DMatrix<f64>> {
    if let Some(&bad) = plan.nodes.iter().find(|&&i| i >= x.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "plan node {bad} out of range for {} rows",
            x.nrows()
        )));
    }
    Ok(linalg::select_rows(x, &plan.nodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum RecoveryFlag {
    /// Fewer samples than estimated frequencies; minimum-norm solution used.
    LeastSquaresFallback { samples: usize, frequencies: usize },
    /// The ℓ1 solver hit its iteration cap on these time steps.
    SolverNotConverged { time_steps: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub estimate: DMatrix<f64>,
    pub scheme: Scheme,
    pub plan: SamplingPlan,
    pub rmse: Option<f64>,
    pub per_node_rmse: Option<Vec<f64>>,
    pub flags: Vec<RecoveryFlag>,
}

impl RecoveryReport {
    pub fn new(estimate: DMatrix<f64>, scheme: Scheme, plan: SamplingPlan, flags: Vec<RecoveryFlag>) -> Self {
        RecoveryReport {
            estimate,
            scheme,
            plan,
            rmse: None,
            per_node_rmse: None,
            flags,
        }
    }

    /// Fills in the error against the ground truth.
    pub fn score(&mut self, truth: &DMatrix<f64>) -> Result<f64> {
        let e = crate::eval::rmse(&self.estimate, truth)?;
        self.per_node_rmse = Some(crate::eval::per_node_rmse(&self.estimate, truth)?);
        self.rmse = Some(e);
        Ok(e)
    }
}

/// Least-squares fit of the coefficients on `estimation` from the samples,
/// synthesized on the plan band restricted to `estimation`.
///
/// With `estimation = plan.band` this is `F_VR (F_SRᵀ F_SR)⁻¹ F_SRᵀ X_S`.
/// Taking `estimation` to be the operator's whole cut-off band instead keeps
/// frequencies in the cut-off but outside `R` from aliasing into the
/// estimate when `|R|` is below the rank; the two coincide when `R` is the
/// cut-off band.
pub fn reconstruct(
    samples: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    plan: &SamplingPlan,
    estimation: &[usize],
) -> Result<(DMatrix<f64>, Vec<RecoveryFlag>)> {
    let n = basis.nrows();
    check_indices(&plan.nodes, n, "node")?;
    check_indices(estimation, basis.ncols(), "frequency")?;
    if samples.nrows() != plan.nodes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sampled rows for {} plan nodes",
            samples.nrows(),
            plan.nodes.len()
        )));
    }
    linalg::ensure_finite(samples, "samples")?;
    let keep: Vec<(usize, usize)> = estimation
        .iter()
        .enumerate()
        .filter(|(_, f)| plan.band.contains(f))
        .map(|(pos, &f)| (pos, f))
        .collect();
    if keep.is_empty() || plan.nodes.is_empty() {
        return Ok((DMatrix::zeros(n, samples.ncols()), Vec::new()));
    }
    let a = linalg::submatrix(basis, &plan.nodes, estimation);
    let sv = linalg::singular_values(&a);
    let (smax, smin) = (sv[0], *sv.last().unwrap());
    // written negated so a NaN singular value also trips the guard
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(smin >= CONDITIONING_GUARD * smax) || smax == 0.0 {
        return Err(Error::IllConditioned {
            sigma_min: smin,
            sigma_max: smax,
        });
    }
    let mut flags = Vec::new();
    if plan.nodes.len() < estimation.len() {
        flags.push(RecoveryFlag::LeastSquaresFallback {
            samples: plan.nodes.len(),
            frequencies: estimation.len(),
        });
    }
    let coef = linalg::solve_least_squares(&a, samples);
    let mut estimate = DMatrix::zeros(n, samples.ncols());
    for (pos, f) in keep {
        let col: DVector<f64> = basis.column(f).clone_owned();
        estimate += col * coef.row(pos);
    }
    Ok((estimate, flags))
}

/// GFT recovery: coefficients are estimated on the operator's cut-off band
/// `{1, …, r}` and synthesized on the plan band.
pub fn recover(samples: &DMatrix<f64>, op: &GftOperator, plan: &SamplingPlan) -> Result<RecoveryReport> {
    if op.node_count() != 0 && plan.band.iter().any(|&f| f >= op.node_count()) {
        return Err(Error::DimensionMismatch("plan band exceeds the operator".into()));
    }
    let cutoff: Vec<usize> = (0..op.cutoff()).collect();
    let (estimate, flags) = reconstruct(samples, op.basis(), plan, &cutoff)?;
    Ok(RecoveryReport::new(estimate, Scheme::Gft, plan.clone(), flags))
}

/// Literal `F_VR (F_SRᵀ F_SR)⁻¹ F_SRᵀ X_S` on any orthonormal basis.
pub fn recover_direct(
    samples: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    plan: &SamplingPlan,
    scheme: Scheme,
) -> Result<RecoveryReport> {
    let (estimate, flags) = reconstruct(samples, basis, plan, &plan.band)?;
    Ok(RecoveryReport::new(estimate, scheme, plan.clone(), flags))
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    schema: String,
    operator_ref: String,
    nodes: Vec<String>,
    band_size: usize,
    band: Vec<usize>,
    sigma_min: f64,
}

impl SamplingPlan {
    /// JSON with node ids in selection order. `band` holds 0-based frequency
    /// indices.
    pub fn to_json(&self, node_ids: &[String]) -> Result<String> {
        let nodes = self
            .nodes
            .iter()
            .map(|&i| {
                node_ids
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::DimensionMismatch(format!("node {i} has no id")))
            })
            .collect::<Result<_>>()?;
        let file = PlanFile {
            schema: PLAN_SCHEMA.to_string(),
            operator_ref: self.operator_ref.clone(),
            nodes,
            band_size: self.band.len(),
            band: self.band.clone(),
            sigma_min: self.sigma_min,
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str, node_ids: &[String], source_name: &str) -> Result<Self> {
        let file: PlanFile = serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.to_string()))?;
        if file.schema != PLAN_SCHEMA {
            return Err(Error::parse(source_name, format!("unsupported schema `{}`", file.schema)));
        }
        if file.band_size != file.band.len() {
            return Err(Error::parse(source_name, "band_size disagrees with band"));
        }
        let nodes = file
            .nodes
            .iter()
            .map(|id| {
                node_ids
                    .iter()
                    .position(|n| n == id)
                    .ok_or_else(|| Error::parse(source_name, format!("unknown node id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_indices(&nodes, node_ids.len(), "node")?;
        Ok(SamplingPlan {
            nodes,
            band: file.band,
            sigma_min: file.sigma_min,
            operator_ref: file.operator_ref,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, node_ids: &[String]) -> Result<()> {
        fs::write(path, self.to_json(node_ids)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, node_ids: &[String]) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path)?, node_ids, &path.display().to_string())
    }
}
