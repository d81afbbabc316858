//! Error metrics, parameter sweeps, minimum sampling sizes and the
//! cross-scheme comparison, with their delimited-text report formats.

use std::cell::{OnceCell, RefCell};
use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, CsBasis, CsProblem, L1Solver, LAPLACIAN_BAND_TOLERANCE};
use crate::dynsim::SignalMatrix;
use crate::error::{Error, Result};
use crate::gft::{self, GftOperator};
use crate::graph::LaplacianSpectrum;
use crate::linalg;
use crate::sampling::{self, SamplingPlan, Scheme, Scoring};

/// RMSE below which a recovery counts as exact.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;
pub const SWEEP_SCHEMA: &str = "wdn-gft/sweep/v1";
pub const COMPARISON_SCHEMA: &str = "wdn-gft/comparison/v1";
pub const PROFILE_SCHEMA: &str = "wdn-gft/profile/v1";

fn check_shapes(xhat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if xhat.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{}, truth {}x{}",
            xhat.nrows(),
            xhat.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// `sqrt(Σ_k ‖x̂_k − x_k‖² / (N K))`.
pub fn rmse(xhat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    check_shapes(xhat, x)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(((xhat - x).norm_squared() / x.len() as f64).sqrt())
}

pub fn per_node_rmse(xhat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shapes(xhat, x)?;
    let k = x.ncols().max(1) as f64;
    Ok((0..x.nrows())
        .map(|i| ((xhat.row(i) - x.row(i)).norm_squared() / k).sqrt())
        .collect())
}

/// Squared norms of the rows of `coefficients`.
fn row_energy(coefficients: &DMatrix<f64>) -> Vec<f64> {
    (0..coefficients.nrows()).map(|i| coefficients.row(i).norm_squared()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinSampling {
    pub s_min: usize,
    /// Smallest prefix band that fits the signal below the threshold.
    pub r_min: Option<usize>,
    pub reachable: bool,
}

/// Per-scenario operators and cached selections for scoring any scheme at
/// any `(|R|, |S|)`.
pub struct Evaluator<'a> {
    id: String,
    signal: &'a SignalMatrix,
    gft: GftOperator,
    gft_energy: Vec<f64>,
    laplacian: Option<&'a LaplacianSpectrum>,
    solver: L1Solver,
    cs_order: Vec<usize>,
    gft_order: OnceCell<Vec<usize>>,
    laplacian_orders: RefCell<HashMap<Vec<usize>, Vec<usize>>>,
    laplacian_band: OnceCell<Vec<usize>>,
    laplacian_energy: OnceCell<Vec<f64>>,
    pca: OnceCell<Result<CsBasis>>,
    dct: OnceCell<CsBasis>,
}

impl<'a> Evaluator<'a> {
    /// `seed` fixes the random sensor order of the compressed-sensing schemes.
    pub fn new(id: impl Into<String>, signal: &'a SignalMatrix, laplacian: Option<&'a LaplacianSpectrum>, seed: u64) -> Result<Self> {
        if let Some(spec) = laplacian {
            if spec.len() != signal.node_count() {
                return Err(Error::DimensionMismatch(format!(
                    "spectrum has {} nodes, signal {}",
                    spec.len(),
                    signal.node_count()
                )));
            }
        }
        let gft = gft::build_gft(signal)?;
        let gft_energy = row_energy(&gft.basis().tr_mul(signal.data()));
        Ok(Evaluator {
            id: id.into(),
            signal,
            gft,
            gft_energy,
            laplacian,
            solver: L1Solver::default(),
            cs_order: baselines::random_node_order(signal.node_count(), seed),
            gft_order: OnceCell::new(),
            laplacian_orders: RefCell::new(HashMap::new()),
            laplacian_band: OnceCell::new(),
            laplacian_energy: OnceCell::new(),
            pca: OnceCell::new(),
            dct: OnceCell::new(),
        })
    }

    pub fn with_solver(mut self, solver: L1Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn gft(&self) -> &GftOperator {
        &self.gft
    }

    pub fn rank(&self) -> usize {
        self.signal.rank()
    }

    fn n(&self) -> usize {
        self.signal.node_count()
    }

    fn nk(&self) -> f64 {
        (self.signal.node_count() * self.signal.steps()) as f64
    }

    fn spectrum(&self) -> Result<&'a LaplacianSpectrum> {
        self.laplacian
            .ok_or_else(|| Error::InvalidArgument("the laplacian scheme needs the network graph".into()))
    }

    /// Greedy sensor order over the cut-off band, all `N` nodes.
    pub fn gft_order(&self) -> Result<&[usize]> {
        if self.gft_order.get().is_none() {
            let band: Vec<usize> = (0..self.gft.cutoff()).collect();
            let order = sampling::select_rows(self.gft.basis(), &band, self.n(), Scoring::Incremental)?;
            let _ = self.gft_order.set(order);
        }
        Ok(self.gft_order.get().unwrap())
    }

    fn laplacian_order(&self, band: &[usize], budget: usize) -> Result<Vec<usize>> {
        if let Some(order) = self.laplacian_orders.borrow().get(band) {
            return Ok(order[..budget].to_vec());
        }
        let spec = self.spectrum()?;
        let order = sampling::select_rows(&spec.eigenvectors, band, self.n(), Scoring::Incremental)?;
        let out = order[..budget].to_vec();
        self.laplacian_orders.borrow_mut().insert(band.to_vec(), order);
        Ok(out)
    }

    /// Active Laplacian band `N_ω` of the signal.
    pub fn laplacian_band(&self) -> Result<&[usize]> {
        let spec = self.spectrum()?;
        if self.laplacian_band.get().is_none() {
            let band = baselines::laplacian_band_select(spec, self.signal.data(), LAPLACIAN_BAND_TOLERANCE)?;
            let _ = self.laplacian_band.set(band);
        }
        Ok(self.laplacian_band.get().unwrap())
    }

    fn laplacian_energy(&self) -> Result<&[f64]> {
        let spec = self.spectrum()?;
        Ok(self
            .laplacian_energy
            .get_or_init(|| row_energy(&spec.eigenvectors.tr_mul(self.signal.data()))))
    }

    pub fn pca(&self) -> Result<&CsBasis> {
        self.pca
            .get_or_init(|| baselines::build_pca_basis(self.signal))
            .as_ref()
            .map_err(|e| Error::Degenerate(e.to_string()))
    }

    pub fn dct(&self) -> Result<&CsBasis> {
        if self.dct.get().is_none() {
            let basis = baselines::build_dct_basis(self.n())?.with_sparsity_of(self.signal.data())?;
            let _ = self.dct.set(basis);
        }
        Ok(self.dct.get().unwrap())
    }

    fn cs_basis(&self, scheme: Scheme) -> Result<&CsBasis> {
        match scheme {
            Scheme::CsPca => self.pca(),
            Scheme::CsDct => self.dct(),
            _ => unreachable!("not a compressed-sensing scheme"),
        }
    }

    fn check_range(&self, what: &str, v: usize) -> Result<()> {
        if v == 0 || v > self.n() {
            return Err(Error::InvalidArgument(format!("{what} = {v} outside [1, {}]", self.n())));
        }
        Ok(())
    }

    /// Recovery error with `|R| = band`, `|S| = samples`.
    ///
    /// GFT: sensors are the greedy prefix over the cut-off band; `R` is
    /// `{1, …, band}`. Laplacian: greedy over the first `band` eigenvectors.
    /// Compressed sensing ignores `band` and samples a seeded random prefix.
    pub fn rmse_at(&self, scheme: Scheme, band: usize, samples: usize) -> Result<f64> {
        self.check_range("|R|", band)?;
        self.check_range("|S|", samples)?;
        let x = self.signal.data();
        match scheme {
            Scheme::Gft => {
                let nodes = self.gft_order()?[..samples].to_vec();
                let plan = SamplingPlan::new(self.gft.basis(), nodes, (0..band).collect(), self.gft.checksum())?;
                let rep = sampling::recover(&sampling::sample(x, &plan)?, &self.gft, &plan)?;
                rmse(&rep.estimate, x)
            }
            Scheme::Laplacian => {
                let band: Vec<usize> = (0..band).collect();
                self.laplacian_rmse(&band, samples)
            }
            Scheme::CsPca | Scheme::CsDct => Ok(self.cs_rmse(scheme, samples, None)?.unwrap()),
        }
    }

    fn laplacian_rmse(&self, band: &[usize], samples: usize) -> Result<f64> {
        let spec = self.spectrum()?;
        let nodes = self.laplacian_order(band, samples)?;
        let plan = SamplingPlan::new(&spec.eigenvectors, nodes, band.to_vec(), String::new())?;
        let x = self.signal.data();
        let rep = baselines::laplacian_recover(&sampling::sample(x, &plan)?, spec, &plan)?;
        rmse(&rep.estimate, x)
    }

    /// CS error over the first `samples` random sensors. With a `limit`, gives
    /// up (returning `None`) as soon as the error is known to reach it; the
    /// time steps with the densest coefficients are solved first.
    fn cs_rmse(&self, scheme: Scheme, samples: usize, limit: Option<f64>) -> Result<Option<f64>> {
        let basis = self.cs_basis(scheme)?;
        let x = self.signal.data();
        let nodes = &self.cs_order[..samples];
        let problem = CsProblem::new(basis, nodes, self.solver)?;
        let coefficients = basis.coefficients(x)?;
        let mut order: Vec<(usize, usize)> = (0..x.ncols())
            .map(|k| {
                let c = coefficients.column(k);
                let top = c.amax();
                let count = c.iter().filter(|v| v.abs() > baselines::SPARSITY_TOLERANCE * top).count();
                (k, count)
            })
            .collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let budget = limit.map(|t| t * t * self.nk());
        let mut total = 0.0;
        for (k, _) in order {
            let y: DVector<f64> = DVector::from_iterator(samples, nodes.iter().map(|&i| x[(i, k)]));
            let (col, _) = problem.solve_column(&y);
            total += (col - x.column(k)).norm_squared();
            if budget.is_some_and(|b| total >= b) {
                return Ok(None);
            }
        }
        Ok(Some((total / self.nk()).sqrt()))
    }

    /// Smallest `ρ ≥ 1` with `sqrt(Σ_{i ≥ ρ} energy_i / NK) < threshold`,
    /// i.e. the shortest prefix band that fits the signal under full sampling.
    fn smallest_prefix_band(&self, energy: &[f64], threshold: f64) -> Option<usize> {
        (1..=energy.len()).find(|&rho| {
            let outside: f64 = energy[rho..].iter().sum();
            (outside / self.nk()).sqrt() < threshold
        })
    }

    /// Smallest `|S|` with RMSE below `threshold`.
    ///
    /// GFT uses `R` = the cut-off band; `r_min` is the shortest prefix band
    /// meeting the threshold with every node sampled. The Laplacian
    /// scheme scans `|S|` upward with `R` = the first `|S|` frequencies of
    /// `N_ω`, skipping sizes whose out-of-band energy alone exceeds the
    /// threshold. Sizes are scanned upward from 1 for every scheme.
    pub fn min_sampling_size(&self, scheme: Scheme, threshold: f64) -> Result<MinSampling> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::InvalidArgument(format!("threshold {threshold} must be positive")));
        }
        let n = self.n();
        let passes = |s: usize| -> bool {
            let v = match scheme {
                Scheme::Gft => self.rmse_at(Scheme::Gft, self.gft.cutoff(), s).ok(),
                Scheme::Laplacian => self.laplacian_at_size(s).ok(),
                Scheme::CsPca | Scheme::CsDct => self.cs_rmse(scheme, s, Some(threshold)).ok().flatten(),
            };
            v.is_some_and(|e| e < threshold)
        };
        let unreachable = MinSampling {
            s_min: n,
            r_min: None,
            reachable: false,
        };
        let found = match scheme {
            Scheme::Gft => {
                let found = (1..=n).find(|&s| passes(s));
                return Ok(match found {
                    Some(s) => MinSampling {
                        s_min: s,
                        r_min: self.smallest_prefix_band(&self.gft_energy, threshold),
                        reachable: true,
                    },
                    None => unreachable,
                });
            }
            Scheme::Laplacian => {
                let band = self.laplacian_band()?.to_vec();
                let energy = self.laplacian_energy()?.to_vec();
                let mut found = None;
                for s in 1..=n {
                    // Recovery lies in the span of the band, so the energy
                    // outside it is a floor on the error.
                    let kept = &band[..s.min(band.len())];
                    let outside: f64 = (0..n).filter(|f| !kept.contains(f)).map(|f| energy[f]).sum();
                    if (outside / self.nk()).sqrt() >= threshold {
                        continue;
                    }
                    if passes(s) {
                        found = Some(s);
                        break;
                    }
                }
                found
            }
            Scheme::CsPca | Scheme::CsDct => (1..=n).find(|&s| passes(s)),
        };
        Ok(match found {
            Some(s) => MinSampling {
                s_min: s,
                r_min: None,
                reachable: true,
            },
            None => unreachable,
        })
    }

    fn laplacian_at_size(&self, s: usize) -> Result<f64> {
        let band = self.laplacian_band()?;
        if band.is_empty() {
            return rmse(&DMatrix::zeros(self.n(), self.signal.steps()), self.signal.data());
        }
        let band = band[..s.min(band.len())].to_vec();
        self.laplacian_rmse(&band, s)
    }

    /// Evaluates every `(|R|, |S|)` cell; failures are recorded per cell.
    pub fn sweep(&self, scheme: Scheme, bands: &[usize], samples: &[usize]) -> Result<SweepResult> {
        for &b in bands {
            self.check_range("|R|", b)?;
        }
        for &s in samples {
            self.check_range("|S|", s)?;
        }
        let mut cs_cache: HashMap<usize, std::result::Result<f64, String>> = HashMap::new();
        let mut cells = Vec::with_capacity(bands.len() * samples.len());
        for &b in bands {
            for &s in samples {
                let outcome = if matches!(scheme, Scheme::CsPca | Scheme::CsDct) {
                    cs_cache
                        .entry(s)
                        .or_insert_with(|| self.rmse_at(scheme, b, s).map_err(|e| e.to_string()))
                        .clone()
                } else {
                    self.rmse_at(scheme, b, s).map_err(|e| e.to_string())
                };
                let (rmse, flag) = match outcome {
                    Ok(v) => (Some(v), None),
                    Err(e) => (None, Some(e)),
                };
                cells.push(SweepCell {
                    band: b,
                    samples: s,
                    rmse,
                    flag,
                });
            }
        }
        Ok(SweepResult {
            scenario_id: self.id.clone(),
            scheme,
            rank: self.rank(),
            cells,
        })
    }
}

/// `1, 1 + step, …` up to `n`, plus `extra`, sorted and deduplicated.
pub fn grid_axis(n: usize, step: usize, extra: &[usize]) -> Vec<usize> {
    let mut axis: Vec<usize> = (1..=n).step_by(step.max(1)).collect();
    axis.extend(extra.iter().copied().filter(|&v| (1..=n).contains(&v)));
    axis.push(n);
    axis.sort_unstable();
    axis.dedup();
    axis
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub band: usize,
    pub samples: usize,
    pub rmse: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub scenario_id: String,
    pub scheme: Scheme,
    pub rank: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn get(&self, band: usize, samples: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.band == band && c.samples == samples)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# schema={SWEEP_SCHEMA}\n");
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario_id", "scheme", "rank", "band", "samples", "rmse", "flag"])?;
        for c in &self.cells {
            w.write_record([
                self.scenario_id.clone(),
                self.scheme.to_string(),
                self.rank.to_string(),
                c.band.to_string(),
                c.samples.to_string(),
                c.rmse.map(|v| format!("{v:?}")).unwrap_or_default(),
                c.flag.clone().unwrap_or_default(),
            ])?;
        }
        out.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"));
        Ok(out)
    }

    pub fn from_csv(text: &str, source_name: &str) -> Result<Self> {
        let body = strip_schema(text, SWEEP_SCHEMA, source_name)?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut result: Option<SweepResult> = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let at = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::parse(source_name, format!("row {}: bad {what}", line + 1));
            let scheme: Scheme = at(1).parse().map_err(|_| bad("scheme"))?;
            let rank: usize = at(2).parse().map_err(|_| bad("rank"))?;
            let cell = SweepCell {
                band: at(3).parse().map_err(|_| bad("band"))?,
                samples: at(4).parse().map_err(|_| bad("samples"))?,
                rmse: parse_opt_f64(at(5)).map_err(|_| bad("rmse"))?,
                flag: non_empty(at(6)),
            };
            let r = result.get_or_insert_with(|| SweepResult {
                scenario_id: at(0).to_string(),
                scheme,
                rank,
                cells: Vec::new(),
            });
            r.cells.push(cell);
        }
        result.ok_or_else(|| Error::parse(source_name, "empty sweep"))
    }
}

fn strip_schema<'t>(text: &'t str, schema: &str, source_name: &str) -> Result<&'t str> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let tag = first.trim().strip_prefix("# schema=").map(|s| s.split_whitespace().next().unwrap_or(""));
    if tag != Some(schema) {
        return Err(Error::parse(source_name, format!("expected `# schema={schema}` header")));
    }
    Ok(rest)
}

fn parse_opt_f64(s: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn parse_opt_usize(s: &str) -> std::result::Result<Option<usize>, std::num::ParseIntError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn non_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario_id: String,
    pub rank: usize,
    pub s_min_gft: Option<usize>,
    pub s_min_laplacian: Option<usize>,
    pub s_min_cs_pca: Option<usize>,
    pub s_min_cs_dct: Option<usize>,
    pub r_min_gft: Option<usize>,
    pub flags: Vec<String>,
}

impl ComparisonRow {
    pub fn s_min(&self, scheme: Scheme) -> Option<usize> {
        match scheme {
            Scheme::Gft => self.s_min_gft,
            Scheme::Laplacian => self.s_min_laplacian,
            Scheme::CsPca => self.s_min_cs_pca,
            Scheme::CsDct => self.s_min_cs_dct,
        }
    }

    fn slot(&mut self, scheme: Scheme) -> &mut Option<usize> {
        match scheme {
            Scheme::Gft => &mut self.s_min_gft,
            Scheme::Laplacian => &mut self.s_min_laplacian,
            Scheme::CsPca => &mut self.s_min_cs_pca,
            Scheme::CsDct => &mut self.s_min_cs_dct,
        }
    }
}

/// `⌈(N + K − r) r / K⌉`, the degrees-of-freedom count of an `N × K` rank-`r`
/// matrix per time step.
pub fn low_rank_sample_bound(n: usize, k: usize, r: usize) -> usize {
    ((n + k).saturating_sub(r) * r).div_ceil(k.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMean {
    pub rank: usize,
    pub count: usize,
    pub gft: Option<f64>,
    pub laplacian: Option<f64>,
    pub cs_pca: Option<f64>,
    pub cs_dct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub threshold: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Arithmetic mean of each scheme's `s_min` over scenarios of equal rank.
    pub fn by_rank(&self) -> Vec<RankMean> {
        let mut ranks: Vec<usize> = self.rows.iter().map(|r| r.rank).collect();
        ranks.sort_unstable();
        ranks.dedup();
        ranks
            .into_iter()
            .map(|rank| {
                let rows: Vec<&ComparisonRow> = self.rows.iter().filter(|r| r.rank == rank).collect();
                let mean = |scheme: Scheme| {
                    let v: Vec<f64> = rows.iter().filter_map(|r| r.s_min(scheme)).map(|v| v as f64).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                };
                RankMean {
                    rank,
                    count: rows.len(),
                    gft: mean(Scheme::Gft),
                    laplacian: mean(Scheme::Laplacian),
                    cs_pca: mean(Scheme::CsPca),
                    cs_dct: mean(Scheme::CsDct),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# schema={COMPARISON_SCHEMA} threshold={:?}\n", self.threshold);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scenario_id",
            "rank",
            "s_min_gft",
            "s_min_laplacian",
            "s_min_cs_pca",
            "s_min_cs_dct",
            "r_min_gft",
            "flags",
        ])?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.scenario_id.clone(),
                r.rank.to_string(),
                opt(r.s_min_gft),
                opt(r.s_min_laplacian),
                opt(r.s_min_cs_pca),
                opt(r.s_min_cs_dct),
                opt(r.r_min_gft),
                r.flags.join(";"),
            ])?;
        }
        out.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"));
        Ok(out)
    }

    pub fn from_csv(text: &str, source_name: &str) -> Result<Self> {
        let body = strip_schema(text, COMPARISON_SCHEMA, source_name)?;
        let header = text.lines().next().unwrap_or("");
        let threshold = header
            .split_whitespace()
            .find_map(|t| t.strip_prefix("threshold="))
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(source_name, "missing threshold in header"))?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let at = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::parse(source_name, format!("row {}: bad {what}", line + 1));
            rows.push(ComparisonRow {
                scenario_id: at(0).to_string(),
                rank: at(1).parse().map_err(|_| bad("rank"))?,
                s_min_gft: parse_opt_usize(at(2)).map_err(|_| bad("s_min_gft"))?,
                s_min_laplacian: parse_opt_usize(at(3)).map_err(|_| bad("s_min_laplacian"))?,
                s_min_cs_pca: parse_opt_usize(at(4)).map_err(|_| bad("s_min_cs_pca"))?,
                s_min_cs_dct: parse_opt_usize(at(5)).map_err(|_| bad("s_min_cs_dct"))?,
                r_min_gft: parse_opt_usize(at(6)).map_err(|_| bad("r_min_gft"))?,
                flags: at(7).split(';').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            });
        }
        Ok(ComparisonTable { threshold, rows })
    }
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub threshold: f64,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub jobs: usize,
    pub solver: L1Solver,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            threshold: DEFAULT_THRESHOLD,
            schemes: Scheme::ALL.to_vec(),
            seed: 0,
            jobs: 1,
            solver: L1Solver::default(),
        }
    }
}

/// Seed of the CS sensor order for the `index`-th scenario.
pub fn scenario_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

fn compare_one(
    index: usize,
    id: &str,
    x: &SignalMatrix,
    laplacian: Option<&LaplacianSpectrum>,
    opts: &CompareOptions,
) -> ComparisonRow {
    let mut row = ComparisonRow {
        scenario_id: id.to_string(),
        rank: x.rank(),
        s_min_gft: None,
        s_min_laplacian: None,
        s_min_cs_pca: None,
        s_min_cs_dct: None,
        r_min_gft: None,
        flags: Vec::new(),
    };
    let ev = match Evaluator::new(id, x, laplacian, scenario_seed(opts.seed, index)) {
        Ok(ev) => ev.with_solver(opts.solver),
        Err(e) => {
            row.flags.push(format!("error:{e}"));
            return row;
        }
    };
    for &scheme in &opts.schemes {
        match ev.min_sampling_size(scheme, opts.threshold) {
            Ok(m) => {
                *row.slot(scheme) = Some(m.s_min);
                if scheme == Scheme::Gft {
                    row.r_min_gft = m.r_min;
                }
                if !m.reachable {
                    row.flags.push(format!("{scheme}:unreachable"));
                }
            }
            Err(e) => row.flags.push(format!("{scheme}:error:{e}")),
        }
    }
    let bound = low_rank_sample_bound(x.node_count(), x.steps(), x.rank());
    for scheme in [Scheme::CsPca, Scheme::CsDct] {
        if row.s_min(scheme).is_some_and(|s| s < bound) {
            row.flags.push(format!("{scheme}:below_low_rank_bound"));
        }
    }
    row
}

/// Minimum sampling sizes for every scenario. Scenarios run on `jobs`
/// threads; rows keep the bank order. `progress` is called once per
/// finished scenario.
pub fn compare_schemes(
    bank: &[(String, SignalMatrix)],
    laplacian: Option<&LaplacianSpectrum>,
    opts: &CompareOptions,
    progress: &(dyn Fn(&ComparisonRow) + Sync),
) -> Result<ComparisonTable> {
    if bank.is_empty() {
        return Err(Error::InvalidArgument("empty scenario bank".into()));
    }
    if opts.threshold.is_nan() || opts.threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!("threshold {} must be positive", opts.threshold)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows = pool.install(|| {
        bank.par_iter()
            .enumerate()
            .map(|(i, (id, x))| {
                let row = compare_one(i, id, x, laplacian, opts);
                progress(&row);
                row
            })
            .collect()
    });
    Ok(ComparisonTable {
        threshold: opts.threshold,
        rows,
    })
}

/// `Σ_k |x̃_k|` per frequency under an orthonormal basis.
pub fn magnitude_profile(basis: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if basis.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "signal has {} rows, basis {}",
            x.nrows(),
            basis.nrows()
        )));
    }
    let coef = basis.tr_mul(x);
    Ok((0..coef.nrows()).map(|i| coef.row(i).iter().map(|v| v.abs()).sum()).collect())
}

/// Fraction of a profile's total mass in its first `r` entries (1 when the
/// profile is zero).
pub fn mass_within(profile: &[f64], r: usize) -> f64 {
    let total: f64 = profile.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    profile[..r.min(profile.len())].iter().sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyProfile {
    pub gft: Vec<f64>,
    pub laplacian: Option<Vec<f64>>,
    pub pca: Option<Vec<f64>>,
}

pub fn frequency_profile(
    x: &DMatrix<f64>,
    gft: &GftOperator,
    laplacian: Option<&LaplacianSpectrum>,
    pca: Option<&CsBasis>,
) -> Result<FrequencyProfile> {
    Ok(FrequencyProfile {
        gft: magnitude_profile(gft.basis(), x)?,
        laplacian: laplacian.map(|s| magnitude_profile(&s.eigenvectors, x)).transpose()?,
        pca: pca.map(|p| magnitude_profile(&p.matrix, x)).transpose()?,
    })
}

impl FrequencyProfile {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema={PROFILE_SCHEMA}\nfrequency,gft,laplacian,pca\n");
        let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|p| format!("{:?}", p[i])).unwrap_or_default();
        for i in 0..self.gft.len() {
            let _ = writeln!(out, "{},{:?},{},{}", i + 1, self.gft[i], cell(&self.laplacian, i), cell(&self.pca, i));
        }
        out
    }

    pub fn from_csv(text: &str, source_name: &str) -> Result<Self> {
        let body = strip_schema(text, PROFILE_SCHEMA, source_name)?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let (mut gft, mut lap, mut pca) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = || Error::parse(source_name, format!("row {}: bad value", line + 1));
            gft.push(rec.get(1).unwrap_or("").parse::<f64>().map_err(|_| bad())?);
            lap.push(parse_opt_f64(rec.get(2).unwrap_or("")).map_err(|_| bad())?);
            pca.push(parse_opt_f64(rec.get(3).unwrap_or("")).map_err(|_| bad())?);
        }
        let collect = |v: Vec<Option<f64>>| -> Option<Vec<f64>> {
            if v.iter().all(Option::is_none) {
                None
            } else {
                v.into_iter().collect()
            }
        };
        Ok(FrequencyProfile {
            gft,
            laplacian: collect(lap),
            pca: collect(pca),
        })
    }
}

/// Squared norm of everything in `x` outside the span of `basis[:, band]`,
/// for orthonormal `basis`.
pub fn out_of_band_energy(basis: &DMatrix<f64>, x: &DMatrix<f64>, band: &[usize]) -> f64 {
    let coef = basis.tr_mul(x);
    (0..coef.nrows())
        .filter(|i| !band.contains(i))
        .map(|i| coef.row(i).norm_squared())
        .sum()
}

/// Largest `|FᵀF − I|` entry; kept here so reports can quote it.
pub fn orthogonality_defect(f: &DMatrix<f64>) -> f64 {
    linalg::orthogonality_defect(f)
}
