//! Dynamic signal matrices: a linear transport generator on the network and
//! CSV ingestion of externally simulated data.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, NodeKind};
use crate::linalg;

/// Relative singular-value cut used for the numerical rank.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Three hours split into 168 steps.
pub const DEFAULT_TIMESTEP_SECONDS: f64 = 10_800.0 / 168.0;

pub const BANK_SCHEMA: &str = "wdn-gft/scenario-bank/v1";

/// Number of singular values above `tol · σ_max`; 0 for the zero matrix.
pub fn numerical_rank(x: &DMatrix<f64>, tol: f64) -> Result<usize> {
    linalg::ensure_finite(x, "signal")?;
    let sv = linalg::singular_values(x);
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * top).count())
}

/// `N × K` node-by-time signal with its numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    data: DMatrix<f64>,
    node_ids: Vec<String>,
    timestep_seconds: f64,
    rank: usize,
    rank_tolerance: f64,
}

impl SignalMatrix {
    pub fn new(data: DMatrix<f64>, node_ids: Vec<String>, timestep_seconds: f64) -> Result<Self> {
        Self::with_rank_tolerance(data, node_ids, timestep_seconds, DEFAULT_RANK_TOLERANCE)
    }

    pub fn with_rank_tolerance(
        data: DMatrix<f64>,
        node_ids: Vec<String>,
        timestep_seconds: f64,
        rank_tolerance: f64,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Degenerate(format!(
                "signal must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if node_ids.len() != data.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} node ids for {} signal rows",
                node_ids.len(),
                data.nrows()
            )));
        }
        if !(timestep_seconds.is_finite() && timestep_seconds > 0.0) {
            return Err(Error::InvalidArgument(format!("timestep {timestep_seconds} s")));
        }
        if !(rank_tolerance.is_finite() && rank_tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("rank tolerance {rank_tolerance}")));
        }
        let rank = numerical_rank(&data, rank_tolerance)?;
        Ok(SignalMatrix {
            data,
            node_ids,
            timestep_seconds,
            rank,
            rank_tolerance,
        })
    }

    /// Convenience constructor with generated ids `n0, n1, …`.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let ids = (0..data.nrows()).map(|i| format!("n{i}")).collect();
        Self::new(data, ids, DEFAULT_TIMESTEP_SECONDS)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn steps(&self) -> usize {
        self.data.ncols()
    }

    pub fn timestep_seconds(&self) -> f64 {
        self.timestep_seconds
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    /// All-zero data (rank 0): no operator can be built from it.
    pub fn is_degenerate(&self) -> bool {
        self.rank == 0
    }

    pub fn checksum(&self) -> String {
        linalg::matrix_checksum(&self.data)
    }
}

/// One contaminant scenario for [`simulate_dynamics`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub injection_node: usize,
    /// `(time step, amount)` pairs; repeated steps add up.
    pub injection_profile: Vec<(usize, f64)>,
    /// Fraction lost per step, in `[0, 1)`.
    pub decay_rate: f64,
    /// Fraction of each node's content routed downstream per step, in `(0, 1]`.
    pub transport_weight: f64,
    pub steps: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self, g: &NetworkGraph) -> Result<()> {
        if self.injection_node >= g.node_count() {
            return Err(Error::InvalidArgument(format!(
                "injection node {} out of range for {} nodes",
                self.injection_node,
                g.node_count()
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("scenario needs at least one step".into()));
        }
        if !(0.0..1.0).contains(&self.decay_rate) {
            return Err(Error::InvalidArgument(format!("decay rate {} not in [0, 1)", self.decay_rate)));
        }
        if !(self.transport_weight > 0.0 && self.transport_weight <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "transport weight {} not in (0, 1]",
                self.transport_weight
            )));
        }
        for &(t, amount) in &self.injection_profile {
            if t >= self.steps {
                return Err(Error::InvalidArgument(format!(
                    "injection at step {t} beyond the {} simulated steps",
                    self.steps
                )));
            }
            if !(amount.is_finite() && amount >= 0.0) {
                return Err(Error::InvalidArgument(format!("injection amount {amount}")));
            }
        }
        Ok(())
    }
}

/// Runs `x_k = T x_{k−1} + b_k` from `x_{−1} = 0`.
///
/// `T` routes `transport_weight` of every node's content to its downstream
/// neighbours in proportion to the link weights and keeps the rest in place;
/// nodes without outgoing links keep everything, so with no decay the
/// junction dynamics conserve mass. Everything is then scaled by
/// `1 − decay_rate`. Reservoirs are boundary nodes: their value is pinned to
/// the injection profile (zero when they are not the injection node) and they
/// receive no inflow.
pub fn simulate_dynamics(g: &NetworkGraph, cfg: &ScenarioConfig) -> Result<SignalMatrix> {
    cfg.validate(g)?;
    let n = g.node_count();
    let downstream = g.downstream();
    let out_weight: Vec<f64> = downstream
        .iter()
        .map(|links| links.iter().map(|(_, w)| w).sum())
        .collect();
    let is_reservoir: Vec<bool> = g.nodes().iter().map(|nd| nd.kind == NodeKind::Reservoir).collect();

    let mut injection = vec![0.0; cfg.steps];
    for &(t, amount) in &cfg.injection_profile {
        injection[t] += amount;
    }

    let keep = 1.0 - cfg.transport_weight;
    let survive = 1.0 - cfg.decay_rate;
    let mut data = DMatrix::zeros(n, cfg.steps);
    let mut prev = vec![0.0; n];
    let mut next = vec![0.0; n];
    for (k, &dose) in injection.iter().enumerate() {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (node, &value) in prev.iter().enumerate() {
            if value == 0.0 {
                continue;
            }
            if out_weight[node] > 0.0 {
                let moving = if is_reservoir[node] { value } else { cfg.transport_weight * value };
                for &(to, w) in &downstream[node] {
                    next[to] += moving * w / out_weight[node];
                }
                if !is_reservoir[node] {
                    next[node] += keep * value;
                }
            } else if !is_reservoir[node] {
                next[node] += value;
            }
        }
        for (node, v) in next.iter_mut().enumerate() {
            *v = if is_reservoir[node] { 0.0 } else { *v * survive };
        }
        next[cfg.injection_node] += dose;
        if let Some(node) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state of node {node} at step {k}")));
        }
        data.column_mut(k).copy_from_slice(&next);
        std::mem::swap(&mut prev, &mut next);
    }
    SignalMatrix::new(data, g.node_ids(), DEFAULT_TIMESTEP_SECONDS)
}

/// Length of the longest downstream path from every node, or `None` when the
/// directed graph has a cycle.
pub fn downstream_depth(g: &NetworkGraph) -> Option<Vec<usize>> {
    let n = g.node_count();
    let downstream = g.downstream();
    let mut indegree = vec![0usize; n];
    for links in &downstream {
        for &(to, _) in links {
            indegree[to] += 1;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(u) = stack.pop() {
        order.push(u);
        for &(to, _) in &downstream[u] {
            indegree[to] -= 1;
            if indegree[to] == 0 {
                stack.push(to);
            }
        }
    }
    if order.len() != n {
        return None;
    }
    let mut depth = vec![0usize; n];
    for &u in order.iter().rev() {
        depth[u] = downstream[u].iter().map(|&(to, _)| depth[to] + 1).max().unwrap_or(0);
    }
    Some(depth)
}

/// Randomized scenario bank: short injections (1 to 3 steps) at nodes in the
/// upstream half of the network, nearly lossless advection.
pub fn default_scenario_bank(
    g: &NetworkGraph,
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<NamedScenario>> {
    let depth = downstream_depth(g);
    let candidates: Vec<usize> = match &depth {
        Some(d) => {
            let deepest = d.iter().copied().max().unwrap_or(0);
            (0..g.node_count()).filter(|&i| 2 * d[i] >= deepest).collect()
        }
        None => (0..g.node_count()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_start = (steps / 14).max(1);
    let mut bank = Vec::with_capacity(count);
    for i in 0..count {
        let scenario_seed = rng.next_u64();
        let mut local = ChaCha8Rng::seed_from_u64(scenario_seed);
        let node = candidates[local.random_range(0..candidates.len())];
        let start = local.random_range(0..last_start).min(steps - 1);
        let duration = local.random_range(1..=3usize);
        let injection_profile = (start..(start + duration).min(steps))
            .map(|t| (t, local.random_range(0.5..5.0)))
            .collect();
        let transport_weight = if local.random_bool(0.5) {
            1.0
        } else {
            local.random_range(0.9..1.0)
        };
        let cfg = ScenarioConfig {
            injection_node: node,
            injection_profile,
            decay_rate: local.random_range(0.0..0.01),
            transport_weight,
            steps,
            seed: scenario_seed,
        };
        bank.push(NamedScenario {
            id: format!("scenario_{i:03}"),
            config: cfg,
        });
    }
    Ok(bank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub id: String,
    pub config: ScenarioConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRecord {
    id: String,
    injection_node: String,
    injection_profile: Vec<(usize, f64)>,
    decay_rate: f64,
    transport_weight: f64,
    steps: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    schema: String,
    scenarios: Vec<ScenarioRecord>,
}

/// Serializes a bank with node ids in place of indices.
pub fn bank_to_json(g: &NetworkGraph, bank: &[NamedScenario]) -> String {
    let file = BankFile {
        schema: BANK_SCHEMA.to_string(),
        scenarios: bank
            .iter()
            .map(|s| ScenarioRecord {
                id: s.id.clone(),
                injection_node: g.nodes()[s.config.injection_node].id.clone(),
                injection_profile: s.config.injection_profile.clone(),
                decay_rate: s.config.decay_rate,
                transport_weight: s.config.transport_weight,
                steps: s.config.steps,
                seed: s.config.seed,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("bank serialization cannot fail")
}

pub fn bank_from_json(g: &NetworkGraph, text: &str, source_name: &str) -> Result<Vec<NamedScenario>> {
    let file: BankFile = serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.to_string()))?;
    if file.schema != BANK_SCHEMA {
        return Err(Error::parse(
            source_name,
            format!("unsupported schema `{}`, expected `{BANK_SCHEMA}`", file.schema),
        ));
    }
    file.scenarios
        .into_iter()
        .map(|rec| {
            let node = g.index_of(&rec.injection_node).ok_or_else(|| {
                Error::parse(source_name, format!("scenario {}: unknown node `{}`", rec.id, rec.injection_node))
            })?;
            let config = ScenarioConfig {
                injection_node: node,
                injection_profile: rec.injection_profile,
                decay_rate: rec.decay_rate,
                transport_weight: rec.transport_weight,
                steps: rec.steps,
                seed: rec.seed,
            };
            config.validate(g)?;
            Ok(NamedScenario { id: rec.id, config })
        })
        .collect()
}

/// Writes one row per node and one column per step, optionally prefixed by
/// the node id.
pub fn signal_to_csv(x: &SignalMatrix, with_ids: bool) -> String {
    let mut out = String::new();
    for (i, id) in x.node_ids().iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(x.steps() + 1);
        if with_ids {
            fields.push(id.clone());
        }
        fields.extend(x.data().row(i).iter().map(|v| format!("{v:?}")));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn save_signal_csv(path: impl AsRef<Path>, x: &SignalMatrix, with_ids: bool) -> Result<()> {
    fs::write(path, signal_to_csv(x, with_ids))?;
    Ok(())
}

fn parse_rows(reader: impl Read, source_name: &str, with_ids: bool) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let offset = usize::from(with_ids);
        if with_ids {
            ids.push(record.get(0).unwrap_or_default().to_string());
        }
        let values = record
            .iter()
            .skip(offset)
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::parse(
                        source_name,
                        format!("row {}, column {}: `{cell}` is not a number", r + 1, c + 1 + offset),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    source_name,
                    format!("row {} has {} values, expected {w}", r + 1, values.len()),
                ))
            }
            _ => {}
        }
        rows.push(values);
    }
    let k = width.unwrap_or(0);
    let data = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    Ok((ids, data))
}

/// Headerless signal CSV; `node_ids` names the rows.
pub fn load_signal_csv(path: impl AsRef<Path>, node_ids: &[String]) -> Result<SignalMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    signal_from_reader(file, &path.display().to_string(), Some(node_ids))
}

/// Signal CSV whose first column holds the node ids.
pub fn load_signal_csv_with_ids(path: impl AsRef<Path>) -> Result<SignalMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    signal_from_reader(file, &path.display().to_string(), None)
}

pub fn signal_from_reader(reader: impl Read, source_name: &str, node_ids: Option<&[String]>) -> Result<SignalMatrix> {
    let (ids, data) = parse_rows(reader, source_name, node_ids.is_none())?;
    let ids = match node_ids {
        Some(given) => {
            if given.len() != data.nrows() {
                return Err(Error::parse(
                    source_name,
                    format!("{} rows but {} node ids", data.nrows(), given.len()),
                ));
            }
            given.to_vec()
        }
        None => ids,
    };
    if let Err(Error::NonFinite(what)) = linalg::ensure_finite(&data, "signal") {
        return Err(Error::parse(source_name, format!("non-finite {what}")));
    }
    SignalMatrix::new(data, ids, DEFAULT_TIMESTEP_SECONDS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Node, SyntheticNetwork};

    fn chain(n: usize) -> NetworkGraph {
        let nodes = (0..n).map(|i| Node::new(format!("j{i}"), NodeKind::Junction)).collect();
        let edges = (1..n).map(|i| Edge::new(i - 1, i)).collect();
        NetworkGraph::new(nodes, edges).unwrap()
    }

    fn cfg(node: usize, profile: Vec<(usize, f64)>, steps: usize) -> ScenarioConfig {
        ScenarioConfig {
            injection_node: node,
            injection_profile: profile,
            decay_rate: 0.0,
            transport_weight: 1.0,
            steps,
            seed: 0,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4), 1e-10).unwrap(), 0);
        let u = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let v = DMatrix::from_column_slice(4, 1, &[0.3, 1.0, 2.0, -1.0]);
        assert_eq!(numerical_rank(&(u * v.transpose()), 1e-10).unwrap(), 1);
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::INFINITY;
        assert!(matches!(numerical_rank(&bad, 1e-10), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_injection_is_degenerate() {
        let x = simulate_dynamics(&chain(4), &cfg(0, vec![], 5)).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        assert_eq!(x.rank(), 0);
        assert!(x.is_degenerate());
    }

    #[test]
    fn single_step_unit_injection() {
        let x = simulate_dynamics(&chain(4), &cfg(0, vec![(0, 1.0)], 1)).unwrap();
        assert_eq!(x.data().column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pulse_advects_down_a_chain() {
        let x = simulate_dynamics(&chain(4), &cfg(0, vec![(0, 2.0)], 5)).unwrap();
        // One node per step, then parked at the sink.
        for k in 0..5 {
            let pos = k.min(3);
            assert_eq!(x.data()[(pos, k)], 2.0);
            assert_eq!(x.data().column(k).sum(), 2.0);
        }
        assert_eq!(x.rank(), 4);
    }

    #[test]
    fn invalid_injection_node() {
        let err = simulate_dynamics(&chain(3), &cfg(7, vec![(0, 1.0)], 2)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn reservoir_is_pinned_to_profile() {
        let nodes = vec![
            Node::new("R", NodeKind::Reservoir),
            Node::new("a", NodeKind::Junction),
            Node::new("b", NodeKind::Junction),
        ];
        let g = NetworkGraph::new(nodes, vec![Edge::new(0, 1), Edge::new(1, 2)]).unwrap();
        let x = simulate_dynamics(&g, &cfg(0, vec![(0, 1.0), (1, 1.0)], 4)).unwrap();
        assert_eq!(x.data().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.data().row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn csv_examples() {
        let x = signal_from_reader("1,2\n2,4\n".as_bytes(), "mem", Some(&["a".into(), "b".into()])).unwrap();
        assert_eq!(x.rank(), 1);
        let x = signal_from_reader(
            "1,0,0\n0,1,0\n0,0,1\n".as_bytes(),
            "mem",
            Some(&["a".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        assert_eq!(x.rank(), 3);
        let err = signal_from_reader("1,2\n3,abc\n".as_bytes(), "mem", Some(&["a".into(), "b".into()])).unwrap_err();
        assert!(err.to_string().contains("row 2, column 2"), "{err}");
        let err = signal_from_reader("1,2\n3\n".as_bytes(), "mem", Some(&["a".into(), "b".into()])).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        let err = signal_from_reader("1,2\n".as_bytes(), "mem", Some(&["a".into(), "b".into()])).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn csv_with_ids_round_trip() {
        let g = chain(3);
        let x = simulate_dynamics(&g, &cfg(0, vec![(0, 0.1), (1, 1.0 / 3.0)], 4)).unwrap();
        let text = signal_to_csv(&x, true);
        let back = signal_from_reader(text.as_bytes(), "mem", None).unwrap();
        assert_eq!(back.node_ids(), x.node_ids());
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn bank_round_trip() {
        let g = SyntheticNetwork::default().build().unwrap();
        let bank = default_scenario_bank(&g, 5, 168, 7).unwrap();
        let text = bank_to_json(&g, &bank);
        assert_eq!(bank_from_json(&g, &text, "mem").unwrap(), bank);
    }

    #[test]
    fn depth_of_cycle_is_none() {
        let nodes = (0..3).map(|i| Node::new(format!("c{i}"), NodeKind::Junction)).collect();
        let g = NetworkGraph::new(nodes, vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(2, 0)]).unwrap();
        assert!(downstream_depth(&g).is_none());
        assert_eq!(downstream_depth(&chain(4)).unwrap(), vec![3, 2, 1, 0]);
    }
}
