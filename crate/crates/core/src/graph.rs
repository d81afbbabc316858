//! Network representation and the symmetric normalized Laplacian.
//!
//! Edges keep their direction (it is the flow direction used by the transport
//! model in [`crate::dynsim`]); every spectral computation works on the
//! symmetrized weight matrix `W_ij = max(w(i→j), w(j→i))`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const GRAPH_SCHEMA: &str = "wdn-gft/graph/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Junction,
    Reservoir,
    Tank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Node {
            id: id.into(),
            kind,
        }
    }
}

fn unit_weight() -> f64 {
    1.0
}

/// Directed link `from → to` (flow direction), 0-based node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

impl Edge {
    pub fn new(from: usize, to: usize) -> Self {
        Edge {
            from,
            to,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Static network `G(V, A)` with typed nodes and weighted directed links.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl NetworkGraph {
    /// Validates the node and edge lists. Parallel edges with the same
    /// direction are merged by summing their weights.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Degenerate("graph has no nodes".into()));
        }
        let mut seen = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if seen.insert(node.id.as_str(), i).is_some() {
                return Err(Error::DuplicateNode(node.id.clone()));
            }
        }
        let n = nodes.len();
        let mut merged: Vec<Edge> = Vec::with_capacity(edges.len());
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, edge) in edges.into_iter().enumerate() {
            for index in [edge.from, edge.to] {
                if index >= n {
                    return Err(Error::NodeOutOfRange {
                        edge: e,
                        index,
                        node_count: n,
                    });
                }
            }
            if edge.from == edge.to {
                return Err(Error::SelfLoop(e));
            }
            if !(edge.weight.is_finite() && edge.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "edge {e} has weight {}, expected a finite nonnegative value",
                    edge.weight
                )));
            }
            match slot.get(&(edge.from, edge.to)) {
                Some(&k) => merged[k].weight += edge.weight,
                None => {
                    slot.insert((edge.from, edge.to), merged.len());
                    merged.push(edge);
                }
            }
        }
        Ok(NetworkGraph {
            nodes,
            edges: merged,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::parse(source_name, e.to_string()))?;
        if let Some(schema) = &file.schema {
            if schema != GRAPH_SCHEMA {
                return Err(Error::parse(
                    source_name,
                    format!("unsupported schema `{schema}`, expected `{GRAPH_SCHEMA}`"),
                ));
            }
        }
        NetworkGraph::new(file.nodes, file.edges)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            schema: Some(GRAPH_SCHEMA.to_string()),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }

    /// Symmetrized weight matrix `W`.
    pub fn symmetric_weights(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut w: DMatrix<f64> = DMatrix::zeros(n, n);
        for e in &self.edges {
            let v = w[(e.from, e.to)].max(e.weight);
            w[(e.from, e.to)] = v;
            w[(e.to, e.from)] = v;
        }
        w
    }

    /// Outgoing (downstream) links of every node as `(target, weight)`.
    pub fn downstream(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.node_count()];
        for e in &self.edges {
            out[e.from].push((e.to, e.weight));
        }
        out
    }
}

/// Reads a graph file (see `docs/formats.md`).
pub fn load_graph(path: impl AsRef<Path>) -> Result<NetworkGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    NetworkGraph::from_json_str(&text, &path.display().to_string())
}

/// `D^{-1/2} (D − W) D^{-1/2}` on the symmetrized weights.
pub fn normalized_laplacian(g: &NetworkGraph) -> Result<DMatrix<f64>> {
    let w = g.symmetric_weights();
    let n = g.node_count();
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedNode(g.nodes[i].id.clone()));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let base = if i == j { degree[i] - w[(i, j)] } else { -w[(i, j)] };
            l[(i, j)] = inv_sqrt[i] * base * inv_sqrt[j];
        }
    }
    // Exact symmetry regardless of evaluation order.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (l[(i, j)] + l[(j, i)]);
            l[(i, j)] = avg;
            l[(j, i)] = avg;
        }
    }
    Ok(l)
}

/// Ascending eigenvalues and orthonormal eigenvectors of a normalized Laplacian.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, first nonzero entry of each made positive.
    pub eigenvectors: DMatrix<f64>,
}

impl LaplacianSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

pub fn laplacian_spectrum(l: &DMatrix<f64>) -> Result<LaplacianSpectrum> {
    if !l.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "Laplacian must be square, got {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    linalg::ensure_finite(l, "Laplacian")?;
    let asym = linalg::max_abs(&(l - l.transpose()));
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (l + l.transpose()) * 0.5;
    let (eigenvalues, mut eigenvectors) = linalg::symmetric_eigen_ascending(&sym);
    for mut col in eigenvectors.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    Ok(LaplacianSpectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Parameters of the layered synthetic distribution network used as the
/// default stand-in for a hydraulic model: reservoirs feed layer 1, every link
/// points from layer `p` to layer `p + 1`, and each layer holds one or two
/// junctions, so the undirected view contains loops.
#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub junctions: usize,
    pub reservoirs: usize,
    pub layers: usize,
    /// Probability of an extra cross link between consecutive two-node layers.
    pub cross_link_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticNetwork {
    fn default() -> Self {
        SyntheticNetwork {
            junctions: 100,
            reservoirs: 2,
            layers: 60,
            cross_link_probability: 0.35,
            seed: 2024,
        }
    }
}

impl SyntheticNetwork {
    pub fn build(&self) -> Result<NetworkGraph> {
        let (j, l) = (self.junctions, self.layers);
        if l == 0 || j < l || j > 2 * l || self.reservoirs == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot lay out {j} junctions on {l} layers of width 1-2 with {} reservoirs",
                self.reservoirs
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut doubled: Vec<usize> = (1..=l).collect();
        doubled.shuffle(&mut rng);
        let doubled: std::collections::BTreeSet<usize> = doubled.into_iter().take(j - l).collect();

        let mut nodes = Vec::with_capacity(j + self.reservoirs);
        let mut layer_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in 0..self.reservoirs {
            layer_members.entry(0).or_default().push(nodes.len());
            nodes.push(Node::new(format!("R{}", r + 1), NodeKind::Reservoir));
        }
        let mut label = 1;
        for layer in 1..=l {
            let width = if doubled.contains(&layer) { 2 } else { 1 };
            for _ in 0..width {
                layer_members.entry(layer).or_default().push(nodes.len());
                nodes.push(Node::new(format!("J{label}"), NodeKind::Junction));
                label += 1;
            }
        }

        let mut edges = Vec::new();
        for layer in 0..l {
            let up = &layer_members[&layer];
            let down = &layer_members[&(layer + 1)];
            let mut linked = std::collections::BTreeSet::new();
            for (i, &u) in up.iter().enumerate() {
                let v = down[i.min(down.len() - 1)];
                linked.insert((u, v));
            }
            for (i, &v) in down.iter().enumerate() {
                let u = up[i.min(up.len() - 1)];
                linked.insert((u, v));
            }
            if layer > 0 && up.len() == 2 && down.len() == 2 {
                for &u in up {
                    for &v in down {
                        if !linked.contains(&(u, v))
                            && rng.random::<f64>() < self.cross_link_probability
                        {
                            linked.insert((u, v));
                        }
                    }
                }
            }
            edges.extend(linked.into_iter().map(|(u, v)| Edge::new(u, v)));
        }
        NetworkGraph::new(nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> NetworkGraph {
        let nodes = (0..n).map(|i| Node::new(format!("n{i}"), NodeKind::Junction)).collect();
        let edges = (1..n).map(|i| Edge::new(i - 1, i)).collect();
        NetworkGraph::new(nodes, edges).unwrap()
    }

    #[test]
    fn loads_three_node_path() {
        let text = r#"{"nodes":[{"id":"a","kind":"junction"},{"id":"b","kind":"junction"},{"id":"c","kind":"reservoir"}],
                       "edges":[{"from":0,"to":1},{"from":1,"to":2}]}"#;
        let g = NetworkGraph::from_json_str(text, "inline").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0].weight, 1.0);
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let text = r#"{"nodes":[{"id":"a","kind":"junction"},{"id":"b","kind":"junction"},{"id":"c","kind":"junction"}],
                       "edges":[{"from":0,"to":5}]}"#;
        let err = NetworkGraph::from_json_str(text, "inline").unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { index: 5, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_and_self_loops() {
        let dup = vec![Node::new("a", NodeKind::Junction), Node::new("a", NodeKind::Tank)];
        assert!(matches!(NetworkGraph::new(dup, vec![]), Err(Error::DuplicateNode(_))));
        let nodes = vec![Node::new("a", NodeKind::Junction), Node::new("b", NodeKind::Junction)];
        assert!(matches!(
            NetworkGraph::new(nodes, vec![Edge::new(1, 1)]),
            Err(Error::SelfLoop(0))
        ));
    }

    #[test]
    fn merges_parallel_edges() {
        let nodes = vec![Node::new("a", NodeKind::Junction), Node::new("b", NodeKind::Junction)];
        let edges = vec![
            Edge { from: 0, to: 1, weight: 0.5 },
            Edge { from: 0, to: 1, weight: 1.5 },
            Edge::new(1, 0),
        ];
        let g = NetworkGraph::new(nodes, edges).unwrap();
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edges()[0].weight, 2.0);
        // Symmetrization takes the larger direction.
        assert_eq!(g.symmetric_weights()[(1, 0)], 2.0);
    }

    #[test]
    fn json_round_trip() {
        let g = SyntheticNetwork::default().build().unwrap();
        let back = NetworkGraph::from_json_str(&g.to_json_string(), "mem").unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn single_edge_laplacian() {
        let l = normalized_laplacian(&path(2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!(linalg::max_abs(&(l.clone() - expected)) < 1e-15);
        let spec = laplacian_spectrum(&l).unwrap();
        assert!(spec.eigenvalues[0].abs() < 1e-12);
        assert!((spec.eigenvalues[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_is_rejected() {
        let nodes = vec![
            Node::new("a", NodeKind::Junction),
            Node::new("b", NodeKind::Junction),
            Node::new("lonely", NodeKind::Junction),
        ];
        let g = NetworkGraph::new(nodes, vec![Edge::new(0, 1)]).unwrap();
        assert!(matches!(normalized_laplacian(&g), Err(Error::IsolatedNode(id)) if id == "lonely"));
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(laplacian_spectrum(&l), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn identity_spectrum_reconstructs() {
        let spec = laplacian_spectrum(&DMatrix::identity(4, 4)).unwrap();
        assert!(spec.eigenvalues.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let recon = &spec.eigenvectors * spec.eigenvectors.transpose();
        assert!(linalg::max_abs(&(recon - DMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn synthetic_network_matches_layout() {
        let g = SyntheticNetwork::default().build().unwrap();
        assert_eq!(g.node_count(), 102);
        let reservoirs = g.nodes().iter().filter(|n| n.kind == NodeKind::Reservoir).count();
        assert_eq!(reservoirs, 2);
        assert!(normalized_laplacian(&g).is_ok());
    }
}
