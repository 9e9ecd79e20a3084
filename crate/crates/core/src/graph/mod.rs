//! Graphs, normalized Laplacians, grids, synthetic filter tasks and datasets.

mod dataset;
mod filters;
mod synthetic;

pub use dataset::{load_node_dataset, random_split, stochastic_block_model, write_node_dataset, NodeDataset, Split};
pub use filters::{FilterKind, FilterSpec};
pub use synthetic::{make_synthetic_task, SignalPair, SyntheticTask};

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("edge ({i}, {j}) references a node outside 0..{n}")]
    NodeOutOfRange { i: usize, j: usize, n: usize },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Inconsistent { path: PathBuf, message: String },
    #[error("split needs at least 5 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("features have {rows} rows for {n} nodes")]
    FeatureRows { rows: usize, n: usize },
    #[error("{count} labels for {n} nodes")]
    LabelCount { count: usize, n: usize },
    #[error("unknown filter `{0}` (expected lowpass, highpass, bandpass, bandrejection, comb, identity or zero)")]
    UnknownFilter(String),
    #[error("filter table must be non-empty with strictly increasing abscissae")]
    BadTable,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Undirected simple graph with optional node features and labels.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Option<DenseMatrix>,
    labels: Option<Vec<usize>>,
}

/// What [`SparseGraph::from_edges`] discarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl SparseGraph {
    /// Builds a graph from arbitrary pairs: orientation is normalized,
    /// duplicates are merged and self-loops dropped.
    pub fn from_edges(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, EdgeCleanup), GraphError> {
        let mut set = BTreeSet::new();
        let mut cleanup = EdgeCleanup::default();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange { i: a, j: b, n });
            }
            if a == b {
                cleanup.self_loops += 1;
            } else if !set.insert((a.min(b), a.max(b))) {
                cleanup.duplicates += 1;
            }
        }
        let graph = Self {
            n,
            edges: set.into_iter().collect(),
            features: None,
            labels: None,
        };
        Ok((graph, cleanup))
    }

    pub fn with_features(mut self, features: DenseMatrix) -> Result<Self, GraphError> {
        if features.rows() != self.n {
            return Err(GraphError::FeatureRows {
                rows: features.rows(),
                n: self.n,
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, GraphError> {
        if labels.len() != self.n {
            return Err(GraphError::LabelCount {
                count: labels.len(),
                n: self.n,
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> Option<&DenseMatrix> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// `max(label) + 1`, or 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Relabels node `v` as `perm[v]`, carrying features and labels along.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length");
        let (mut g, _) = Self::from_edges(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
            .expect("permutation keeps indices in range");
        let mut inverse = vec![0; self.n];
        for (v, &p) in perm.iter().enumerate() {
            inverse[p] = v;
        }
        g.features = self.features.as_ref().map(|f| f.select_rows(&inverse));
        g.labels = self.labels.as_ref().map(|l| inverse.iter().map(|&v| l[v]).collect());
        g
    }
}

/// `L = I − D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes get `D^{-1/2} = 0`, so their row and column are those of
/// the identity. Both triangles are written from the same product, so the
/// result is exactly symmetric.
pub fn normalized_laplacian(g: &SparseGraph) -> DenseMatrix {
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut l = DenseMatrix::identity(g.n);
    for &(i, j) in &g.edges {
        let v = -(inv_sqrt[i] * inv_sqrt[j]);
        l[(i, j)] = v;
        l[(j, i)] = v;
    }
    l
}

/// 4-neighbour grid with `height × width` nodes in row-major order.
pub fn grid_graph(height: usize, width: usize) -> Result<SparseGraph, GraphError> {
    if height == 0 || width == 0 {
        return Err(GraphError::ZeroDimension { height, width });
    }
    let mut pairs = Vec::with_capacity(2 * height * width);
    for r in 0..height {
        for c in 0..width {
            let v = r * width + c;
            if c + 1 < width {
                pairs.push((v, v + 1));
            }
            if r + 1 < height {
                pairs.push((v, v + width));
            }
        }
    }
    let (g, _) = SparseGraph::from_edges(height * width, pairs)?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eig;

    #[test]
    fn p2_laplacian() {
        let (g, _) = SparseGraph::from_edges(2, [(0, 1)]).unwrap();
        let want = DenseMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(normalized_laplacian(&g), want);
    }

    #[test]
    fn k3_laplacian_and_spectrum() {
        let (g, _) = SparseGraph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let l = normalized_laplacian(&g);
        let want = DenseMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { -0.5 });
        assert!(l.max_abs_diff(&want) < 1e-15);
        let eig = symmetric_eig(&l).unwrap();
        for (got, want) in eig.eigenvalues().iter().zip([0.0, 1.5, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_is_identity_block() {
        let (g, _) = SparseGraph::from_edges(3, [(0, 1)]).unwrap();
        let want = DenseMatrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(normalized_laplacian(&g), want);
    }

    #[test]
    fn edge_cleanup_counts() {
        let (g, c) = SparseGraph::from_edges(3, [(0, 1), (1, 0), (2, 2), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(
            c,
            EdgeCleanup {
                self_loops: 1,
                duplicates: 1
            }
        );
        assert!(matches!(
            SparseGraph::from_edges(2, [(0, 2)]),
            Err(GraphError::NodeOutOfRange { n: 2, .. })
        ));
    }

    #[test]
    fn grid_shapes() {
        let g = grid_graph(2, 2).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (4, 4));
        assert!(g.degrees().iter().all(|&d| d == 2));
        let p = grid_graph(1, 3).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2)]);
        let big = grid_graph(100, 100).unwrap();
        assert_eq!((big.num_nodes(), big.num_edges()), (10000, 19800));
        assert!(grid_graph(0, 3).is_err());
    }

    #[test]
    fn permutation_carries_labels() {
        let (g, _) = SparseGraph::from_edges(3, [(0, 1)]).unwrap();
        let g = g.with_labels(vec![5, 6, 7]).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.edges(), &[(0, 2)]);
        assert_eq!(p.labels().unwrap(), &[6, 7, 5]);
        assert_eq!(g.num_classes(), 8);
    }
}
