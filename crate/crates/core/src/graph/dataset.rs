//! Plain-text node-classification datasets.
//!
//! A dataset directory holds `edges.txt` (two whitespace-separated 0-based
//! node ids per line), `features.csv` (one comma-separated row per node) and
//! `labels.txt` (one integer class id per line). Blank lines and lines
//! starting with `#` are skipped. The node count is the number of feature rows.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{EdgeCleanup, GraphError, SparseGraph};
use crate::linalg::DenseMatrix;
use crate::rng::{stream, Stream};

/// A loaded dataset plus what was cleaned from its edge list.
#[derive(Clone, Debug)]
pub struct NodeDataset {
    pub graph: SparseGraph,
    pub cleanup: EdgeCleanup,
}

/// Disjoint train / validation / test node indices, each sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            GraphError::MissingFile(path.to_path_buf())
        } else {
            GraphError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_node_dataset(dir: impl AsRef<Path>) -> Result<NodeDataset, GraphError> {
    let dir = dir.as_ref();
    let (fpath, epath, lpath) = (dir.join("features.csv"), dir.join("edges.txt"), dir.join("labels.txt"));

    let features_text = read(&fpath)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, text) in content_lines(&features_text) {
        let row = text
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(&fpath, line, format!("invalid number `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    &fpath,
                    line,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GraphError::Inconsistent {
            path: fpath,
            message: "no feature rows".into(),
        });
    }
    let n = rows.len();
    let features = DenseMatrix::from_rows(&rows)?;

    let edges_text = read(&epath)?;
    let mut pairs = Vec::new();
    for (line, text) in content_lines(&edges_text) {
        let ids: Vec<&str> = text.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(
                &epath,
                line,
                format!("expected 2 node ids, found {}", ids.len()),
            ));
        }
        let mut parsed = [0usize; 2];
        for (slot, t) in parsed.iter_mut().zip(&ids) {
            *slot = t
                .parse()
                .map_err(|_| parse_err(&epath, line, format!("invalid node id `{t}`")))?;
            if *slot >= n {
                return Err(parse_err(&epath, line, format!("node id {slot} >= node count {n}")));
            }
        }
        pairs.push((parsed[0], parsed[1]));
    }
    let (graph, cleanup) = SparseGraph::from_edges(n, pairs)?;

    let labels_text = read(&lpath)?;
    let mut labels = Vec::with_capacity(n);
    for (line, text) in content_lines(&labels_text) {
        labels.push(
            text.parse::<usize>()
                .map_err(|_| parse_err(&lpath, line, format!("invalid label `{text}`")))?,
        );
    }
    if labels.len() != n {
        return Err(GraphError::Inconsistent {
            path: lpath,
            message: format!("{} labels for {n} nodes", labels.len()),
        });
    }
    let graph = graph.with_features(features)?.with_labels(labels)?;
    Ok(NodeDataset { graph, cleanup })
}

/// Writes `graph` in the directory format read by [`load_node_dataset`].
pub fn write_node_dataset(dir: impl AsRef<Path>, graph: &SparseGraph) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    let io = |path: PathBuf| move |source| GraphError::Io { path, source };
    fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;

    let mut edges = String::new();
    for &(i, j) in graph.edges() {
        edges.push_str(&format!("{i} {j}\n"));
    }
    let mut features = String::new();
    if let Some(f) = graph.features() {
        for i in 0..f.rows() {
            let row: Vec<String> = f.row(i).iter().map(|v| format!("{v:?}")).collect();
            features.push_str(&row.join(","));
            features.push('\n');
        }
    }
    let mut labels = String::new();
    for l in graph.labels().unwrap_or(&[]) {
        labels.push_str(&format!("{l}\n"));
    }
    for (name, body) in [("edges.txt", edges), ("features.csv", features), ("labels.txt", labels)] {
        let path = dir.join(name);
        let mut file = fs::File::create(&path).map_err(io(path.clone()))?;
        file.write_all(body.as_bytes()).map_err(io(path.clone()))?;
    }
    Ok(())
}

/// Seeded 60 / 20 / 20 split: `⌊0.6n⌋` train, `⌊0.2n⌋` validation, rest test.
pub fn random_split(n: usize, seed: u64) -> Result<Split, GraphError> {
    if n < 5 {
        return Err(GraphError::TooFewNodes(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Split));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
    })
}

/// Stochastic block model with communities of the given sizes.
///
/// Each pair is linked with probability `p_in` inside a community and `p_out`
/// across. Node features have width `feature_dim`: a one-hot at a uniformly
/// random position plus `0.5` at the position of the node's community.
pub fn stochastic_block_model(
    sizes: &[usize],
    p_in: f64,
    p_out: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<SparseGraph, GraphError> {
    let community: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();
    let n = community.len();
    if feature_dim < sizes.len() {
        return Err(GraphError::Inconsistent {
            path: PathBuf::new(),
            message: format!("feature_dim {feature_dim} below community count {}", sizes.len()),
        });
    }
    let mut rng = stream(seed, Stream::Graph);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if community[i] == community[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                pairs.push((i, j));
            }
        }
    }
    let mut features = DenseMatrix::zeros(n, feature_dim);
    for (i, &c) in community.iter().enumerate() {
        let noise = rng.gen_range(0..feature_dim);
        features[(i, noise)] += 1.0;
        features[(i, c)] += 0.5;
    }
    let (g, _) = SparseGraph::from_edges(n, pairs)?;
    g.with_features(features)?.with_labels(community)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_cover() {
        let s = random_split(10, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(s, random_split(10, 3).unwrap());
        assert!(random_split(4, 0).is_err());
    }

    #[test]
    fn sbm_roundtrip() {
        let g = stochastic_block_model(&[10, 12], 0.5, 0.05, 4, 1).unwrap();
        assert_eq!(g.num_nodes(), 22);
        assert_eq!(g.num_classes(), 2);
        let dir = tempfile::tempdir().unwrap();
        write_node_dataset(dir.path(), &g).unwrap();
        let back = load_node_dataset(dir.path()).unwrap();
        assert_eq!(back.graph, g);
        assert_eq!(back.cleanup, EdgeCleanup::default());
    }
}
