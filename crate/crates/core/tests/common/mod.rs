//! Straight-line oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use specformer::autodiff::Tape;
use specformer::graph::{normalized_laplacian, SparseGraph};
use specformer::linalg::{symmetric_eig, DenseMatrix, EigenSystem};
use specformer::model::{Combination, FilterBank, ModelConfig, ModelParams, Session, SpectralInput};

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn mm(a: &Rows, b: &Rows) -> Rows {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn add_bias(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn p(params: &ModelParams, name: &str) -> Rows {
    rows(params.get(name).unwrap_or_else(|| panic!("missing {name}")))
}

pub fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_graph(n: usize, prob: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(prob) {
                pairs.push((i, j));
            }
        }
    }
    SparseGraph::from_edges(n, pairs).unwrap().0
}

/// Weights drawn away from zero so the oracle comparison exercises every term.
pub fn randomize(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.set().names().map(str::to_string).collect();
    for name in names {
        let (r, c) = params.get(&name).unwrap().shape();
        params.assign(&name, random(r, c, rng)).unwrap();
    }
}

/// `Ŝ[p][r][i]` built entry by entry from the combination network.
pub fn explicit_basis(
    eig: &EigenSystem,
    lambdas: &DenseMatrix,
    params: &ModelParams,
    config: &ModelConfig,
) -> Vec<Rows> {
    let n = eig.eigenvalues().len();
    let u = eig.eigenvectors();
    let heads = lambdas.cols();
    let s = |m: usize, a: usize, b: usize| (0..n).map(|k| u[(a, k)] * lambdas[(k, m)] * u[(b, k)]).sum::<f64>();
    let mut out = vec![vec![vec![0.0; config.d]; n]; n];
    for a in 0..n {
        for b in 0..n {
            let mut channels = vec![if a == b { 1.0 } else { 0.0 }];
            channels.extend((0..heads).map(|m| s(m, a, b)));
            let v = vec![channels];
            out[a][b] = match config.combination {
                Combination::Affine => add_bias(&mm(&v, &p(params, "comb.w")), &p(params, "comb.b")).remove(0),
                Combination::Mlp => {
                    let hidden = add_bias(&mm(&v, &p(params, "comb.w1")), &p(params, "comb.b1"));
                    let hidden: Rows = hidden.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect();
                    add_bias(&mm(&hidden, &p(params, "comb.w2")), &p(params, "comb.b2")).remove(0)
                }
            };
        }
    }
    out
}

pub fn convolve(
    eig: &EigenSystem,
    lambdas: &DenseMatrix,
    params: &ModelParams,
    config: &ModelConfig,
    x: &DenseMatrix,
    blocks: usize,
) -> DenseMatrix {
    let spectral = SpectralInput::new(eig, config).unwrap();
    let mut tape = Tape::new();
    let vars = params.set().register(&mut tape);
    let bank = FilterBank {
        lambdas: tape.constant(lambdas.clone()),
    };
    let xv = tape.constant(x.clone());
    let out = Session::eval(&mut tape, &vars, config)
        .convolve(&spectral, bank, xv, blocks, "comb.")
        .unwrap();
    tape.value(out).clone()
}

pub fn forward(graph: &SparseGraph, params: &ModelParams, config: &ModelConfig, x: &DenseMatrix) -> DenseMatrix {
    let eig = symmetric_eig(&normalized_laplacian(graph)).unwrap();
    let spectral = SpectralInput::new(&eig, config).unwrap();
    let mut tape = Tape::new();
    let vars = params.set().register(&mut tape);
    let xv = tape.constant(x.clone());
    let out = Session::eval(&mut tape, &vars, config)
        .forward(&spectral, xv, 1)
        .unwrap();
    tape.value(out.output).clone()
}
