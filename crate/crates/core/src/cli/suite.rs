//! Finite-difference checks over every tape op and the full model.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradient_check, AutodiffError, GradCheckReport, ParamSet, ParamVars, Tape, Var};
use crate::graph::{normalized_laplacian, SparseGraph};
use crate::linalg::{symmetric_eig, DenseMatrix};
use crate::model::{Combination, Decoder, ModelConfig, ModelError, ModelParams, Session, SpectralInput};
use crate::rng::{stream, Stream};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn params(shapes: &[(&str, usize, usize)], rng: &mut ChaCha8Rng) -> ParamSet {
    let mut p = ParamSet::new();
    for &(name, r, c) in shapes {
        p.insert(name, random(r, c, rng));
    }
    p
}

/// `Σ v ∘ W` for a fixed random `W`, so every output entry reaches the loss.
fn contract(tape: &mut Tape, v: Var, weights: &DenseMatrix) -> Result<Var, AutodiffError> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(v, w)?;
    tape.sum_all(p)
}

/// A connected 6-node graph with a triangle and a tail.
fn small_graph() -> SparseGraph {
    let (g, _) =
        SparseGraph::from_edges(6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (1, 4)]).expect("valid edges");
    g
}

fn small_basis() -> Arc<DenseMatrix> {
    let e = symmetric_eig(&normalized_laplacian(&small_graph())).expect("symmetric");
    e.shared_eigenvectors()
}

type Check = Box<dyn Fn(&mut Tape, &ParamVars) -> Result<Var, AutodiffError>>;

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, ParamSet, Check)> {
    let u = small_basis();
    let mut out: Vec<(&'static str, ParamSet, Check)> = Vec::new();

    let w = random(3, 4, rng);
    out.push((
        "add/sub/mul/scale",
        params(&[("a", 3, 4), ("b", 3, 4)], rng),
        Box::new(move |t, v| {
            let (a, b) = (v.get("a")?, v.get("b")?);
            let s = t.add(a, b)?;
            let d = t.sub(s, b)?;
            let m = t.mul(d, b)?;
            let m = t.scale(m, -1.3)?;
            contract(t, m, &w)
        }),
    ));

    let w = random(4, 5, rng);
    out.push((
        "matmul/transpose",
        params(&[("a", 3, 4), ("b", 3, 5)], rng),
        Box::new(move |t, v| {
            let at = t.transpose(v.get("a")?)?;
            let m = t.matmul(at, v.get("b")?)?;
            contract(t, m, &w)
        }),
    ));

    let w = random(2, 5, rng);
    out.push((
        "concat/slice",
        params(&[("a", 4, 2), ("b", 4, 3)], rng),
        Box::new(move |t, v| {
            let c = t.concat_cols(&[v.get("a")?, v.get("b")?, v.get("a")?])?;
            let s = t.slice_cols(c, 1, 5)?;
            let r = t.slice_rows(s, 1, 2)?;
            contract(t, r, &w)
        }),
    ));

    let w = random(4, 4, rng);
    out.push((
        "softmax_rows",
        params(&[("a", 4, 4)], rng),
        Box::new(move |t, v| {
            let s = t.softmax_rows(v.get("a")?)?;
            contract(t, s, &w)
        }),
    ));

    let w = random(4, 6, rng);
    out.push((
        "layer_norm",
        params(&[("a", 4, 6)], rng),
        Box::new(move |t, v| {
            let y = t.layer_norm(v.get("a")?)?;
            contract(t, y, &w)
        }),
    ));

    let w = random(5, 3, rng);
    out.push((
        "relu/tanh/exp",
        params(&[("a", 5, 3)], rng),
        Box::new(move |t, v| {
            let a = v.get("a")?;
            let r = t.relu(a)?;
            let h = t.tanh(a)?;
            let e = t.exp(a)?;
            let s = t.add(r, h)?;
            let s = t.add(s, e)?;
            contract(t, s, &w)
        }),
    ));

    let w = random(4, 3, rng);
    out.push((
        "row broadcast/mean",
        params(&[("a", 4, 3), ("b", 1, 3)], rng),
        Box::new(move |t, v| {
            let b = v.get("b")?;
            let y = t.add_row(v.get("a")?, b)?;
            let y = t.mul_row(y, b)?;
            let r = t.broadcast_row(b, 4)?;
            let y = t.add(y, r)?;
            let y = t.mul(y, y)?;
            let c = contract(t, y, &w)?;
            let m = t.mean_all(y)?;
            t.add(c, m)
        }),
    ));

    let w = random(5, 3, rng);
    out.push((
        "attention",
        params(&[("q", 5, 4), ("k", 6, 4), ("v", 6, 3)], rng),
        Box::new(move |t, v| {
            let a = t.attention::<ChaCha8Rng>(v.get("q")?, v.get("k")?, v.get("v")?, None)?;
            contract(t, a, &w)
        }),
    ));

    let w = random(5, 3, rng);
    out.push((
        "attention (dropout mask)",
        params(&[("q", 5, 4), ("k", 6, 4), ("v", 6, 3)], rng),
        Box::new(move |t, v| {
            // the same mask on every evaluation
            let mut mask_rng = stream(7, Stream::Dropout);
            let a = t.attention(v.get("q")?, v.get("k")?, v.get("v")?, Some((0.3, &mut mask_rng)))?;
            contract(t, a, &w)
        }),
    ));

    out.push((
        "cross_entropy",
        params(&[("z", 5, 3)], rng),
        Box::new(|t, v| t.cross_entropy(v.get("z")?, &[0, 2, 1, 2, 0], &[0, 2, 3])),
    ));

    let w = random(12, 6, rng);
    let basis = Arc::clone(&u);
    out.push((
        "spectral_filter",
        params(&[("lam", 6, 2), ("x", 12, 3)], rng),
        Box::new(move |t, v| {
            let y = t.spectral_filter(Arc::clone(&basis), v.get("lam")?, v.get("x")?, 2)?;
            contract(t, y, &w)
        }),
    ));

    let w = random(12, 2, rng);
    out.push((
        "block_col_sum",
        params(&[("x", 12, 2)], rng),
        Box::new(move |t, v| {
            let x = v.get("x")?;
            let y = t.block_col_sum(x, 2)?;
            let y = t.mul(y, x)?;
            contract(t, y, &w)
        }),
    ));

    let w = random(12, 3, rng);
    let basis = Arc::clone(&u);
    out.push((
        "basis_mlp_conv",
        params(
            &[
                ("lam", 6, 2),
                ("w1", 3, 6),
                ("b1", 1, 6),
                ("w2", 6, 3),
                ("b2", 1, 3),
                ("x", 12, 3),
            ],
            rng,
        ),
        Box::new(move |t, v| {
            let y = t.basis_mlp_conv(
                Arc::clone(&basis),
                v.get("lam")?,
                v.get("w1")?,
                v.get("b1")?,
                v.get("w2")?,
                v.get("b2")?,
                v.get("x")?,
                2,
            )?;
            contract(t, y, &w)
        }),
    ));

    out
}

/// Gradient check of the whole model on a 6-node graph with two stacked signals.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<GradCheckReport, ModelError> {
    let graph = small_graph();
    let eig = symmetric_eig(&normalized_laplacian(&graph))?;
    let spectral = SpectralInput::new(&eig, config)?;
    let mut rng = stream(seed, Stream::Signals);
    let blocks = 2;
    let x = random(blocks * graph.num_nodes(), config.in_dim, &mut rng);
    let w = random(blocks * graph.num_nodes(), config.out_dim, &mut rng);
    let params = ModelParams::init(config, seed)?;
    gradient_check(params.set(), GRADCHECK_STEP, |tape, vars| -> Result<Var, ModelError> {
        let xv = tape.constant(x.clone());
        let out = Session::eval(tape, vars, config).forward(&spectral, xv, blocks)?;
        Ok(contract(tape, out.output, &w)?)
    })
}

/// Every op on random inputs, then the small model in affine, MLP and attention-decoder form.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<SuiteEntry>, ModelError> {
    let mut rng = stream(seed, Stream::Init);
    let mut entries = Vec::new();
    for (name, p, f) in op_cases(&mut rng) {
        let report = gradient_check(&p, GRADCHECK_STEP, |t, v| f(t, v))?;
        entries.push(SuiteEntry { name, report });
    }
    let affine = ModelConfig::default();
    entries.push(SuiteEntry {
        name: "model (affine)",
        report: check_model(&affine, seed)?,
    });
    let mlp = ModelConfig {
        combination: Combination::Mlp,
        in_dim: 2,
        out_dim: 3,
        ..ModelConfig::default()
    };
    entries.push(SuiteEntry {
        name: "model (mlp)",
        report: check_model(&mlp, seed)?,
    });
    let attention = ModelConfig {
        decoder: Decoder::Attention,
        heads: 2,
        ..ModelConfig::default()
    };
    entries.push(SuiteEntry {
        name: "model (attention decoder)",
        report: check_model(&attention, seed)?,
    });
    Ok(entries)
}
