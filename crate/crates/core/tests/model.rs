mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specformer::autodiff::Tape;
use specformer::cli::check_model;
use specformer::graph::normalized_laplacian;
use specformer::linalg::{symmetric_eig, DenseMatrix, EigenSystem};
use specformer::model::{
    eigenvalue_encoding, fit_univariate_filter, Activation, Combination, Decoder, ModelConfig, ModelParams, Session,
    Variant,
};

fn ln(a: &Rows, gamma: &Rows, beta: &Rows) -> Rows {
    a.iter()
        .map(|r| {
            let c = r.len() as f64;
            let mean = r.iter().sum::<f64>() / c;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c;
            r.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) / (var + 1e-5).sqrt() * gamma[0][j] + beta[0][j])
                .collect()
        })
        .collect()
}

fn cols(a: &Rows, start: usize, len: usize) -> Rows {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

fn attention(q: &Rows, k: &Rows, v: &Rows) -> Rows {
    let scale = 1.0 / (q[0].len() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum())
                .collect()
        })
        .collect()
}

fn oracle_encoder_block(z: &Rows, params: &ModelParams, prefix: &str, heads: usize) -> Rows {
    let g = |s: &str| p(params, &format!("{prefix}.{s}"));
    let h = ln(z, &g("ln1.gamma"), &g("ln1.beta"));
    let (q, k, v) = (mm(&h, &g("attn.wq")), mm(&h, &g("attn.wk")), mm(&h, &g("attn.wv")));
    let dh = z[0].len() / heads;
    let mut cat = vec![Vec::new(); z.len()];
    for m in 0..heads {
        let a = attention(&cols(&q, m * dh, dh), &cols(&k, m * dh, dh), &cols(&v, m * dh, dh));
        for (row, part) in cat.iter_mut().zip(a) {
            row.extend(part);
        }
    }
    let attn = add_bias(&mm(&cat, &g("attn.wo")), &g("attn.bo"));
    let z1: Rows = attn
        .iter()
        .zip(z)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let h2 = ln(&z1, &g("ln2.gamma"), &g("ln2.beta"));
    let f = add_bias(&mm(&h2, &g("ffn.w1")), &g("ffn.b1"));
    let f: Rows = f.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect();
    let f = add_bias(&mm(&f, &g("ffn.w2")), &g("ffn.b2"));
    f.iter()
        .zip(&z1)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn max_diff(a: &Rows, b: &DenseMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            worst = worst.max((x - b[(i, j)]).abs());
        }
    }
    worst
}

#[test]
fn encoding_examples() {
    let e = eigenvalue_encoding(&[2.0], 2, 100.0).unwrap();
    let want = [2.0, -0.873_297_297_213_994_6, 0.487_187_675_007_005_9];
    for (got, w) in e.row(0).iter().zip(want) {
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }
    let e = eigenvalue_encoding(&[0.0, 0.7], 4, 3.0).unwrap();
    assert_eq!(e.row(0), &[0.0, 0.0, 1.0, 0.0, 1.0]);
    let f1 = 3.0 * 0.7 / 10000f64.powf(0.5);
    let want = [0.7, (3.0 * 0.7f64).sin(), (3.0 * 0.7f64).cos(), f1.sin(), f1.cos()];
    for (got, w) in e.row(1).iter().zip(want) {
        assert!((got - w).abs() < 1e-14);
    }
}

#[test]
fn larger_epsilon_resolves_more_dimensions() {
    let count = |eps: f64| {
        let e = eigenvalue_encoding(&[0.5, 1.5], 64, eps).unwrap();
        (1..65).filter(|&j| (e[(0, j)] - e[(1, j)]).abs() > 0.1).count()
    };
    let (fine, coarse) = (count(100.0), count(1.0));
    assert!(fine > coarse, "ε=100: {fine}, ε=1: {coarse}");
}

#[test]
fn fit_examples() {
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 200.0).collect();
    let linear = fit_univariate_filter(|l| l, &grid, 4, 100.0).unwrap();
    assert_eq!(linear.rank, 5);
    assert!(linear.max_error < 1e-10);
    assert!((linear.weights[0] - 1.0).abs() < 1e-6);
    let wide = fit_univariate_filter(|l| l, &grid, 64, 100.0).unwrap();
    assert!(wide.max_error < 1e-10, "{}", wide.max_error);
    let basis_member = fit_univariate_filter(|l| (100.0 * l).sin(), &grid, 16, 100.0).unwrap();
    assert!(basis_member.max_error < 1e-10);
    assert!((basis_member.weights[1] - 1.0).abs() < 1e-6);
}

fn small_config(d: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        d,
        heads,
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_block_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (q, heads) in [(5, 2), (5, 1), (1, 2)] {
        let config = small_config(8, heads);
        let mut params = ModelParams::init(&config, 1).unwrap();
        randomize(&mut params, &mut rng);
        let z = random(q, 8, &mut rng);
        let mut tape = Tape::new();
        let vars = params.set().register(&mut tape);
        let zv = tape.constant(z.clone());
        let (out, _) = Session::eval(&mut tape, &vars, &config)
            .encoder_block(zv, "block0")
            .unwrap();
        let want = oracle_encoder_block(&rows(&z), &params, "block0", heads);
        assert!(max_diff(&want, tape.value(out)) < 1e-10, "q={q}, heads={heads}");
    }
}

#[test]
fn encoder_block_is_row_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = small_config(8, 2);
    let mut params = ModelParams::init(&config, 2).unwrap();
    randomize(&mut params, &mut rng);
    let z = random(7, 8, &mut rng);
    let mut perm: Vec<usize> = (0..7).collect();
    perm.shuffle(&mut rng);
    let run = |z: DenseMatrix| {
        let mut tape = Tape::new();
        let vars = params.set().register(&mut tape);
        let zv = tape.constant(z);
        let (out, _) = Session::eval(&mut tape, &vars, &config)
            .encoder_block(zv, "block0")
            .unwrap();
        tape.value(out).clone()
    };
    let a = run(z.clone()).select_rows(&perm);
    let b = run(z.select_rows(&perm));
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn decoder_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for decoder in [Decoder::Linear, Decoder::Attention] {
        for act in [Activation::None, Activation::Tanh] {
            let config = ModelConfig {
                decoder,
                decoder_activation: act,
                ..small_config(8, 2)
            };
            let mut params = ModelParams::init(&config, 3).unwrap();
            randomize(&mut params, &mut rng);
            let z = random(6, 8, &mut rng);
            let mut tape = Tape::new();
            let vars = params.set().register(&mut tape);
            let zv = tape.constant(z.clone());
            let bank = Session::eval(&mut tape, &vars, &config).decode_filters(zv, "").unwrap();
            let got = tape.value(bank.lambdas);
            assert_eq!(got.shape(), (6, 2));

            let h = ln(
                &rows(&z),
                &p(&params, "decoder.ln.gamma"),
                &p(&params, "decoder.ln.beta"),
            );
            for m in 0..2 {
                let hp = |s: &str| p(&params, &format!("decoder.head{m}.{s}"));
                let zm = match decoder {
                    Decoder::Linear => cols(&h, 4 * m, 4),
                    Decoder::Attention => attention(&mm(&h, &hp("wq")), &mm(&h, &hp("wk")), &mm(&h, &hp("wv"))),
                };
                let pre = add_bias(&mm(&zm, &hp("w_lambda")), &hp("b_lambda"));
                for (i, r) in pre.iter().enumerate() {
                    let want = if act == Activation::Tanh { r[0].tanh() } else { r[0] };
                    assert!((got[(i, m)] - want).abs() < 1e-10, "{decoder:?} {act:?}");
                }
            }
        }
    }
}

#[test]
fn decoder_clamps_and_zeroes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (act, bias, decoder) in [
        (Activation::Relu, -1.0, Decoder::Linear),
        (Activation::None, 0.0, Decoder::Linear),
        (Activation::Relu, -1.0, Decoder::Attention),
    ] {
        let config = ModelConfig {
            decoder,
            decoder_activation: act,
            ..small_config(8, 1)
        };
        let mut params = ModelParams::init(&config, 0).unwrap();
        params
            .assign("decoder.head0.w_lambda", DenseMatrix::zeros(8, 1))
            .unwrap();
        params
            .assign("decoder.head0.b_lambda", DenseMatrix::filled(1, 1, bias))
            .unwrap();
        let mut tape = Tape::new();
        let vars = params.set().register(&mut tape);
        let zv = tape.constant(random(5, 8, &mut rng));
        let bank = Session::eval(&mut tape, &vars, &config).decode_filters(zv, "").unwrap();
        assert_eq!(tape.value(bank.lambdas).max_abs(), 0.0);
    }
}

#[test]
fn factorized_convolution_matches_explicit_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for combination in [Combination::Affine, Combination::Mlp] {
        for n in 2..=8 {
            let config = ModelConfig {
                combination,
                ..small_config(4, 2)
            };
            let mut params = ModelParams::init(&config, n as u64).unwrap();
            randomize(&mut params, &mut rng);
            let eig = symmetric_eig(&normalized_laplacian(&random_graph(n, 0.5, &mut rng))).unwrap();
            let lambdas = random(n, 2, &mut rng);
            let blocks = 2;
            let x = random(blocks * n, 4, &mut rng);
            let got = convolve(&eig, &lambdas, &params, &config, &x, blocks);
            let s = explicit_basis(&eig, &lambdas, &params, &config);
            for b in 0..blocks {
                for a in 0..n {
                    for i in 0..4 {
                        let want: f64 = (0..n).map(|r| s[a][r][i] * x[(b * n + r, i)]).sum();
                        let diff = (got[(b * n + a, i)] - want).abs();
                        assert!(diff < 1e-9, "{combination:?} n={n}: {diff}");
                    }
                }
            }
        }
    }
}

#[test]
fn identity_channel_and_laplacian_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(7, 0.5, &mut rng);
    let l = normalized_laplacian(&g);
    let eig = symmetric_eig(&l).unwrap();
    let config = small_config(4, 1);
    let mut params = ModelParams::init(&config, 0).unwrap();
    let x = random(7, 4, &mut rng);

    params
        .assign("comb.w", DenseMatrix::from_rows(&[vec![1.0; 4], vec![0.0; 4]]).unwrap())
        .unwrap();
    let zero = DenseMatrix::zeros(7, 1);
    assert!(convolve(&eig, &zero, &params, &config, &x, 1).max_abs_diff(&x) < 1e-15);

    params
        .assign("comb.w", DenseMatrix::from_rows(&[vec![0.0; 4], vec![1.0; 4]]).unwrap())
        .unwrap();
    let lambdas = DenseMatrix::column(eig.eigenvalues());
    let lx = l.matmul(&x).unwrap();
    assert!(convolve(&eig, &lambdas, &params, &config, &x, 1).max_abs_diff(&lx) < 1e-8);
}

#[test]
fn convolution_is_gauge_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for combination in [Combination::Affine, Combination::Mlp] {
        let config = ModelConfig {
            combination,
            ..small_config(4, 2)
        };
        let mut params = ModelParams::init(&config, 0).unwrap();
        randomize(&mut params, &mut rng);
        let eig = symmetric_eig(&normalized_laplacian(&random_graph(10, 0.4, &mut rng))).unwrap();
        let flips: Vec<f64> = (0..10).map(|_| if rng.gen_bool(0.5) { -1.0 } else { 1.0 }).collect();
        let u = eig.eigenvectors();
        let flipped = EigenSystem::from_parts(
            eig.eigenvalues().to_vec(),
            DenseMatrix::from_fn(10, 10, |i, j| u[(i, j)] * flips[j]),
        )
        .unwrap();
        let lambdas = random(10, 2, &mut rng);
        let x = random(10, 4, &mut rng);
        let a = convolve(&eig, &lambdas, &params, &config, &x, 1);
        let b = convolve(&flipped, &lambdas, &params, &config, &x, 1);
        assert!(a.max_abs_diff(&b) < 1e-8);
    }
}

#[test]
fn forward_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let variants = [
        (Variant::Small, Combination::Affine, Decoder::Linear),
        (Variant::Medium, Combination::Mlp, Decoder::Attention),
        (Variant::Large, Combination::Affine, Decoder::Linear),
    ];
    for trial in 0..20 {
        let n = rng.gen_range(2..=64);
        let (variant, combination, decoder) = variants[trial % 3];
        let config = ModelConfig {
            variant,
            combination,
            decoder,
            layers: 2,
            heads: 2,
            in_dim: 3,
            out_dim: 2,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&config, trial as u64).unwrap();
        let g = random_graph(n, rng.gen_range(0.05..0.5), &mut rng);
        let x = random(n, 3, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inverse = vec![0; n];
        for (v, &q) in perm.iter().enumerate() {
            inverse[q] = v;
        }
        let base = forward(&g, &params, &config, &x);
        let moved = forward(&g.permuted(&perm), &params, &config, &x.select_rows(&inverse));
        let dev = base.select_rows(&inverse).max_abs_diff(&moved);
        assert!(dev <= 1e-6, "trial {trial}, n={n}: {dev}");
    }
}

#[test]
fn identity_path_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = ModelConfig {
        d: 4,
        in_dim: 4,
        out_dim: 4,
        layers: 2,
        variant: Variant::Medium,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(&config, 0).unwrap();
    params.assign("input.w", DenseMatrix::identity(4)).unwrap();
    params.assign("output.w", DenseMatrix::identity(4)).unwrap();
    for l in 0..2 {
        params
            .assign(&format!("layer{l}.wx"), DenseMatrix::zeros(4, 4))
            .unwrap();
    }
    let g = random_graph(9, 0.4, &mut rng);
    let x = random(9, 4, &mut rng);
    assert_eq!(forward(&g, &params, &config, &x), x);
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let config = ModelConfig {
        transformer_dropout: 0.3,
        feature_dropout: 0.2,
        in_dim: 2,
        ..ModelConfig::default()
    };
    let g = random_graph(15, 0.3, &mut rng);
    let x = random(15, 2, &mut rng);
    let a = forward(&g, &ModelParams::init(&config, 5).unwrap(), &config, &x);
    let b = forward(&g, &ModelParams::init(&config, 5).unwrap(), &config, &x);
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn full_model_gradients() {
    let configs = [
        ModelConfig::default(),
        ModelConfig {
            variant: Variant::Large,
            layers: 2,
            heads: 2,
            d: 8,
            combination: Combination::Mlp,
            decoder: Decoder::Attention,
            decoder_activation: Activation::Tanh,
            in_dim: 3,
            out_dim: 2,
            ..ModelConfig::default()
        },
    ];
    for config in &configs {
        let report = check_model(config, 1).unwrap();
        assert!(report.passed(), "{report}");
    }
}
