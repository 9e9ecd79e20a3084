use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specformer::autodiff::{ParamSet, Tape};
use specformer::graph::{
    load_node_dataset, make_synthetic_task, normalized_laplacian, random_split, FilterSpec, SparseGraph,
};
use specformer::linalg::{symmetric_eig, DenseMatrix};
use specformer::model::{ModelConfig, SpectralInput};
use specformer::train::{
    adam_step, cross_entropy_loss, r2_score, sse_loss, table_cell, train_nodecls, train_synthetic, AdamConfig,
    AdamState, EarlyStopping, NodeOutcome, TrainConfig, TrainError,
};

fn sbm() -> SparseGraph {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sbm");
    load_node_dataset(dir).unwrap().graph
}

fn node_model(g: &SparseGraph) -> ModelConfig {
    ModelConfig {
        in_dim: g.features().unwrap().cols(),
        out_dim: g.num_classes(),
        ..ModelConfig::default()
    }
}

fn run_nodecls(g: &SparseGraph, seed: u64, train: &TrainConfig) -> NodeOutcome {
    let model = node_model(g);
    let eig = symmetric_eig(&normalized_laplacian(g)).unwrap();
    let spectral = SpectralInput::new(&eig, &model).unwrap();
    let split = random_split(g.num_nodes(), seed).unwrap();
    let train = TrainConfig { seed, ..train.clone() };
    train_nodecls(g, &spectral, &split, &model, &train).unwrap()
}

#[test]
fn adam_three_steps_on_square() {
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        ..AdamConfig::default()
    };
    let mut params = ParamSet::new();
    params.insert("x", DenseMatrix::filled(1, 1, 1.0));
    let mut state = AdamState::new();

    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let g = 2.0 * params.get("x").unwrap()[(0, 0)];
        adam_step(
            &mut params,
            &BTreeMap::from([("x".to_string(), DenseMatrix::filled(1, 1, g))]),
            &mut state,
            &cfg,
        )
        .unwrap();

        let gx = 2.0 * x;
        m = 0.9 * m + 0.1 * gx;
        v = 0.999 * v + 0.001 * gx * gx;
        let m_hat = m / (1.0 - 0.9f64.powi(t));
        let v_hat = v / (1.0 - 0.999f64.powi(t));
        x -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params.get("x").unwrap()[(0, 0)] - x).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn adam_examples() {
    let mut params = ParamSet::new();
    params.insert("x", DenseMatrix::filled(1, 1, 0.3));
    let grads = BTreeMap::from([("x".to_string(), DenseMatrix::filled(1, 1, 1.0))]);
    for beta1 in [0.1, 0.5, 0.99] {
        let mut p = params.clone();
        let cfg = AdamConfig {
            beta1,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &grads, &mut AdamState::new(), &cfg).unwrap();
        let delta = p.get("x").unwrap()[(0, 0)] - 0.3;
        assert!((delta + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adam_zero_gradient_is_identity(values in proptest::collection::vec(-10.0f64..10.0, 1..12), steps in 1usize..5) {
        let mut params = ParamSet::new();
        params.insert("w", DenseMatrix::column(&values));
        let before = params.clone();
        let grads = BTreeMap::from([("w".to_string(), DenseMatrix::zeros(values.len(), 1))]);
        let mut state = AdamState::new();
        for _ in 0..steps {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        }
        prop_assert_eq!(params, before);
    }
}

#[test]
fn sse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut want = 0.0;
    for i in 0..7 {
        want += (a[i] - b[i]) * (a[i] - b[i]);
    }
    let mut tape = Tape::new();
    let (pa, pb) = (
        tape.constant(DenseMatrix::column(&a)),
        tape.constant(DenseMatrix::column(&b)),
    );
    let loss = sse_loss(&mut tape, pa, pb).unwrap();
    assert!((tape.scalar(loss) - want).abs() < 1e-14);
    let same = sse_loss(&mut tape, pa, pa).unwrap();
    assert_eq!(tape.scalar(same), 0.0);
    let ones = tape.constant(DenseMatrix::column(&[1.0; 5]));
    let zeros = tape.constant(DenseMatrix::zeros(5, 1));
    let five = sse_loss(&mut tape, ones, zeros).unwrap();
    assert_eq!(tape.scalar(five), 5.0);
}

#[test]
fn r2_and_reporting() {
    let t = [1.0, 2.0, 4.0, 7.0];
    assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
    assert_eq!(r2_score(&[3.5; 4], &t).unwrap(), 0.0);
    assert!(matches!(
        r2_score(&[1.0, 2.0], &[5.0, 5.0]),
        Err(TrainError::UndefinedMetric(_))
    ));
    assert_eq!(table_cell(0.0002, 0.99994), "0.0002(.9999)");
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let uniform = tape.constant(DenseMatrix::filled(3, 4, 0.7));
    let l = cross_entropy_loss(&mut tape, uniform, &[0, 3, 2], &[0, 1, 2]).unwrap();
    assert!((tape.scalar(l) - 4f64.ln()).abs() < 1e-15);

    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 25.0] {
        let logits = tape.constant(DenseMatrix::from_rows(&[vec![margin, 0.0, 0.0]]).unwrap());
        let lv = cross_entropy_loss(&mut tape, logits, &[0], &[0]).unwrap();
        let l = tape.scalar(lv);
        assert!(l < last && l >= 0.0);
        last = l;
    }
    assert!(last < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits = DenseMatrix::from_fn(5, 3, |_, _| rng.gen_range(-3.0..3.0));
    let labels = [2, 0, 1, 1, 0];
    let mask = [0, 2, 3];
    let mut want = 0.0;
    for &r in &mask {
        let z: f64 = (0..3).map(|c| logits[(r, c)].exp()).sum();
        want -= (logits[(r, labels[r])].exp() / z).ln();
    }
    want /= mask.len() as f64;
    let lv = tape.constant(logits);
    let loss = cross_entropy_loss(&mut tape, lv, &labels, &mask).unwrap();
    let got = tape.scalar(loss);
    assert!((got - want).abs() < 1e-12);
    assert!(cross_entropy_loss(&mut tape, lv, &labels, &[]).is_err());
}

#[test]
fn identity_filter_is_learned_quickly() {
    let task = make_synthetic_task(8, 8, 5, FilterSpec::constant(1.0), 0).unwrap();
    let train = TrainConfig {
        max_epochs: 100,
        patience: 100,
        ..TrainConfig::default()
    };
    let out = train_synthetic(&task, &ModelConfig::default(), &train).unwrap();
    let first = out.report.epochs[0].train_loss;
    let best = out
        .report
        .epochs
        .iter()
        .map(|e| e.train_loss)
        .fold(f64::INFINITY, f64::min);
    println!(
        "identity filter: first {first:e}, best {best:e}, final sse {:e}",
        out.report.final_sse.unwrap()
    );
    assert!(best < 1e-2, "best loss {best}");
    assert!(out.report.final_sse.unwrap() <= best * (1.0 + 1e-9));

    // the running minimum never increases, and the best epoch holds it
    let mut running = f64::INFINITY;
    for e in &out.report.epochs {
        let next = running.min(e.train_loss);
        assert!(next <= running);
        running = next;
    }
    assert_eq!(out.report.epochs[out.report.best_epoch - 1].train_loss, running);
}

#[test]
fn synthetic_training_is_bitwise_reproducible() {
    let task = make_synthetic_task(6, 6, 3, FilterSpec::BAND_PASS, 4).unwrap();
    let train = TrainConfig {
        max_epochs: 30,
        patience: 30,
        seed: 9,
        ..TrainConfig::default()
    };
    let model = ModelConfig {
        transformer_dropout: 0.1,
        ..ModelConfig::default()
    };
    let a = train_synthetic(&task, &model, &train).unwrap();
    let b = train_synthetic(&task, &model, &train).unwrap();
    assert_eq!(a.report.loss_csv(), b.report.loss_csv());
    assert_eq!(a.params, b.params);
}

#[test]
fn sbm_reaches_high_accuracy() {
    let g = sbm();
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            run_nodecls(&g, seed, &TrainConfig::default())
                .report
                .test_accuracy
                .unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    println!("sbm accuracies {accs:?}, mean {mean}");
    assert!(mean >= 0.9, "{accs:?}");
}

#[test]
fn shuffled_labels_stay_near_chance() {
    let g = sbm();
    let mut labels = g.labels().unwrap().to_vec();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(17));
    let shuffled = g.clone().with_labels(labels).unwrap();
    let accs: Vec<f64> = (0..5)
        .map(|seed| {
            run_nodecls(&shuffled, seed, &TrainConfig::default())
                .report
                .test_accuracy
                .unwrap()
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    println!("shuffled accuracies {accs:?}, mean {mean}");
    assert!((mean - 0.5).abs() <= 0.1, "{accs:?}");
}

#[test]
fn best_checkpoint_and_early_stop() {
    let g = sbm();
    let train = TrainConfig {
        max_epochs: 300,
        patience: 1,
        ..TrainConfig::default()
    };
    let out = run_nodecls(&g, 3, &train);
    let vals: Vec<f64> = out.report.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    // patience 1: the run ends at the first epoch that fails to improve
    let n = vals.len();
    assert!(n == 300 || vals[n - 1] >= vals[n - 2]);
    assert!(vals[..n - 1].windows(2).all(|w| w[1] < w[0]));
    assert_eq!(
        out.report.best_epoch,
        if n == 300 && vals[n - 1] < vals[n - 2] {
            n
        } else {
            n - 1
        }
    );

    let long = run_nodecls(
        &g,
        3,
        &TrainConfig {
            max_epochs: 400,
            patience: 50,
            ..TrainConfig::default()
        },
    );
    let vals: Vec<f64> = long.report.epochs.iter().map(|e| e.val_loss.unwrap()).collect();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(long.best_val_loss, min);
    // ties keep the earliest epoch
    assert_eq!(long.report.best_epoch, vals.iter().position(|&v| v == min).unwrap() + 1);
}

#[test]
fn early_stop_contract() {
    let mut s = EarlyStopping::new(1);
    assert!(!s.update(1, 0.5).stop);
    let d = s.update(2, 0.6);
    assert!(d.stop && !d.improved);
    assert_eq!(s.best_epoch(), Some(1));
    assert_eq!(s.best(), 0.5);

    let mut s = EarlyStopping::new(2);
    s.update(1, 1.0);
    assert!(!s.update(2, 1.0).improved);
    assert!(s.update(3, 1.0).stop);
    assert_eq!(s.best_epoch(), Some(1));
}

#[test]
fn node_training_is_bitwise_reproducible() {
    let g = sbm();
    let model = ModelConfig {
        feature_dropout: 0.2,
        ..node_model(&g)
    };
    let eig = symmetric_eig(&normalized_laplacian(&g)).unwrap();
    let spectral = SpectralInput::new(&eig, &model).unwrap();
    let split = random_split(g.num_nodes(), 2).unwrap();
    let train = TrainConfig {
        max_epochs: 40,
        patience: 40,
        ..TrainConfig::default()
    };
    let a = train_nodecls(&g, &spectral, &split, &model, &train).unwrap();
    let b = train_nodecls(&g, &spectral, &split, &model, &train).unwrap();
    assert_eq!(a.report.loss_csv(), b.report.loss_csv());
    assert_eq!(a.report.test_accuracy, b.report.test_accuracy);
}
