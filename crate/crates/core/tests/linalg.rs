use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specformer::graph::{normalized_laplacian, SparseGraph};
use specformer::linalg::{spectral_apply, symmetric_eig, truncate_spectrum, DenseMatrix, Spectrum};

fn erdos_renyi(n: usize, p: f64, seed: u64) -> SparseGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                pairs.push((i, j));
            }
        }
    }
    SparseGraph::from_edges(n, pairs).unwrap().0
}

fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
    })
}

#[test]
fn random_product_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = DenseMatrix::from_fn(5, 7, |_, _| rng.gen_range(-2.0..2.0));
    let b = DenseMatrix::from_fn(7, 3, |_, _| rng.gen_range(-2.0..2.0));
    assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
}

#[test]
fn k3_spectrum() {
    let g = SparseGraph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap().0;
    let e = symmetric_eig(&normalized_laplacian(&g)).unwrap();
    for (got, want) in e.eigenvalues().iter().zip([0.0, 1.5, 1.5]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn truncation_picks_extremes_of_full_solve() {
    let e = symmetric_eig(&normalized_laplacian(&erdos_renyi(10, 0.4, 1))).unwrap();
    let t = truncate_spectrum(&e, 3, 3).unwrap();
    let full = e.eigenvalues();
    let want: Vec<f64> = full[..3].iter().chain(&full[7..]).copied().collect();
    assert_eq!(t.eigenvalues(), want.as_slice());
    for (k, &col) in [0, 1, 2, 7, 8, 9].iter().enumerate() {
        assert_eq!(t.eigenvectors().column_vec(k), e.eigenvectors().column_vec(col));
    }
}

#[test]
fn p2_heat_filter_is_averaging() {
    let g = SparseGraph::from_edges(2, [(0, 1)]).unwrap().0;
    let e = symmetric_eig(&normalized_laplacian(&g)).unwrap();
    let response: Vec<f64> = e.eigenvalues().iter().map(|l| (-10.0 * l * l).exp()).collect();
    let op = spectral_apply(&e, &response, &DenseMatrix::identity(2)).unwrap();
    // explicit U diag(g) Uᵀ
    let u = e.eigenvectors();
    let explicit = DenseMatrix::from_fn(2, 2, |i, j| (0..2).map(|k| u[(i, k)] * response[k] * u[(j, k)]).sum());
    assert!(op.max_abs_diff(&explicit) < 1e-15);
    assert!(op.max_abs_diff(&DenseMatrix::filled(2, 2, 0.5)) < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn laplacian_eigensystem_invariants(n in 1usize..40, p in 0.0f64..1.0, seed in any::<u64>()) {
        let l = normalized_laplacian(&erdos_renyi(n, p, seed));
        prop_assert_eq!(&l, &l.transpose());
        let e = symmetric_eig(&l).unwrap();
        let vals = e.eigenvalues();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(vals.iter().all(|&v| (-1e-10..=2.0 + 1e-10).contains(&v)));
        prop_assert!(e.orthonormality_residual() <= 1e-8);
        prop_assert!(e.reconstruction_residual(&l) <= 1e-8 * l.max_abs().max(1.0));
        prop_assert!((vals.iter().sum::<f64>() - l.trace()).abs() <= 1e-8 * n as f64);
        let again = symmetric_eig(&l).unwrap();
        prop_assert_eq!(again.eigenvalues(), vals);
        prop_assert_eq!(again.eigenvectors(), e.eigenvectors());
        // gauge: first significant entry of every column is non-negative
        let u = e.eigenvectors();
        for j in 0..n {
            let first = (0..n).map(|i| u[(i, j)]).find(|v| v.abs() > 1e-12).unwrap();
            prop_assert!(first >= 0.0);
        }
    }

    #[test]
    fn identity_filter_applies_laplacian(n in 2usize..30, seed in any::<u64>()) {
        let l = normalized_laplacian(&erdos_renyi(n, 0.3, seed));
        let e = symmetric_eig(&l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DenseMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = spectral_apply(&e, e.eigenvalues(), &x).unwrap();
        prop_assert!(y.max_abs_diff(&l.matmul(&x).unwrap()) < 1e-8);
        let ones = vec![1.0; n];
        prop_assert!(spectral_apply(&e, &ones, &x).unwrap().max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn truncated_apply_matches_full_on_supported_filters(n in 4usize..30, seed in any::<u64>(), k in 1usize..4) {
        let e = symmetric_eig(&normalized_laplacian(&erdos_renyi(n, 0.3, seed))).unwrap();
        let (s, g) = (k.min(n / 2), k.min(n / 2));
        let t = truncate_spectrum(&e, s, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = DenseMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let kept: Vec<f64> = t.eigenvalues().iter().map(|l| 1.0 + l.sin()).collect();
        let full: Vec<f64> = (0..n)
            .map(|i| if i < s { kept[i] } else if i >= n - g { kept[s + i - (n - g)] } else { 0.0 })
            .collect();
        let a = spectral_apply(&t, &kept, &x).unwrap();
        let b = spectral_apply(&e, &full, &x).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-8);
    }
}
