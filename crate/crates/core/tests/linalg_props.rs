mod common;

use common::expm;
use monospline::linalg::{mat_exp, DenseRows, Matrix, Vector};
use proptest::prelude::*;

fn square(max_n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-scale..scale, n * n).prop_map(move |v| Matrix::from_vec(n, n, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_times_exp_of_negative_is_identity(m in square(6, 2.0)) {
        let n = m.nrows();
        let prod = mat_exp(&m).unwrap() * mat_exp(&-&m).unwrap();
        prop_assert!((prod - Matrix::identity(n, n)).amax() < 1e-10);
    }

    #[test]
    fn exp_agrees_with_nalgebra(m in square(6, 4.0)) {
        let ours = mat_exp(&m).unwrap();
        let theirs = expm(&m);
        prop_assert!((&ours - &theirs).amax() <= 1e-11 * (1.0 + theirs.amax()));
    }

    #[test]
    fn exp_of_transpose_is_transpose_of_exp(m in square(5, 3.0)) {
        let a = mat_exp(&m.transpose()).unwrap();
        let b = mat_exp(&m).unwrap().transpose();
        prop_assert!((&a - &b).amax() <= 1e-12 * (1.0 + b.amax()));
    }

    #[test]
    fn weighted_gram_matches_dense_product(
        rows in 1usize..300,
        cols in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let m = common::random_matrix(&mut rng, rows, cols);
        let d = Vector::from_fn(rows, |i, _| ((i * 7 + 3) % 5) as f64 + 0.5);
        let dense = DenseRows::from_matrix(&m);
        let g = dense.weighted_gram(&d);
        let expected = m.transpose() * Matrix::from_diagonal(&d) * &m;
        prop_assert!((&g - &expected).amax() <= 1e-12 * (1.0 + expected.amax()));
        let x = Vector::from_fn(cols, |i, _| i as f64 - 1.5);
        prop_assert!((dense.mul_vec(&x) - &m * &x).amax() < 1e-12);
        prop_assert!((dense.tr_mul_vec(&d) - m.transpose() * &d).amax() < 1e-10);
    }
}
