use mrcal::reduce::fit_basis_matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn low_rank(seed: u64, p: usize, n: usize, rank: usize) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, rank, |_, _| r.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(rank, n, |_, _| r.random_range(-1.0..1.0));
    let noise = DMatrix::from_fn(p, n, |_, _| r.random_range(-1e-3..1e-3));
    a * b + noise
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn project_then_reconstruct_is_identity_on_scores(seed in any::<u64>(), p in 4usize..20, n in 5usize..30) {
        let y = low_rank(seed, p, n, 3);
        let basis = fit_basis_matrix(&y, 0.95).unwrap();
        let j = basis.j_y();
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let z = DMatrix::from_fn(3, j, |_, _| r.random_range(-2.0..2.0));
        let back = basis.project(&basis.reconstruct(&z).unwrap()).unwrap();
        prop_assert!((back - z).amax() < 1e-9);
        let gram = basis.k_y().transpose() * basis.k_y();
        for a in 0..j {
            for b in 0..j {
                if a != b {
                    prop_assert!(gram[(a, b)].abs() <= 1e-10 * gram[(a, a)].max(gram[(b, b)]));
                }
            }
        }
    }

    #[test]
    fn residual_respects_target(seed in any::<u64>(), target in 0.5f64..0.999) {
        let y = low_rank(seed, 12, 20, 6);
        let basis = fit_basis_matrix(&y, target).unwrap();
        prop_assert!(basis.variance_fraction() >= target - 1e-12);
        let mean = y.row_mean();
        let mut centered = y.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        let recon = basis.reconstruct(&basis.project(&y).unwrap()).unwrap();
        let resid = (&y - recon).norm_squared() / centered.norm_squared();
        prop_assert!(resid <= 1.0 - target + 1e-9, "residual {resid}");
        if basis.j_y() > 1 {
            let fewer: f64 = basis.eigenvalues()[..basis.j_y() - 1].iter().sum::<f64>() / basis.eigenvalues().iter().sum::<f64>();
            prop_assert!(fewer < target);
        }
    }
}
