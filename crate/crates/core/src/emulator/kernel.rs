//! Squared-exponential covariance functions of the two-level model.
//!
//! Inputs are unit-scaled parameter vectors; `phi` holds the diagonal of the
//! range matrix, so the correlation is `exp(-sum_d (x_d - y_d)^2 / phi_d)`.

use crate::scalar::Real;

use super::EmulatorParams;

/// `exp(-(x - y)' D^{-1} (x - y))` with `D = diag(phi)`.
#[inline]
pub fn sq_exp<T: Real>(x: &[T], y: &[T], phi: &[T]) -> T {
    let mut q = T::zero();
    for ((&a, &b), &p) in x.iter().zip(y).zip(phi) {
        let d = a - b;
        q += d * d / p;
    }
    (-q).exp()
}

#[inline]
fn same_point<T: Real>(x: &[T], y: &[T]) -> bool {
    x.iter().zip(y).all(|(a, b)| a == b)
}

/// Cheap-run covariance `C_C`, nugget included on coincident inputs.
pub fn cov_cc<T: Real>(x: &[T], y: &[T], p: &EmulatorParams<T>) -> T {
    let nugget = if same_point(x, y) { p.lambda2_c } else { T::zero() };
    p.sigma2_c * sq_exp(x, y, &p.phi_c) + nugget
}

/// Expensive-run covariance `C_E`, carrying `rho^2` times the cheap kernel.
pub fn cov_ee<T: Real>(x: &[T], y: &[T], p: &EmulatorParams<T>) -> T {
    let nugget = if same_point(x, y) { p.lambda2_e } else { T::zero() };
    p.rho * p.rho * p.sigma2_c * sq_exp(x, y, &p.phi_c) + p.sigma2_e * sq_exp(x, y, &p.phi_e) + nugget
}

/// Cheap/expensive cross-covariance `C_CE`; no nugget.
pub fn cov_ce<T: Real>(x_cheap: &[T], y_expensive: &[T], p: &EmulatorParams<T>) -> T {
    p.rho * p.sigma2_c * sq_exp(x_cheap, y_expensive, &p.phi_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho: f64) -> EmulatorParams<f64> {
        EmulatorParams {
            rho,
            sigma2_c: 1.0,
            sigma2_e: 1.0,
            lambda2_c: 0.0,
            lambda2_e: 0.0,
            phi_c: vec![0.5, 0.8],
            phi_e: vec![0.5, 0.8],
        }
    }

    #[test]
    fn diagonal_values() {
        let p = EmulatorParams::<f64> { rho: 0.7, sigma2_c: 2.0, sigma2_e: 0.5, lambda2_c: 0.1, lambda2_e: 0.03, phi_c: vec![1.0], phi_e: vec![2.0] };
        let x = [0.3];
        assert!((cov_cc(&x, &x, &p) - 2.1).abs() < 1e-15);
        assert!((cov_ee(&x, &x, &p) - (0.49 * 2.0 + 0.5 + 0.03)).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_cheap_covariance() {
        let p = EmulatorParams { rho: 1.0, sigma2_c: 2.0, sigma2_e: 1.0, lambda2_c: 0.1, lambda2_e: 0.1, phi_c: vec![4.0], phi_e: vec![1.0] };
        let v = cov_cc(&[0.0], &[1.0], &p);
        assert!((v - 2.0 * (-0.25f64).exp()).abs() < 1e-15);
        assert!((v - 1.5576015661428098).abs() < 1e-12);
    }

    #[test]
    fn decays_along_a_ray() {
        let p = params(0.9);
        let mut prev = f64::INFINITY;
        for s in 0..40 {
            let y = [0.1 * s as f64, 0.05 * s as f64];
            let v = cov_cc(&[0.0, 0.0], &y, &p);
            assert!(v <= prev);
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn zero_rho_kills_cross_covariance() {
        let p = params(0.0);
        assert_eq!(cov_ce(&[0.1, 0.2], &[0.1, 0.2], &p), 0.0);
        assert_eq!(cov_ce(&[0.1, 0.2], &[0.5, 0.9], &p), 0.0);
    }

    #[test]
    fn expensive_is_twice_cross_when_levels_match() {
        let p = params(1.0);
        let (x, y) = ([0.2, 0.4], [0.5, 0.1]);
        assert!((cov_ee(&x, &y, &p) - 2.0 * cov_ce(&x, &y, &p)).abs() < 1e-15);
    }
}
