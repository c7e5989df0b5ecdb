//! Prior densities on emulator and calibration parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::scalar::{lit, Real};

/// Inverse-gamma with shape `alpha` and rate (scale) `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    /// Shape 2 with the rate chosen so the prior mean equals `mean`.
    pub fn with_mean(mean: f64) -> Self {
        Self { shape: 2.0, rate: mean }
    }

    pub fn is_valid(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }

    pub fn ln_pdf<T: Real>(&self, x: T) -> T {
        if x <= T::zero() {
            return lit(f64::NEG_INFINITY);
        }
        let (a, b) = (lit::<T>(self.shape), lit::<T>(self.rate));
        lit::<T>(self.shape * self.rate.ln() - ln_gamma(self.shape)) - (a + T::one()) * x.ln() - b / x
    }

    /// `x * d/dx ln p(x)`: derivative with respect to `ln x`.
    pub fn dln_pdf_dlog<T: Real>(&self, x: T) -> T {
        -(lit::<T>(self.shape) + T::one()) + lit::<T>(self.rate) / x
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let g = GammaDist::new(self.shape, 1.0 / self.rate).expect("valid gamma parameters");
        1.0 / g.sample(rng)
    }
}

/// Gamma with shape `alpha` and rate `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn is_valid(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0
    }

    pub fn ln_pdf<T: Real>(&self, x: T) -> T {
        let (a, b) = (lit::<T>(self.shape), lit::<T>(self.rate));
        lit::<T>(self.shape * self.rate.ln() - ln_gamma(self.shape)) + (a - T::one()) * x.ln() - b * x
    }

    pub fn dln_pdf_dlog<T: Real>(&self, x: T) -> T {
        (lit::<T>(self.shape) - T::one()) - lit::<T>(self.rate) * x
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        GammaDist::new(self.shape, 1.0 / self.rate).expect("valid gamma parameters").sample(rng)
    }
}

/// Normal prior given by mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

impl NormalPrior {
    pub fn ln_pdf<T: Real>(&self, x: T) -> T {
        let d = x - lit::<T>(self.mean);
        lit::<T>(-0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()) - d * d / lit::<T>(2.0 * self.variance)
    }

    pub fn dln_pdf<T: Real>(&self, x: T) -> T {
        -(x - lit::<T>(self.mean)) / lit::<T>(self.variance)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        NormalDist::new(self.mean, self.variance.sqrt()).expect("valid normal parameters").sample(rng)
    }
}

/// Priors on the covariance parameters of the multiresolution emulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPriors {
    pub lambda2_c: InverseGamma,
    pub lambda2_e: InverseGamma,
    pub sigma2_c: InverseGamma,
    pub sigma2_e: InverseGamma,
    pub phi_c: GammaPrior,
    pub phi_e: GammaPrior,
    pub rho: NormalPrior,
}

impl Default for HyperPriors {
    /// IG(2,2) on variances and nuggets, Gamma(2,2) on ranges, N(1, 1/3) on rho.
    fn default() -> Self {
        Self {
            lambda2_c: InverseGamma::new(2.0, 2.0),
            lambda2_e: InverseGamma::new(2.0, 2.0),
            sigma2_c: InverseGamma::new(2.0, 2.0),
            sigma2_e: InverseGamma::new(2.0, 2.0),
            phi_c: GammaPrior::new(2.0, 2.0),
            phi_e: GammaPrior::new(2.0, 2.0),
            rho: NormalPrior { mean: 1.0, variance: 1.0 / 3.0 },
        }
    }
}

impl HyperPriors {
    pub fn is_valid(&self) -> bool {
        [self.lambda2_c, self.lambda2_e, self.sigma2_c, self.sigma2_e].iter().all(InverseGamma::is_valid)
            && self.phi_c.is_valid()
            && self.phi_e.is_valid()
            && self.rho.variance > 0.0
    }
}

/// Normal prior on the stacked regression coefficients `(beta_C, beta_E)`,
/// each of length `k + 1` (intercept plus one slope per parameter).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPrior<T: Real> {
    pub b_c: DVector<T>,
    pub b_e: DVector<T>,
    pub cov_c: DMatrix<T>,
    pub cov_e: DMatrix<T>,
}

impl<T: Real> BetaPrior<T> {
    /// `N(0, I)` on both blocks.
    pub fn standard(k: usize) -> Self {
        Self {
            b_c: DVector::zeros(k + 1),
            b_e: DVector::zeros(k + 1),
            cov_c: DMatrix::identity(k + 1, k + 1),
            cov_e: DMatrix::identity(k + 1, k + 1),
        }
    }

    pub fn k(&self) -> usize {
        self.b_c.len() - 1
    }

    /// Stacked mean `b`.
    pub fn mean(&self) -> DVector<T> {
        let n = self.b_c.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.b_c[i] } else { self.b_e[i - n] })
    }

    /// Block-diagonal covariance `B`.
    pub fn covariance(&self) -> DMatrix<T> {
        let n = self.b_c.len();
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((0, 0), (n, n)).copy_from(&self.cov_c);
        b.view_mut((n, n), (n, n)).copy_from(&self.cov_e);
        b
    }

    /// Both blocks square, matching and symmetric positive definite.
    pub fn is_valid(&self) -> bool {
        let n = self.b_c.len();
        let square = |m: &DMatrix<T>| m.nrows() == n && m.ncols() == n;
        let spd = |m: &DMatrix<T>| (m - m.transpose()).amax() <= T::default_epsilon() * lit(100.0) * (T::one() + m.amax()) && m.clone().cholesky().is_some();
        n >= 1 && self.b_e.len() == n && square(&self.cov_c) && square(&self.cov_e) && spd(&self.cov_c) && spd(&self.cov_e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, Gamma, InverseGamma as IgDist, Normal};

    #[test]
    fn densities_match_statrs() {
        let ig = InverseGamma::new(2.0, 2.0);
        let oracle = IgDist::new(2.0, 2.0).unwrap();
        for x in [0.1, 0.7, 2.0, 9.0] {
            assert!((ig.ln_pdf(x) - oracle.ln_pdf(x)).abs() < 1e-12);
        }
        let g = GammaPrior::new(2.0, 2.0);
        let oracle = Gamma::new(2.0, 2.0).unwrap();
        for x in [0.1, 0.7, 2.0, 9.0] {
            assert!((g.ln_pdf(x) - oracle.ln_pdf(x)).abs() < 1e-12);
        }
        let n = NormalPrior { mean: 1.0, variance: 1.0 / 3.0 };
        let oracle = Normal::new(1.0, (1.0f64 / 3.0).sqrt()).unwrap();
        for x in [-1.0, 0.2, 1.0, 3.0] {
            assert!((n.ln_pdf(x) - oracle.ln_pdf(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_derivatives_match_finite_differences() {
        let ig = InverseGamma::new(2.5, 0.7);
        let g = GammaPrior::new(3.0, 1.5);
        for x in [0.3f64, 1.1, 4.0] {
            let h = 1e-6;
            let fd = |f: &dyn Fn(f64) -> f64| (f((x.ln() + h).exp()) - f((x.ln() - h).exp())) / (2.0 * h);
            assert!((fd(&|v| ig.ln_pdf(v)) - ig.dln_pdf_dlog(x)).abs() < 1e-6);
            assert!((fd(&|v| g.ln_pdf(v)) - g.dln_pdf_dlog(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn with_mean_sets_prior_mean() {
        let ig = InverseGamma::with_mean(0.03 * 0.03);
        // Mean of IG(a, b) is b / (a - 1).
        assert!((ig.rate / (ig.shape - 1.0) - 0.0009).abs() < 1e-15);
    }

    #[test]
    fn beta_prior_blocks() {
        let bp = BetaPrior::<f64>::standard(2);
        assert!(bp.is_valid());
        assert_eq!(bp.covariance(), DMatrix::identity(6, 6));
        assert_eq!(bp.mean().len(), 6);
    }
}
