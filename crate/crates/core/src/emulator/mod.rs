//! Gaussian-process emulators of principal-component scores.
//!
//! Each retained component gets its own GP. The multiresolution GP models
//! the expensive score as `rho` times the cheap process plus an independent
//! process, with the linear regression coefficients integrated out under a
//! normal prior; covariance parameters are MAP estimates. The single
//! resolution GP is the same construction using expensive runs only.

mod archive;
pub mod kernel;
mod multires;
pub mod priors;
mod single;

pub use archive::{load_multires, load_single_res, save_multires, save_single_res, EmulatorManifest};
pub use multires::{fit, joint_gram, log_posterior, log_posterior_with_gradient, FitOptions, FitOutcome, JointGram, MultiResGp};
pub use priors::{BetaPrior, GammaPrior, HyperPriors, InverseGamma, NormalPrior};
pub use single::{fit_hr, log_posterior_hr, SingleResGp, SingleResParams};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::design::{Design, ParameterSpace};
use crate::reduce::ReducedRuns;
use crate::scalar::{lit, Real};

#[derive(Debug, thiserror::Error)]
pub enum EmulatorError {
    #[error("covariance matrix is not positive definite after jitter escalation")]
    NotPositiveDefinite,
    #[error("every optimizer start failed")]
    AllStartsFailed,
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid priors: {0}")]
    InvalidPriors(String),
    #[error("emulator archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

/// Covariance parameters of one multiresolution component (everything but
/// the integrated-out regression coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorParams<T> {
    pub rho: T,
    pub sigma2_c: T,
    pub sigma2_e: T,
    pub lambda2_c: T,
    pub lambda2_e: T,
    pub phi_c: Vec<T>,
    pub phi_e: Vec<T>,
}

impl<T: Real> EmulatorParams<T> {
    pub fn k(&self) -> usize {
        self.phi_c.len()
    }

    pub fn is_valid(&self) -> bool {
        let pos = |v: T| v > T::zero() && v.is_finite();
        self.rho.is_finite()
            && pos(self.sigma2_c)
            && pos(self.sigma2_e)
            && pos(self.lambda2_c)
            && pos(self.lambda2_e)
            && self.phi_c.len() == self.phi_e.len()
            && self.phi_c.iter().chain(&self.phi_e).all(|&v| pos(v))
    }

    /// Optimizer coordinates: `rho` untransformed, logs of everything else.
    /// Layout: `[rho, ln s2_C, ln s2_E, ln l2_C, ln l2_E, ln phi_C.., ln phi_E..]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let f = |v: T| crate::scalar::to_f64(v);
        let mut x = vec![f(self.rho), f(self.sigma2_c).ln(), f(self.sigma2_e).ln(), f(self.lambda2_c).ln(), f(self.lambda2_e).ln()];
        x.extend(self.phi_c.iter().map(|&v| f(v).ln()));
        x.extend(self.phi_e.iter().map(|&v| f(v).ln()));
        x
    }

    pub fn from_unconstrained(x: &[f64], k: usize) -> Self {
        let e = |v: f64| lit::<T>(v.exp());
        Self {
            rho: lit(x[0]),
            sigma2_c: e(x[1]),
            sigma2_e: e(x[2]),
            lambda2_c: e(x[3]),
            lambda2_e: e(x[4]),
            phi_c: x[5..5 + k].iter().map(|&v| e(v)).collect(),
            phi_e: x[5 + k..5 + 2 * k].iter().map(|&v| e(v)).collect(),
        }
    }

    pub fn n_unconstrained(k: usize) -> usize {
        5 + 2 * k
    }
}

/// Per-component predictive means and variances at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution<T: Real> {
    pub mean: DVector<T>,
    pub variance: DVector<T>,
    /// Set when the input lies outside the parameter space.
    pub extrapolated: bool,
}

/// A fitted GP for one principal component, taking unit-scaled inputs.
pub trait ScoreModel<T: Real>: Send + Sync {
    /// Predictive mean and variance of a new expensive score at `x`.
    fn predict_unit(&self, x: &[T]) -> (T, T);

    /// Joint predictive mean and covariance at several inputs. Each output is
    /// a separate noisy realization, so the nugget sits on the diagonal only.
    fn predict_joint_unit(&self, xs: &[Vec<T>]) -> (DVector<T>, DMatrix<T>);

    /// Number of regression coefficients in the mean.
    fn n_mean_params(&self) -> usize;
}

/// One fitted GP per retained component, plus the scaling of the inputs.
#[derive(Debug, Clone)]
pub struct Emulator<T: Real, G> {
    space: ParameterSpace,
    components: Vec<G>,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real, G: ScoreModel<T>> Emulator<T, G> {
    pub fn new(space: ParameterSpace, components: Vec<G>) -> Self {
        Self { space, components, _scalar: std::marker::PhantomData }
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn components(&self) -> &[G] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn to_unit(&self, theta: &[f64]) -> Vec<T> {
        self.space.to_unit(theta).into_iter().map(lit).collect()
    }

    /// Predicts every component at `theta` (native units). Inputs outside
    /// the parameter space are predicted anyway and flagged.
    pub fn predict(&self, theta: &[f64]) -> PredictiveDistribution<T> {
        let x = self.to_unit(theta);
        let n = self.components.len();
        let mut mean = DVector::zeros(n);
        let mut variance = DVector::zeros(n);
        for (j, c) in self.components.iter().enumerate() {
            let (m, v) = c.predict_unit(&x);
            mean[j] = m;
            variance[j] = v;
        }
        PredictiveDistribution { mean, variance, extrapolated: !self.space.contains(theta) }
    }

    /// Joint predictive distribution of component `j` at several inputs.
    pub fn predict_joint(&self, j: usize, thetas: &[Vec<f64>]) -> (DVector<T>, DMatrix<T>) {
        let xs: Vec<Vec<T>> = thetas.iter().map(|t| self.to_unit(t)).collect();
        self.components[j].predict_joint_unit(&xs)
    }

    pub fn n_mean_params(&self) -> usize {
        self.components.first().map_or(0, |c| c.n_mean_params())
    }
}

pub type MultiResEmulator<T> = Emulator<T, MultiResGp<T>>;
pub type SingleResEmulator<T> = Emulator<T, SingleResGp<T>>;

/// Unit-scaled training inputs of a design: all points (cheap) and the
/// expensive subset, each in design order.
pub fn unit_inputs<T: Real>(design: &Design) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let space = design.space();
    let conv = |pts: Vec<Vec<f64>>| -> Vec<Vec<T>> {
        pts.iter().map(|p| space.to_unit(p).into_iter().map(lit).collect()).collect()
    };
    (conv(design.cheap_points()), conv(design.expensive_points()))
}

/// Seed for component `j` derived from a stage seed.
pub fn component_seed(seed: u64, j: usize) -> u64 {
    seed ^ (j as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits a multiresolution GP to every component of `runs`. Components are
/// fit in parallel; results are collected in component order.
pub fn fit_multires_emulator<T: Real>(
    runs: &ReducedRuns<T>,
    design: &Design,
    hyperpriors: &HyperPriors,
    beta: &BetaPrior<T>,
    options: &FitOptions<T>,
) -> Result<MultiResEmulator<T>, EmulatorError> {
    let (theta_c, theta_e) = unit_inputs::<T>(design);
    let j_y = runs.scores().ncols();
    let components = (0..j_y)
        .into_par_iter()
        .map(|j| {
            let opts = FitOptions { seed: component_seed(options.seed, j), ..options.clone() };
            let (t_c, t_e) = (runs.cheap(j), runs.expensive(j));
            let outcome = fit(&t_c, &t_e, &theta_c, &theta_e, hyperpriors, beta, &opts)?;
            MultiResGp::new(outcome.params, beta.clone(), theta_c.clone(), theta_e.clone(), t_c, t_e)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Emulator::new(design.space().clone(), components))
}

/// Fits a single-resolution GP to the expensive scores of every component.
pub fn fit_single_res_emulator<T: Real>(
    runs: &ReducedRuns<T>,
    design: &Design,
    hyperpriors: &HyperPriors,
    beta: &BetaPrior<T>,
    options: &FitOptions<T>,
) -> Result<SingleResEmulator<T>, EmulatorError> {
    let (_, theta_e) = unit_inputs::<T>(design);
    let j_y = runs.scores().ncols();
    let components = (0..j_y)
        .into_par_iter()
        .map(|j| {
            let seed = component_seed(options.seed, j);
            let t_e = runs.expensive(j);
            let (params, _) = fit_hr(&t_e, &theta_e, hyperpriors, beta, options.n_starts, seed, &options.lbfgs)?;
            SingleResGp::new(params, beta.clone(), theta_e.clone(), t_e)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Emulator::new(design.space().clone(), components))
}

/// Cholesky factor of `m`, adding `c * trace(m) / dim` to the diagonal for
/// `c = 1e-10, 1e-9, ..., 1e-6` if the plain factorization fails. Returns
/// the factor and the jitter used.
pub fn cholesky_with_jitter<T: Real>(m: &DMatrix<T>) -> Result<(Cholesky<T, Dyn>, T), EmulatorError> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, T::zero()));
    }
    let dim = m.nrows().max(1);
    let scale = m.trace() / crate::scalar::from_usize::<T>(dim);
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(EmulatorError::NotPositiveDefinite);
    }
    let mut factor = lit::<T>(1e-10);
    while factor <= lit::<T>(1e-6 * (1.0 + 1e-9)) {
        let jitter = factor * scale;
        let mut mj = m.clone();
        for i in 0..dim {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = mj.cholesky() {
            return Ok((c, jitter));
        }
        factor *= lit(10.0);
    }
    Err(EmulatorError::NotPositiveDefinite)
}

/// Regression row `h(x) = (1, x_1, ..., x_k)`.
#[inline]
pub(crate) fn regressors<T: Real>(x: &[T]) -> DVector<T> {
    DVector::from_fn(x.len() + 1, |i, _| if i == 0 { T::one() } else { x[i - 1] })
}
