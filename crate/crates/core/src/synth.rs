//! Closed-form two-fidelity flood model for end-to-end testing.
//!
//! The expensive run is a Gaussian ridge of depth along the domain diagonal
//! whose height grows with the first parameter and width with the second.
//! The cheap run evaluates `rho_true` times the same surface on a coarse
//! grid plus a fixed sinusoidal bias inside the wet area.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::ExpensiveModel;
use crate::design::{Design, ParameterSpace};
use crate::grid::{bilinear_interpolate, flatten, Grid, GridError, GridGeometry, LocationSet};
use crate::reduce::{ReduceError, RunEnsemble};
use crate::scalar::{lit, Real};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("theta {0:?} lies outside the parameter space")]
    OutOfBounds(Vec<f64>),
    #[error("invalid synthetic model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fine: GridGeometry,
    pub coarse: GridGeometry,
    /// Bounds of the two parameters, `(lower, upper)`.
    pub bounds_a: (f64, f64),
    pub bounds_b: (f64, f64),
    pub noise_sd: f64,
    pub rho_true: f64,
    pub cheap_bias: f64,
}

impl Default for SynthConfig {
    /// 32x32 fine grid of 1 m cells, 8x8 coarse grid of 4 m cells over the
    /// same square, `a` in (0.02, 0.1), `b` in (0.95, 1.05).
    fn default() -> Self {
        Self {
            fine: GridGeometry { origin_x: 0.5, origin_y: 0.5, cell_size: 1.0, n_rows: 32, n_cols: 32 },
            coarse: GridGeometry { origin_x: 2.0, origin_y: 2.0, cell_size: 4.0, n_rows: 8, n_cols: 8 },
            bounds_a: (0.02, 0.1),
            bounds_b: (0.95, 1.05),
            noise_sd: 0.03,
            rho_true: 0.9,
            cheap_bias: 0.1,
        }
    }
}

/// Threshold subtracted from the ridge before truncation at zero.
const DRY_OFFSET: f64 = 0.05;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ((fx0, fy0), (fx1, fy1)) = self.fine.extent();
        let ((cx0, cy0), (cx1, cy1)) = self.coarse.extent();
        let tol = 1e-9 * self.fine.cell_size;
        if cx0 > fx0 + tol || cy0 > fy0 + tol || cx1 < fx1 - tol || cy1 < fy1 - tol {
            return Err(SynthError::InvalidConfig("coarse domain must cover the fine domain".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(SynthError::InvalidConfig("noise sd must be nonnegative".into()));
        }
        if !(self.bounds_a.0 < self.bounds_a.1) || !(self.bounds_b.0 < self.bounds_b.1) {
            return Err(SynthError::InvalidConfig("parameter bounds must be increasing".into()));
        }
        Ok(())
    }

    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::from_bounds(&[("a", self.bounds_a.0, self.bounds_a.1), ("b", self.bounds_b.0, self.bounds_b.1)])
            .expect("bounds validated")
    }

    fn check(&self, theta: &[f64]) -> Result<(), SynthError> {
        if theta.len() == 2 && self.space().contains(theta) {
            Ok(())
        } else {
            Err(SynthError::OutOfBounds(theta.to_vec()))
        }
    }

    /// Peak depth `A` in [0, 10] m.
    pub fn amplitude(&self, theta: &[f64]) -> f64 {
        10.0 * (theta[0] - self.bounds_a.0) / (self.bounds_a.1 - self.bounds_a.0)
    }

    /// Ridge half-width in domain lengths, in [0.1, 0.4].
    pub fn width(&self, theta: &[f64]) -> f64 {
        0.1 + 0.3 * (theta[1] - self.bounds_b.0) / (self.bounds_b.1 - self.bounds_b.0)
    }

    fn domain(&self) -> (f64, f64, f64) {
        let ((x0, y0), (x1, _)) = self.fine.extent();
        (x0, y0, x1 - x0)
    }

    /// The expensive depth formula at a point.
    pub fn depth_at(&self, theta: &[f64], x: f64, y: f64) -> f64 {
        let (x0, y0, l) = self.domain();
        let d = ((x - x0) - (y - y0)).abs() / std::f64::consts::SQRT_2 / l;
        let w = self.width(theta);
        (self.amplitude(theta) * (-d * d / (2.0 * w * w)).exp() - DRY_OFFSET).max(0.0)
    }

    /// The cheap depth formula at a point.
    pub fn cheap_depth_at(&self, theta: &[f64], x: f64, y: f64) -> f64 {
        let (x0, _, l) = self.domain();
        let f = self.depth_at(theta, x, y);
        let bias = if f > 0.0 { self.cheap_bias * (4.0 * std::f64::consts::PI * (x - x0) / l).sin() } else { 0.0 };
        (self.rho_true * f + bias).max(0.0)
    }
}

pub fn run_expensive(theta: &[f64], config: &SynthConfig) -> Result<Grid<f64>, SynthError> {
    config.check(theta)?;
    Ok(Grid::from_fn(config.fine, |x, y| config.depth_at(theta, x, y))?)
}

pub fn run_cheap(theta: &[f64], config: &SynthConfig) -> Result<Grid<f64>, SynthError> {
    config.check(theta)?;
    Ok(Grid::from_fn(config.coarse, |x, y| config.cheap_depth_at(theta, x, y))?)
}

/// Expensive run at `theta` plus `N(0, noise_sd^2)` noise at wet cells,
/// truncated below at zero.
pub fn simulate_observation(theta: &[f64], config: &SynthConfig, seed: u64) -> Result<Grid<f64>, SynthError> {
    let truth = run_expensive(theta, config)?;
    if config.noise_sd == 0.0 {
        return Ok(truth);
    }
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = truth.values().iter().map(|&v| if v > 0.0 { (v + noise.sample(&mut rng)).max(0.0) } else { v }).collect();
    Ok(Grid::new(*truth.geometry(), values)?)
}

/// Runs every point of `design`: fine runs at the expensive points and
/// coarse runs at all points, each in design order.
pub fn run_design(design: &Design, config: &SynthConfig) -> Result<(Vec<Grid<f64>>, Vec<Grid<f64>>), SynthError> {
    let expensive = design.expensive_points().par_iter().map(|t| run_expensive(t, config)).collect::<Result<Vec<_>, _>>()?;
    let cheap = design.cheap_points().par_iter().map(|t| run_cheap(t, config)).collect::<Result<Vec<_>, _>>()?;
    Ok((expensive, cheap))
}

/// Run matrix on `locations`: fine runs read at cell centers, coarse runs
/// bilinearly interpolated.
pub fn build_ensemble<T: Real>(
    design: &Design,
    expensive: &[Grid<f64>],
    cheap: &[Grid<f64>],
    locations: &LocationSet,
) -> Result<RunEnsemble<T>, SynthError> {
    let conv = |v: Vec<f64>| v.into_iter().map(lit::<T>).collect::<Vec<T>>();
    let e = expensive.iter().map(|g| flatten(g, locations).map(conv)).collect::<Result<Vec<_>, _>>()?;
    let c = cheap.iter().map(|g| bilinear_interpolate(g, locations).map(conv)).collect::<Result<Vec<_>, _>>()?;
    Ok(RunEnsemble::new(e, c, design.clone(), locations.clone())?)
}

/// Adapter running the synthetic expensive model.
#[derive(Debug, Clone)]
pub struct SynthModel {
    pub config: SynthConfig,
}

impl<T: Real> ExpensiveModel<T> for SynthModel {
    fn run(&self, theta: &[f64]) -> Result<Grid<T>, String> {
        let g = run_expensive(theta, &self.config).map_err(|e| e.to_string())?;
        g.map(lit::<T>).map_err(|e| e.to_string())
    }
}
