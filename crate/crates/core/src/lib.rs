//! Multiresolution Gaussian-process emulation and dimension-reduced
//! Bayesian calibration of spatial computer models.
//!
//! The numerical core is generic over the scalar type through [`Real`]
//! (implemented for `f32` and `f64`); the aliases at the crate root pick
//! `f64`, with `*32` variants for single precision.

pub mod calibrate;
pub mod design;
pub mod diagnostics;
pub mod emulator;
pub mod grid;
pub mod io;
pub mod optim;
pub mod reduce;
pub mod scalar;
pub mod synth;

pub use scalar::Real;

pub use calibrate::{CalibrateError, CalibrationConfig, PosteriorChain};
pub use design::{Design, DesignError, Fidelity, ParameterSpace};
pub use diagnostics::{DiagnosticsError, MetricReport, QuartileSummary, UspeReport};
pub use emulator::{EmulatorError, EmulatorParams, HyperPriors};
pub use grid::{GridError, GridGeometry, LocationSet};
pub use reduce::ReduceError;
pub use synth::{SynthConfig, SynthError};

pub type Grid = grid::Grid<f64>;
pub type Grid32 = grid::Grid<f32>;
pub type ReducedBasis = reduce::ReducedBasis<f64>;
pub type ReducedBasis32 = reduce::ReducedBasis<f32>;
pub type RunEnsemble = reduce::RunEnsemble<f64>;
pub type RunEnsemble32 = reduce::RunEnsemble<f32>;
pub type MultiResEmulator = emulator::MultiResEmulator<f64>;
pub type MultiResEmulator32 = emulator::MultiResEmulator<f32>;
pub type SingleResEmulator = emulator::SingleResEmulator<f64>;
pub type SingleResEmulator32 = emulator::SingleResEmulator<f32>;
pub type PredictiveDistribution = emulator::PredictiveDistribution<f64>;
pub type Observation = calibrate::Observation<f64>;
pub type ReducedObservation = calibrate::ReducedObservation<f64>;
