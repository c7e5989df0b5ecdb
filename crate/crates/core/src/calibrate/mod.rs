//! Dimension-reduced Bayesian calibration.
//!
//! The observation is projected onto the run basis and compared with the
//! emulator's per-component predictions:
//! `z_R ~ N(mu_eta(theta), diag(Sigma_eta(theta)) + sigma2 (K'K)^{-1})`,
//! optionally with a kernel discrepancy block appended to `K`. The posterior
//! over `(theta, sigma2)` is sampled with a variable-at-a-time random walk.

pub mod mcmc;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mcmc::{autocorrelation, effective_sample_size, Bounds, MhOutput, MhSettings};

use crate::design::ParameterSpace;
use crate::emulator::{Emulator, InverseGamma, ScoreModel};
use crate::grid::{flatten, Grid, GridError, LocationSet};
use crate::io::IoError;
use crate::reduce::ReducedBasis;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, thiserror::Error)]
pub enum CalibrateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("basis matrix K^T K is singular")]
    SingularBasis,
    #[error("likelihood covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("observation has a negative or non-finite depth at index {0}")]
    InvalidObservation(usize),
    #[error("theta {0:?} lies outside the parameter space")]
    OutOfBounds(Vec<f64>),
    #[error("chain has {available} retained draws, {requested} requested")]
    ChainTooShort { requested: usize, available: usize },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("model run failed at theta {theta:?}: {message}")]
    ModelRunFailed { theta: Vec<f64>, message: String },
    #[error("chain csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Observed depths at the ensemble locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    z: DVector<T>,
    locations: LocationSet,
}

impl<T: Real> Observation<T> {
    pub fn new(z: DVector<T>, locations: LocationSet) -> Result<Self, CalibrateError> {
        if z.len() != locations.len() {
            return Err(CalibrateError::DimensionMismatch(format!("{} depths for {} locations", z.len(), locations.len())));
        }
        if let Some(i) = z.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(CalibrateError::InvalidObservation(i));
        }
        Ok(Self { z, locations })
    }

    pub fn from_grid(grid: &Grid<T>, locations: &LocationSet) -> Result<Self, CalibrateError> {
        Self::new(DVector::from_vec(flatten(grid, locations)?), locations.clone())
    }

    pub fn z(&self) -> &DVector<T> {
        &self.z
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }
}

/// Kernel-convolution discrepancy `K_d nu` with `nu ~ N(0, kappa I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyBlock<T: Real> {
    pub k_d: DMatrix<T>,
    pub kappa_prior: InverseGamma,
}

impl<T: Real> DiscrepancyBlock<T> {
    pub fn new(k_d: DMatrix<T>, kappa_prior: InverseGamma) -> Result<Self, CalibrateError> {
        if k_d.ncols() == 0 || k_d.ncols() >= k_d.nrows() {
            return Err(CalibrateError::DimensionMismatch(format!("need 0 < J_d < n, got J_d = {} for n = {}", k_d.ncols(), k_d.nrows())));
        }
        if !kappa_prior.is_valid() {
            return Err(CalibrateError::InvalidConfig("kappa prior shape and rate must be positive".into()));
        }
        Ok(Self { k_d, kappa_prior })
    }

    pub fn j_d(&self) -> usize {
        self.k_d.ncols()
    }
}

/// Projected observation with the inverse Gram matrix of the basis used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedObservation<T: Real> {
    pub z_r: DVector<T>,
    pub j_y: usize,
    pub j_d: usize,
    /// `(K'K)^{-1}`.
    pub gram_inv: DMatrix<T>,
}

/// `(K'K)^{-1} K' (z - mu)` with `K = K_y` or `K = (K_y, K_d)`.
pub fn reduce_observation<T: Real>(
    z: &Observation<T>,
    basis: &ReducedBasis<T>,
    disc: Option<&DiscrepancyBlock<T>>,
) -> Result<ReducedObservation<T>, CalibrateError> {
    let n = basis.n_locations();
    if z.z.len() != n {
        return Err(CalibrateError::DimensionMismatch(format!("observation has {} values, basis {n} locations", z.z.len())));
    }
    let k = match disc {
        None => basis.k_y().clone(),
        Some(d) => {
            if d.k_d.nrows() != n {
                return Err(CalibrateError::DimensionMismatch(format!("K_d has {} rows, basis {n} locations", d.k_d.nrows())));
            }
            let mut k = DMatrix::zeros(n, basis.j_y() + d.j_d());
            k.columns_mut(0, basis.j_y()).copy_from(basis.k_y());
            k.columns_mut(basis.j_y(), d.j_d()).copy_from(&d.k_d);
            k
        }
    };
    let gram_inv = (k.transpose() * &k).try_inverse().ok_or(CalibrateError::SingularBasis)?;
    if gram_inv.iter().any(|v| !v.is_finite()) {
        return Err(CalibrateError::SingularBasis);
    }
    let z_r = &gram_inv * (k.transpose() * (&z.z - basis.mean()));
    Ok(ReducedObservation { z_r, j_y: basis.j_y(), j_d: disc.map_or(0, DiscrepancyBlock::j_d), gram_inv })
}

/// Gaussian log density of `z_r` given the emulator's predictive means and
/// variances at `theta`. `kappa` is required exactly when the reduced
/// observation carries discrepancy coordinates.
pub fn log_likelihood_from_prediction<T: Real>(
    mean: &DVector<T>,
    variance: &DVector<T>,
    sigma2: f64,
    kappa: Option<f64>,
    z_r: &ReducedObservation<T>,
) -> Result<f64, CalibrateError> {
    let j = z_r.j_y + z_r.j_d;
    if mean.len() != z_r.j_y || variance.len() != z_r.j_y {
        return Err(CalibrateError::DimensionMismatch(format!("emulator has {} components, observation {}", mean.len(), z_r.j_y)));
    }
    let kappa = match (z_r.j_d, kappa) {
        (0, _) => 0.0,
        (_, Some(k)) => k,
        (_, None) => return Err(CalibrateError::InvalidConfig("discrepancy variance required".into())),
    };
    let mut cov = &z_r.gram_inv * lit::<T>(sigma2);
    let mut resid = z_r.z_r.clone();
    for i in 0..j {
        if i < z_r.j_y {
            cov[(i, i)] += variance[i];
            resid[i] -= mean[i];
        } else {
            cov[(i, i)] += lit(kappa);
        }
    }
    let chol = cov.cholesky().ok_or(CalibrateError::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let log_det_half: f64 = (0..j).map(|i| to_f64(l[(i, i)]).ln()).sum();
    let w = l.solve_lower_triangular(&resid).ok_or(CalibrateError::NotPositiveDefinite)?;
    let q = to_f64(w.norm_squared());
    Ok(-0.5 * q - log_det_half - 0.5 * j as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Reduced log likelihood at `theta` (native units).
pub fn log_likelihood_reduced<T: Real, G: ScoreModel<T>>(
    theta: &[f64],
    sigma2: f64,
    kappa: Option<f64>,
    z_r: &ReducedObservation<T>,
    emulator: &Emulator<T, G>,
) -> Result<f64, CalibrateError> {
    if !emulator.space().contains(theta) {
        return Err(CalibrateError::OutOfBounds(theta.to_vec()));
    }
    let p = emulator.predict(theta);
    log_likelihood_from_prediction(&p.mean, &p.variance, sigma2, kappa, z_r)
}

/// Sampler configuration for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub iterations: usize,
    /// Burn-in sweeps; `None` for the first 20% of the chain.
    pub burn_in: Option<usize>,
    /// Proposal sds for `theta` in native units; `None` for 5% of each range.
    pub theta_proposal_sds: Option<Vec<f64>>,
    /// Proposal sd of `ln sigma2` (and `ln kappa`).
    pub log_variance_proposal_sd: f64,
    pub adapt: bool,
    pub target_acceptance: f64,
    /// Prior guess of the observation noise sd; sets the IG(2, guess^2) prior.
    pub noise_sd_guess: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: None,
            theta_proposal_sds: None,
            log_variance_proposal_sd: 0.5,
            adapt: true,
            target_acceptance: 0.35,
            noise_sd_guess: 0.03,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 5)
    }

    /// IG(2, guess^2): prior mean of `sigma2` equals `guess^2`.
    pub fn sigma2_prior(&self) -> InverseGamma {
        InverseGamma::with_mean(self.noise_sd_guess * self.noise_sd_guess)
    }
}

/// Posterior draws of `(theta, sigma2[, kappa])`, burn-in included.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorChain {
    pub names: Vec<String>,
    /// One row per sweep: `theta..., sigma2[, kappa]` in natural units.
    pub samples: DMatrix<f64>,
    pub log_post: Vec<f64>,
    pub accepted: Vec<u64>,
    pub acceptance_rates: Vec<f64>,
    pub proposal_sds: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
    pub k: usize,
    pub has_discrepancy: bool,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn n_retained(&self) -> usize {
        self.len().saturating_sub(self.burn_in)
    }

    /// Post-burn-in draws of column `c`.
    pub fn retained(&self, c: usize) -> Vec<f64> {
        (self.burn_in..self.len()).map(|r| self.samples[(r, c)]).collect()
    }

    /// Post-burn-in `theta` draws.
    pub fn theta_draws(&self) -> Vec<Vec<f64>> {
        (self.burn_in..self.len()).map(|r| (0..self.k).map(|c| self.samples[(r, c)]).collect()).collect()
    }

    /// Effective sample size of every column after burn-in.
    pub fn ess(&self) -> Vec<f64> {
        (0..self.samples.ncols()).map(|c| effective_sample_size(&self.retained(c))).collect()
    }

    /// Central credible interval of column `c` at level `1 - alpha`.
    pub fn credible_interval(&self, c: usize, alpha: f64) -> (f64, f64) {
        let mut v = self.retained(c);
        v.sort_by(f64::total_cmp);
        (quantile_sorted(&v, alpha / 2.0), quantile_sorted(&v, 1.0 - alpha / 2.0))
    }

    pub fn posterior_mean(&self, c: usize) -> f64 {
        let v = self.retained(c);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Sampler over `(theta, ln sigma2[, ln kappa])` with a uniform prior on
/// the parameter space. Log-scale coordinates include their Jacobian.
pub fn run_mh<T: Real, G: ScoreModel<T>>(
    z_r: &ReducedObservation<T>,
    emulator: &Emulator<T, G>,
    config: &CalibrationConfig,
    disc: Option<&DiscrepancyBlock<T>>,
) -> Result<PosteriorChain, CalibrateError> {
    let space = emulator.space();
    let k = space.k();
    if config.iterations == 0 {
        return Err(CalibrateError::InvalidConfig("iterations must be at least 1".into()));
    }
    if !(config.noise_sd_guess > 0.0) {
        return Err(CalibrateError::InvalidConfig("noise sd guess must be positive".into()));
    }
    if disc.map_or(0, DiscrepancyBlock::j_d) != z_r.j_d {
        return Err(CalibrateError::DimensionMismatch("discrepancy block does not match the reduced observation".into()));
    }
    let theta_sds = match &config.theta_proposal_sds {
        Some(s) if s.len() == k => s.clone(),
        Some(s) => return Err(CalibrateError::InvalidConfig(format!("{} proposal sds for {k} parameters", s.len()))),
        None => space.dims().iter().map(|d| 0.05 * d.range()).collect(),
    };
    if theta_sds.iter().chain([&config.log_variance_proposal_sd]).any(|s| !(*s > 0.0)) {
        return Err(CalibrateError::InvalidConfig("proposal sds must be positive".into()));
    }

    let sigma2_prior = config.sigma2_prior();
    let kappa_prior = disc.map(|d| d.kappa_prior);
    let mut x0: Vec<f64> = space.dims().iter().map(|d| 0.5 * (d.lower + d.upper)).collect();
    x0.push((config.noise_sd_guess * config.noise_sd_guess).ln());
    let mut bounds: Vec<Bounds> = space.dims().iter().map(|d| Bounds { lower: d.lower, upper: d.upper }).collect();
    bounds.push(Bounds::UNBOUNDED);
    let mut sds = theta_sds;
    sds.push(config.log_variance_proposal_sd);
    if let Some(p) = kappa_prior {
        x0.push((p.rate / (p.shape - 1.0).max(1.0)).ln());
        bounds.push(Bounds::UNBOUNDED);
        sds.push(config.log_variance_proposal_sd);
    }

    let mut cache = PredictionCache::<T>::default();
    let target = |x: &[f64]| -> f64 {
        let theta = &x[..k];
        let sigma2 = x[k].exp();
        let kappa = kappa_prior.map(|_| x[k + 1].exp());
        let mut lp = sigma2_prior.ln_pdf(sigma2) + x[k];
        if let (Some(p), Some(kv)) = (kappa_prior, kappa) {
            lp += p.ln_pdf(kv) + x[k + 1];
        }
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (mean, var) = cache.get(theta, emulator);
        match log_likelihood_from_prediction(&mean, &var, sigma2, kappa, z_r) {
            Ok(ll) => ll + lp,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let settings = MhSettings {
        iterations: config.iterations,
        burn_in: config.burn_in().min(config.iterations),
        proposal_sds: sds,
        seed: config.seed,
        adapt: config.adapt,
        target_acceptance: config.target_acceptance,
    };
    let out = mcmc::sample(target, &x0, &bounds, &settings);

    let mut names: Vec<String> = space.dims().iter().map(|d| d.name.clone()).collect();
    names.push("sigma2_eps".into());
    if disc.is_some() {
        names.push("kappa_d".into());
    }
    let ncols = names.len();
    let samples = DMatrix::from_fn(out.states.len(), ncols, |r, c| if c < k { out.states[r][c] } else { out.states[r][c].exp() });
    let mut proposal_sds = out.final_sds;
    proposal_sds.truncate(ncols);
    Ok(PosteriorChain {
        names,
        samples,
        log_post: out.log_target,
        accepted: out.accepted,
        acceptance_rates: out.acceptance_rates,
        proposal_sds,
        seed: config.seed,
        burn_in: settings.burn_in,
        k,
        has_discrepancy: disc.is_some(),
    })
}

/// Emulator predictions at the two most recent inputs; the sampler revisits
/// the current `theta` on every variance update.
struct PredictionCache<T: Real> {
    entries: Vec<(Vec<u64>, DVector<T>, DVector<T>)>,
}

impl<T: Real> Default for PredictionCache<T> {
    fn default() -> Self {
        Self { entries: Vec::with_capacity(2) }
    }
}

impl<T: Real> PredictionCache<T> {
    fn get<G: ScoreModel<T>>(&mut self, theta: &[f64], emulator: &Emulator<T, G>) -> (DVector<T>, DVector<T>) {
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if let Some(pos) = self.entries.iter().position(|e| e.0 == key) {
            let e = &self.entries[pos];
            return (e.1.clone(), e.2.clone());
        }
        let p = emulator.predict(theta);
        if self.entries.len() == 2 {
            self.entries.remove(0);
        }
        self.entries.push((key, p.mean.clone(), p.variance.clone()));
        (p.mean, p.variance)
    }
}

/// `m` equally spaced post-burn-in `theta` draws, offset chosen by `seed`.
pub fn thin(chain: &PosteriorChain, m: usize, seed: u64) -> Result<Vec<Vec<f64>>, CalibrateError> {
    let indices = thin_indices(chain.n_retained(), m, seed)?;
    Ok(indices.into_iter().map(|i| (0..chain.k).map(|c| chain.samples[(chain.burn_in + i, c)]).collect()).collect())
}

/// Indices `floor(offset + i * n / m)` into `n` retained draws, with
/// `offset` uniform on `[0, n / m)`.
pub fn thin_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>, CalibrateError> {
    if m == 0 || m > n {
        return Err(CalibrateError::ChainTooShort { requested: m, available: n });
    }
    let step = n as f64 / m as f64;
    let offset = ChaCha8Rng::seed_from_u64(seed).random::<f64>() * step;
    Ok((0..m).map(|i| ((offset + i as f64 * step).floor() as usize).min(n - 1)).collect())
}

/// Runs the expensive model at a parameter setting.
pub trait ExpensiveModel<T: Real>: Sync {
    fn run(&self, theta: &[f64]) -> Result<Grid<T>, String>;
}

/// Cellwise mean of the model runs at `thetas`. A cell is nodata if it is
/// nodata in any run.
pub fn calibrated_projection<T: Real, M: ExpensiveModel<T>>(thetas: &[Vec<f64>], model: &M) -> Result<Grid<T>, CalibrateError> {
    use rayon::prelude::*;
    if thetas.is_empty() {
        return Err(CalibrateError::ChainTooShort { requested: 1, available: 0 });
    }
    let runs = thetas
        .par_iter()
        .map(|t| model.run(t).map_err(|message| CalibrateError::ModelRunFailed { theta: t.clone(), message }))
        .collect::<Result<Vec<_>, _>>()?;
    let geometry = *runs[0].geometry();
    if runs.iter().any(|g| *g.geometry() != geometry) {
        return Err(CalibrateError::DimensionMismatch("model runs differ in geometry".into()));
    }
    let m = lit::<T>(runs.len() as f64);
    let mut values = vec![T::zero(); geometry.len()];
    let mut nodata = vec![false; geometry.len()];
    for g in &runs {
        for (i, (v, nd)) in g.values().iter().zip(g.nodata_mask()).enumerate() {
            values[i] += *v;
            nodata[i] |= *nd;
        }
    }
    let values = values.into_iter().map(|v| v / m).collect();
    Ok(Grid::with_nodata(geometry, values, nodata)?)
}

/// Writes the chain as CSV with header
/// `iter,theta_<name>...,sigma2_eps[,kappa_d],log_post,accepted_mask`.
pub fn write_chain_csv(chain: &PosteriorChain, path: &Path) -> Result<(), CalibrateError> {
    let mut s = String::from("iter");
    for (c, name) in chain.names.iter().enumerate() {
        if c < chain.k {
            let _ = write!(s, ",theta_{name}");
        } else {
            let _ = write!(s, ",{name}");
        }
    }
    s.push_str(",log_post,accepted_mask\n");
    for r in 0..chain.len() {
        let _ = write!(s, "{r}");
        for c in 0..chain.samples.ncols() {
            let _ = write!(s, ",{}", chain.samples[(r, c)]);
        }
        let _ = writeln!(s, ",{},{}", chain.log_post[r], chain.accepted[r]);
    }
    std::fs::write(path, s).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

/// Reads a chain CSV written by [`write_chain_csv`]. Sampler metadata not
/// stored in the CSV (seed, burn-in, rates) must be supplied by the caller.
pub fn read_chain_csv(path: &Path, seed: u64, burn_in: usize) -> Result<PosteriorChain, CalibrateError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| CalibrateError::Csv("empty file".into()))?.split(',').collect();
    let nh = header.len();
    if nh < 5 || header[0] != "iter" || header[nh - 2] != "log_post" || header[nh - 1] != "accepted_mask" {
        return Err(CalibrateError::Csv("unexpected header".into()));
    }
    let cols = &header[1..nh - 2];
    let k = cols.iter().take_while(|c| c.starts_with("theta_")).count();
    let names: Vec<String> = cols.iter().map(|c| c.strip_prefix("theta_").unwrap_or(c).to_string()).collect();
    if names.get(k).map(String::as_str) != Some("sigma2_eps") {
        return Err(CalibrateError::Csv("missing sigma2_eps column".into()));
    }
    let mut rows = Vec::new();
    let mut log_post = Vec::new();
    let mut accepted = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != nh {
            return Err(CalibrateError::Csv(format!("line {}: {} fields, expected {nh}", i + 2, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| CalibrateError::Csv(format!("line {}: bad number {s:?}", i + 2)));
        rows.push(f[1..nh - 2].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?);
        log_post.push(num(f[nh - 2])?);
        accepted.push(f[nh - 1].parse::<u64>().map_err(|_| CalibrateError::Csv(format!("line {}: bad mask", i + 2)))?);
    }
    let nc = names.len();
    let samples = DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]);
    let burn_in = burn_in.min(rows.len());
    let counted = if burn_in < rows.len() { burn_in } else { 0 };
    let n_counted = (rows.len() - counted).max(1) as f64;
    let acceptance_rates = (0..nc).map(|c| accepted[counted..].iter().filter(|m| *m & (1 << c) != 0).count() as f64 / n_counted).collect();
    Ok(PosteriorChain {
        has_discrepancy: names.last().map(String::as_str) == Some("kappa_d"),
        names,
        samples,
        log_post,
        accepted,
        acceptance_rates,
        proposal_sds: Vec::new(),
        seed,
        burn_in,
        k,
    })
}

/// Checks `theta` against the parameter space before a model run.
pub fn check_theta(space: &ParameterSpace, theta: &[f64]) -> Result<(), CalibrateError> {
    if space.contains(theta) {
        Ok(())
    } else {
        Err(CalibrateError::OutOfBounds(theta.to_vec()))
    }
}
