//! Experiment configuration (TOML, every field optional).

use std::path::Path;

use mrcal::design::{EdgeBand, ParamDim, ParameterSpace};
use mrcal::emulator::HyperPriors;
use mrcal::{GridGeometry, SynthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceSection,
    pub design: DesignSection,
    pub edge: EdgeSection,
    pub synth: SynthSection,
    pub reduce: ReduceSection,
    pub emulator: EmulatorSection,
    pub mcmc: McmcSection,
    pub project: ProjectSection,
    pub diagnose: DiagnoseSection,
    pub crossval: CrossvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            space: SpaceSection::default(),
            design: DesignSection::default(),
            edge: EdgeSection::default(),
            synth: SynthSection::default(),
            reduce: ReduceSection::default(),
            emulator: EmulatorSection::default(),
            mcmc: McmcSection::default(),
            project: ProjectSection::default(),
            diagnose: DiagnoseSection::default(),
            crossval: CrossvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub parameters: Vec<ParameterEntry>,
}

impl Default for SpaceSection {
    fn default() -> Self {
        Self {
            parameters: vec![
                ParameterEntry { name: "n_ch".into(), lower: 0.02, upper: 0.1 },
                ParameterEntry { name: "rwe".into(), lower: 0.95, upper: 1.05 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub n_expensive: usize,
    pub n_extra_cheap: usize,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { n_expensive: 50, n_extra_cheap: 150, n_candidates: 1000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSection {
    pub enabled: bool,
    /// Low-band fraction per parameter.
    pub low: Vec<f64>,
    /// High-band fraction per parameter.
    pub high: Vec<f64>,
}

impl Default for EdgeSection {
    fn default() -> Self {
        Self { enabled: false, low: vec![0.10, 0.0], high: vec![0.0, 0.05] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub fine: GridGeometry,
    pub coarse: GridGeometry,
    pub noise_sd: f64,
    pub rho_true: f64,
    pub cheap_bias: f64,
    pub theta_star: Vec<f64>,
    pub observation_seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            fine: s.fine,
            coarse: s.coarse,
            noise_sd: s.noise_sd,
            rho_true: s.rho_true,
            cheap_bias: s.cheap_bias,
            theta_star: vec![0.0305, 1.0],
            observation_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub target_fraction: f64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self { target_fraction: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorSection {
    pub n_starts: usize,
    pub seed: u64,
    pub hyperpriors: HyperPriors,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        Self { n_starts: 8, seed: 2, hyperpriors: HyperPriors::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    /// Defaults to 20% of `iterations` when absent.
    pub burn_in: Option<usize>,
    /// Defaults to 5% of each parameter range when absent.
    pub proposal_sds: Option<Vec<f64>>,
    pub log_variance_proposal_sd: f64,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub noise_sd_guess: f64,
    pub seed: u64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let c = mrcal::CalibrationConfig::default();
        Self {
            iterations: c.iterations,
            burn_in: None,
            proposal_sds: None,
            log_variance_proposal_sd: c.log_variance_proposal_sd,
            adapt: c.adapt,
            target_acceptance: c.target_acceptance,
            noise_sd_guess: c.noise_sd_guess,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    pub n_thin: usize,
    pub seed: u64,
}

impl Default for ProjectSection {
    fn default() -> Self {
        Self { n_thin: 100, seed: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub flood_threshold: f64,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { flood_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        Self { folds: 10, seed: 5 }
    }
}

/// Text shown under `--help`.
pub const DEFAULTS_HELP: &str = "\
CONFIGURATION (TOML; every key optional, defaults shown)

  [space]
  parameters = [{name = \"n_ch\", lower = 0.02, upper = 0.1},
                {name = \"rwe\", lower = 0.95, upper = 1.05}]
  [design]     n_expensive = 50, n_extra_cheap = 150, n_candidates = 1000, seed = 1
  [edge]       enabled = false, low = [0.10, 0.0], high = [0.0, 0.05]
               (fractions of each range; expensive points in a band are held out)
  [synth]      fine = {origin_x = 0.5, origin_y = 0.5, cell_size = 1.0, n_rows = 32, n_cols = 32}
               coarse = {origin_x = 2.0, origin_y = 2.0, cell_size = 4.0, n_rows = 8, n_cols = 8}
               noise_sd = 0.03, rho_true = 0.9, cheap_bias = 0.1,
               theta_star = [0.0305, 1.0], observation_seed = 7
  [reduce]     target_fraction = 0.95
  [emulator]   n_starts = 8, seed = 2
  [emulator.hyperpriors]
               sigma2_c, sigma2_e, lambda2_c, lambda2_e = {shape = 2.0, rate = 2.0}  (inverse gamma)
               phi_c, phi_e = {shape = 2.0, rate = 2.0}  (gamma)
               rho = {mean = 1.0, variance = 0.3333333333333333}
  [mcmc]       iterations = 50000, burn_in = 20% of iterations,
               proposal_sds = 5% of each range, log_variance_proposal_sd = 0.5,
               adapt = true, target_acceptance = 0.35, noise_sd_guess = 0.03, seed = 3
  [project]    n_thin = 100, seed = 4
  [diagnose]   flood_threshold = 0.0
  [crossval]   folds = 10, seed = 5

FLAG DEFAULTS
  --config     none (all defaults)
  --out        out
  --seed       the stage seed from the config
  --threads    0 (one per core)
  --flood-threshold  [diagnose] flood_threshold

EXIT CODES
  0 success, 1 unexpected i/o failure, 2 configuration error,
  3 missing upstream artifact, 4 numerical failure";

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.space()?;
        let k = self.space.parameters.len();
        if self.design.n_expensive < 2 {
            return bad("design.n_expensive must be at least 2");
        }
        if self.design.n_candidates < 1 {
            return bad("design.n_candidates must be at least 1");
        }
        if self.edge.low.len() != k || self.edge.high.len() != k {
            return bad("edge.low and edge.high need one entry per parameter");
        }
        if !(self.reduce.target_fraction > 0.0 && self.reduce.target_fraction <= 1.0) {
            return bad("reduce.target_fraction must lie in (0, 1]");
        }
        if !self.emulator.hyperpriors.is_valid() {
            return bad("emulator.hyperpriors: shapes, rates and the rho variance must be positive");
        }
        if self.emulator.n_starts < 1 {
            return bad("emulator.n_starts must be at least 1");
        }
        if self.mcmc.iterations < 1 {
            return bad("mcmc.iterations must be at least 1");
        }
        if self.mcmc.burn_in.is_some_and(|b| b >= self.mcmc.iterations) {
            return bad("mcmc.burn_in must be below mcmc.iterations");
        }
        if let Some(s) = &self.mcmc.proposal_sds {
            if s.len() != k || s.iter().any(|v| !(*v > 0.0)) {
                return bad("mcmc.proposal_sds needs one positive entry per parameter");
            }
        }
        if !(self.mcmc.noise_sd_guess > 0.0) || !(self.mcmc.log_variance_proposal_sd > 0.0) {
            return bad("mcmc.noise_sd_guess and mcmc.log_variance_proposal_sd must be positive");
        }
        if !(self.mcmc.target_acceptance > 0.0 && self.mcmc.target_acceptance < 1.0) {
            return bad("mcmc.target_acceptance must lie in (0, 1)");
        }
        if self.project.n_thin < 1 {
            return bad("project.n_thin must be at least 1");
        }
        if self.crossval.folds < 2 {
            return bad("crossval.folds must be at least 2");
        }
        if !self.diagnose.flood_threshold.is_finite() {
            return bad("diagnose.flood_threshold must be finite");
        }
        Ok(())
    }

    pub fn space(&self) -> Result<ParameterSpace, CliError> {
        ParameterSpace::new(self.space.parameters.iter().map(|p| ParamDim { name: p.name.clone(), lower: p.lower, upper: p.upper }).collect())
            .map_err(|e| CliError::Config(format!("space: {e}")))
    }

    pub fn edge_bands(&self) -> Vec<EdgeBand> {
        self.edge.low.iter().zip(&self.edge.high).map(|(&low, &high)| EdgeBand { low, high }).collect()
    }

    /// Synthetic model settings; the model takes exactly two parameters.
    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        let p = &self.space.parameters;
        if p.len() != 2 {
            return Err(CliError::Config("the synthetic model needs exactly two parameters".into()));
        }
        let s = SynthConfig {
            fine: self.synth.fine,
            coarse: self.synth.coarse,
            bounds_a: (p[0].lower, p[0].upper),
            bounds_b: (p[1].lower, p[1].upper),
            noise_sd: self.synth.noise_sd,
            rho_true: self.synth.rho_true,
            cheap_bias: self.synth.cheap_bias,
        };
        s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.synth.theta_star.len() != 2 || !s.space().contains(&self.synth.theta_star) {
            return Err(CliError::Config("synth.theta_star must be a point of the parameter space".into()));
        }
        Ok(s)
    }

    pub fn calibration_config(&self) -> mrcal::CalibrationConfig {
        mrcal::CalibrationConfig {
            iterations: self.mcmc.iterations,
            burn_in: self.mcmc.burn_in,
            theta_proposal_sds: self.mcmc.proposal_sds.clone(),
            log_variance_proposal_sd: self.mcmc.log_variance_proposal_sd,
            adapt: self.mcmc.adapt,
            target_acceptance: self.mcmc.target_acceptance,
            noise_sd_guess: self.mcmc.noise_sd_guess,
            seed: self.mcmc.seed,
        }
    }

    /// SHA-256 of the canonical TOML rendering of the effective config.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[design]\nn_expensiv = 3\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.mcmc.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn help_lists_the_defaults() {
        let d = ExperimentConfig::default();
        for needle in [
            format!("n_expensive = {}", d.design.n_expensive),
            format!("n_extra_cheap = {}", d.design.n_extra_cheap),
            format!("iterations = {}", d.mcmc.iterations),
            format!("n_thin = {}", d.project.n_thin),
            format!("folds = {}", d.crossval.folds),
            format!("target_fraction = {}", d.reduce.target_fraction),
        ] {
            assert!(DEFAULTS_HELP.contains(&needle), "{needle}");
        }
    }

    #[test]
    fn theta_star_outside_space_is_a_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.synth.theta_star = vec![0.5, 1.0];
        assert!(matches!(cfg.synth_config(), Err(CliError::Config(_))));
    }
}
