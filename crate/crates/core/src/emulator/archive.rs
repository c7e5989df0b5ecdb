//! On-disk emulator archive.
//!
//! Layout of an archive directory:
//! - `emulator.toml`: kind, parameter space, component count, seed, config hash
//! - `theta_cheap.csv`, `theta_expensive.csv`: unit-scaled training inputs
//! - `scores_cheap.csv`, `scores_expensive.csv`: training scores, one column per component
//! - `beta_mean.csv`, `beta_cov_c.csv`, `beta_cov_e.csv`: regression prior
//! - `pc_<j>.csv`: `name,value` covariance parameters of component `j`
//!
//! Numbers are written in shortest round-trip form, so a reloaded emulator
//! predicts bit-for-bit the same values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Emulator, EmulatorError, EmulatorParams, MultiResEmulator, MultiResGp, SingleResEmulator, SingleResGp, SingleResParams};
use super::priors::BetaPrior;
use crate::design::{ParamDim, ParameterSpace};
use crate::io::{ensure_dir, read_matrix_csv, read_toml, read_vector_csv, write_matrix_csv, write_toml, write_vector_csv, IoError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorManifest {
    /// `"multires"` or `"single"`.
    pub kind: String,
    pub n_components: usize,
    pub parameters: Vec<ArchiveParam>,
    pub seed: u64,
    pub config_hash: String,
}

const MANIFEST: &str = "emulator.toml";

fn manifest_for(kind: &str, space: &ParameterSpace, n: usize, seed: u64, config_hash: &str) -> EmulatorManifest {
    EmulatorManifest {
        kind: kind.into(),
        n_components: n,
        parameters: space.dims().iter().map(|d| ArchiveParam { name: d.name.clone(), lower: d.lower, upper: d.upper }).collect(),
        seed,
        config_hash: config_hash.into(),
    }
}

fn read_manifest(dir: &Path, kind: &str) -> Result<(EmulatorManifest, ParameterSpace), EmulatorError> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(EmulatorError::Io(IoError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "missing emulator manifest"),
        }));
    }
    let m: EmulatorManifest = read_toml(&path)?;
    if m.kind != kind {
        return Err(EmulatorError::Archive(format!("expected a {kind} archive, found {}", m.kind)));
    }
    let space = ParameterSpace::new(m.parameters.iter().map(|p| ParamDim { name: p.name.clone(), lower: p.lower, upper: p.upper }).collect())
        .map_err(|e| EmulatorError::Archive(e.to_string()))?;
    Ok((m, space))
}

fn points_matrix<T: Real>(pts: &[Vec<T>], k: usize) -> DMatrix<T> {
    DMatrix::from_fn(pts.len(), k, |i, j| pts[i][j])
}

fn matrix_points<T: Real>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn write_named(path: &Path, entries: &[(String, String)]) -> Result<(), EmulatorError> {
    let mut s = String::from("name,value\n");
    for (n, v) in entries {
        let _ = writeln!(s, "{n},{v}");
    }
    fs::write(path, s).map_err(|source| EmulatorError::Io(IoError::Io { path: path.display().to_string(), source }))
}

fn read_named<T: Real>(path: &Path) -> Result<Vec<(String, T)>, EmulatorError> {
    let text = fs::read_to_string(path).map_err(|source| EmulatorError::Io(IoError::Io { path: path.display().to_string(), source }))?;
    let mut lines = text.lines();
    if lines.next() != Some("name,value") {
        return Err(EmulatorError::Archive(format!("{}: bad header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (n, v) = l.split_once(',').ok_or_else(|| EmulatorError::Archive(format!("{}: bad line {l:?}", path.display())))?;
            let v = v.trim().parse::<T>().map_err(|_| EmulatorError::Archive(format!("{}: bad number {v:?}", path.display())))?;
            Ok((n.to_string(), v))
        })
        .collect()
}

fn lookup<T: Copy>(entries: &[(String, T)], name: &str) -> Result<T, EmulatorError> {
    entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v).ok_or_else(|| EmulatorError::Archive(format!("missing parameter {name}")))
}

fn save_beta<T: Real>(dir: &Path, beta: &BetaPrior<T>) -> Result<(), EmulatorError> {
    write_vector_csv(&dir.join("beta_mean.csv"), &beta.mean())?;
    write_matrix_csv(&dir.join("beta_cov_c.csv"), &beta.cov_c)?;
    write_matrix_csv(&dir.join("beta_cov_e.csv"), &beta.cov_e)?;
    Ok(())
}

fn load_beta<T: Real>(dir: &Path) -> Result<BetaPrior<T>, EmulatorError> {
    let mean: DVector<T> = read_vector_csv(&dir.join("beta_mean.csv"))?;
    let n = mean.len() / 2;
    let beta = BetaPrior {
        b_c: mean.rows(0, n).into_owned(),
        b_e: mean.rows(n, n).into_owned(),
        cov_c: read_matrix_csv(&dir.join("beta_cov_c.csv"))?,
        cov_e: read_matrix_csv(&dir.join("beta_cov_e.csv"))?,
    };
    if mean.len() != 2 * n || !beta.is_valid() {
        return Err(EmulatorError::Archive("invalid regression prior".into()));
    }
    Ok(beta)
}

fn scores_matrix<T: Real>(cols: Vec<&DVector<T>>, rows: usize) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

pub fn save_multires<T: Real>(emu: &MultiResEmulator<T>, dir: &Path, seed: u64, config_hash: &str) -> Result<(), EmulatorError> {
    let comps = emu.components();
    let first = comps.first().ok_or_else(|| EmulatorError::Archive("emulator has no components".into()))?;
    let k = emu.space().k();
    ensure_dir(dir)?;
    write_toml(&dir.join(MANIFEST), &manifest_for("multires", emu.space(), comps.len(), seed, config_hash))?;
    write_matrix_csv(&dir.join("theta_cheap.csv"), &points_matrix(first.theta_cheap(), k))?;
    write_matrix_csv(&dir.join("theta_expensive.csv"), &points_matrix(first.theta_expensive(), k))?;
    write_matrix_csv(&dir.join("scores_cheap.csv"), &scores_matrix(comps.iter().map(|c| c.scores_cheap()).collect(), first.theta_cheap().len()))?;
    write_matrix_csv(
        &dir.join("scores_expensive.csv"),
        &scores_matrix(comps.iter().map(|c| c.scores_expensive()).collect(), first.theta_expensive().len()),
    )?;
    save_beta(dir, first.beta())?;
    for (j, c) in comps.iter().enumerate() {
        let p = c.params();
        let mut e = vec![
            ("rho".to_string(), p.rho.to_string()),
            ("sigma2_c".to_string(), p.sigma2_c.to_string()),
            ("sigma2_e".to_string(), p.sigma2_e.to_string()),
            ("lambda2_c".to_string(), p.lambda2_c.to_string()),
            ("lambda2_e".to_string(), p.lambda2_e.to_string()),
        ];
        e.extend(p.phi_c.iter().enumerate().map(|(d, v)| (format!("phi_c_{d}"), v.to_string())));
        e.extend(p.phi_e.iter().enumerate().map(|(d, v)| (format!("phi_e_{d}"), v.to_string())));
        write_named(&dir.join(format!("pc_{j}.csv")), &e)?;
    }
    Ok(())
}

pub fn load_multires<T: Real>(dir: &Path) -> Result<(MultiResEmulator<T>, EmulatorManifest), EmulatorError> {
    let (manifest, space) = read_manifest(dir, "multires")?;
    let k = space.k();
    let theta_c = matrix_points(&read_matrix_csv::<T>(&dir.join("theta_cheap.csv"))?);
    let theta_e = matrix_points(&read_matrix_csv::<T>(&dir.join("theta_expensive.csv"))?);
    let sc: DMatrix<T> = read_matrix_csv(&dir.join("scores_cheap.csv"))?;
    let se: DMatrix<T> = read_matrix_csv(&dir.join("scores_expensive.csv"))?;
    if sc.ncols() != manifest.n_components || se.ncols() != manifest.n_components || sc.nrows() != theta_c.len() || se.nrows() != theta_e.len() {
        return Err(EmulatorError::Archive("score files do not match the manifest".into()));
    }
    let beta = load_beta::<T>(dir)?;
    let mut comps = Vec::with_capacity(manifest.n_components);
    for j in 0..manifest.n_components {
        let e = read_named::<T>(&dir.join(format!("pc_{j}.csv")))?;
        let params = EmulatorParams {
            rho: lookup(&e, "rho")?,
            sigma2_c: lookup(&e, "sigma2_c")?,
            sigma2_e: lookup(&e, "sigma2_e")?,
            lambda2_c: lookup(&e, "lambda2_c")?,
            lambda2_e: lookup(&e, "lambda2_e")?,
            phi_c: (0..k).map(|d| lookup(&e, &format!("phi_c_{d}"))).collect::<Result<_, _>>()?,
            phi_e: (0..k).map(|d| lookup(&e, &format!("phi_e_{d}"))).collect::<Result<_, _>>()?,
        };
        comps.push(MultiResGp::new(params, beta.clone(), theta_c.clone(), theta_e.clone(), sc.column(j).into_owned(), se.column(j).into_owned())?);
    }
    Ok((Emulator::new(space, comps), manifest))
}

pub fn save_single_res<T: Real>(emu: &SingleResEmulator<T>, dir: &Path, seed: u64, config_hash: &str) -> Result<(), EmulatorError> {
    let comps = emu.components();
    let first = comps.first().ok_or_else(|| EmulatorError::Archive("emulator has no components".into()))?;
    let k = emu.space().k();
    ensure_dir(dir)?;
    write_toml(&dir.join(MANIFEST), &manifest_for("single", emu.space(), comps.len(), seed, config_hash))?;
    write_matrix_csv(&dir.join("theta_expensive.csv"), &points_matrix(first.theta(), k))?;
    write_matrix_csv(&dir.join("scores_expensive.csv"), &scores_matrix(comps.iter().map(|c| c.scores()).collect(), first.theta().len()))?;
    save_beta(dir, first.beta())?;
    for (j, c) in comps.iter().enumerate() {
        let p = c.params();
        let mut e = vec![("sigma2".to_string(), p.sigma2.to_string()), ("lambda2".to_string(), p.lambda2.to_string())];
        e.extend(p.phi.iter().enumerate().map(|(d, v)| (format!("phi_{d}"), v.to_string())));
        write_named(&dir.join(format!("pc_{j}.csv")), &e)?;
    }
    Ok(())
}

pub fn load_single_res<T: Real>(dir: &Path) -> Result<(SingleResEmulator<T>, EmulatorManifest), EmulatorError> {
    let (manifest, space) = read_manifest(dir, "single")?;
    let k = space.k();
    let theta = matrix_points(&read_matrix_csv::<T>(&dir.join("theta_expensive.csv"))?);
    let se: DMatrix<T> = read_matrix_csv(&dir.join("scores_expensive.csv"))?;
    if se.ncols() != manifest.n_components || se.nrows() != theta.len() {
        return Err(EmulatorError::Archive("score file does not match the manifest".into()));
    }
    let beta = load_beta::<T>(dir)?;
    let mut comps = Vec::with_capacity(manifest.n_components);
    for j in 0..manifest.n_components {
        let e = read_named::<T>(&dir.join(format!("pc_{j}.csv")))?;
        let params = SingleResParams {
            sigma2: lookup(&e, "sigma2")?,
            lambda2: lookup(&e, "lambda2")?,
            phi: (0..k).map(|d| lookup(&e, &format!("phi_{d}"))).collect::<Result<_, _>>()?,
        };
        comps.push(SingleResGp::new(params, beta.clone(), theta.clone(), se.column(j).into_owned())?);
    }
    Ok((Emulator::new(space, comps), manifest))
}
