//! One function per subcommand.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mrcal::calibrate::{
    calibrated_projection, read_chain_csv, reduce_observation, run_mh, thin, write_chain_csv, Observation,
};
use mrcal::design::{augment_cheap, edge_filter, maximin_lhs, Design, Fidelity};
use mrcal::diagnostics::{extent_metrics, rmse, summarize_d, uspe, MetricReport, QuartileSummary};
use mrcal::emulator::{
    component_seed, fit_multires_emulator, fit_single_res_emulator, load_multires, load_single_res, save_multires,
    save_single_res, BetaPrior, Emulator, FitOptions, ScoreModel,
};
use mrcal::grid::{read_ascii_grid, write_ascii_grid};
use mrcal::grid::{flatten, LocationSet};
use mrcal::reduce::{fit_basis, ReducedBasis, ReducedRuns, RunEnsemble};
use mrcal::synth::{build_ensemble, run_cheap, run_expensive, simulate_observation, SynthModel};
use mrcal::{Grid, ParameterSpace};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io, num, CliError};
use crate::manifest::Manifest;

fn stage_dir(out: &Path, name: &str) -> Result<PathBuf, CliError> {
    let dir = out.join(name);
    fs::create_dir_all(&dir).map_err(io)?;
    Ok(dir)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf()))
    }
}

fn write_design(design: &Design, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    design.write_csv(&mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn read_design(space: &ParameterSpace, path: &Path) -> Result<Design, CliError> {
    require(path)?;
    let f = fs::File::open(path).map_err(io)?;
    Design::read_csv(space, BufReader::new(f)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_grid(grid: &Grid, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    write_ascii_grid(grid, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

fn read_grid(path: &Path) -> Result<Grid, CliError> {
    require(path)?;
    let f = fs::File::open(path).map_err(io)?;
    read_ascii_grid(BufReader::new(f)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn expensive_file(row: usize) -> String {
    format!("expensive_{row:04}.asc")
}

fn cheap_file(row: usize) -> String {
    format!("cheap_{row:04}.asc")
}

/// Rows tagged expensive in `full` but cheap in `train`.
fn held_rows(full: &Design, train: &Design) -> Vec<usize> {
    (0..full.len())
        .filter(|&i| full.fidelity()[i] == Fidelity::Expensive && train.fidelity()[i] == Fidelity::Cheap)
        .collect()
}

fn expensive_rows(design: &Design) -> Vec<usize> {
    (0..design.len()).filter(|&i| design.fidelity()[i] == Fidelity::Expensive).collect()
}

fn retag(design: &Design, rows: &[usize]) -> Result<Design, CliError> {
    let mut fid = design.fidelity().to_vec();
    for &r in rows {
        fid[r] = Fidelity::Cheap;
    }
    Design::new(design.space().clone(), design.points().to_vec(), fid).map_err(num)
}

fn locations(cfg: &ExperimentConfig) -> Result<LocationSet, CliError> {
    let s = cfg.synth_config()?;
    Ok(LocationSet::shared_centers(&s.fine, &s.coarse))
}

/// Loads the run grids for `design` from the run directory.
fn load_runs(out: &Path, design: &Design) -> Result<(Vec<Grid>, Vec<Grid>), CliError> {
    let runs = out.join("runs");
    let ex = expensive_rows(design).iter().map(|&r| read_grid(&runs.join(expensive_file(r)))).collect::<Result<Vec<_>, _>>()?;
    let ch = (0..design.len()).map(|r| read_grid(&runs.join(cheap_file(r)))).collect::<Result<Vec<_>, _>>()?;
    Ok((ex, ch))
}

fn ensemble(cfg: &ExperimentConfig, out: &Path, design: &Design) -> Result<RunEnsemble<f64>, CliError> {
    let (ex, ch) = load_runs(out, design)?;
    build_ensemble(design, &ex, &ch, &locations(cfg)?).map_err(num)
}

fn full_design(cfg: &ExperimentConfig, out: &Path) -> Result<Design, CliError> {
    read_design(&cfg.space()?, &out.join("design").join("design.csv"))
}

fn training_design(cfg: &ExperimentConfig, out: &Path) -> Result<Design, CliError> {
    let train = out.join("design").join("train.csv");
    if train.exists() {
        read_design(&cfg.space()?, &train)
    } else {
        full_design(cfg, out)
    }
}

pub fn design(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let space = cfg.space()?;
    let d = &cfg.design;
    let cheap_seed = component_seed(d.seed, usize::MAX);
    let expensive = maximin_lhs(&space, d.n_expensive, d.seed, d.n_candidates).map_err(|e| CliError::Config(e.to_string()))?;
    let design = augment_cheap(&expensive, &space, d.n_extra_cheap, cheap_seed, d.n_candidates).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = stage_dir(out, "design")?;
    write_design(&design, &dir.join("design.csv"))?;
    let mut m = Manifest::new("design", &cfg.hash()).seed("design", d.seed).seed("cheap_augment", cheap_seed);
    m.outputs.push("design/design.csv".into());
    m.info("n_expensive", design.n_expensive());
    m.info("n_cheap", design.n_cheap());
    let (train, holdout) = (dir.join("train.csv"), dir.join("holdout.csv"));
    if cfg.edge.enabled {
        let (kept, held) = edge_filter(&design, &cfg.edge_bands()).map_err(|e| CliError::Config(e.to_string()))?;
        write_design(&kept, &train)?;
        write_design(&held, &holdout)?;
        m.outputs.extend(["design/train.csv".to_string(), "design/holdout.csv".to_string()]);
        m.info("n_held_out", held.len());
    } else {
        for p in [&train, &holdout] {
            if p.exists() {
                fs::remove_file(p).map_err(io)?;
            }
        }
    }
    m.write(&dir)
}

pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let synth = cfg.synth_config()?;
    let design = full_design(cfg, out)?;
    let dir = stage_dir(out, "runs")?;
    let rows: Vec<usize> = (0..design.len()).collect();
    let results: Vec<(Option<Grid>, Grid)> = rows
        .par_iter()
        .map(|&i| {
            let theta = &design.points()[i];
            let fail = |e: mrcal::SynthError| CliError::ModelRun { index: i, theta: theta.clone(), message: e.to_string() };
            let fine = match design.fidelity()[i] {
                Fidelity::Expensive => Some(run_expensive(theta, &synth).map_err(fail)?),
                Fidelity::Cheap => None,
            };
            Ok((fine, run_cheap(theta, &synth).map_err(fail)?))
        })
        .collect::<Result<_, CliError>>()?;
    let mut m = Manifest::new("run-synth", &cfg.hash()).seed("observation", cfg.synth.observation_seed);
    m.inputs.push("design/design.csv".into());
    let mut index = String::from("row,fidelity,expensive_file,cheap_file\n");
    for (i, (fine, coarse)) in results.iter().enumerate() {
        let ef = fine.as_ref().map(|_| expensive_file(i)).unwrap_or_default();
        if let Some(g) = fine {
            write_grid(g, &dir.join(&ef))?;
        }
        write_grid(coarse, &dir.join(cheap_file(i)))?;
        index.push_str(&format!("{i},{},{ef},{}\n", design.fidelity()[i].as_str(), cheap_file(i)));
    }
    fs::write(dir.join("index.csv"), index).map_err(io)?;
    let obs = simulate_observation(&cfg.synth.theta_star, &synth, cfg.synth.observation_seed).map_err(num)?;
    write_grid(&obs, &dir.join("observation.asc"))?;
    m.outputs.extend(["runs/index.csv".to_string(), "runs/observation.asc".to_string()]);
    m.info("theta_star", format!("{:?}", cfg.synth.theta_star));
    m.write(&dir)
}

fn fit_options(cfg: &ExperimentConfig, seed: u64) -> FitOptions<f64> {
    FitOptions { n_starts: cfg.emulator.n_starts, seed, ..Default::default() }
}

pub fn emulate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let design = training_design(cfg, out)?;
    let ens = ensemble(cfg, out, &design)?;
    let basis = fit_basis(&ens, cfg.reduce.target_fraction).map_err(num)?;
    let runs = ReducedRuns::from_ensemble(&basis, &ens).map_err(num)?;
    let beta = BetaPrior::standard(design.space().k());
    let hp = &cfg.emulator.hyperpriors;
    let opts = fit_options(cfg, cfg.emulator.seed);
    let mr = fit_multires_emulator(&runs, &design, hp, &beta, &opts).map_err(num)?;
    let hr = fit_single_res_emulator(&runs, &design, hp, &beta, &opts).map_err(num)?;
    let dir = stage_dir(out, "emulate")?;
    let hash = cfg.hash();
    basis.save(&dir.join("basis")).map_err(io)?;
    save_multires(&mr, &dir.join("mr"), cfg.emulator.seed, &hash).map_err(io)?;
    save_single_res(&hr, &dir.join("hr"), cfg.emulator.seed, &hash).map_err(io)?;
    let mut m = Manifest::new("emulate", &hash).seed("emulator", cfg.emulator.seed);
    m.inputs.extend(["design".to_string(), "runs".to_string()]);
    m.outputs.extend(["emulate/basis".to_string(), "emulate/mr".to_string(), "emulate/hr".to_string()]);
    m.info("j_y", basis.j_y());
    m.info("variance_fraction", basis.variance_fraction());
    m.info("n_expensive", design.n_expensive());
    m.info("n_cheap", design.n_cheap());
    m.write(&dir)
}

fn load_basis(out: &Path) -> Result<ReducedBasis<f64>, CliError> {
    let dir = out.join("emulate").join("basis");
    require(&dir.join("basis.toml"))?;
    ReducedBasis::load(&dir).map_err(io)
}

fn load_mr(out: &Path) -> Result<mrcal::MultiResEmulator, CliError> {
    let dir = out.join("emulate").join("mr");
    require(&dir.join("emulator.toml"))?;
    Ok(load_multires(&dir).map_err(num)?.0)
}

fn load_hr(out: &Path) -> Result<mrcal::SingleResEmulator, CliError> {
    let dir = out.join("emulate").join("hr");
    require(&dir.join("emulator.toml"))?;
    Ok(load_single_res(&dir).map_err(num)?.0)
}

pub fn calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let basis = load_basis(out)?;
    let mr = load_mr(out)?;
    let obs = read_grid(&out.join("runs").join("observation.asc"))?;
    let z = Observation::from_grid(&obs, &locations(cfg)?).map_err(num)?;
    let z_r = reduce_observation(&z, &basis, None).map_err(num)?;
    let cc = cfg.calibration_config();
    let chain = run_mh(&z_r, &mr, &cc, None).map_err(num)?;
    let dir = stage_dir(out, "calibrate")?;
    write_chain_csv(&chain, &dir.join("chain.csv")).map_err(io)?;
    let mut m = Manifest::new("calibrate", &cfg.hash()).seed("mcmc", cc.seed);
    m.inputs.extend(["emulate/basis".to_string(), "emulate/mr".to_string(), "runs/observation.asc".to_string()]);
    m.outputs.push("calibrate/chain.csv".into());
    m.info("iterations", chain.len());
    m.info("burn_in", chain.burn_in);
    let ess = chain.ess();
    for (c, name) in chain.names.iter().enumerate() {
        let (lo, hi) = chain.credible_interval(c, 0.05);
        m.info(&format!("{name}.ess"), ess[c]);
        m.info(&format!("{name}.acceptance"), chain.acceptance_rates[c]);
        m.info(&format!("{name}.posterior_mean"), chain.posterior_mean(c));
        m.info(&format!("{name}.ci95"), format!("[{lo}, {hi}]"));
    }
    m.info("min_ess", ess.iter().cloned().fold(f64::INFINITY, f64::min));
    m.write(&dir)
}

pub fn project(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let cal = out.join("calibrate");
    let cm = Manifest::read(&cal)?;
    let burn_in: usize = cm.info.get("burn_in").and_then(|s| s.parse().ok()).ok_or_else(|| CliError::Io("calibrate manifest lacks burn_in".into()))?;
    let seed = cm.seeds.get("mcmc").copied().unwrap_or_default();
    let chain_path = cal.join("chain.csv");
    require(&chain_path)?;
    let chain = read_chain_csv(&chain_path, seed, burn_in).map_err(io)?;
    let thetas = thin(&chain, cfg.project.n_thin, cfg.project.seed).map_err(num)?;
    let model = SynthModel { config: cfg.synth_config()? };
    let grid: Grid = calibrated_projection(&thetas, &model).map_err(num)?;
    let dir = stage_dir(out, "project")?;
    write_grid(&grid, &dir.join("projection.asc"))?;
    let mut s: String = chain.names[..chain.k].iter().map(|n| format!("theta_{n}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for t in &thetas {
        s.push_str(&t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    fs::write(dir.join("thinned.csv"), s).map_err(io)?;
    let mut m = Manifest::new("project", &cfg.hash()).seed("thin", cfg.project.seed);
    m.inputs.push("calibrate/chain.csv".into());
    m.outputs.extend(["project/projection.asc".to_string(), "project/thinned.csv".to_string()]);
    m.info("n_thin", thetas.len());
    m.write(&dir)
}

#[derive(Debug, Serialize)]
struct UspeSummary {
    emulator: String,
    component: usize,
    n_test: usize,
    df: usize,
    exceedance_rate_95: f64,
    qq_file: String,
}

#[derive(Debug, Serialize)]
struct DiagnoseReport {
    flood_threshold: f64,
    metrics: MetricReport,
    uspe: Vec<UspeSummary>,
    uspe_note: String,
}

fn uspe_for<G: ScoreModel<f64>>(
    name: &str,
    emu: &Emulator<f64, G>,
    thetas: &[Vec<f64>],
    scores: &nalgebra::DMatrix<f64>,
    dir: &Path,
    out: &mut Vec<UspeSummary>,
) -> Result<(), CliError> {
    for j in 0..emu.n_components() {
        let (mean, cov) = emu.predict_joint(j, thetas);
        let y = scores.column(j).into_owned();
        let r = match uspe(&y, &mean, &cov, emu.n_mean_params()) {
            Ok(r) => r,
            Err(mrcal::DiagnosticsError::NonPositiveDf(_)) => return Ok(()),
            Err(e) => return Err(num(e)),
        };
        let file = format!("qq_{name}_pc{j}.csv");
        fs::write(dir.join(&file), r.qq_csv()).map_err(io)?;
        out.push(UspeSummary {
            emulator: name.into(),
            component: j,
            n_test: thetas.len(),
            df: r.df,
            exceedance_rate_95: r.exceedance_rate(0.05),
            qq_file: file,
        });
    }
    Ok(())
}

pub fn diagnose(cfg: &ExperimentConfig, out: &Path, pred: Option<&Path>, obs: Option<&Path>) -> Result<(), CliError> {
    let pred_path = pred.map_or_else(|| out.join("project").join("projection.asc"), Path::to_path_buf);
    let obs_path = obs.map_or_else(|| out.join("runs").join("observation.asc"), Path::to_path_buf);
    let p = read_grid(&pred_path)?;
    let o = read_grid(&obs_path)?;
    let metrics = extent_metrics(&p, &o, cfg.diagnose.flood_threshold).map_err(num)?;
    let dir = stage_dir(out, "diagnose")?;
    let mut uspes = Vec::new();
    let mut note = String::from("no held-out expensive runs");
    if out.join("design").join("train.csv").exists() {
        let full = full_design(cfg, out)?;
        let train = training_design(cfg, out)?;
        let held = held_rows(&full, &train);
        if !held.is_empty() {
            let basis = load_basis(out)?;
            let locs = locations(cfg)?;
            let runs = out.join("runs");
            let rows = held
                .iter()
                .map(|&r| flatten(&read_grid(&runs.join(expensive_file(r)))?, &locs).map_err(num))
                .collect::<Result<Vec<_>, CliError>>()?;
            let y = nalgebra::DMatrix::from_fn(rows.len(), locs.len(), |i, c| rows[i][c]);
            let scores = basis.project(&y).map_err(num)?;
            let thetas: Vec<Vec<f64>> = held.iter().map(|&r| full.points()[r].clone()).collect();
            uspe_for("mr", &load_mr(out)?, &thetas, &scores, &dir, &mut uspes)?;
            uspe_for("hr", &load_hr(out)?, &thetas, &scores, &dir, &mut uspes)?;
            note = format!("{} held-out expensive runs; components with df <= 0 skipped", held.len());
        }
    }
    let report = DiagnoseReport { flood_threshold: cfg.diagnose.flood_threshold, metrics: metrics.clone(), uspe: uspes, uspe_note: note };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report).map_err(io)? + "\n").map_err(io)?;
    fs::write(dir.join("metrics.txt"), metrics.table()).map_err(io)?;
    let mut m = Manifest::new("diagnose", &cfg.hash());
    // Only relative names of the inputs, so manifests do not depend on where `out` lives.
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    m.inputs.extend([name(&pred_path), name(&obs_path)]);
    m.outputs.extend(["diagnose/metrics.json".to_string(), "diagnose/metrics.txt".to_string()]);
    m.write(&dir)
}

/// RMSE of both emulators' mean fields against the true expensive runs at
/// `held` rows, after training on `design` with those rows retagged cheap.
pub struct HoldoutResult {
    pub row: usize,
    pub rmse_mr: f64,
    pub rmse_hr: f64,
}

impl HoldoutResult {
    pub fn d(&self) -> f64 {
        self.rmse_mr - self.rmse_hr
    }
}

fn evaluate_holdout(
    cfg: &ExperimentConfig,
    full: &Design,
    held: &[usize],
    ex_all: &[(usize, Grid)],
    ch_all: &[Grid],
    seed: u64,
) -> Result<Vec<HoldoutResult>, CliError> {
    let locs = locations(cfg)?;
    let train = retag(full, held)?;
    let ex: Vec<Grid> = ex_all.iter().filter(|(r, _)| !held.contains(r)).map(|(_, g)| g.clone()).collect();
    let ens = build_ensemble::<f64>(&train, &ex, ch_all, &locs).map_err(num)?;
    let basis = fit_basis(&ens, cfg.reduce.target_fraction).map_err(num)?;
    let runs = ReducedRuns::from_ensemble(&basis, &ens).map_err(num)?;
    let beta = BetaPrior::standard(full.space().k());
    let hp = &cfg.emulator.hyperpriors;
    let opts = fit_options(cfg, seed);
    let mr = fit_multires_emulator(&runs, &train, hp, &beta, &opts).map_err(num)?;
    let hr = fit_single_res_emulator(&runs, &train, hp, &beta, &opts).map_err(num)?;
    held.iter()
        .map(|&r| {
            let truth = flatten(&ex_all.iter().find(|(i, _)| *i == r).expect("held row is expensive").1, &locs).map_err(num)?;
            let theta = &full.points()[r];
            let field = |m: &nalgebra::DVector<f64>| basis.reconstruct_row(m.as_slice()).map_err(num);
            let pm = field(&mr.predict(theta).mean)?;
            let ph = field(&hr.predict(theta).mean)?;
            Ok(HoldoutResult { row: r, rmse_mr: rmse(pm.as_slice(), &truth).map_err(num)?, rmse_hr: rmse(ph.as_slice(), &truth).map_err(num)? })
        })
        .collect()
}

pub fn crossval(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let full = full_design(cfg, out)?;
    let (ex, ch) = load_runs(out, &full)?;
    let ex_rows = expensive_rows(&full);
    let ex_all: Vec<(usize, Grid)> = ex_rows.iter().cloned().zip(ex).collect();
    let folds = cfg.crossval.folds.min(ex_rows.len());
    let mut order = ex_rows.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.crossval.seed));

    let mut cv = Vec::new();
    for f in 0..folds {
        let mut held: Vec<usize> = order.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, &r)| r).collect();
        held.sort_unstable();
        if ex_rows.len() - held.len() < 2 {
            return Err(CliError::Config("too few expensive runs for the requested folds".into()));
        }
        cv.extend(evaluate_holdout(cfg, &full, &held, &ex_all, &ch, component_seed(cfg.crossval.seed, f))?);
    }
    let bands = cfg.edge_bands();
    let edge = if bands.iter().any(|b| b.low > 0.0 || b.high > 0.0) {
        let (kept, _) = edge_filter(&full, &bands).map_err(|e| CliError::Config(e.to_string()))?;
        let held = held_rows(&full, &kept);
        if held.is_empty() {
            Vec::new()
        } else {
            evaluate_holdout(cfg, &full, &held, &ex_all, &ch, component_seed(cfg.crossval.seed, folds))?
        }
    } else {
        Vec::new()
    };

    let dir = stage_dir(out, "crossval")?;
    let mut csv = String::from("set,row,rmse_mr,rmse_hr,d_mr_hr\n");
    for (set, rs) in [("cv", &cv), ("edge", &edge)] {
        for r in rs.iter() {
            csv.push_str(&format!("{set},{},{},{},{}\n", r.row, r.rmse_mr, r.rmse_hr, r.d()));
        }
    }
    fs::write(dir.join("d_values.csv"), csv).map_err(io)?;
    let table = |rs: &[HoldoutResult]| -> Result<String, CliError> {
        let s = summarize_d(&rs.iter().map(HoldoutResult::d).collect::<Vec<_>>()).map_err(num)?;
        Ok(format!("{}\n{}\n", QuartileSummary::HEADER, s.row()))
    };
    fs::write(dir.join("table.txt"), table(&cv)?).map_err(io)?;
    let mut m = Manifest::new("crossval", &cfg.hash()).seed("crossval", cfg.crossval.seed);
    m.inputs.extend(["design/design.csv".to_string(), "runs".to_string()]);
    m.outputs.extend(["crossval/d_values.csv".to_string(), "crossval/table.txt".to_string()]);
    m.info("folds", folds);
    if !edge.is_empty() {
        fs::write(dir.join("edge_table.txt"), table(&edge)?).map_err(io)?;
        m.outputs.push("crossval/edge_table.txt".into());
        m.info("n_edge", edge.len());
    }
    m.write(&dir)
}
