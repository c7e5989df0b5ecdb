//! Reference implementations shared by the integration tests.

#![allow(dead_code)]

use mrcal::design::{Design, Fidelity, ParameterSpace};
use mrcal::emulator::{fit_multires_emulator, fit_single_res_emulator, BetaPrior, EmulatorParams, FitOptions, HyperPriors};
use mrcal::reduce::ReducedRuns;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn h(x: &[f64]) -> DVector<f64> {
    DVector::from_fn(x.len() + 1, |i, _| if i == 0 { 1.0 } else { x[i - 1] })
}

pub fn corr(x: &[f64], y: &[f64], phi: &[f64]) -> f64 {
    (-x.iter().zip(y).zip(phi).map(|((a, b), p)| (a - b) * (a - b) / p).sum::<f64>()).exp()
}

/// Moments of the stacked vector (cheap at `xc`, expensive at `xe`, then
/// new expensive outputs at `xt`) with the regression coefficients
/// integrated out. Every output has its own nugget draw.
pub fn joint_moments(
    xc: &[Vec<f64>],
    xe: &[Vec<f64>],
    xt: &[Vec<f64>],
    p: &EmulatorParams<f64>,
    b: &BetaPrior<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let pts: Vec<(bool, &Vec<f64>)> = xc.iter().map(|x| (false, x)).chain(xe.iter().chain(xt).map(|x| (true, x))).collect();
    let n = pts.len();
    let mean = DVector::from_fn(n, |i, _| {
        let hx = h(pts[i].1);
        if pts[i].0 {
            p.rho * hx.dot(&b.b_c) + hx.dot(&b.b_e)
        } else {
            hx.dot(&b.b_c)
        }
    });
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let ((ei, xi), (ej, xj)) = (pts[i], pts[j]);
        let (hi, hj) = (h(xi), h(xj));
        let eta = p.sigma2_c * corr(xi, xj, &p.phi_c) + hi.dot(&(&b.cov_c * &hj));
        let same = i == j;
        match (ei, ej) {
            (false, false) => eta + if same { p.lambda2_c } else { 0.0 },
            (true, true) => {
                p.rho * p.rho * eta + p.sigma2_e * corr(xi, xj, &p.phi_e) + hi.dot(&(&b.cov_e * &hj)) + if same { p.lambda2_e } else { 0.0 }
            }
            _ => p.rho * eta,
        }
    });
    (mean, cov)
}

/// Conditional moments of the last `n_test` coordinates given the rest,
/// using an explicit inverse.
pub fn condition(m: &DVector<f64>, c: &DMatrix<f64>, t: &DVector<f64>, n_test: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.len() - n_test;
    let inv = c.view((0, 0), (n, n)).into_owned().try_inverse().expect("invertible");
    let c21 = c.view((n, 0), (n_test, n)).into_owned();
    let mean = m.rows(n, n_test) + &c21 * &inv * (t - m.rows(0, n));
    let cov = c.view((n, n), (n_test, n_test)) - &c21 * &inv * c21.transpose();
    (mean, cov)
}

pub fn mvn_draw(rng: &mut ChaCha8Rng, m: &DVector<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let l = c.clone().cholesky().expect("positive definite").l();
    m + l * DVector::from_fn(m.len(), |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_points(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize) -> EmulatorParams<f64> {
    EmulatorParams {
        rho: rng.random_range(-1.2..1.5),
        sigma2_c: rng.random_range(0.3..2.0),
        sigma2_e: rng.random_range(0.1..1.0),
        lambda2_c: rng.random_range(0.01..0.2),
        lambda2_e: rng.random_range(0.01..0.2),
        phi_c: (0..k).map(|_| rng.random_range(0.2..2.0)).collect(),
        phi_e: (0..k).map(|_| rng.random_range(0.2..2.0)).collect(),
    }
}

pub fn random_beta(rng: &mut ChaCha8Rng, k: usize) -> BetaPrior<f64> {
    let mut spd = |n: usize| {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.2
    };
    let (cov_c, cov_e) = (spd(k + 1), spd(k + 1));
    BetaPrior {
        b_c: DVector::from_fn(k + 1, |_, _| rng.random_range(-1.0..1.0)),
        b_e: DVector::from_fn(k + 1, |_, _| rng.random_range(-1.0..1.0)),
        cov_c,
        cov_e,
    }
}

/// Two-component emulators on a 2-d space from closed-form scores.
pub fn toy_emulators() -> (mrcal::MultiResEmulator, mrcal::SingleResEmulator) {
    let mut r = rng(10);
    let space = ParameterSpace::from_bounds(&[("a", 0.0, 2.0), ("b", -1.0, 1.0)]).unwrap();
    let pts: Vec<Vec<f64>> = (0..16).map(|_| vec![r.random_range(0.0..2.0), r.random_range(-1.0..1.0)]).collect();
    let fid: Vec<Fidelity> = (0..16).map(|i| if i < 6 { Fidelity::Expensive } else { Fidelity::Cheap }).collect();
    let design = Design::new(space, pts.clone(), fid).unwrap();
    let f = |p: &[f64], s: f64| vec![(p[0] * s).sin() + p[1], p[0] * p[1] - 0.3 * s];
    // Rows: expensive runs first, then cheap runs at every point.
    let rows: Vec<Vec<f64>> = pts[..6].iter().map(|p| f(p, 1.0)).chain(pts.iter().map(|p| f(p, 0.9))).collect();
    let scores = DMatrix::from_fn(22, 2, |i, j| rows[i][j]);
    let runs = ReducedRuns::new(scores, 6);
    let (hp, beta) = (HyperPriors::default(), BetaPrior::standard(2));
    let opts = FitOptions { n_starts: 3, seed: 12, ..Default::default() };
    (fit_multires_emulator(&runs, &design, &hp, &beta, &opts).unwrap(), fit_single_res_emulator(&runs, &design, &hp, &beta, &opts).unwrap())
}
