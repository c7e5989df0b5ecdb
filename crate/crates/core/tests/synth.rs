mod common;

use mrcal::design::maximin_lhs;
use mrcal::grid::{bilinear_interpolate, flatten, LocationSet};
use mrcal::synth::{run_cheap, run_design, run_expensive, simulate_observation, SynthConfig};
use proptest::prelude::*;

// Default domain: the fine grid spans [0, 32] in both directions.
fn expensive_oracle(a: f64, b: f64, x: f64, y: f64) -> f64 {
    let amp = 10.0 * (a - 0.02) / 0.08;
    let w = 0.1 + 0.3 * (b - 0.95) / 0.1;
    let d = (x - y).abs() / 2f64.sqrt() / 32.0;
    (amp * (-d * d / (2.0 * w * w)).exp() - 0.05).max(0.0)
}

#[test]
fn expensive_cells_match_closed_form() {
    let c = SynthConfig::default();
    let g = run_expensive(&[0.047, 1.013], &c).unwrap();
    for (r, col) in [(0, 0), (3, 17), (31, 0), (12, 30)] {
        let (x, y) = c.fine.center(r, col);
        assert!((g.get(r, col).unwrap() - expensive_oracle(0.047, 1.013, x, y)).abs() < 1e-12);
    }
}

#[test]
fn coarse_cells_match_closed_form() {
    let c = SynthConfig::default();
    let theta = [0.08, 0.97];
    let g = run_cheap(&theta, &c).unwrap();
    for r in 0..8 {
        for col in 0..8 {
            let (x, y) = c.coarse.center(r, col);
            let f = expensive_oracle(theta[0], theta[1], x, y);
            let bias = if f > 0.0 { 0.1 * (4.0 * std::f64::consts::PI * x / 32.0).sin() } else { 0.0 };
            assert!((g.get(r, col).unwrap() - (0.9 * f + bias).max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn unbiased_unit_ratio_cheap_run_is_the_expensive_formula() {
    let c = SynthConfig { cheap_bias: 0.0, rho_true: 1.0, ..SynthConfig::default() };
    let g = run_cheap(&[0.05, 1.02], &c).unwrap();
    for r in 0..8 {
        for col in 0..8 {
            let (x, y) = c.coarse.center(r, col);
            assert_eq!(g.get(r, col).unwrap(), c.depth_at(&[0.05, 1.02], x, y));
        }
    }
}

#[test]
fn zero_ratio_cheap_run_is_pure_bias() {
    let c = SynthConfig { rho_true: 0.0, ..SynthConfig::default() };
    let a = run_cheap(&[0.05, 1.0], &c).unwrap();
    let b = run_cheap(&[0.09, 1.0], &c).unwrap();
    for r in 0..8 {
        for col in 0..8 {
            let v = a.get(r, col).unwrap();
            assert!(v <= 0.1 + 1e-15);
            if c.depth_at(&[0.05, 1.0], c.coarse.center(r, col).0, c.coarse.center(r, col).1) > 0.0 {
                assert_eq!(v, b.get(r, col).unwrap());
            }
        }
    }
}

#[test]
fn observation_noise_properties() {
    let theta = [0.0305, 1.0];
    let quiet = SynthConfig { noise_sd: 0.0, ..SynthConfig::default() };
    assert_eq!(simulate_observation(&theta, &quiet, 1).unwrap(), run_expensive(&theta, &quiet).unwrap());

    let c = SynthConfig::default();
    let truth = run_expensive(&theta, &c).unwrap();
    let obs = simulate_observation(&theta, &c, 2).unwrap();
    assert_eq!(obs, simulate_observation(&theta, &c, 2).unwrap());
    let mut resid = Vec::new();
    for (t, o) in truth.values().iter().zip(obs.values()) {
        assert!(*o >= 0.0);
        if *t == 0.0 {
            assert_eq!(*o, 0.0);
        } else if *o > 0.0 {
            resid.push(o - t);
        }
    }
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();
    assert!((sd - 0.03).abs() <= 0.005, "sd {sd} over {} cells", resid.len());
}

#[test]
fn cheap_runs_track_expensive_runs() {
    let c = SynthConfig::default();
    let d = maximin_lhs(&c.space(), 20, 3, 50).unwrap();
    let (ex, ch) = run_design(&d, &c).unwrap();
    let locs = LocationSet::shared_centers(&c.fine, &c.coarse);
    let (mut e, mut k) = (Vec::new(), Vec::new());
    for (g, h) in ex.iter().zip(&ch) {
        e.extend(flatten(g, &locs).unwrap());
        k.extend(bilinear_interpolate(h, &locs).unwrap());
    }
    let n = e.len() as f64;
    let (me, mk) = (e.iter().sum::<f64>() / n, k.iter().sum::<f64>() / n);
    let cov: f64 = e.iter().zip(&k).map(|(a, b)| (a - me) * (b - mk)).sum();
    let ve: f64 = e.iter().map(|a| (a - me).powi(2)).sum();
    let vk: f64 = k.iter().map(|b| (b - mk).powi(2)).sum();
    let r = cov / (ve * vk).sqrt();
    assert!(r > 0.8, "pearson r {r}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn depth_monotone_in_first_parameter(a in 0.02f64..0.1, da in 0.0f64..0.05, b in 0.95f64..1.05) {
        let c = SynthConfig::default();
        let a2 = (a + da).min(0.1);
        let (g1, g2) = (run_expensive(&[a, b], &c).unwrap(), run_expensive(&[a2, b], &c).unwrap());
        prop_assert!(g1.values().iter().zip(g2.values()).all(|(x, y)| y >= x));
        let (c1, c2) = (run_cheap(&[a, b], &c).unwrap(), run_cheap(&[a2, b], &c).unwrap());
        prop_assert!(c1.values().iter().chain(c2.values()).all(|v| *v >= 0.0));
    }

    #[test]
    fn observations_are_deterministic_and_nonnegative(a in 0.02f64..0.1, b in 0.95f64..1.05, seed in any::<u64>()) {
        let c = SynthConfig::default();
        let o = simulate_observation(&[a, b], &c, seed).unwrap();
        prop_assert!(o.values().iter().all(|v| *v >= 0.0));
        prop_assert_eq!(o, simulate_observation(&[a, b], &c, seed).unwrap());
    }
}
