//! Variable-at-a-time random-walk Metropolis–Hastings over `f64` coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Box constraint of one coordinate; infinite bounds for unconstrained ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNBOUNDED: Bounds = Bounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub proposal_sds: Vec<f64>,
    pub seed: u64,
    /// Tune proposal scales during burn-in, then freeze them.
    pub adapt: bool,
    pub target_acceptance: f64,
}

/// Raw sampler output; every iteration is kept, burn-in included.
#[derive(Debug, Clone, PartialEq)]
pub struct MhOutput {
    /// One state per sweep.
    pub states: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    /// Bit `i` set when coordinate `i` moved in that sweep.
    pub accepted: Vec<u64>,
    /// Per-coordinate acceptance rates after burn-in (whole chain if no
    /// sweeps remain after burn-in).
    pub acceptance_rates: Vec<f64>,
    /// Proposal scales used after burn-in.
    pub final_sds: Vec<f64>,
}

/// Runs the sampler from `x0`, which must have finite target density.
/// Proposals outside `bounds` are rejected without evaluating the target.
pub fn sample(mut log_target: impl FnMut(&[f64]) -> f64, x0: &[f64], bounds: &[Bounds], settings: &MhSettings) -> MhOutput {
    let d = x0.len();
    assert!(d <= 64, "at most 64 coordinates");
    assert_eq!(bounds.len(), d);
    assert_eq!(settings.proposal_sds.len(), d);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut x = x0.to_vec();
    let mut lp = log_target(&x);
    let mut log_sd: Vec<f64> = settings.proposal_sds.iter().map(|s| s.ln()).collect();
    let mut states = Vec::with_capacity(settings.iterations);
    let mut trace = Vec::with_capacity(settings.iterations);
    let mut accepted = Vec::with_capacity(settings.iterations);
    let mut n_acc = vec![0usize; d];
    let counted_from = if settings.burn_in < settings.iterations { settings.burn_in } else { 0 };

    for it in 0..settings.iterations {
        let mut mask = 0u64;
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let proposal = x[i] + log_sd[i].exp() * z;
            let u: f64 = rng.random();
            let mut ok = false;
            if bounds[i].contains(proposal) {
                let old = x[i];
                x[i] = proposal;
                let lp_new = log_target(&x);
                if lp_new.is_finite() && u.ln() < lp_new - lp {
                    lp = lp_new;
                    ok = true;
                } else {
                    x[i] = old;
                }
            }
            if ok {
                mask |= 1 << i;
                if it >= counted_from {
                    n_acc[i] += 1;
                }
            }
            if settings.adapt && it < settings.burn_in {
                let gain = 1.0 / (it as f64 + 1.0).powf(0.6);
                log_sd[i] += gain * (f64::from(u8::from(ok)) - settings.target_acceptance);
            }
        }
        states.push(x.clone());
        trace.push(lp);
        accepted.push(mask);
    }
    let n_counted = (settings.iterations - counted_from).max(1) as f64;
    MhOutput {
        states,
        log_target: trace,
        accepted,
        acceptance_rates: n_acc.iter().map(|&a| a as f64 / n_counted).collect(),
        final_sds: log_sd.iter().map(|s| s.exp()).collect(),
    }
}

/// Effective sample size by Geyer's initial monotone positive sequence.
/// Returns 0 for a constant series.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = autocov(0);
    if g0 <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Lag-`lag` sample autocorrelation.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let g0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if g0 == 0.0 {
        return 0.0;
    }
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / g0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(iterations: usize, burn_in: usize, sds: Vec<f64>) -> MhSettings {
        MhSettings { iterations, burn_in, proposal_sds: sds, seed: 11, adapt: false, target_acceptance: 0.35 }
    }

    #[test]
    fn one_sweep_makes_one_decision_per_coordinate() {
        let mut calls = 0;
        let out = sample(
            |_| {
                calls += 1;
                0.0
            },
            &[0.0, 0.0, 0.0],
            &[Bounds::UNBOUNDED; 3],
            &settings(1, 0, vec![1.0; 3]),
        );
        assert_eq!(out.states.len(), 1);
        // initial evaluation plus one per coordinate
        assert_eq!(calls, 4);
    }

    #[test]
    fn never_leaves_the_box() {
        let b = [Bounds { lower: 0.0, upper: 1.0 }, Bounds { lower: -2.0, upper: -1.0 }];
        let out = sample(|_| 0.0, &[0.5, -1.5], &b, &settings(2000, 0, vec![0.8, 0.8]));
        assert!(out.states.iter().all(|s| b[0].contains(s[0]) && b[1].contains(s[1])));
    }

    #[test]
    fn deterministic_per_seed() {
        let target = |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let s = MhSettings { adapt: true, ..settings(500, 100, vec![1.0, 1.0]) };
        let a = sample(target, &[0.0, 0.0], &[Bounds::UNBOUNDED; 2], &s);
        let b = sample(target, &[0.0, 0.0], &[Bounds::UNBOUNDED; 2], &s);
        assert_eq!(a, b);
    }

    #[test]
    fn ess_of_iid_and_correlated_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let iid: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&iid);
        assert!((ess / 20_000.0 - 1.0).abs() < 0.1, "{ess}");
        // AR(1) with phi = 0.9 has tau = 19.
        let mut ar = vec![0.0f64; 40_000];
        for t in 1..ar.len() {
            let e: f64 = rng.sample(StandardNormal);
            ar[t] = 0.9 * ar[t - 1] + e;
        }
        let tau = 40_000.0 / effective_sample_size(&ar);
        assert!((tau - 19.0).abs() < 4.0, "{tau}");
        assert_eq!(effective_sample_size(&[1.0; 50]), 0.0);
    }
}
