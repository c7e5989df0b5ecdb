//! Limited-memory BFGS minimizer with a backtracking Armijo line search.
//!
//! The objective may return `None` (for instance when a covariance matrix
//! fails to factor); the line search treats that as an infinitely bad point
//! and backtracks, so the returned point is never worse than the start.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub f_tol: f64,
    pub max_backtracks: usize,
    /// Upper bound on the max-norm of a single step.
    pub max_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 8, max_iters: 200, grad_tol: 1e-6, f_tol: 1e-10, max_backtracks: 40, max_step: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which returns the value and gradient or `None` when the
/// point is infeasible. Returns `None` only if the start point is infeasible.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let finite = |r: Option<(f64, Vec<f64>)>| r.filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()));
    let mut x = x0.to_vec();
    let (mut fx, mut g) = finite(f(&x))?;
    let mut evaluations = 1;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    while iterations < opts.max_iters {
        if max_abs(&g) < opts.grad_tol {
            break;
        }
        iterations += 1;

        // Two-loop recursion for d = -H g.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = history.back().map_or(1.0 / max_abs(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v / max_abs(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }
        let dmax = max_abs(&d);
        if dmax > opts.max_step {
            let scale = opts.max_step / dmax;
            d.iter_mut().for_each(|v| *v *= scale);
            slope *= scale;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            if let Some((ft, gt)) = finite(f(&trial)) {
                if ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else { break };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= opts.f_tol * (1.0 + fx.abs()) {
            break;
        }
    }
    Some(Minimum { x, value: fx, iterations, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let opts = LbfgsOptions { max_iters: 2000, f_tol: 0.0, grad_tol: 1e-9, ..Default::default() };
        let m = minimize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Minimum of (x - 3)^2 but everything beyond x = 2 is infeasible.
        let f = |x: &[f64]| (x[0] <= 2.0).then(|| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]));
        let m = minimize(f, &[0.0], &LbfgsOptions::default()).unwrap();
        assert!(m.x[0] <= 2.0 && m.x[0] > 1.9);
    }

    #[test]
    fn never_worse_than_start_and_rejects_infeasible_start() {
        let f = |x: &[f64]| Some((x[0].abs().sqrt(), vec![0.5 * x[0].signum() / x[0].abs().sqrt().max(1e-300)]));
        let m = minimize(f, &[0.3], &LbfgsOptions::default()).unwrap();
        assert!(m.value <= 0.3f64.sqrt());
        assert!(minimize(|_: &[f64]| None, &[0.0], &LbfgsOptions::default()).is_none());
    }
}
