//! Two-level autoregressive GP for one principal component.
//!
//! Stacked training vector `t = (t_C, t_E)`: cheap scores at every design
//! point, then expensive scores at the nested expensive points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{cov_cc, cov_ce, cov_ee, sq_exp};
use super::priors::{BetaPrior, HyperPriors};
use super::{cholesky_with_jitter, regressors, EmulatorError, EmulatorParams, ScoreModel};
use crate::optim::{minimize, LbfgsOptions};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// Marginal covariance of the stacked scores.
#[derive(Debug, Clone)]
pub struct JointGram<T: Real> {
    /// Regression block matrix `[[h(C), 0], [rho h(E), h(E)]]`.
    pub h: DMatrix<T>,
    /// `V + H B H'`, plus `jitter` on the diagonal.
    pub m: DMatrix<T>,
    pub jitter: T,
    pub chol: Cholesky<T, Dyn>,
}

fn check_inputs<T: Real>(theta_c: &[Vec<T>], theta_e: &[Vec<T>], params: &EmulatorParams<T>, beta: &BetaPrior<T>) -> Result<(), EmulatorError> {
    let k = params.k();
    if theta_c.iter().chain(theta_e).any(|x| x.len() != k) || beta.k() != k {
        return Err(EmulatorError::DimensionMismatch(format!("inputs, ranges and beta prior must share k = {k}")));
    }
    if theta_c.is_empty() && theta_e.is_empty() {
        return Err(EmulatorError::InsufficientData("no training inputs".into()));
    }
    Ok(())
}

/// Builds `H` and `M = V + H B H'` from the covariance functions and
/// factors `M`, escalating jitter if needed.
pub fn joint_gram<T: Real>(
    theta_c: &[Vec<T>],
    theta_e: &[Vec<T>],
    params: &EmulatorParams<T>,
    beta: &BetaPrior<T>,
) -> Result<JointGram<T>, EmulatorError> {
    check_inputs(theta_c, theta_e, params, beta)?;
    let (pc, pe, q) = (theta_c.len(), theta_e.len(), params.k() + 1);
    let n = pc + pe;
    let mut v = DMatrix::zeros(n, n);
    for i in 0..pc {
        for j in 0..pc {
            v[(i, j)] = cov_cc(&theta_c[i], &theta_c[j], params);
        }
        for j in 0..pe {
            let c = cov_ce(&theta_c[i], &theta_e[j], params);
            v[(i, pc + j)] = c;
            v[(pc + j, i)] = c;
        }
    }
    for i in 0..pe {
        for j in 0..pe {
            v[(pc + i, pc + j)] = cov_ee(&theta_e[i], &theta_e[j], params);
        }
    }
    let mut h = DMatrix::zeros(n, 2 * q);
    for (i, x) in theta_c.iter().enumerate() {
        h.view_mut((i, 0), (1, q)).copy_from(&regressors(x).transpose());
    }
    for (i, x) in theta_e.iter().enumerate() {
        let r = regressors(x).transpose();
        h.view_mut((pc + i, 0), (1, q)).copy_from(&(&r * params.rho));
        h.view_mut((pc + i, q), (1, q)).copy_from(&r);
    }
    let mut m = v + &h * beta.covariance() * h.transpose();
    m = (&m + m.transpose()) * lit::<T>(0.5);
    let (chol, jitter) = cholesky_with_jitter(&m)?;
    for i in 0..n {
        m[(i, i)] += jitter;
    }
    Ok(JointGram { h, m, jitter, chol })
}

/// Pairwise pieces of `M` needed for the likelihood and its gradient.
struct Assembled<T: Real> {
    m: DMatrix<T>,
    /// Cheap-level kernel `exp(-d' D_C^{-1} d)` over all stacked points.
    kc: DMatrix<T>,
    /// Expensive-level kernel; only the expensive block is filled.
    ke: DMatrix<T>,
    /// `h_i' B_C h_j` over all stacked points.
    gc: DMatrix<T>,
    mean: DVector<T>,
    /// `d mean / d rho`.
    dmean_drho: DVector<T>,
}

fn assemble<T: Real>(theta_c: &[Vec<T>], theta_e: &[Vec<T>], p: &EmulatorParams<T>, beta: &BetaPrior<T>) -> Assembled<T> {
    let pc = theta_c.len();
    let pts: Vec<&Vec<T>> = theta_c.iter().chain(theta_e).collect();
    let n = pts.len();
    let hs: Vec<DVector<T>> = pts.iter().map(|x| regressors(x)).collect();
    let bch: Vec<DVector<T>> = hs.iter().map(|h| &beta.cov_c * h).collect();
    let beh: Vec<DVector<T>> = hs.iter().map(|h| &beta.cov_e * h).collect();
    let mut m = DMatrix::zeros(n, n);
    let mut kc = DMatrix::zeros(n, n);
    let mut ke = DMatrix::zeros(n, n);
    let mut gc = DMatrix::zeros(n, n);
    let rho2 = p.rho * p.rho;
    for i in 0..n {
        for j in 0..=i {
            let (ei, ej) = (i >= pc, j >= pc);
            let a = match (ei, ej) {
                (false, false) => T::one(),
                (true, true) => rho2,
                _ => p.rho,
            };
            let kcij = sq_exp(pts[i], pts[j], &p.phi_c);
            let gcij = hs[i].dot(&bch[j]);
            let mut mij = a * (p.sigma2_c * kcij + gcij);
            let same = pts[i] == pts[j];
            if ei && ej {
                let keij = sq_exp(pts[i], pts[j], &p.phi_e);
                ke[(i, j)] = keij;
                ke[(j, i)] = keij;
                mij += p.sigma2_e * keij + hs[i].dot(&beh[j]);
                if same {
                    mij += p.lambda2_e;
                }
            } else if !ei && !ej && same {
                mij += p.lambda2_c;
            }
            m[(i, j)] = mij;
            m[(j, i)] = mij;
            kc[(i, j)] = kcij;
            kc[(j, i)] = kcij;
            gc[(i, j)] = gcij;
            gc[(j, i)] = gcij;
        }
    }
    let mut mean = DVector::zeros(n);
    let mut dmean_drho = DVector::zeros(n);
    for i in 0..n {
        let hc = hs[i].dot(&beta.b_c);
        if i < pc {
            mean[i] = hc;
        } else {
            mean[i] = p.rho * hc + hs[i].dot(&beta.b_e);
            dmean_drho[i] = hc;
        }
    }
    Assembled { m, kc, ke, gc, mean, dmean_drho }
}

fn stack<T: Real>(t_c: &DVector<T>, t_e: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(t_c.len() + t_e.len(), t_c.iter().chain(t_e.iter()).cloned())
}

fn log_prior<T: Real>(p: &EmulatorParams<T>, hp: &HyperPriors) -> T {
    hp.rho.ln_pdf(p.rho)
        + hp.sigma2_c.ln_pdf(p.sigma2_c)
        + hp.sigma2_e.ln_pdf(p.sigma2_e)
        + hp.lambda2_c.ln_pdf(p.lambda2_c)
        + hp.lambda2_e.ln_pdf(p.lambda2_e)
        + p.phi_c.iter().fold(T::zero(), |acc, &v| acc + hp.phi_c.ln_pdf(v))
        + p.phi_e.iter().fold(T::zero(), |acc, &v| acc + hp.phi_e.ln_pdf(v))
}

/// Log marginal density of the stacked scores plus log hyperprior density.
/// Returns negative infinity where the covariance cannot be factored.
pub fn log_posterior<T: Real>(
    params: &EmulatorParams<T>,
    hyperpriors: &HyperPriors,
    t_c: &DVector<T>,
    t_e: &DVector<T>,
    theta_c: &[Vec<T>],
    theta_e: &[Vec<T>],
    beta: &BetaPrior<T>,
) -> T {
    log_posterior_with_gradient(params, hyperpriors, t_c, t_e, theta_c, theta_e, beta)
        .map(|(v, _)| v)
        .unwrap_or_else(|_| lit(f64::NEG_INFINITY))
}

/// [`log_posterior`] and its gradient with respect to the optimizer
/// coordinates of [`EmulatorParams::to_unconstrained`]. Jitter, when
/// needed, is treated as a constant.
pub fn log_posterior_with_gradient<T: Real>(
    params: &EmulatorParams<T>,
    hp: &HyperPriors,
    t_c: &DVector<T>,
    t_e: &DVector<T>,
    theta_c: &[Vec<T>],
    theta_e: &[Vec<T>],
    beta: &BetaPrior<T>,
) -> Result<(T, Vec<T>), EmulatorError> {
    check_inputs(theta_c, theta_e, params, beta)?;
    if t_c.len() != theta_c.len() || t_e.len() != theta_e.len() {
        return Err(EmulatorError::DimensionMismatch("scores and inputs differ in length".into()));
    }
    if !params.is_valid() {
        return Err(EmulatorError::NotPositiveDefinite);
    }
    let p = params;
    let k = p.k();
    let pc = theta_c.len();
    let t = stack(t_c, t_e);
    let n = t.len();
    let a = assemble(theta_c, theta_e, p, beta);
    let (chol, _) = cholesky_with_jitter(&a.m)?;
    let r = &t - &a.mean;
    let alpha = chol.solve(&r);
    let w = chol.inverse();
    let l = chol.l_dirty();
    let log_det_half = (0..n).fold(T::zero(), |acc, i| acc + l[(i, i)].ln());
    let ll = -lit::<T>(0.5) * r.dot(&alpha) - log_det_half - lit::<T>(0.5 * (2.0 * std::f64::consts::PI).ln()) * from_usize(n);

    let pts: Vec<&Vec<T>> = theta_c.iter().chain(theta_e).collect();
    let mut g = vec![T::zero(); EmulatorParams::<T>::n_unconstrained(k)];
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    for i in 0..n {
        for j in 0..n {
            let q = half * (alpha[i] * alpha[j] - w[(i, j)]);
            let (ei, ej) = (i >= pc, j >= pc);
            let (coef, dcoef) = match (ei, ej) {
                (false, false) => (T::one(), T::zero()),
                (true, true) => (p.rho * p.rho, two * p.rho),
                _ => (p.rho, T::one()),
            };
            let cp = p.sigma2_c * a.kc[(i, j)];
            g[0] += q * dcoef * (cp + a.gc[(i, j)]);
            g[1] += q * coef * cp;
            let same = pts[i] == pts[j];
            if ei && ej {
                let ep = p.sigma2_e * a.ke[(i, j)];
                g[2] += q * ep;
                if same {
                    g[4] += q * p.lambda2_e;
                }
                for d in 0..k {
                    let dd = pts[i][d] - pts[j][d];
                    g[5 + k + d] += q * ep * dd * dd / p.phi_e[d];
                }
            } else if !ei && !ej && same {
                g[3] += q * p.lambda2_c;
            }
            for d in 0..k {
                let dd = pts[i][d] - pts[j][d];
                g[5 + d] += q * coef * cp * dd * dd / p.phi_c[d];
            }
        }
    }
    g[0] += alpha.dot(&a.dmean_drho);

    let lp = log_prior(p, hp);
    g[0] += hp.rho.dln_pdf(p.rho);
    g[1] += hp.sigma2_c.dln_pdf_dlog(p.sigma2_c);
    g[2] += hp.sigma2_e.dln_pdf_dlog(p.sigma2_e);
    g[3] += hp.lambda2_c.dln_pdf_dlog(p.lambda2_c);
    g[4] += hp.lambda2_e.dln_pdf_dlog(p.lambda2_e);
    for d in 0..k {
        g[5 + d] += hp.phi_c.dln_pdf_dlog(p.phi_c[d]);
        g[5 + k + d] += hp.phi_e.dln_pdf_dlog(p.phi_e[d]);
    }
    Ok((ll + lp, g))
}

#[derive(Debug, Clone)]
pub struct FitOptions<T> {
    /// Starting points drawn from the hyperpriors.
    pub n_starts: usize,
    pub seed: u64,
    /// Additional caller-supplied starting points.
    pub extra_starts: Vec<EmulatorParams<T>>,
    pub lbfgs: LbfgsOptions,
}

impl<T> Default for FitOptions<T> {
    fn default() -> Self {
        Self { n_starts: 8, seed: 0, extra_starts: Vec::new(), lbfgs: LbfgsOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<P> {
    pub params: P,
    pub log_posterior: f64,
    /// Objective at each start, negative infinity for infeasible starts.
    pub start_values: Vec<f64>,
}

/// Coordinates of the log-transformed parameters are kept inside this box
/// so `exp` stays finite.
pub(crate) const LOG_PARAM_LIMIT: f64 = 40.0;

fn draw_start(hp: &HyperPriors, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let clamp = |v: f64| v.ln().clamp(-20.0, 20.0);
    let mut x = vec![
        hp.rho.sample(rng),
        clamp(hp.sigma2_c.sample(rng)),
        clamp(hp.sigma2_e.sample(rng)),
        clamp(hp.lambda2_c.sample(rng)),
        clamp(hp.lambda2_e.sample(rng)),
    ];
    x.extend((0..k).map(|_| clamp(hp.phi_c.sample(rng))));
    x.extend((0..k).map(|_| clamp(hp.phi_e.sample(rng))));
    x
}

/// MAP estimate of the covariance parameters by multi-start L-BFGS.
pub fn fit<T: Real>(
    t_c: &DVector<T>,
    t_e: &DVector<T>,
    theta_c: &[Vec<T>],
    theta_e: &[Vec<T>],
    hyperpriors: &HyperPriors,
    beta: &BetaPrior<T>,
    options: &FitOptions<T>,
) -> Result<FitOutcome<EmulatorParams<T>>, EmulatorError> {
    if theta_c.len() < 2 || theta_e.len() < 2 {
        return Err(EmulatorError::InsufficientData(format!(
            "need at least 2 cheap and 2 expensive runs, got {} and {}",
            theta_c.len(),
            theta_e.len()
        )));
    }
    if !hyperpriors.is_valid() {
        return Err(EmulatorError::InvalidPriors("shape and rate parameters must be positive".into()));
    }
    let k = theta_c[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts: Vec<Vec<f64>> = (0..options.n_starts).map(|_| draw_start(hyperpriors, k, &mut rng)).collect();
    starts.extend(options.extra_starts.iter().map(|p| p.to_unconstrained()));

    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        if x[1..].iter().any(|v| v.abs() > LOG_PARAM_LIMIT) {
            return None;
        }
        let p = EmulatorParams::<T>::from_unconstrained(x, k);
        let (v, g) = log_posterior_with_gradient(&p, hyperpriors, t_c, t_e, theta_c, theta_e, beta).ok()?;
        Some((-to_f64(v), g.into_iter().map(|d| -to_f64(d)).collect()))
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_values = Vec::with_capacity(starts.len());
    for x0 in &starts {
        start_values.push(objective(x0).map_or(f64::NEG_INFINITY, |(v, _)| -v));
        if let Some(m) = minimize(objective, x0, &options.lbfgs) {
            if best.as_ref().is_none_or(|(_, b)| -m.value > *b) {
                best = Some((m.x, -m.value));
            }
        }
    }
    let (x, value) = best.ok_or(EmulatorError::AllStartsFailed)?;
    Ok(FitOutcome { params: EmulatorParams::from_unconstrained(&x, k), log_posterior: value, start_values })
}

/// A fitted multiresolution component with its cached factorization.
#[derive(Debug, Clone)]
pub struct MultiResGp<T: Real> {
    params: EmulatorParams<T>,
    beta: BetaPrior<T>,
    theta_c: Vec<Vec<T>>,
    theta_e: Vec<Vec<T>>,
    t_c: DVector<T>,
    t_e: DVector<T>,
    gram: JointGram<T>,
    /// `M^{-1} (t - H b)`.
    alpha: DVector<T>,
}

impl<T: Real> MultiResGp<T> {
    pub fn new(
        params: EmulatorParams<T>,
        beta: BetaPrior<T>,
        theta_c: Vec<Vec<T>>,
        theta_e: Vec<Vec<T>>,
        t_c: DVector<T>,
        t_e: DVector<T>,
    ) -> Result<Self, EmulatorError> {
        if t_c.len() != theta_c.len() || t_e.len() != theta_e.len() {
            return Err(EmulatorError::DimensionMismatch("scores and inputs differ in length".into()));
        }
        let gram = joint_gram(&theta_c, &theta_e, &params, &beta)?;
        let r = stack(&t_c, &t_e) - &gram.h * beta.mean();
        let alpha = gram.chol.solve(&r);
        Ok(Self { params, beta, theta_c, theta_e, t_c, t_e, gram, alpha })
    }

    pub fn params(&self) -> &EmulatorParams<T> {
        &self.params
    }

    pub fn beta(&self) -> &BetaPrior<T> {
        &self.beta
    }

    pub fn gram(&self) -> &JointGram<T> {
        &self.gram
    }

    pub fn theta_cheap(&self) -> &[Vec<T>] {
        &self.theta_c
    }

    pub fn theta_expensive(&self) -> &[Vec<T>] {
        &self.theta_e
    }

    pub fn scores_cheap(&self) -> &DVector<T> {
        &self.t_c
    }

    pub fn scores_expensive(&self) -> &DVector<T> {
        &self.t_e
    }

    /// Covariance of a new expensive output at `x` with the stacked training
    /// scores, including the regression-prior contribution.
    fn cross_cov(&self, x: &[T]) -> DVector<T> {
        let p = &self.params;
        let h0 = regressors(x);
        let bc_h0 = &self.beta.cov_c * &h0;
        let be_h0 = &self.beta.cov_e * &h0;
        let pc = self.theta_c.len();
        DVector::from_fn(pc + self.theta_e.len(), |i, _| {
            if i < pc {
                let xi = &self.theta_c[i];
                p.rho * (p.sigma2_c * sq_exp(x, xi, &p.phi_c) + regressors(xi).dot(&bc_h0))
            } else {
                let xi = &self.theta_e[i - pc];
                let hi = regressors(xi);
                p.rho * p.rho * (p.sigma2_c * sq_exp(x, xi, &p.phi_c) + hi.dot(&bc_h0))
                    + p.sigma2_e * sq_exp(x, xi, &p.phi_e)
                    + hi.dot(&be_h0)
            }
        })
    }

    /// Prior covariance of new expensive outputs at `x` and `y`, no nugget.
    fn prior_cov(&self, x: &[T], y: &[T]) -> T {
        let p = &self.params;
        let (hx, hy) = (regressors(x), regressors(y));
        p.rho * p.rho * (p.sigma2_c * sq_exp(x, y, &p.phi_c) + hx.dot(&(&self.beta.cov_c * &hy)))
            + p.sigma2_e * sq_exp(x, y, &p.phi_e)
            + hx.dot(&(&self.beta.cov_e * &hy))
    }

    fn prior_mean(&self, x: &[T]) -> T {
        let h0 = regressors(x);
        self.params.rho * h0.dot(&self.beta.b_c) + h0.dot(&self.beta.b_e)
    }
}

impl<T: Real> ScoreModel<T> for MultiResGp<T> {
    fn predict_unit(&self, x: &[T]) -> (T, T) {
        let c0 = self.cross_cov(x);
        let mean = self.prior_mean(x) + c0.dot(&self.alpha);
        let v = self.gram.chol.l_dirty().solve_lower_triangular(&c0).expect("factor has a nonzero diagonal");
        let latent = (self.prior_cov(x, x) - v.norm_squared()).max(T::zero());
        (mean, latent + self.params.lambda2_e)
    }

    fn predict_joint_unit(&self, xs: &[Vec<T>]) -> (DVector<T>, DMatrix<T>) {
        let m = xs.len();
        let n = self.alpha.len();
        let mut c0 = DMatrix::zeros(n, m);
        for (a, x) in xs.iter().enumerate() {
            c0.set_column(a, &self.cross_cov(x));
        }
        let mean = DVector::from_fn(m, |a, _| self.prior_mean(&xs[a])) + c0.transpose() * &self.alpha;
        let v = self.gram.chol.l_dirty().solve_lower_triangular(&c0).expect("factor has a nonzero diagonal");
        let mut cov = DMatrix::from_fn(m, m, |a, b| self.prior_cov(&xs[a], &xs[b])) - v.transpose() * v;
        for a in 0..m {
            cov[(a, a)] += self.params.lambda2_e;
        }
        cov = (&cov + cov.transpose()) * lit::<T>(0.5);
        (mean, cov)
    }

    fn n_mean_params(&self) -> usize {
        2 * (self.params.k() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect()
    }

    fn random_params(rng: &mut ChaCha8Rng, k: usize) -> EmulatorParams<f64> {
        EmulatorParams {
            rho: rng.random_range(-1.5..1.5),
            sigma2_c: rng.random_range(0.2..3.0),
            sigma2_e: rng.random_range(0.1..2.0),
            lambda2_c: rng.random_range(0.01..0.3),
            lambda2_e: rng.random_range(0.01..0.3),
            phi_c: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
            phi_e: (0..k).map(|_| rng.random_range(0.1..2.0)).collect(),
        }
    }

    #[test]
    fn single_cheap_point_gram() {
        let p = EmulatorParams { rho: 0.8, sigma2_c: 1.3, sigma2_e: 0.4, lambda2_c: 0.05, lambda2_e: 0.02, phi_c: vec![0.5], phi_e: vec![0.5] };
        let beta = BetaPrior::<f64>::standard(1);
        let x = vec![vec![0.4]];
        let g = joint_gram(&x, &[], &p, &beta).unwrap();
        // h B_C h' = 1 + 0.4^2 with B_C = I.
        assert!((g.m[(0, 0)] - (1.3 + 0.05 + 1.0 + 0.16)).abs() < 1e-14);
    }

    #[test]
    fn fast_assembly_matches_block_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let tc = random_points(&mut rng, 6, 2);
            let te = vec![tc[0].clone(), tc[3].clone(), random_points(&mut rng, 1, 2).remove(0)];
            let p = random_params(&mut rng, 2);
            let mut beta = BetaPrior::<f64>::standard(2);
            beta.b_c = DVector::from_vec(vec![0.3, -0.2, 0.5]);
            beta.b_e = DVector::from_vec(vec![-0.1, 0.4, 0.0]);
            beta.cov_c *= 0.7;
            let g = joint_gram(&tc, &te, &p, &beta).unwrap();
            let a = assemble(&tc, &te, &p, &beta);
            assert!((&g.m - &a.m).amax() < 1e-12);
            assert!((&g.h * beta.mean() - &a.mean).amax() < 1e-14);
            // Cached factorization reproduces M.
            let l = g.chol.l();
            assert!((&l * l.transpose() - &g.m).amax() <= 5.0 * f64::EPSILON * g.m.norm() * 4.0);
        }
    }

    #[test]
    fn quadratic_form_vanishes_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tc = random_points(&mut rng, 5, 1);
        let te = vec![tc[1].clone(), tc[2].clone()];
        let p = random_params(&mut rng, 1);
        let beta = BetaPrior::<f64>::standard(1);
        let g = joint_gram(&tc, &te, &p, &beta).unwrap();
        // b = 0 so H b = 0.
        let t_c = DVector::zeros(5);
        let t_e = DVector::zeros(2);
        let hp = HyperPriors::default();
        let lp = log_posterior(&p, &hp, &t_c, &t_e, &tc, &te, &beta) - log_prior(&p, &hp);
        let det = g.m.determinant();
        let expect = -0.5 * ((2.0 * std::f64::consts::PI).powi(7) * det).ln();
        assert!((lp - expect).abs() < 1e-9, "{lp} vs {expect}");

        // Moving along an eigenvector lowers the likelihood.
        let eig = g.m.clone().symmetric_eigen();
        let e0 = eig.eigenvectors.column(0).into_owned();
        let lp2 = log_posterior(&p, &hp, &e0.rows(0, 5).into_owned(), &e0.rows(5, 2).into_owned(), &tc, &te, &beta) - log_prior(&p, &hp);
        assert!(lp2 < lp);
    }

    #[test]
    fn one_point_scalar_density() {
        let p = EmulatorParams { rho: 0.5, sigma2_c: 0.9, sigma2_e: 0.3, lambda2_c: 0.1, lambda2_e: 0.1, phi_c: vec![1.0], phi_e: vec![1.0] };
        let beta = BetaPrior::<f64>::standard(1);
        let x = vec![vec![0.2]];
        let t = 1.7;
        let hp = HyperPriors::default();
        let lp = log_posterior(&p, &hp, &DVector::from_vec(vec![t]), &DVector::zeros(0), &x, &[], &beta) - log_prior(&p, &hp);
        let var: f64 = 0.9 + 0.1 + 1.0 + 0.04;
        let expect = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * t * t / var;
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let hp = HyperPriors::default();
        for _ in 0..5 {
            let tc = random_points(&mut rng, 7, 2);
            let te = vec![tc[0].clone(), tc[2].clone(), tc[5].clone()];
            let t_c = DVector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
            let t_e = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let mut beta = BetaPrior::<f64>::standard(2);
            beta.b_c[1] = 0.4;
            beta.b_e[0] = -0.3;
            let p = random_params(&mut rng, 2);
            let (_, g) = log_posterior_with_gradient(&p, &hp, &t_c, &t_e, &tc, &te, &beta).unwrap();
            let x0 = p.to_unconstrained();
            for i in 0..x0.len() {
                let h = 1e-5;
                let eval = |d: f64| {
                    let mut x = x0.clone();
                    x[i] += d;
                    log_posterior(&EmulatorParams::from_unconstrained(&x, 2), &hp, &t_c, &t_e, &tc, &te, &beta)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "coord {i}: fd {fd} vs analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn constant_scores_fit_without_crashing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tc = random_points(&mut rng, 8, 2);
        let te = tc[..4].to_vec();
        let beta = BetaPrior::<f64>::standard(2);
        let out = fit(
            &DVector::from_element(8, 1.0),
            &DVector::from_element(4, 1.0),
            &tc,
            &te,
            &HyperPriors::default(),
            &beta,
            &FitOptions { n_starts: 3, ..Default::default() },
        )
        .unwrap();
        assert!(out.params.is_valid());
        assert!(out.start_values.iter().all(|&v| out.log_posterior >= v));
    }

    #[test]
    fn fit_requires_two_runs_per_level() {
        let beta = BetaPrior::<f64>::standard(1);
        let r = fit(
            &DVector::from_vec(vec![0.0, 1.0]),
            &DVector::from_vec(vec![0.0]),
            &[vec![0.1], vec![0.5]],
            &[vec![0.1]],
            &HyperPriors::default(),
            &beta,
            &FitOptions::default(),
        );
        assert!(matches!(r, Err(EmulatorError::InsufficientData(_))));
    }

    #[test]
    fn predictive_variance_bounded_below_by_nugget() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tc = random_points(&mut rng, 10, 2);
        let te = tc[..5].to_vec();
        let p = random_params(&mut rng, 2);
        let gp = MultiResGp::new(
            p.clone(),
            BetaPrior::standard(2),
            tc.clone(),
            te,
            DVector::from_fn(10, |i, _| (i as f64).sin()),
            DVector::from_fn(5, |i, _| (i as f64).cos()),
        )
        .unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-0.2..1.2)).collect();
            let (_, v) = gp.predict_unit(&x);
            assert!(v >= p.lambda2_e && v > 0.0);
        }
    }
}
