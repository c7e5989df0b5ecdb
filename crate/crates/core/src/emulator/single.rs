//! Single-resolution GP on expensive scores only.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::sq_exp;
use super::multires::LOG_PARAM_LIMIT;
use super::priors::{BetaPrior, HyperPriors};
use super::{cholesky_with_jitter, regressors, EmulatorError, ScoreModel};
use crate::optim::{minimize, LbfgsOptions};
use crate::scalar::{from_usize, lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SingleResParams<T> {
    pub sigma2: T,
    pub lambda2: T,
    pub phi: Vec<T>,
}

impl<T: Real> SingleResParams<T> {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn is_valid(&self) -> bool {
        let pos = |v: T| v > T::zero() && v.is_finite();
        pos(self.sigma2) && pos(self.lambda2) && self.phi.iter().all(|&v| pos(v))
    }

    /// `[ln sigma2, ln lambda2, ln phi..]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut x = vec![to_f64(self.sigma2).ln(), to_f64(self.lambda2).ln()];
        x.extend(self.phi.iter().map(|&v| to_f64(v).ln()));
        x
    }

    pub fn from_unconstrained(x: &[f64]) -> Self {
        Self { sigma2: lit(x[0].exp()), lambda2: lit(x[1].exp()), phi: x[2..].iter().map(|v| lit(v.exp())).collect() }
    }
}

fn gram<T: Real>(theta: &[Vec<T>], p: &SingleResParams<T>, beta: &BetaPrior<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = theta.len();
    let mut h = DMatrix::zeros(n, p.k() + 1);
    for (i, x) in theta.iter().enumerate() {
        h.set_row(i, &regressors(x).transpose());
    }
    let k = DMatrix::from_fn(n, n, |i, j| sq_exp(&theta[i], &theta[j], &p.phi));
    let mut m = &k * p.sigma2 + &h * &beta.cov_e * h.transpose();
    for i in 0..n {
        m[(i, i)] += p.lambda2;
    }
    (k, (&m + m.transpose()) * lit::<T>(0.5))
}

/// Log marginal density of `t` plus log hyperprior density (expensive-level
/// priors), with the gradient in `[ln sigma2, ln lambda2, ln phi..]`.
pub fn log_posterior_hr_with_gradient<T: Real>(
    params: &SingleResParams<T>,
    hp: &HyperPriors,
    t: &DVector<T>,
    theta: &[Vec<T>],
    beta: &BetaPrior<T>,
) -> Result<(T, Vec<T>), EmulatorError> {
    let kd = params.k();
    if t.len() != theta.len() || theta.iter().any(|x| x.len() != kd) || beta.k() != kd {
        return Err(EmulatorError::DimensionMismatch("scores, inputs and priors disagree".into()));
    }
    if !params.is_valid() {
        return Err(EmulatorError::NotPositiveDefinite);
    }
    let n = t.len();
    let (k, m) = gram(theta, params, beta);
    let (chol, _) = cholesky_with_jitter(&m)?;
    let mean = DVector::from_fn(n, |i, _| regressors(&theta[i]).dot(&beta.b_e));
    let r = t - mean;
    let alpha = chol.solve(&r);
    let w = chol.inverse();
    let l = chol.l_dirty();
    let log_det_half = (0..n).fold(T::zero(), |acc, i| acc + l[(i, i)].ln());
    let ll = -lit::<T>(0.5) * r.dot(&alpha) - log_det_half - lit::<T>(0.5 * (2.0 * std::f64::consts::PI).ln()) * from_usize(n);

    let mut g = vec![T::zero(); 2 + kd];
    let half = lit::<T>(0.5);
    for i in 0..n {
        for j in 0..n {
            let q = half * (alpha[i] * alpha[j] - w[(i, j)]);
            let sk = params.sigma2 * k[(i, j)];
            g[0] += q * sk;
            if i == j {
                g[1] += q * params.lambda2;
            }
            for d in 0..kd {
                let dd = theta[i][d] - theta[j][d];
                g[2 + d] += q * sk * dd * dd / params.phi[d];
            }
        }
    }
    let lp = hp.sigma2_e.ln_pdf(params.sigma2)
        + hp.lambda2_e.ln_pdf(params.lambda2)
        + params.phi.iter().fold(T::zero(), |acc, &v| acc + hp.phi_e.ln_pdf(v));
    g[0] += hp.sigma2_e.dln_pdf_dlog(params.sigma2);
    g[1] += hp.lambda2_e.dln_pdf_dlog(params.lambda2);
    for d in 0..kd {
        g[2 + d] += hp.phi_e.dln_pdf_dlog(params.phi[d]);
    }
    Ok((ll + lp, g))
}

pub fn log_posterior_hr<T: Real>(params: &SingleResParams<T>, hp: &HyperPriors, t: &DVector<T>, theta: &[Vec<T>], beta: &BetaPrior<T>) -> T {
    log_posterior_hr_with_gradient(params, hp, t, theta, beta).map(|(v, _)| v).unwrap_or_else(|_| lit(f64::NEG_INFINITY))
}

/// MAP fit by multi-start L-BFGS, starts drawn from the hyperpriors.
/// Returns the parameters and the attained log posterior.
pub fn fit_hr<T: Real>(
    t: &DVector<T>,
    theta: &[Vec<T>],
    hp: &HyperPriors,
    beta: &BetaPrior<T>,
    n_starts: usize,
    seed: u64,
    lbfgs: &LbfgsOptions,
) -> Result<(SingleResParams<T>, f64), EmulatorError> {
    if theta.len() < 2 {
        return Err(EmulatorError::InsufficientData(format!("need at least 2 runs, got {}", theta.len())));
    }
    if !hp.is_valid() {
        return Err(EmulatorError::InvalidPriors("shape and rate parameters must be positive".into()));
    }
    let kd = theta[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clamp = |v: f64| v.ln().clamp(-20.0, 20.0);
    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        if x.iter().any(|v| v.abs() > LOG_PARAM_LIMIT) {
            return None;
        }
        let p = SingleResParams::<T>::from_unconstrained(x);
        let (v, g) = log_posterior_hr_with_gradient(&p, hp, t, theta, beta).ok()?;
        Some((-to_f64(v), g.into_iter().map(|d| -to_f64(d)).collect()))
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n_starts.max(1) {
        let mut x0 = vec![clamp(hp.sigma2_e.sample(&mut rng)), clamp(hp.lambda2_e.sample(&mut rng))];
        x0.extend((0..kd).map(|_| clamp(hp.phi_e.sample(&mut rng))));
        if let Some(m) = minimize(objective, &x0, lbfgs) {
            if best.as_ref().is_none_or(|(_, b)| -m.value > *b) {
                best = Some((m.x, -m.value));
            }
        }
    }
    let (x, v) = best.ok_or(EmulatorError::AllStartsFailed)?;
    Ok((SingleResParams::from_unconstrained(&x), v))
}

#[derive(Debug, Clone)]
pub struct SingleResGp<T: Real> {
    params: SingleResParams<T>,
    beta: BetaPrior<T>,
    theta: Vec<Vec<T>>,
    t: DVector<T>,
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
    alpha: DVector<T>,
}

impl<T: Real> SingleResGp<T> {
    pub fn new(params: SingleResParams<T>, beta: BetaPrior<T>, theta: Vec<Vec<T>>, t: DVector<T>) -> Result<Self, EmulatorError> {
        if t.len() != theta.len() {
            return Err(EmulatorError::DimensionMismatch("scores and inputs differ in length".into()));
        }
        let (_, m) = gram(&theta, &params, &beta);
        let (chol, _) = cholesky_with_jitter(&m)?;
        let mean = DVector::from_fn(t.len(), |i, _| regressors(&theta[i]).dot(&beta.b_e));
        let alpha = chol.solve(&(&t - mean));
        Ok(Self { params, beta, theta, t, chol, alpha })
    }

    pub fn params(&self) -> &SingleResParams<T> {
        &self.params
    }

    pub fn beta(&self) -> &BetaPrior<T> {
        &self.beta
    }

    pub fn theta(&self) -> &[Vec<T>] {
        &self.theta
    }

    pub fn scores(&self) -> &DVector<T> {
        &self.t
    }

    fn cross(&self, x: &[T]) -> DVector<T> {
        let bh = &self.beta.cov_e * regressors(x);
        DVector::from_fn(self.theta.len(), |i, _| {
            self.params.sigma2 * sq_exp(x, &self.theta[i], &self.params.phi) + regressors(&self.theta[i]).dot(&bh)
        })
    }

    fn prior_cov(&self, x: &[T], y: &[T]) -> T {
        self.params.sigma2 * sq_exp(x, y, &self.params.phi) + regressors(x).dot(&(&self.beta.cov_e * regressors(y)))
    }
}

impl<T: Real> ScoreModel<T> for SingleResGp<T> {
    fn predict_unit(&self, x: &[T]) -> (T, T) {
        let c = self.cross(x);
        let mean = regressors(x).dot(&self.beta.b_e) + c.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&c).expect("factor has a nonzero diagonal");
        ((mean), (self.prior_cov(x, x) - v.norm_squared()).max(T::zero()) + self.params.lambda2)
    }

    fn predict_joint_unit(&self, xs: &[Vec<T>]) -> (DVector<T>, DMatrix<T>) {
        let m = xs.len();
        let mut c = DMatrix::zeros(self.theta.len(), m);
        for (a, x) in xs.iter().enumerate() {
            c.set_column(a, &self.cross(x));
        }
        let mean = DVector::from_fn(m, |a, _| regressors(&xs[a]).dot(&self.beta.b_e)) + c.transpose() * &self.alpha;
        let v = self.chol.l_dirty().solve_lower_triangular(&c).expect("factor has a nonzero diagonal");
        let mut cov = DMatrix::from_fn(m, m, |a, b| self.prior_cov(&xs[a], &xs[b])) - v.transpose() * v;
        for a in 0..m {
            cov[(a, a)] += self.params.lambda2;
        }
        ((mean), (&cov + cov.transpose()) * lit::<T>(0.5))
    }

    fn n_mean_params(&self) -> usize {
        self.params.k() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hp = HyperPriors::default();
        let beta = BetaPrior::<f64>::standard(2);
        let theta: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random(), rng.random()]).collect();
        let t = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let p = SingleResParams { sigma2: 0.7, lambda2: 0.08, phi: vec![0.4, 1.3] };
        let (_, g) = log_posterior_hr_with_gradient(&p, &hp, &t, &theta, &beta).unwrap();
        let x0 = p.to_unconstrained();
        for i in 0..x0.len() {
            let h = 1e-5;
            let eval = |d: f64| {
                let mut x = x0.clone();
                x[i] += d;
                log_posterior_hr(&SingleResParams::from_unconstrained(&x), &hp, &t, &theta, &beta)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn interpolates_training_points_when_nugget_small() {
        let theta: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let t = DVector::from_fn(6, |i, _| (i as f64 / 5.0 * 3.0).sin());
        let p = SingleResParams { sigma2: 1.0, lambda2: 1e-8, phi: vec![0.3] };
        let gp = SingleResGp::new(p, BetaPrior::standard(1), theta.clone(), t.clone()).unwrap();
        for (x, y) in theta.iter().zip(t.iter()) {
            let (m, v) = gp.predict_unit(x);
            assert!((m - y).abs() < 1e-4);
            assert!(v < 1e-4);
        }
    }
}
