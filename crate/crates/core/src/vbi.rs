//! Mean-field variational inference for sparse gains under a Bernoulli-Gamma precision
//! prior and a Gamma noise-precision prior.
//!
//! `update_x_exact` solves the Gaussian step with a Cholesky factorisation; the
//! inverse-free variant replaces it with one majorise-minimise step that only needs
//! products with `F^H F` and keeps a diagonal covariance.

use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::priors::GammaHyper;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const JITTER: f64 = 1e-10;
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbiMode {
    Exact,
    InverseFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbiConfig {
    pub mode: VbiMode,
    pub max_iter: usize,
    /// Stop once the relative change of the posterior mean drops below this.
    pub tol: f64,
    pub power_iters: usize,
}

impl Default for VbiConfig {
    fn default() -> Self {
        Self { mode: VbiMode::InverseFree, max_iter: 50, tol: 1e-4, power_iters: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbiState {
    pub mean: Vec<Complex64>,
    /// Marginal posterior variances of the gains.
    pub var: Vec<f64>,
    /// Full posterior covariance, present after an exact update.
    pub cov: Option<DMatrix<Complex64>>,
    pub rho_shape: Vec<f64>,
    pub rho_rate: Vec<f64>,
    /// Posterior activity probabilities.
    pub support: Vec<f64>,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl VbiState {
    /// Weak data-scaled starting point: each precision mean matches the energy one column
    /// would need to explain the whole observation, noise precision assumes 0 dB.
    pub fn init(model: &LinearModel, prior: &[f64], hyper: &GammaHyper) -> Self {
        let q = model.len();
        let mut typical = Vec::with_capacity(q);
        for i in 0..q {
            let g = model.gram[(i, i)].re;
            typical.push(if g > 0.0 && model.y_energy > 0.0 { model.y_energy / g } else { 0.0 });
        }
        let active: Vec<f64> = typical.iter().cloned().filter(|&t| t > 0.0).collect();
        let fallback = if active.is_empty() { 1.0 } else { active.iter().sum::<f64>() / active.len() as f64 };
        let mut s = Self {
            mean: vec![ZERO; q],
            var: vec![0.0; q],
            cov: None,
            rho_shape: vec![0.0; q],
            rho_rate: vec![0.0; q],
            support: prior.iter().map(|&p| clamp_prob(p)).collect(),
            gamma_shape: hyper.c + model.rows as f64,
            gamma_rate: hyper.d + 0.5 * model.y_energy,
        };
        for i in 0..q {
            let l = s.support[i];
            s.rho_shape[i] = l * hyper.a + (1.0 - l) * hyper.a_bar + 1.0;
            let t = if typical[i] > 0.0 { typical[i] } else { fallback };
            s.rho_rate[i] = l * hyper.b + (1.0 - l) * hyper.b_bar + t;
            s.var[i] = 1.0 / s.rho_mean(i);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn rho_mean(&self, q: usize) -> f64 {
        self.rho_shape[q] / self.rho_rate[q]
    }

    pub fn ln_rho_mean(&self, q: usize) -> f64 {
        digamma(self.rho_shape[q]) - self.rho_rate[q].ln()
    }

    pub fn gamma_mean(&self) -> f64 {
        self.gamma_shape / self.gamma_rate
    }

    pub fn second_moment(&self, q: usize) -> f64 {
        self.mean[q].norm_sqr() + self.var[q]
    }

    /// Expected residual energy `E|y - F x|^2` under `q(x)`.
    pub fn expected_residual(&self, model: &LinearModel) -> f64 {
        let trace = match &self.cov {
            Some(c) => {
                let mut t = 0.0;
                for j in 0..c.ncols() {
                    for i in 0..c.nrows() {
                        t += (model.gram[(i, j)] * c[(j, i)]).re;
                    }
                }
                t
            }
            None => (0..self.len()).map(|q| model.gram[(q, q)].re * self.var[q]).sum(),
        };
        (model.residual_energy(&self.mean) + trace).max(0.0)
    }
}

fn check(model: &LinearModel, state: &VbiState) -> Result<()> {
    if model.len() != state.len() {
        return Err(Error::Argument(format!("model has {} columns, state {}", model.len(), state.len())));
    }
    Ok(())
}

/// Exact Gaussian step. Returns whether the jitter fallback was needed.
pub fn update_x_exact(state: &mut VbiState, model: &LinearModel) -> Result<bool> {
    check(model, state)?;
    let q = model.len();
    let gamma = state.gamma_mean();
    let mut prec = model.gram.map(|z| z * gamma);
    for i in 0..q {
        prec[(i, i)] += Complex64::new(state.rho_mean(i), 0.0);
    }
    let mut jittered = false;
    let chol = match prec.clone().cholesky() {
        Some(c) => c,
        None => {
            jittered = true;
            let scale = (0..q).map(|i| prec[(i, i)].re).fold(1.0, f64::max);
            for i in 0..q {
                prec[(i, i)] += Complex64::new(JITTER * scale, 0.0);
            }
            prec.cholesky().ok_or_else(|| Error::Degenerate("posterior precision is not positive definite".into()))?
        }
    };
    let cov = chol.inverse();
    let rhs = nalgebra::DVector::from_iterator(q, model.proj.iter().map(|p| p * gamma));
    let mean = &cov * rhs;
    state.mean = mean.as_slice().to_vec();
    state.var = (0..q).map(|i| cov[(i, i)].re.max(f64::MIN_POSITIVE)).collect();
    state.cov = Some(cov);
    Ok(jittered)
}

/// Wirtinger gradient `dJ/d conj(x)` of `J(x) = -gamma |y - F x|^2 - sum rho_q |x_q|^2`.
pub fn log_joint_gradient(state: &VbiState, model: &LinearModel, x: &[Complex64]) -> Vec<Complex64> {
    let gamma = state.gamma_mean();
    let gx = model.gram_times(x);
    (0..x.len()).map(|q| (model.proj[q] - gx[q]) * gamma - x[q] * state.rho_mean(q)).collect()
}

pub fn log_joint(state: &VbiState, model: &LinearModel, x: &[Complex64]) -> f64 {
    let prior: f64 = (0..x.len()).map(|q| state.rho_mean(q) * x[q].norm_sqr()).sum();
    -state.gamma_mean() * model.residual_energy(x) - prior
}

/// One majorise-minimise step with curvature bound `lipschitz >= lambda_max(gamma F^H F)`.
pub fn update_x_inverse_free(state: &mut VbiState, model: &LinearModel, lipschitz: f64) -> Result<()> {
    check(model, state)?;
    if !(lipschitz > 0.0) {
        return Err(Error::Argument(format!("curvature bound must be positive, got {lipschitz}")));
    }
    let grad = log_joint_gradient(state, model, &state.mean);
    for q in 0..state.len() {
        let rho = state.rho_mean(q);
        if model.is_active(q) {
            let w = lipschitz + rho;
            state.mean[q] += grad[q] / w;
            state.var[q] = 1.0 / w;
        } else {
            state.mean[q] = ZERO;
            state.var[q] = 1.0 / rho;
        }
    }
    state.cov = None;
    Ok(())
}

pub fn update_rho(state: &mut VbiState, hyper: &GammaHyper) {
    for q in 0..state.len() {
        let l = state.support[q];
        state.rho_shape[q] = l * hyper.a + (1.0 - l) * hyper.a_bar + 1.0;
        state.rho_rate[q] = l * hyper.b + (1.0 - l) * hyper.b_bar + state.second_moment(q);
    }
}

/// Log-odds of activity given the current precision posterior.
pub fn support_log_odds(prior: f64, ln_rho: f64, rho: f64, hyper: &GammaHyper) -> f64 {
    let p = clamp_prob(prior);
    (p / (1.0 - p)).ln() + hyper.a * hyper.b.ln() - hyper.a_bar * hyper.b_bar.ln() + ln_gamma(hyper.a_bar)
        - ln_gamma(hyper.a)
        + (hyper.a - hyper.a_bar) * ln_rho
        - (hyper.b - hyper.b_bar) * rho
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn update_s(state: &mut VbiState, prior: &[f64], hyper: &GammaHyper) -> Result<()> {
    if prior.len() != state.len() {
        return Err(Error::Argument("support prior has the wrong length".into()));
    }
    for q in 0..state.len() {
        let z = support_log_odds(prior[q], state.ln_rho_mean(q), state.rho_mean(q), hyper);
        state.support[q] = logistic(z);
    }
    Ok(())
}

pub fn update_gamma(state: &mut VbiState, model: &LinearModel, hyper: &GammaHyper) -> Result<()> {
    check(model, state)?;
    state.gamma_shape = hyper.c + model.rows as f64;
    state.gamma_rate = hyper.d + state.expected_residual(model);
    Ok(())
}

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Negative evidence lower bound of the factorised posterior.
pub fn free_energy(state: &VbiState, model: &LinearModel, prior: &[f64], hyper: &GammaHyper) -> Result<f64> {
    check(model, state)?;
    let h = hyper;
    let e_lg = digamma(state.gamma_shape) - state.gamma_rate.ln();
    let e_g = state.gamma_mean();
    let mn = model.rows as f64;
    let mut elbo = mn * (e_lg - PI.ln()) - e_g * state.expected_residual(model);
    elbo += h.c * h.d.ln() - ln_gamma(h.c) + (h.c - 1.0) * e_lg - h.d * e_g;
    elbo += gamma_entropy(state.gamma_shape, state.gamma_rate);
    let act = h.a * h.b.ln() - ln_gamma(h.a);
    let inact = h.a_bar * h.b_bar.ln() - ln_gamma(h.a_bar);
    for q in 0..state.len() {
        let (e_lr, e_r) = (state.ln_rho_mean(q), state.rho_mean(q));
        let l = state.support[q];
        let p = clamp_prob(prior[q]);
        elbo += e_lr - PI.ln() - e_r * state.second_moment(q);
        elbo += l * (act + (h.a - 1.0) * e_lr - h.b * e_r) + (1.0 - l) * (inact + (h.a_bar - 1.0) * e_lr - h.b_bar * e_r);
        elbo += l * p.ln() + (1.0 - l) * (1.0 - p).ln();
        elbo += gamma_entropy(state.rho_shape[q], state.rho_rate[q]);
        elbo -= xlogx(l) + xlogx(1.0 - l);
    }
    let q_len = state.len() as f64;
    let entropy_x = match &state.cov {
        Some(c) => {
            let chol = c.clone().cholesky().ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|z| 2.0 * z.re.ln()).sum();
            q_len * (PI * std::f64::consts::E).ln() + logdet
        }
        None => state.var.iter().map(|v| (PI * std::f64::consts::E * v).ln()).sum(),
    };
    Ok(-(elbo + entropy_x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbiOutput {
    pub state: VbiState,
    pub iterations: usize,
    pub converged: bool,
    /// Residual grew tenfold over five iterations; `state` is the best iterate seen.
    pub diverged: bool,
    pub jitter_used: bool,
    pub free_energy: Vec<f64>,
}

/// Cycles the four updates until the mean settles, starting from `init` when given.
pub fn run_vbi(
    model: &LinearModel,
    prior: &[f64],
    hyper: &GammaHyper,
    cfg: &VbiConfig,
    init: Option<VbiState>,
) -> Result<VbiOutput> {
    if prior.len() != model.len() {
        return Err(Error::Argument("support prior has the wrong length".into()));
    }
    let mut state = match init {
        Some(s) => {
            check(model, &s)?;
            s
        }
        None => VbiState::init(model, prior, hyper),
    };
    let lam = model.lipschitz_bound(cfg.power_iters);
    let mut out = VbiOutput {
        state: state.clone(),
        iterations: 0,
        converged: false,
        diverged: false,
        jitter_used: false,
        free_energy: Vec::new(),
    };
    let floor = 1e-10 * model.y_energy;
    let mut residuals: Vec<f64> = Vec::with_capacity(cfg.max_iter);
    let mut best = (f64::INFINITY, state.clone());
    for it in 0..cfg.max_iter {
        let old = state.mean.clone();
        match cfg.mode {
            VbiMode::Exact => out.jitter_used |= update_x_exact(&mut state, model)?,
            VbiMode::InverseFree => {
                let bound = state.gamma_mean() * lam;
                if bound > 0.0 {
                    update_x_inverse_free(&mut state, model, bound)?;
                } else {
                    for q in 0..state.len() {
                        state.mean[q] = ZERO;
                        state.var[q] = 1.0 / state.rho_mean(q);
                    }
                }
            }
        }
        update_rho(&mut state, hyper);
        update_s(&mut state, prior, hyper)?;
        update_gamma(&mut state, model, hyper)?;
        out.iterations = it + 1;
        if cfg.mode == VbiMode::Exact {
            out.free_energy.push(free_energy(&state, model, prior, hyper)?);
        }
        let r = model.residual_energy(&state.mean);
        if r < best.0 {
            best = (r, state.clone());
        }
        residuals.push(r);
        if it >= 5 && r > 10.0 * residuals[it - 5].max(floor) {
            out.diverged = true;
            state = best.1.clone();
            break;
        }
        let diff: f64 = state.mean.iter().zip(&old).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = state.mean.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if diff <= cfg.tol * norm || norm == 0.0 && diff == 0.0 {
            out.converged = true;
            break;
        }
    }
    out.state = state;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rows: usize, cols: usize, seed: u64) -> (DMatrix<Complex64>, Vec<Complex64>, LinearModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let y: Vec<Complex64> = (0..rows).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let m = LinearModel::from_dense(&f, &y).unwrap();
        (f, y, m)
    }

    #[test]
    fn zero_matrix_gives_prior_posterior() {
        let f = DMatrix::zeros(6, 3);
        let y = vec![Complex64::new(1.0, 0.0); 6];
        let m = LinearModel::from_dense(&f, &y).unwrap();
        let mut s = VbiState::init(&m, &[0.3; 3], &GammaHyper::default());
        update_x_exact(&mut s, &m).unwrap();
        for q in 0..3 {
            assert_eq!(s.mean[q], ZERO);
            assert!((s.var[q] - 1.0 / s.rho_mean(q)).abs() < 1e-12 * s.var[q]);
        }
    }

    #[test]
    fn scalar_exact_update() {
        let (f, _, m) = random_model(5, 1, 1);
        let mut s = VbiState::init(&m, &[0.5], &GammaHyper::default());
        update_x_exact(&mut s, &m).unwrap();
        let (g, r) = (s.gamma_mean(), s.rho_mean(0));
        let fn2 = f.column(0).norm_squared();
        let want = m.proj[0] * g / (g * fn2 + r);
        assert!((s.mean[0] - want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn orthogonal_columns_reduce_to_least_squares() {
        let mut f = DMatrix::zeros(4, 2);
        f[(0, 0)] = Complex64::new(2.0, 0.0);
        f[(3, 1)] = Complex64::new(0.0, 3.0);
        let y = vec![Complex64::new(1.0, 1.0), ZERO, ZERO, Complex64::new(-2.0, 0.5)];
        let m = LinearModel::from_dense(&f, &y).unwrap();
        let mut s = VbiState::init(&m, &[0.5, 0.5], &GammaHyper::default());
        s.rho_rate = vec![1e15; 2];
        s.gamma_rate = s.gamma_shape;
        update_x_exact(&mut s, &m).unwrap();
        let ls0 = y[0] / f[(0, 0)];
        let ls1 = y[3] / f[(3, 1)];
        assert!((s.mean[0] - ls0).norm() < 1e-9);
        assert!((s.mean[1] - ls1).norm() < 1e-9);
    }

    #[test]
    fn inverse_free_is_stationary_at_exact_mean() {
        let (_, _, m) = random_model(30, 6, 2);
        let mut s = VbiState::init(&m, &[0.2; 6], &GammaHyper::default());
        update_x_exact(&mut s, &m).unwrap();
        let before = s.mean.clone();
        let bound = s.gamma_mean() * m.lipschitz_bound(20);
        update_x_inverse_free(&mut s, &m, bound).unwrap();
        for (a, b) in s.mean.iter().zip(&before) {
            assert!((a - b).norm() < 1e-10 * b.norm().max(1e-3));
        }
        assert!(update_x_inverse_free(&mut s, &m, 0.0).is_err());
    }

    #[test]
    fn inverse_free_matches_exact_on_diagonal_gram() {
        let g = 3.0_f64.sqrt();
        let mut f = DMatrix::zeros(6, 3);
        for q in 0..3 {
            f[(2 * q, q)] = Complex64::new(g / 2.0_f64.sqrt(), 0.0);
            f[(2 * q + 1, q)] = Complex64::new(0.0, g / 2.0_f64.sqrt());
        }
        let y: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64 - 2.0, 0.5)).collect();
        let m = LinearModel::from_dense(&f, &y).unwrap();
        let mut exact = VbiState::init(&m, &[0.4; 3], &GammaHyper::default());
        exact.rho_rate = vec![0.5, 2.0, 7.0];
        let mut inv = exact.clone();
        inv.mean = vec![Complex64::new(5.0, -1.0); 3];
        update_x_exact(&mut exact, &m).unwrap();
        let bound = inv.gamma_mean() * m.lipschitz_bound(20);
        update_x_inverse_free(&mut inv, &m, bound).unwrap();
        for q in 0..3 {
            assert!((exact.mean[q] - inv.mean[q]).norm() < 1e-12);
            assert!((exact.var[q] - inv.var[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_free_converges_to_exact_mean() {
        let (_, _, m) = random_model(512, 64, 3);
        let mut exact = VbiState::init(&m, &[0.1; 64], &GammaHyper::default());
        let mut inv = exact.clone();
        update_x_exact(&mut exact, &m).unwrap();
        let bound = inv.gamma_mean() * m.lipschitz_bound(20);
        for _ in 0..200 {
            update_x_inverse_free(&mut inv, &m, bound).unwrap();
        }
        let num: f64 = exact.mean.iter().zip(&inv.mean).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = exact.mean.iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-3);
    }

    #[test]
    fn rho_update_limits() {
        let h = GammaHyper::default();
        let (_, _, m) = random_model(4, 2, 4);
        let mut s = VbiState::init(&m, &[0.5; 2], &h);
        s.mean = vec![ZERO; 2];
        s.var = vec![0.0; 2];
        s.support = vec![1.0, 0.0];
        update_rho(&mut s, &h);
        assert_eq!((s.rho_shape[0], s.rho_rate[0]), (h.a + 1.0, h.b));
        assert_eq!((s.rho_shape[1], s.rho_rate[1]), (h.a_bar + 1.0, h.b_bar));
        let mut prev = f64::INFINITY;
        for e in [0.0, 0.5, 2.0, 10.0] {
            s.mean[0] = Complex64::new(e, 0.0);
            update_rho(&mut s, &h);
            assert!(s.rho_mean(0) < prev);
            prev = s.rho_mean(0);
        }
    }

    #[test]
    fn support_update_symmetric_and_clamped() {
        let h = GammaHyper { a: 2.0, b: 3.0, a_bar: 2.0, b_bar: 3.0, c: 1.0, d: 1.0 };
        let (_, _, m) = random_model(4, 2, 5);
        let mut s = VbiState::init(&m, &[0.5; 2], &h);
        update_s(&mut s, &[0.5, 1.0], &h).unwrap();
        assert!((s.support[0] - 0.5).abs() < 1e-15);
        assert!(s.support[1] > 1.0 - 1e-11);
    }

    #[test]
    fn gamma_update_limits() {
        let h = GammaHyper::default();
        let f = DMatrix::from_element(3, 1, Complex64::new(1.0, 0.0));
        let y = vec![Complex64::new(2.0, 0.0); 3];
        let m = LinearModel::from_dense(&f, &y).unwrap();
        let mut s = VbiState::init(&m, &[0.5], &h);
        s.mean = vec![Complex64::new(2.0, 0.0)];
        s.var = vec![0.0];
        update_gamma(&mut s, &m, &h).unwrap();
        assert!(s.gamma_rate >= h.d);
        assert!((s.gamma_mean() - (h.c + 3.0) / h.d).abs() < 1e-6 * s.gamma_mean());
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let (f, _, _) = random_model(40, 8, 6);
        let m = LinearModel::from_dense(&f, &vec![ZERO; 40]).unwrap();
        for mode in [VbiMode::Exact, VbiMode::InverseFree] {
            let out = run_vbi(&m, &[0.1; 8], &GammaHyper::default(), &VbiConfig { mode, ..Default::default() }, None).unwrap();
            assert!(out.state.mean.iter().all(|z| z.norm() == 0.0));
            assert!(out.state.support.iter().all(|&l| (0.0..=1.0).contains(&l)));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (_, _, m) = random_model(20, 5, 7);
        let s = VbiState::init(&m, &[0.3; 5], &GammaHyper::default());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Complex64> = (0..5).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let g = log_joint_gradient(&s, &m, &x);
        let h = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for q in 0..5 {
            for (dir, comp) in [(Complex64::new(1.0, 0.0), 2.0 * g[q].re), (Complex64::new(0.0, 1.0), 2.0 * g[q].im)] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[q] += dir * h;
                xm[q] -= dir * h;
                let fd = (log_joint(&s, &m, &xp) - log_joint(&s, &m, &xm)) / (2.0 * h);
                num += (fd - comp).powi(2);
                den += fd * fd;
            }
        }
        assert!((num / den).sqrt() < 1e-5);
    }
}
