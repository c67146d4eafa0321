//! Visibility-region detection.
//!
//! Grid points whose gain energy clears a threshold form the retained set `Omega`. For each
//! antenna the retained columns give a small real-valued linear model in the visibility
//! values; an LMMSE stage and a structured spike-and-slab stage then exchange extrinsic
//! Gaussian messages until they agree.
//!
//! All per-antenna arrays here are laid out `k M + m`, with `k` indexing `Omega`.

use crate::error::{Error, Result};
use crate::grid::PolarDelayGrid;
use crate::model::SystemConfig;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const MAX_VARIANCE: f64 = 1e6;
pub const MIN_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurboConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Threshold floor relative to the strongest gain energy.
    pub threshold_relative: f64,
    /// Threshold floor in units of the per-subcarrier noise variance.
    pub threshold_noise: f64,
    pub damping: f64,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-4, threshold_relative: 0.01, threshold_noise: 10.0, damping: 0.5 }
    }
}

impl TurboConfig {
    pub fn threshold(&self, x: &[Complex64], noise_precision: f64, subcarriers: usize) -> f64 {
        let peak = x.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        let floor = if noise_precision > 0.0 { self.threshold_noise / (noise_precision * subcarriers as f64) } else { 0.0 };
        (self.threshold_relative * peak).max(floor)
    }
}

/// Indices with `|x_q|^2 > eta`, ascending.
pub fn filter_grid(x: &[Complex64], eta: f64) -> Result<Vec<usize>> {
    if !(eta > 0.0) {
        return Err(Error::Argument(format!("threshold must be positive, got {eta}")));
    }
    Ok((0..x.len()).filter(|&q| x[q].norm_sqr() > eta).collect())
}

/// Real-domain normal equations of one antenna: `G^T G` and `G^T y` of the stacked model.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaModel {
    pub gram: DMatrix<f64>,
    pub proj: DVector<f64>,
}

/// Clipped sensing matrix of antenna `m`: column `k` is `x_k a_m(q_k) d(q_k)`.
pub fn clipped_matrix(grid: &PolarDelayGrid, x: &[Complex64], omega: &[usize], m: usize, cfg: &SystemConfig) -> DMatrix<Complex64> {
    let n = cfg.subcarriers;
    let mut g = DMatrix::zeros(n, omega.len());
    for (k, &q) in omega.iter().enumerate() {
        let w = x[q] * grid.steering(q, cfg)[m];
        for (i, d) in grid.delay_response(q, cfg).into_iter().enumerate() {
            g[(i, k)] = w * d;
        }
    }
    g
}

/// Stacks a complex system `[Re; Im]` into a real one.
pub fn stack_real(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = g.nrows();
    DMatrix::from_fn(2 * n, g.ncols(), |i, j| if i < n { g[(i, j)].re } else { g[(i - n, j)].im })
}

/// Normal equations for every antenna. `y` is the decoded observation, `m N + n`.
pub fn build_antenna_models(
    grid: &PolarDelayGrid,
    x: &[Complex64],
    omega: &[usize],
    y: &[Complex64],
    cfg: &SystemConfig,
) -> Result<Vec<AntennaModel>> {
    let (n, m_total) = (cfg.subcarriers, cfg.antennas);
    if y.len() != n * m_total || x.len() != grid.len() {
        return Err(Error::Argument("observation or gain length does not match the grid".into()));
    }
    let k_len = omega.len();
    let steer: Vec<Vec<Complex64>> = omega.iter().map(|&q| grid.steering(q, cfg)).collect();
    let delay: Vec<Vec<Complex64>> = omega.iter().map(|&q| grid.delay_response(q, cfg)).collect();
    let mut cross = DMatrix::zeros(k_len, k_len);
    for i in 0..k_len {
        for j in i..k_len {
            let s: Complex64 = delay[i].iter().zip(&delay[j]).map(|(a, b)| a.conj() * b).sum();
            cross[(i, j)] = s;
            cross[(j, i)] = s.conj();
        }
    }
    let mut models = Vec::with_capacity(m_total);
    for m in 0..m_total {
        let w: Vec<Complex64> = omega.iter().enumerate().map(|(k, &q)| x[q] * steer[k][m]).collect();
        let ym = &y[m * n..(m + 1) * n];
        let gram = DMatrix::from_fn(k_len, k_len, |i, j| (w[i].conj() * w[j] * cross[(i, j)]).re);
        let proj = DVector::from_fn(k_len, |i, _| {
            let s: Complex64 = delay[i].iter().zip(ym).map(|(d, v)| d.conj() * v).sum();
            (w[i].conj() * s).re
        });
        models.push(AntennaModel { gram, proj });
    }
    Ok(models)
}

/// Independent Gaussian messages, laid out `k M + m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Messages {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Messages {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Per-antenna LMMSE with real-domain noise precision `precision`.
/// Returns the posteriors and whether a jitter had to be added.
pub fn lmmse_module_a(models: &[AntennaModel], prior: &Messages, precision: f64) -> Result<(Messages, bool)> {
    let m_total = models.len();
    if m_total == 0 {
        return Ok((prior.clone(), false));
    }
    let k_len = models[0].proj.len();
    if prior.len() != k_len * m_total {
        return Err(Error::Argument("prior messages do not match the antenna models".into()));
    }
    if prior.var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("prior variances must be positive".into()));
    }
    let mut post = Messages { mean: vec![0.0; prior.len()], var: vec![0.0; prior.len()] };
    let mut jitter = false;
    for (m, model) in models.iter().enumerate() {
        let mut p = &model.gram * precision;
        let mut rhs = &model.proj * precision;
        for k in 0..k_len {
            let v = prior.var[k * m_total + m];
            p[(k, k)] += 1.0 / v;
            rhs[k] += prior.mean[k * m_total + m] / v;
        }
        let chol = match p.clone().cholesky() {
            Some(c) => c,
            None => {
                jitter = true;
                let scale = (0..k_len).map(|k| p[(k, k)]).fold(1.0, f64::max);
                for k in 0..k_len {
                    p[(k, k)] += 1e-10 * scale;
                }
                p.cholesky().ok_or_else(|| Error::Degenerate("LMMSE precision is not positive definite".into()))?
            }
        };
        let cov = chol.inverse();
        let mean = &cov * rhs;
        for k in 0..k_len {
            post.mean[k * m_total + m] = mean[k];
            post.var[k * m_total + m] = cov[(k, k)].max(MIN_VARIANCE);
        }
    }
    Ok((post, jitter))
}

/// Removes the prior from a Gaussian posterior. Returns `(mean, var, clamped)`.
pub fn extrinsic(post_mean: f64, post_var: f64, pri_mean: f64, pri_var: f64) -> (f64, f64, bool) {
    let prec = 1.0 / post_var - 1.0 / pri_var;
    if !(prec > 0.0) || !prec.is_finite() {
        return (post_mean, MAX_VARIANCE, true);
    }
    let v = (1.0 / prec).clamp(MIN_VARIANCE, MAX_VARIANCE);
    (v * (post_mean / post_var - pri_mean / pri_var), v, v >= MAX_VARIANCE)
}

fn extrinsic_all(post: &Messages, prior: &Messages) -> (Messages, bool) {
    let mut out = Messages { mean: vec![0.0; post.len()], var: vec![0.0; post.len()] };
    let mut clamped = false;
    for i in 0..post.len() {
        let (u, v, c) = extrinsic(post.mean[i], post.var[i], prior.mean[i], prior.var[i]);
        out.mean[i] = u;
        out.var[i] = v;
        clamped |= c;
    }
    (out, clamped)
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean) * (x - mean) / var
}

fn log_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Log-likelihoods `(ln P(obs | off), ln P(obs | on))` of one AWGN observation `u ~ N(alpha beta, v)`.
pub fn support_likelihoods(u: f64, v: f64, slab_mean: f64, slab_var: f64) -> (f64, f64) {
    (ln_normal(u, 0.0, v), ln_normal(u, slab_mean, slab_var + v))
}

/// Posterior activity probabilities along one chain of binary nodes. `unary` holds
/// `(ln phi(0), ln phi(1))` per node; `spatial = Some((p01, p10))` couples neighbours.
pub fn chain_marginals(unary: &[(f64, f64)], spatial: Option<(f64, f64)>) -> Vec<f64> {
    let norm = |l0: f64, l1: f64| {
        let z = log_add(l0, l1);
        (l1 - z).exp()
    };
    let Some((p01, p10)) = spatial else {
        return unary.iter().map(|&(a, b)| norm(a, b)).collect();
    };
    let lg = [[(1.0 - p01).ln(), p01.ln()], [p10.ln(), (1.0 - p10).ln()]];
    let m = unary.len();
    if m == 0 {
        return Vec::new();
    }
    let mut fwd = vec![[0.0f64; 2]; m];
    fwd[0] = [unary[0].0, unary[0].1];
    for i in 1..m {
        let (u0, u1) = unary[i];
        let f = fwd[i - 1];
        fwd[i] = [
            u0 + log_add(f[0] + lg[0][0], f[1] + lg[1][0]),
            u1 + log_add(f[0] + lg[0][1], f[1] + lg[1][1]),
        ];
    }
    let mut bwd = vec![[0.0f64; 2]; m];
    for i in (0..m - 1).rev() {
        let (u0, u1) = unary[i + 1];
        let b = bwd[i + 1];
        for a in 0..2 {
            bwd[i][a] = log_add(lg[a][0] + u0 + b[0], lg[a][1] + u1 + b[1]);
        }
    }
    (0..m).map(|i| norm(fwd[i][0] + bwd[i][0], fwd[i][1] + bwd[i][1])).collect()
}

/// Marginals of one sub-graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphPosterior {
    pub alpha: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_var: Vec<f64>,
}

fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Spike-and-slab inference for one grid point across all antennas.
#[allow(clippy::too_many_arguments)]
pub fn spike_slab_subgraph(
    obs_mean: &[f64],
    obs_var: &[f64],
    pi: &[f64],
    slab_mean: &[f64],
    slab_var: &[f64],
    spatial: Option<(f64, f64)>,
) -> SubgraphPosterior {
    let m = obs_mean.len();
    let unary: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let (l0, l1) = support_likelihoods(obs_mean[i], obs_var[i], slab_mean[i], slab_var[i]);
            (ln_prob(1.0 - pi[i]) + l0, ln_prob(pi[i]) + l1)
        })
        .collect();
    let alpha = chain_marginals(&unary, spatial);
    let mut out = SubgraphPosterior {
        alpha,
        beta_mean: vec![0.0; m],
        beta_var: vec![0.0; m],
        u_mean: vec![0.0; m],
        u_var: vec![0.0; m],
    };
    for i in 0..m {
        let p = out.alpha[i];
        let (mu, nu, u, v) = (slab_mean[i], slab_var[i], obs_mean[i], obs_var[i]);
        let s1 = 1.0 / (1.0 / nu + 1.0 / v);
        let m1 = s1 * (mu / nu + u / v);
        let bm = (1.0 - p) * mu + p * m1;
        out.beta_mean[i] = bm;
        out.beta_var[i] = ((1.0 - p) * (nu + mu * mu) + p * (s1 + m1 * m1) - bm * bm).max(MIN_VARIANCE);
        out.u_mean[i] = p * m1;
        out.u_var[i] = (p * (s1 + m1 * m1) - (p * m1).powi(2)).max(MIN_VARIANCE);
    }
    out
}

/// Prior of the retained set, laid out `k M + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct VrPrior {
    pub alpha: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
}

/// Module B over all retained points. `spatial = None` drops the antenna chain.
pub fn spike_slab_module_b(obs: &Messages, prior: &VrPrior, antennas: usize, spatial: Option<(f64, f64)>) -> Result<(Messages, VrPrior)> {
    let len = obs.len();
    if prior.alpha.len() != len || prior.beta_mean.len() != len || prior.beta_var.len() != len || len % antennas.max(1) != 0 {
        return Err(Error::Argument("Module B inputs have inconsistent sizes".into()));
    }
    let mut post = Messages { mean: vec![0.0; len], var: vec![0.0; len] };
    let mut vr = VrPrior { alpha: vec![0.0; len], beta_mean: vec![0.0; len], beta_var: vec![0.0; len] };
    for k in 0..len / antennas.max(1) {
        let r = k * antennas..(k + 1) * antennas;
        let s = spike_slab_subgraph(
            &obs.mean[r.clone()],
            &obs.var[r.clone()],
            &prior.alpha[r.clone()],
            &prior.beta_mean[r.clone()],
            &prior.beta_var[r.clone()],
            spatial,
        );
        post.mean[r.clone()].copy_from_slice(&s.u_mean);
        post.var[r.clone()].copy_from_slice(&s.u_var);
        vr.alpha[r.clone()].copy_from_slice(&s.alpha);
        vr.beta_mean[r.clone()].copy_from_slice(&s.beta_mean);
        vr.beta_var[r].copy_from_slice(&s.beta_var);
    }
    Ok((post, vr))
}

/// Moments of `alpha beta` under the prior, used as the first LMMSE prior.
pub fn prior_moments(prior: &VrPrior) -> Messages {
    let n = prior.alpha.len();
    let mut out = Messages { mean: vec![0.0; n], var: vec![0.0; n] };
    for i in 0..n {
        let (p, mu, nu) = (prior.alpha[i], prior.beta_mean[i], prior.beta_var[i]);
        out.mean[i] = p * mu;
        out.var[i] = (p * (nu + mu * mu) - (p * mu).powi(2)).max(MIN_VARIANCE);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurboOutput {
    /// Clipped visibility estimates of the retained set, `k M + m`.
    pub u_hat: Vec<f64>,
    pub posterior: VrPrior,
    pub iterations: usize,
    pub clamped: bool,
    pub damped: bool,
    pub jitter: bool,
    /// Relative change of the LMMSE prior means per iteration.
    pub message_change: Vec<f64>,
}

/// Alternates the two stages. `noise_precision` is the complex-domain `<gamma>`.
pub fn run_turbo(
    models: &[AntennaModel],
    prior: &VrPrior,
    noise_precision: f64,
    cfg: &TurboConfig,
    spatial: Option<(f64, f64)>,
) -> Result<TurboOutput> {
    let antennas = models.len();
    if antennas == 0 || models[0].proj.is_empty() {
        return Err(Error::Argument("the retained set is empty".into()));
    }
    // Real and imaginary parts each carry half of the complex noise variance.
    let precision = 2.0 * noise_precision;
    let mut a_prior = prior_moments(prior);
    let mut out = TurboOutput {
        u_hat: Vec::new(),
        posterior: prior.clone(),
        iterations: 0,
        clamped: false,
        damped: false,
        jitter: false,
        message_change: Vec::new(),
    };
    let mut a_post = a_prior.clone();
    for it in 0..cfg.max_iter.max(1) {
        let (post, jit) = lmmse_module_a(models, &a_prior, precision)?;
        out.jitter |= jit;
        a_post = post;
        let (b_obs, c1) = extrinsic_all(&a_post, &a_prior);
        let (b_post, vr) = spike_slab_module_b(&b_obs, prior, antennas, spatial)?;
        out.posterior = vr;
        let (mut next, c2) = extrinsic_all(&b_post, &b_obs);
        out.clamped |= c1 | c2;
        let norm = a_prior.mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let change = a_prior.mean.iter().zip(&next.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        if out.message_change.last().is_some_and(|&last| change > last) {
            out.damped = true;
        }
        if out.damped {
            let d = cfg.damping;
            for i in 0..next.len() {
                next.mean[i] = d * next.mean[i] + (1.0 - d) * a_prior.mean[i];
                next.var[i] = d * next.var[i] + (1.0 - d) * a_prior.var[i];
            }
        }
        out.message_change.push(change);
        out.iterations = it + 1;
        a_prior = next;
        if change < cfg.tol {
            break;
        }
    }
    out.u_hat = a_post.mean.iter().map(|&u| u.max(0.0)).collect();
    Ok(out)
}
