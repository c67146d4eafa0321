//! Stochastic priors: Markov chains on sparse supports, the two-dimensional visibility
//! model and the Gauss-Markov visibility power process. Samplers drive the scene
//! generator; the `predict_*` maps carry posteriors from one frame to the next.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// Birth/death probabilities of grid-point activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportMarkovParams {
    pub p01: f64,
    pub p10: f64,
}

impl Default for SupportMarkovParams {
    fn default() -> Self {
        Self { p01: 0.002, p10: 0.1 }
    }
}

impl SupportMarkovParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("p01", self.p01)?;
        check_prob("p10", self.p10)?;
        if self.p01 + self.p10 <= 0.0 {
            return Err(Error::Domain("support chain with p01 = p10 = 0 has no steady state".into()));
        }
        Ok(())
    }
}

/// Shape/rate hyper-parameters of the precision priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaHyper {
    pub a: f64,
    pub b: f64,
    pub a_bar: f64,
    pub b_bar: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for GammaHyper {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0, a_bar: 1.0, b_bar: 1e-4, c: 1e-6, d: 1e-6 }
    }
}

impl GammaHyper {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.a_bar, self.b_bar, self.c, self.d];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("Gamma hyper-parameters must be positive".into()));
        }
        if self.a_bar / self.b_bar < 100.0 * self.a / self.b {
            return Err(Error::Config("inactive precision mean must exceed the active one by 100x".into()));
        }
        Ok(())
    }
}

/// Temporal and spatial transitions of visibility supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VrMarkovParams {
    pub p01_t: f64,
    pub p10_t: f64,
    pub p01_s: f64,
    pub p10_s: f64,
    /// Visibility probability used for the first frame and for points without history.
    pub kappa: f64,
}

impl Default for VrMarkovParams {
    fn default() -> Self {
        Self { p01_t: 0.02, p10_t: 0.02, p01_s: 0.05, p10_s: 0.05, kappa: 0.5 }
    }
}

impl VrMarkovParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("p01_t", self.p01_t)?;
        check_prob("p10_t", self.p10_t)?;
        check_prob("p01_s", self.p01_s)?;
        check_prob("p10_s", self.p10_s)?;
        check_prob("kappa", self.kappa)
    }

    pub fn spatial(&self, prev: bool, next: bool) -> f64 {
        transition(self.p01_s, self.p10_s, prev, next)
    }

    pub fn temporal(&self, prev: bool, next: bool) -> f64 {
        transition(self.p01_t, self.p10_t, prev, next)
    }
}

/// `P(next | prev)` of a binary chain.
pub fn transition(p01: f64, p10: f64, prev: bool, next: bool) -> f64 {
    match (prev, next) {
        (false, true) => p01,
        (false, false) => 1.0 - p01,
        (true, false) => p10,
        (true, true) => 1.0 - p10,
    }
}

/// First-order autoregression of visibility power values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussMarkovParams {
    pub epsilon: f64,
    pub sigma2: f64,
    pub zeta: f64,
}

impl Default for GaussMarkovParams {
    fn default() -> Self {
        Self { epsilon: 0.1, sigma2: 0.5, zeta: 1.0 }
    }
}

impl GaussMarkovParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("epsilon", self.epsilon)?;
        if !(self.sigma2 > 0.0 && self.zeta > 0.0) {
            return Err(Error::Config("sigma2 and zeta must be positive".into()));
        }
        Ok(())
    }

    pub fn stationary_variance(&self) -> f64 {
        self.epsilon * self.sigma2 / (2.0 - self.epsilon)
    }
}

/// Every prior parameter of the generative model, shared by the simulator and the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub support: SupportMarkovParams,
    pub hyper: GammaHyper,
    pub vr: VrMarkovParams,
    pub beta: GaussMarkovParams,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.support.validate()?;
        self.hyper.validate()?;
        self.vr.validate()?;
        self.beta.validate()
    }
}

pub fn steady_state_support(params: &SupportMarkovParams) -> Result<f64> {
    if params.p01 + params.p10 <= 0.0 {
        return Err(Error::Domain("p01 = p10 = 0".into()));
    }
    Ok(params.p01 / (params.p01 + params.p10))
}

fn markov_chain<R: Rng + ?Sized>(p_init: f64, p01: f64, p10: f64, len: usize, rng: &mut R) -> Vec<bool> {
    let mut out = Vec::with_capacity(len);
    let mut s = rng.random::<f64>() < p_init;
    for i in 0..len {
        if i > 0 {
            s = rng.random::<f64>() < transition(p01, p10, s, true);
        }
        out.push(s);
    }
    out
}

/// `Q` independent support chains over `T` frames, started from the steady state. Row `q`, column `t`.
pub fn sample_support_sequence<R: Rng + ?Sized>(
    params: &SupportMarkovParams,
    q: usize,
    t: usize,
    rng: &mut R,
) -> Result<Vec<Vec<bool>>> {
    let init = steady_state_support(params)?;
    Ok((0..q).map(|_| markov_chain(init, params.p01, params.p10, t, rng)).collect())
}

/// One frame of visibility support. Without history the spatial chain starts from `kappa`;
/// with history each antenna combines its temporal predecessor with its spatial predecessor.
pub fn next_vr_support<R: Rng + ?Sized>(prev: Option<&[bool]>, m: usize, params: &VrMarkovParams, rng: &mut R) -> Vec<bool> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let p1 = match (prev, i) {
            (None, 0) => params.kappa,
            (None, _) => params.spatial(out[i - 1], true),
            (Some(p), 0) => params.temporal(p[0], true),
            (Some(p), _) => {
                let on = params.temporal(p[i], true) * params.spatial(out[i - 1], true);
                let off = params.temporal(p[i], false) * params.spatial(out[i - 1], false);
                if on + off > 0.0 {
                    on / (on + off)
                } else {
                    0.5
                }
            }
        };
        out.push(rng.random::<f64>() < p1);
    }
    out
}

/// Visibility support over `M` antennas and `T` frames. Row `m`, column `t`.
pub fn sample_vr_support<R: Rng + ?Sized>(params: &VrMarkovParams, m: usize, t: usize, rng: &mut R) -> Vec<Vec<bool>> {
    let mut frames: Vec<Vec<bool>> = Vec::with_capacity(t);
    for i in 0..t {
        let next = next_vr_support(frames.get(i.wrapping_sub(1)).map(|v| v.as_slice()), m, params, rng);
        frames.push(next);
    }
    (0..m).map(|a| frames.iter().map(|f| f[a]).collect()).collect()
}

pub fn gauss_markov_stationary<R: Rng + ?Sized>(params: &GaussMarkovParams, rng: &mut R) -> f64 {
    let sd = params.stationary_variance().sqrt();
    params.zeta + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

pub fn gauss_markov_step<R: Rng + ?Sized>(prev: f64, params: &GaussMarkovParams, rng: &mut R) -> f64 {
    let w = Normal::new(0.0, params.sigma2.sqrt()).map(|n| n.sample(rng)).unwrap_or(0.0);
    (1.0 - params.epsilon) * (prev - params.zeta) + params.epsilon * w + params.zeta
}

/// `M` independent Gauss-Markov trajectories over `T` frames. Row `m`, column `t`.
pub fn sample_gauss_markov<R: Rng + ?Sized>(params: &GaussMarkovParams, m: usize, t: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(t); m];
    for row in out.iter_mut() {
        let mut b = gauss_markov_stationary(params, rng);
        for i in 0..t {
            if i > 0 {
                b = gauss_markov_step(b, params, rng);
            }
            row.push(b);
        }
    }
    out
}

pub fn predict_support(posterior: &[f64], params: &SupportMarkovParams) -> Vec<f64> {
    posterior.iter().map(|&q| (1.0 - params.p10) * q + params.p01 * (1.0 - q)).collect()
}

/// Predicted visibility probabilities for all `Q x M` entries (row-major, `q M + m`).
/// `posterior` holds `|Omega| x M` entries in the order of `omega`.
pub fn predict_alpha(posterior: &[f64], omega: &[usize], q_total: usize, m: usize, params: &VrMarkovParams) -> Result<Vec<f64>> {
    if posterior.len() != omega.len() * m {
        return Err(Error::Argument("posterior size does not match the retained set".into()));
    }
    let mut out = vec![params.kappa; q_total * m];
    for (k, &q) in omega.iter().enumerate() {
        for a in 0..m {
            let p = posterior[k * m + a];
            out[q * m + a] = (1.0 - params.p10_t) * p + params.p01_t * (1.0 - p);
        }
    }
    Ok(out)
}

/// Predicted power-value means and variances for all `Q x M` entries (row-major).
pub fn predict_beta(
    mean: &[f64],
    var: &[f64],
    omega: &[usize],
    q_total: usize,
    m: usize,
    params: &GaussMarkovParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if mean.len() != omega.len() * m || var.len() != mean.len() {
        return Err(Error::Argument("posterior size does not match the retained set".into()));
    }
    if var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("posterior variances must be positive".into()));
    }
    let e = params.epsilon;
    let mut mu = vec![params.zeta; q_total * m];
    let mut nu = vec![params.stationary_variance(); q_total * m];
    for (k, &q) in omega.iter().enumerate() {
        for a in 0..m {
            mu[q * m + a] = (1.0 - e) * mean[k * m + a] + e * params.zeta;
            nu[q * m + a] = (1.0 - e).powi(2) * var[k * m + a] + e * e * params.sigma2;
        }
    }
    Ok((mu, nu))
}

/// Priors handed from one frame to the next. Per-antenna arrays are row-major `q M + m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPrior {
    pub antennas: usize,
    pub support: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
}

impl TemporalPrior {
    /// Stationary priors: the first frame, and every frame of the memoryless ablation.
    pub fn stationary(
        q: usize,
        m: usize,
        support: &SupportMarkovParams,
        vr: &VrMarkovParams,
        beta: &GaussMarkovParams,
    ) -> Result<Self> {
        let s = steady_state_support(support)?;
        Ok(Self {
            antennas: m,
            support: vec![s; q],
            alpha: vec![vr.kappa; q * m],
            beta_mean: vec![beta.zeta; q * m],
            beta_var: vec![beta.stationary_variance(); q * m],
        })
    }

    pub fn points(&self) -> usize {
        self.support.len()
    }

    /// Per-antenna priors of grid point `q`: `(alpha, beta mean, beta variance)`.
    pub fn point(&self, q: usize) -> (&[f64], &[f64], &[f64]) {
        let r = q * self.antennas..(q + 1) * self.antennas;
        (&self.alpha[r.clone()], &self.beta_mean[r.clone()], &self.beta_var[r])
    }
}
