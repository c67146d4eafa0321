//! Frame-by-frame tracking.
//!
//! Each frame alternates gain estimation, visibility detection and grid refinement. Between
//! frames the posteriors are pushed through the temporal transitions to form the next prior,
//! while the refined grid and the visibility estimates become the next warm start.

use crate::error::{Error, Result};
use crate::grid::PolarDelayGrid;
use crate::linear::{grid_synthesize, LinearModel};
use crate::model::{ChannelFrame, SystemConfig};
use crate::priors::{predict_alpha, predict_beta, predict_support, ModelParams, TemporalPrior};
use crate::refine::{armijo_refine, RefineConfig};
use crate::turbo::{build_antenna_models, filter_grid, run_turbo, TurboConfig, VrPrior};
use crate::vbi::{run_vbi, VbiConfig, VbiState};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Temporal and spatial Markov priors.
    Markov,
    /// Stationary priors every frame and no antenna chain.
    Iid,
}

impl std::str::FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(Self::Markov),
            "iid" => Ok(Self::Iid),
            _ => Err(Error::Parse(format!("unknown prior mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Markov => "markov",
            Self::Iid => "iid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub outer_iterations: usize,
    pub min_iterations: usize,
    pub x_tol: f64,
    pub u_tol: f64,
    pub mode: PriorMode,
    pub vbi: VbiConfig,
    pub turbo: TurboConfig,
    pub refine: RefineConfig,
    /// Keep the channel estimate of every outer iteration.
    pub record_trace: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 15,
            min_iterations: 2,
            x_tol: 1e-4,
            u_tol: 1e-3,
            mode: PriorMode::Markov,
            vbi: VbiConfig::default(),
            turbo: TurboConfig::default(),
            refine: RefineConfig::default(),
            record_trace: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 || self.vbi.max_iter == 0 || self.turbo.max_iter == 0 {
            return Err(Error::Config("iteration budgets must be at least 1".into()));
        }
        if !(self.turbo.damping > 0.0 && self.turbo.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Grid and visibility estimates carried into a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub grid: PolarDelayGrid,
    /// `M x Q` visibility weights.
    pub vr: DMatrix<f64>,
}

impl WarmStart {
    pub fn cold(grid: PolarDelayGrid, antennas: usize) -> Self {
        let q = grid.len();
        Self { grid, vr: DMatrix::from_element(antennas, q, 1.0) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub vbi_iterations: usize,
    pub vbi_jitter: bool,
    pub vbi_diverged: bool,
    pub turbo_iterations: usize,
    pub turbo_clamped: bool,
    pub turbo_damped: bool,
    pub turbo_jitter: bool,
    /// Outer iterations whose retained set was empty.
    pub empty_omega: usize,
    pub refine_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub gains: Vec<Complex64>,
    pub vr: DMatrix<f64>,
    pub grid: PolarDelayGrid,
    pub omega: Vec<usize>,
    /// Posterior activity probabilities of all grid points.
    pub support: Vec<f64>,
    /// Visibility posteriors of the retained set, `k M + m`.
    pub alpha: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub noise_precision: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub diagnostics: FrameDiagnostics,
    /// Channel estimates after each outer iteration, when recorded.
    pub trace: Vec<ChannelFrame>,
}

impl FrameResult {
    pub fn channel(&self, cfg: &SystemConfig) -> ChannelFrame {
        ChannelFrame {
            subcarriers: cfg.subcarriers,
            antennas: cfg.antennas,
            h: grid_synthesize(&self.grid, &self.vr, &self.gains, cfg),
        }
    }
}

fn relative_change<'a, T: 'a>(new: impl Iterator<Item = (&'a T, &'a T)>, norm: impl Fn(&T) -> f64, diff: impl Fn(&T, &T) -> f64) -> f64 {
    let (mut d, mut n) = (0.0, 0.0);
    for (a, b) in new {
        d += diff(a, b);
        n += norm(a);
    }
    if n == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (d / n).sqrt()
    }
}

fn gather_prior(prior: &TemporalPrior, omega: &[usize]) -> VrPrior {
    let mut out = VrPrior { alpha: Vec::new(), beta_mean: Vec::new(), beta_var: Vec::new() };
    for &q in omega {
        let (a, m, v) = prior.point(q);
        out.alpha.extend_from_slice(a);
        out.beta_mean.extend_from_slice(m);
        out.beta_var.extend_from_slice(v);
    }
    out
}

/// Estimates one frame from its decoded observation `y` (`m N + n`).
pub fn track_frame(
    y: &[Complex64],
    warm: &WarmStart,
    prior: &TemporalPrior,
    params: &ModelParams,
    cfg: &TrackerConfig,
    sys: &SystemConfig,
) -> Result<FrameResult> {
    let q_len = warm.grid.len();
    if y.len() != sys.channel_len() || warm.vr.nrows() != sys.antennas || warm.vr.ncols() != q_len {
        return Err(Error::Argument("frame inputs have inconsistent sizes".into()));
    }
    if prior.points() != q_len || prior.antennas != sys.antennas {
        return Err(Error::Argument("temporal prior does not match the grid".into()));
    }
    cfg.validate()?;
    let spatial = match cfg.mode {
        PriorMode::Markov => Some((params.vr.p01_s, params.vr.p10_s)),
        PriorMode::Iid => None,
    };
    let mut grid = warm.grid.clone();
    let mut vr = warm.vr.clone();
    let mut state: Option<VbiState> = None;
    let mut diag = FrameDiagnostics::default();
    let mut omega: Vec<usize> = Vec::new();
    let mut posterior = VrPrior { alpha: Vec::new(), beta_mean: Vec::new(), beta_var: Vec::new() };
    let mut gains = vec![Complex64::new(0.0, 0.0); q_len];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.outer_iterations {
        iterations = it + 1;
        let model = LinearModel::from_grid(&grid, &vr, y, sys)?;
        let out = run_vbi(&model, &prior.support, &params.hyper, &cfg.vbi, state.take())?;
        diag.vbi_iterations += out.iterations;
        diag.vbi_jitter |= out.jitter_used;
        diag.vbi_diverged |= out.diverged;
        let new_gains = out.state.mean.clone();
        let gamma = out.state.gamma_mean();
        state = Some(out.state);
        let old_vr = vr.clone();
        let eta = cfg.turbo.threshold(&new_gains, gamma, sys.subcarriers);
        let retained = if eta > 0.0 { filter_grid(&new_gains, eta)? } else { Vec::new() };
        if retained.is_empty() {
            diag.empty_omega += 1;
        } else {
            omega = retained;
            let models = build_antenna_models(&grid, &new_gains, &omega, y, sys)?;
            let t = run_turbo(&models, &gather_prior(prior, &omega), gamma, &cfg.turbo, spatial)?;
            diag.turbo_iterations += t.iterations;
            diag.turbo_clamped |= t.clamped;
            diag.turbo_damped |= t.damped;
            diag.turbo_jitter |= t.jitter;
            vr.fill(0.0);
            for (k, &q) in omega.iter().enumerate() {
                for m in 0..sys.antennas {
                    vr[(m, q)] = t.u_hat[k * sys.antennas + m];
                }
            }
            posterior = t.posterior;
            let r = armijo_refine(&mut grid, &vr, &new_gains, y, gamma, &omega, sys, &cfg.refine)?;
            diag.refine_steps += r.accepted;
        }
        let dx = relative_change(new_gains.iter().zip(&gains), |a| a.norm_sqr(), |a, b| (a - b).norm_sqr());
        let du = relative_change(vr.iter().zip(old_vr.iter()), |a| a * a, |a, b| (a - b).powi(2));
        gains = new_gains;
        if cfg.record_trace {
            trace.push(ChannelFrame { subcarriers: sys.subcarriers, antennas: sys.antennas, h: grid_synthesize(&grid, &vr, &gains, sys) });
        }
        if iterations >= cfg.min_iterations && dx < cfg.x_tol && du < cfg.u_tol {
            converged = true;
            break;
        }
    }
    let final_state = state.expect("at least one outer iteration");
    if posterior.alpha.len() != omega.len() * sys.antennas {
        posterior = gather_prior(prior, &omega);
    }
    Ok(FrameResult {
        gains,
        vr,
        grid,
        omega,
        support: final_state.support.clone(),
        alpha: posterior.alpha,
        beta_mean: posterior.beta_mean,
        beta_var: posterior.beta_var,
        noise_precision: final_state.gamma_mean(),
        outer_iterations: iterations,
        converged,
        diagnostics: diag,
        trace,
    })
}

/// Prior for the first frame, and for every frame of the memoryless mode.
pub fn initial_prior(q: usize, params: &ModelParams, sys: &SystemConfig) -> Result<TemporalPrior> {
    TemporalPrior::stationary(q, sys.antennas, &params.support, &params.vr, &params.beta)
}

/// Next-frame prior and warm start. Visibility columns outside the retained set restart at 1
/// so that points dropped in this frame can be picked up again.
pub fn temporal_update(
    result: &FrameResult,
    params: &ModelParams,
    mode: PriorMode,
    sys: &SystemConfig,
) -> Result<(TemporalPrior, WarmStart)> {
    let q = result.grid.len();
    let m = sys.antennas;
    let prior = match mode {
        PriorMode::Iid => initial_prior(q, params, sys)?,
        PriorMode::Markov => {
            let support = predict_support(&result.support, &params.support);
            let alpha = predict_alpha(&result.alpha, &result.omega, q, m, &params.vr)?;
            let (beta_mean, beta_var) = predict_beta(&result.beta_mean, &result.beta_var, &result.omega, q, m, &params.beta)?;
            TemporalPrior { antennas: m, support, alpha, beta_mean, beta_var }
        }
    };
    let mut vr = result.vr.clone();
    let mut keep = vec![false; q];
    for &k in &result.omega {
        keep[k] = true;
    }
    for (col, &kept) in keep.iter().enumerate() {
        if !kept {
            vr.column_mut(col).fill(1.0);
        }
    }
    Ok((prior, WarmStart { grid: result.grid.clone(), vr }))
}

/// Tracks a whole sequence starting from a cold grid.
pub fn track_sequence(
    observations: &[Vec<Complex64>],
    initial_grid: &PolarDelayGrid,
    params: &ModelParams,
    cfg: &TrackerConfig,
    sys: &SystemConfig,
) -> Result<Vec<FrameResult>> {
    if observations.is_empty() {
        return Err(Error::Argument("no frames to track".into()));
    }
    let mut prior = initial_prior(initial_grid.len(), params, sys)?;
    let mut warm = WarmStart::cold(initial_grid.clone(), sys.antennas);
    let mut out = Vec::with_capacity(observations.len());
    for y in observations {
        let r = track_frame(y, &warm, &prior, params, cfg, sys)?;
        (prior, warm) = temporal_update(&r, params, cfg.mode, sys)?;
        out.push(r);
    }
    Ok(out)
}
