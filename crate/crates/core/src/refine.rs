//! Off-grid refinement of the retained grid points.
//!
//! The angle cosine, inverse distance and delay of every point in `Omega` are moved by
//! projected gradient ascent on `-gamma |y - F x|^2`, one parameter block at a time, with
//! backtracking step sizes.

use crate::error::{Error, Result};
use crate::grid::PolarDelayGrid;
use crate::linear::grid_synthesize;
use crate::model::{delay_response, steering_vector_inv, SystemConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const NEG_J: Complex64 = Complex64::new(0.0, -1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Angle,
    InvDistance,
    Delay,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Angle, Block::InvDistance, Block::Delay];

    fn index(self) -> usize {
        self as usize
    }

    /// Natural size of one grid cell in this block.
    pub fn scale(self, cfg: &SystemConfig) -> f64 {
        match self {
            Block::Angle => 1.0,
            Block::InvDistance => {
                let m = cfg.antennas as f64;
                2.0 * cfg.wavelength() / (m * m * cfg.spacing().powi(2))
            }
            Block::Delay => 1.0 / (cfg.subcarriers as f64 * cfg.subcarrier_spacing_hz),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub max_sweeps: usize,
    pub max_backtracks: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    /// Initial steps in units of [`Block::scale`].
    pub initial_step: [f64; 3],
    pub min_inv_distance: f64,
    pub max_inv_distance: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 5,
            max_backtracks: 30,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            initial_step: [1e-2, 1e-2, 0.1],
            min_inv_distance: 1e-6,
            max_inv_distance: 0.5,
        }
    }
}

/// Parameters of one retained point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointParams {
    pub cos_angle: f64,
    pub inv_distance: f64,
    pub delay: f64,
}

impl PointParams {
    fn get(&self, b: Block) -> f64 {
        match b {
            Block::Angle => self.cos_angle,
            Block::InvDistance => self.inv_distance,
            Block::Delay => self.delay,
        }
    }

    fn set(&mut self, b: Block, v: f64) {
        match b {
            Block::Angle => self.cos_angle = v,
            Block::InvDistance => self.inv_distance = v,
            Block::Delay => self.delay = v,
        }
    }
}

/// Log-likelihood of the retained points with everything else held fixed.
pub struct RefineProblem<'a> {
    cfg: &'a SystemConfig,
    u: &'a DMatrix<f64>,
    x: &'a [Complex64],
    omega: &'a [usize],
    gamma: f64,
    /// Observation minus the contribution of the frozen points.
    base: Vec<Complex64>,
}

impl<'a> RefineProblem<'a> {
    pub fn new(
        grid: &PolarDelayGrid,
        u: &'a DMatrix<f64>,
        x: &'a [Complex64],
        y: &[Complex64],
        gamma: f64,
        omega: &'a [usize],
        cfg: &'a SystemConfig,
    ) -> Result<Self> {
        if x.len() != grid.len() || u.ncols() != grid.len() || u.nrows() != cfg.antennas || y.len() != cfg.channel_len() {
            return Err(Error::Argument("refinement inputs have inconsistent sizes".into()));
        }
        if omega.iter().any(|&q| q >= grid.len()) {
            return Err(Error::Argument("retained index out of range".into()));
        }
        let mut frozen = x.to_vec();
        for &q in omega {
            frozen[q] = ZERO;
        }
        let fixed = grid_synthesize(grid, u, &frozen, cfg);
        let base = y.iter().zip(&fixed).map(|(a, b)| a - b).collect();
        Ok(Self { cfg, u, x, omega, gamma, base })
    }

    pub fn params(&self, grid: &PolarDelayGrid) -> Vec<PointParams> {
        self.omega
            .iter()
            .map(|&q| PointParams { cos_angle: grid.cos_angle[q], inv_distance: grid.inv_distance(q), delay: grid.delay[q] })
            .collect()
    }

    pub fn residual(&self, params: &[PointParams]) -> Vec<Complex64> {
        let mut r = self.base.clone();
        let n_sub = self.cfg.subcarriers;
        for (k, &q) in self.omega.iter().enumerate() {
            let p = params[k];
            let a = steering_vector_inv(p.cos_angle, p.inv_distance, self.cfg);
            let d = delay_response(p.delay, self.cfg);
            for m in 0..self.cfg.antennas {
                let u = self.u[(m, q)];
                if u == 0.0 {
                    continue;
                }
                let c = self.x[q] * a[m] * u;
                for (o, dv) in r[m * n_sub..(m + 1) * n_sub].iter_mut().zip(&d) {
                    *o -= c * dv;
                }
            }
        }
        r
    }

    pub fn log_likelihood(&self, params: &[PointParams]) -> f64 {
        -self.gamma * self.residual(params).iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// Gradient of the log-likelihood with respect to all three blocks.
    pub fn gradient(&self, params: &[PointParams]) -> [Vec<f64>; 3] {
        let r = self.residual(params);
        let cfg = self.cfg;
        let (n_sub, k_len) = (cfg.subcarriers, self.omega.len());
        let k0 = 2.0 * PI / cfg.wavelength();
        let w0 = 2.0 * PI * cfg.subcarrier_spacing_hz;
        let mut out = [vec![0.0; k_len], vec![0.0; k_len], vec![0.0; k_len]];
        for (k, &q) in self.omega.iter().enumerate() {
            let p = params[k];
            if self.x[q] == ZERO {
                continue;
            }
            let a = steering_vector_inv(p.cos_angle, p.inv_distance, cfg);
            let d = delay_response(p.delay, cfg);
            let (mut ga, mut gk, mut gt) = (ZERO, ZERO, ZERO);
            for m in 0..cfg.antennas {
                let u = self.u[(m, q)];
                if u == 0.0 {
                    continue;
                }
                let rm = &r[m * n_sub..(m + 1) * n_sub];
                let mut s = ZERO;
                let mut st = ZERO;
                for (i, (rv, dv)) in rm.iter().zip(&d).enumerate() {
                    let t = rv.conj() * dv;
                    s += t;
                    st += t * ((i + 1) as f64);
                }
                let dm = cfg.centered_index(m) * cfg.spacing();
                let base = a[m] * u;
                let dphi_a = k0 * (-dm - dm * dm * p.cos_angle * p.inv_distance);
                let dphi_k = k0 * dm * dm * (1.0 - p.cos_angle * p.cos_angle) / 2.0;
                ga += base * s * NEG_J * dphi_a;
                gk += base * s * NEG_J * dphi_k;
                gt += base * st * NEG_J * w0;
            }
            let scale = 2.0 * self.gamma;
            out[0][k] = scale * (self.x[q] * ga).re;
            out[1][k] = scale * (self.x[q] * gk).re;
            out[2][k] = scale * (self.x[q] * gt).re;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    /// Log-likelihood after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub accepted: usize,
    pub sweeps: usize,
    /// Step sizes remembered for each block.
    pub steps: [f64; 3],
}

fn project(b: Block, v: f64, cfg: &RefineConfig, max_delay: f64) -> f64 {
    match b {
        Block::Angle => v.clamp(-1.0, 1.0),
        Block::InvDistance => v.clamp(cfg.min_inv_distance, cfg.max_inv_distance),
        Block::Delay => v.clamp(0.0, max_delay),
    }
}

/// Refines the points of `omega` in place and returns the likelihood trace.
#[allow(clippy::too_many_arguments)]
pub fn armijo_refine(
    grid: &mut PolarDelayGrid,
    u: &DMatrix<f64>,
    x: &[Complex64],
    y: &[Complex64],
    gamma: f64,
    omega: &[usize],
    sys: &SystemConfig,
    cfg: &RefineConfig,
) -> Result<RefineReport> {
    let problem = RefineProblem::new(grid, u, x, y, gamma, omega, sys)?;
    let mut params = problem.params(grid);
    let mut value = problem.log_likelihood(&params);
    let mut steps = [0.0; 3];
    for b in Block::ALL {
        steps[b.index()] = cfg.initial_step[b.index()] * b.scale(sys);
    }
    let mut report = RefineReport { trace: vec![value], accepted: 0, sweeps: 0, steps };
    if omega.is_empty() || !(gamma > 0.0) {
        return Ok(report);
    }
    for _ in 0..cfg.max_sweeps {
        report.sweeps += 1;
        let mut improved = false;
        for b in Block::ALL {
            let g = problem.gradient(&params)[b.index()].clone();
            let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(gmax > 0.0) {
                continue;
            }
            let mut step = steps[b.index()];
            for _ in 0..cfg.max_backtracks {
                let mut trial = params.clone();
                let mut ascent = 0.0;
                for k in 0..params.len() {
                    let old = params[k].get(b);
                    let new = project(b, old + step * g[k] / gmax, cfg, sys.max_delay_s);
                    trial[k].set(b, new);
                    ascent += g[k] * (new - old);
                }
                if ascent <= 0.0 {
                    break;
                }
                let v = problem.log_likelihood(&trial);
                if v >= value + cfg.sufficient_decrease * ascent {
                    params = trial;
                    value = v;
                    report.trace.push(v);
                    report.accepted += 1;
                    improved = true;
                    steps[b.index()] = step;
                    break;
                }
                step *= cfg.shrink;
            }
        }
        if !improved {
            break;
        }
    }
    for (k, &q) in omega.iter().enumerate() {
        grid.cos_angle[q] = params[k].cos_angle;
        grid.distance[q] = 1.0 / params[k].inv_distance;
        grid.delay[q] = params[k].delay;
    }
    report.steps = steps;
    Ok(report)
}
