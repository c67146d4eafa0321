//! Dynamic ground-truth scenes: multipath components that are born, die and drift,
//! each with its own per-antenna visibility profile, rendered through the pilot chain.

use crate::error::{Error, Result};
use crate::hbf::{decode, encode_phase_shifters, mix, AntennaNoise, DecodedObservation, PilotSymbols};
use crate::model::{synthesize_channel, ChannelFrame, PathParams, SystemConfig};
use crate::priors::{gauss_markov_stationary, gauss_markov_step, next_vr_support, ModelParams};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Kinematics and path statistics of the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Number of paths in the first frame.
    pub paths: usize,
    pub min_distance: f64,
    /// Largest distance as a multiple of the Rayleigh distance.
    pub far_factor: f64,
    pub speed_kmh: f64,
    pub frame_interval_s: f64,
    /// Angle-cosine drift per metre travelled.
    pub drift_angle: f64,
    /// Inverse-distance drift (1/m) per metre travelled.
    pub drift_inv_distance: f64,
    /// Delay drift (s) per metre travelled.
    pub drift_delay: f64,
    pub gain_correlation: f64,
    pub max_paths: usize,
    /// Candidate slots for new paths; `None` picks the size that keeps the expected path count at `paths`.
    pub birth_pool: Option<usize>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            paths: 3,
            min_distance: 3.0,
            far_factor: 10.0,
            speed_kmh: 3.0,
            frame_interval_s: 0.05,
            drift_angle: 0.15,
            drift_inv_distance: 0.5,
            drift_delay: 2.4e-7,
            gain_correlation: 0.9,
            max_paths: 16,
            birth_pool: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_distance > 0.0 && self.far_factor > 0.0 && self.frame_interval_s > 0.0 && self.speed_kmh >= 0.0) {
            return Err(Error::Config("scene distances, interval and speed must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gain_correlation) {
            return Err(Error::Config("gain correlation must lie in [0, 1]".into()));
        }
        if self.paths > self.max_paths {
            return Err(Error::Config("initial path count exceeds max_paths".into()));
        }
        Ok(())
    }

    /// Metres travelled between frames.
    pub fn step_length(&self) -> f64 {
        self.speed_kmh / 3.6 * self.frame_interval_s
    }
}

/// A path together with the hidden visibility support and power values that generate its VR.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePath {
    pub params: PathParams,
    pub support: Vec<bool>,
    pub value: Vec<f64>,
}

impl ScenePath {
    /// Visibility weights `u_m = alpha_m max(beta_m, 0)`.
    pub fn vr(&self) -> Vec<f64> {
        self.support.iter().zip(&self.value).map(|(&a, &b)| if a { b.max(0.0) } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    /// 1-based frame index.
    pub frame: usize,
    pub speed_kmh: f64,
    pub frame_interval_s: f64,
    pub birth_pool: usize,
    pub paths: Vec<ScenePath>,
}

impl SceneState {
    pub fn path_params(&self) -> Vec<PathParams> {
        self.paths.iter().map(|p| p.params).collect()
    }

    pub fn vrs(&self) -> Vec<Vec<f64>> {
        self.paths.iter().map(|p| p.vr()).collect()
    }

    pub fn channel(&self, cfg: &SystemConfig) -> Result<ChannelFrame> {
        synthesize_channel(&self.path_params(), &self.vrs(), cfg)
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
}

fn new_path<R: Rng + ?Sized>(cfg: &SystemConfig, scene: &SceneConfig, prior: &ModelParams, rng: &mut R) -> ScenePath {
    let r_far = scene.far_factor * cfg.rayleigh_distance();
    let (lo, hi) = (scene.min_distance.ln(), r_far.max(scene.min_distance).ln());
    let params = PathParams {
        gain: complex_normal(rng),
        cos_angle: rng.random_range(-1.0..=1.0),
        distance: (lo + (hi - lo) * rng.random::<f64>()).exp(),
        delay: rng.random_range(0.0..=cfg.max_delay_s),
    };
    let support = next_vr_support(None, cfg.antennas, &prior.vr, rng);
    let value = (0..cfg.antennas).map(|_| gauss_markov_stationary(&prior.beta, rng)).collect();
    ScenePath { params, support, value }
}

pub fn init_scene<R: Rng + ?Sized>(
    paths: usize,
    cfg: &SystemConfig,
    scene: &SceneConfig,
    prior: &ModelParams,
    rng: &mut R,
) -> Result<SceneState> {
    cfg.validate()?;
    scene.validate()?;
    let s = &prior.support;
    let pool = scene.birth_pool.unwrap_or_else(|| {
        if s.p01 > 0.0 {
            (paths as f64 * (s.p01 + s.p10) / s.p01).round() as usize
        } else {
            paths
        }
    });
    Ok(SceneState {
        frame: 1,
        speed_kmh: scene.speed_kmh,
        frame_interval_s: scene.frame_interval_s,
        birth_pool: pool.max(paths),
        paths: (0..paths).map(|_| new_path(cfg, scene, prior, rng)).collect(),
    })
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let mut v = x;
    for _ in 0..4 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

/// One frame of births, deaths, geometry drift, gain fading and VR evolution.
pub fn evolve_scene<R: Rng + ?Sized>(
    state: &SceneState,
    cfg: &SystemConfig,
    scene: &SceneConfig,
    prior: &ModelParams,
    rng: &mut R,
) -> Result<SceneState> {
    let step = state.speed_kmh / 3.6 * state.frame_interval_s;
    let r_far = scene.far_factor * cfg.rayleigh_distance();
    let (k_lo, k_hi) = (1.0 / r_far, 1.0 / scene.min_distance);
    let rho = scene.gain_correlation;
    let mut paths = Vec::with_capacity(state.paths.len());
    for p in &state.paths {
        if rng.random::<f64>() < prior.support.p10 {
            continue;
        }
        let mut q = p.clone();
        let dn = |rng: &mut R, scale: f64| step * scale * rng.sample::<f64, _>(StandardNormal);
        let da = dn(rng, scene.drift_angle);
        let dk = dn(rng, scene.drift_inv_distance);
        let dt = dn(rng, scene.drift_delay);
        if step > 0.0 {
            q.params.cos_angle = reflect(p.params.cos_angle + da, -1.0, 1.0);
            q.params.distance = 1.0 / reflect(1.0 / p.params.distance + dk, k_lo, k_hi);
            q.params.delay = reflect(p.params.delay + dt, 0.0, cfg.max_delay_s);
        }
        q.params.gain = rho * p.params.gain + (1.0 - rho * rho).sqrt() * complex_normal(rng);
        q.support = next_vr_support(Some(&p.support), cfg.antennas, &prior.vr, rng);
        q.value = p.value.iter().map(|&b| gauss_markov_step(b, &prior.beta, rng)).collect();
        paths.push(q);
    }
    let candidates = state.birth_pool.saturating_sub(state.paths.len());
    for _ in 0..candidates {
        if rng.random::<f64>() < prior.support.p01 && paths.len() < scene.max_paths {
            paths.push(new_path(cfg, scene, prior, rng));
        }
    }
    Ok(SceneState { frame: state.frame + 1, paths, ..state.clone() })
}

/// Noise setting for [`render`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Off,
    /// Target `10 log10(|h|^2 / |z|^2)` of the decoded observation.
    SnrDb(f64),
    /// Variance of each decoded noise entry.
    Variance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub channel: ChannelFrame,
    pub observation: DecodedObservation,
    /// `+inf` without noise.
    pub realized_snr_db: f64,
    pub noise_variance: f64,
}

/// Pilot transmission of the current scene through the coded hybrid array.
pub fn render<R: Rng + ?Sized>(state: &SceneState, cfg: &SystemConfig, noise: NoiseLevel, rng: &mut R) -> Result<RenderedFrame> {
    let channel = state.channel(cfg)?;
    let energy = channel.energy();
    let decoded_var = match noise {
        NoiseLevel::Off => 0.0,
        NoiseLevel::SnrDb(snr) => {
            if energy <= 0.0 {
                return Err(Error::Degenerate("cannot set an SNR for a zero-energy channel".into()));
            }
            energy / (cfg.channel_len() as f64 * 10f64.powf(snr / 10.0))
        }
        NoiseLevel::Variance(v) => {
            if !(v >= 0.0) {
                return Err(Error::Argument("noise variance must be non-negative".into()));
            }
            v
        }
    };
    let code = encode_phase_shifters(cfg)?;
    let pilots = PilotSymbols::ones(cfg.pilots, cfg.subcarriers);
    let raw_var = decoded_var * cfg.pilots as f64 / cfg.antennas_per_rf() as f64;
    let z = if raw_var > 0.0 { AntennaNoise::draw(cfg, raw_var, rng) } else { AntennaNoise::zeros(cfg) };
    let obs = mix(&channel, &code, &pilots, &z)?;
    let mut observation = decode(&obs, &code, &pilots)?;
    if raw_var == 0.0 {
        observation.y.clone_from(&channel.h);
    }
    let noise_energy: f64 = observation.y.iter().zip(&channel.h).map(|(y, h)| (y - h).norm_sqr()).sum();
    let realized_snr_db = if noise_energy > 0.0 { 10.0 * (energy / noise_energy).log10() } else { f64::INFINITY };
    Ok(RenderedFrame { channel, observation, realized_snr_db, noise_variance: decoded_var })
}

/// Text record of one frame:
///
/// ```text
/// frame <t> paths <L>
/// path <gain_re> <gain_im> <cos_angle> <distance> <delay>
/// vr <u_1> ... <u_M>
/// ```
///
/// with one `path`/`vr` pair per path.
pub fn format_scene(state: &SceneState) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "frame {} paths {}", state.frame, state.paths.len());
    for p in &state.paths {
        let q = &p.params;
        let _ = writeln!(s, "path {} {} {} {} {}", q.gain.re, q.gain.im, q.cos_angle, q.distance, q.delay);
        let vr: Vec<String> = p.vr().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "vr {}", vr.join(" "));
    }
    s
}

/// A frame parsed back from [`format_scene`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub frame: usize,
    pub paths: Vec<PathParams>,
    pub vrs: Vec<Vec<f64>>,
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    tok.ok_or_else(|| Error::Parse(format!("line {line}: missing field")))?
        .parse()
        .map_err(|e| Error::Parse(format!("line {line}: {e}")))
}

pub fn parse_scenes(text: &str) -> Result<Vec<SceneRecord>> {
    let mut out: Vec<SceneRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            None => continue,
            Some("frame") => {
                let frame = parse_f64(toks.next(), line_no)? as usize;
                out.push(SceneRecord { frame, paths: Vec::new(), vrs: Vec::new() });
            }
            Some("path") => {
                let rec = out.last_mut().ok_or_else(|| Error::Parse(format!("line {line_no}: path before frame")))?;
                let v: Vec<f64> = (0..5).map(|_| parse_f64(toks.next(), line_no)).collect::<Result<_>>()?;
                rec.paths.push(PathParams { gain: Complex64::new(v[0], v[1]), cos_angle: v[2], distance: v[3], delay: v[4] });
            }
            Some("vr") => {
                let rec = out.last_mut().ok_or_else(|| Error::Parse(format!("line {line_no}: vr before frame")))?;
                let v: Vec<f64> = toks.map(|t| parse_f64(Some(t), line_no)).collect::<Result<_>>()?;
                rec.vrs.push(v);
            }
            Some(other) => return Err(Error::Parse(format!("line {line_no}: unknown record '{other}'"))),
        }
    }
    Ok(out)
}
