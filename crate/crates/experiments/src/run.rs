//! One Monte-Carlo scenario: simulate a scene sequence, render it at one SNR and track it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use xltrack::grid::PolarDelayGrid;
use xltrack::metrics::{channel_nmse, to_db, vr_error_ratio};
use xltrack::scenario::{evolve_scene, init_scene, render, NoiseLevel, SceneState};
use xltrack::tracker::{initial_prior, temporal_update, track_frame, PriorMode, WarmStart};

use crate::config::ExperimentConfig;
use crate::error::ExpResult;

/// What varies between scenarios of one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub seed: u64,
    /// Index of the SNR within its sweep; selects the noise stream.
    pub snr_index: usize,
    pub snr_db: f64,
    pub mode: PriorMode,
    pub paths: usize,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    /// 1-based.
    pub frame: usize,
    pub true_paths: usize,
    pub channel_nmse_db: Option<f64>,
    pub vr_ratio: Option<f64>,
    pub outer_iterations: usize,
    /// Channel NMSE after each outer iteration, when traced.
    pub iteration_nmse_db: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub frames: Vec<FrameOutcome>,
    pub wall_ms: f64,
}

impl RunOutcome {
    /// Visibility NMSE over all frames with paths.
    pub fn vr_nmse_db(&self) -> Option<f64> {
        let v: Vec<f64> = self.frames.iter().filter_map(|f| f.vr_ratio).collect();
        if v.is_empty() {
            None
        } else {
            Some(to_db(v.iter().sum::<f64>() / v.len() as f64))
        }
    }
}

pub fn initial_grid(cfg: &ExperimentConfig) -> ExpResult<PolarDelayGrid> {
    Ok(PolarDelayGrid::initial(&cfg.grid.polar, cfg.grid.delay_points, &cfg.system)?)
}

/// Ground-truth scenes; the randomness depends on the seed alone.
pub fn simulate_scenes(cfg: &ExperimentConfig, seed: u64, paths: usize, speed_kmh: f64, frames: usize) -> ExpResult<Vec<SceneState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = xltrack::scenario::SceneConfig { paths, speed_kmh, ..cfg.scene.clone() };
    let mut out = Vec::with_capacity(frames);
    let mut state = init_scene(paths, &cfg.system, &scene, &cfg.priors, &mut rng)?;
    for t in 0..frames {
        if t > 0 {
            state = evolve_scene(&state, &cfg.system, &scene, &cfg.priors, &mut rng)?;
        }
        out.push(state.clone());
    }
    Ok(out)
}

fn noise_rng(seed: u64, snr_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + snr_index as u64);
    rng
}

pub fn run_scenario(cfg: &ExperimentConfig, spec: &RunSpec, frames: usize, trace: bool) -> ExpResult<RunOutcome> {
    let start = Instant::now();
    let sys = &cfg.system;
    let scenes = simulate_scenes(cfg, spec.seed, spec.paths, spec.speed_kmh, frames)?;
    let mut rng = noise_rng(spec.seed, spec.snr_index);
    let tracker = xltrack::tracker::TrackerConfig { mode: spec.mode, record_trace: trace, ..cfg.tracker };
    let grid = initial_grid(cfg)?;
    let mut prior = initial_prior(grid.len(), &cfg.priors, sys)?;
    let mut warm = WarmStart::cold(grid, sys.antennas);
    let mut last_var = None;
    let mut out = Vec::with_capacity(frames);
    for scene in &scenes {
        let energy = scene.channel(sys)?.energy();
        // A frame without paths keeps the previous noise level.
        let level = if energy > 0.0 {
            NoiseLevel::SnrDb(spec.snr_db)
        } else {
            NoiseLevel::Variance(last_var.unwrap_or(1.0 / (sys.channel_len() as f64 * 10f64.powf(spec.snr_db / 10.0))))
        };
        let frame = render(scene, sys, level, &mut rng)?;
        last_var = Some(frame.noise_variance);
        let result = track_frame(&frame.observation.y, &warm, &prior, &cfg.priors, &tracker, sys)?;
        let est = result.channel(sys);
        let iteration_nmse_db = result
            .trace
            .iter()
            .map(|h| channel_nmse(h, &frame.channel))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(FrameOutcome {
            frame: scene.frame,
            true_paths: scene.paths.len(),
            channel_nmse_db: channel_nmse(&est, &frame.channel)?,
            vr_ratio: vr_error_ratio(&result, scene, sys.max_delay_s)?,
            outer_iterations: result.outer_iterations,
            iteration_nmse_db,
        });
        (prior, warm) = temporal_update(&result, &cfg.priors, spec.mode, sys)?;
    }
    Ok(RunOutcome { spec: *spec, frames: out, wall_ms: start.elapsed().as_secs_f64() * 1e3 })
}
