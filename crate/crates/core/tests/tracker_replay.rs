use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xltrack::grid::{PolarDelayGrid, PolarGridSpec};
use xltrack::model::{synthesize_channel, PathParams, SystemConfig};
use xltrack::priors::{ModelParams, TemporalPrior};
use xltrack::scenario::{evolve_scene, init_scene, render, NoiseLevel, SceneConfig};
use xltrack::tracker::{initial_prior, temporal_update, track_frame, track_sequence, PriorMode, TrackerConfig, WarmStart};
use xltrack::Complex64;

fn system() -> SystemConfig {
    SystemConfig { antennas: 16, rf_chains: 4, subcarriers: 8, pilots: 4, ..Default::default() }
}

fn grid(sys: &SystemConfig) -> PolarDelayGrid {
    PolarDelayGrid::initial(&PolarGridSpec { points: 8, ..Default::default() }, 4, sys).unwrap()
}

fn observations(sys: &SystemConfig, frames: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let params = ModelParams::default();
    let scene_cfg = SceneConfig { paths: 2, speed_kmh: 30.0, ..SceneConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = init_scene(2, sys, &scene_cfg, &params, &mut rng).unwrap();
    let mut out = Vec::new();
    for t in 0..frames {
        if t > 0 {
            scene = evolve_scene(&scene, sys, &scene_cfg, &params, &mut rng).unwrap();
        }
        let level = if scene.paths.is_empty() { NoiseLevel::Variance(1e-3) } else { NoiseLevel::SnrDb(10.0) };
        out.push(render(&scene, sys, level, &mut rng).unwrap().observation.y);
    }
    out
}

#[test]
fn frame_depends_only_on_serialized_hand_off() {
    let sys = system();
    let params = ModelParams::default();
    let cfg = TrackerConfig { outer_iterations: 4, ..TrackerConfig::default() };
    let ys = observations(&sys, 3, 3);
    let g = grid(&sys);
    let sequence = track_sequence(&ys, &g, &params, &cfg, &sys).unwrap();

    let (prior, warm) = temporal_update(&sequence[0], &params, PriorMode::Markov, &sys).unwrap();
    let prior: TemporalPrior = serde_json::from_str(&serde_json::to_string(&prior).unwrap()).unwrap();
    let warm: WarmStart = serde_json::from_str(&serde_json::to_string(&warm).unwrap()).unwrap();
    let replay = track_frame(&ys[1], &warm, &prior, &params, &cfg, &sys).unwrap();
    assert_eq!(replay, sequence[1]);

    let stored: Vec<xltrack::tracker::FrameResult> = serde_json::from_str(&serde_json::to_string(&sequence).unwrap()).unwrap();
    assert_eq!(stored, sequence);
}

#[test]
fn memoryless_mode_ignores_history() {
    let sys = system();
    let params = ModelParams::default();
    let cfg = TrackerConfig { outer_iterations: 3, mode: PriorMode::Iid, ..TrackerConfig::default() };
    let ys = observations(&sys, 2, 8);
    let g = grid(&sys);
    let first = track_frame(&ys[0], &WarmStart::cold(g.clone(), sys.antennas), &initial_prior(g.len(), &params, &sys).unwrap(), &params, &cfg, &sys).unwrap();
    let (prior, _) = temporal_update(&first, &params, PriorMode::Iid, &sys).unwrap();
    assert_eq!(prior, initial_prior(g.len(), &params, &sys).unwrap());
}

#[test]
fn repeated_frame_with_confident_prior_settles_sooner() {
    let sys = system();
    let params = ModelParams::default();
    let g = grid(&sys);
    let q0 = 2 * 4 + 1;
    let path = PathParams { gain: Complex64::new(0.8, -0.6), cos_angle: g.cos_angle[q0], distance: g.distance[q0], delay: g.delay[q0] };
    let y = synthesize_channel(&[path], &[vec![1.0; sys.antennas]], &sys).unwrap().h;
    let cfg = TrackerConfig::default();
    let first = track_frame(&y, &WarmStart::cold(g.clone(), sys.antennas), &initial_prior(g.len(), &params, &sys).unwrap(), &params, &cfg, &sys).unwrap();
    let (prior, warm) = temporal_update(&first, &params, PriorMode::Markov, &sys).unwrap();
    let second = track_frame(&y, &warm, &prior, &params, &cfg, &sys).unwrap();
    assert!(
        second.outer_iterations < first.outer_iterations,
        "first frame {} iterations, repeated frame {}",
        first.outer_iterations,
        second.outer_iterations
    );
}
