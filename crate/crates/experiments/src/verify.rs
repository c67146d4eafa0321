//! Self-checks against independent small-instance oracles.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xltrack::grid::{PolarDelayGrid, PolarGridSpec};
use xltrack::hbf::{decode, encode_phase_shifters, mix, AntennaNoise, PilotSymbols};
use xltrack::linear::{grid_synthesize, LinearModel};
use xltrack::model::{synthesize_channel, ChannelFrame, PathParams, SystemConfig};
use xltrack::priors::ModelParams;
use xltrack::refine::{Block, PointParams, RefineProblem};
use xltrack::tracker::initial_prior;
use xltrack::turbo::{build_antenna_models, run_turbo, spike_slab_subgraph, TurboConfig, VrPrior};
use xltrack::vbi::{run_vbi, VbiConfig, VbiMode};
use xltrack::Complex64;

use crate::error::{ExpError, ExpResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let (u1, u2): (f64, f64) = (rng.random::<f64>().max(f64::MIN_POSITIVE), rng.random());
    let r = (-u1.ln()).sqrt();
    Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
}

fn hbf_system(pilots: usize) -> SystemConfig {
    SystemConfig { antennas: 16, rf_chains: 4, subcarriers: 16, pilots, ..Default::default() }
}

/// Noiseless mix-and-decode reproduces random channels for `P` in `{M_sub, 2 M_sub, 4 M_sub}`.
pub fn hbf_round_trip(seed: u64) -> ExpResult<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for factor in [1, 2, 4] {
        let cfg = hbf_system(4 * factor);
        let code = encode_phase_shifters(&cfg)?;
        for _ in 0..10 {
            let h: Vec<Complex64> = (0..cfg.channel_len()).map(|_| complex_normal(&mut rng)).collect();
            let frame = ChannelFrame::from_vec(cfg.subcarriers, cfg.antennas, h)?;
            let pilots = PilotSymbols::random_phase(cfg.pilots, cfg.subcarriers, &mut rng);
            let obs = mix(&frame, &code, &pilots, &AntennaNoise::zeros(&cfg))?;
            let dec = decode(&obs, &code, &pilots)?;
            worst = worst.max(rel_err(&dec.y, &frame.h));
        }
    }
    Ok(CheckOutcome { name: "hbf_round_trip", passed: worst <= 1e-12, detail: format!("max relative error {worst:.3e} (limit 1e-12)") })
}

/// Empirical decoded noise variance over the per-antenna variance, against `M_sub / P`.
pub fn noise_scaling(seed: u64, draws: usize) -> ExpResult<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for factor in [1, 2, 4] {
        let cfg = hbf_system(4 * factor);
        let code = encode_phase_shifters(&cfg)?;
        let pilots = PilotSymbols::random_phase(cfg.pilots, cfg.subcarriers, &mut rng);
        let zero = ChannelFrame::zeros(cfg.subcarriers, cfg.antennas);
        let raw = 0.7;
        let (mut sum, mut count) = (0.0, 0usize);
        while count < draws {
            let z = AntennaNoise::draw(&cfg, raw, &mut rng);
            let dec = decode(&mix(&zero, &code, &pilots, &z)?, &code, &pilots)?;
            sum += dec.y.iter().map(|v| v.norm_sqr()).sum::<f64>();
            count += dec.y.len();
        }
        let ratio = sum / count as f64 / raw;
        let expected = 4.0 / cfg.pilots as f64;
        let dev = (ratio / expected - 1.0).abs();
        worst = worst.max(dev);
        parts.push(format!("P={} ratio {ratio:.4} vs {expected:.4}", cfg.pilots));
    }
    Ok(CheckOutcome {
        name: "noise_scaling",
        passed: worst <= 0.02,
        detail: format!("{}; worst deviation {:.2}% (limit 2%)", parts.join(", "), 100.0 * worst),
    })
}

fn perturbed(p: &PointParams, block: Block, h: f64) -> PointParams {
    let mut q = *p;
    match block {
        Block::Angle => q.cos_angle += h,
        Block::InvDistance => q.inv_distance += h,
        Block::Delay => q.delay += h,
    }
    q
}

/// Analytic refinement gradients against central differences, 100 instances per block.
pub fn gradient_check(seed: u64) -> ExpResult<CheckOutcome> {
    let cfg = SystemConfig { antennas: 16, rf_chains: 4, subcarriers: 8, pilots: 4, ..Default::default() };
    let spec = PolarGridSpec { points: 8, rings_per_angle: 1, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for (bi, block) in Block::ALL.into_iter().enumerate() {
        let mut done = 0;
        while done < 100 {
            let mut grid = PolarDelayGrid::initial(&spec, 3, &cfg)?;
            for q in 0..grid.len() {
                grid.cos_angle[q] = rng.random_range(-0.9..0.9);
                grid.distance[q] = rng.random_range(3.0..30.0);
                grid.delay[q] = rng.random_range(0.0..cfg.max_delay_s);
            }
            let u = DMatrix::from_fn(cfg.antennas, grid.len(), |_, _| rng.random_range(0.0..1.5));
            let x: Vec<Complex64> = (0..grid.len()).map(|_| complex_normal(&mut rng)).collect();
            let y: Vec<Complex64> = (0..cfg.channel_len()).map(|_| complex_normal(&mut rng)).collect();
            let omega: Vec<usize> = (0..grid.len()).filter(|_| rng.random::<f64>() < 0.3).collect();
            if omega.is_empty() {
                continue;
            }
            let gamma = rng.random_range(0.5..5.0);
            let p = RefineProblem::new(&grid, &u, &x, &y, gamma, &omega, &cfg)?;
            let params = p.params(&grid);
            let g = p.gradient(&params);
            let h = 1e-6 * block.scale(&cfg);
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..params.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[k] = perturbed(&params[k], block, h);
                minus[k] = perturbed(&params[k], block, -h);
                let fd = (p.log_likelihood(&plus) - p.log_likelihood(&minus)) / (2.0 * h);
                num += (fd - g[bi][k]).powi(2);
                den += fd * fd;
            }
            worst[bi] = worst[bi].max((num / den.max(f64::MIN_POSITIVE)).sqrt());
            done += 1;
        }
    }
    let passed = worst.iter().all(|&w| w <= 1e-5);
    Ok(CheckOutcome {
        name: "gradient_check",
        passed,
        detail: format!("worst relative error angle {:.2e}, inverse distance {:.2e}, delay {:.2e} (limit 1e-5)", worst[0], worst[1], worst[2]),
    })
}

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Posterior moments by summing over every activity pattern of one sub-graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub alpha: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_var: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn enumerate_subgraph(
    obs_mean: &[f64],
    obs_var: &[f64],
    pi: &[f64],
    slab_mean: &[f64],
    slab_var: &[f64],
    spatial: Option<(f64, f64)>,
) -> Enumerated {
    let m = obs_mean.len();
    let mut log_w = Vec::with_capacity(1 << m);
    for pattern in 0u32..(1 << m) {
        let on = |i: usize| pattern >> i & 1 == 1;
        let mut lw = 0.0;
        for i in 0..m {
            lw += if on(i) {
                pi[i].ln() + ln_gauss(obs_mean[i], slab_mean[i], slab_var[i] + obs_var[i])
            } else {
                (1.0 - pi[i]).ln() + ln_gauss(obs_mean[i], 0.0, obs_var[i])
            };
            if let (Some((p01, p10)), true) = (spatial, i > 0) {
                lw += match (on(i - 1), on(i)) {
                    (false, false) => (1.0 - p01).ln(),
                    (false, true) => p01.ln(),
                    (true, false) => p10.ln(),
                    (true, true) => (1.0 - p10).ln(),
                };
            }
        }
        log_w.push(lw);
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = Enumerated {
        alpha: vec![0.0; m],
        beta_mean: vec![0.0; m],
        beta_var: vec![0.0; m],
        u_mean: vec![0.0; m],
        u_var: vec![0.0; m],
    };
    for i in 0..m {
        let p: f64 = w.iter().enumerate().filter(|(s, _)| s >> i & 1 == 1).map(|(_, v)| v).sum::<f64>() / z;
        // Given activity, beta is observed through u; otherwise it keeps its prior.
        let post_var = slab_var[i] * obs_var[i] / (slab_var[i] + obs_var[i]);
        let post_mean = post_var * (slab_mean[i] / slab_var[i] + obs_mean[i] / obs_var[i]);
        let first = (1.0 - p) * slab_mean[i] + p * post_mean;
        let second = (1.0 - p) * (slab_var[i] + slab_mean[i].powi(2)) + p * (post_var + post_mean.powi(2));
        out.alpha[i] = p;
        out.beta_mean[i] = first;
        out.beta_var[i] = second - first * first;
        out.u_mean[i] = p * post_mean;
        out.u_var[i] = p * (post_var + post_mean.powi(2)) - (p * post_mean).powi(2);
    }
    out
}

/// Chain marginals and moments of one sub-graph against exhaustive enumeration.
pub fn module_b_oracle(seed: u64) -> ExpResult<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for m in [4usize, 8, 12] {
        for trial in 0..20 {
            let obs_mean: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..1.5)).collect();
            let obs_var: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let pi: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
            let slab_mean: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
            let slab_var: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
            let spatial = if trial % 4 == 0 { None } else { Some((rng.random_range(0.01..0.5), rng.random_range(0.01..0.5))) };
            let got = spike_slab_subgraph(&obs_mean, &obs_var, &pi, &slab_mean, &slab_var, spatial);
            let want = enumerate_subgraph(&obs_mean, &obs_var, &pi, &slab_mean, &slab_var, spatial);
            for (a, b) in [
                (&got.alpha, &want.alpha),
                (&got.beta_mean, &want.beta_mean),
                (&got.beta_var, &want.beta_var),
                (&got.u_mean, &want.u_mean),
                (&got.u_var, &want.u_var),
            ] {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    Ok(CheckOutcome { name: "module_b_oracle", passed: worst <= 1e-10, detail: format!("max abs deviation {worst:.3e} over M in {{4, 8, 12}} (limit 1e-10)") })
}

fn small_system() -> SystemConfig {
    SystemConfig { antennas: 32, rf_chains: 8, subcarriers: 16, pilots: 4, ..Default::default() }
}

/// Three on-grid gains with random visibility windows, observed at 10 dB.
/// Returns the channel NMSE of the exact and inverse-free modes and their mutual gain NMSE.
pub fn vbi_modes_instance(seed: u64) -> ExpResult<(f64, f64, f64)> {
    let sys = small_system();
    let params = ModelParams::default();
    let grid = PolarDelayGrid::initial(&PolarGridSpec { points: 16, ..Default::default() }, 4, &sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::from_element(sys.antennas, grid.len(), 1.0);
    let mut x_true = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut placed = 0;
    while placed < 3 {
        let q = rng.random_range(0..grid.len());
        if x_true[q] != Complex64::new(0.0, 0.0) {
            continue;
        }
        x_true[q] = complex_normal(&mut rng);
        let start = rng.random_range(0..sys.antennas / 2);
        let len = rng.random_range(sys.antennas / 4..=sys.antennas / 2);
        for m in 0..sys.antennas {
            u[(m, q)] = if m >= start && m < start + len { 1.0 } else { 0.0 };
        }
        placed += 1;
    }
    let h = grid_synthesize(&grid, &u, &x_true, &sys);
    let energy: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    let sd = (energy / (h.len() as f64 * 10.0)).sqrt();
    let y: Vec<Complex64> = h.iter().map(|v| v + sd * complex_normal(&mut rng)).collect();
    let model = LinearModel::from_grid(&grid, &u, &y, &sys)?;
    let prior = initial_prior(grid.len(), &params, &sys)?;
    let base = VbiConfig { max_iter: 2000, tol: 1e-9, ..VbiConfig::default() };
    let exact = run_vbi(&model, &prior.support, &params.hyper, &VbiConfig { mode: VbiMode::Exact, ..base }, None)?;
    let free = run_vbi(&model, &prior.support, &params.hyper, &VbiConfig { mode: VbiMode::InverseFree, ..base }, None)?;
    let nmse = |x: &[Complex64]| rel_err(&grid_synthesize(&grid, &u, x, &sys), &h).powi(2);
    Ok((nmse(&exact.state.mean), nmse(&free.state.mean), rel_err(&free.state.mean, &exact.state.mean).powi(2)))
}

/// Channel NMSE of the inverse-free mode against the exact mode, 20 seeds.
pub fn vbi_oracle(seed: u64) -> ExpResult<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut worst_gap = 0.0f64;
    for s in 0..20 {
        let (exact, free, _) = vbi_modes_instance(seed + s)?;
        worst = worst.max((free - exact).abs());
        worst_gap = worst_gap.max(exact);
    }
    Ok(CheckOutcome {
        name: "vbi_oracle",
        passed: worst <= 1e-3,
        detail: format!("max |NMSE(inverse-free) - NMSE(exact)| {worst:.3e} (limit 1e-3); worst exact-mode NMSE {worst_gap:.3e}"),
    })
}

/// Noiseless single on-grid path: the channel with known visibility, then visibility from the gains.
pub fn exact_recovery_instance(seed: u64) -> ExpResult<(f64, f64)> {
    let sys = small_system();
    let params = ModelParams::default();
    let grid = PolarDelayGrid::initial(&PolarGridSpec { points: 16, rings_per_angle: 1, ..Default::default() }, 4, &sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = rng.random_range(0..grid.len());
    let start = rng.random_range(0..sys.antennas / 2);
    let len = rng.random_range(sys.antennas / 4..=sys.antennas / 2);
    let vr: Vec<f64> = (0..sys.antennas).map(|m| if m >= start && m < start + len { rng.random_range(0.5..1.5) } else { 0.0 }).collect();
    let path = PathParams { gain: complex_normal(&mut rng), cos_angle: grid.cos_angle[q0], distance: grid.distance[q0], delay: grid.delay[q0] };
    let truth = synthesize_channel(&[path], &[vr.clone()], &sys)?;
    let mut u = DMatrix::from_element(sys.antennas, grid.len(), 1.0);
    u.column_mut(q0).copy_from_slice(&vr);
    let model = LinearModel::from_grid(&grid, &u, &truth.h, &sys)?;
    let prior = initial_prior(grid.len(), &params, &sys)?;
    let cfg = VbiConfig { mode: VbiMode::Exact, max_iter: 1000, tol: 1e-12, ..VbiConfig::default() };
    let out = run_vbi(&model, &prior.support, &params.hyper, &cfg, None)?;
    let est = grid_synthesize(&grid, &u, &out.state.mean, &sys);
    let channel = rel_err(&est, &truth.h).powi(2);

    let mut x = vec![Complex64::new(0.0, 0.0); grid.len()];
    x[q0] = path.gain;
    let omega = [q0];
    let models = build_antenna_models(&grid, &x, &omega, &truth.h, &sys)?;
    let (alpha, beta_mean, beta_var) = prior.point(q0);
    let vr_prior = VrPrior { alpha: alpha.to_vec(), beta_mean: beta_mean.to_vec(), beta_var: beta_var.to_vec() };
    let t = run_turbo(&models, &vr_prior, out.state.gamma_mean(), &TurboConfig::default(), Some((params.vr.p01_s, params.vr.p10_s)))?;
    let num: f64 = t.u_hat.iter().zip(&vr).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = vr.iter().map(|b| b * b).sum();
    Ok((channel, num / den))
}

pub fn exact_recovery(seed: u64) -> ExpResult<CheckOutcome> {
    let (mut ch, mut vr) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in 0..5 {
        let (c, v) = exact_recovery_instance(seed + s)?;
        ch = ch.max(xltrack::metrics::to_db(c));
        vr = vr.max(xltrack::metrics::to_db(v));
    }
    Ok(CheckOutcome {
        name: "exact_recovery",
        passed: ch <= -120.0 && vr <= -60.0,
        detail: format!("worst channel NMSE {ch:.1} dB (limit -120), worst visibility NMSE {vr:.1} dB (limit -60)"),
    })
}

pub const CHECKS: [&str; 6] = ["hbf_round_trip", "noise_scaling", "gradient_check", "module_b_oracle", "vbi_oracle", "exact_recovery"];

pub fn run_check(name: &str, seed: u64) -> ExpResult<CheckOutcome> {
    match name {
        "hbf_round_trip" => hbf_round_trip(seed),
        "noise_scaling" => noise_scaling(seed, 100_000),
        "gradient_check" => gradient_check(seed),
        "module_b_oracle" => module_b_oracle(seed),
        "vbi_oracle" => vbi_oracle(seed),
        "exact_recovery" => exact_recovery(seed),
        other => Err(ExpError::Config(format!("unknown check `{other}`; expected one of {}", CHECKS.join(", ")))),
    }
}

pub fn run_all(seed: u64) -> ExpResult<Vec<CheckOutcome>> {
    CHECKS.iter().map(|c| run_check(c, seed)).collect()
}
