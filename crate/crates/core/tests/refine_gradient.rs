use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xltrack::grid::{PolarDelayGrid, PolarGridSpec};
use xltrack::linear::grid_synthesize;
use xltrack::model::SystemConfig;
use xltrack::refine::{armijo_refine, Block, PointParams, RefineConfig, RefineProblem};
use xltrack::Complex64;

fn system() -> SystemConfig {
    SystemConfig { antennas: 16, rf_chains: 4, subcarriers: 8, pilots: 2, ..Default::default() }
}

fn perturb(p: &PointParams, b: Block, h: f64) -> PointParams {
    let mut q = *p;
    match b {
        Block::Angle => q.cos_angle += h,
        Block::InvDistance => q.inv_distance += h,
        Block::Delay => q.delay += h,
    }
    q
}

#[test]
fn gradient_matches_central_differences() {
    let cfg = system();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = PolarGridSpec { points: 8, rings_per_angle: 1, ..Default::default() };
    for (bi, block) in Block::ALL.into_iter().enumerate() {
        for _ in 0..100 {
            let mut grid = PolarDelayGrid::initial(&spec, 3, &cfg).unwrap();
            for q in 0..grid.len() {
                grid.cos_angle[q] = rng.random_range(-0.9..0.9);
                grid.distance[q] = rng.random_range(3.0..30.0);
                grid.delay[q] = rng.random_range(0.0..cfg.max_delay_s);
            }
            let u = DMatrix::from_fn(cfg.antennas, grid.len(), |_, _| if rng.random::<f64>() < 0.7 { rng.random_range(0.5..1.5) } else { 0.0 });
            let x: Vec<Complex64> = (0..grid.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let y: Vec<Complex64> = (0..cfg.channel_len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let omega: Vec<usize> = (0..grid.len()).filter(|_| rng.random::<f64>() < 0.3).collect();
            if omega.is_empty() {
                continue;
            }
            let gamma = rng.random_range(0.5..5.0);
            let p = RefineProblem::new(&grid, &u, &x, &y, gamma, &omega, &cfg).unwrap();
            let params = p.params(&grid);
            let g = p.gradient(&params);
            let h = 1e-6 * block.scale(&cfg);
            let (mut num, mut den) = (0.0, 0.0);
            for k in 0..params.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[k] = perturb(&params[k], block, h);
                minus[k] = perturb(&params[k], block, -h);
                let fd = (p.log_likelihood(&plus) - p.log_likelihood(&minus)) / (2.0 * h);
                num += (fd - g[bi][k]).powi(2);
                den += fd * fd;
            }
            assert!((num / den).sqrt() < 1e-5, "{block:?}: {}", (num / den).sqrt());
        }
    }
}

#[test]
fn delay_gradient_vanishes_at_truth() {
    let cfg = system();
    let grid = PolarDelayGrid::initial(&PolarGridSpec { points: 8, ..Default::default() }, 4, &cfg).unwrap();
    let u = DMatrix::from_element(cfg.antennas, grid.len(), 1.0);
    let mut x = vec![Complex64::new(0.0, 0.0); grid.len()];
    x[5] = Complex64::new(0.6, -1.1);
    let y = grid_synthesize(&grid, &u, &x, &cfg);
    let omega = [5];
    let p = RefineProblem::new(&grid, &u, &x, &y, 3.0, &omega, &cfg).unwrap();
    let g = p.gradient(&p.params(&grid));
    assert_eq!(g[2][0], 0.0);
}

#[test]
fn half_cell_offset_shrinks_tenfold() {
    let cfg = SystemConfig { antennas: 32, rf_chains: 8, subcarriers: 16, pilots: 2, ..Default::default() };
    let spec = PolarGridSpec { points: 16, rings_per_angle: 1, ..Default::default() };
    let grid0 = PolarDelayGrid::initial(&spec, 4, &cfg).unwrap();
    let u = DMatrix::from_element(cfg.antennas, grid0.len(), 1.0);
    let q = 4 * 8 + 2;
    let mut truth = grid0.clone();
    let cells = [2.0 / 8.0, Block::InvDistance.scale(&cfg), Block::Delay.scale(&cfg)];
    truth.cos_angle[q] += 0.5 * cells[0] * 0.2;
    truth.distance[q] = 1.0 / (grid0.inv_distance(q) + 0.5 * cells[1]);
    truth.delay[q] += 0.5 * cells[2];
    let mut x = vec![Complex64::new(0.0, 0.0); grid0.len()];
    x[q] = Complex64::new(1.0, 0.2);
    let y = grid_synthesize(&truth, &u, &x, &cfg);
    let err = |g: &PolarDelayGrid| {
        [
            (g.cos_angle[q] - truth.cos_angle[q]).abs() / cells[0],
            (g.inv_distance(q) - truth.inv_distance(q)).abs() / cells[1],
            (g.delay[q] - truth.delay[q]).abs() / cells[2],
        ]
    };
    let before = err(&grid0);
    let mut grid = grid0.clone();
    armijo_refine(&mut grid, &u, &x, &y, 10.0, &[q], &cfg, &RefineConfig { max_sweeps: 400, ..Default::default() }).unwrap();
    let after = err(&grid);
    for i in 0..3 {
        assert!(after[i] * 10.0 <= before[i], "block {i}: {} -> {}", before[i], after[i]);
    }
}
