//! The polar-delay grid: angle cosines with distance rings, crossed with uniform delays.

use crate::error::{Error, Result};
use crate::model::{accumulate_path, delay_response, steering_vector_inv, PathParams, SystemConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Layout of the angle-distance part of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarGridSpec {
    /// Number of angle-distance points `Q1`.
    pub points: usize,
    /// Finite-distance rings per angle; each angle also gets one far-field point.
    pub rings_per_angle: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    /// Rings closer than this are pulled out to it.
    pub min_distance: f64,
    /// Column coherence parameter of the ring rule.
    pub beta: f64,
    /// Far-field distance as a multiple of the Rayleigh distance.
    pub far_factor: f64,
}

impl Default for PolarGridSpec {
    fn default() -> Self {
        Self { points: 32, rings_per_angle: 0, angle_min: -1.0, angle_max: 1.0, min_distance: 2.0, beta: 1.2, far_factor: 10.0 }
    }
}

impl PolarGridSpec {
    pub fn far_distance(&self, cfg: &SystemConfig) -> f64 {
        self.far_factor * cfg.rayleigh_distance()
    }

    pub fn angles(&self) -> Result<usize> {
        let per = self.rings_per_angle + 1;
        if self.points == 0 || self.points % per != 0 {
            return Err(Error::Config(format!(
                "{} polar points cannot be split into angles of {} distances each",
                self.points, per
            )));
        }
        Ok(self.points / per)
    }
}

/// Far-field point followed by the finite rings `r_s = (1-theta^2) M^2 d^2 / (2 lambda s beta^2)`.
pub fn distance_rings(theta: f64, spec: &PolarGridSpec, cfg: &SystemConfig) -> Vec<f64> {
    let mut out = vec![spec.far_distance(cfg)];
    let scale = (1.0 - theta * theta) * (cfg.antennas as f64 * cfg.spacing()).powi(2)
        / (2.0 * cfg.wavelength() * spec.beta * spec.beta);
    if scale > 0.0 {
        for s in 1..=spec.rings_per_angle {
            out.push((scale / s as f64).max(spec.min_distance));
        }
    }
    out
}

/// Angle-distance pairs, angles uniform in the cosine domain (cell midpoints).
pub fn generate_polar_grid(spec: &PolarGridSpec, cfg: &SystemConfig) -> Result<Vec<(f64, f64)>> {
    let n_ang = spec.angles()?;
    if !(spec.min_distance > 0.0) {
        return Err(Error::Config("minimum grid distance must be positive".into()));
    }
    if !(-1.0 <= spec.angle_min && spec.angle_min < spec.angle_max && spec.angle_max <= 1.0) {
        return Err(Error::Config("angle range must be an increasing interval inside [-1, 1]".into()));
    }
    let width = (spec.angle_max - spec.angle_min) / n_ang as f64;
    let mut out = Vec::with_capacity(spec.points);
    for i in 0..n_ang {
        let theta = spec.angle_min + (i as f64 + 0.5) * width;
        for r in distance_rings(theta, spec, cfg) {
            out.push((theta, r));
        }
    }
    if out.len() != spec.points {
        return Err(Error::Config(format!("grid produced {} points instead of {}", out.len(), spec.points)));
    }
    Ok(out)
}

pub fn generate_delay_grid(points: usize, max_delay: f64) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0; points.max(1)];
    }
    (0..points).map(|i| i as f64 * max_delay / (points - 1) as f64).collect()
}

/// Grid point coordinates, one entry per column of the dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarDelayGrid {
    pub cos_angle: Vec<f64>,
    pub distance: Vec<f64>,
    pub delay: Vec<f64>,
}

impl PolarDelayGrid {
    /// Cartesian product with the delay index running fastest.
    pub fn product(polar: &[(f64, f64)], delays: &[f64]) -> Self {
        let q = polar.len() * delays.len();
        let mut g = Self { cos_angle: Vec::with_capacity(q), distance: Vec::with_capacity(q), delay: Vec::with_capacity(q) };
        for &(theta, r) in polar {
            for &tau in delays {
                g.cos_angle.push(theta);
                g.distance.push(r);
                g.delay.push(tau);
            }
        }
        g
    }

    pub fn initial(spec: &PolarGridSpec, delay_points: usize, cfg: &SystemConfig) -> Result<Self> {
        if delay_points == 0 {
            return Err(Error::Config("delay grid needs at least one point".into()));
        }
        let polar = generate_polar_grid(spec, cfg)?;
        Ok(Self::product(&polar, &generate_delay_grid(delay_points, cfg.max_delay_s)))
    }

    pub fn len(&self) -> usize {
        self.cos_angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cos_angle.is_empty()
    }

    pub fn inv_distance(&self, q: usize) -> f64 {
        1.0 / self.distance[q]
    }

    pub fn steering(&self, q: usize, cfg: &SystemConfig) -> Vec<Complex64> {
        steering_vector_inv(self.cos_angle[q], self.inv_distance(q), cfg)
    }

    pub fn delay_response(&self, q: usize, cfg: &SystemConfig) -> Vec<Complex64> {
        delay_response(self.delay[q], cfg)
    }

    /// Column `q` of the transform for visibility weights `u` (length `M`).
    pub fn column(&self, q: usize, u: &[f64], cfg: &SystemConfig) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); cfg.channel_len()];
        accumulate_path(&mut out, Complex64::new(1.0, 0.0), &self.steering(q, cfg), u, &self.delay_response(q, cfg));
        out
    }
}

/// Dense `MN x Q` basis with columns `a(theta_q, r_q) ⊗ d(tau_q)`.
pub fn build_basis(grid: &PolarDelayGrid, cfg: &SystemConfig) -> DMatrix<Complex64> {
    let ones = vec![1.0; cfg.antennas];
    let mut b = DMatrix::zeros(cfg.channel_len(), grid.len());
    for q in 0..grid.len() {
        b.set_column(q, &nalgebra::DVector::from_vec(grid.column(q, &ones, cfg)));
    }
    b
}

/// Masks each basis column per antenna: `F[mN + n, q] = B[mN + n, q] U[m, q]`.
pub fn build_transform(basis: &DMatrix<Complex64>, u: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    let (rows, q) = basis.shape();
    if u.ncols() != q || u.nrows() == 0 || rows % u.nrows() != 0 {
        return Err(Error::Argument(format!("visibility matrix {:?} incompatible with basis {:?}", u.shape(), basis.shape())));
    }
    if u.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Argument("visibility matrix must be non-negative".into()));
    }
    let n_sub = rows / u.nrows();
    Ok(DMatrix::from_fn(rows, q, |i, j| basis[(i, j)] * u[(i / n_sub, j)]))
}

/// Index of the grid point closest to a path in `(theta, 1/r, tau/tau_max)`; ties go to the lower index.
pub fn nearest_grid_point(path: &PathParams, grid: &PolarDelayGrid, max_delay: f64) -> Result<usize> {
    if grid.is_empty() {
        return Err(Error::Argument("empty grid".into()));
    }
    let dist = |q: usize| {
        let a = grid.cos_angle[q] - path.cos_angle;
        let k = grid.inv_distance(q) - 1.0 / path.distance;
        let t = (grid.delay[q] - path.delay) / max_delay;
        a * a + k * k + t * t
    };
    let mut best = 0;
    let mut best_d = dist(0);
    for q in 1..grid.len() {
        let d = dist(q);
        if d < best_d {
            best = q;
            best_d = d;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthesize_channel;

    fn cfg() -> SystemConfig {
        SystemConfig { antennas: 8, rf_chains: 1, subcarriers: 4, pilots: 8, ..Default::default() }
    }

    #[test]
    fn rings_shrink_with_index() {
        let c = SystemConfig::default();
        let spec = PolarGridSpec { rings_per_angle: 5, min_distance: 1e-3, ..Default::default() };
        let r = distance_rings(0.3, &spec, &c);
        assert_eq!(r.len(), 6);
        for w in r.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn endfire_keeps_only_far_point() {
        let c = SystemConfig::default();
        let spec = PolarGridSpec { rings_per_angle: 3, ..Default::default() };
        assert_eq!(distance_rings(1.0, &spec, &c), vec![spec.far_distance(&c)]);
        assert_eq!(distance_rings(-1.0, &spec, &c).len(), 1);
    }

    #[test]
    fn generator_emits_requested_count() {
        let c = SystemConfig::default();
        for (q1, s) in [(32, 0), (32, 1), (30, 2), (1, 0)] {
            let spec = PolarGridSpec { points: q1, rings_per_angle: s, ..Default::default() };
            let g = generate_polar_grid(&spec, &c).unwrap();
            assert_eq!(g.len(), q1);
            assert!(g.iter().all(|&(t, r)| (-1.0..=1.0).contains(&t) && r > 0.0));
        }
    }

    #[test]
    fn infeasible_factorisation_is_rejected() {
        let spec = PolarGridSpec { points: 10, rings_per_angle: 2, ..Default::default() };
        assert!(matches!(generate_polar_grid(&spec, &SystemConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn delay_grid_examples() {
        assert_eq!(generate_delay_grid(1, 3.0), vec![0.0]);
        assert_eq!(generate_delay_grid(2, 3.0), vec![0.0, 3.0]);
        let g = generate_delay_grid(5, 4e-7);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 1e-7).abs() < 1e-20);
        }
    }

    #[test]
    fn delay_runs_fastest() {
        let g = PolarDelayGrid::product(&[(0.1, 3.0), (0.2, 4.0)], &[0.0, 1e-7, 2e-7]);
        assert_eq!(g.cos_angle, vec![0.1, 0.1, 0.1, 0.2, 0.2, 0.2]);
        assert_eq!(g.delay[4], 1e-7);
    }

    #[test]
    fn basis_columns_have_norm_n() {
        let c = cfg();
        let spec = PolarGridSpec { points: 4, rings_per_angle: 1, ..Default::default() };
        let g = PolarDelayGrid::initial(&spec, 3, &c).unwrap();
        let b = build_basis(&g, &c);
        for q in 0..g.len() {
            assert!((b.column(q).norm_squared() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_elements_match_direct_loops() {
        let c = cfg();
        let g = PolarDelayGrid { cos_angle: vec![0.3, -0.7], distance: vec![2.0, 11.0], delay: vec![1e-7, 6e-7] };
        let b = build_basis(&g, &c);
        for q in 0..2 {
            let a = crate::model::steering_vector(g.cos_angle[q], g.distance[q], &c).unwrap();
            for m in 0..8 {
                for n in 0..4 {
                    let d = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (n + 1) as f64 * c.subcarrier_spacing_hz * g.delay[q]);
                    assert!((b[(m * 4 + n, q)] - a[m] * d).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn transform_masks() {
        let c = cfg();
        let g = PolarDelayGrid { cos_angle: vec![0.3, -0.7], distance: vec![2.0, 11.0], delay: vec![1e-7, 6e-7] };
        let b = build_basis(&g, &c);
        assert_eq!(build_transform(&b, &DMatrix::from_element(8, 2, 1.0)).unwrap(), b);
        assert!(build_transform(&b, &DMatrix::zeros(8, 2)).unwrap().iter().all(|z| z.norm() == 0.0));
        let mut u = DMatrix::zeros(8, 2);
        u[(5, 0)] = 2.0;
        u[(5, 1)] = 0.5;
        let f = build_transform(&b, &u).unwrap();
        for i in 0..32 {
            let inside = (20..24).contains(&i);
            assert_eq!(f.row(i).iter().any(|z| z.norm() > 0.0), inside);
        }
        u[(0, 0)] = -1.0;
        assert!(build_transform(&b, &u).is_err());
    }

    #[test]
    fn bilinear_representation_matches_synthesis() {
        let c = cfg();
        let g = PolarDelayGrid { cos_angle: vec![0.3, -0.7, 0.0], distance: vec![2.0, 11.0, 5.0], delay: vec![1e-7, 6e-7, 0.0] };
        let u_col = vec![0.0, 0.5, 1.0, 1.3, 0.2, 0.0, 0.0, 0.9];
        let x = Complex64::new(0.7, -0.2);
        let path = PathParams { gain: x, cos_angle: 0.3, distance: 2.0, delay: 1e-7 };
        let h = synthesize_channel(&[path], &[u_col.clone()], &c).unwrap();
        let mut u = DMatrix::zeros(8, 3);
        u.set_column(0, &nalgebra::DVector::from_vec(u_col));
        let f = build_transform(&build_basis(&g, &c), &u).unwrap();
        let mut xv = nalgebra::DVector::zeros(3);
        xv[0] = x;
        let hf = f * xv;
        for i in 0..32 {
            assert!((hf[i] - h.h[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn nearest_point_rules() {
        let g = PolarDelayGrid { cos_angle: vec![0.0, 0.2, 0.1], distance: vec![10.0, 10.0, 10.0], delay: vec![0.0, 0.0, 0.0] };
        let at = |t: f64| PathParams { gain: Complex64::new(1.0, 0.0), cos_angle: t, distance: 10.0, delay: 0.0 };
        assert_eq!(nearest_grid_point(&at(0.2), &g, 1e-6).unwrap(), 1);
        assert_eq!(nearest_grid_point(&at(0.05), &g, 1e-6).unwrap(), 0);
        assert!(nearest_grid_point(&at(0.0), &PolarDelayGrid { cos_angle: vec![], distance: vec![], delay: vec![] }, 1.0).is_err());
    }
}
