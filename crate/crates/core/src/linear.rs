//! Sufficient statistics `(F^H F, F^H y, |y|^2)` of the linear model `y = F x + z`.
//!
//! For grid-structured transforms every column factors as `(a ⊙ u) ⊗ d(tau)`, so the
//! Gram matrix separates into an antenna sum and a closed-form subcarrier sum, and
//! projections share work across columns with equal delay.

use crate::error::{Error, Result};
use crate::grid::PolarDelayGrid;
use crate::model::SystemConfig;
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub gram: DMatrix<Complex64>,
    pub proj: Vec<Complex64>,
    pub y_energy: f64,
    /// Number of observations `MN`.
    pub rows: usize,
}

/// `sum_{n=1..N} exp(-j n w)`.
pub fn geometric_sum(n: usize, w: f64) -> Complex64 {
    let half = 0.5 * w;
    let s = half.sin();
    if s.abs() < 1e-3 {
        return (1..=n).map(|k| Complex64::from_polar(1.0, -w * k as f64)).sum();
    }
    let nn = n as f64;
    Complex64::from_polar((nn * half).sin() / s, -(nn + 1.0) * half)
}

impl LinearModel {
    pub fn from_dense(f: &DMatrix<Complex64>, y: &[Complex64]) -> Result<Self> {
        if f.nrows() != y.len() {
            return Err(Error::Argument(format!("matrix has {} rows, observation {}", f.nrows(), y.len())));
        }
        let yv = nalgebra::DVector::from_column_slice(y);
        let gram = f.adjoint() * f;
        let proj = (f.adjoint() * yv).as_slice().to_vec();
        Ok(Self { gram, proj, y_energy: y.iter().map(|z| z.norm_sqr()).sum(), rows: y.len() })
    }

    /// Statistics of `F(grid, U)` where column `q` of `u` (an `M x Q` matrix) weights the antennas.
    pub fn from_grid(grid: &PolarDelayGrid, u: &DMatrix<f64>, y: &[Complex64], cfg: &SystemConfig) -> Result<Self> {
        let (m_ant, n_sub) = (cfg.antennas, cfg.subcarriers);
        let q_len = grid.len();
        if u.shape() != (m_ant, q_len) || y.len() != m_ant * n_sub {
            return Err(Error::Argument("grid, visibility matrix and observation disagree in size".into()));
        }
        let weights = spatial_weights(grid, u, cfg);
        let active: Vec<usize> = (0..q_len).filter(|&q| weights[q].is_some()).collect();
        let w0 = 2.0 * PI * cfg.subcarrier_spacing_hz;
        let mut gram = DMatrix::zeros(q_len, q_len);
        for (i, &q) in active.iter().enumerate() {
            let wq = weights[q].as_ref().unwrap();
            for &p in &active[i..] {
                let wp = weights[p].as_ref().unwrap();
                let spatial: Complex64 = wq.iter().zip(wp).map(|(a, b)| a.conj() * b).sum();
                let g = spatial * geometric_sum(n_sub, w0 * (grid.delay[p] - grid.delay[q]));
                gram[(q, p)] = g;
                gram[(p, q)] = g.conj();
            }
            gram[(q, q)] = Complex64::new(gram[(q, q)].re, 0.0);
        }
        let mut cache: BTreeMap<u64, Vec<Complex64>> = BTreeMap::new();
        let mut proj = vec![ZERO; q_len];
        for &q in &active {
            let tau = grid.delay[q];
            let folded = cache.entry(tau.to_bits()).or_insert_with(|| {
                let d = crate::model::delay_response(tau, cfg);
                (0..m_ant)
                    .map(|m| y[m * n_sub..(m + 1) * n_sub].iter().zip(&d).map(|(yv, dv)| dv.conj() * yv).sum())
                    .collect()
            });
            proj[q] = weights[q].as_ref().unwrap().iter().zip(folded.iter()).map(|(w, f)| w.conj() * f).sum();
        }
        Ok(Self { gram, proj, y_energy: y.iter().map(|z| z.norm_sqr()).sum(), rows: y.len() })
    }

    pub fn len(&self) -> usize {
        self.proj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proj.is_empty()
    }

    /// Columns with nonzero energy.
    pub fn is_active(&self, q: usize) -> bool {
        self.gram[(q, q)].re > 0.0
    }

    pub fn gram_times(&self, v: &[Complex64]) -> Vec<Complex64> {
        let q = self.len();
        let mut out = vec![ZERO; q];
        for j in 0..q {
            let vj = v[j];
            if vj == ZERO {
                continue;
            }
            for (o, g) in out.iter_mut().zip(self.gram.column(j).iter()) {
                *o += g * vj;
            }
        }
        out
    }

    /// `|y - F x|^2`, clamped at zero against rounding.
    pub fn residual_energy(&self, x: &[Complex64]) -> f64 {
        let gx = self.gram_times(x);
        let quad: f64 = x.iter().zip(&gx).map(|(a, b)| (a.conj() * b).re).sum();
        let cross: f64 = x.iter().zip(&self.proj).map(|(a, p)| (a.conj() * p).re).sum();
        (self.y_energy - 2.0 * cross + quad).max(0.0)
    }

    /// Upper estimate of the largest eigenvalue of `F^H F`: a power-iteration estimate with a
    /// safety margin, capped by the Gershgorin row-sum bound.
    pub fn lipschitz_bound(&self, iters: usize) -> f64 {
        let q = self.len();
        let gersh = (0..q).map(|i| self.gram.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
        if gersh == 0.0 {
            return 0.0;
        }
        let mut v: Vec<Complex64> = (0..q).map(|i| Complex64::new(1.0 + 0.5 * (i as f64).sin(), 0.0)).collect();
        let mut lambda = 0.0;
        let mut resid = f64::INFINITY;
        for _ in 0..iters.max(1) {
            let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|z| *z /= nv);
            let gv = self.gram_times(&v);
            lambda = v.iter().zip(&gv).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
            resid = gv.iter().zip(&v).map(|(g, a)| (g - a * lambda).norm_sqr()).sum::<f64>().sqrt();
            v = gv;
        }
        gersh.min(1.05 * lambda + resid)
    }
}

/// Per-column antenna weights `a(theta_q, r_q) ⊙ u_q`, `None` for all-zero columns.
pub fn spatial_weights(grid: &PolarDelayGrid, u: &DMatrix<f64>, cfg: &SystemConfig) -> Vec<Option<Vec<Complex64>>> {
    (0..grid.len())
        .map(|q| {
            let col = u.column(q);
            if col.iter().all(|&v| v == 0.0) {
                return None;
            }
            let a = grid.steering(q, cfg);
            Some(a.iter().zip(col.iter()).map(|(a, &v)| a * v).collect())
        })
        .collect()
}

/// `F(grid, U) x` in stacked channel layout.
pub fn grid_synthesize(grid: &PolarDelayGrid, u: &DMatrix<f64>, x: &[Complex64], cfg: &SystemConfig) -> Vec<Complex64> {
    let (m_ant, n_sub) = (cfg.antennas, cfg.subcarriers);
    let mut by_delay: BTreeMap<u64, Vec<Complex64>> = BTreeMap::new();
    for q in 0..grid.len() {
        if x[q] == ZERO || u.column(q).iter().all(|&v| v == 0.0) {
            continue;
        }
        let a = grid.steering(q, cfg);
        let acc = by_delay.entry(grid.delay[q].to_bits()).or_insert_with(|| vec![ZERO; m_ant]);
        for m in 0..m_ant {
            acc[m] += x[q] * a[m] * u[(m, q)];
        }
    }
    let mut out = vec![ZERO; m_ant * n_sub];
    for (bits, acc) in by_delay {
        let d = crate::model::delay_response(f64::from_bits(bits), cfg);
        for m in 0..m_ant {
            if acc[m] == ZERO {
                continue;
            }
            for (o, dv) in out[m * n_sub..(m + 1) * n_sub].iter_mut().zip(&d) {
                *o += acc[m] * dv;
            }
        }
    }
    out
}
