//! Uniform linear array geometry and the spherical-wave channel model.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Array, OFDM and pilot dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of antennas `M`.
    pub antennas: usize,
    /// Number of RF chains; the array is split into this many contiguous sub-arrays.
    pub rf_chains: usize,
    /// Number of pilot subcarriers `N`.
    pub subcarriers: usize,
    /// Pilot length `P` in OFDM symbols.
    pub pilots: usize,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Largest path delay in seconds.
    pub max_delay_s: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 64,
            rf_chains: 16,
            subcarriers: 32,
            pilots: 4,
            carrier_hz: 28e9,
            subcarrier_spacing_hz: 120e3,
            max_delay_s: 1.5e-6,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.rf_chains == 0 || self.subcarriers == 0 || self.pilots == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.antennas % self.rf_chains != 0 {
            return Err(Error::Config(format!(
                "{} antennas cannot be split evenly over {} RF chains",
                self.antennas, self.rf_chains
            )));
        }
        if self.pilots < self.antennas_per_rf() {
            return Err(Error::Config(format!(
                "pilot length {} is shorter than the sub-array size {}",
                self.pilots,
                self.antennas_per_rf()
            )));
        }
        for (name, v) in [
            ("carrier_hz", self.carrier_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("max_delay_s", self.max_delay_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Antennas per sub-array, `M / N_RF`.
    pub fn antennas_per_rf(&self) -> usize {
        self.antennas / self.rf_chains
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Half-wavelength element spacing.
    pub fn spacing(&self) -> f64 {
        self.wavelength() / 2.0
    }

    /// Length of the stacked channel vector, `M N`.
    pub fn channel_len(&self) -> usize {
        self.antennas * self.subcarriers
    }

    pub fn aperture(&self) -> f64 {
        self.antennas as f64 * self.spacing()
    }

    /// `2 D^2 / lambda` for aperture `D = M d`.
    pub fn rayleigh_distance(&self) -> f64 {
        2.0 * self.aperture().powi(2) / self.wavelength()
    }

    /// Signed offset of 0-based antenna `m0` from the array centre, in element spacings.
    pub fn centered_index(&self, m0: usize) -> f64 {
        (m0 + 1) as f64 - (self.antennas as f64 + 1.0) / 2.0
    }

    /// Phase of element `m0` (radians, before the minus sign of the phasor) for angle
    /// cosine `theta` and inverse distance `kappa = 1/r`.
    pub fn element_phase(&self, m0: usize, theta: f64, kappa: f64) -> f64 {
        let dm = self.centered_index(m0) * self.spacing();
        2.0 * PI / self.wavelength() * (-dm * theta + dm * dm * (1.0 - theta * theta) * kappa / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub gain: Complex64,
    /// Cosine of the angle of arrival.
    pub cos_angle: f64,
    /// Distance from the array centre in metres.
    pub distance: f64,
    /// Delay in seconds.
    pub delay: f64,
}

/// One frame of the frequency-antenna channel. Stored as `vec(H)` with `H` of size
/// `N x M`, so entry `(n, m)` sits at `m N + n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFrame {
    pub subcarriers: usize,
    pub antennas: usize,
    pub h: Vec<Complex64>,
}

impl ChannelFrame {
    pub fn zeros(subcarriers: usize, antennas: usize) -> Self {
        Self { subcarriers, antennas, h: vec![Complex64::new(0.0, 0.0); subcarriers * antennas] }
    }

    pub fn from_vec(subcarriers: usize, antennas: usize, h: Vec<Complex64>) -> Result<Self> {
        if h.len() != subcarriers * antennas {
            return Err(Error::Argument(format!(
                "vector length {} does not match {}x{}",
                h.len(),
                subcarriers,
                antennas
            )));
        }
        Ok(Self { subcarriers, antennas, h })
    }

    pub fn at(&self, n: usize, m: usize) -> Complex64 {
        self.h[m * self.subcarriers + n]
    }

    /// The `N x M` matrix `H`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_column_slice(self.subcarriers, self.antennas, &self.h)
    }

    pub fn from_matrix(h: &DMatrix<Complex64>) -> Self {
        Self { subcarriers: h.nrows(), antennas: h.ncols(), h: h.as_slice().to_vec() }
    }

    /// Samples of antenna `m` across all subcarriers.
    pub fn antenna(&self, m: usize) -> &[Complex64] {
        &self.h[m * self.subcarriers..(m + 1) * self.subcarriers]
    }

    pub fn energy(&self) -> f64 {
        self.h.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn check_antenna(m_index: usize, cfg: &SystemConfig) -> Result<()> {
    if m_index == 0 || m_index > cfg.antennas {
        return Err(Error::Argument(format!("antenna index {m_index} outside 1..={}", cfg.antennas)));
    }
    Ok(())
}

/// Second-order (Fresnel) distance from a source at `(r, theta)` to antenna `m_index` (1-based).
pub fn fresnel_distance(r: f64, theta: f64, m_index: usize, cfg: &SystemConfig) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {r}")));
    }
    check_antenna(m_index, cfg)?;
    let dm = cfg.centered_index(m_index - 1) * cfg.spacing();
    Ok(r - dm * theta + dm * dm * (1.0 - theta * theta) / (2.0 * r))
}

/// Exact spherical distance, kept for approximation-error diagnostics.
pub fn exact_distance(r: f64, theta: f64, m_index: usize, cfg: &SystemConfig) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {r}")));
    }
    check_antenna(m_index, cfg)?;
    let dm = cfg.centered_index(m_index - 1) * cfg.spacing();
    Ok((r * r + dm * dm - 2.0 * r * dm * theta).max(0.0).sqrt())
}

/// Near-field steering vector parameterised by the inverse distance; `kappa = 0` is the far field.
pub fn steering_vector_inv(theta: f64, kappa: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    let scale = 1.0 / (cfg.antennas as f64).sqrt();
    (0..cfg.antennas)
        .map(|m| Complex64::from_polar(scale, -cfg.element_phase(m, theta, kappa)))
        .collect()
}

/// Fresnel-approximated steering vector with unit norm.
pub fn steering_vector(theta: f64, r: f64, cfg: &SystemConfig) -> Result<Vec<Complex64>> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {r}")));
    }
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("angle cosine {theta} outside [-1, 1]")));
    }
    Ok(steering_vector_inv(theta, 1.0 / r, cfg))
}

/// Steering vector built from the exact spherical distances.
pub fn exact_steering_vector(theta: f64, r: f64, cfg: &SystemConfig) -> Result<Vec<Complex64>> {
    let scale = 1.0 / (cfg.antennas as f64).sqrt();
    let k = 2.0 * PI / cfg.wavelength();
    (1..=cfg.antennas)
        .map(|m| Ok(Complex64::from_polar(scale, -k * (exact_distance(r, theta, m, cfg)? - r))))
        .collect()
}

/// `exp(-j 2 pi n f0 tau)` for `n = 1..N`.
pub fn delay_response(tau: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    let w = -2.0 * PI * cfg.subcarrier_spacing_hz * tau;
    (1..=cfg.subcarriers).map(|n| Complex64::from_polar(1.0, w * n as f64)).collect()
}

/// Derivative-free accumulation of `x * (a ⊙ u) ⊗ d` into a stacked channel vector.
pub(crate) fn accumulate_path(
    out: &mut [Complex64],
    weight: Complex64,
    steer: &[Complex64],
    vr: &[f64],
    delay: &[Complex64],
) {
    let n_sub = delay.len();
    for (m, (a, &u)) in steer.iter().zip(vr).enumerate() {
        if u == 0.0 {
            continue;
        }
        let c = weight * a * u;
        for (o, d) in out[m * n_sub..(m + 1) * n_sub].iter_mut().zip(delay) {
            *o += c * d;
        }
    }
}

/// Multipath channel with per-antenna visibility weights `vrs[l]`.
pub fn synthesize_channel(paths: &[PathParams], vrs: &[Vec<f64>], cfg: &SystemConfig) -> Result<ChannelFrame> {
    if paths.len() != vrs.len() {
        return Err(Error::Argument(format!("{} paths but {} visibility vectors", paths.len(), vrs.len())));
    }
    let mut frame = ChannelFrame::zeros(cfg.subcarriers, cfg.antennas);
    for (p, u) in paths.iter().zip(vrs) {
        if u.len() != cfg.antennas {
            return Err(Error::Argument(format!("visibility vector of length {} for {} antennas", u.len(), cfg.antennas)));
        }
        if u.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Argument("visibility weights must be non-negative".into()));
        }
        let a = steering_vector(p.cos_angle, p.distance, cfg)?;
        let d = delay_response(p.delay, cfg);
        accumulate_path(&mut frame.h, p.gain, &a, u, &d);
    }
    Ok(frame)
}
