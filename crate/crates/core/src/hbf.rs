//! Sub-array hybrid beamforming: DFT-coded phase shifters over `P` pilot symbols let
//! every antenna's signal be separated from the `N_RF` combined RF outputs.

use crate::error::{Error, Result};
use crate::model::{ChannelFrame, SystemConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// `P x M_sub` phase-shifter code; row `p` drives every sub-array during pilot `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShifterCode {
    pub matrix: DMatrix<Complex64>,
}

impl PhaseShifterCode {
    pub fn pilots(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn per_rf(&self) -> usize {
        self.matrix.ncols()
    }
}

/// First `M_sub` columns of the `P`-point DFT matrix.
pub fn encode_phase_shifters(cfg: &SystemConfig) -> Result<PhaseShifterCode> {
    let p = cfg.pilots;
    let ms = cfg.antennas_per_rf();
    if p < ms {
        return Err(Error::Config(format!("pilot length {p} below sub-array size {ms}")));
    }
    let matrix = DMatrix::from_fn(p, ms, |i, j| Complex64::from_polar(1.0, -2.0 * PI * (i * j) as f64 / p as f64));
    Ok(PhaseShifterCode { matrix })
}

/// Unit-modulus pilot symbols `v_p[n]`, stored row-major as `p N + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSymbols {
    pub pilots: usize,
    pub subcarriers: usize,
    pub values: Vec<Complex64>,
}

impl PilotSymbols {
    pub fn ones(pilots: usize, subcarriers: usize) -> Self {
        Self { pilots, subcarriers, values: vec![Complex64::new(1.0, 0.0); pilots * subcarriers] }
    }

    pub fn random_phase<R: Rng + ?Sized>(pilots: usize, subcarriers: usize, rng: &mut R) -> Self {
        let values = (0..pilots * subcarriers)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
            .collect();
        Self { pilots, subcarriers, values }
    }

    pub fn at(&self, p: usize, n: usize) -> Complex64 {
        self.values[p * self.subcarriers + n]
    }
}

/// Per-pilot, per-antenna receiver noise before analog combining, laid out as `(p M + m) N + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaNoise {
    pub pilots: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    pub variance: f64,
    pub values: Vec<Complex64>,
}

impl AntennaNoise {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self {
            pilots: cfg.pilots,
            antennas: cfg.antennas,
            subcarriers: cfg.subcarriers,
            variance: 0.0,
            values: vec![Complex64::new(0.0, 0.0); cfg.pilots * cfg.channel_len()],
        }
    }

    /// Circularly-symmetric complex Gaussian noise of the given variance.
    pub fn draw<R: Rng + ?Sized>(cfg: &SystemConfig, variance: f64, rng: &mut R) -> Self {
        let s = (variance / 2.0).sqrt();
        let values = (0..cfg.pilots * cfg.channel_len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(s * re, s * im)
            })
            .collect();
        Self { pilots: cfg.pilots, antennas: cfg.antennas, subcarriers: cfg.subcarriers, variance, values }
    }

    fn at(&self, p: usize, m: usize, n: usize) -> Complex64 {
        self.values[(p * self.antennas + m) * self.subcarriers + n]
    }
}

/// RF-chain outputs `y_{p,k}[n]`, laid out as `(p N_RF + k) N + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub pilots: usize,
    pub rf_chains: usize,
    pub subcarriers: usize,
    pub values: Vec<Complex64>,
    /// Per-antenna noise variance before combining.
    pub noise_variance: f64,
}

impl PilotObservation {
    pub fn at(&self, p: usize, k: usize, n: usize) -> Complex64 {
        self.values[(p * self.rf_chains + k) * self.subcarriers + n]
    }
}

/// Separated per-antenna observation in the same layout as [`ChannelFrame`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedObservation {
    pub subcarriers: usize,
    pub antennas: usize,
    pub y: Vec<Complex64>,
    /// Variance of each entry of the equivalent noise.
    pub noise_variance: f64,
}

impl DecodedObservation {
    pub fn antenna(&self, m: usize) -> &[Complex64] {
        &self.y[m * self.subcarriers..(m + 1) * self.subcarriers]
    }
}

/// Analog combining of every sub-array during each pilot symbol.
pub fn mix(
    frame: &ChannelFrame,
    code: &PhaseShifterCode,
    pilots: &PilotSymbols,
    noise: &AntennaNoise,
) -> Result<PilotObservation> {
    let (n_sub, m_ant) = (frame.subcarriers, frame.antennas);
    let (p_len, ms) = (code.pilots(), code.per_rf());
    if ms == 0 || m_ant % ms != 0 {
        return Err(Error::Argument(format!("{m_ant} antennas do not split into sub-arrays of {ms}")));
    }
    if pilots.pilots != p_len || pilots.subcarriers != n_sub {
        return Err(Error::Argument("pilot symbol shape does not match code and channel".into()));
    }
    if noise.pilots != p_len || noise.antennas != m_ant || noise.subcarriers != n_sub {
        return Err(Error::Argument("noise realization shape does not match".into()));
    }
    let k_rf = m_ant / ms;
    let mut values = vec![Complex64::new(0.0, 0.0); p_len * k_rf * n_sub];
    for p in 0..p_len {
        for k in 0..k_rf {
            let out = &mut values[(p * k_rf + k) * n_sub..(p * k_rf + k + 1) * n_sub];
            for i in 0..ms {
                let m = k * ms + i;
                let w = code.matrix[(p, i)];
                for (n, o) in out.iter_mut().enumerate() {
                    *o += w * (frame.at(n, m) * pilots.at(p, n) + noise.at(p, m, n));
                }
            }
        }
    }
    Ok(PilotObservation { pilots: p_len, rf_chains: k_rf, subcarriers: n_sub, values, noise_variance: noise.variance })
}

/// Undo the pilot modulation and the DFT code: `(1/P) D^H [y_1/v_1, ..., y_P/v_P]^T`.
pub fn decode(obs: &PilotObservation, code: &PhaseShifterCode, pilots: &PilotSymbols) -> Result<DecodedObservation> {
    let (p_len, ms) = (code.pilots(), code.per_rf());
    let n_sub = obs.subcarriers;
    if obs.pilots != p_len || pilots.pilots != p_len || pilots.subcarriers != n_sub {
        return Err(Error::Argument("observation, code and pilots disagree in shape".into()));
    }
    if obs.values.len() != p_len * obs.rf_chains * n_sub {
        return Err(Error::Argument("observation buffer has the wrong length".into()));
    }
    let m_ant = obs.rf_chains * ms;
    let mut y = vec![Complex64::new(0.0, 0.0); m_ant * n_sub];
    let inv_p = 1.0 / p_len as f64;
    for k in 0..obs.rf_chains {
        for p in 0..p_len {
            for n in 0..n_sub {
                let r = obs.at(p, k, n) / pilots.at(p, n);
                for i in 0..ms {
                    let m = k * ms + i;
                    y[m * n_sub + n] += code.matrix[(p, i)].conj() * r * inv_p;
                }
            }
        }
    }
    Ok(DecodedObservation {
        subcarriers: n_sub,
        antennas: m_ant,
        y,
        noise_variance: obs.noise_variance * ms as f64 / p_len as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: usize, rf: usize, n: usize, p: usize) -> SystemConfig {
        SystemConfig { antennas: m, rf_chains: rf, subcarriers: n, pilots: p, ..Default::default() }
    }

    #[test]
    fn scalar_code() {
        let c = encode_phase_shifters(&cfg(1, 1, 1, 1)).unwrap();
        assert_eq!(c.matrix, DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn code_is_orthogonal_and_unit_modulus() {
        for (ms, p) in [(1, 3), (2, 4), (4, 4), (4, 8), (3, 7)] {
            let c = encode_phase_shifters(&cfg(ms, 1, 1, p)).unwrap();
            let g = c.matrix.adjoint() * &c.matrix;
            for i in 0..ms {
                for j in 0..ms {
                    let want = if i == j { p as f64 } else { 0.0 };
                    assert!((g[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
                }
            }
            assert!(c.matrix.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn four_point_dft_columns() {
        let c = encode_phase_shifters(&cfg(2, 1, 1, 4)).unwrap();
        let j = Complex64::new(0.0, 1.0);
        let col1 = [Complex64::new(1.0, 0.0), -j, Complex64::new(-1.0, 0.0), j];
        for p in 0..4 {
            assert!((c.matrix[(p, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            assert!((c.matrix[(p, 1)] - col1[p]).norm() < 1e-15);
        }
    }

    #[test]
    fn short_pilot_is_rejected() {
        assert!(matches!(encode_phase_shifters(&cfg(8, 2, 1, 3)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let c = cfg(4, 2, 3, 2);
        let code = encode_phase_shifters(&c).unwrap();
        let obs = mix(&ChannelFrame::zeros(3, 4), &code, &PilotSymbols::ones(2, 3), &AntennaNoise::zeros(&c)).unwrap();
        assert!(obs.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_antenna_subarrays() {
        let c = cfg(3, 3, 2, 1);
        let code = encode_phase_shifters(&c).unwrap();
        let h: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let frame = ChannelFrame::from_vec(2, 3, h).unwrap();
        let obs = mix(&frame, &code, &PilotSymbols::ones(1, 2), &AntennaNoise::zeros(&c)).unwrap();
        for k in 0..3 {
            for n in 0..2 {
                assert!((obs.at(0, k, n) - frame.at(n, k)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn round_trip_with_random_pilots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = cfg(8, 2, 5, 4);
        let code = encode_phase_shifters(&c).unwrap();
        let pilots = PilotSymbols::random_phase(4, 5, &mut rng);
        let h: Vec<Complex64> = (0..40).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let frame = ChannelFrame::from_vec(5, 8, h).unwrap();
        let obs = mix(&frame, &code, &pilots, &AntennaNoise::zeros(&c)).unwrap();
        let dec = decode(&obs, &code, &pilots).unwrap();
        let err: f64 = dec.y.iter().zip(&frame.h).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(err.sqrt() / frame.energy().sqrt() < 1e-12);
        assert_eq!(dec.noise_variance, 0.0);
    }

    #[test]
    fn decoded_noise_variance_scaling_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cfg(4, 1, 2, 8);
        let code = encode_phase_shifters(&c).unwrap();
        let noise = AntennaNoise::draw(&c, 2.0, &mut rng);
        let obs = mix(&ChannelFrame::zeros(2, 4), &code, &PilotSymbols::ones(8, 2), &noise).unwrap();
        let dec = decode(&obs, &code, &PilotSymbols::ones(8, 2)).unwrap();
        assert_eq!(dec.noise_variance, 1.0);
    }

    #[test]
    fn decode_rejects_mismatched_shapes() {
        let c = cfg(4, 2, 3, 2);
        let code = encode_phase_shifters(&c).unwrap();
        let obs = mix(&ChannelFrame::zeros(3, 4), &code, &PilotSymbols::ones(2, 3), &AntennaNoise::zeros(&c)).unwrap();
        assert!(decode(&obs, &code, &PilotSymbols::ones(2, 4)).is_err());
    }
}
