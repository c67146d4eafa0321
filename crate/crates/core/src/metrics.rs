//! Error measures in dB.

use crate::error::{Error, Result};
use crate::grid::nearest_grid_point;
use crate::model::ChannelFrame;
use crate::scenario::SceneState;
use crate::tracker::FrameResult;
use num_complex::Complex64;

/// Reported instead of `-inf` when the estimate is exact.
pub const EXACT_DB: f64 = -300.0;

pub fn to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        EXACT_DB
    } else {
        (10.0 * ratio.log10()).max(EXACT_DB)
    }
}

/// `|est - truth|^2 / |truth|^2` in dB; `None` for a zero truth.
pub fn nmse_db(est: &[Complex64], truth: &[Complex64]) -> Result<Option<f64>> {
    if est.len() != truth.len() {
        return Err(Error::Argument(format!("lengths differ: {} vs {}", est.len(), truth.len())));
    }
    let den: f64 = truth.iter().map(|z| z.norm_sqr()).sum();
    if den == 0.0 {
        return Ok(None);
    }
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(Some(to_db(num / den)))
}

pub fn channel_nmse(est: &ChannelFrame, truth: &ChannelFrame) -> Result<Option<f64>> {
    if (est.subcarriers, est.antennas) != (truth.subcarriers, truth.antennas) {
        return Err(Error::Argument("channel shapes differ".into()));
    }
    nmse_db(&est.h, &truth.h)
}

/// Per-frame visibility error ratio: each true path is compared with the estimate at its
/// nearest grid point. `None` when the frame has no paths.
pub fn vr_error_ratio(result: &FrameResult, scene: &SceneState, max_delay: f64) -> Result<Option<f64>> {
    if scene.paths.is_empty() {
        return Ok(None);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for path in &scene.paths {
        let q = nearest_grid_point(&path.params, &result.grid, max_delay)?;
        let truth = path.vr();
        if truth.len() != result.vr.nrows() {
            return Err(Error::Argument("visibility length does not match the estimate".into()));
        }
        for (m, &t) in truth.iter().enumerate() {
            num += (t - result.vr[(m, q)]).powi(2);
            den += t * t;
        }
    }
    if den == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// Visibility NMSE averaged over frames with paths. Returns the dB value and the number of
/// skipped frames.
pub fn vr_nmse(results: &[FrameResult], scenes: &[SceneState], max_delay: f64) -> Result<(Option<f64>, usize)> {
    if results.len() != scenes.len() {
        return Err(Error::Argument("one scene per frame result is required".into()));
    }
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for (r, s) in results.iter().zip(scenes) {
        match vr_error_ratio(r, s, max_delay)? {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok((if used == 0 { None } else { Some(to_db(sum / used as f64)) }, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_cases() {
        let h: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, 1.0)).collect();
        assert_eq!(nmse_db(&h, &h).unwrap(), Some(EXACT_DB));
        let zero = vec![Complex64::new(0.0, 0.0); 6];
        assert!(nmse_db(&zero, &h).unwrap().unwrap().abs() < 1e-12);
        let twice: Vec<Complex64> = h.iter().map(|z| z * 2.0).collect();
        assert!(nmse_db(&twice, &h).unwrap().unwrap().abs() < 1e-12);
        assert_eq!(nmse_db(&h, &zero).unwrap(), None);
        assert!(nmse_db(&h[..3], &h).is_err());
    }
}
