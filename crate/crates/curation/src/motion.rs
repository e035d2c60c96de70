//! Foreground/background motion scores from a flow field and its affine fit.

use serde::{Deserialize, Serialize};

use crate::error::{CurationError, Result};
use crate::flow::{fit_background_transform, AffineFit, FlowField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionScores {
    /// Mean residual magnitude over outlier points.
    pub fg: f64,
    /// Mean magnitude of the fitted camera motion.
    pub bg: f64,
    /// Equal weighting, used for pre-training filtering.
    pub pretrain: f64,
    /// Foreground-weighted, used for post-training selection.
    pub post: f64,
}

pub fn motion_scores(fit: &AffineFit, fg_weight: f64) -> Result<MotionScores> {
    if !(0.0..=1.0).contains(&fg_weight) {
        return Err(CurationError::Config(format!("foreground weight {fg_weight} outside [0, 1]")));
    }
    let n = fit.points.len();
    let bg = if n == 0 {
        0.0
    } else {
        let total: f64 = fit
            .points
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = fit.predict(x as f64, y as f64);
                dx.hypot(dy)
            })
            .sum();
        total / n as f64
    };
    let outliers: Vec<f64> = fit.residuals.iter().zip(&fit.inliers).filter(|(_, &i)| !i).map(|(r, _)| *r).collect();
    let fg = if outliers.is_empty() { 0.0 } else { outliers.iter().sum::<f64>() / outliers.len() as f64 };
    Ok(MotionScores { fg, bg, pretrain: 0.5 * (fg + bg), post: fg_weight * fg + (1.0 - fg_weight) * bg })
}

/// Fits the background and scores in one call.
pub fn score_flow(flow: &FlowField, stride: usize, inlier_tol: f64, fg_weight: f64) -> Result<(AffineFit, MotionScores)> {
    let fit = fit_background_transform(flow, stride, inlier_tol)?;
    let s = motion_scores(&fit, fg_weight)?;
    Ok((fit, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pure_pan_is_all_background() {
        let mut f = FlowField::zeros(32, 32);
        f.dx.iter_mut().for_each(|v| *v = 3.0);
        f.dy.iter_mut().for_each(|v| *v = 4.0);
        let (_, s) = score_flow(&f, 4, 0.5, 0.7).unwrap();
        assert!((s.bg - 5.0).abs() < 1e-9 && s.fg == 0.0);
        assert!((s.pretrain - 2.5).abs() < 1e-9 && (s.post - 1.5).abs() < 1e-9);
    }

    #[test]
    fn still_camera_moving_object_is_foreground() {
        let mut f = FlowField::zeros(32, 32);
        for y in 8..16 {
            for x in 8..16 {
                f.dx[y * 32 + x] = 2.0;
            }
        }
        let (_, s) = score_flow(&f, 4, 0.5, 0.7).unwrap();
        assert!(s.bg < 1e-9 && (s.fg - 2.0).abs() < 1e-9, "{s:?}");
        assert!(s.post > s.pretrain);
        assert!(motion_scores(&fit_background_transform(&f, 4, 0.5).unwrap(), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn post_exceeds_pretrain_iff_foreground_dominates(fg in 0.0f64..10.0, bg in 0.0f64..10.0, w in 0.51f64..1.0) {
            let s = MotionScores { fg, bg, pretrain: 0.5 * (fg + bg), post: w * fg + (1.0 - w) * bg };
            prop_assume!((fg - bg).abs() > 1e-6);
            prop_assert_eq!(s.post > s.pretrain, fg > bg);
        }
    }
}
