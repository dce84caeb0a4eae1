//! Ground-truth reward functions over generated samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Reward family. All rewards are deterministic functions of
/// `(sample, condition)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// `-||x - c||^2`: the condition is the target location.
    TargetDistance,
    /// `axis . x`: higher is better along a fixed direction.
    AxisProjection { axis: Vector },
    /// `-sum_i weights[i] * (x[i] - c[i])^2`: anisotropic target distance.
    Custom { weights: Vector },
}

/// A reward kind together with a positive affine calibration
/// `r = scale * raw + offset`. Smoothed labels are invariant to the
/// calibration by construction, which tests exercise directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction {
    #[serde(flatten)]
    pub kind: RewardKind,
    pub scale: f64,
    pub offset: f64,
}

impl RewardFunction {
    pub fn target_distance() -> Self {
        RewardFunction {
            kind: RewardKind::TargetDistance,
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn axis_projection(axis: Vector) -> Self {
        RewardFunction {
            kind: RewardKind::AxisProjection { axis },
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn custom(weights: Vector) -> Self {
        RewardFunction {
            kind: RewardKind::Custom { weights },
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn with_affine(mut self, scale: f64, offset: f64) -> Self {
        self.scale = scale;
        self.offset = offset;
        self
    }

    /// Short name stored in dataset headers.
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            RewardKind::TargetDistance => "target_distance",
            RewardKind::AxisProjection { .. } => "axis_projection",
            RewardKind::Custom { .. } => "custom",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "reward scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::NonFinite(format!("reward offset = {}", self.offset)));
        }
        match &self.kind {
            RewardKind::TargetDistance => {}
            RewardKind::AxisProjection { axis } => {
                axis.ensure_finite("reward axis")?;
                if axis.dim() == 0 {
                    return Err(Error::InvalidArgument("reward axis is empty".to_string()));
                }
            }
            RewardKind::Custom { weights } => {
                weights.ensure_finite("reward weights")?;
                if weights.iter().any(|&w| w < 0.0) {
                    return Err(Error::InvalidArgument(
                        "custom reward weights must be non-negative".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Reward of `x0` under condition `cond`.
    pub fn score(&self, x0: &Vector, cond: &Vector) -> Result<f64> {
        x0.ensure_finite("reward x0")?;
        cond.ensure_finite("reward condition")?;
        let raw = match &self.kind {
            RewardKind::TargetDistance => -x0.dist_sq(cond)?,
            RewardKind::AxisProjection { axis } => axis.dot(x0)?,
            RewardKind::Custom { weights } => {
                weights.ensure_dim(x0.dim(), "custom reward weights")?;
                cond.ensure_dim(x0.dim(), "custom reward condition")?;
                let mut acc = 0.0;
                for i in 0..x0.dim() {
                    let d = x0[i] - cond[i];
                    acc -= weights[i] * d * d;
                }
                acc
            }
        };
        Ok(self.scale * raw + self.offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_distance_matches_hand_computation() {
        let r = RewardFunction::target_distance();
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let c = Vector::from_vec(vec![0.0, 0.0]);
        assert_eq!(r.score(&x, &c).unwrap(), -5.0);
        let c2 = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(r.score(&x, &c2).unwrap(), 0.0);
    }

    #[test]
    fn axis_projection_ignores_condition() {
        let r = RewardFunction::axis_projection(Vector::from_vec(vec![1.0, 0.0]));
        let x = Vector::from_vec(vec![3.0, -7.0]);
        let c = Vector::from_vec(vec![100.0, 100.0]);
        assert_eq!(r.score(&x, &c).unwrap(), 3.0);
    }

    #[test]
    fn custom_weights_scale_componentwise() {
        let r = RewardFunction::custom(Vector::from_vec(vec![2.0, 1.0]));
        let x = Vector::from_vec(vec![1.0, 3.0]);
        let c = Vector::from_vec(vec![0.0, 1.0]);
        // -(2*1 + 1*4) = -6
        assert_eq!(r.score(&x, &c).unwrap(), -6.0);
    }

    #[test]
    fn affine_calibration_applies_after_raw_score() {
        let r = RewardFunction::target_distance().with_affine(2.0, 10.0);
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let c = Vector::from_vec(vec![0.0, 0.0]);
        assert_eq!(r.score(&x, &c).unwrap(), 8.0);
    }

    #[test]
    fn invalid_rewards_are_rejected() {
        assert!(RewardFunction::target_distance()
            .with_affine(0.0, 0.0)
            .validate()
            .is_err());
        assert!(RewardFunction::target_distance()
            .with_affine(-1.0, 0.0)
            .validate()
            .is_err());
        assert!(RewardFunction::custom(Vector::from_vec(vec![-1.0]))
            .validate()
            .is_err());
        assert!(RewardFunction::target_distance().validate().is_ok());
    }

    #[test]
    fn serde_round_trip_preserves_kind() {
        let r = RewardFunction::axis_projection(Vector::from_vec(vec![0.0, 1.0]))
            .with_affine(3.0, -1.0);
        let text = serde_json::to_string(&r).unwrap();
        let back: RewardFunction = serde_json::from_str(&text).unwrap();
        assert_eq!(r, back);
    }
}
