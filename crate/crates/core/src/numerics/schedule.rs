//! Discrete-time noise schedules.
//!
//! A schedule over timesteps `t = 1..=T` is defined by per-step retention
//! factors `alpha(t)` and their running product `alpha_bar(t)`:
//!
//! ```text
//! alpha_bar(t) = alpha(1) * alpha(2) * ... * alpha(t),   alpha_bar(0) = 1
//! ```
//!
//! The forward process draws `x_t = sqrt(alpha_bar(t)) * x_0 +
//! sqrt(1 - alpha_bar(t)) * eps`, so `alpha_bar` must start near 1 (the first
//! step keeps almost all signal) and decrease strictly. Construction enforces
//! these invariants and rejects parameter combinations that break them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which family of schedules to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Betas interpolate linearly between `beta_min` and `beta_max`.
    LinearBeta,
    /// Squared-cosine `alpha_bar` with the usual small offset; betas are
    /// clipped at 0.999 and `alpha_bar` is rebuilt from the clipped alphas so
    /// the product identity stays exact.
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_beta" | "linear" => Ok(ScheduleKind::LinearBeta),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!(
                "unknown schedule kind '{other}' (expected linear_beta or cosine)"
            ))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleKind::LinearBeta => write!(f, "linear_beta"),
            ScheduleKind::Cosine => write!(f, "cosine"),
        }
    }
}

/// The serializable recipe for a schedule; checkpoints store this and
/// rebuild the arrays on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub t_max: usize,
    /// Ignored by `Cosine`.
    pub beta_min: f64,
    /// Ignored by `Cosine`.
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.t_max, self.beta_min, self.beta_max)
    }
}

/// A validated noise schedule over `t = 1..=t_max`.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    lambda: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.spec.t_max
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    /// Per-step retention `alpha(t)`, `t` in `1..=t_max`.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(
            (1..=self.t_max()).contains(&t),
            "alpha(t) needs 1 <= t <= {}, got {t}",
            self.t_max()
        );
        self.alpha[t - 1]
    }

    /// Cumulative retention `alpha_bar(t)`, `t` in `0..=t_max`;
    /// `alpha_bar(0) = 1` exactly.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(
            t <= self.t_max(),
            "alpha_bar(t) needs t <= {}, got {t}",
            self.t_max()
        );
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Noise-to-signal ratio `sigma(t) = sqrt((1 - alpha_bar) / alpha_bar)`,
    /// the time variable of the probability-flow ODE; `sigma(0) = 0`.
    pub fn sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar(t);
        libm::sqrt((1.0 - ab) / ab)
    }

    /// Per-timestep loss weight, `t` in `1..=t_max`. Constant 1 for now; kept
    /// as data so a non-uniform weighting stays a schedule-local change.
    pub fn lambda(&self, t: usize) -> f64 {
        assert!(
            (1..=self.t_max()).contains(&t),
            "lambda(t) needs 1 <= t <= {}, got {t}",
            self.t_max()
        );
        self.lambda[t - 1]
    }

    fn validate(&self) -> Result<()> {
        let t_max = self.spec.t_max;
        if t_max == 0 {
            return Err(Error::InvalidSchedule("t_max must be >= 1".to_string()));
        }
        if self.alpha.len() != t_max || self.alpha_bar.len() != t_max || self.lambda.len() != t_max
        {
            return Err(Error::InvalidSchedule(
                "array lengths disagree with t_max".to_string(),
            ));
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) || !a.is_finite() {
                return Err(Error::InvalidSchedule(format!(
                    "alpha({}) = {a} outside (0, 1)",
                    i + 1
                )));
            }
        }
        let mut prev = 1.0;
        let mut product = 1.0;
        for (i, &ab) in self.alpha_bar.iter().enumerate() {
            if !(ab > 0.0 && ab <= 1.0) || !ab.is_finite() {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar({}) = {ab} outside (0, 1]",
                    i + 1
                )));
            }
            if ab >= prev {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar not strictly decreasing at t = {}",
                    i + 1
                )));
            }
            prev = ab;
            product *= self.alpha[i];
            if (ab - product).abs() > 1e-12 {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar({}) does not match the product of alphas",
                    i + 1
                )));
            }
        }
        if self.alpha_bar[0] < 0.99 {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar(1) = {} < 0.99; the first step must keep almost all signal",
                self.alpha_bar[0]
            )));
        }
        if self.lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidSchedule(
                "lambda weights must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Builds and validates a schedule. `beta_min`/`beta_max` only apply to
/// `LinearBeta`; the cosine family has no free noise parameters.
pub fn make_schedule(
    kind: ScheduleKind,
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::InvalidSchedule("t_max must be >= 1".to_string()));
    }
    let alpha: Vec<f64> = match kind {
        ScheduleKind::LinearBeta => {
            if !(beta_min > 0.0 && beta_min < 1.0) || !(beta_max > 0.0 && beta_max < 1.0) {
                return Err(Error::InvalidSchedule(format!(
                    "betas must lie in (0, 1), got [{beta_min}, {beta_max}]"
                )));
            }
            if beta_min > beta_max {
                return Err(Error::InvalidSchedule(format!(
                    "beta_min {beta_min} > beta_max {beta_max}"
                )));
            }
            (1..=t_max)
                .map(|t| {
                    let frac = if t_max == 1 {
                        0.0
                    } else {
                        (t - 1) as f64 / (t_max - 1) as f64
                    };
                    1.0 - (beta_min + (beta_max - beta_min) * frac)
                })
                .collect()
        }
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |u: f64| {
                let angle = (u / t_max as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                let c = libm::cos(angle);
                c * c
            };
            let f0 = f(0.0);
            let mut prev_bar = 1.0;
            (1..=t_max)
                .map(|t| {
                    let bar = f(t as f64) / f0;
                    let mut a = bar / prev_bar;
                    prev_bar = bar;
                    // Clip beta at 0.999 so late steps stay invertible.
                    if a < 0.001 {
                        a = 0.001;
                    }
                    a
                })
                .collect()
        }
    };
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut product = 1.0;
    for &a in &alpha {
        product *= a;
        alpha_bar.push(product);
    }
    let schedule = NoiseSchedule {
        spec: ScheduleSpec {
            kind,
            t_max,
            beta_min,
            beta_max,
        },
        alpha,
        alpha_bar,
        lambda: vec![1.0; t_max],
    };
    schedule.validate()?;
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiny_linear_schedule_matches_hand_computation() {
        // T = 2 with beta fixed at 1e-4: alpha = [0.9999, 0.9999],
        // alpha_bar = [0.9999, 0.99980001].
        let s = make_schedule(ScheduleKind::LinearBeta, 2, 1e-4, 1e-4).unwrap();
        assert!((s.alpha(1) - 0.9999).abs() < 1e-15);
        assert!((s.alpha(2) - 0.9999).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.99980001).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        assert_eq!(s.lambda(1), 1.0);
    }

    #[test]
    fn standard_linear_schedule_decays_to_noise() {
        let s = make_schedule(ScheduleKind::LinearBeta, 1000, 1e-4, 0.02).unwrap();
        // Known endpoint: alpha_bar(1000) is a few 1e-5.
        assert!(s.alpha_bar(1000) < 1e-3);
        assert!(s.alpha_bar(1000) > 0.0);
        assert!(s.alpha_bar(1) >= 0.99);
    }

    #[test]
    fn cosine_schedule_is_valid_and_decays() {
        let s = make_schedule(ScheduleKind::Cosine, 50, 0.0, 0.0).unwrap();
        assert!(s.alpha_bar(1) >= 0.99);
        assert!(s.alpha_bar(50) < 1e-3);
        // sigma is strictly increasing in t.
        for t in 1..=50 {
            assert!(s.sigma(t) > s.sigma(t - 1));
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(make_schedule(ScheduleKind::LinearBeta, 0, 1e-4, 0.02).is_err());
        assert!(make_schedule(ScheduleKind::LinearBeta, 10, 0.0, 0.02).is_err());
        assert!(make_schedule(ScheduleKind::LinearBeta, 10, 0.02, 0.01).is_err());
        assert!(make_schedule(ScheduleKind::LinearBeta, 10, 1e-4, 1.0).is_err());
        // beta_min > 0.01 breaks the alpha_bar(1) >= 0.99 invariant.
        assert!(make_schedule(ScheduleKind::LinearBeta, 10, 0.02, 0.02).is_err());
        // The cosine family needs enough steps for a gentle first step.
        assert!(make_schedule(ScheduleKind::Cosine, 10, 0.0, 0.0).is_err());
        assert!(make_schedule(ScheduleKind::Cosine, 18, 0.0, 0.0).is_ok());
    }

    #[test]
    fn horizon_sweep_preserves_invariants() {
        for t_max in [2usize, 10, 50, 1000] {
            let s = make_schedule(ScheduleKind::LinearBeta, t_max, 1e-4, 0.01).unwrap();
            check_invariants(&s);
        }
        for t_max in [18usize, 50, 1000] {
            let s = make_schedule(ScheduleKind::Cosine, t_max, 0.0, 0.0).unwrap();
            check_invariants(&s);
        }
    }

    fn check_invariants(s: &NoiseSchedule) {
        let t_max = s.t_max();
        let mut product = 1.0;
        for t in 1..=t_max {
            assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) <= 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            product *= s.alpha(t);
            assert!((s.alpha_bar(t) - product).abs() <= 1e-12);
            assert!(s.lambda(t) > 0.0);
        }
        assert!(s.alpha_bar(1) >= 0.99);
    }

    #[test]
    fn spec_round_trip_rebuilds_identical_arrays() {
        let s = make_schedule(ScheduleKind::Cosine, 64, 0.0, 0.0).unwrap();
        let text = serde_json::to_string(s.spec()).unwrap();
        let spec: ScheduleSpec = serde_json::from_str(&text).unwrap();
        let rebuilt = spec.build().unwrap();
        for t in 1..=64 {
            assert_eq!(s.alpha(t).to_bits(), rebuilt.alpha(t).to_bits());
            assert_eq!(s.alpha_bar(t).to_bits(), rebuilt.alpha_bar(t).to_bits());
        }
    }

    proptest! {
        #[test]
        fn linear_schedules_with_small_betas_validate(
            t_max in 2usize..400,
            beta_min in 1e-6f64..0.009,
            spread in 0.0f64..0.02,
        ) {
            let beta_max = (beta_min + spread).min(0.05);
            let s = make_schedule(ScheduleKind::LinearBeta, t_max, beta_min, beta_max).unwrap();
            check_invariants(&s);
        }

        #[test]
        fn cosine_schedules_validate_for_long_horizons(t_max in 18usize..600) {
            let s = make_schedule(ScheduleKind::Cosine, t_max, 0.0, 0.0).unwrap();
            check_invariants(&s);
        }
    }
}
