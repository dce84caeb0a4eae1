//! Synthetic 2-D preference data. Conditions come from a small discrete set
//! of targets; each pair holds one low-noise and one high-noise candidate
//! around the condition's target, so the ground-truth reward usually (not
//! always) prefers the first.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};
use crate::preference::{Dataset, PreferencePair};

/// Spread of the better candidate around the target.
pub const SIGMA_GOOD: f64 = 0.3;
/// Spread of the worse candidate.
pub const SIGMA_BAD: f64 = 0.9;

/// Available toy tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Four targets at the corners (+-2, +-2).
    Gmm2d,
    /// Eight targets on a radius-2 circle.
    Ring,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gmm2d" => Ok(TaskKind::Gmm2d),
            "ring" => Ok(TaskKind::Ring),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected gmm2d or ring)"
            ))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Gmm2d => write!(f, "gmm2d"),
            TaskKind::Ring => write!(f, "ring"),
        }
    }
}

/// The task's discrete condition set; each condition doubles as the
/// reward target.
pub fn task_conditions(kind: TaskKind) -> Vec<Vector> {
    match kind {
        TaskKind::Gmm2d => [(2.0, 2.0), (2.0, -2.0), (-2.0, 2.0), (-2.0, -2.0)]
            .into_iter()
            .map(|(x, y)| Vector::from_vec(vec![x, y]))
            .collect(),
        TaskKind::Ring => (0..8)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
                Vector::from_vec(vec![2.0 * libm::cos(angle), 2.0 * libm::sin(angle)])
            })
            .collect(),
    }
}

/// Generate `n_pairs` unlabeled preference pairs. `x_w` holds the low-noise
/// candidate and `x_l` the high-noise one; a later labeling pass scores and
/// reorders them under an explicit reward.
pub fn gen_toy_data(kind: TaskKind, n_pairs: usize, seed: u64) -> Result<Dataset> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument(
            "gen_toy_data needs n_pairs >= 1".to_string(),
        ));
    }
    let conds = task_conditions(kind);
    let root = SeededRng::new(seed);
    let mut ds = Dataset::new(seed);
    ds.pairs.reserve(n_pairs);
    for i in 0..n_pairs {
        let r = root.child(i as u64);
        let cond = conds[r.child(0).below(conds.len())].clone();
        let good = cond.affine(1.0, &r.child(1).gaussian(2)?, SIGMA_GOOD)?;
        let bad = cond.affine(1.0, &r.child(2).gaussian(2)?, SIGMA_BAD)?;
        ds.pairs.push(PreferencePair {
            id: i as u64,
            condition: cond,
            x_w: good,
            x_l: bad,
            reward_w: None,
            reward_l: None,
            label: None,
        });
    }
    ds.validate()?;
    Ok(ds)
}
