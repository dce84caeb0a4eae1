//! Smoothed preference labels.
//!
//! Instead of hard winner/loser labels, each pair carries a soft weight
//! derived from its reward gap. Rewards are first normalized against the
//! dataset-level extremes,
//!
//! ```text
//! r' = (r - max_D) / (max_D - min_D)            (r' in [-1, 0])
//! ```
//!
//! and the label stores the two-way softmax weight of the winner,
//!
//! ```text
//! ratio = exp(r'_w) / (exp(r'_w) + exp(r'_l)) = sigmoid(r'_w - r'_l)
//! ```
//!
//! `ratio` is the winner weight `alpha` divided by the sensitivity `gamma`;
//! the effective preference coefficient used by the smoothed objective is
//! `2 alpha - gamma = gamma * (2 ratio - 1)`, which vanishes for equal
//! rewards and grows with the gap. Because normalization and the softmax
//! both see only reward *differences* relative to the dataset range, labels
//! are invariant under any positive affine recalibration of the reward and
//! antisymmetric under swapping the pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::scalar::sigmoid;
use crate::preference::dataset::Dataset;
use crate::preference::reward::RewardFunction;

/// Extremes of the reward pool used for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

impl RewardStats {
    /// Pool statistics over at least two finite rewards.
    pub fn from_rewards<I: IntoIterator<Item = f64>>(rewards: I) -> Result<Self> {
        let mut max = f64::NEG_INFINITY;
        let mut min = f64::INFINITY;
        let mut count = 0usize;
        for r in rewards {
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("reward = {r}")));
            }
            max = max.max(r);
            min = min.min(r);
            count += 1;
        }
        if count < 2 {
            return Err(Error::DegenerateStats(format!(
                "reward pool needs at least 2 scores, got {count}"
            )));
        }
        Ok(RewardStats { max, min, count })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_degenerate(&self) -> bool {
        self.range() <= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.max.is_finite() || !self.min.is_finite() || self.max < self.min || self.count < 2
        {
            return Err(Error::DegenerateStats(format!(
                "invalid reward stats: max {} min {} count {}",
                self.max, self.min, self.count
            )));
        }
        Ok(())
    }
}

/// The stored label of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothedLabel {
    /// Winner softmax weight over sensitivity (`alpha / gamma`), in `(0, 1)`.
    pub ratio: f64,
    /// Sensitivity the label was computed at, `> 0`.
    pub gamma: f64,
}

impl SmoothedLabel {
    /// Winner weight `alpha = gamma * ratio`.
    pub fn alpha(&self) -> f64 {
        self.gamma * self.ratio
    }

    /// Effective preference coefficient `2 alpha - gamma`; zero exactly when
    /// the pair's rewards were equal.
    pub fn coefficient(&self) -> f64 {
        self.gamma * (2.0 * self.ratio - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label ratio {} outside (0, 1)",
                self.ratio
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "label gamma {} must be finite and > 0",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Normalizes one reward to `(r - max) / (max - min)`, in `[-1, 0]` for any
/// `r` inside the pool.
pub fn normalize_reward(r: f64, stats: &RewardStats) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::NonFinite(format!("reward = {r}")));
    }
    if stats.is_degenerate() {
        return Err(Error::DegenerateStats(format!(
            "reward range is zero (max = min = {})",
            stats.max
        )));
    }
    Ok((r - stats.max) / stats.range())
}

/// Normalizes a batch of rewards against shared stats.
pub fn normalize_rewards(rewards: &[f64], stats: &RewardStats) -> Result<Vec<f64>> {
    rewards.iter().map(|&r| normalize_reward(r, stats)).collect()
}

/// Two-way softmax weight of the winner from normalized rewards:
/// `exp(r'_w) / (exp(r'_w) + exp(r'_l))`. Inputs must lie in `[-1, 0]`.
pub fn weight_ratio(rw_norm: f64, rl_norm: f64) -> Result<f64> {
    for (name, v) in [("winner", rw_norm), ("loser", rl_norm)] {
        if !(-1.0..=0.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "normalized {name} reward {v} outside [-1, 0]"
            )));
        }
    }
    Ok(sigmoid(rw_norm - rl_norm))
}

/// Bradley-Terry preference probability of `a` over `b` from raw rewards.
pub fn bt_prob(reward_a: f64, reward_b: f64) -> f64 {
    sigmoid(reward_a - reward_b)
}

/// Summary returned by [`label_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelReport {
    pub pairs: usize,
    /// Pairs whose candidates were reordered so `reward_w >= reward_l`.
    pub swapped: usize,
    pub stats: RewardStats,
    pub mean_ratio: f64,
}

/// Scores every candidate, reorders each pair so the winner really has the
/// higher reward, and attaches smoothed labels computed against the pooled
/// reward statistics of all `2N` candidates. Re-labeling an already labeled
/// dataset recomputes everything from the samples, so the operation is
/// idempotent. A zero-range reward pool is an error: no meaningful label
/// exists in that case.
pub fn label_dataset(
    dataset: &mut Dataset,
    reward: &RewardFunction,
    gamma: f64,
) -> Result<LabelReport> {
    reward.validate()?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} must be finite and > 0"
        )));
    }
    if dataset.pairs.is_empty() {
        return Err(Error::DegenerateStats("dataset has no pairs".to_string()));
    }

    let mut rewards = Vec::with_capacity(dataset.pairs.len() * 2);
    for pair in &dataset.pairs {
        rewards.push(reward.score(&pair.x_w, &pair.condition)?);
        rewards.push(reward.score(&pair.x_l, &pair.condition)?);
    }
    let stats = RewardStats::from_rewards(rewards.iter().copied())?;
    if stats.is_degenerate() {
        return Err(Error::DegenerateStats(format!(
            "all {} rewards equal {}; labels are undefined",
            stats.count, stats.max
        )));
    }

    let mut swapped = 0usize;
    let mut ratio_sum = 0.0;
    for (i, pair) in dataset.pairs.iter_mut().enumerate() {
        let (mut rw, mut rl) = (rewards[2 * i], rewards[2 * i + 1]);
        if rl > rw {
            std::mem::swap(&mut pair.x_w, &mut pair.x_l);
            std::mem::swap(&mut rw, &mut rl);
            swapped += 1;
        }
        let ratio = weight_ratio(
            normalize_reward(rw, &stats)?,
            normalize_reward(rl, &stats)?,
        )?;
        pair.reward_w = Some(rw);
        pair.reward_l = Some(rl);
        pair.label = Some(SmoothedLabel { ratio, gamma });
        ratio_sum += ratio;
    }

    dataset.header.reward_kind = Some(reward.kind_name().to_string());
    dataset.header.reward_stats = Some(stats);

    Ok(LabelReport {
        pairs: dataset.pairs.len(),
        swapped,
        stats,
        mean_ratio: ratio_sum / dataset.pairs.len() as f64,
    })
}
