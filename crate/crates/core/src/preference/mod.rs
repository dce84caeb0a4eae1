//! Rewards, smoothed labels, and preference-pair datasets.

pub mod dataset;
pub mod label;
pub mod reward;

pub use dataset::{fmt_f64, Dataset, DatasetHeader, PreferencePair, SCHEMA_VERSION};
pub use label::{
    bt_prob, label_dataset, normalize_reward, normalize_rewards, weight_ratio, LabelReport,
    RewardStats, SmoothedLabel,
};
pub use reward::{RewardFunction, RewardKind};
