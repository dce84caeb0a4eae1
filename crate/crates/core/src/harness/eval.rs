//! Head-to-head evaluation: sample both models from shared noise and let a
//! reward function judge.

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::diffusion::ddim_sample;
use crate::error::{Error, Result};
use crate::numerics::{NoiseSchedule, SeededRng, Vector};
use crate::preference::RewardFunction;

/// Result of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_reward_model: f64,
    pub mean_reward_ref: f64,
    /// Fraction of prompts where the model's sample scores above the
    /// reference's; exact ties count one half.
    pub win_rate: f64,
    pub n_prompts: usize,
    pub seed: u64,
}

/// Sample each model once per prompt from the *same* terminal noise, score
/// both samples, and aggregate. Conditions cycle through `conds`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    reward: &RewardFunction,
    conds: &[Vector],
    n_prompts: usize,
    sample_steps: usize,
    seed: u64,
    sched: &NoiseSchedule,
) -> Result<EvalReport> {
    if model.arch() != ref_model.arch() {
        return Err(Error::ModelMismatch(
            "evaluation needs models with identical architectures".to_string(),
        ));
    }
    if conds.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one condition".to_string(),
        ));
    }
    if n_prompts == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs n_prompts >= 1".to_string(),
        ));
    }
    reward.validate()?;
    let dim = model.arch().data_dim;
    let root = SeededRng::new(seed).child(0x6576);
    let mut sum_model = 0.0;
    let mut sum_ref = 0.0;
    let mut wins = 0.0;
    for i in 0..n_prompts {
        let cond = &conds[i % conds.len()];
        let x_t = root.child(i as u64).gaussian(dim)?;
        let sample_model = ddim_sample(model, &x_t, cond, sample_steps, 1.0, sched)?;
        let sample_ref = ddim_sample(ref_model, &x_t, cond, sample_steps, 1.0, sched)?;
        let score_model = reward.score(&sample_model, cond)?;
        let score_ref = reward.score(&sample_ref, cond)?;
        sum_model += score_model;
        sum_ref += score_ref;
        wins += if score_model > score_ref {
            1.0
        } else if score_model == score_ref {
            0.5
        } else {
            0.0
        };
    }
    let n = n_prompts as f64;
    Ok(EvalReport {
        mean_reward_model: sum_model / n,
        mean_reward_ref: sum_ref / n,
        win_rate: wins / n,
        n_prompts,
        seed,
    })
}
