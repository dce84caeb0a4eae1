//! Training loops: reference pretraining (plain denoising regression) and
//! preference fine-tuning against a frozen reference.
//!
//! Every random draw is keyed by `(seed, step, slot)` through independent
//! child streams, so results do not depend on how slots are split into
//! micro-batches or scheduled across threads; gradients are reduced in slot
//! order. The `strict` flag only forces sequential execution and zeroes the
//! wall-clock column.

use std::time::Instant;

use rayon::prelude::*;

use crate::denoiser::{DenoiserModel, GradientBundle};
use crate::diffusion::renoise_invert;
use crate::error::{Error, Result};
use crate::harness::adam::{adam_step, AdamParams, AdamState};
use crate::harness::config::{Method, TrainConfig};
use crate::harness::metrics::MetricsRow;
use crate::numerics::{NoiseSchedule, SeededRng, Vector};
use crate::objectives::{
    diffusion_loss, dpo_loss, smpo_loss, smpo_loss_through_inversion, InversionSettings,
};
use crate::preference::Dataset;

/// Called after each optimizer step, e.g. to write periodic checkpoints.
pub type StepHook<'a> = &'a mut dyn FnMut(usize, &DenoiserModel) -> Result<()>;

const TAG_MODEL_INIT: u64 = 0x11;
const TAG_STEP: u64 = 0x22;

struct SlotOut {
    loss: f64,
    margin: f64,
    coefficient: f64,
    grads: GradientBundle,
}

/// Train a fresh denoiser on every candidate in the dataset (winners and
/// losers alike) under the config's schedule. Returns the model and one
/// metrics row per optimizer step.
pub fn pretrain_reference(
    dataset: &Dataset,
    cfg: &TrainConfig,
    hook: Option<StepHook>,
) -> Result<(DenoiserModel, Vec<MetricsRow>)> {
    cfg.validate()?;
    let sched = cfg.schedule_spec().build()?;
    let (data_dim, cond_dim) = dataset_dims(dataset)?;
    let arch = cfg.arch(data_dim, cond_dim);
    arch.validate()?;
    let mut model = DenoiserModel::init(arch, &SeededRng::new(cfg.seed).child(TAG_MODEL_INIT))?;
    let rows = train_loop(&mut model, None, dataset, Method::Sft, cfg, &sched, hook)?;
    Ok((model, rows))
}

/// Fine-tune a copy of `ref_model` on preference pairs with the frozen
/// original as regularization anchor. `cfg.method` selects dpo or smpo;
/// smpo requires a labeled dataset.
pub fn finetune(
    ref_model: &DenoiserModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    hook: Option<StepHook>,
) -> Result<(DenoiserModel, Vec<MetricsRow>)> {
    cfg.validate()?;
    if !matches!(cfg.method, Method::Dpo | Method::Smpo) {
        return Err(Error::Config(format!(
            "finetune needs method dpo or smpo, got {}",
            cfg.method
        )));
    }
    if sched.t_max() != cfg.t_max {
        return Err(Error::Config(format!(
            "config t_max = {} does not match the reference schedule t_max = {}",
            cfg.t_max,
            sched.t_max()
        )));
    }
    let (data_dim, cond_dim) = dataset_dims(dataset)?;
    if ref_model.arch().data_dim != data_dim || ref_model.arch().cond_dim != cond_dim {
        return Err(Error::ModelMismatch(format!(
            "reference expects dims ({}, {}) but the dataset has ({data_dim}, {cond_dim})",
            ref_model.arch().data_dim,
            ref_model.arch().cond_dim
        )));
    }
    if cfg.method == Method::Smpo {
        dataset.require_labels()?;
    }
    let mut model = ref_model.clone();
    let rows = train_loop(
        &mut model,
        Some(ref_model),
        dataset,
        cfg.method,
        cfg,
        sched,
        hook,
    )?;
    Ok((model, rows))
}

fn dataset_dims(dataset: &Dataset) -> Result<(usize, usize)> {
    dataset.validate()?;
    match (dataset.data_dim(), dataset.cond_dim()) {
        (Some(d), Some(c)) => Ok((d, c)),
        _ => Err(Error::InvalidArgument("dataset is empty".to_string())),
    }
}

fn train_loop(
    model: &mut DenoiserModel,
    ref_model: Option<&DenoiserModel>,
    dataset: &Dataset,
    method: Method,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut hook: Option<StepHook>,
) -> Result<Vec<MetricsRow>> {
    let arch = model.arch().clone();
    let total_slots = cfg.batch_pairs * cfg.grad_accum;
    let mut flat = model.params_flat();
    let mut adam = AdamState::new(flat.len());
    let ap = AdamParams {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    let root = SeededRng::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.total_steps);

    for step in 1..=cfg.total_steps {
        let started = Instant::now();
        let step_rng = root.child(TAG_STEP).child(step as u64);
        let slot = |j: usize| -> Result<SlotOut> {
            run_slot(
                method,
                model,
                ref_model,
                dataset,
                cfg,
                sched,
                &step_rng.child(j as u64),
            )
        };
        let outs: Vec<Result<SlotOut>> = if cfg.strict {
            (0..total_slots).map(slot).collect()
        } else {
            (0..total_slots).into_par_iter().map(slot).collect()
        };

        let mut grad_sum = GradientBundle::zeros(&arch);
        let (mut loss_sum, mut margin_sum, mut coef_sum) = (0.0, 0.0, 0.0);
        for out in outs {
            let out = out.map_err(|e| promote_divergence(e, step))?;
            grad_sum.add_assign(&out.grads)?;
            loss_sum += out.loss;
            margin_sum += out.margin;
            coef_sum += out.coefficient;
        }
        let n = total_slots as f64;
        grad_sum.scale(1.0 / n);
        let loss_mean = loss_sum / n;
        if !loss_mean.is_finite() {
            return Err(Error::Divergence {
                step: step as u64,
                what: format!("mean loss = {loss_mean}"),
            });
        }
        grad_sum
            .ensure_finite("mean gradient")
            .map_err(|e| promote_divergence(e, step))?;

        let lr_t = cfg.effective_lr(step);
        let grad_norm = grad_sum.l2_norm();
        adam_step(&mut flat, &grad_sum.to_flat(), &mut adam, lr_t, ap)?;
        model.set_params_flat(&flat)?;

        rows.push(MetricsRow {
            step: step as u64,
            loss: loss_mean,
            mean_margin: margin_sum / n,
            mean_coefficient: coef_sum / n,
            grad_norm,
            lr: lr_t,
            wall_ms: if cfg.strict {
                0.0
            } else {
                started.elapsed().as_secs_f64() * 1e3
            },
        });
        if let Some(h) = hook.as_mut() {
            h(step, model)?;
        }
    }
    Ok(rows)
}

/// Loss and gradients for one batch element; all randomness comes from the
/// slot's own stream.
fn run_slot(
    method: Method,
    model: &DenoiserModel,
    ref_model: Option<&DenoiserModel>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    rng: &SeededRng,
) -> Result<SlotOut> {
    let data_dim = model.arch().data_dim;
    let t = 1 + rng.child(1).below(sched.t_max());
    match method {
        Method::Sft => {
            // Index the flattened candidate pool: pair k contributes
            // samples 2k (winner) and 2k + 1 (loser).
            let total = 2 * dataset.pairs.len();
            let pick = rng.child(0).below(total);
            let pair = &dataset.pairs[pick / 2];
            let x0 = if pick % 2 == 0 { &pair.x_w } else { &pair.x_l };
            let eps = rng.child(2).gaussian(data_dim)?;
            let dropped = rng.child(3).uniform() < cfg.cond_dropout;
            let null_cond;
            let cond = if dropped {
                null_cond = Vector::zeros(model.arch().cond_dim);
                &null_cond
            } else {
                &pair.condition
            };
            let lg = diffusion_loss(model, x0, cond, t, &eps, sched)?;
            let loss = lg.loss_value();
            Ok(SlotOut {
                loss,
                margin: 0.0,
                coefficient: 0.0,
                grads: lg.backward()?,
            })
        }
        Method::Dpo => {
            let reference = ref_model.expect("preference training always has a reference");
            let idx = rng.child(0).below(dataset.pairs.len());
            let pair = &dataset.pairs[idx];
            let eps_w = rng.child(2).gaussian(data_dim)?;
            let eps_l = rng.child(3).gaussian(data_dim)?;
            let (lg, b) = dpo_loss(model, reference, pair, t, &eps_w, &eps_l, cfg.beta, sched)?;
            Ok(SlotOut {
                loss: b.loss,
                margin: b.margin,
                coefficient: b.coefficient,
                grads: lg.backward()?,
            })
        }
        Method::Smpo => {
            let reference = ref_model.expect("preference training always has a reference");
            let idx = rng.child(0).below(dataset.pairs.len());
            let pair = &dataset.pairs[idx];
            let (lg, b) = if cfg.detach_inversion {
                let inv_w = renoise_invert(
                    model,
                    &pair.x_w,
                    t,
                    cfg.inv_steps,
                    cfg.renoise_iters,
                    &pair.condition,
                    cfg.inv_guidance,
                    sched,
                )?;
                let inv_l = renoise_invert(
                    model,
                    &pair.x_l,
                    t,
                    cfg.inv_steps,
                    cfg.renoise_iters,
                    &pair.condition,
                    cfg.inv_guidance,
                    sched,
                )?;
                smpo_loss(model, reference, pair, t, &inv_w, &inv_l, cfg.beta, sched)?
            } else {
                smpo_loss_through_inversion(
                    model,
                    reference,
                    pair,
                    t,
                    InversionSettings {
                        inv_steps: cfg.inv_steps,
                        renoise_iters: cfg.renoise_iters,
                        guidance: cfg.inv_guidance,
                    },
                    cfg.beta,
                    sched,
                )?
            };
            Ok(SlotOut {
                loss: b.loss,
                margin: b.margin,
                coefficient: b.coefficient,
                grads: lg.backward()?,
            })
        }
    }
}

/// Mid-training numerical blowups surface as divergence (exit code 3), not
/// as plain invalid-input errors.
fn promote_divergence(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence {
            step: step as u64,
            what,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::eval::evaluate;
    use crate::harness::toydata::{gen_toy_data, task_conditions, TaskKind};
    use crate::preference::{label_dataset, RewardFunction};

    fn strip_wall(rows: &[MetricsRow]) -> Vec<MetricsRow> {
        rows.iter()
            .map(|r| MetricsRow { wall_ms: 0.0, ..*r })
            .collect()
    }

    /// Small, fast config for unit tests.
    fn test_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.t_max = 20;
        cfg.sample_steps = 20;
        cfg.hidden_dim = 16;
        cfg.depth = 2;
        cfg.t_embed_dim = 4;
        cfg.batch_pairs = 8;
        cfg.total_steps = 60;
        cfg.warmup_steps = 10;
        cfg.lr = 2e-3;
        cfg.seed = 5;
        cfg
    }

    fn labeled_data(n: usize, seed: u64) -> Dataset {
        let mut ds = gen_toy_data(TaskKind::Gmm2d, n, seed).unwrap();
        label_dataset(&mut ds, &RewardFunction::target_distance(), 10.0).unwrap();
        ds
    }

    #[test]
    fn pretrain_loss_decreases() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 400, 1).unwrap();
        let mut cfg = test_cfg();
        cfg.total_steps = 200;
        let (_, rows) = pretrain_reference(&ds, &cfg, None).unwrap();
        let head = rows.len() / 10;
        let first: f64 = rows[..head].iter().map(|r| r.loss).sum::<f64>() / head as f64;
        let last: f64 =
            rows[rows.len() - head..].iter().map(|r| r.loss).sum::<f64>() / head as f64;
        assert!(
            last < first,
            "loss should trend down: first {first}, last {last}"
        );
    }

    #[test]
    fn pretrain_is_deterministic_and_thread_invariant() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 100, 2).unwrap();
        let mut cfg = test_cfg();
        cfg.total_steps = 25;
        let (a, rows_a) = pretrain_reference(&ds, &cfg, None).unwrap();
        let (b, rows_b) = pretrain_reference(&ds, &cfg, None).unwrap();
        assert_eq!(a.param_checksum(), b.param_checksum());
        assert_eq!(strip_wall(&rows_a), strip_wall(&rows_b));

        let mut strict_cfg = cfg.clone();
        strict_cfg.strict = true;
        let (c, rows_c) = pretrain_reference(&ds, &strict_cfg, None).unwrap();
        assert_eq!(a.param_checksum(), c.param_checksum());
        assert!(rows_c.iter().all(|r| r.wall_ms == 0.0));
        // Everything except the wall clock matches the threaded run.
        for (x, y) in rows_a.iter().zip(&rows_c) {
            assert_eq!(x.loss, y.loss);
            assert_eq!(x.grad_norm, y.grad_norm);
        }
    }

    #[test]
    fn grad_accum_split_does_not_change_the_run() {
        let ds = labeled_data(80, 3);
        let sched = test_cfg().schedule_spec().build().unwrap();
        let mut pre_cfg = test_cfg();
        pre_cfg.total_steps = 20;
        let (reference, _) = pretrain_reference(&ds, &pre_cfg, None).unwrap();

        let mut cfg_a = test_cfg();
        cfg_a.method = Method::Dpo;
        cfg_a.beta = 50.0;
        cfg_a.total_steps = 10;
        cfg_a.batch_pairs = 3;
        cfg_a.grad_accum = 4;
        cfg_a.strict = true;
        let mut cfg_b = cfg_a.clone();
        cfg_b.batch_pairs = 12;
        cfg_b.grad_accum = 1;

        let (ma, rows_a) = finetune(&reference, &ds, &cfg_a, &sched, None).unwrap();
        let (mb, rows_b) = finetune(&reference, &ds, &cfg_b, &sched, None).unwrap();
        assert_eq!(ma.param_checksum(), mb.param_checksum());
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn finetune_zero_steps_returns_reference_parameters() {
        let ds = labeled_data(40, 4);
        let sched = test_cfg().schedule_spec().build().unwrap();
        let mut pre_cfg = test_cfg();
        pre_cfg.total_steps = 5;
        let (reference, _) = pretrain_reference(&ds, &pre_cfg, None).unwrap();
        let mut cfg = test_cfg();
        cfg.method = Method::Smpo;
        cfg.total_steps = 0;
        cfg.inv_steps = 3;
        let before = reference.param_checksum();
        let (model, rows) = finetune(&reference, &ds, &cfg, &sched, None).unwrap();
        assert_eq!(model.param_checksum(), before);
        assert_eq!(reference.param_checksum(), before);
        assert!(rows.is_empty());
    }

    #[test]
    fn finetune_validates_method_and_labels() {
        let sched = test_cfg().schedule_spec().build().unwrap();
        let unlabeled = gen_toy_data(TaskKind::Gmm2d, 30, 5).unwrap();
        let mut pre_cfg = test_cfg();
        pre_cfg.total_steps = 3;
        let (reference, _) = pretrain_reference(&unlabeled, &pre_cfg, None).unwrap();

        let mut cfg = test_cfg();
        cfg.method = Method::Sft;
        let e = finetune(&reference, &unlabeled, &cfg, &sched, None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));

        cfg.method = Method::Smpo;
        let e = finetune(&reference, &unlabeled, &cfg, &sched, None).unwrap_err();
        assert!(matches!(e, Error::MissingLabel(_)));

        // dpo works without labels: the stored pair order is the preference.
        cfg.method = Method::Dpo;
        cfg.total_steps = 2;
        cfg.beta = 10.0;
        finetune(&reference, &unlabeled, &cfg, &sched, None).unwrap();
    }

    #[test]
    fn finetune_rejects_mismatched_schedule_length() {
        let ds = labeled_data(30, 6);
        let mut pre_cfg = test_cfg();
        pre_cfg.total_steps = 3;
        let (reference, _) = pretrain_reference(&ds, &pre_cfg, None).unwrap();
        let sched = pre_cfg.schedule_spec().build().unwrap();
        let mut cfg = test_cfg();
        cfg.method = Method::Dpo;
        cfg.t_max = 25;
        let e = finetune(&reference, &ds, &cfg, &sched, None).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn warmup_is_visible_in_the_metrics_log() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 50, 7).unwrap();
        let mut cfg = test_cfg();
        cfg.total_steps = 15;
        cfg.warmup_steps = 10;
        let (_, rows) = pretrain_reference(&ds, &cfg, None).unwrap();
        for row in &rows {
            let want = cfg.lr * ((row.step as f64 / 10.0).min(1.0));
            assert_eq!(row.lr, want, "step {}", row.step);
        }
    }

    #[test]
    fn hook_sees_every_step() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 30, 8).unwrap();
        let mut cfg = test_cfg();
        cfg.total_steps = 7;
        let mut seen = Vec::new();
        let mut hook = |step: usize, _m: &DenoiserModel| {
            seen.push(step);
            Ok(())
        };
        pretrain_reference(&ds, &cfg, Some(&mut hook)).unwrap();
        assert_eq!(seen, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 50, 9).unwrap();
        let mut cfg = test_cfg();
        cfg.lr = 1e200;
        cfg.warmup_steps = 0;
        cfg.total_steps = 10;
        let e = pretrain_reference(&ds, &cfg, None).unwrap_err();
        assert!(matches!(e, Error::Divergence { .. }), "got {e:?}");
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn pretrained_model_beats_an_untrained_one() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 400, 10).unwrap();
        let mut cfg = test_cfg();
        cfg.beta_max = 0.4;
        cfg.total_steps = 400;
        cfg.lr = 3e-3;
        let (trained, _) = pretrain_reference(&ds, &cfg, None).unwrap();
        let mut other = cfg.clone();
        other.seed = 77;
        other.total_steps = 0;
        let (untrained, _) = pretrain_reference(&ds, &other, None).unwrap();
        let sched = cfg.schedule_spec().build().unwrap();
        let report = evaluate(
            &trained,
            &untrained,
            &RewardFunction::target_distance(),
            &task_conditions(TaskKind::Gmm2d),
            100,
            cfg.sample_steps,
            123,
            &sched,
        )
        .unwrap();
        assert!(
            report.win_rate >= 0.9,
            "trained model should nearly always win, got {}",
            report.win_rate
        );
        assert!(report.mean_reward_model > report.mean_reward_ref);
    }

    #[test]
    fn sampled_moments_track_the_training_data() {
        let ds = gen_toy_data(TaskKind::Gmm2d, 2000, 11).unwrap();
        let mut cfg = test_cfg();
        cfg.beta_max = 0.4;
        cfg.hidden_dim = 48;
        cfg.t_embed_dim = 8;
        cfg.total_steps = 8000;
        cfg.batch_pairs = 48;
        cfg.lr = 7e-4;
        cfg.warmup_steps = 100;
        let (model, _) = pretrain_reference(&ds, &cfg, None).unwrap();
        let sched = cfg.schedule_spec().build().unwrap();

        // Data moments relative to the center: mean = 0, per-dim variance =
        // (sigma_good^2 + sigma_bad^2) / 2 = 0.45. Pool samples over all four
        // centers so per-mode bias averages out.
        let conds = task_conditions(TaskKind::Gmm2d);
        let per = 100;
        let n = (per * conds.len()) as f64;
        let root = SeededRng::new(777);
        let (mut mean, mut mean_sq) = (vec![0.0; 2], vec![0.0; 2]);
        let mut i = 0u64;
        for cond in &conds {
            for _ in 0..per {
                let x_t = root.child(i).gaussian(2).unwrap();
                i += 1;
                let x0 =
                    crate::diffusion::ddim_sample(&model, &x_t, cond, 20, 1.0, &sched).unwrap();
                for d in 0..2 {
                    let v = x0[d] - cond[d];
                    mean[d] += v / n;
                    mean_sq[d] += v * v / n;
                }
            }
        }
        for d in 0..2 {
            let var = mean_sq[d] - mean[d] * mean[d];
            assert!(
                mean[d].abs() < 0.2,
                "dim {d}: sampled mean is {} off its center",
                mean[d]
            );
            assert!(
                (var - 0.45).abs() < 0.1 * 0.45 + 0.05,
                "dim {d}: sampled variance {var} too far from 0.45"
            );
        }
    }
}

