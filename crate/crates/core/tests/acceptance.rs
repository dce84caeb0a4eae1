//! Acceptance gate: one test per shipped guarantee, each printing a single
//! PASS/FAIL line (run with `--nocapture` to see the lines on success).
//!
//! 1. The two algebraic forms of the smoothed pairwise loss agree.
//! 2. The smoothed loss reduces to the hard-label loss in the hard limit.
//! 3. Equal-reward pairs are exactly inert: loss ln 2, zero gradient.
//! 4. Reverse-mode gradients match central finite differences.
//! 5. Sampler/inversion step algebra composes to identity.
//! 6. ReNoise refinement helps on a pretrained model.
//! 7. Labels are affine-invariant and swap-antisymmetric.
//! 8. End-to-end preference finetuning beats the reference and DPO.
//! 9. Strict mode is bit-reproducible; gradient accumulation is neutral.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use smpo::denoiser::{Activation, DenoiserModel, ModelArch};
use smpo::diffusion::{
    ddim_sample_from, forward_noise, implied_noise, renoise_invert, step_coeffs, InversionResult,
};
use smpo::harness::{
    evaluate, finetune, gen_toy_data, identity_sweep, pretrain_reference, run_gradcheck,
    task_conditions, GradLoss, Method, TaskKind, TrainConfig,
};
use smpo::numerics::{make_schedule, NoiseSchedule, ScheduleKind, SeededRng, Vector};
use smpo::objectives::{dpo_loss, smpo_loss};
use smpo::preference::{
    label_dataset, normalize_reward, weight_ratio, Dataset, PreferencePair, RewardFunction,
    SmoothedLabel,
};
use tempfile::TempDir;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared pretrained reference on gmm2d at T = 50, used by criteria 6 and 8.

struct Pretrained {
    ds: Dataset,
    model: DenoiserModel,
    sched: NoiseSchedule,
    build_secs: f64,
}

static PRETRAINED: OnceLock<Pretrained> = OnceLock::new();

fn finetune_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.t_max = 50;
    cfg.sample_steps = 50;
    cfg.beta_max = 0.26;
    cfg.hidden_dim = 48;
    cfg
}

fn pretrained() -> &'static Pretrained {
    PRETRAINED.get_or_init(|| {
        let t0 = Instant::now();
        let mut ds = gen_toy_data(TaskKind::Gmm2d, 5000, 42).unwrap();
        let mut cfg = finetune_cfg();
        cfg.total_steps = 8000;
        cfg.batch_pairs = 48;
        cfg.lr = 7e-4;
        cfg.warmup_steps = 100;
        cfg.seed = 42;
        let (model, _) = pretrain_reference(&ds, &cfg, None).unwrap();
        label_dataset(&mut ds, &RewardFunction::target_distance(), 10.0).unwrap();
        let sched = cfg.schedule_spec().build().unwrap();
        Pretrained {
            ds,
            model,
            sched,
            build_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

fn small_arch() -> ModelArch {
    ModelArch {
        data_dim: 2,
        cond_dim: 2,
        hidden_dim: 8,
        depth: 2,
        t_embed_dim: 4,
        activation: Activation::Tanh,
    }
}

/// An inversion record whose latent actually came from forward noising;
/// plugs forward-noised latents into the smoothed loss.
fn forward_inversion(x0: &Vector, eps: &Vector, t: usize, s: &NoiseSchedule) -> InversionResult {
    InversionResult {
        x_tilde: forward_noise(x0, eps, t, s).unwrap(),
        t,
        grid: vec![0, t],
        residual_before: 0.0,
        residual_after: 0.0,
    }
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_identity_sweep() {
    let t0 = Instant::now();
    let rep = identity_sweep(10_000, 0).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = rep.max_abs_diff < 1e-10 && secs < 5.0;
    report(
        1,
        "direct and reduced losses agree",
        pass,
        &format!(
            "max |direct - reduced| = {:.3e} over {} tuples (tol 1e-10), {:.2} s (limit 5 s)",
            rep.max_abs_diff, rep.tuples, secs
        ),
    );
}

#[test]
fn criterion_2_reduces_to_hard_label_loss() {
    let t0 = Instant::now();
    let sched = make_schedule(ScheduleKind::LinearBeta, 50, 1e-4, 0.02).unwrap();
    let policy = DenoiserModel::init(small_arch(), &SeededRng::new(1)).unwrap();
    let reference = DenoiserModel::init(small_arch(), &SeededRng::new(2)).unwrap();
    let root = SeededRng::new(2026).child(2);
    let mut worst = 0.0_f64;
    for i in 0..1000u64 {
        let mut rng = root.child(i);
        let pair = PreferencePair {
            id: i,
            condition: rng.gaussian(2).unwrap(),
            x_w: rng.gaussian(2).unwrap(),
            x_l: rng.gaussian(2).unwrap(),
            reward_w: None,
            reward_l: None,
            // Hard-label limit: alpha = gamma = 1.
            label: Some(SmoothedLabel {
                ratio: 1.0,
                gamma: 1.0,
            }),
        };
        let eps_w = rng.gaussian(2).unwrap();
        let eps_l = rng.gaussian(2).unwrap();
        let t = 1 + rng.below(50);
        let beta = 0.5 + 4.5 * rng.uniform();
        let inv_w = forward_inversion(&pair.x_w, &eps_w, t, &sched);
        let inv_l = forward_inversion(&pair.x_l, &eps_l, t, &sched);
        let (_, smoothed) =
            smpo_loss(&policy, &reference, &pair, t, &inv_w, &inv_l, beta, &sched).unwrap();
        let (_, hard) =
            dpo_loss(&policy, &reference, &pair, t, &eps_w, &eps_l, beta, &sched).unwrap();
        worst = worst.max((smoothed.loss - hard.loss).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst < 1e-12 && secs < 10.0;
    report(
        2,
        "hard-label reduction",
        pass,
        &format!(
            "max |smpo - dpo| = {:.3e} over 1000 pairs (tol 1e-12), {:.2} s (limit 10 s)",
            worst, secs
        ),
    );
}

#[test]
fn criterion_3_equal_rewards_are_inert() {
    let sched = make_schedule(ScheduleKind::LinearBeta, 50, 1e-4, 0.02).unwrap();
    let policy = DenoiserModel::init(small_arch(), &SeededRng::new(7)).unwrap();
    let reference = DenoiserModel::init(small_arch(), &SeededRng::new(8)).unwrap();

    // Mix tied pairs (identical candidates, hence equal rewards) into a pool
    // of ordinary pairs so the reward range is non-degenerate.
    let root = SeededRng::new(33).child(9);
    let mut ds = Dataset::new(33);
    let mut tied_ids = Vec::new();
    for i in 0..64u64 {
        let mut rng = root.child(i);
        let condition = rng.gaussian(2).unwrap();
        let x_w = rng.gaussian(2).unwrap();
        let x_l = if i % 4 == 0 {
            tied_ids.push(i);
            x_w.clone()
        } else {
            rng.gaussian(2).unwrap()
        };
        ds.pairs.push(PreferencePair {
            id: i,
            condition,
            x_w,
            x_l,
            reward_w: None,
            reward_l: None,
            label: None,
        });
    }
    label_dataset(&mut ds, &RewardFunction::target_distance(), 10.0).unwrap();

    let mut worst_loss_dev = 0.0_f64;
    let mut worst_grad = 0.0_f64;
    let mut all_zero = true;
    for &id in &tied_ids {
        let pair = &ds.pairs[id as usize];
        assert_eq!(pair.label.unwrap().ratio, 0.5);
        let mut rng = SeededRng::new(100 + id);
        let eps_w = rng.gaussian(2).unwrap();
        let eps_l = rng.gaussian(2).unwrap();
        let t = 1 + rng.below(50);
        let inv_w = forward_inversion(&pair.x_w, &eps_w, t, &sched);
        let inv_l = forward_inversion(&pair.x_l, &eps_l, t, &sched);
        let (graph, b) =
            smpo_loss(&policy, &reference, pair, t, &inv_w, &inv_l, 2000.0, &sched).unwrap();
        worst_loss_dev = worst_loss_dev.max((b.loss - std::f64::consts::LN_2).abs());
        let grads = graph.backward().unwrap();
        all_zero &= grads.is_all_zero();
        worst_grad = worst_grad.max(grads.l2_norm());
    }
    let pass = worst_loss_dev <= 1e-12 && all_zero && worst_grad == 0.0;
    report(
        3,
        "equal rewards gate to zero",
        pass,
        &format!(
            "{} tied pairs: max |loss - ln 2| = {:.3e} (tol 1e-12), grad norm = {:.1e} (exact 0)",
            tied_ids.len(),
            worst_loss_dev,
            worst_grad
        ),
    );
}

#[test]
fn criterion_4_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for kind in GradLoss::ALL {
        let rep = run_gradcheck(kind, 20, 1e-5, 0).unwrap();
        pass &= rep.max_rel_err < 1e-4 && rep.max_params <= 1000;
        details.push(format!("{} {:.2e}", rep.loss, rep.max_rel_err));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    report(
        4,
        "gradcheck",
        pass,
        &format!(
            "max rel err by loss: {} (tol 1e-4, 20 configs each, models <= 1000 params), {:.1} s (limit 60 s)",
            details.join(", "),
            secs
        ),
    );
}

#[test]
fn criterion_5_inversion_algebra() {
    let schedules = [
        make_schedule(ScheduleKind::LinearBeta, 50, 1e-4, 0.02).unwrap(),
        make_schedule(ScheduleKind::LinearBeta, 50, 1e-4, 0.26).unwrap(),
        make_schedule(ScheduleKind::Cosine, 50, 0.0, 0.0).unwrap(),
    ];
    let mut worst_roundtrip = 0.0_f64;
    let mut worst_implied = 0.0_f64;
    for (si, sched) in schedules.iter().enumerate() {
        let root = SeededRng::new(505).child(si as u64);
        for i in 0..500u64 {
            let mut rng = root.child(i);
            let a = rng.below(50);
            let b = a + 1 + rng.below(50 - a);
            let x = rng.gaussian(3).unwrap();
            let eps = rng.gaussian(3).unwrap();
            // Up-hop then down-hop with the same frozen noise estimate.
            let (s_up, c_up) = step_coeffs(sched, a, b);
            let x_b = x.affine(s_up, &eps, c_up).unwrap();
            let (s_dn, c_dn) = step_coeffs(sched, b, a);
            let x_back = x_b.affine(s_dn, &eps, c_dn).unwrap();
            for d in 0..x.dim() {
                worst_roundtrip = worst_roundtrip.max((x_back[d] - x[d]).abs());
            }

            let t = 1 + rng.below(50);
            let x0 = rng.gaussian(3).unwrap();
            let noise = rng.gaussian(3).unwrap();
            let x_t = forward_noise(&x0, &noise, t, sched).unwrap();
            let tau = implied_noise(&x_t, &x0, t, sched).unwrap();
            for d in 0..noise.dim() {
                worst_implied = worst_implied.max((tau[d] - noise[d]).abs());
            }
        }
    }
    let pass = worst_roundtrip < 1e-10 && worst_implied <= 1e-12;
    report(
        5,
        "step algebra composes to identity",
        pass,
        &format!(
            "up/down round trip max err = {:.3e} (tol 1e-10); implied-of-forward max err = {:.3e} (tol 1e-12); 1500 trials over 3 schedules",
            worst_roundtrip, worst_implied
        ),
    );
}

#[test]
fn criterion_6_renoise_refinement_helps() {
    let f = pretrained();

    // Part 1: one refinement pass does not worsen the fixed-point residual.
    let root = SeededRng::new(606).child(0);
    let mut improved = 0usize;
    for i in 0..100u64 {
        let mut rng = root.child(i);
        let pair = &f.ds.pairs[rng.below(f.ds.pairs.len())];
        let x0 = if i % 2 == 0 { &pair.x_w } else { &pair.x_l };
        let t = 1 + rng.below(50);
        let inv = renoise_invert(&f.model, x0, t, 9, 1, &pair.condition, 1.0, &f.sched).unwrap();
        if inv.residual_after <= inv.residual_before {
            improved += 1;
        }
    }

    // Part 2: reconstruction from inverted latents beats reconstruction from
    // random forward noising at t = T/2, same sampler settings on both paths.
    let t_mid = 25;
    let root = SeededRng::new(606).child(1);
    let (mut err_inv, mut err_fwd) = (0.0, 0.0);
    let trials = 200usize;
    for i in 0..trials as u64 {
        let mut rng = root.child(i);
        let pair = &f.ds.pairs[rng.below(f.ds.pairs.len())];
        let x0 = if i % 2 == 0 { &pair.x_w } else { &pair.x_l };
        let inv =
            renoise_invert(&f.model, x0, t_mid, 9, 1, &pair.condition, 1.0, &f.sched).unwrap();
        let back = ddim_sample_from(
            &f.model, &inv.x_tilde, t_mid, &pair.condition, 9, 1.0, &f.sched,
        )
        .unwrap();
        err_inv += libm::sqrt(back.dist_sq(x0).unwrap());

        let eps = rng.gaussian(2).unwrap();
        let x_t = forward_noise(x0, &eps, t_mid, &f.sched).unwrap();
        let back = ddim_sample_from(&f.model, &x_t, t_mid, &pair.condition, 9, 1.0, &f.sched)
            .unwrap();
        err_fwd += libm::sqrt(back.dist_sq(x0).unwrap());
    }
    let (mean_inv, mean_fwd) = (err_inv / trials as f64, err_fwd / trials as f64);

    let pass = improved >= 90 && mean_inv < mean_fwd;
    report(
        6,
        "renoise refinement",
        pass,
        &format!(
            "residual_after <= residual_before in {improved}/100 (need >= 90); mean recon err {:.4} inverted vs {:.4} forward-noised over {trials} trials at t = {t_mid}",
            mean_inv, mean_fwd
        ),
    );
}

#[test]
fn criterion_7_label_invariances() {
    let base = gen_toy_data(TaskKind::Gmm2d, 500, 5).unwrap();

    // Positive affine recalibration of the reward leaves labels unchanged.
    let mut plain = base.clone();
    let plain_report =
        label_dataset(&mut plain, &RewardFunction::target_distance(), 10.0).unwrap();
    let mut rescaled = base.clone();
    label_dataset(
        &mut rescaled,
        &RewardFunction::target_distance().with_affine(3.7, -2.2),
        10.0,
    )
    .unwrap();
    let mut worst_ratio_dev = 0.0_f64;
    let mut winners_match = true;
    for (p, q) in plain.pairs.iter().zip(rescaled.pairs.iter()) {
        worst_ratio_dev =
            worst_ratio_dev.max((p.label.unwrap().ratio - q.label.unwrap().ratio).abs());
        winners_match &= p.x_w == q.x_w && p.x_l == q.x_l;
    }

    // Swapping the candidates of every pair before labeling must produce the
    // identical labeled dataset (the labeler restores reward order), and the
    // softmax weight itself must be antisymmetric in its arguments.
    let mut swapped = base.clone();
    for pair in &mut swapped.pairs {
        std::mem::swap(&mut pair.x_w, &mut pair.x_l);
    }
    label_dataset(&mut swapped, &RewardFunction::target_distance(), 10.0).unwrap();
    let swap_identical = swapped.pairs == plain.pairs;

    let stats = plain_report.stats;
    let mut worst_antisym = 0.0_f64;
    for p in &plain.pairs {
        let nw = normalize_reward(p.reward_w.unwrap(), &stats).unwrap();
        let nl = normalize_reward(p.reward_l.unwrap(), &stats).unwrap();
        let fwd = weight_ratio(nw, nl).unwrap();
        let rev = weight_ratio(nl, nw).unwrap();
        worst_antisym = worst_antisym.max((fwd + rev - 1.0).abs());
    }

    let pass = worst_ratio_dev <= 1e-12 && winners_match && swap_identical && worst_antisym <= 1e-12;
    report(
        7,
        "label invariances",
        pass,
        &format!(
            "affine max ratio dev = {:.3e} (tol 1e-12), winners preserved: {winners_match}; swapped dataset identical: {swap_identical}; antisymmetry max dev = {:.3e} (tol 1e-12); 500 pairs",
            worst_ratio_dev, worst_antisym
        ),
    );
}

#[test]
fn criterion_8_end_to_end_alignment() {
    let f = pretrained();
    let t0 = Instant::now();
    let conds = task_conditions(TaskKind::Gmm2d);
    let reward = RewardFunction::target_distance();

    let run = |method: Method, seed: u64| {
        let mut cfg = finetune_cfg();
        cfg.method = method;
        cfg.beta = 2000.0;
        cfg.gamma = 10.0;
        cfg.lr = 1e-5;
        cfg.total_steps = 2000;
        cfg.batch_pairs = 16;
        cfg.warmup_steps = 100;
        cfg.seed = seed;
        let (model, _) = finetune(&f.model, &f.ds, &cfg, &f.sched, None).unwrap();
        evaluate(
            &model,
            &f.model,
            &reward,
            &conds,
            500,
            50,
            1000 + seed,
            &f.sched,
        )
        .unwrap()
        .win_rate
    };

    let mut smpo_wins = 0usize;
    let mut per_seed = Vec::new();
    let mut smpo_seed0 = 0.0;
    for seed in 0..5u64 {
        let smpo = run(Method::Smpo, seed);
        let dpo = run(Method::Dpo, seed);
        if seed == 0 {
            smpo_seed0 = smpo;
        }
        if smpo >= dpo {
            smpo_wins += 1;
        }
        per_seed.push(format!("seed {seed}: smpo {smpo:.3} dpo {dpo:.3}"));
    }
    let secs = f.build_secs + t0.elapsed().as_secs_f64();
    let pass = smpo_seed0 >= 0.60 && smpo_wins >= 3 && secs < 1800.0;
    report(
        8,
        "end-to-end alignment",
        pass,
        &format!(
            "win_rate(smpo, seed 0) = {smpo_seed0:.3} (need >= 0.60); smpo >= dpo in {smpo_wins}/5 seeds (need >= 3); [{}]; {:.0} s incl. pretraining (limit 1800 s)",
            per_seed.join("; "),
            secs
        ),
    );
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_smpo"))
        .args(args)
        .output()
        .expect("binary should spawn");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Full pipeline in strict mode; returns the bytes of every artifact.
fn strict_pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let (data, ckpt, tuned, metrics, report) = (
        p("pairs.jsonl"),
        p("ref.ckpt"),
        p("tuned.ckpt"),
        p("metrics.csv"),
        p("report.json"),
    );
    let tiny: &[&str] = &[
        "--t-max", "8", "--sample-steps", "8", "--beta-max", "0.3", "--hidden-dim", "8",
        "--depth", "1", "--t-embed-dim", "4", "--batch-pairs", "4", "--warmup-steps", "5",
        "--strict", "true",
    ];
    cli(&[
        "gen-data", "--task", "gmm2d", "--pairs", "60", "--seed", "9", "--out", &data,
    ]);
    cli(&["label", "--data", &data, "--gamma", "10"]);
    let mut pre = vec![
        "pretrain", "--data", &data, "--out", &ckpt, "--total-steps", "30", "--lr", "1e-3",
    ];
    pre.extend_from_slice(tiny);
    cli(&pre);
    cli(&[
        "train", "--data", &data, "--ref", &ckpt, "--out", &tuned, "--metrics", &metrics,
        "--method", "smpo", "--total-steps", "15", "--inv-steps", "2", "--lr", "1e-4",
        "--batch-pairs", "4", "--strict", "true",
    ]);
    cli(&[
        "eval", "--model", &tuned, "--ref", &ckpt, "--task", "gmm2d", "--n-prompts", "16",
        "--out", &report,
    ]);
    [data, ckpt, tuned, metrics, report]
        .iter()
        .map(|q| std::fs::read(q).unwrap())
        .collect()
}

#[test]
fn criterion_9_determinism_and_accumulation() {
    // Bit-identical pipeline artifacts across two independent strict runs.
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    let bytes_a = strict_pipeline(dir_a.path());
    let bytes_b = strict_pipeline(dir_b.path());
    let identical = bytes_a == bytes_b;

    // Gradient accumulation: k micro-batches of n/k pairs match one batch of
    // n pairs within 1e-10 on every parameter after a full run.
    let mut ds = gen_toy_data(TaskKind::Gmm2d, 200, 3).unwrap();
    label_dataset(&mut ds, &RewardFunction::target_distance(), 10.0).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.t_max = 8;
    cfg.sample_steps = 8;
    cfg.beta_max = 0.3;
    cfg.hidden_dim = 8;
    cfg.depth = 1;
    cfg.t_embed_dim = 4;
    cfg.total_steps = 60;
    cfg.batch_pairs = 8;
    cfg.lr = 1e-3;
    cfg.warmup_steps = 0;
    cfg.strict = true;
    cfg.method = Method::Smpo;
    cfg.inv_steps = 2;
    let sched = cfg.schedule_spec().build().unwrap();
    let mut pre_cfg = cfg.clone();
    pre_cfg.total_steps = 100;
    let (reference, _) = pretrain_reference(&ds, &pre_cfg, None).unwrap();

    let (whole, _) = finetune(&reference, &ds, &cfg, &sched, None).unwrap();
    // Same 8 pairs per optimizer step, split into 4 micro-batches of 2.
    let mut split_cfg = cfg.clone();
    split_cfg.batch_pairs = 2;
    split_cfg.grad_accum = 4;
    let (split, _) = finetune(&reference, &ds, &split_cfg, &sched, None).unwrap();
    let a = whole.params_flat();
    let b = split.params_flat();
    let max_delta = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0_f64, f64::max);

    let pass = identical && max_delta <= 1e-10;
    report(
        9,
        "determinism and accumulation",
        pass,
        &format!(
            "strict pipeline artifacts bit-identical: {identical} (dataset, checkpoints, metrics CSV, eval JSON); grad-accum 4x max param delta = {:.3e} (tol 1e-10)",
            max_delta
        ),
    );
}
