//! Command-line front end for the toy preference-optimization lab.
//!
//! Subcommands cover the whole pipeline: synthetic data, reference
//! pretraining, smoothed labeling, preference fine-tuning, sampling,
//! inversion diagnostics, head-to-head evaluation, and the numerical
//! self-checks. Exit codes: 0 success, 1 failed check, 2 config error,
//! 3 training divergence.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smpo::denoiser::DenoiserModel;
use smpo::diffusion::{ddim_sample, ddim_sample_from, renoise_invert};
use smpo::harness::{
    evaluate, gen_toy_data, identity_sweep, pretrain_reference, run_gradcheck, task_conditions,
    write_metrics_csv, GradLoss, TaskKind, TrainConfig,
};
use smpo::numerics::{SeededRng, Vector};
use smpo::preference::{fmt_f64, label_dataset, Dataset, RewardFunction};
use smpo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "smpo",
    version,
    about = "Smoothed preference optimization on toy diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset (JSONL).
    GenData(GenDataArgs),
    /// Pretrain a reference denoiser with the diffusion loss.
    Pretrain(PretrainArgs),
    /// Attach smoothed preference labels to a dataset.
    Label(LabelArgs),
    /// Fine-tune a pretrained reference with DPO or SmPO.
    Train(TrainArgs),
    /// Draw samples from a checkpoint (CSV).
    Sample(SampleArgs),
    /// Invert dataset samples; report residuals and reconstruction error.
    Invert(InvertArgs),
    /// Compare two checkpoints under a ground-truth reward (JSON report).
    Eval(EvalArgs),
    /// Check reverse-mode gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Check the two algebraic forms of the smoothed loss against each other.
    IdentityCheck(IdentityCheckArgs),
}

/// Optional overrides for every training-config field. Values come from
/// (lowest to highest precedence) built-in defaults, the `--config` file,
/// then these flags.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Training method: sft, dpo, or smpo.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    inv_steps: Option<usize>,
    #[arg(long)]
    inv_guidance: Option<f64>,
    #[arg(long)]
    renoise_iters: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Schedule family: linear_beta or cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    sample_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_scale_by_beta: Option<bool>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    batch_pairs: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    detach_inversion: Option<bool>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Save intermediate checkpoints every N steps (0 disables).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Single-threaded byte-reproducible mode.
    #[arg(long)]
    strict: Option<bool>,
    #[arg(long)]
    cond_dropout: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    t_embed_dim: Option<usize>,
    /// Hidden activation: tanh or silu.
    #[arg(long)]
    activation: Option<String>,
}

impl ConfigArgs {
    fn build_with(&self, mut cfg: TrainConfig) -> Result<TrainConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_file(&text)?;
        }
        macro_rules! apply {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    cfg.set(stringify!($field), &v.to_string())?;
                })*
            };
        }
        apply!(
            method,
            beta,
            gamma,
            inv_steps,
            inv_guidance,
            renoise_iters,
            t_max,
            schedule,
            beta_min,
            beta_max,
            sample_steps,
            lr,
            lr_scale_by_beta,
            warmup_steps,
            batch_pairs,
            grad_accum,
            total_steps,
            seed,
            detach_inversion,
            weight_decay,
            adam_beta1,
            adam_beta2,
            adam_eps,
            checkpoint_every,
            strict,
            cond_dropout,
            hidden_dim,
            depth,
            t_embed_dim,
            activation,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    fn build(&self) -> Result<TrainConfig> {
        self.build_with(TrainConfig::default())
    }
}

/// Reward selection shared by `label` and `eval`.
#[derive(Args, Clone)]
struct RewardArgs {
    /// Reward family: target_distance, axis_projection, or custom.
    #[arg(long, default_value = "target_distance")]
    reward: String,
    /// Direction for axis_projection, comma-separated.
    #[arg(long)]
    axis: Option<String>,
    /// Per-dimension weights for custom, comma-separated.
    #[arg(long)]
    weights: Option<String>,
    /// Positive affine calibration: r = reward_scale * raw + reward_offset.
    #[arg(long, default_value_t = 1.0)]
    reward_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    reward_offset: f64,
}

impl RewardArgs {
    fn build(&self) -> Result<RewardFunction> {
        let reward = match self.reward.as_str() {
            "target_distance" => RewardFunction::target_distance(),
            "axis_projection" => {
                let axis = self.axis.as_deref().ok_or_else(|| {
                    Error::Config("axis_projection needs --axis".to_string())
                })?;
                RewardFunction::axis_projection(parse_vector(axis)?)
            }
            "custom" => {
                let weights = self.weights.as_deref().ok_or_else(|| {
                    Error::Config("custom reward needs --weights".to_string())
                })?;
                RewardFunction::custom(parse_vector(weights)?)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown reward '{other}' (expected target_distance, axis_projection, or custom)"
                )))
            }
        }
        .with_affine(self.reward_scale, self.reward_offset);
        reward.validate()?;
        Ok(reward)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Toy task: gmm2d or ring.
    #[arg(long)]
    task: String,
    /// Number of candidate pairs.
    #[arg(long)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Input dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct LabelArgs {
    /// Dataset to label (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Output path; defaults to rewriting the input in place.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Smoothing temperature stored with each label.
    #[arg(long, default_value_t = 10.0)]
    gamma: f64,
    #[command(flatten)]
    reward: RewardArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Reference checkpoint from `pretrain`.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct SampleArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Cycle through this task's condition set.
    #[arg(long)]
    task: Option<String>,
    /// Explicit condition, comma-separated; repeatable.
    #[arg(long)]
    cond: Vec<String>,
    /// Number of samples.
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling grid size; defaults to the schedule horizon.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InvertArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset whose winners are inverted (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Timestep to invert to; defaults to half the horizon.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 9)]
    inv_steps: usize,
    #[arg(long, default_value_t = 1)]
    renoise_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    /// Process at most this many pairs.
    #[arg(long)]
    limit: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Baseline checkpoint.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Task whose condition set drives the prompts.
    #[arg(long, default_value = "gmm2d")]
    task: String,
    #[arg(long, default_value_t = 200)]
    n_prompts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling grid size; defaults to the schedule horizon.
    #[arg(long)]
    steps: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    reward: RewardArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Losses to check, comma-separated subset of diffusion,dpo,smpo.
    #[arg(long, default_value = "diffusion,dpo,smpo")]
    losses: String,
    /// Random configurations per loss.
    #[arg(long, default_value_t = 20)]
    configs: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IdentityCheckArgs {
    /// Random tuples to sweep.
    #[arg(long, default_value_t = 10_000)]
    tuples: usize,
    /// Maximum allowed |direct - reduced|.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        // A downstream pager closing stdout is not an error worth reporting.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData(a) => run_gen_data(a),
        Command::Pretrain(a) => run_pretrain(a),
        Command::Label(a) => run_label(a),
        Command::Train(a) => run_train(a),
        Command::Sample(a) => run_sample(a),
        Command::Invert(a) => run_invert(a),
        Command::Eval(a) => run_eval(a),
        Command::Gradcheck(a) => run_gradcheck_cmd(a),
        Command::IdentityCheck(a) => run_identity_check(a),
    }
}

fn run_gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let kind: TaskKind = a.task.parse()?;
    let ds = gen_toy_data(kind, a.pairs, a.seed)?;
    ds.write_jsonl(&a.out)?;
    println!("wrote {} pairs to {}", ds.pairs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// Intermediate checkpoint path: `model.ckpt` -> `model.step2000.ckpt`.
fn step_path(out: &Path, step: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("ckpt");
    let name = match out.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}.step{step}.{ext}"),
        None => format!("{stem}.step{step}"),
    };
    out.with_file_name(name)
}

/// Hook that saves intermediate checkpoints every `every` steps.
fn checkpoint_hook<'a>(
    every: usize,
    out: &'a Path,
    cfg: &'a TrainConfig,
) -> impl FnMut(usize, &DenoiserModel) -> Result<()> + 'a {
    move |step, model| {
        if every > 0 && step % every == 0 {
            model.save(&step_path(out, step), &cfg.schedule_spec())?;
        }
        Ok(())
    }
}

fn run_pretrain(a: PretrainArgs) -> Result<ExitCode> {
    let cfg = a.overrides.build()?;
    let ds = Dataset::read_jsonl(&a.data)?;
    let mut hook = checkpoint_hook(cfg.checkpoint_every, &a.out, &cfg);
    let (model, rows) = pretrain_reference(&ds, &cfg, Some(&mut hook))?;
    model.save(&a.out, &cfg.schedule_spec())?;
    if let Some(path) = &a.metrics {
        write_metrics_csv(path, &rows)?;
    }
    if let Some(last) = rows.last() {
        println!(
            "pretrained {} steps (final loss {:.6}); checkpoint at {}",
            rows.len(),
            last.loss,
            a.out.display()
        );
    } else {
        println!("no steps run; checkpoint at {}", a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run_label(a: LabelArgs) -> Result<ExitCode> {
    let mut ds = Dataset::read_jsonl(&a.data)?;
    let reward = a.reward.build()?;
    let report = label_dataset(&mut ds, &reward, a.gamma)?;
    let out = a.out.as_ref().unwrap_or(&a.data);
    ds.write_jsonl(out)?;
    println!(
        "labeled {} pairs ({} swapped, mean ratio {:.4}) -> {}",
        report.pairs,
        report.swapped,
        report.mean_ratio,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_train(a: TrainArgs) -> Result<ExitCode> {
    let (ref_model, spec) = DenoiserModel::load(&a.reference)?;
    // The checkpoint supplies schedule and architecture defaults; explicit
    // file/flag overrides must agree with it or training is refused.
    let mut base = TrainConfig::default();
    base.method = smpo::harness::Method::Smpo;
    base.schedule = spec.kind;
    base.t_max = spec.t_max;
    base.beta_min = spec.beta_min;
    base.beta_max = spec.beta_max;
    base.sample_steps = spec.t_max;
    let arch = ref_model.arch();
    base.hidden_dim = arch.hidden_dim;
    base.depth = arch.depth;
    base.t_embed_dim = arch.t_embed_dim;
    base.activation = arch.activation;
    let cfg = a.overrides.build_with(base)?;
    if cfg.schedule_spec() != spec {
        return Err(Error::Config(format!(
            "requested schedule {:?} does not match the checkpoint's {:?}",
            cfg.schedule_spec(),
            spec
        )));
    }
    if cfg.arch(arch.data_dim, arch.cond_dim) != *arch {
        return Err(Error::Config(
            "requested architecture does not match the checkpoint's".to_string(),
        ));
    }
    let ds = Dataset::read_jsonl(&a.data)?;
    let sched = spec.build()?;
    let mut hook = checkpoint_hook(cfg.checkpoint_every, &a.out, &cfg);
    let (model, rows) = finetune_with_hook(&ref_model, &ds, &cfg, &sched, &mut hook)?;
    model.save(&a.out, &cfg.schedule_spec())?;
    if let Some(path) = &a.metrics {
        write_metrics_csv(path, &rows)?;
    }
    if let Some(last) = rows.last() {
        println!(
            "fine-tuned {} steps with {} (final loss {:.6}); checkpoint at {}",
            rows.len(),
            cfg.method,
            last.loss,
            a.out.display()
        );
    } else {
        println!("no steps run; checkpoint at {}", a.out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn finetune_with_hook(
    ref_model: &DenoiserModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    sched: &smpo::numerics::NoiseSchedule,
    hook: &mut dyn FnMut(usize, &DenoiserModel) -> Result<()>,
) -> Result<(DenoiserModel, Vec<smpo::harness::MetricsRow>)> {
    smpo::harness::finetune(ref_model, ds, cfg, sched, Some(hook))
}

fn parse_vector(text: &str) -> Result<Vector> {
    let values = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("'{p}' is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(Error::Config("empty vector".to_string()));
    }
    Ok(Vector::from_vec(values))
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run_sample(a: SampleArgs) -> Result<ExitCode> {
    let (model, spec) = DenoiserModel::load(&a.model)?;
    let sched = spec.build()?;
    let mut conds: Vec<Vector> = Vec::new();
    if let Some(task) = &a.task {
        conds.extend(task_conditions(task.parse()?));
    }
    for text in &a.cond {
        conds.push(parse_vector(text)?);
    }
    if conds.is_empty() {
        return Err(Error::Config(
            "no conditions; pass --task or at least one --cond".to_string(),
        ));
    }
    for c in &conds {
        if c.dim() != model.arch().cond_dim {
            return Err(Error::Config(format!(
                "condition dimension {} does not match the model's {}",
                c.dim(),
                model.arch().cond_dim
            )));
        }
    }
    if a.n == 0 {
        return Err(Error::Config("--n must be >= 1".to_string()));
    }
    let steps = a.steps.unwrap_or(sched.t_max());
    let data_dim = model.arch().data_dim;
    let root = SeededRng::new(a.seed).child(0x7361);
    let mut out = open_out(a.out.as_deref())?;
    let dim_cols = |prefix: &str, d: usize| {
        (0..d).map(|i| format!("{prefix}_{i}")).collect::<Vec<_>>().join(",")
    };
    writeln!(
        out,
        "id,{},{}",
        dim_cols("cond", conds[0].dim()),
        dim_cols("x", data_dim)
    )?;
    for i in 0..a.n {
        let cond = &conds[i % conds.len()];
        let x_t = root.child(i as u64).gaussian(data_dim)?;
        let x0 = ddim_sample(&model, &x_t, cond, steps, a.guidance, &sched)?;
        let row: Vec<String> = std::iter::once(i.to_string())
            .chain(cond.iter().map(|v| fmt_f64(*v)))
            .chain(x0.iter().map(|v| fmt_f64(*v)))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_invert(a: InvertArgs) -> Result<ExitCode> {
    let (model, spec) = DenoiserModel::load(&a.model)?;
    let sched = spec.build()?;
    let ds = Dataset::read_jsonl(&a.data)?;
    let t = a.t.unwrap_or_else(|| (sched.t_max() / 2).max(1));
    let mut out = open_out(a.out.as_deref())?;
    writeln!(
        out,
        "id,t,inv_steps,residual_before,residual_after,recon_error"
    )?;
    let limit = a.limit.unwrap_or(ds.pairs.len());
    for pair in ds.pairs.iter().take(limit) {
        let inv = renoise_invert(
            &model,
            &pair.x_w,
            t,
            a.inv_steps,
            a.renoise_iters,
            &pair.condition,
            a.guidance,
            &sched,
        )?;
        let recon = ddim_sample_from(
            &model,
            &inv.x_tilde,
            t,
            &pair.condition,
            a.inv_steps,
            a.guidance,
            &sched,
        )?;
        let err = libm::sqrt(recon.dist_sq(&pair.x_w)?);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            pair.id,
            t,
            a.inv_steps,
            fmt_f64(inv.residual_before),
            fmt_f64(inv.residual_after),
            fmt_f64(err)
        )?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_eval(a: EvalArgs) -> Result<ExitCode> {
    let (model, spec) = DenoiserModel::load(&a.model)?;
    let (ref_model, ref_spec) = DenoiserModel::load(&a.reference)?;
    if spec != ref_spec {
        return Err(Error::Config(format!(
            "checkpoint schedules differ: {spec:?} vs {ref_spec:?}"
        )));
    }
    let sched = spec.build()?;
    let reward = a.reward.build()?;
    let conds = task_conditions(a.task.parse()?);
    let steps = a.steps.unwrap_or(sched.t_max());
    let report = evaluate(
        &model,
        &ref_model,
        &reward,
        &conds,
        a.n_prompts,
        steps,
        a.seed,
        &sched,
    )?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
        path: "eval report".to_string(),
        detail: e.to_string(),
    })?;
    println!("{text}");
    if let Some(path) = &a.out {
        std::fs::write(path, format!("{text}\n"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck_cmd(a: GradcheckArgs) -> Result<ExitCode> {
    let kinds = a
        .losses
        .split(',')
        .map(|s| s.trim().parse::<GradLoss>())
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(Error::Config("no losses requested".to_string()));
    }
    let mut ok = true;
    for kind in kinds {
        let report = run_gradcheck(kind, a.configs, a.h, a.seed)?;
        let pass = report.max_rel_err < a.tol;
        ok &= pass;
        println!(
            "gradcheck {}: configs={} max_params={} max_rel_err={:.3e} tol={:.1e} -> {}",
            report.loss,
            report.configs,
            report.max_params,
            report.max_rel_err,
            a.tol,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_identity_check(a: IdentityCheckArgs) -> Result<ExitCode> {
    let started = std::time::Instant::now();
    let report = identity_sweep(a.tuples, a.seed)?;
    let pass = report.max_abs_diff < a.tol;
    println!(
        "identity-check: tuples={} max_abs_diff={:.3e} tol={:.1e} wall_ms={} -> {}",
        report.tuples,
        report.max_abs_diff,
        a.tol,
        started.elapsed().as_millis(),
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
