//! Training configuration: defaults, a flat `key = value` config format,
//! and validation. Command-line flags are merged on top by the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Activation, ModelArch};
use crate::error::{Error, Result};
use crate::numerics::{ScheduleKind, ScheduleSpec};

/// What a training run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain denoising regression (reference pretraining).
    Sft,
    /// Pairwise preference loss with hard labels.
    Dpo,
    /// Pairwise preference loss with smoothed labels and inverted latents.
    Smpo,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sft" => Ok(Method::Sft),
            "dpo" => Ok(Method::Dpo),
            "smpo" => Ok(Method::Smpo),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected sft, dpo, or smpo)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sft => write!(f, "sft"),
            Method::Dpo => write!(f, "dpo"),
            Method::Smpo => write!(f, "smpo"),
        }
    }
}

/// Everything a training run needs. All fields have working defaults; a
/// config file and CLI flags override them field by field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Regularization strength toward the reference model.
    pub beta: f64,
    /// Label sensitivity used when labeling and reported in metrics.
    pub gamma: f64,
    /// Upward hops used by inversion during smpo training.
    pub inv_steps: usize,
    /// Guidance weight applied during inversion.
    pub inv_guidance: f64,
    /// Fixed-point refinements per inversion hop.
    pub renoise_iters: usize,
    /// Number of diffusion timesteps.
    pub t_max: usize,
    /// Noise schedule family.
    pub schedule: ScheduleKind,
    /// Linear-schedule endpoints (ignored by the cosine schedule).
    pub beta_min: f64,
    pub beta_max: f64,
    /// DDIM steps used when sampling (eval, `sample` subcommand).
    pub sample_steps: usize,
    /// Base learning rate.
    pub lr: f64,
    /// Scale the learning rate by `2000 / beta` (keeps the effective rate
    /// constant when beta is swept).
    pub lr_scale_by_beta: bool,
    /// Linear warm-up length in optimizer steps (0 disables).
    pub warmup_steps: usize,
    /// Pairs (or samples, for sft) per micro-batch.
    pub batch_pairs: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    /// Optimizer steps.
    pub total_steps: usize,
    pub seed: u64,
    /// Treat inverted latents as constants (cheaper, the default); when
    /// false, gradients flow through the inversion loop.
    pub detach_inversion: bool,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Write a checkpoint every N optimizer steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Single-threaded, byte-reproducible mode; also zeroes wall_ms.
    pub strict: bool,
    /// Probability of replacing the condition with the null condition
    /// during pretraining.
    pub cond_dropout: f64,
    /// Model architecture for pretraining (data/cond dims come from data).
    pub hidden_dim: usize,
    pub depth: usize,
    pub t_embed_dim: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Sft,
            beta: 2000.0,
            gamma: 10.0,
            inv_steps: 9,
            inv_guidance: 1.0,
            renoise_iters: 1,
            t_max: 50,
            schedule: ScheduleKind::LinearBeta,
            beta_min: 1e-4,
            beta_max: 0.02,
            sample_steps: 50,
            lr: 1e-4,
            lr_scale_by_beta: false,
            warmup_steps: 100,
            batch_pairs: 16,
            grad_accum: 1,
            total_steps: 2000,
            seed: 0,
            detach_inversion: true,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            strict: false,
            cond_dropout: 0.1,
            hidden_dim: 32,
            depth: 2,
            t_embed_dim: 8,
            activation: Activation::Silu,
        }
    }
}

impl TrainConfig {
    /// Apply one `key = value` assignment. Keys are case-insensitive and
    /// accept `-` for `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        let bad = |what: &str| {
            Error::Config(format!("config key '{key}': cannot parse '{value}' as {what}"))
        };
        match key.as_str() {
            "method" => self.method = value.parse()?,
            "beta" => self.beta = value.parse().map_err(|_| bad("a number"))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad("a number"))?,
            "inv_steps" => self.inv_steps = value.parse().map_err(|_| bad("an integer"))?,
            "inv_guidance" => self.inv_guidance = value.parse().map_err(|_| bad("a number"))?,
            "renoise_iters" => self.renoise_iters = value.parse().map_err(|_| bad("an integer"))?,
            "t_max" | "t" => self.t_max = value.parse().map_err(|_| bad("an integer"))?,
            "schedule" => {
                self.schedule = value
                    .parse()
                    .map_err(|_| bad("a schedule kind (linear_beta or cosine)"))?
            }
            "beta_min" => self.beta_min = value.parse().map_err(|_| bad("a number"))?,
            "beta_max" => self.beta_max = value.parse().map_err(|_| bad("a number"))?,
            "sample_steps" => self.sample_steps = value.parse().map_err(|_| bad("an integer"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("a number"))?,
            "lr_scale_by_beta" => self.lr_scale_by_beta = parse_bool(&key, value)?,
            "warmup_steps" => self.warmup_steps = value.parse().map_err(|_| bad("an integer"))?,
            "batch_pairs" => self.batch_pairs = value.parse().map_err(|_| bad("an integer"))?,
            "grad_accum" => self.grad_accum = value.parse().map_err(|_| bad("an integer"))?,
            "total_steps" => self.total_steps = value.parse().map_err(|_| bad("an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an integer"))?,
            "detach_inversion" => self.detach_inversion = parse_bool(&key, value)?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad("a number"))?,
            "adam_beta1" => self.adam_beta1 = value.parse().map_err(|_| bad("a number"))?,
            "adam_beta2" => self.adam_beta2 = value.parse().map_err(|_| bad("a number"))?,
            "adam_eps" => self.adam_eps = value.parse().map_err(|_| bad("a number"))?,
            "checkpoint_every" => {
                self.checkpoint_every = value.parse().map_err(|_| bad("an integer"))?
            }
            "strict" => self.strict = parse_bool(&key, value)?,
            "cond_dropout" => self.cond_dropout = value.parse().map_err(|_| bad("a number"))?,
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad("an integer"))?,
            "depth" => self.depth = value.parse().map_err(|_| bad("an integer"))?,
            "t_embed_dim" => self.t_embed_dim = value.parse().map_err(|_| bad("an integer"))?,
            "activation" => {
                self.activation = value.parse().map_err(|_| bad("an activation (tanh or silu)"))?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.inv_guidance.is_finite() {
            return Err(Error::Config("inv_guidance must be finite".to_string()));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return Err(Error::Config(format!(
                "cond_dropout must lie in [0, 1), got {}",
                self.cond_dropout
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("inv_steps", self.inv_steps),
            ("t_max", self.t_max),
            ("sample_steps", self.sample_steps),
            ("batch_pairs", self.batch_pairs),
            ("grad_accum", self.grad_accum),
            ("hidden_dim", self.hidden_dim),
            ("depth", self.depth),
            ("t_embed_dim", self.t_embed_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Schedule described by this config.
    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            t_max: self.t_max,
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }

    /// Architecture for a fresh model over the given data/condition dims.
    pub fn arch(&self, data_dim: usize, cond_dim: usize) -> ModelArch {
        ModelArch {
            data_dim,
            cond_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            t_embed_dim: self.t_embed_dim,
            activation: self.activation,
        }
    }

    /// Learning rate at a 1-based optimizer step: base rate, optional
    /// `2000 / beta` scaling, and linear warm-up.
    pub fn effective_lr(&self, step: usize) -> f64 {
        let base = if self.lr_scale_by_beta {
            self.lr * (2000.0 / self.beta)
        } else {
            self.lr
        };
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        };
        base * warm
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!(
            "config key '{key}': cannot parse '{other}' as a boolean"
        ))),
    }
}
