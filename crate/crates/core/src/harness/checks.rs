//! Numerical self-checks exposed both to the CLI (`gradcheck`,
//! `identity-check`) and to the integration suite: central finite-difference
//! verification of the reverse-mode gradients, and a randomized sweep of the
//! two algebraic forms of the smoothed pairwise loss.

use serde::Serialize;

use crate::denoiser::{Activation, DenoiserModel, ModelArch};
use crate::diffusion::{forward_noise, renoise_invert, InversionResult};
use crate::error::{Error, Result};
use crate::numerics::{make_schedule, NoiseSchedule, ScheduleKind, SeededRng, Vector};
use crate::objectives::{diffusion_loss, dpo_loss, smoothed_dpo_scalar, smpo_loss};
use crate::preference::{PreferencePair, SmoothedLabel};

/// Which loss a gradient check exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradLoss {
    Diffusion,
    Dpo,
    Smpo,
}

impl GradLoss {
    pub const ALL: [GradLoss; 3] = [GradLoss::Diffusion, GradLoss::Dpo, GradLoss::Smpo];
}

impl std::str::FromStr for GradLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(GradLoss::Diffusion),
            "dpo" => Ok(GradLoss::Dpo),
            "smpo" => Ok(GradLoss::Smpo),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected diffusion, dpo, or smpo)"
            ))),
        }
    }
}

impl std::fmt::Display for GradLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradLoss::Diffusion => write!(f, "diffusion"),
            GradLoss::Dpo => write!(f, "dpo"),
            GradLoss::Smpo => write!(f, "smpo"),
        }
    }
}

/// Outcome of [`run_gradcheck`] over one loss.
#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub loss: String,
    pub configs: usize,
    /// Largest model checked, in parameters.
    pub max_params: usize,
    pub max_rel_err: f64,
    /// Config index attaining `max_rel_err`.
    pub worst_config: usize,
}

/// One random configuration for a gradient check: a small model pair, a
/// schedule, and the sampled inputs the loss closes over.
struct GradConfig {
    model: DenoiserModel,
    ref_model: DenoiserModel,
    sched: NoiseSchedule,
    t: usize,
    pair: PreferencePair,
    eps_w: Vector,
    eps_l: Vector,
    inv_w: InversionResult,
    inv_l: InversionResult,
    beta: f64,
}

fn random_config(rng: &SeededRng, needs_inversion: bool) -> Result<GradConfig> {
    let mut dims = rng.child(0);
    let data_dim = 2 + dims.below(2);
    let cond_dim = 1 + dims.below(2);
    let arch = ModelArch {
        data_dim,
        cond_dim,
        hidden_dim: 4 + dims.below(5),
        depth: 1 + dims.below(2),
        t_embed_dim: 2 * (1 + dims.below(2)),
        activation: if dims.below(2) == 0 {
            Activation::Tanh
        } else {
            Activation::Silu
        },
    };
    let t_max = 4 + dims.below(9);
    let beta_max = 0.05 + 0.3 * dims.uniform();
    let sched = make_schedule(ScheduleKind::LinearBeta, t_max, 1e-4, beta_max)?;
    let t = 1 + dims.below(t_max);

    let model = DenoiserModel::init(arch.clone(), &rng.child(1))?;
    let ref_model = DenoiserModel::init(arch, &rng.child(2))?;

    let mut draws = rng.child(3);
    let x_w = draws.gaussian(data_dim)?;
    let x_l = draws.gaussian(data_dim)?;
    let condition = draws.gaussian(cond_dim)?;
    let eps_w = draws.gaussian(data_dim)?;
    let eps_l = draws.gaussian(data_dim)?;
    // Moderate temperatures: saturated softplus regions have near-zero
    // gradients whose relative error is all rounding noise.
    let beta = 0.5 + 7.5 * draws.uniform();
    let ratio = 0.1 + 0.8 * draws.uniform();
    let gamma = 0.5 + 3.5 * draws.uniform();
    let pair = PreferencePair {
        id: 0,
        condition,
        x_w,
        x_l,
        reward_w: None,
        reward_l: None,
        label: Some(SmoothedLabel { ratio, gamma }),
    };

    // The detached losses treat inverted latents as data; compute them once
    // from the unperturbed model so finite differences see a fixed input.
    let (inv_w, inv_l) = if needs_inversion {
        let inv_steps = 1 + draws.below(3);
        (
            renoise_invert(&model, &pair.x_w, t, inv_steps, 1, &pair.condition, 1.0, &sched)?,
            renoise_invert(&model, &pair.x_l, t, inv_steps, 1, &pair.condition, 1.0, &sched)?,
        )
    } else {
        let stub = |x0: &Vector| InversionResult {
            x_tilde: x0.clone(),
            t,
            grid: vec![0, t],
            residual_before: 0.0,
            residual_after: 0.0,
        };
        (stub(&pair.x_w), stub(&pair.x_l))
    };

    Ok(GradConfig {
        model,
        ref_model,
        sched,
        t,
        pair,
        eps_w,
        eps_l,
        inv_w,
        inv_l,
        beta,
    })
}

fn loss_at(kind: GradLoss, cfg: &GradConfig, model: &DenoiserModel) -> Result<f64> {
    Ok(match kind {
        GradLoss::Diffusion => {
            let x_t = forward_noise(&cfg.pair.x_w, &cfg.eps_w, cfg.t, &cfg.sched)?;
            diffusion_loss(model, &x_t, &cfg.pair.condition, cfg.t, &cfg.eps_w, &cfg.sched)?
                .loss_value()
        }
        GradLoss::Dpo => {
            dpo_loss(
                model,
                &cfg.ref_model,
                &cfg.pair,
                cfg.t,
                &cfg.eps_w,
                &cfg.eps_l,
                cfg.beta,
                &cfg.sched,
            )?
            .0
            .loss_value()
        }
        GradLoss::Smpo => {
            smpo_loss(
                model,
                &cfg.ref_model,
                &cfg.pair,
                cfg.t,
                &cfg.inv_w,
                &cfg.inv_l,
                cfg.beta,
                &cfg.sched,
            )?
            .0
            .loss_value()
        }
    })
}

fn grad_at(kind: GradLoss, cfg: &GradConfig) -> Result<Vec<f64>> {
    let graph = match kind {
        GradLoss::Diffusion => {
            let x_t = forward_noise(&cfg.pair.x_w, &cfg.eps_w, cfg.t, &cfg.sched)?;
            diffusion_loss(
                &cfg.model,
                &x_t,
                &cfg.pair.condition,
                cfg.t,
                &cfg.eps_w,
                &cfg.sched,
            )?
        }
        GradLoss::Dpo => {
            dpo_loss(
                &cfg.model,
                &cfg.ref_model,
                &cfg.pair,
                cfg.t,
                &cfg.eps_w,
                &cfg.eps_l,
                cfg.beta,
                &cfg.sched,
            )?
            .0
        }
        GradLoss::Smpo => {
            smpo_loss(
                &cfg.model,
                &cfg.ref_model,
                &cfg.pair,
                cfg.t,
                &cfg.inv_w,
                &cfg.inv_l,
                cfg.beta,
                &cfg.sched,
            )?
            .0
        }
    };
    Ok(graph.backward()?.to_flat())
}

/// Compares reverse-mode gradients of one loss against central finite
/// differences over `configs` random model/input configurations. Every model
/// stays at or under 1000 parameters so the quadratic cost stays small.
pub fn run_gradcheck(kind: GradLoss, configs: usize, h: f64, seed: u64) -> Result<GradcheckReport> {
    if configs == 0 {
        return Err(Error::InvalidArgument(
            "gradcheck needs at least one configuration".to_string(),
        ));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size h = {h} must be finite and > 0"
        )));
    }
    let root = SeededRng::new(seed).child(0x6763);
    let mut worst = 0.0_f64;
    let mut worst_config = 0;
    let mut max_params = 0;
    for i in 0..configs {
        let cfg = random_config(&root.child(i as u64), kind == GradLoss::Smpo)?;
        let base = cfg.model.params_flat();
        assert!(base.len() <= 1000, "gradcheck model too large: {}", base.len());
        max_params = max_params.max(base.len());
        let analytic = grad_at(kind, &cfg)?;
        // Central differences carry rounding noise of roughly
        // eps * |loss| / h on each derivative, so gradient entries near or
        // below that scale cannot be compared relatively; the denominator
        // floor absorbs exactly that noise (with ~100x headroom at the 1e-4
        // default tolerance) while real disagreements above it still fail.
        let loss_scale = loss_at(kind, &cfg, &cfg.model)?.abs().max(1.0);
        let floor = 1e-5 * loss_scale;
        let mut probe = cfg.model.clone();
        let mut flat = base.clone();
        for p in 0..base.len() {
            flat[p] = base[p] + h;
            probe.set_params_flat(&flat)?;
            let up = loss_at(kind, &cfg, &probe)?;
            flat[p] = base[p] - h;
            probe.set_params_flat(&flat)?;
            let down = loss_at(kind, &cfg, &probe)?;
            flat[p] = base[p];
            let fd = (up - down) / (2.0 * h);
            let denom = analytic[p].abs().max(fd.abs()).max(floor);
            let rel = (analytic[p] - fd).abs() / denom;
            if rel > worst {
                worst = rel;
                worst_config = i;
            }
        }
    }
    Ok(GradcheckReport {
        loss: kind.to_string(),
        configs,
        max_params,
        max_rel_err: worst,
        worst_config,
    })
}

/// Outcome of [`identity_sweep`].
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub tuples: usize,
    pub max_abs_diff: f64,
}

/// Sweeps random (log-density quadruple, α, γ, β) tuples and reports the
/// largest absolute disagreement between the direct mixed-density form and
/// the reduced coefficient form of the smoothed pairwise loss.
///
/// Ranges are chosen so the comparison is meaningful at 1e-10: log densities
/// in [-4, 0), γ in (0, 10], β in (0, 200]. Larger magnitudes scale the
/// intermediate products past the point where double precision can hold the
/// identity that tightly.
pub fn identity_sweep(tuples: usize, seed: u64) -> Result<IdentityReport> {
    if tuples == 0 {
        return Err(Error::InvalidArgument(
            "identity sweep needs at least one tuple".to_string(),
        ));
    }
    let root = SeededRng::new(seed).child(0x6964);
    let mut worst = 0.0_f64;
    for i in 0..tuples {
        let mut rng = root.child(i as u64);
        let lw_t = -4.0 * rng.uniform();
        let ll_t = -4.0 * rng.uniform();
        let lw_r = -4.0 * rng.uniform();
        let ll_r = -4.0 * rng.uniform();
        let gamma = 10.0 * rng.uniform().max(1e-3);
        let alpha = gamma * (0.05 + 0.9 * rng.uniform());
        let beta = 200.0 * rng.uniform().max(1e-4);
        let (direct, reduced) =
            smoothed_dpo_scalar(lw_t, ll_t, lw_r, ll_r, alpha, gamma, beta)?;
        worst = worst.max((direct - reduced).abs());
    }
    Ok(IdentityReport {
        tuples,
        max_abs_diff: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_passes_for_every_loss() {
        for kind in GradLoss::ALL {
            let report = run_gradcheck(kind, 4, 1e-5, 7).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "{kind}: max rel err {}",
                report.max_rel_err
            );
            assert!(report.max_params <= 1000);
        }
    }

    #[test]
    fn identity_sweep_is_tight() {
        let report = identity_sweep(2000, 3).unwrap();
        assert!(
            report.max_abs_diff < 1e-10,
            "max diff {}",
            report.max_abs_diff
        );
    }

    #[test]
    fn degenerate_arguments_are_rejected() {
        assert!(run_gradcheck(GradLoss::Dpo, 0, 1e-5, 0).is_err());
        assert!(run_gradcheck(GradLoss::Dpo, 1, 0.0, 0).is_err());
        assert!(identity_sweep(0, 0).is_err());
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("smpo".parse::<GradLoss>().unwrap(), GradLoss::Smpo);
        assert!("sft".parse::<GradLoss>().is_err());
    }
}
