//! Training objectives.
//!
//! Three losses share one skeleton: predict noise at a noised latent,
//! measure squared error against a target noise, and (for the pairwise
//! losses) push the winner/loser error gap through a logistic link.
//!
//! * [`diffusion_loss`] — plain denoising regression, used for pretraining.
//! * [`dpo_loss`] — pairwise preference loss on forward-noised latents with
//!   a fixed coefficient of 1 (the hard-label limit).
//! * [`smpo_loss`] — the smoothed variant: latents come from inversion, the
//!   target is the implied noise of the inverted latent, and the coefficient
//!   comes from the pair's smoothed label.
//!
//! Loss builders return a [`LossGraph`] so the caller can read the scalar
//! value and then consume the graph for one reverse sweep.

use serde::Serialize;

use crate::denoiser::{BoundModel, DenoiserModel, GradientBundle, Graph, NodeId};
use crate::diffusion::{forward_noise, implied_noise, renoise_invert_traced, InversionResult};
use crate::error::{Error, Result};
use crate::numerics::scalar::softplus;
use crate::numerics::{NoiseSchedule, Vector};
use crate::preference::{PreferencePair, SmoothedLabel};

/// A built loss: the graph, the scalar loss node, and the trainable binding.
pub struct LossGraph {
    graph: Graph,
    theta: BoundModel,
    loss: NodeId,
}

impl std::fmt::Debug for LossGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossGraph")
            .field("loss", &self.loss_value())
            .field("nodes", &self.graph.len())
            .finish()
    }
}

impl LossGraph {
    /// Scalar value of the loss node.
    pub fn loss_value(&self) -> f64 {
        self.graph.scalar_value(self.loss)
    }

    /// Consume the graph and return gradients of the loss w.r.t. the
    /// trainable model.
    pub fn backward(mut self) -> Result<GradientBundle> {
        self.graph.backward(self.loss, &self.theta)
    }
}

/// Per-pair diagnostics of a preference loss.
///
/// `margin = -coefficient * beta * (s_w - s_l)` and `loss = softplus(-margin)`,
/// so `loss = ln 2` exactly when the margin vanishes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairScoreBreakdown {
    /// Winner score: theta's squared error minus the reference's.
    pub s_w: f64,
    /// Loser score, same convention.
    pub s_l: f64,
    /// Timestep the pair was evaluated at.
    pub t: usize,
    /// Effective preference coefficient (`2 alpha - gamma`; 1 for hard labels).
    pub coefficient: f64,
    /// Regularization strength toward the reference model.
    pub beta: f64,
    /// Logit of the logistic link.
    pub margin: f64,
    /// `softplus(-margin)`, always positive.
    pub loss: f64,
}

fn check_t(t: usize, sched: &NoiseSchedule, what: &str) -> Result<()> {
    if t == 0 || t > sched.t_max() {
        return Err(Error::InvalidArgument(format!(
            "{what}: t = {t} outside 1..={}",
            sched.t_max()
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    Ok(())
}

fn check_same_arch(model: &DenoiserModel, ref_model: &DenoiserModel) -> Result<()> {
    if model.arch() != ref_model.arch() {
        return Err(Error::ModelMismatch(format!(
            "policy and reference architectures differ: {:?} vs {:?}",
            model.arch(),
            ref_model.arch()
        )));
    }
    Ok(())
}

/// Denoising regression loss `lambda(t) * ||eps_hat(x_t, t, c) - eps||^2`
/// with `x_t` drawn by forward noising. Gradients flow into `model` only.
pub fn diffusion_loss(
    model: &DenoiserModel,
    x0: &Vector,
    cond: &Vector,
    t: usize,
    eps: &Vector,
    sched: &NoiseSchedule,
) -> Result<LossGraph> {
    check_t(t, sched, "diffusion_loss")?;
    let x_t = forward_noise(x0, eps, t, sched)?;
    // Cheap plain evaluation up front so shape errors surface before tracing.
    model.eps_predict(&x_t, t, cond)?;

    let mut g = Graph::new();
    let theta = g.bind(model, true);
    let x_t_node = g.constant_vector(&x_t);
    let cond_node = g.constant_vector(cond);
    let eps_node = g.constant_vector(eps);
    let pred = g.eps_predict(&theta, x_t_node, t, cond_node);
    let err = g.sq_dist(pred, eps_node);
    let loss = g.scalar_comb(&[(err, sched.lambda(t))], 0.0);
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("diffusion_loss value".to_string()));
    }
    Ok(LossGraph {
        graph: g,
        theta,
        loss,
    })
}

/// Implicit per-sample preference score at `t`:
/// `||eps - eps_theta(x_t)||^2 - ||eps - eps_ref(x_t)||^2` with
/// `x_t = forward_noise(x0, eps, t)`. Zero exactly when `model` and
/// `ref_model` hold identical parameters.
pub fn dpo_score(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    x0: &Vector,
    cond: &Vector,
    t: usize,
    eps: &Vector,
    sched: &NoiseSchedule,
) -> Result<f64> {
    check_same_arch(model, ref_model)?;
    check_t(t, sched, "dpo_score")?;
    let x_t = forward_noise(x0, eps, t, sched)?;
    let e_theta = model.eps_predict(&x_t, t, cond)?;
    let e_ref = ref_model.eps_predict(&x_t, t, cond)?;
    Ok(eps.dist_sq(&e_theta)? - eps.dist_sq(&e_ref)?)
}

/// Smoothed per-sample preference score at `t`: like [`dpo_score`] but the
/// latent is the supplied inverted latent and the regression target is its
/// implied noise. When `inversion.x_tilde` was produced by forward noising
/// this reduces to [`dpo_score`] with the same draw.
pub fn smpo_score(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    x0: &Vector,
    cond: &Vector,
    t: usize,
    inversion: &InversionResult,
    sched: &NoiseSchedule,
) -> Result<f64> {
    check_same_arch(model, ref_model)?;
    check_t(t, sched, "smpo_score")?;
    if inversion.t != t {
        return Err(Error::InvalidArgument(format!(
            "inversion landed at t = {} but the score is requested at t = {t}",
            inversion.t
        )));
    }
    let tau = implied_noise(&inversion.x_tilde, x0, t, sched)?;
    let e_theta = model.eps_predict(&inversion.x_tilde, t, cond)?;
    let e_ref = ref_model.eps_predict(&inversion.x_tilde, t, cond)?;
    Ok(tau.dist_sq(&e_theta)? - tau.dist_sq(&e_ref)?)
}

/// Pairwise preference loss with hard labels (coefficient fixed at 1):
/// `-log sigmoid(-beta * (s_w - s_l))` on forward-noised latents.
#[allow(clippy::too_many_arguments)]
pub fn dpo_loss(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    pair: &PreferencePair,
    t: usize,
    eps_w: &Vector,
    eps_l: &Vector,
    beta: f64,
    sched: &NoiseSchedule,
) -> Result<(LossGraph, PairScoreBreakdown)> {
    check_t(t, sched, "dpo_loss")?;
    let x_tw = forward_noise(&pair.x_w, eps_w, t, sched)?;
    let x_tl = forward_noise(&pair.x_l, eps_l, t, sched)?;
    pair_loss_core(
        model,
        ref_model,
        &pair.condition,
        t,
        &x_tw,
        eps_w,
        &x_tl,
        eps_l,
        1.0,
        beta,
    )
}

/// Smoothed pairwise preference loss on inverted latents. The coefficient
/// comes from the pair's smoothed label; the regression targets are the
/// implied noises of the inverted latents, and both are held constant, so
/// gradients flow only through the noise predictions.
#[allow(clippy::too_many_arguments)]
pub fn smpo_loss(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    pair: &PreferencePair,
    t: usize,
    inv_w: &InversionResult,
    inv_l: &InversionResult,
    beta: f64,
    sched: &NoiseSchedule,
) -> Result<(LossGraph, PairScoreBreakdown)> {
    check_t(t, sched, "smpo_loss")?;
    let label = require_label(pair)?;
    for (name, inv) in [("winner", inv_w), ("loser", inv_l)] {
        if inv.t != t {
            return Err(Error::InvalidArgument(format!(
                "{name} inversion landed at t = {} but the loss is built at t = {t}",
                inv.t
            )));
        }
    }
    let tau_w = implied_noise(&inv_w.x_tilde, &pair.x_w, t, sched)?;
    let tau_l = implied_noise(&inv_l.x_tilde, &pair.x_l, t, sched)?;
    pair_loss_core(
        model,
        ref_model,
        &pair.condition,
        t,
        &inv_w.x_tilde,
        &tau_w,
        &inv_l.x_tilde,
        &tau_l,
        label.coefficient(),
        beta,
    )
}

/// Settings for an inversion performed inside a loss graph.
#[derive(Clone, Copy, Debug)]
pub struct InversionSettings {
    pub inv_steps: usize,
    pub renoise_iters: usize,
    pub guidance: f64,
}

/// Variant of [`smpo_loss`] that traces the inversion of the *current*
/// policy inside the loss graph, so gradients also flow through the latents
/// and their implied-noise targets. Heavier per step; the detached form is
/// the default in training.
#[allow(clippy::too_many_arguments)]
pub fn smpo_loss_through_inversion(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    pair: &PreferencePair,
    t: usize,
    settings: InversionSettings,
    beta: f64,
    sched: &NoiseSchedule,
) -> Result<(LossGraph, PairScoreBreakdown)> {
    check_same_arch(model, ref_model)?;
    check_t(t, sched, "smpo_loss_through_inversion")?;
    check_beta(beta)?;
    let label = require_label(pair)?;
    let coefficient = label.coefficient();
    // Shape/finiteness screen via the plain path before building the graph.
    model.eps_predict(&pair.x_w, 0, &pair.condition)?;
    model.eps_predict(&pair.x_l, 0, &pair.condition)?;

    let mut g = Graph::new();
    let theta = g.bind(model, true);
    let frozen = g.bind(ref_model, false);
    let cond = g.constant_vector(&pair.condition);

    let ab = sched.alpha_bar(t);
    let inv_scale = 1.0 / libm::sqrt(1.0 - ab);
    let x0_coeff = -libm::sqrt(ab) * inv_scale;

    let mut sq = [NodeId::default(); 4];
    for (side, x0) in [(0, &pair.x_w), (1, &pair.x_l)] {
        let x0_node = g.constant_vector(x0);
        let x_tilde = renoise_invert_traced(
            &mut g,
            &theta,
            x0_node,
            t,
            settings.inv_steps,
            settings.renoise_iters,
            cond,
            settings.guidance,
            sched,
        )?;
        // Implied noise of the traced latent; same affine as the plain path.
        let tau = g.affine(x_tilde, inv_scale, x0_node, x0_coeff);
        let e_theta = g.eps_predict(&theta, x_tilde, t, cond);
        let e_ref = g.eps_predict(&frozen, x_tilde, t, cond);
        sq[2 * side] = g.sq_dist(tau, e_theta);
        sq[2 * side + 1] = g.sq_dist(tau, e_ref);
    }
    finish_pair_graph(g, theta, sq, t, coefficient, beta)
}

fn require_label(pair: &PreferencePair) -> Result<SmoothedLabel> {
    let label = pair
        .label
        .ok_or_else(|| Error::MissingLabel(format!("pair {} carries no label", pair.id)))?;
    if !label.ratio.is_finite() || !label.gamma.is_finite() || label.gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "pair {} label is malformed: ratio = {}, gamma = {}",
            pair.id, label.ratio, label.gamma
        )));
    }
    Ok(label)
}

/// Shared graph construction for the pairwise losses: four squared errors,
/// a linear margin, and the logistic link.
#[allow(clippy::too_many_arguments)]
fn pair_loss_core(
    model: &DenoiserModel,
    ref_model: &DenoiserModel,
    cond: &Vector,
    t: usize,
    latent_w: &Vector,
    target_w: &Vector,
    latent_l: &Vector,
    target_l: &Vector,
    coefficient: f64,
    beta: f64,
) -> Result<(LossGraph, PairScoreBreakdown)> {
    check_same_arch(model, ref_model)?;
    check_beta(beta)?;
    if !coefficient.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "preference coefficient must be finite, got {coefficient}"
        )));
    }
    // Plain-path screens for shapes and finiteness.
    model.eps_predict(latent_w, t, cond)?;
    model.eps_predict(latent_l, t, cond)?;
    target_w.ensure_dim(latent_w.dim(), "winner target")?;
    target_l.ensure_dim(latent_l.dim(), "loser target")?;
    target_w.ensure_finite("winner target")?;
    target_l.ensure_finite("loser target")?;

    let mut g = Graph::new();
    let theta = g.bind(model, true);
    let frozen = g.bind(ref_model, false);
    let cond_node = g.constant_vector(cond);
    let mut sq = [NodeId::default(); 4];
    for (side, (latent, target)) in [(latent_w, target_w), (latent_l, target_l)]
        .into_iter()
        .enumerate()
    {
        let latent_node = g.constant_vector(latent);
        let target_node = g.constant_vector(target);
        let e_theta = g.eps_predict(&theta, latent_node, t, cond_node);
        let e_ref = g.eps_predict(&frozen, latent_node, t, cond_node);
        sq[2 * side] = g.sq_dist(target_node, e_theta);
        sq[2 * side + 1] = g.sq_dist(target_node, e_ref);
    }
    finish_pair_graph(g, theta, sq, t, coefficient, beta)
}

/// Terminal stage shared by all pair-loss builders: `sq` holds
/// `[winner theta, winner ref, loser theta, loser ref]` squared errors.
fn finish_pair_graph(
    mut g: Graph,
    theta: BoundModel,
    sq: [NodeId; 4],
    t: usize,
    coefficient: f64,
    beta: f64,
) -> Result<(LossGraph, PairScoreBreakdown)> {
    let cb = coefficient * beta;
    // margin = -c*beta*(s_w - s_l) with s = ||.||^2_theta - ||.||^2_ref.
    let margin = g.scalar_comb(
        &[(sq[0], -cb), (sq[1], cb), (sq[2], cb), (sq[3], -cb)],
        0.0,
    );
    let loss = g.softplus_neg(margin);
    let s_w = g.scalar_value(sq[0]) - g.scalar_value(sq[1]);
    let s_l = g.scalar_value(sq[2]) - g.scalar_value(sq[3]);
    let breakdown = PairScoreBreakdown {
        s_w,
        s_l,
        t,
        coefficient,
        beta,
        margin: g.scalar_value(margin),
        loss: g.scalar_value(loss),
    };
    if !breakdown.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "pair loss (margin = {})",
            breakdown.margin
        )));
    }
    Ok((
        LossGraph {
            graph: g,
            theta,
            loss,
        },
        breakdown,
    ))
}

/// Evaluate the smoothed pairwise loss two ways from per-sample log
/// densities and return `(direct, reduced)`.
///
/// *Direct*: mix the winner/loser log densities with weights `alpha` and
/// `gamma - alpha` (normalizers cancel between policy and reference and are
/// dropped), then apply the hard-label pairwise loss to the mixed
/// densities. *Reduced*: scale the unmixed margin by `2 * alpha - gamma`.
/// The two agree to floating-point error.
pub fn smoothed_dpo_scalar(
    logp_w_theta: f64,
    logp_l_theta: f64,
    logp_w_ref: f64,
    logp_l_ref: f64,
    alpha: f64,
    gamma: f64,
    beta: f64,
) -> Result<(f64, f64)> {
    for (name, v) in [
        ("logp_w_theta", logp_w_theta),
        ("logp_l_theta", logp_l_theta),
        ("logp_w_ref", logp_w_ref),
        ("logp_l_ref", logp_l_ref),
        ("alpha", alpha),
        ("gamma", gamma),
        ("beta", beta),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("smoothed_dpo_scalar {name} = {v}")));
        }
    }
    let co = gamma - alpha;
    let mixed_w_theta = alpha * logp_w_theta + co * logp_l_theta;
    let mixed_l_theta = co * logp_w_theta + alpha * logp_l_theta;
    let mixed_w_ref = alpha * logp_w_ref + co * logp_l_ref;
    let mixed_l_ref = co * logp_w_ref + alpha * logp_l_ref;
    let u_direct = beta * ((mixed_w_theta - mixed_w_ref) - (mixed_l_theta - mixed_l_ref));
    let u_reduced =
        (2.0 * alpha - gamma) * beta * ((logp_w_theta - logp_w_ref) - (logp_l_theta - logp_l_ref));
    Ok((softplus(-u_direct), softplus(-u_reduced)))
}
