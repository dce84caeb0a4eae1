//! Forward noising, DDIM sampling, and DDIM inversion with ReNoise
//! refinement.
//!
//! With `alpha_bar(t)` the cumulative retention and `sigma(t) =
//! sqrt((1 - alpha_bar(t)) / alpha_bar(t))` the noise-to-signal ratio, the
//! probability-flow step between arbitrary timesteps `a -> b` is
//!
//! ```text
//! x_b = sqrt(alpha_bar(b) / alpha_bar(a)) * x_a
//!     + sqrt(alpha_bar(b)) * (sigma(b) - sigma(a)) * eps_hat(x_a, a)
//! ```
//!
//! which is its own algebraic inverse: running `a -> b -> a` with a shared
//! noise estimate recovers `x_a` exactly. Sampling walks a grid downward;
//! inversion walks the same grid upward. Because an upward hop must use the
//! noise estimate at the *source* (earlier) timestep, plain inversion incurs
//! a linearization error; ReNoise refinement re-estimates the noise at the
//! *target* latent and re-applies the hop, a fixed-point iteration on
//!
//! ```text
//! z = scale * x_a + coeff * eps_hat(z, b)
//! ```
//!
//! whose residual shrinks when the iteration contracts. Both the plain and
//! the graph-traced variants share the same coefficients, so they agree
//! bitwise; the traced path exists so gradients can flow through an
//! inversion when a caller asks for that.

use crate::denoiser::{BoundModel, DenoiserModel, Graph, NodeId};
use crate::error::{Error, Result};
use crate::numerics::{NoiseSchedule, Vector};

/// Outcome of an inversion: the recovered latent plus diagnostics.
#[derive(Clone, Debug)]
pub struct InversionResult {
    /// The latent at the requested timestep.
    pub x_tilde: Vector,
    /// Timestep the latent lives at; always the last entry of `grid`.
    pub t: usize,
    /// Timestep grid the inversion walked, `0 = grid[0] < ... = t`.
    pub grid: Vec<usize>,
    /// Fixed-point residual of the final hop before refinement.
    pub residual_before: f64,
    /// Fixed-point residual of the final hop after refinement; equals
    /// `residual_before` when `renoise_iters = 0`.
    pub residual_after: f64,
}

/// `x_t = sqrt(alpha_bar(t)) * x0 + sqrt(1 - alpha_bar(t)) * eps`.
/// `t = 0` returns `x0` exactly.
pub fn forward_noise(
    x0: &Vector,
    eps: &Vector,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    check_t(t, sched, "forward_noise")?;
    eps.ensure_dim(x0.dim(), "forward_noise eps")?;
    x0.ensure_finite("x0")?;
    eps.ensure_finite("eps")?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    x0.affine(libm::sqrt(ab), eps, libm::sqrt(1.0 - ab))
}

/// The noise vector a forward draw must have used to land on `x_t`:
/// `(x_t - sqrt(alpha_bar(t)) * x0) / sqrt(1 - alpha_bar(t))`. Needs `t >= 1`.
pub fn implied_noise(
    x_t: &Vector,
    x0: &Vector,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "implied_noise is undefined at t = 0".to_string(),
        ));
    }
    check_t(t, sched, "implied_noise")?;
    x_t.ensure_dim(x0.dim(), "implied_noise x_t")?;
    x_t.ensure_finite("x_t")?;
    x0.ensure_finite("x0")?;
    let ab = sched.alpha_bar(t);
    let inv = 1.0 / libm::sqrt(1.0 - ab);
    x_t.affine(inv, x0, -libm::sqrt(ab) * inv)
}

/// `(scale, coeff)` of the hop `a -> b` (either direction):
/// `x_b = scale * x_a + coeff * eps_hat`.
pub fn step_coeffs(sched: &NoiseSchedule, a: usize, b: usize) -> (f64, f64) {
    let ab_a = sched.alpha_bar(a);
    let ab_b = sched.alpha_bar(b);
    let scale = libm::sqrt(ab_b / ab_a);
    let coeff = libm::sqrt(ab_b) * (sched.sigma(b) - sched.sigma(a));
    (scale, coeff)
}

/// One deterministic sampling hop `t_from -> t_to`, `t_to < t_from`.
pub fn ddim_step(
    model: &DenoiserModel,
    x_t: &Vector,
    t_from: usize,
    t_to: usize,
    cond: &Vector,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    check_t(t_from, sched, "ddim_step t_from")?;
    if t_from == 0 || t_to >= t_from {
        return Err(Error::TimestepOrder(format!(
            "ddim_step needs 0 <= t_to < t_from, got {t_to} -> {t_from}"
        )));
    }
    let eps = model.eps_predict_guided(x_t, t_from, cond, guidance)?;
    let (scale, coeff) = step_coeffs(sched, t_from, t_to);
    x_t.affine(scale, &eps, coeff)
}

/// Uniformly spaced timestep grid `0 = g[0] < g[1] < ... < g[k] = t` with
/// `k = min(steps, t)` hops. Used ascending by inversion and descending by
/// sampling.
pub fn timestep_grid(t: usize, steps: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::InvalidArgument("grid needs t >= 1".to_string()));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("grid needs steps >= 1".to_string()));
    }
    let k = steps.min(t);
    // Spacing t/k >= 1 makes rounded points strictly increasing.
    Ok((0..=k)
        .map(|i| libm::round(i as f64 * t as f64 / k as f64) as usize)
        .collect())
}

/// Deterministic sampling from `x_start` at `t_start` down to `t = 0` in
/// `min(steps, t_start)` uniform hops.
pub fn ddim_sample_from(
    model: &DenoiserModel,
    x_start: &Vector,
    t_start: usize,
    cond: &Vector,
    steps: usize,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    check_t(t_start, sched, "ddim_sample t_start")?;
    let grid = timestep_grid(t_start, steps)?;
    let mut x = x_start.clone();
    for hop in (1..grid.len()).rev() {
        x = ddim_step(model, &x, grid[hop], grid[hop - 1], cond, guidance, sched)?;
    }
    Ok(x)
}

/// Sampling from pure noise at `t = t_max`.
pub fn ddim_sample(
    model: &DenoiserModel,
    x_t_max: &Vector,
    cond: &Vector,
    steps: usize,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    ddim_sample_from(model, x_t_max, sched.t_max(), cond, steps, guidance, sched)
}

/// Plain DDIM inversion of `x0` up to timestep `t` (no refinement).
pub fn ddim_invert(
    model: &DenoiserModel,
    x0: &Vector,
    t: usize,
    inv_steps: usize,
    cond: &Vector,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<Vector> {
    Ok(renoise_invert(model, x0, t, inv_steps, 0, cond, guidance, sched)?.x_tilde)
}

/// DDIM inversion with ReNoise refinement: every upward hop is first taken
/// explicitly (noise estimated at the source timestep), then re-applied
/// `renoise_iters` times with the noise re-estimated at the target latent.
/// Residuals are measured on the final hop, the one that lands on `t`.
#[allow(clippy::too_many_arguments)]
pub fn renoise_invert(
    model: &DenoiserModel,
    x0: &Vector,
    t: usize,
    inv_steps: usize,
    renoise_iters: usize,
    cond: &Vector,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<InversionResult> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "inversion target must be t >= 1".to_string(),
        ));
    }
    check_t(t, sched, "renoise_invert")?;
    x0.ensure_finite("x0")?;
    let grid = timestep_grid(t, inv_steps)?;
    let mut x = x0.clone();
    let mut residual_before = 0.0;
    let mut residual_after = 0.0;
    for hop in 1..grid.len() {
        let (a, b) = (grid[hop - 1], grid[hop]);
        let (scale, coeff) = step_coeffs(sched, a, b);
        let base = x;
        // Explicit hop: noise estimated at the source.
        let eps_src = model.eps_predict_guided(&base, a, cond, guidance)?;
        let mut z = base.affine(scale, &eps_src, coeff)?;
        // Fixed-point refinement: z <- scale * base + coeff * eps(z, b).
        let mut eps_tgt = model.eps_predict_guided(&z, b, cond, guidance)?;
        let measure = hop == grid.len() - 1;
        if measure {
            residual_before = fixed_point_residual(&z, &base, scale, coeff, &eps_tgt)?;
            residual_after = residual_before;
        }
        for _ in 0..renoise_iters {
            z = base.affine(scale, &eps_tgt, coeff)?;
            eps_tgt = model.eps_predict_guided(&z, b, cond, guidance)?;
            if measure {
                residual_after = fixed_point_residual(&z, &base, scale, coeff, &eps_tgt)?;
            }
        }
        z.ensure_finite("inverted latent")?;
        x = z;
    }
    Ok(InversionResult {
        x_tilde: x,
        t,
        grid,
        residual_before,
        residual_after,
    })
}

fn fixed_point_residual(
    z: &Vector,
    base: &Vector,
    scale: f64,
    coeff: f64,
    eps_at_z: &Vector,
) -> Result<f64> {
    let image = base.affine(scale, eps_at_z, coeff)?;
    Ok(z.sub(&image)?.norm())
}

/// Graph-traced twin of [`renoise_invert`] (latent only, no diagnostics).
/// Values agree bitwise with the plain path; use it when gradients must
/// flow through the inversion.
#[allow(clippy::too_many_arguments)]
pub fn renoise_invert_traced(
    g: &mut Graph,
    bound: &BoundModel,
    x0: NodeId,
    t: usize,
    inv_steps: usize,
    renoise_iters: usize,
    cond: NodeId,
    guidance: f64,
    sched: &NoiseSchedule,
) -> Result<NodeId> {
    if t == 0 || t > sched.t_max() {
        return Err(Error::InvalidArgument(format!(
            "inversion target t = {t} outside 1..={}",
            sched.t_max()
        )));
    }
    let grid = timestep_grid(t, inv_steps)?;
    let mut x = x0;
    for hop in 1..grid.len() {
        let (a, b) = (grid[hop - 1], grid[hop]);
        let (scale, coeff) = step_coeffs(sched, a, b);
        let base = x;
        let eps_src = g.eps_predict_guided(bound, base, a, cond, guidance);
        let mut z = g.affine(base, scale, eps_src, coeff);
        for _ in 0..renoise_iters {
            let eps_tgt = g.eps_predict_guided(bound, z, b, cond, guidance);
            z = g.affine(base, scale, eps_tgt, coeff);
        }
        x = z;
    }
    Ok(x)
}

fn check_t(t: usize, sched: &NoiseSchedule, what: &str) -> Result<()> {
    if t > sched.t_max() {
        return Err(Error::InvalidArgument(format!(
            "{what}: t = {t} exceeds t_max = {}",
            sched.t_max()
        )));
    }
    Ok(())
}
