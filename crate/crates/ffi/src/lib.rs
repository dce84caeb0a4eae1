//! C ABI for the `smpo` crate: noise schedules, denoiser checkpoints, DDIM
//! sampling and inversion, and the smoothed-label scalar math, all behind
//! opaque handles and integer status codes.
//!
//! Conventions, shared by every function here:
//!
//! - Fallible calls return [`SmpoStatus`]. On any non-OK status a
//!   human-readable message is stored per thread and can be read with
//!   [`smpo_last_error_message`] until the next failing call on that thread.
//! - Out parameters are written only when the call returns
//!   `SMPO_STATUS_OK`; on failure they are left untouched.
//! - Handles are allocated by this library and released by the matching
//!   `*_free` function, which ignores `NULL`. Handles are not thread-safe;
//!   share them across threads only behind external synchronization.
//! - Buffers are caller-allocated. Length arguments are validated against
//!   the handle's dimensions, but the caller remains responsible for the
//!   buffers actually being that long.
//!
//! The companion header `include/smpo.h` is regenerated by the build script
//! and committed alongside the source.

// The safety contract is the same for every function and is spelled out
// above; per-function `# Safety` sections would only repeat it and would be
// copied verbatim into the generated C header.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use smpo::denoiser::{Activation, DenoiserModel, ModelArch};
use smpo::diffusion::{ddim_sample, forward_noise, implied_noise, renoise_invert};
use smpo::numerics::{make_schedule, NoiseSchedule, ScheduleKind, SeededRng, Vector};
use smpo::objectives::smoothed_dpo_scalar;
use smpo::preference::{normalize_reward, weight_ratio, RewardStats, SmoothedLabel};
use smpo::Error;

/// Status code returned by every fallible function in this ABI.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmpoStatus {
    /// The call succeeded and all out parameters were written.
    Ok = 0,
    /// A runtime failure: I/O, a malformed file, degenerate statistics, or
    /// a non-finite intermediate value.
    Failure = 1,
    /// An argument fell outside its documented range or two dimensions did
    /// not line up.
    InvalidArgument = 2,
    /// An iterative computation produced non-finite values.
    Divergence = 3,
    /// A required pointer argument was `NULL`.
    NullPointer = 4,
    /// The library panicked internally; treat the handle as poisoned.
    Panic = 5,
}

/// Noise-schedule family, mirroring the core crate's schedule kinds.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmpoScheduleKind {
    /// Betas interpolate linearly between `beta_min` and `beta_max`.
    LinearBeta = 0,
    /// Squared-cosine cumulative retention; ignores the beta arguments.
    Cosine = 1,
}

/// Hidden-layer nonlinearity of the denoiser MLP.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmpoActivation {
    Tanh = 0,
    Silu = 1,
}

/// Opaque handle to a validated noise schedule.
pub struct SmpoSchedule {
    inner: NoiseSchedule,
}

/// Opaque handle to a denoiser model bundled with the schedule it was
/// trained (or initialized) against.
pub struct SmpoModel {
    model: DenoiserModel,
    sched: NoiseSchedule,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg)
        .unwrap_or_else(|_| CString::new("error message contained an interior NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(err: Error) -> SmpoStatus {
    let status = match err.exit_code() {
        2 => SmpoStatus::InvalidArgument,
        3 => SmpoStatus::Divergence,
        _ => SmpoStatus::Failure,
    };
    set_error(err.to_string());
    status
}

fn fail_invalid(msg: String) -> SmpoStatus {
    set_error(msg);
    SmpoStatus::InvalidArgument
}

fn fail_null(what: &str) -> SmpoStatus {
    set_error(format!("null pointer: {what}"));
    SmpoStatus::NullPointer
}

/// Runs a body, converting panics into `Panic` instead of letting them
/// unwind across the C boundary. The wrapped state is plain data, so a
/// caught panic cannot leave a handle half-mutated.
fn guarded(f: impl FnOnce() -> Result<(), SmpoStatus>) -> SmpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmpoStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            SmpoStatus::Panic
        }
    }
}

unsafe fn handle_ref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, SmpoStatus> {
    unsafe { ptr.as_ref() }.ok_or_else(|| fail_null(what))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, SmpoStatus> {
    unsafe { ptr.as_mut() }.ok_or_else(|| fail_null(what))
}

unsafe fn vector_arg(ptr: *const f64, len: usize, what: &str) -> Result<Vector, SmpoStatus> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    Ok(Vector::from_vec(
        unsafe { std::slice::from_raw_parts(ptr, len) }.to_vec(),
    ))
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, SmpoStatus> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail_invalid(format!("{what} is not valid UTF-8")))
}

/// Copies a vector into a caller buffer already checked for null and length.
unsafe fn write_vector(out: *mut f64, v: &Vector) {
    unsafe { std::ptr::copy_nonoverlapping(v.as_slice().as_ptr(), out, v.dim()) };
}

fn check_len(got: usize, expected: usize, what: &str) -> Result<(), SmpoStatus> {
    if got != expected {
        return Err(fail_invalid(format!(
            "{what} has length {got}, the model expects {expected}"
        )));
    }
    Ok(())
}

impl From<SmpoScheduleKind> for ScheduleKind {
    fn from(kind: SmpoScheduleKind) -> ScheduleKind {
        match kind {
            SmpoScheduleKind::LinearBeta => ScheduleKind::LinearBeta,
            SmpoScheduleKind::Cosine => ScheduleKind::Cosine,
        }
    }
}

impl From<SmpoActivation> for Activation {
    fn from(act: SmpoActivation) -> Activation {
        match act {
            SmpoActivation::Tanh => Activation::Tanh,
            SmpoActivation::Silu => Activation::Silu,
        }
    }
}

/// Library version as a static NUL-terminated string; never `NULL`.
#[no_mangle]
pub extern "C" fn smpo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on the calling thread, or `NULL` if
/// no call has failed yet. The pointer stays valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn smpo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Builds a noise schedule over timesteps `1..=t_max`. `beta_min` and
/// `beta_max` only apply to the linear-beta family.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_new(
    kind: SmpoScheduleKind,
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
    out: *mut *mut SmpoSchedule,
) -> SmpoStatus {
    guarded(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let inner = make_schedule(kind.into(), t_max, beta_min, beta_max).map_err(fail)?;
        *out = Box::into_raw(Box::new(SmpoSchedule { inner }));
        Ok(())
    })
}

/// Releases a schedule handle; `NULL` is ignored.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_free(sched: *mut SmpoSchedule) {
    if !sched.is_null() {
        drop(unsafe { Box::from_raw(sched) });
    }
}

/// Number of timesteps in the schedule; 0 if `sched` is `NULL`.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_t_max(sched: *const SmpoSchedule) -> usize {
    unsafe { sched.as_ref() }.map_or(0, |s| s.inner.t_max())
}

/// Per-step retention `alpha(t)`, defined for `t` in `1..=t_max`.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_alpha(
    sched: *const SmpoSchedule,
    t: usize,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let sched = unsafe { handle_ref(sched, "sched") }?;
        let out = unsafe { out_ref(out, "out") }?;
        if t == 0 || t > sched.inner.t_max() {
            return Err(fail_invalid(format!(
                "alpha(t) needs 1 <= t <= {}, got {t}",
                sched.inner.t_max()
            )));
        }
        *out = sched.inner.alpha(t);
        Ok(())
    })
}

/// Cumulative retention `alpha_bar(t)`, defined for `t` in `0..=t_max` with
/// `alpha_bar(0) = 1` exactly.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_alpha_bar(
    sched: *const SmpoSchedule,
    t: usize,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let sched = unsafe { handle_ref(sched, "sched") }?;
        let out = unsafe { out_ref(out, "out") }?;
        if t > sched.inner.t_max() {
            return Err(fail_invalid(format!(
                "alpha_bar(t) needs t <= {}, got {t}",
                sched.inner.t_max()
            )));
        }
        *out = sched.inner.alpha_bar(t);
        Ok(())
    })
}

/// Noise-to-signal ratio `sigma(t) = sqrt((1 - alpha_bar) / alpha_bar)`,
/// defined for `t` in `0..=t_max` with `sigma(0) = 0`.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_sigma(
    sched: *const SmpoSchedule,
    t: usize,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let sched = unsafe { handle_ref(sched, "sched") }?;
        let out = unsafe { out_ref(out, "out") }?;
        if t > sched.inner.t_max() {
            return Err(fail_invalid(format!(
                "sigma(t) needs t <= {}, got {t}",
                sched.inner.t_max()
            )));
        }
        *out = sched.inner.sigma(t);
        Ok(())
    })
}

/// Forward noising `x_t = sqrt(alpha_bar(t)) x0 + sqrt(1 - alpha_bar(t)) eps`.
/// `x0`, `eps`, and `out_x_t` all have `dim` entries; `t = 0` copies `x0`.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_forward_noise(
    sched: *const SmpoSchedule,
    x0: *const f64,
    eps: *const f64,
    dim: usize,
    t: usize,
    out_x_t: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let sched = unsafe { handle_ref(sched, "sched") }?;
        let x0 = unsafe { vector_arg(x0, dim, "x0") }?;
        let eps = unsafe { vector_arg(eps, dim, "eps") }?;
        if out_x_t.is_null() {
            return Err(fail_null("out_x_t"));
        }
        let x_t = forward_noise(&x0, &eps, t, &sched.inner).map_err(fail)?;
        unsafe { write_vector(out_x_t, &x_t) };
        Ok(())
    })
}

/// The noise a forward draw must have used to land on `x_t`:
/// `(x_t - sqrt(alpha_bar(t)) x0) / sqrt(1 - alpha_bar(t))`. Needs `t >= 1`.
#[no_mangle]
pub unsafe extern "C" fn smpo_schedule_implied_noise(
    sched: *const SmpoSchedule,
    x_t: *const f64,
    x0: *const f64,
    dim: usize,
    t: usize,
    out_eps: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let sched = unsafe { handle_ref(sched, "sched") }?;
        let x_t = unsafe { vector_arg(x_t, dim, "x_t") }?;
        let x0 = unsafe { vector_arg(x0, dim, "x0") }?;
        if out_eps.is_null() {
            return Err(fail_null("out_eps"));
        }
        let eps = implied_noise(&x_t, &x0, t, &sched.inner).map_err(fail)?;
        unsafe { write_vector(out_eps, &eps) };
        Ok(())
    })
}

/// Initializes a fresh denoiser with the given architecture and schedule.
/// Weights are drawn deterministically from `seed`; `t_embed_dim` must be
/// even. The schedule arguments follow `smpo_schedule_new`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn smpo_model_init(
    data_dim: usize,
    cond_dim: usize,
    hidden_dim: usize,
    depth: usize,
    t_embed_dim: usize,
    activation: SmpoActivation,
    kind: SmpoScheduleKind,
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
    seed: u64,
    out: *mut *mut SmpoModel,
) -> SmpoStatus {
    guarded(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let arch = ModelArch {
            data_dim,
            cond_dim,
            hidden_dim,
            depth,
            t_embed_dim,
            activation: activation.into(),
        };
        let sched = make_schedule(kind.into(), t_max, beta_min, beta_max).map_err(fail)?;
        let model = DenoiserModel::init(arch, &SeededRng::new(seed)).map_err(fail)?;
        *out = Box::into_raw(Box::new(SmpoModel { model, sched }));
        Ok(())
    })
}

/// Loads a checkpoint written by `smpo_model_save` or by the `smpo`
/// command-line tool; the stored schedule is rebuilt alongside the weights.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_load(
    path: *const c_char,
    out: *mut *mut SmpoModel,
) -> SmpoStatus {
    guarded(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let (model, spec) = DenoiserModel::load(Path::new(path)).map_err(fail)?;
        let sched = spec.build().map_err(fail)?;
        *out = Box::into_raw(Box::new(SmpoModel { model, sched }));
        Ok(())
    })
}

/// Writes the model and its schedule to a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_save(
    model: *const SmpoModel,
    path: *const c_char,
) -> SmpoStatus {
    guarded(|| {
        let handle = unsafe { handle_ref(model, "model") }?;
        let path = unsafe { str_arg(path, "path") }?;
        handle
            .model
            .save(Path::new(path), handle.sched.spec())
            .map_err(fail)
    })
}

/// Releases a model handle; `NULL` is ignored.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_free(model: *mut SmpoModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Sample-space dimension of the model; 0 if `model` is `NULL`.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_data_dim(model: *const SmpoModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.arch().data_dim)
}

/// Condition dimension of the model; 0 if `model` is `NULL`.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_cond_dim(model: *const SmpoModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.arch().cond_dim)
}

/// Horizon of the model's schedule; 0 if `model` is `NULL`.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_t_max(model: *const SmpoModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.sched.t_max())
}

/// Total trainable parameter count; 0 if `model` is `NULL`.
#[no_mangle]
pub unsafe extern "C" fn smpo_model_param_count(model: *const SmpoModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.param_count())
}

/// Classifier-free guided noise prediction at `(x_t, t, cond)`. `x_t` and
/// `out_eps` have `dim = data_dim` entries, `cond` has `cond_dim`;
/// `guidance = 1` is the plain conditional prediction.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn smpo_model_eps_predict(
    model: *const SmpoModel,
    x_t: *const f64,
    dim: usize,
    t: usize,
    cond: *const f64,
    cond_dim: usize,
    guidance: f64,
    out_eps: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let handle = unsafe { handle_ref(model, "model") }?;
        check_len(dim, handle.model.arch().data_dim, "x_t")?;
        check_len(cond_dim, handle.model.arch().cond_dim, "cond")?;
        let x_t = unsafe { vector_arg(x_t, dim, "x_t") }?;
        let cond = unsafe { vector_arg(cond, cond_dim, "cond") }?;
        if out_eps.is_null() {
            return Err(fail_null("out_eps"));
        }
        if t == 0 || t > handle.sched.t_max() {
            return Err(fail_invalid(format!(
                "eps prediction needs 1 <= t <= {}, got {t}",
                handle.sched.t_max()
            )));
        }
        let eps = handle
            .model
            .eps_predict_guided(&x_t, t, &cond, guidance)
            .map_err(fail)?;
        unsafe { write_vector(out_eps, &eps) };
        Ok(())
    })
}

/// Deterministic DDIM draw: starts from the seeded Gaussian at `t_max` and
/// walks `steps` hops down to `t = 0`. `out_x0` has `data_dim` entries; the
/// same seed always yields the same sample.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn smpo_model_sample(
    model: *const SmpoModel,
    cond: *const f64,
    cond_dim: usize,
    steps: usize,
    guidance: f64,
    seed: u64,
    out_x0: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let handle = unsafe { handle_ref(model, "model") }?;
        check_len(cond_dim, handle.model.arch().cond_dim, "cond")?;
        let cond = unsafe { vector_arg(cond, cond_dim, "cond") }?;
        if out_x0.is_null() {
            return Err(fail_null("out_x0"));
        }
        let mut rng = SeededRng::new(seed);
        let x_start = rng.gaussian(handle.model.arch().data_dim).map_err(fail)?;
        let x0 = ddim_sample(&handle.model, &x_start, &cond, steps, guidance, &handle.sched)
            .map_err(fail)?;
        unsafe { write_vector(out_x0, &x0) };
        Ok(())
    })
}

/// DDIM inversion of `x0` up to timestep `t` with ReNoise refinement:
/// every upward hop is taken explicitly and then re-applied
/// `renoise_iters` times with the noise re-estimated at the target latent
/// (`renoise_iters = 0` is plain DDIM inversion). `out_x_t` has `data_dim`
/// entries; `out_residual_before` / `out_residual_after` receive the
/// fixed-point residual of the final hop and may each be `NULL` when the
/// caller does not want them.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn smpo_model_invert(
    model: *const SmpoModel,
    x0: *const f64,
    dim: usize,
    cond: *const f64,
    cond_dim: usize,
    t: usize,
    inv_steps: usize,
    renoise_iters: usize,
    guidance: f64,
    out_x_t: *mut f64,
    out_residual_before: *mut f64,
    out_residual_after: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let handle = unsafe { handle_ref(model, "model") }?;
        check_len(dim, handle.model.arch().data_dim, "x0")?;
        check_len(cond_dim, handle.model.arch().cond_dim, "cond")?;
        let x0 = unsafe { vector_arg(x0, dim, "x0") }?;
        let cond = unsafe { vector_arg(cond, cond_dim, "cond") }?;
        if out_x_t.is_null() {
            return Err(fail_null("out_x_t"));
        }
        let inv = renoise_invert(
            &handle.model,
            &x0,
            t,
            inv_steps,
            renoise_iters,
            &cond,
            guidance,
            &handle.sched,
        )
        .map_err(fail)?;
        unsafe { write_vector(out_x_t, &inv.x_tilde) };
        if let Some(slot) = unsafe { out_residual_before.as_mut() } {
            *slot = inv.residual_before;
        }
        if let Some(slot) = unsafe { out_residual_after.as_mut() } {
            *slot = inv.residual_after;
        }
        Ok(())
    })
}

/// Normalizes one reward against pool extremes: `(r - max) / (max - min)`,
/// in `[-1, 0]` for any reward inside the pool. Fails when the pool is
/// degenerate (`max <= min`).
#[no_mangle]
pub unsafe extern "C" fn smpo_normalize_reward(
    reward: f64,
    pool_min: f64,
    pool_max: f64,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let stats = RewardStats {
            max: pool_max,
            min: pool_min,
            count: 2,
        };
        stats.validate().map_err(fail)?;
        *out = normalize_reward(reward, &stats).map_err(fail)?;
        Ok(())
    })
}

/// Two-way softmax weight of the winner from normalized rewards, i.e.
/// `sigmoid(rw_norm - rl_norm)`. Both inputs must lie in `[-1, 0]`.
#[no_mangle]
pub unsafe extern "C" fn smpo_weight_ratio(
    rw_norm: f64,
    rl_norm: f64,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let out = unsafe { out_ref(out, "out") }?;
        *out = weight_ratio(rw_norm, rl_norm).map_err(fail)?;
        Ok(())
    })
}

/// Effective preference coefficient `gamma * (2 ratio - 1)` of a stored
/// label; zero exactly when the pair's rewards were equal. Needs `ratio`
/// in `(0, 1)` and `gamma > 0`.
#[no_mangle]
pub unsafe extern "C" fn smpo_label_coefficient(
    ratio: f64,
    gamma: f64,
    out: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let label = SmoothedLabel { ratio, gamma };
        label.validate().map_err(fail)?;
        *out = label.coefficient();
        Ok(())
    })
}

/// Smoothed pairwise loss from per-sample log densities, evaluated two
/// equivalent ways. `out_direct` mixes winner/loser densities with weights
/// `alpha` and `gamma - alpha` before the pairwise loss; `out_reduced`
/// scales the unmixed margin by `2 alpha - gamma`. The two agree to
/// floating-point error; either out pointer may be `NULL` if only one form
/// is wanted.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn smpo_smoothed_pair_loss(
    logp_w_theta: f64,
    logp_l_theta: f64,
    logp_w_ref: f64,
    logp_l_ref: f64,
    alpha: f64,
    gamma: f64,
    beta: f64,
    out_direct: *mut f64,
    out_reduced: *mut f64,
) -> SmpoStatus {
    guarded(|| {
        if out_direct.is_null() && out_reduced.is_null() {
            return Err(fail_null("out_direct and out_reduced"));
        }
        let (direct, reduced) = smoothed_dpo_scalar(
            logp_w_theta,
            logp_l_theta,
            logp_w_ref,
            logp_l_ref,
            alpha,
            gamma,
            beta,
        )
        .map_err(fail)?;
        if let Some(slot) = unsafe { out_direct.as_mut() } {
            *slot = direct;
        }
        if let Some(slot) = unsafe { out_reduced.as_mut() } {
            *slot = reduced;
        }
        Ok(())
    })
}
