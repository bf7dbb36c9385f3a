//! C ABI for driving training runs and running trained policies.
//!
//! Every fallible function returns an `Srl4hStatus`. On failure the message
//! is kept per thread and can be copied out with
//! [`srl4h_last_error_message`]. Handles are opaque and must be released
//! with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use srl4h::agent::ActorCritic;
use srl4h::trainer::{load_agent, ExperimentConfig, Trainer};
use srl4h::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Srl4hStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Shape = 4,
    NonFinite = 5,
    Format = 6,
    Io = 7,
    Runtime = 8,
    Panic = 9,
}

/// Training run handle.
pub struct Srl4hTrainer {
    inner: Trainer,
}

/// Inference-only policy handle.
pub struct Srl4hPolicy {
    agent: ActorCritic<f32>,
}

/// Scalar summary of one training iteration. `srl_loss` is NaN when the
/// auxiliary objective did not run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct Srl4hIterationStats {
    pub iteration: u64,
    pub mean_step_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub srl_loss: f64,
    pub mean_kl: f64,
    pub learning_rate: f64,
    pub embedding_std: f64,
    pub skipped_updates: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> Srl4hStatus {
    match e {
        Error::Config { .. } => Srl4hStatus::Config,
        Error::Shape { .. } => Srl4hStatus::Shape,
        Error::NonFinite(_) => Srl4hStatus::NonFinite,
        Error::Format(_) => Srl4hStatus::Format,
        Error::Io { .. } => Srl4hStatus::Io,
        Error::TapeConsumed | Error::Runtime(_) => Srl4hStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (Srl4hStatus, String)>) -> Srl4hStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Srl4hStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            Srl4hStatus::Panic
        }
    }
}

fn lift<T>(r: srl4h::Result<T>) -> Result<T, (Srl4hStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (Srl4hStatus, String)> {
    if p.is_null() {
        Err((Srl4hStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (Srl4hStatus, String)> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (Srl4hStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

/// Null-terminated library version. Static; do not free.
#[no_mangle]
pub extern "C" fn srl4h_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated,
/// always null-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn srl4h_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Build a trainer from a JSON experiment config.
///
/// # Safety
/// `config_json` must be a null-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_new(config_json: *const c_char, out: *mut *mut Srl4hTrainer) -> Srl4hStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = lift(ExperimentConfig::from_json_str(str_arg(config_json, "config_json")?))?;
        let inner = lift(Trainer::new(cfg))?;
        *out = Box::into_raw(Box::new(Srl4hTrainer { inner }));
        Ok(())
    })
}

/// Rebuild a trainer from a config and a checkpoint written by
/// [`srl4h_trainer_save_checkpoint`].
///
/// # Safety
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_resume(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut Srl4hTrainer,
) -> Srl4hStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = lift(ExperimentConfig::from_json_str(str_arg(config_json, "config_json")?))?;
        let path = str_arg(checkpoint_path, "checkpoint_path")?;
        let inner = lift(Trainer::from_checkpoint(cfg, Path::new(path)))?;
        *out = Box::into_raw(Box::new(Srl4hTrainer { inner }));
        Ok(())
    })
}

/// # Safety
/// `trainer` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_free(trainer: *mut Srl4hTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Run one iteration and fill `stats` (may be null).
///
/// # Safety
/// `trainer` must be a live handle; `stats` null or writable.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_step(trainer: *mut Srl4hTrainer, stats: *mut Srl4hIterationStats) -> Srl4hStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let r = lift((*trainer).inner.train_iteration())?;
        if !stats.is_null() {
            *stats = Srl4hIterationStats {
                iteration: r.iteration,
                mean_step_reward: r.mean_step_reward,
                policy_loss: r.policy_loss,
                value_loss: r.value_loss,
                entropy: r.entropy,
                srl_loss: r.srl_loss.unwrap_or(f64::NAN),
                mean_kl: r.mean_kl,
                learning_rate: r.learning_rate,
                embedding_std: r.embedding_std,
                skipped_updates: r.skipped_updates,
            };
        }
        Ok(())
    })
}

/// Completed iterations, or 0 for a null handle.
///
/// # Safety
/// `trainer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_iteration(trainer: *const Srl4hTrainer) -> u64 {
    if trainer.is_null() {
        0
    } else {
        (*trainer).inner.iteration()
    }
}

/// # Safety
/// `trainer` must be a live handle; `path` null-terminated.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_save_checkpoint(trainer: *const Srl4hTrainer, path: *const c_char) -> Srl4hStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let path = str_arg(path, "path")?;
        lift((*trainer).inner.save_checkpoint(Path::new(path)))
    })
}

/// Load the policy part of a checkpoint. Shapes are checked against the
/// networks the config describes.
///
/// # Safety
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn srl4h_policy_load(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut Srl4hPolicy,
) -> Srl4hStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = lift(ExperimentConfig::from_json_str(str_arg(config_json, "config_json")?))?;
        let path = str_arg(checkpoint_path, "checkpoint_path")?;
        let agent = lift(load_agent(&cfg, Path::new(path)))?;
        *out = Box::into_raw(Box::new(Srl4hPolicy { agent }));
        Ok(())
    })
}

/// Policy handle from a live trainer's current parameters.
///
/// # Safety
/// `trainer` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn srl4h_trainer_policy(trainer: *const Srl4hTrainer, out: *mut *mut Srl4hPolicy) -> Srl4hStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        non_null(out, "out")?;
        let agent = (*trainer).inner.agent().clone();
        *out = Box::into_raw(Box::new(Srl4hPolicy { agent }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn srl4h_policy_free(policy: *mut Srl4hPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Width of one observation row, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl4h_policy_obs_dim(policy: *const Srl4hPolicy) -> usize {
    if policy.is_null() {
        0
    } else {
        (*policy).agent.state_dim()
    }
}

/// Width of one action row, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn srl4h_policy_action_dim(policy: *const Srl4hPolicy) -> usize {
    if policy.is_null() {
        0
    } else {
        (*policy).agent.action_dim()
    }
}

/// Mean actions for `rows` row-major observations (privileged channels
/// zeroed). `obs` holds `rows * obs_dim` floats; `actions` receives
/// `rows * action_dim`, and `actions_len` must equal that.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn srl4h_policy_act(
    policy: *const Srl4hPolicy,
    obs: *const f32,
    rows: usize,
    actions: *mut f32,
    actions_len: usize,
) -> Srl4hStatus {
    guard(|| {
        non_null(policy, "policy")?;
        non_null(obs, "obs")?;
        non_null(actions, "actions")?;
        let agent = &(*policy).agent;
        let (d, k) = (agent.state_dim(), agent.action_dim());
        if actions_len != rows * k {
            return lift(Err(Error::shape("actions buffer", &[rows * k], &[actions_len])));
        }
        let x = std::slice::from_raw_parts(obs, rows * d);
        let view = lift(
            ndarray::ArrayView2::from_shape((rows, d), x).map_err(|e| Error::Runtime(e.to_string())),
        )?;
        let (mean, _) = lift(agent.policy_forward(view))?;
        let out = std::slice::from_raw_parts_mut(actions, actions_len);
        for (o, m) in out.iter_mut().zip(mean.iter()) {
            *o = *m;
        }
        Ok(())
    })
}
