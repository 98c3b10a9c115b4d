//! C interface to `risopt`.
//!
//! Objects are opaque heap handles created by `risopt_*_new`/`risopt_*_draw`
//! and released with the matching `_free`. Every fallible call returns a
//! [`RisoptStatus`]; on failure `risopt_last_error` holds a message for the
//! calling thread.
//!
//! # Safety
//!
//! Handle arguments must be NULL or a live pointer obtained from this
//! library and not yet freed. String arguments must be NULL or
//! NUL-terminated. Output buffers must hold at least `len` entries.
//! Handles are not synchronized; share one across threads only for
//! concurrent reads.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use risopt::baselines::{run_baseline, BaselineKind};
use risopt::bench::Scale;
use risopt::model::draw_channels;
use risopt::optimizer::{solve, AlternatingConfig, Objective, OptimizeOutcome};
use risopt::{ChannelSet, Error, SystemConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Infeasible = 4,
    Numerical = 5,
    Convergence = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisoptScale {
    Desk = 0,
    Paper = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisoptObjective {
    EnergyEfficiency = 0,
    SumRate = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisoptBaseline {
    Fixed = 0,
    AllRandom = 1,
    SameRandom = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RisoptComplex {
    pub re: f64,
    pub im: f64,
}

/// System parameters plus solver settings.
pub struct RisoptConfig {
    system: SystemConfig,
    alt: AlternatingConfig,
}

/// One channel realization.
pub struct RisoptChannels(ChannelSet);

/// Optimized beams and phases with their figures of merit.
pub struct RisoptResult(OptimizeOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RisoptStatus {
    match e {
        Error::Config(_) => RisoptStatus::Config,
        Error::Infeasible(_) => RisoptStatus::Infeasible,
        Error::Convergence { .. } => RisoptStatus::Convergence,
        Error::Dimension(_) | Error::Shape(_) => RisoptStatus::InvalidArgument,
        Error::Stage { source, .. } => status_of(source),
        _ => RisoptStatus::Numerical,
    }
}

fn fail(status: RisoptStatus, msg: impl Into<String>) -> RisoptStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), RisoptStatus>) -> RisoptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RisoptStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RisoptStatus::Panic, msg)
        }
    }
}

fn lib_err(e: Error) -> RisoptStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, RisoptStatus> {
    p.as_ref()
        .ok_or_else(|| fail(RisoptStatus::NullPointer, "null handle"))
}

unsafe fn deref_mut<'a, T>(p: *mut T) -> Result<&'a mut T, RisoptStatus> {
    p.as_mut()
        .ok_or_else(|| fail(RisoptStatus::NullPointer, "null handle"))
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, RisoptStatus> {
    if p.is_null() {
        return Err(fail(RisoptStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RisoptStatus::InvalidArgument, "string is not UTF-8"))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn risopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a configuration with the preset dimensions of `scale`.
#[no_mangle]
pub unsafe extern "C" fn risopt_config_new(scale: RisoptScale, out: *mut *mut RisoptConfig) -> RisoptStatus {
    guard(|| {
        let out = deref_mut(out)?;
        let scale = match scale {
            RisoptScale::Desk => Scale::Desk,
            RisoptScale::Paper => Scale::Paper,
        };
        *out = Box::into_raw(Box::new(RisoptConfig {
            system: scale.base_config(),
            alt: AlternatingConfig::default(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn risopt_config_free(cfg: *mut RisoptConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one system parameter by name, using the same keys as the CLI
/// config file (`m`, `k`, `n`, `p_max_db`, `sigma2`, `r`, `rng_seed`, ...).
/// The configuration is left unchanged on error.
#[no_mangle]
pub unsafe extern "C" fn risopt_config_set(
    cfg: *mut RisoptConfig,
    key: *const c_char,
    value: *const c_char,
) -> RisoptStatus {
    guard(|| {
        let cfg = deref_mut(cfg)?;
        let (key, value) = (c_str(key)?, c_str(value)?);
        if key.contains(['=', '\n', '#']) || value.contains(['\n', '#']) {
            return Err(fail(RisoptStatus::InvalidArgument, "malformed key or value"));
        }
        let mut next = cfg.system.clone();
        next.apply_kv(&format!("{key} = {value}")).map_err(lib_err)?;
        next.validate().map_err(lib_err)?;
        cfg.system = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn risopt_config_set_objective(cfg: *mut RisoptConfig, objective: RisoptObjective) -> RisoptStatus {
    guard(|| {
        deref_mut(cfg)?.alt.objective = match objective {
            RisoptObjective::EnergyEfficiency => Objective::EnergyEfficiency,
            RisoptObjective::SumRate => Objective::SumRate,
        };
        Ok(())
    })
}

/// Outer iteration cap; must be positive.
#[no_mangle]
pub unsafe extern "C" fn risopt_config_set_max_iterations(cfg: *mut RisoptConfig, n_max: usize) -> RisoptStatus {
    guard(|| {
        let cfg = deref_mut(cfg)?;
        if n_max == 0 {
            return Err(fail(RisoptStatus::Config, "iteration cap must be positive"));
        }
        cfg.alt.n_max = n_max;
        Ok(())
    })
}

/// Antennas, users and elements per surface. Any output may be NULL.
#[no_mangle]
pub unsafe extern "C" fn risopt_config_dims(
    cfg: *const RisoptConfig,
    m: *mut usize,
    k: *mut usize,
    n: *mut usize,
) -> RisoptStatus {
    guard(|| {
        let s = &deref(cfg)?.system;
        for (p, v) in [(m, s.m), (k, s.k), (n, s.n)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Draws channel realization `draw_index` from the configured seed.
#[no_mangle]
pub unsafe extern "C" fn risopt_channels_draw(
    cfg: *const RisoptConfig,
    draw_index: u64,
    out: *mut *mut RisoptChannels,
) -> RisoptStatus {
    guard(|| {
        let cfg = deref(cfg)?;
        let out = deref_mut(out)?;
        *out = Box::into_raw(Box::new(RisoptChannels(draw_channels(&cfg.system, draw_index))));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn risopt_channels_free(ch: *mut RisoptChannels) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

unsafe fn check_dims(cfg: &RisoptConfig, ch: &RisoptChannels) -> Result<(), RisoptStatus> {
    let (s, c) = (&cfg.system, &ch.0);
    if (s.m, s.k, s.n) != (c.antennas(), c.users(), c.elements()) {
        return Err(fail(
            RisoptStatus::InvalidArgument,
            "channels were drawn for different dimensions",
        ));
    }
    Ok(())
}

/// Runs the alternating optimizer.
#[no_mangle]
pub unsafe extern "C" fn risopt_optimize(
    cfg: *const RisoptConfig,
    ch: *const RisoptChannels,
    out: *mut *mut RisoptResult,
) -> RisoptStatus {
    guard(|| {
        let (cfg, ch, out) = (deref(cfg)?, deref(ch)?, deref_mut(out)?);
        check_dims(cfg, ch)?;
        let res = solve(&ch.0, &cfg.system, &cfg.alt).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RisoptResult(res)));
        Ok(())
    })
}

/// Beamforming-only optimization with baseline phases drawn from `seed`.
#[no_mangle]
pub unsafe extern "C" fn risopt_baseline(
    cfg: *const RisoptConfig,
    ch: *const RisoptChannels,
    kind: RisoptBaseline,
    seed: u64,
    out: *mut *mut RisoptResult,
) -> RisoptStatus {
    guard(|| {
        let (cfg, ch, out) = (deref(cfg)?, deref(ch)?, deref_mut(out)?);
        check_dims(cfg, ch)?;
        let kind = match kind {
            RisoptBaseline::Fixed => BaselineKind::FixedPhase,
            RisoptBaseline::AllRandom => BaselineKind::AllRandom,
            RisoptBaseline::SameRandom => BaselineKind::SameRandom,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let res = run_baseline(kind, &ch.0, &cfg.system, &cfg.alt, &mut rng).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RisoptResult(res)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn risopt_result_free(res: *mut RisoptResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Sum rate in bit/s/Hz; NaN for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn risopt_result_sum_rate(res: *const RisoptResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.evaluation.report.sum_rate)
}

/// Energy efficiency in bit/s/Hz/W; NaN for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn risopt_result_ee(res: *const RisoptResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.evaluation.ee)
}

/// Transmit power of the returned beams; NaN for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn risopt_result_transmit_power(res: *const RisoptResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.beams.transmit_power())
}

/// Outer iterations run; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn risopt_result_iterations(res: *const RisoptResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.trace.iterations())
}

unsafe fn copy_out(src: &[RisoptComplex], out: *mut RisoptComplex, len: usize) -> Result<(), RisoptStatus> {
    if out.is_null() {
        return Err(fail(RisoptStatus::NullPointer, "null output buffer"));
    }
    if len < src.len() {
        return Err(fail(
            RisoptStatus::BufferTooSmall,
            format!("need {} entries, got {len}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Copies the 2N phases, first surface then second. `len` is the buffer
/// length in entries.
#[no_mangle]
pub unsafe extern "C" fn risopt_result_copy_phases(
    res: *const RisoptResult,
    out: *mut RisoptComplex,
    len: usize,
) -> RisoptStatus {
    guard(|| {
        let res = deref(res)?;
        let v: Vec<RisoptComplex> = res
            .0
            .phases
            .stacked()
            .iter()
            .map(|z| RisoptComplex { re: z.re, im: z.im })
            .collect();
        copy_out(&v, out, len)
    })
}

/// Copies both M×K beam matrices column-major, first surface then second
/// (2MK entries).
#[no_mangle]
pub unsafe extern "C" fn risopt_result_copy_beams(
    res: *const RisoptResult,
    out: *mut RisoptComplex,
    len: usize,
) -> RisoptStatus {
    guard(|| {
        let b = &deref(res)?.0.beams;
        let v: Vec<RisoptComplex> = b
            .v1
            .iter()
            .chain(b.v2.iter())
            .map(|z| RisoptComplex { re: z.re, im: z.im })
            .collect();
        copy_out(&v, out, len)
    })
}
