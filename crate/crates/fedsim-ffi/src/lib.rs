//! C ABI for the fedsim simulator.
//!
//! Conventions: handle-returning functions give back NULL on failure and
//! status-returning functions a non-zero `fedsim_status`; in both cases
//! `fedsim_last_error_message` describes the failure (per thread, valid until
//! the next failing call on that thread). Strings returned as `char *` are
//! owned by the caller and must be released with `fedsim_string_free`;
//! handles must be released with their matching `_free` function.
//!
//! The generated header lands in `include/fedsim.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::c_char;

use fedsim::experiment::{self, ExperimentConfig};
use fedsim::spatial::{self, Labeling, SpatialPartition, WorldConfig};

/// Result codes; mirrors the CLI exit codes for config and runtime errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsimStatus {
    Ok = 0,
    ConfigError = 1,
    RuntimeError = 2,
    NullArgument = 3,
    InvalidUtf8 = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &fedsim::Error) -> FedsimStatus {
    match err.exit_code() {
        1 => FedsimStatus::ConfigError,
        _ => FedsimStatus::RuntimeError,
    }
}

/// Runs `f` behind a panic guard; a panic becomes `fallback` plus an error
/// message instead of unwinding across the FFI boundary.
fn guarded<T>(fallback: T, f: impl FnOnce() -> T) -> T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(value) => value,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            fallback
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string valid for the duration of
/// the call.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, FedsimStatus> {
    if ptr.is_null() {
        set_error("null argument".to_string());
        return Err(FedsimStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".to_string());
        FedsimStatus::InvalidUtf8
    })
}

/// Message of the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |msg| msg.as_ptr()))
}

/// Crate version as a static string; never freed.
#[no_mangle]
pub extern "C" fn fedsim_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by a fedsim function
/// documented as caller-owned, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opaque spatial partition handle.
pub struct FedsimPartition(SpatialPartition);

fn parse_labeling(text: &str) -> Result<Labeling, FedsimStatus> {
    match text {
        "iid" => Ok(Labeling::Iid),
        "region" => Ok(Labeling::Region),
        other => {
            set_error(format!("unknown labeling '{other}' (expected \"iid\" or \"region\")"));
            Err(FedsimStatus::ConfigError)
        }
    }
}

/// Generates a world from a JSON world config (`side_length`,
/// `sensing_radius`, `intensity`, `num_ues`, `num_classes`, `seed`) and a
/// labeling name ("iid" or "region"). Returns NULL on error.
///
/// # Safety
/// Both arguments must be NULL or NUL-terminated strings valid for the call.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_generate(
    world_json: *const c_char,
    labeling: *const c_char,
) -> *mut FedsimPartition {
    guarded(std::ptr::null_mut(), || {
        let world_json = match utf8_arg(world_json) {
            Ok(text) => text,
            Err(_) => return std::ptr::null_mut(),
        };
        let labeling = match utf8_arg(labeling).and_then(parse_labeling) {
            Ok(labeling) => labeling,
            Err(_) => return std::ptr::null_mut(),
        };
        let config: WorldConfig = match serde_json::from_str(world_json) {
            Ok(config) => config,
            Err(err) => {
                set_error(format!("world config: {err}"));
                return std::ptr::null_mut();
            }
        };
        match SpatialPartition::generate(&config, labeling) {
            Ok(partition) => Box::into_raw(Box::new(FedsimPartition(partition))),
            Err(err) => {
                set_error(err.to_string());
                std::ptr::null_mut()
            }
        }
    })
}

/// Loads a partition from a JSON file written by `fedsim_partition_save` or
/// the CLI. Returns NULL on error.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_load(path: *const c_char) -> *mut FedsimPartition {
    guarded(std::ptr::null_mut(), || {
        let path = match utf8_arg(path) {
            Ok(path) => path,
            Err(_) => return std::ptr::null_mut(),
        };
        match SpatialPartition::load(Path::new(path)) {
            Ok(partition) => Box::into_raw(Box::new(FedsimPartition(partition))),
            Err(err) => {
                set_error(err.to_string());
                std::ptr::null_mut()
            }
        }
    })
}

/// # Safety
/// `partition` must be a live handle from this library; `path` a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_save(
    partition: *const FedsimPartition,
    path: *const c_char,
) -> FedsimStatus {
    guarded(FedsimStatus::Panic, || {
        if partition.is_null() {
            set_error("null partition handle".to_string());
            return FedsimStatus::NullArgument;
        }
        let path = match utf8_arg(path) {
            Ok(path) => path,
            Err(status) => return status,
        };
        match (*partition).0.save(Path::new(path)) {
            Ok(()) => FedsimStatus::Ok,
            Err(err) => {
                set_error(err.to_string());
                status_of(&err)
            }
        }
    })
}

/// Serializes the partition to JSON; caller owns the string
/// (`fedsim_string_free`). Returns NULL on error.
///
/// # Safety
/// `partition` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_to_json(
    partition: *const FedsimPartition,
) -> *mut c_char {
    guarded(std::ptr::null_mut(), || {
        if partition.is_null() {
            set_error("null partition handle".to_string());
            return std::ptr::null_mut();
        }
        match (*partition).0.to_json() {
            Ok(json) => CString::new(json)
                .map_or(std::ptr::null_mut(), CString::into_raw),
            Err(err) => {
                set_error(err.to_string());
                std::ptr::null_mut()
            }
        }
    })
}

/// Number of UEs; 0 for a NULL handle.
///
/// # Safety
/// `partition` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_num_ues(partition: *const FedsimPartition) -> u64 {
    if partition.is_null() {
        return 0;
    }
    (*partition).0.world.num_ues as u64
}

/// Number of data points; 0 for a NULL handle.
///
/// # Safety
/// `partition` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_num_points(partition: *const FedsimPartition) -> u64 {
    if partition.is_null() {
        return 0;
    }
    (*partition).0.points.len() as u64
}

/// Captured sample count of one UE (its local dataset size); -1 on a NULL
/// handle or out-of-range index.
///
/// # Safety
/// `partition` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_capture_count(
    partition: *const FedsimPartition,
    ue: u64,
) -> i64 {
    if partition.is_null() {
        return -1;
    }
    let partition = &(*partition).0;
    if ue as usize >= partition.capture_lists.len() {
        set_error(format!("UE index {ue} out of range"));
        return -1;
    }
    partition.capture_count(ue as usize) as i64
}

/// Releases a partition handle.
///
/// # Safety
/// `partition` must be NULL or a live handle from this library, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fedsim_partition_free(partition: *mut FedsimPartition) {
    if !partition.is_null() {
        drop(Box::from_raw(partition));
    }
}

/// Expected per-UE sample count `lambda * pi * R^2`.
#[no_mangle]
pub extern "C" fn fedsim_expected_samples(intensity: f64, radius: f64) -> f64 {
    spatial::expected_samples(intensity, radius)
}

/// Intersection area of two radius-`radius` discs with centers `distance`
/// apart.
#[no_mangle]
pub extern "C" fn fedsim_circle_intersection_area(distance: f64, radius: f64) -> f64 {
    spatial::circle_intersection_area(distance, radius)
}

fn load_config(config_json: &str) -> Result<ExperimentConfig, FedsimStatus> {
    ExperimentConfig::from_json(config_json).map_err(|err| {
        set_error(err.to_string());
        status_of(&err)
    })
}

/// Writes the partition JSON and summary of an experiment config (the CLI's
/// `partition` subcommand).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn fedsim_experiment_partition(config_json: *const c_char) -> FedsimStatus {
    guarded(FedsimStatus::Panic, || {
        let config_json = match utf8_arg(config_json) {
            Ok(text) => text,
            Err(status) => return status,
        };
        let config = match load_config(config_json) {
            Ok(config) => config,
            Err(status) => return status,
        };
        match experiment::run_partition(&config) {
            Ok(_) => FedsimStatus::Ok,
            Err(err) => {
                set_error(err.to_string());
                status_of(&err)
            }
        }
    })
}

/// Runs every policy x repeat arm of an experiment config, writing metric
/// CSVs, selection traces, and checkpoints to the config's output directory
/// (the CLI's `train` subcommand). With `resume`, completed arms are skipped
/// and interrupted arms continue from their latest checkpoint.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string valid for the call.
#[no_mangle]
pub unsafe extern "C" fn fedsim_experiment_train(
    config_json: *const c_char,
    resume: bool,
) -> FedsimStatus {
    guarded(FedsimStatus::Panic, || {
        let config_json = match utf8_arg(config_json) {
            Ok(text) => text,
            Err(status) => return status,
        };
        let config = match load_config(config_json) {
            Ok(config) => config,
            Err(status) => return status,
        };
        match experiment::run_train(&config, resume) {
            Ok(_) => FedsimStatus::Ok,
            Err(err) => {
                set_error(err.to_string());
                status_of(&err)
            }
        }
    })
}
