//! C interface to the quadamr engine.
//!
//! Every function returns a [`QuadamrStatus`]. On failure a message is kept
//! per thread and can be read with [`quadamr_last_error`]. Handles are
//! opaque; each `*_new`/`*_from_*` must be paired with the matching
//! `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use quadamr::config::RunConfig;
use quadamr::output;
use quadamr::solver::Simulation;
use quadamr::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadamrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Io = 5,
    Panic = 6,
}

/// Output formats accepted by `quadamr_simulation_write`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadamrFormat {
    PatchDump = 0,
    Vtk = 1,
}

/// Run configuration handle.
pub struct QuadamrConfig(RunConfig);

/// Simulation handle. Owns its mesh, patches and simulated ranks.
pub struct QuadamrSimulation(Simulation);

/// Snapshot of a simulation's state.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct QuadamrInfo {
    pub steps: u64,
    pub time: f64,
    pub leaves: u64,
    pub ranks: u64,
    pub min_level: u8,
    pub max_level: u8,
    /// Sum of cell values times cell area.
    pub mass: f64,
    pub max_cfl: f64,
    pub wall_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> QuadamrStatus {
    match e {
        Error::Config(_) => QuadamrStatus::Config,
        Error::Io { .. } => QuadamrStatus::Io,
        _ => QuadamrStatus::Runtime,
    }
}

fn fail(status: QuadamrStatus, msg: impl Into<String>) -> QuadamrStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> QuadamrStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `f`, turning panics into [`QuadamrStatus::Panic`].
fn guard(f: impl FnOnce() -> QuadamrStatus) -> QuadamrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == QuadamrStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(QuadamrStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, QuadamrStatus> {
    if p.is_null() {
        return Err(fail(QuadamrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            QuadamrStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the last failed call on this thread, or null after a
/// successful call. The pointer stays valid until the next call on the
/// same thread.
#[no_mangle]
pub extern "C" fn quadamr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default configuration: the five-disk benchmark on one periodic block.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn quadamr_config_default(out: *mut *mut QuadamrConfig) -> QuadamrStatus {
    guard(|| {
        if out.is_null() {
            return fail(QuadamrStatus::NullPointer, "out is null");
        }
        store(out, QuadamrConfig(RunConfig::default()));
        QuadamrStatus::Ok
    })
}

/// Parses a TOML document with the same keys as the command-line config
/// file.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn quadamr_config_from_toml(
    toml: *const c_char,
    out: *mut *mut QuadamrConfig,
) -> QuadamrStatus {
    guard(|| {
        if out.is_null() {
            return fail(QuadamrStatus::NullPointer, "out is null");
        }
        let text = match c_str(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml_str(text) {
            Ok(cfg) => {
                store(out, QuadamrConfig(cfg));
                QuadamrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Parses command-line style arguments. `argv[0]` is the program name.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings and `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn quadamr_config_from_args(
    argc: c_int,
    argv: *const *const c_char,
    out: *mut *mut QuadamrConfig,
) -> QuadamrStatus {
    guard(|| {
        if out.is_null() || (argv.is_null() && argc > 0) {
            return fail(QuadamrStatus::NullPointer, "argv or out is null");
        }
        if argc < 0 {
            return fail(QuadamrStatus::InvalidArgument, "argc is negative");
        }
        let mut args = Vec::with_capacity(argc as usize);
        for k in 0..argc as usize {
            match c_str(*argv.add(k), "argument") {
                Ok(a) => args.push(a.to_string()),
                Err(s) => return s,
            }
        }
        match RunConfig::from_args(args) {
            Ok(cfg) => {
                store(out, QuadamrConfig(cfg));
                QuadamrStatus::Ok
            }
            Err(quadamr::config::ArgsError::Clap(e)) => {
                fail(QuadamrStatus::InvalidArgument, e.to_string())
            }
            Err(quadamr::config::ArgsError::Config(e)) => from_error(e),
        }
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn quadamr_config_free(cfg: *mut QuadamrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds the initial mesh and patches. The configuration is copied and
/// may be freed afterwards.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_new(
    cfg: *const QuadamrConfig,
    out: *mut *mut QuadamrSimulation,
) -> QuadamrStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(QuadamrStatus::NullPointer, "cfg or out is null");
        }
        match Simulation::new((*cfg).0.clone()) {
            Ok(sim) => {
                store(out, QuadamrSimulation(sim));
                QuadamrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Advances one time step, regridding when due. Writes the step's CFL
/// number to `cfl` if it is not null.
///
/// # Safety
/// `sim` must be a live handle; `cfl` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_step(
    sim: *mut QuadamrSimulation,
    cfl: *mut f64,
) -> QuadamrStatus {
    guard(|| {
        if sim.is_null() {
            return fail(QuadamrStatus::NullPointer, "sim is null");
        }
        match (*sim).0.advance() {
            Ok(c) => {
                if !cfl.is_null() {
                    *cfl = c;
                }
                QuadamrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs the configured number of steps.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_run(sim: *mut QuadamrSimulation) -> QuadamrStatus {
    guard(|| {
        if sim.is_null() {
            return fail(QuadamrStatus::NullPointer, "sim is null");
        }
        match (*sim).0.run() {
            Ok(_) => QuadamrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_info(
    sim: *const QuadamrSimulation,
    out: *mut QuadamrInfo,
) -> QuadamrStatus {
    guard(|| {
        if sim.is_null() || out.is_null() {
            return fail(QuadamrStatus::NullPointer, "sim or out is null");
        }
        let s = &(*sim).0;
        let forest = s.forest();
        let mass = s
            .patches()
            .iter()
            .map(|p| p.interior_sum() * p.h() * p.h())
            .sum();
        *out = QuadamrInfo {
            steps: s.step as u64,
            time: s.time,
            leaves: forest.len() as u64,
            ranks: forest.num_ranks() as u64,
            min_level: forest.min_level(),
            max_level: forest.max_level(),
            mass,
            max_cfl: s.stats.max_cfl,
            wall_seconds: s.stats.wall,
        };
        QuadamrStatus::Ok
    })
}

/// Writes the current solution; `format` is a `QuadamrFormat` value.
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_write(
    sim: *const QuadamrSimulation,
    path: *const c_char,
    format: c_int,
) -> QuadamrStatus {
    guard(|| {
        if sim.is_null() {
            return fail(QuadamrStatus::NullPointer, "sim is null");
        }
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let s = &(*sim).0;
        let patches = s.patches();
        let text = match format {
            f if f == QuadamrFormat::PatchDump as c_int => output::patch_dump(&patches),
            f if f == QuadamrFormat::Vtk as c_int => {
                output::vtk(&patches, s.forest().connectivity())
            }
            other => {
                return fail(
                    QuadamrStatus::InvalidArgument,
                    format!("unknown format {other}"),
                )
            }
        };
        match output::write_file(Path::new(path), &text) {
            Ok(()) => QuadamrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Writes the timing CSV (header and one row).
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_write_timing(
    sim: *const QuadamrSimulation,
    path: *const c_char,
) -> QuadamrStatus {
    guard(|| {
        if sim.is_null() {
            return fail(QuadamrStatus::NullPointer, "sim is null");
        }
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match output::write_file(Path::new(path), &output::timing_csv(&(*sim).0.stats)) {
            Ok(()) => QuadamrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `sim` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn quadamr_simulation_free(sim: *mut QuadamrSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
