use std::ffi::{c_char, c_int, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use quadamr_ffi::*;

fn last_error() -> Option<String> {
    let p = quadamr_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn config(toml: &str) -> Result<*mut QuadamrConfig, (QuadamrStatus, String)> {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { quadamr_config_from_toml(text.as_ptr(), &mut cfg) };
    if s == QuadamrStatus::Ok {
        Ok(cfg)
    } else {
        Err((s, last_error().unwrap_or_default()))
    }
}

fn info(sim: *const QuadamrSimulation) -> QuadamrInfo {
    let mut out = QuadamrInfo::default();
    assert_eq!(
        unsafe { quadamr_simulation_info(sim, &mut out) },
        QuadamrStatus::Ok
    );
    out
}

#[test]
fn run_through_the_c_abi_matches_the_library() {
    let toml = "min-level = 2\nmax-level = 4\nsteps = 12\nranks = 3\n";
    let cfg = config(toml).unwrap();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(quadamr_simulation_new(cfg, &mut sim), QuadamrStatus::Ok);
        quadamr_config_free(cfg);
        assert_eq!(quadamr_simulation_run(sim), QuadamrStatus::Ok);
    }
    assert!(last_error().is_none());
    let got = info(sim);

    let mut direct =
        quadamr::solver::Simulation::new(quadamr::config::RunConfig::from_toml_str(toml).unwrap())
            .unwrap();
    direct.run().unwrap();
    assert_eq!(got.steps, 12);
    assert_eq!(got.ranks, 3);
    assert_eq!(got.leaves, direct.forest().len() as u64);
    let mass: f64 = direct
        .patches()
        .iter()
        .map(|p| p.interior_sum() * p.h() * p.h())
        .sum();
    assert_eq!(got.mass.to_bits(), mass.to_bits());
    assert!(got.max_cfl > 0.0 && got.max_cfl <= 1.0);

    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("out.dump");
    let timing = dir.path().join("timing.csv");
    let (dump_c, timing_c) = (
        CString::new(dump.to_str().unwrap()).unwrap(),
        CString::new(timing.to_str().unwrap()).unwrap(),
    );
    unsafe {
        assert_eq!(
            quadamr_simulation_write(sim, dump_c.as_ptr(), QuadamrFormat::PatchDump as c_int),
            QuadamrStatus::Ok
        );
        assert_eq!(
            quadamr_simulation_write_timing(sim, timing_c.as_ptr()),
            QuadamrStatus::Ok
        );
        quadamr_simulation_free(sim);
    }
    let text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(text, quadamr::output::patch_dump(&direct.patches()));
    let csv = std::fs::read_to_string(&timing).unwrap();
    assert!(csv.starts_with(quadamr::output::TIMING_HEADER));
}

#[test]
fn stepping_advances_time_and_reports_cfl() {
    let mut cfg = ptr::null_mut();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(quadamr_config_default(&mut cfg), QuadamrStatus::Ok);
        assert_eq!(quadamr_simulation_new(cfg, &mut sim), QuadamrStatus::Ok);
        quadamr_config_free(cfg);
        let mut cfl = 0.0;
        for _ in 0..3 {
            assert_eq!(quadamr_simulation_step(sim, &mut cfl), QuadamrStatus::Ok);
        }
        assert!((cfl - 0.64).abs() < 1e-12, "{cfl}");
        assert_eq!(
            quadamr_simulation_step(sim, ptr::null_mut()),
            QuadamrStatus::Ok
        );
    }
    let i = info(sim);
    assert_eq!(i.steps, 4);
    assert!(i.time > 0.0);
    unsafe { quadamr_simulation_free(sim) };
}

#[test]
fn errors_map_to_status_codes() {
    let (s, msg) = config("ghost = 3\n").unwrap_err();
    assert_eq!(s, QuadamrStatus::Config);
    assert!(msg.contains("M/4"), "{msg}");

    let (s, _) = config("no-such-key = 1\n").unwrap_err();
    assert_eq!(s, QuadamrStatus::Config);

    let args: Vec<CString> = ["quadamr", "--bogus"]
        .iter()
        .map(|a| CString::new(*a).unwrap())
        .collect();
    let ptrs: Vec<*const c_char> = args.iter().map(|a| a.as_ptr()).collect();
    let mut cfg = ptr::null_mut();
    let s = unsafe { quadamr_config_from_args(2, ptrs.as_ptr(), &mut cfg) };
    assert_eq!(s, QuadamrStatus::InvalidArgument);
    assert!(cfg.is_null());

    unsafe {
        assert_eq!(
            quadamr_config_default(ptr::null_mut()),
            QuadamrStatus::NullPointer
        );
        assert_eq!(
            quadamr_simulation_run(ptr::null_mut()),
            QuadamrStatus::NullPointer
        );
        assert_eq!(
            quadamr_simulation_new(ptr::null(), &mut ptr::null_mut()),
            QuadamrStatus::NullPointer
        );
        quadamr_config_free(ptr::null_mut());
        quadamr_simulation_free(ptr::null_mut());
    }
    assert!(last_error().unwrap().contains("null"));

    let cfg = config("steps = 1\nmin-level = 1\nmax-level = 2\n").unwrap();
    let mut sim = ptr::null_mut();
    let bad_path = CString::new("/nonexistent-dir/out.dump").unwrap();
    unsafe {
        assert_eq!(quadamr_simulation_new(cfg, &mut sim), QuadamrStatus::Ok);
        assert_eq!(
            quadamr_simulation_write(sim, bad_path.as_ptr(), 0),
            QuadamrStatus::Io
        );
        assert_eq!(
            quadamr_simulation_write(sim, bad_path.as_ptr(), 9),
            QuadamrStatus::InvalidArgument
        );
        quadamr_simulation_free(sim);
        quadamr_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/quadamr.h")).unwrap();
    for name in [
        "quadamr_last_error",
        "quadamr_config_default",
        "quadamr_config_from_toml",
        "quadamr_config_from_args",
        "quadamr_config_free",
        "quadamr_simulation_new",
        "quadamr_simulation_step",
        "quadamr_simulation_run",
        "quadamr_simulation_info",
        "quadamr_simulation_write",
        "quadamr_simulation_write_timing",
        "quadamr_simulation_free",
        "QUADAMR_STATUS_PANIC",
        "typedef struct QuadamrSimulation QuadamrSimulation;",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Directory holding the libraries built alongside this test binary. Test
/// builds leave fresh library artifacts in `deps/` without updating the
/// copies one level up.
fn artifact_dir() -> PathBuf {
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = artifact_dir().join("libquadamr_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success(), "C smoke program failed to compile");
    let dump = dir.path().join("smoke.dump");
    let out = Command::new(&exe).arg(&dump).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("steps=8 "), "{stdout}");
    let patches =
        quadamr::output::parse_patch_dump(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert!(!patches.is_empty());
}
