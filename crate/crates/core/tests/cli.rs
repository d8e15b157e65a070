use std::path::Path;
use std::process::{Command, Output};

use quadamr::output::{parse_patch_dump, TIMING_HEADER};

fn quadamr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadamr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn writes_dump_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("q.dump");
    let csv = dir.path().join("t.csv");
    let o = quadamr(&[
        "--minlevel",
        "2",
        "--maxlevel",
        "4",
        "--steps",
        "6",
        "--ranks",
        "2",
        "--out",
        path(&dump),
        "--timing",
        path(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let patches = parse_patch_dump(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    assert!(patches.iter().all(|p| (2..=4).contains(&p.quad.level)));
    let area: f64 = patches.iter().map(|p| p.quad.edge() * p.quad.edge()).sum();
    assert_eq!(area, 1.0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], TIMING_HEADER);
    assert!(lines[1].starts_with("2,"));
}

#[test]
fn rank_count_does_not_change_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let run = |ranks: &str, threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = quadamr(&[
            "--minlevel",
            "2",
            "--maxlevel",
            "5",
            "--steps",
            "24",
            "--smooth",
            "--ranks",
            ranks,
            "--threads",
            threads,
            "--out",
            path(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out).unwrap()
    };
    assert_eq!(run("1", "1", "a"), run("4", "4", "b"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let vtk = dir.path().join("q.vtk");
    std::fs::write(
        &cfg,
        "domain = \"cubed-sphere\"\nmin-level = 1\nmax-level = 2\nsteps = 2\nranks = 3\n",
    )
    .unwrap();
    let o = quadamr(&[
        "--config",
        path(&cfg),
        "--format",
        "vtk",
        "--out",
        path(&vtk),
        "--steps",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&vtk).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    let cells: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("CELL_TYPES "))
        .unwrap()
        .parse()
        .unwrap();
    // At least six blocks at level 1, whole 8x8 patches.
    assert!(cells >= 6 * 4 * 64 && cells.is_multiple_of(64), "{cells}");
}

#[test]
fn larger_patches_are_accepted() {
    let o = quadamr(&[
        "--mx",
        "32",
        "--ghost",
        "4",
        "--minlevel",
        "1",
        "--maxlevel",
        "2",
        "--steps",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let o = quadamr(&["--mx", "8", "--ghost", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("M/4"), "{}", stderr(&o));
    assert_eq!(quadamr(&["--stencil", "5"]).status.code(), Some(2));
    assert_eq!(
        quadamr(&["--minlevel", "5", "--maxlevel", "3"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(quadamr(&["--bogus"]).status.code(), Some(2));
    assert_eq!(quadamr(&["--bricks", "2by2"]).status.code(), Some(2));
    assert_eq!(
        quadamr(&["--config", "/nonexistent/run.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_with_one() {
    // A time step four times the stable one trips the CFL check.
    let o = quadamr(&[
        "--minlevel",
        "2",
        "--maxlevel",
        "3",
        "--steps",
        "2",
        "--dt",
        "0.02",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("CFL"), "{}", stderr(&o));
    let o = quadamr(&[
        "--minlevel",
        "1",
        "--maxlevel",
        "1",
        "--steps",
        "0",
        "--out",
        "/nonexistent/q.dump",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = quadamr(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("--tag-refine"));
}
