//! Files written after a run: timing CSV, patch dumps and legacy VTK.

use std::fmt::Write as _;
use std::path::Path;

use crate::connectivity::Connectivity;
use crate::error::{Error, Result};
use crate::forest::Quadrant;
use crate::patch::{Layout, Limiter, Patch};
use crate::solver::RunStats;
use crate::timing::Category;

pub const TIMING_HEADER: &str =
    "ranks,grids_per_rank_avg,wall,advance,ghost_fill,comm,cfl_sync,regrid,cell_updates";

pub fn timing_row(stats: &RunStats) -> String {
    let t = &stats.timers;
    format!(
        "{},{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        stats.ranks,
        stats.grids_per_rank_avg(),
        stats.wall,
        t.get(Category::Advance),
        t.get(Category::GhostFill),
        t.get(Category::Comm),
        t.get(Category::CflSync),
        t.get(Category::Regrid),
        stats.cell_updates
    )
}

pub fn timing_csv(stats: &RunStats) -> String {
    format!("{TIMING_HEADER}\n{}\n", timing_row(stats))
}

/// Interior values of each patch: a header line `block level x y M m`
/// followed by `M` rows of `M` values, with enough digits to round-trip.
pub fn patch_dump(patches: &[Patch]) -> String {
    let mut out = String::new();
    for p in patches {
        let q = p.quad;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            q.block,
            q.level,
            q.x,
            q.y,
            p.mx(),
            p.mg()
        );
        for j in 0..p.mx() {
            let row: Vec<String> = (0..p.mx())
                .map(|i| format!("{:.16e}", p.get(i, j)))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

/// Reads a patch dump back. Ghost cells are zero; the stencil width is the
/// smallest valid one for each patch size.
pub fn parse_patch_dump(text: &str) -> Result<Vec<Patch>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let mut out = Vec::new();
    let bad = |n: usize, what: &str| Error::Parse(format!("line {}: {what}", n + 1));
    while let Some((n, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(n, "expected `block level x y M m`"));
        }
        let num =
            |k: usize| -> Result<u64> { f[k].parse().map_err(|_| bad(n, "bad integer in header")) };
        let (block, level, x, y, mx, mg) = (num(0)?, num(1)?, num(2)?, num(3)?, num(4)?, num(5)?);
        let layout = Layout::new(mx as usize, mg as usize, 3, Limiter::Minmod)
            .map_err(|e| bad(n, &e.to_string()))?;
        if level > crate::forest::MAX_LEVEL as u64 || x >> level != 0 || y >> level != 0 {
            return Err(bad(n, "quadrant coordinates out of range"));
        }
        let quad = Quadrant::new(block as usize, level as u8, x as u32, y as u32);
        let mut p = Patch::new(quad, layout);
        for j in 0..mx as i32 {
            let (rn, row) = lines.next().ok_or_else(|| bad(n, "truncated patch"))?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(rn, "bad value")))
                .collect::<Result<_>>()?;
            if vals.len() != mx as usize {
                return Err(bad(rn, "wrong number of values in row"));
            }
            for (i, v) in vals.into_iter().enumerate() {
                p.set(i as i32, j, v);
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// Legacy VTK unstructured grid with one quad per interior cell and the
/// scalar as cell data. Points are in world coordinates.
pub fn vtk(patches: &[Patch], conn: &Connectivity) -> String {
    let cells: usize = patches.iter().map(|p| (p.mx() * p.mx()) as usize).sum();
    let mut out = String::new();
    out.push_str(
        "# vtk DataFile Version 3.0\nquadamr solution\nASCII\nDATASET UNSTRUCTURED_GRID\n",
    );
    let _ = writeln!(out, "POINTS {} double", 4 * cells);
    for p in patches {
        let o = p.quad.origin();
        let h = p.h();
        let b = p.quad.block();
        for j in 0..p.mx() {
            for i in 0..p.mx() {
                for (di, dj) in [(0, 0), (1, 0), (1, 1), (0, 1)] {
                    let w = conn.map_to_world(
                        b,
                        o[0] + (i + di) as f64 * h,
                        o[1] + (j + dj) as f64 * h,
                    );
                    let _ = writeln!(out, "{} {} {}", w[0], w[1], w[2]);
                }
            }
        }
    }
    let _ = writeln!(out, "CELLS {} {}", cells, 5 * cells);
    for c in 0..cells {
        let k = 4 * c;
        let _ = writeln!(out, "4 {} {} {} {}", k, k + 1, k + 2, k + 3);
    }
    let _ = writeln!(out, "CELL_TYPES {cells}");
    for _ in 0..cells {
        out.push_str("9\n");
    }
    let _ = writeln!(
        out,
        "CELL_DATA {cells}\nSCALARS q double 1\nLOOKUP_TABLE default"
    );
    for p in patches {
        for j in 0..p.mx() {
            for i in 0..p.mx() {
                let _ = writeln!(out, "{:.16e}", p.get(i, j));
            }
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
