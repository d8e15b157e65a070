//! Test helpers: random forests and a geometric ghost-cell oracle that
//! works from block placement alone, independent of the face-link tables.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use quadamr::config::{InitialField, RunConfig};
use quadamr::connectivity::{BlockGeometry, Connectivity, Direction};
use quadamr::forest::{Forest, Quadrant};
use quadamr::ghost_parallel::{Schedule, World};
use quadamr::ghost_serial::update_ghost;
use quadamr::patch::{Layout, Limiter, Patch};
use quadamr::solver::{initial_patches, RegridParams, RegridReport, Simulation};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn layout() -> Layout {
    Layout::new(8, 2, 3, Limiter::Minmod).unwrap()
}

/// Uniform forest at `lmin`, `refinements` random leaf refinements capped at
/// `lmax`, then balanced.
pub fn random_forest(
    conn: Arc<Connectivity>,
    rng: &mut impl Rng,
    lmin: u8,
    lmax: u8,
    refinements: usize,
) -> Forest {
    let mut forest = Forest::new_uniform(conn, lmin).unwrap();
    for _ in 0..refinements {
        let candidates: Vec<Quadrant> = forest
            .leaves()
            .iter()
            .copied()
            .filter(|q| q.level < lmax)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let q = candidates[rng.gen_range(0..candidates.len())];
        forest.refine_leaf(&q).unwrap();
        forest.balance_2to1();
        // Balancing may push a leaf past lmax only if lmax is exceeded by a
        // refined leaf's neighbors, which cannot happen since it only adds
        // levels below the finest existing one.
    }
    forest
}

pub fn random_patches(forest: &Forest, layout: Layout, rng: &mut impl Rng) -> Vec<Patch> {
    forest
        .leaves()
        .iter()
        .map(|q| {
            let mut p = Patch::new(*q, layout);
            for [i, j] in p.interior().collect::<Vec<_>>() {
                p.set(i, j, rng.gen_range(-1.0..1.0));
            }
            p
        })
        .collect()
}

/// Point of a block frame carried to the block actually containing it.
#[derive(Clone, Copy, Debug)]
pub struct Placed {
    pub block: usize,
    pub xy: [f64; 2],
    /// Images in the target frame of the source frame's unit x and y axes.
    pub ax: [[f64; 2]; 2],
}

/// Carries the block-frame point `(xi, eta)` of `block` (possibly outside
/// the unit square) into the block that contains it. `None` outside the
/// domain or beyond a cube vertex.
pub fn place(conn: &Connectivity, block: usize, xi: f64, eta: f64) -> Option<Placed> {
    match conn.geometry(block) {
        BlockGeometry::Planar { origin } => {
            let (nx, ny, px, py) = match conn.kind() {
                quadamr::connectivity::DomainKind::Brick {
                    nx,
                    ny,
                    periodic_x,
                    periodic_y,
                } => (nx as f64, ny as f64, periodic_x, periodic_y),
                _ => panic!("planar oracle needs a brick"),
            };
            let mut x = origin[0] + xi;
            let mut y = origin[1] + eta;
            if x < 0.0 || x >= nx {
                if !px {
                    return None;
                }
                x = x.rem_euclid(nx);
            }
            if y < 0.0 || y >= ny {
                if !py {
                    return None;
                }
                y = y.rem_euclid(ny);
            }
            let (bx, by) = (x.floor(), y.floor());
            let b = (by as usize) * (nx as usize) + bx as usize;
            Some(Placed {
                block: b,
                xy: [x - bx, y - by],
                ax: [[1.0, 0.0], [0.0, 1.0]],
            })
        }
        BlockGeometry::CubeFace { center, u, v } => {
            let f = |a: [i8; 3]| a.map(|e| e as f64);
            let (c, u, v) = (f(center), f(u), f(v));
            let a = 2.0 * xi - 1.0;
            let b = 2.0 * eta - 1.0;
            if a.abs() > 1.0 && b.abs() > 1.0 {
                return None;
            }
            // Fold the flat extension over the cube edge.
            let (p, du, dv) = if a.abs() > 1.0 {
                let s = a.signum();
                let over = a.abs() - 1.0;
                let p: [f64; 3] =
                    std::array::from_fn(|k| (1.0 - over) * c[k] + s * u[k] + b * v[k]);
                let du: [f64; 3] = std::array::from_fn(|k| -s * c[k]);
                (p, du, v)
            } else if b.abs() > 1.0 {
                let s = b.signum();
                let over = b.abs() - 1.0;
                let p: [f64; 3] =
                    std::array::from_fn(|k| (1.0 - over) * c[k] + a * u[k] + s * v[k]);
                let dv: [f64; 3] = std::array::from_fn(|k| -s * c[k]);
                (p, u, dv)
            } else {
                (std::array::from_fn(|k| c[k] + a * u[k] + b * v[k]), u, v)
            };
            let axis = (0..3)
                .max_by(|&i, &j| p[i].abs().partial_cmp(&p[j].abs()).unwrap())
                .unwrap();
            let mut normal = [0i8; 3];
            normal[axis] = p[axis].signum() as i8;
            let nb = (0..conn.num_blocks())
                .find(|&k| matches!(conn.geometry(k), BlockGeometry::CubeFace { center, .. } if center == normal))
                .unwrap();
            let BlockGeometry::CubeFace { u: nu, v: nv, .. } = conn.geometry(nb) else {
                unreachable!()
            };
            let (nu, nv) = (f(nu), f(nv));
            let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            Some(Placed {
                block: nb,
                xy: [(dot(p, nu) + 1.0) / 2.0, (dot(p, nv) + 1.0) / 2.0],
                ax: [[dot(du, nu), dot(du, nv)], [dot(dv, nu), dot(dv, nv)]],
            })
        }
    }
}

pub fn leaf_containing(forest: &Forest, block: usize, xy: [f64; 2]) -> usize {
    forest
        .leaves()
        .iter()
        .position(|q| {
            let o = q.origin();
            let e = q.edge();
            q.block() == block
                && xy[0] >= o[0]
                && xy[0] < o[0] + e
                && xy[1] >= o[1]
                && xy[1] < o[1] + e
        })
        .expect("every point of a block lies in a leaf")
}

fn cell_of(p: &Patch, xy: [f64; 2]) -> [i32; 2] {
    let o = p.quad.origin();
    let h = p.h();
    [
        ((xy[0] - o[0]) / h).floor() as i32,
        ((xy[1] - o[1]) / h).floor() as i32,
    ]
}

/// Value the ghost-fill definitions assign to cell `(i, j)` of patch
/// `leaf`, evaluated cell by cell from the composite picture.
pub fn oracle_value(forest: &Forest, patches: &[Patch], leaf: usize, i: i32, j: i32) -> f64 {
    let p = &patches[leaf];
    let mx = p.mx();
    if (0..mx).contains(&i) && (0..mx).contains(&j) {
        return p.get(i, j);
    }
    let conn = forest.connectivity();
    let c = p.cell_center(i, j);
    let block = p.quad.block();
    let Some(at) = place(conn, block, c[0], c[1]) else {
        // Exterior: clamp along axes whose face strip leaves the domain.
        let out_x = !(0..mx).contains(&i);
        let out_y = !(0..mx).contains(&j);
        let strip_x = {
            let c = p.cell_center(i, j.clamp(0, mx - 1));
            out_x && place(conn, block, c[0], c[1]).is_none()
        };
        let strip_y = {
            let c = p.cell_center(i.clamp(0, mx - 1), j);
            out_y && place(conn, block, c[0], c[1]).is_none()
        };
        let (cx, cy) = if out_x && out_y {
            match (strip_x, strip_y) {
                (false, false) => (true, true),
                pair => pair,
            }
        } else {
            (out_x, out_y)
        };
        let si = if cx { i.clamp(0, mx - 1) } else { i };
        let sj = if cy { j.clamp(0, mx - 1) } else { j };
        return oracle_value(forest, patches, leaf, si, sj);
    };
    let n = leaf_containing(forest, at.block, at.xy);
    let np = &patches[n];
    let level = p.level();
    if np.level() == level {
        let [a, b] = cell_of(np, at.xy);
        np.get(a, b)
    } else if np.level() == level + 1 {
        let h = p.h();
        let mut v = [0.0; 4];
        for (k, d) in [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]
            .into_iter()
            .enumerate()
        {
            let q = place(conn, block, c[0] + 0.25 * h * d[0], c[1] + 0.25 * h * d[1]).unwrap();
            let [a, b] = cell_of(np, q.xy);
            v[k] = np.get(a, b);
        }
        0.25 * ((v[0] + v[1]) + (v[2] + v[3]))
    } else if np.level() + 1 == level {
        let [a, b] = cell_of(np, at.xy);
        let cc = np.cell_center(a, b);
        let d = [(at.xy[0] - cc[0]).signum(), (at.xy[1] - cc[1]).signum()];
        let get = |x: i32, y: i32| oracle_value(forest, patches, n, x, y);
        let q = get(a, b);
        let lim = np.layout.limiter;
        let sx = lim.slope(q - get(a - 1, b), get(a + 1, b) - q);
        let sy = lim.slope(q - get(a, b - 1), get(a, b + 1) - q);
        q + (sx * (0.25 * d[0]) + sy * (0.25 * d[1]))
    } else {
        panic!("unbalanced neighbor in oracle")
    }
}

pub fn ghost_cells(p: &Patch) -> Vec<[i32; 2]> {
    let (m, mx) = (p.mg(), p.mx());
    let mut out = Vec::new();
    for j in -m..mx + m {
        for i in -m..mx + m {
            if !((0..mx).contains(&i) && (0..mx).contains(&j)) {
                out.push([i, j]);
            }
        }
    }
    out
}

pub fn brick(nx: usize, ny: usize, px: bool, py: bool) -> Arc<Connectivity> {
    Arc::new(Connectivity::build_brick(nx, ny, px, py).unwrap())
}

pub fn sphere() -> Arc<Connectivity> {
    Arc::new(Connectivity::build_cubed_sphere())
}

pub fn find_leaf(leaves: &[Quadrant], block: usize, xy: [f64; 2]) -> Option<usize> {
    leaves.iter().position(|q| {
        let o = q.origin();
        let e = q.edge();
        q.block() == block && xy[0] >= o[0] && xy[0] < o[0] + e && xy[1] >= o[1] && xy[1] < o[1] + e
    })
}

/// A leaf met by probing just outside a quadrant.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub leaf: usize,
    /// Position of the first probe that met the leaf, along the face in the
    /// probing quadrant's frame.
    pub t: f64,
    /// The probe point in the probing block's frame and where it landed.
    pub from: [f64; 2],
    pub to: Placed,
}

/// Leaves of `leaves` met across direction `dir` of `q`, found by carrying
/// points at spacing `fine` just outside `q` into their blocks. Works on
/// unbalanced frontiers.
pub fn probe(
    conn: &Connectivity,
    leaves: &[Quadrant],
    q: &Quadrant,
    dir: Direction,
    fine: f64,
) -> Vec<Hit> {
    let e = q.edge();
    let o = q.origin();
    let off = dir.offset();
    let mut points = Vec::new();
    if dir.is_face() {
        let n = (e / fine).round() as i64;
        for s in 0..n {
            let t = (s as f64 + 0.5) * fine;
            let p = match off {
                [-1, 0] => [o[0] - fine / 2.0, o[1] + t],
                [1, 0] => [o[0] + e + fine / 2.0, o[1] + t],
                [0, -1] => [o[0] + t, o[1] - fine / 2.0],
                _ => [o[0] + t, o[1] + e + fine / 2.0],
            };
            points.push((t, p));
        }
    } else {
        let c = |k: usize| {
            if off[k] < 0 {
                o[k] - fine / 2.0
            } else {
                o[k] + e + fine / 2.0
            }
        };
        points.push((0.0, [c(0), c(1)]));
    }
    let mut out: Vec<Hit> = Vec::new();
    for (t, p) in points {
        let Some(at) = place(conn, q.block(), p[0], p[1]) else {
            continue;
        };
        let leaf = find_leaf(leaves, at.block, at.xy).expect("leaves tile every block");
        if !out.iter().any(|h| h.leaf == leaf) {
            out.push(Hit {
                leaf,
                t,
                from: p,
                to: at,
            });
        }
    }
    out
}

/// Refines the coarser side of every adjacent pair more than one level
/// apart until none remain, using only geometric adjacency.
pub fn brute_force_balance(conn: &Connectivity, mut leaves: Vec<Quadrant>) -> Vec<Quadrant> {
    'outer: loop {
        let fine = (-(leaves.iter().map(|q| q.level).max().unwrap_or(0) as f64 + 1.0)).exp2();
        for q in &leaves {
            for dir in Direction::ALL {
                for h in probe(conn, &leaves, q, dir, fine) {
                    let n = leaves[h.leaf];
                    if n.level + 1 < q.level {
                        leaves.swap_remove(h.leaf);
                        leaves.extend(n.children());
                        continue 'outer;
                    }
                }
            }
        }
        return leaves;
    }
}

pub fn assert_bitwise(a: &[Patch], b: &[Patch], what: &str) {
    assert_eq!(a.len(), b.len());
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        for (n, (u, v)) in x.data().iter().zip(y.data()).enumerate() {
            assert_eq!(
                u.to_bits(),
                v.to_bits(),
                "{what}: leaf {k} ({:?}) entry {n}: {u} vs {v}",
                x.quad
            );
        }
        assert_eq!(x.kinds(), y.kinds(), "{what}: leaf {k} region kinds");
    }
}

pub fn serial(forest: &Forest, patches: &[Patch]) -> Vec<Patch> {
    let mut out = patches.to_vec();
    update_ghost(forest, &mut out, forest.min_level(), forest.max_level()).unwrap();
    out
}

pub fn parallel(
    forest: &Forest,
    patches: &[Patch],
    ranks: usize,
    schedule: Option<Schedule>,
) -> Vec<Patch> {
    let mut f = forest.clone();
    f.partition(ranks);
    let threads = if matches!(schedule, Some(Schedule::Pool(_))) {
        4
    } else {
        1
    };
    let mut world = World::new(f, layout(), patches.to_vec(), threads).unwrap();
    if let Some(s) = schedule {
        world.set_schedule(s);
    }
    world.update_ghost().unwrap();
    assert!(world.mailbox().is_empty());
    world.patches()
}

pub fn gaussian(level: u8) -> RunConfig {
    let h = (-(level as f64)).exp2() / 8.0;
    RunConfig {
        uniform: true,
        min_level: level,
        max_level: level,
        initial: InitialField::Gaussian {
            center: [0.5, 0.5],
            sigma: 0.1,
        },
        steps: (2.0 / (0.64 * h)).round() as usize,
        ..RunConfig::default()
    }
}

/// L1 distance to the initial field sampled on the final mesh.
pub fn l1_error(sim: &Simulation) -> f64 {
    let exact = initial_patches(sim.forest(), sim.world().layout(), &sim.config);
    sim.patches()
        .iter()
        .zip(&exact)
        .map(|(p, e)| {
            let h = p.h();
            p.interior()
                .map(|[i, j]| (p.get(i, j) - e.get(i, j)).abs() * h * h)
                .sum::<f64>()
        })
        .sum()
}

pub fn mass(patches: &[Patch]) -> f64 {
    patches
        .iter()
        .map(|p| p.interior_sum() * p.h() * p.h())
        .sum()
}

/// Per-block interior fields keyed by quadrant position within its block.
pub type BlockFields = HashMap<usize, Vec<((u8, u32, u32), Vec<u64>)>>;

pub fn per_block(patches: &[Patch]) -> BlockFields {
    let mut out: HashMap<usize, Vec<_>> = HashMap::new();
    for p in patches {
        let bits = p.interior().map(|[i, j]| p.get(i, j).to_bits()).collect();
        out.entry(p.quad.block())
            .or_default()
            .push(((p.quad.level, p.quad.x, p.quad.y), bits));
    }
    out
}

/// Targets from first principles: spread of interior values, family rule
/// for coarsening, max over geometric neighbors for grading.
pub fn oracle_targets(forest: &Forest, patches: &[Patch], p: &RegridParams) -> Vec<u8> {
    let spread: Vec<f64> = patches
        .iter()
        .map(|pa| {
            let v: Vec<f64> = pa.interior().map(|[i, j]| pa.get(i, j)).collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        })
        .collect();
    let index: HashMap<Quadrant, usize> = forest
        .leaves()
        .iter()
        .enumerate()
        .map(|(k, q)| (*q, k))
        .collect();
    let raw: Vec<u8> = forest
        .leaves()
        .iter()
        .enumerate()
        .map(|(k, q)| {
            if q.level < p.lmax && spread[k] > p.tau_r {
                return q.level + 1;
            }
            if q.level > p.lmin {
                let fam = q.parent().unwrap().children();
                if fam
                    .iter()
                    .all(|s| index.get(s).is_some_and(|&i| spread[i] < p.tau_c))
                {
                    return q.level - 1;
                }
            }
            q.level
        })
        .collect();
    if !p.smooth {
        return raw;
    }
    let conn = forest.connectivity();
    (0..forest.len())
        .map(|k| {
            let q = forest.leaves()[k];
            let mut t = raw[k];
            for n in geometric_neighbors(conn, forest, &q) {
                t = t.max(raw[n]);
            }
            t.clamp(p.lmin, p.lmax)
        })
        .collect()
}

/// Leaves touching `q` (faces or corners), found by probing points just
/// outside its boundary at the finest resolution present.
pub fn geometric_neighbors(
    conn: &quadamr::Connectivity,
    forest: &Forest,
    q: &Quadrant,
) -> Vec<usize> {
    let fine = (-(forest.max_level() as f64 + 2.0)).exp2();
    let mut out = Vec::new();
    for dir in Direction::ALL {
        for h in probe(conn, forest.leaves(), q, dir, fine) {
            if !out.contains(&h.leaf) {
                out.push(h.leaf);
            }
        }
    }
    out
}

pub fn check_report(report: &RegridReport, patches: &[Patch], p: &RegridParams) {
    let old = &report.old_forest;
    let new = &report.new_forest;
    let want = oracle_targets(old, patches, p);
    assert_eq!(report.targets, want);
    assert!(new.is_balanced());
    for (q, &t) in old.leaves().iter().zip(&want) {
        for nq in new.leaves() {
            if q.contains(nq) || nq.contains(q) {
                assert!(nq.level >= t, "{q:?} target {t} realized by {nq:?}");
                if t > q.level {
                    assert!(nq.level > q.level, "tagged {q:?} was not refined");
                }
            }
        }
    }
}

/// Number of face-connected pieces of the leaves of `rank` inside `block`.
pub fn components(f: &Forest, rank: usize, block: usize) -> usize {
    let table = f.neighbor_table().unwrap();
    let mine: Vec<usize> = f
        .rank_range(rank)
        .filter(|&i| f.leaves()[i].block() == block)
        .collect();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut pieces = 0;
    for &start in &mine {
        if !seen.insert(start) {
            continue;
        }
        pieces += 1;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for row in &table[i][..4] {
                for n in row.quads() {
                    let same_block = f.leaves()[n.index].block() == block;
                    if same_block && f.owner(n.index) == rank && seen.insert(n.index) {
                        stack.push(n.index);
                    }
                }
            }
        }
    }
    pieces
}
