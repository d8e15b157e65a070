//! Explicit advection of a scalar on the patch hierarchy with global time
//! stepping, plus the regrid cycle (tag, grade, adapt, balance, transfer,
//! repartition).
//!
//! The single-patch scheme is a flux-form corner-transport-upwind method:
//! donor-cell fluxes with transverse corrections and limited second-order
//! corrections. Normal velocities on cell edges are
//! differences of a streamfunction at cell corners, so the discrete
//! divergence vanishes on every cell.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use crate::config::WaveLimiter;
use crate::config::{Domain, RunConfig};
use crate::connectivity::Connectivity;
use crate::error::{Error, Result};
use crate::forest::{Forest, NeighborInfo, Quadrant};
use crate::ghost_parallel::{Tag, World};
use crate::patch::{Layout, Patch};
use crate::timing::{Category, Timers};

/// Streamfunction of a uniform translation `(u, v)` in block coordinates:
/// `psi = u*y - v*x`, so that `u = dpsi/dy` and `v = -dpsi/dx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityField {
    pub u: f64,
    pub v: f64,
}

impl VelocityField {
    pub fn psi(&self, x: f64, y: f64) -> f64 {
        self.u * y - self.v * x
    }

    /// Normal velocities on the edges a patch update reads. `u[e][r]` is on
    /// the x-edge left of cell `e` in row `r`, `v[c][f]` on the y-edge below
    /// cell `c` in row `f`; indices are shifted by one so that `-1` maps to
    /// slot 0.
    pub fn edge_velocities(&self, p: &Patch) -> EdgeVelocities {
        let mx = p.mx();
        let n = (mx + 3) as usize;
        let h = p.h();
        let o = p.quad.origin();
        let mut psi = vec![0.0; n * n];
        for b in -1..=mx + 1 {
            for a in -1..=mx + 1 {
                let x = o[0] + a as f64 * h;
                let y = o[1] + b as f64 * h;
                psi[(b + 1) as usize * n + (a + 1) as usize] = self.psi(x, y);
            }
        }
        let at = |a: i32, b: i32| psi[(b + 1) as usize * n + (a + 1) as usize];
        let mut ev = EdgeVelocities {
            n,
            u: vec![0.0; n * n],
            v: vec![0.0; n * n],
        };
        for r in -1..=mx {
            for e in -1..=mx + 1 {
                let k = ev.slot(e, r);
                ev.u[k] = (at(e, r + 1) - at(e, r)) / h;
            }
        }
        for f in -1..=mx + 1 {
            for c in -1..=mx {
                let k = ev.slot(c, f);
                ev.v[k] = -(at(c + 1, f) - at(c, f)) / h;
            }
        }
        ev
    }
}

pub struct EdgeVelocities {
    n: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl EdgeVelocities {
    #[inline]
    fn slot(&self, a: i32, b: i32) -> usize {
        (b + 1) as usize * self.n + (a + 1) as usize
    }

    #[inline]
    pub fn u(&self, e: i32, r: i32) -> f64 {
        self.u[self.slot(e, r)]
    }

    #[inline]
    pub fn v(&self, c: i32, f: i32) -> f64 {
        self.v[self.slot(c, f)]
    }
}

/// Advances one patch by `dt` in place using its ghost cells and returns
/// its CFL number `(max|u| + max|v|) dt / h`.
pub fn advance_patch(p: &mut Patch, vel: &VelocityField, dt: f64, lim: WaveLimiter) -> Result<f64> {
    let ev = vel.edge_velocities(p);
    let mx = p.mx();
    let r = dt / p.h();
    let old = p.clone();
    let q = |i: i32, j: i32| old.get(i, j);
    let w = (mx + 1) as usize;
    let mut fx = vec![0.0; w * mx as usize];
    let mut gy = vec![0.0; w * mx as usize];
    let (mut umax, mut vmax) = (0.0f64, 0.0f64);
    for j in 0..mx {
        for e in 0..=mx {
            let u = ev.u(e, j);
            umax = umax.max(u.abs());
            let c = if u >= 0.0 { e - 1 } else { e };
            let (vb, vt) = (ev.v(c, j), ev.v(c, j + 1));
            let transverse =
                vb.max(0.0) * (q(c, j) - q(c, j - 1)) + vt.min(0.0) * (q(c, j + 1) - q(c, j));
            let wave = q(e, j) - q(e - 1, j);
            let upwind = if u >= 0.0 {
                q(e - 1, j) - q(e - 2, j)
            } else {
                q(e + 1, j) - q(e, j)
            };
            fx[j as usize * w + e as usize] = u * q(c, j) - 0.5 * r * u * transverse
                + 0.5 * u.abs() * (1.0 - r * u.abs()) * lim.limit(wave, upwind);
        }
    }
    for f in 0..=mx {
        for i in 0..mx {
            let v = ev.v(i, f);
            vmax = vmax.max(v.abs());
            let c = if v >= 0.0 { f - 1 } else { f };
            let (ul, ur) = (ev.u(i, c), ev.u(i + 1, c));
            let transverse =
                ul.max(0.0) * (q(i, c) - q(i - 1, c)) + ur.min(0.0) * (q(i + 1, c) - q(i, c));
            let wave = q(i, f) - q(i, f - 1);
            let upwind = if v >= 0.0 {
                q(i, f - 1) - q(i, f - 2)
            } else {
                q(i, f + 1) - q(i, f)
            };
            gy[i as usize * w + f as usize] = v * q(i, c) - 0.5 * r * v * transverse
                + 0.5 * v.abs() * (1.0 - r * v.abs()) * lim.limit(wave, upwind);
        }
    }
    for j in 0..mx {
        for i in 0..mx {
            let (ju, iu) = (j as usize, i as usize);
            let dfx = fx[ju * w + iu + 1] - fx[ju * w + iu];
            let dgy = gy[iu * w + ju + 1] - gy[iu * w + ju];
            let value = q(i, j) - r * (dfx + dgy);
            if !value.is_finite() {
                return Err(Error::NonFinite(p.quad));
            }
            p.set(i, j, value);
        }
    }
    Ok((umax + vmax) * r)
}

/// Global maximum of per-rank CFL numbers; above 1 the step is unstable.
pub fn cfl_sync(maxima: &[f64]) -> Result<f64> {
    let global = maxima.iter().copied().fold(0.0, f64::max);
    if global > 1.0 {
        return Err(Error::CflExceeded(global));
    }
    Ok(global)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegridParams {
    pub tau_r: f64,
    pub tau_c: f64,
    pub lmin: u8,
    pub lmax: u8,
    pub smooth: bool,
}

/// Target level of `leaf` before grading: one finer if its spread exceeds
/// `tau_r`, one coarser if it and all its siblings are leaves with spread
/// below `tau_c`, unchanged otherwise.
pub fn raw_target(
    forest: &Forest,
    leaf: usize,
    spread: impl Fn(usize) -> f64,
    p: &RegridParams,
) -> u8 {
    let q = forest.leaves()[leaf];
    if q.level < p.lmax && spread(leaf) > p.tau_r {
        return q.level + 1;
    }
    if q.level > p.lmin {
        let family = q.parent().expect("level > 0").children();
        let coarsen = family
            .iter()
            .all(|s| forest.index_of(s).is_some_and(|k| spread(k) < p.tau_c));
        if coarsen {
            return q.level - 1;
        }
    }
    q.level
}

/// Maximum target over a leaf and its neighbors, clipped to the level range.
pub fn graded_target(
    row: &[NeighborInfo; 8],
    own: u8,
    target: impl Fn(usize) -> u8,
    p: &RegridParams,
) -> u8 {
    row.iter()
        .flat_map(NeighborInfo::quads)
        .map(|n| target(n.index))
        .fold(own, u8::max)
        .clamp(p.lmin, p.lmax)
}

/// Forest realizing per-leaf targets: leaves refine until they reach their
/// target, families whose four targets are all coarser merge, then 2:1
/// balance adds whatever refinement it needs.
pub fn adapt_to_targets(forest: &Forest, targets: &[u8]) -> Result<Forest> {
    let leaves = forest.leaves();
    let mut out = forest.clone();
    let mut refine: Vec<Quadrant> = leaves
        .iter()
        .zip(targets)
        .filter(|(q, &t)| t > q.level)
        .map(|(q, _)| *q)
        .collect();
    let mut wanted: HashMap<Quadrant, u8> = leaves
        .iter()
        .zip(targets)
        .filter(|(q, &t)| t > q.level)
        .map(|(q, &t)| (*q, t))
        .collect();
    while !refine.is_empty() {
        out.adapt(&refine, &[])?;
        let mut next = Vec::new();
        let mut next_wanted = HashMap::new();
        for q in &refine {
            let t = wanted[q];
            if t > q.level + 1 {
                for c in q.children() {
                    next.push(c);
                    next_wanted.insert(c, t);
                }
            }
        }
        refine = next;
        wanted = next_wanted;
    }
    let mut coarsen = Vec::new();
    let mut k = 0;
    while k + 4 <= leaves.len() {
        let q = leaves[k];
        if q.level > 0 && q.child_id() == 0 {
            let family = q.parent().unwrap().children();
            if leaves[k..k + 4] == family && targets[k..k + 4].iter().all(|&t| t < q.level) {
                coarsen.push(family[0].parent().unwrap());
                k += 4;
                continue;
            }
        }
        k += 1;
    }
    out.adapt_balanced(&[], &coarsen)?;
    Ok(out)
}

/// Patches of `new` built from those of `old` (indexed by old leaf): kept
/// leaves are moved, refined leaves are interpolated from their old
/// ancestor, coarsened families are averaged.
pub fn transfer(old: &Forest, patches: Vec<Patch>, new: &Forest) -> Result<Vec<Patch>> {
    let mut slots: Vec<Option<Patch>> = patches.into_iter().map(Some).collect();
    let mut refined: HashMap<Quadrant, Patch> = HashMap::new();
    let mut out = Vec::with_capacity(new.len());
    for nq in new.leaves() {
        if let Some(k) = old.index_of(nq) {
            let p = slots[k].take().ok_or(Error::NotALeaf(*nq))?;
            out.push(p);
        } else if let Some(k) = old.containing_leaf(nq) {
            if !refined.contains_key(nq) {
                let src = slots[k].as_ref().ok_or(Error::NotALeaf(*nq))?;
                let levels = nq.level - src.level();
                refined.extend(src.refine(levels).into_iter().map(|p| (p.quad, p)));
            }
            out.push(
                refined
                    .remove(nq)
                    .expect("refinement covers every descendant"),
            );
        } else {
            let kids = nq.children();
            let idx: Vec<usize> = kids
                .iter()
                .map(|c| old.index_of(c).ok_or(Error::NotAFamily))
                .collect::<Result<_>>()?;
            let family: Vec<&Patch> = idx
                .iter()
                .map(|&k| slots[k].as_ref().ok_or(Error::NotAFamily))
                .collect::<Result<_>>()?;
            out.push(Patch::average_to_parent([
                family[0], family[1], family[2], family[3],
            ])?);
        }
    }
    Ok(out)
}

/// What one regrid saw and did, indexed by leaves of the old forest.
#[derive(Clone, Debug)]
pub struct RegridReport {
    pub old_forest: Arc<Forest>,
    pub new_forest: Arc<Forest>,
    pub spreads: Vec<f64>,
    pub raw_targets: Vec<u8>,
    pub targets: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub ranks: usize,
    pub steps: usize,
    pub wall: f64,
    pub timers: Timers,
    pub cell_updates: u64,
    /// Average leaves per rank, sampled at every step.
    pub grids_per_rank: Vec<f64>,
    /// Leaf counts after the initial mesh and after every regrid.
    pub leaf_counts: Vec<usize>,
    pub max_cfl: f64,
}

impl RunStats {
    pub fn grids_per_rank_avg(&self) -> f64 {
        if self.grids_per_rank.is_empty() {
            0.0
        } else {
            self.grids_per_rank.iter().sum::<f64>() / self.grids_per_rank.len() as f64
        }
    }
}

pub fn build_connectivity(cfg: &RunConfig) -> Result<Arc<Connectivity>> {
    Ok(Arc::new(match cfg.domain {
        Domain::Brick => Connectivity::build_brick(cfg.bricks[0], cfg.bricks[1], true, true)?,
        Domain::CubedSphere => Connectivity::build_cubed_sphere(),
    }))
}

/// A run in progress.
pub struct Simulation {
    pub config: RunConfig,
    world: World,
    velocity: Option<VelocityField>,
    params: RegridParams,
    dt: f64,
    pub time: f64,
    pub step: usize,
    pub stats: RunStats,
    pub reports: Vec<RegridReport>,
    /// Keep every regrid report instead of only counting leaves.
    pub record_regrids: bool,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let conn = build_connectivity(&config)?;
        let (lmin, lmax) = config.levels();
        let params = RegridParams {
            tau_r: config.tag_refine,
            tau_c: config.tag_coarsen,
            lmin,
            lmax,
            smooth: config.smooth,
        };
        let init = |f: &Forest| initial_patches(f, layout, &config);
        let mut forest = Forest::new_uniform(conn, lmin)?;
        // The initial mesh is built by repeatedly tagging the sampled field.
        for _ in lmin..lmax {
            let patches = init(&forest);
            let spreads: Vec<f64> = patches.iter().map(Patch::spread).collect();
            let refine_only = RegridParams {
                tau_c: -1.0,
                ..params
            };
            let raw: Vec<u8> = (0..forest.len())
                .map(|k| raw_target(&forest, k, |i| spreads[i], &refine_only))
                .collect();
            let targets = serial_grade(&forest, &raw, &refine_only)?;
            let next = adapt_to_targets(&forest, &targets)?;
            if next.leaves() == forest.leaves() {
                break;
            }
            forest = next;
        }
        forest.partition(config.ranks);
        let patches = init(&forest);
        let leaves = forest.len();
        let world = World::new(forest, layout, patches, config.threads)?;
        let velocity = match config.domain {
            Domain::Brick => Some(VelocityField {
                u: config.velocity[0],
                v: config.velocity[1],
            }),
            Domain::CubedSphere => None,
        };
        Ok(Simulation {
            dt: config.time_step(),
            stats: RunStats {
                ranks: config.ranks,
                leaf_counts: vec![leaves],
                ..RunStats::default()
            },
            config,
            world,
            velocity,
            params,
            time: 0.0,
            step: 0,
            reports: Vec::new(),
            record_regrids: false,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn forest(&self) -> &Arc<Forest> {
        self.world.forest()
    }

    pub fn patches(&self) -> Vec<Patch> {
        self.world.patches()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> RegridParams {
        self.params
    }

    fn adaptive(&self) -> bool {
        !self.config.uniform && self.params.lmin < self.params.lmax
    }

    /// One time step: ghost fill, regrid when due, advance, CFL reduction.
    pub fn advance(&mut self) -> Result<f64> {
        self.world.update_ghost()?;
        if self.adaptive() && self.step > 0 && self.step.is_multiple_of(self.config.regrid_every())
        {
            self.regrid()?;
        }
        let cfl = match self.velocity {
            Some(vel) => {
                let dt = self.dt;
                let lim = self.config.advection_limiter;
                let maxima = self.world.phase(move |rank, _| {
                    let start = Instant::now();
                    let mut local = 0.0f64;
                    for (_, p) in rank.local_patches_mut() {
                        local = local.max(advance_patch(p, &vel, dt, lim)?);
                    }
                    rank.timers
                        .add(Category::Advance, start.elapsed().as_secs_f64());
                    Ok(local)
                })?;
                let start = Instant::now();
                let cfl = cfl_sync(&maxima)?;
                self.world
                    .timers
                    .add(Category::CflSync, start.elapsed().as_secs_f64());
                cfl
            }
            None => 0.0,
        };
        let forest = self.world.forest();
        self.stats.cell_updates += (forest.len() * self.config.mx * self.config.mx) as u64;
        self.stats
            .grids_per_rank
            .push(forest.len() as f64 / forest.num_ranks() as f64);
        self.stats.max_cfl = self.stats.max_cfl.max(cfl);
        self.stats.steps += 1;
        self.step += 1;
        self.time += self.dt;
        Ok(cfl)
    }

    /// Tags, grades, adapts, transfers and repartitions; ghost cells must be
    /// valid on entry and are valid on exit.
    pub fn regrid(&mut self) -> Result<RegridReport> {
        let start = Instant::now();
        let before = self.world.timers;
        let p = self.params;
        let old = self.world.forest().clone();
        let ranks = old.num_ranks();

        // Siblings are always neighbors, so one exchange of spreads lets
        // every rank decide coarsening for its own leaves.
        let mut spreads = vec![0.0; old.len()];
        let mut own: Vec<HashMap<usize, Tag>> = vec![HashMap::new(); ranks];
        for (r, tags) in own.iter_mut().enumerate() {
            for (k, patch) in self.world.rank(r).local_patches() {
                spreads[k] = patch.spread();
                tags.insert(
                    k,
                    Tag {
                        target: patch.level(),
                        spread: spreads[k],
                    },
                );
            }
        }
        let remote = self.world.exchange_tags(own.clone())?;
        let mut raw = vec![0u8; old.len()];
        for r in 0..ranks {
            let seen = |k: usize| {
                own[r]
                    .get(&k)
                    .or_else(|| remote[r].get(&k))
                    .map_or(f64::NAN, |t| t.spread)
            };
            for k in old.rank_range(r) {
                raw[k] = raw_target(&old, k, seen, &p);
            }
        }

        let mut targets = raw.clone();
        if p.smooth {
            let table = old.neighbor_table()?;
            let mut own: Vec<HashMap<usize, Tag>> = vec![HashMap::new(); ranks];
            for (r, tags) in own.iter_mut().enumerate() {
                for k in old.rank_range(r) {
                    tags.insert(
                        k,
                        Tag {
                            target: raw[k],
                            spread: spreads[k],
                        },
                    );
                }
            }
            let remote = self.world.exchange_tags(own.clone())?;
            for r in 0..ranks {
                let seen = |k: usize| {
                    own[r]
                        .get(&k)
                        .or_else(|| remote[r].get(&k))
                        .map_or(0, |t| t.target)
                };
                for k in old.rank_range(r) {
                    targets[k] = graded_target(&table[k], raw[k], seen, &p);
                }
            }
        }

        let mut new = adapt_to_targets(&old, &targets)?;
        new.partition(self.config.ranks);
        let patches = self.world.take_patches();
        let moved = transfer(&old, patches, &new)?;
        let new = Arc::new(new);
        self.world.reset(Arc::unwrap_or_clone(new.clone()), moved)?;
        self.world.update_ghost()?;
        self.stats.leaf_counts.push(new.len());

        let wall = start.elapsed().as_secs_f64();
        let mut spent_elsewhere = self.world.timers;
        for c in Category::ALL {
            spent_elsewhere.add(c, -before.get(c));
        }
        self.world
            .timers
            .add(Category::Regrid, (wall - spent_elsewhere.total()).max(0.0));
        let report = RegridReport {
            old_forest: old,
            new_forest: self.world.forest().clone(),
            spreads,
            raw_targets: raw,
            targets,
        };
        if self.record_regrids {
            self.reports.push(report.clone());
        }
        Ok(report)
    }

    /// Runs the configured number of steps.
    pub fn run(&mut self) -> Result<&RunStats> {
        let start = Instant::now();
        for _ in 0..self.config.steps {
            self.advance()?;
        }
        // Final ghost fill so that dumps include valid ghost cells.
        self.world.update_ghost()?;
        self.stats.wall += start.elapsed().as_secs_f64();
        self.stats.timers = self.world.timers;
        Ok(&self.stats)
    }
}

/// Graded targets computed by a single actor over the whole forest.
pub fn serial_grade(forest: &Forest, raw: &[u8], p: &RegridParams) -> Result<Vec<u8>> {
    if !p.smooth {
        return Ok(raw.to_vec());
    }
    let table = forest.neighbor_table()?;
    Ok((0..forest.len())
        .map(|k| graded_target(&table[k], raw[k], |i| raw[i], p))
        .collect())
}

/// Patches of `forest` sampled from the configured initial field. Bricks
/// use block coordinates, so every block holds the same problem; on the
/// cubed sphere the disks are placed by world-space direction.
pub fn initial_patches(forest: &Forest, layout: Layout, cfg: &RunConfig) -> Vec<Patch> {
    let conn = forest.connectivity().clone();
    forest
        .leaves()
        .iter()
        .map(|q| {
            let mut p = Patch::new(*q, layout);
            match cfg.domain {
                Domain::Brick => p.fill_from_function(|x, y| cfg.initial.value(x, y)),
                Domain::CubedSphere => {
                    let b = q.block();
                    p.fill_from_function(|x, y| {
                        let w = conn.map_to_world(b, x, y);
                        // Longitude and latitude scaled to the unit square.
                        let lon = w[1].atan2(w[0]) / std::f64::consts::TAU + 0.5;
                        let lat = w[2].clamp(-1.0, 1.0).asin() / std::f64::consts::PI + 0.5;
                        cfg.initial.value(lon, lat)
                    })
                }
            }
            p
        })
        .collect()
}
