//! Single-actor ghost filling over a whole forest.
//!
//! Each leaf contributes three lists of operations: copy/average into its
//! coarse ghost regions, interpolation into its fine ghost regions, and
//! exterior boundary fills. The serial plan runs them in four level sweeps:
//! coarse regions from the coarsest level up, boundary fills, interpolation
//! into each finer level, and boundary fills again.

use smallvec::SmallVec;

use crate::connectivity::Direction;
use crate::error::{Error, Result};
use crate::forest::{Forest, NeighborInfo};
use crate::patch::Patch;
use crate::transforms::{CoarseFineTransform, SameSizeTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GhostOp {
    Copy {
        dst: usize,
        src: usize,
        dir: Direction,
        t: SameSizeTransform,
    },
    Average {
        dst: usize,
        src: usize,
        dir: Direction,
        half: Option<u8>,
        t: CoarseFineTransform,
    },
    Interpolate {
        dst: usize,
        src: usize,
        dir: Direction,
        t: CoarseFineTransform,
    },
    PhysBc {
        dst: usize,
        dir: Direction,
        boundary: [bool; 8],
    },
}

impl GhostOp {
    pub fn dst(&self) -> usize {
        match *self {
            GhostOp::Copy { dst, .. }
            | GhostOp::Average { dst, .. }
            | GhostOp::Interpolate { dst, .. }
            | GhostOp::PhysBc { dst, .. } => dst,
        }
    }

    pub fn src(&self) -> Option<usize> {
        match *self {
            GhostOp::Copy { src, .. }
            | GhostOp::Average { src, .. }
            | GhostOp::Interpolate { src, .. } => Some(src),
            GhostOp::PhysBc { .. } => None,
        }
    }

    pub fn dir(&self) -> Direction {
        match *self {
            GhostOp::Copy { dir, .. }
            | GhostOp::Average { dir, .. }
            | GhostOp::Interpolate { dir, .. }
            | GhostOp::PhysBc { dir, .. } => dir,
        }
    }
}

/// Ghost operations whose destination is one leaf.
#[derive(Clone, Debug, Default)]
pub struct LeafOps {
    pub coarse: SmallVec<[GhostOp; 8]>,
    pub interp: SmallVec<[GhostOp; 4]>,
    pub bc: SmallVec<[GhostOp; 4]>,
}

impl LeafOps {
    pub fn for_leaf(forest: &Forest, leaf: usize, row: &[NeighborInfo; 8], mx: i32) -> Self {
        let q = forest.leaves()[leaf];
        let mut ops = LeafOps::default();
        let boundary: [bool; 8] = std::array::from_fn(|k| row[k].is_boundary());
        for dir in Direction::ALL {
            match &row[dir.index()] {
                NeighborInfo::Boundary => ops.bc.push(GhostOp::PhysBc {
                    dst: leaf,
                    dir,
                    boundary,
                }),
                NeighborInfo::SameSize(n) => ops.coarse.push(GhostOp::Copy {
                    dst: leaf,
                    src: n.index,
                    dir,
                    t: SameSizeTransform::between(&q, &n.quad, &n.map, mx),
                }),
                NeighborInfo::HalfSize(ns) => {
                    for n in ns {
                        ops.coarse.push(GhostOp::Average {
                            dst: leaf,
                            src: n.index,
                            dir,
                            half: dir.is_face().then_some(n.which_half),
                            t: CoarseFineTransform::between(&q, &n.quad, &n.map.inverse(), mx),
                        });
                    }
                }
                NeighborInfo::DoubleSize(n) => ops.interp.push(GhostOp::Interpolate {
                    dst: leaf,
                    src: n.index,
                    dir,
                    t: CoarseFineTransform::between(&n.quad, &q, &n.map, mx),
                }),
            }
        }
        ops
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepClass {
    Coarse,
    Boundary,
    Interpolate,
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub class: SweepClass,
    /// Level of the patches written by this sweep.
    pub level: u8,
    pub ops: Vec<GhostOp>,
}

#[derive(Clone, Debug)]
pub struct GhostFillPlan {
    pub leaf_ops: Vec<LeafOps>,
    pub sweeps: Vec<Sweep>,
    pub forest_version: u64,
}

impl GhostFillPlan {
    pub fn ops(&self) -> impl Iterator<Item = &GhostOp> {
        self.sweeps.iter().flat_map(|s| s.ops.iter())
    }

    pub fn execute<S: PatchStore + ?Sized>(&self, store: &mut S) -> Result<()> {
        for op in self.ops() {
            execute_op(op, store)?;
        }
        Ok(())
    }
}

/// Per-leaf operation lists for every leaf of a balanced forest.
pub fn leaf_ops(forest: &Forest, mx: i32) -> Result<Vec<LeafOps>> {
    let table = forest.neighbor_table()?;
    Ok((0..forest.len())
        .map(|i| LeafOps::for_leaf(forest, i, &table[i], mx))
        .collect())
}

pub fn build_plan(forest: &Forest, mx: i32, lmin: u8, lmax: u8) -> Result<GhostFillPlan> {
    let leaf_ops = leaf_ops(forest, mx)?;
    let at_level = |level: u8| {
        forest
            .leaves()
            .iter()
            .enumerate()
            .filter(move |(_, q)| q.level == level)
            .map(|(i, _)| i)
    };
    let collect = |level: u8, pick: &dyn Fn(&LeafOps) -> &[GhostOp]| -> Vec<GhostOp> {
        at_level(level)
            .flat_map(|i| pick(&leaf_ops[i]).iter().copied())
            .collect()
    };
    let mut sweeps = Vec::new();
    for level in lmin..=lmax {
        sweeps.push(Sweep {
            class: SweepClass::Coarse,
            level,
            ops: collect(level, &|o| &o.coarse),
        });
    }
    // With a single level there is no later boundary pass, so the first one
    // must cover it.
    let first_bc_end = if lmin == lmax { lmax + 1 } else { lmax };
    for level in lmin..first_bc_end {
        sweeps.push(Sweep {
            class: SweepClass::Boundary,
            level,
            ops: collect(level, &|o| &o.bc),
        });
    }
    for level in lmin..lmax {
        sweeps.push(Sweep {
            class: SweepClass::Interpolate,
            level: level + 1,
            ops: collect(level + 1, &|o| &o.interp),
        });
    }
    for level in lmin + 1..=lmax {
        sweeps.push(Sweep {
            class: SweepClass::Boundary,
            level,
            ops: collect(level, &|o| &o.bc),
        });
    }
    sweeps.retain(|s| !s.ops.is_empty());
    Ok(GhostFillPlan {
        leaf_ops,
        sweeps,
        forest_version: forest.version(),
    })
}

/// Fills every ghost cell of `patches` (indexed like the forest's leaves).
pub fn update_ghost(forest: &Forest, patches: &mut [Patch], lmin: u8, lmax: u8) -> Result<()> {
    let mx = patches.first().map_or(8, |p| p.mx());
    build_plan(forest, mx, lmin, lmax)?.execute(patches)
}

/// Storage addressed by global leaf index.
pub trait PatchStore {
    fn patch(&self, leaf: usize) -> Option<&Patch>;
    fn patch_mut(&mut self, leaf: usize) -> Option<&mut Patch>;
    /// Mutable `dst` and shared `src`; `dst != src`.
    fn pair(&mut self, dst: usize, src: usize) -> Option<(&mut Patch, &Patch)>;
}

fn split<T>(items: &mut [T], dst: usize, src: usize) -> (&mut T, &T) {
    debug_assert_ne!(dst, src);
    if dst < src {
        let (a, b) = items.split_at_mut(src);
        (&mut a[dst], &b[0])
    } else {
        let (a, b) = items.split_at_mut(dst);
        (&mut b[0], &a[src])
    }
}

impl PatchStore for [Patch] {
    fn patch(&self, leaf: usize) -> Option<&Patch> {
        self.get(leaf)
    }

    fn patch_mut(&mut self, leaf: usize) -> Option<&mut Patch> {
        self.get_mut(leaf)
    }

    fn pair(&mut self, dst: usize, src: usize) -> Option<(&mut Patch, &Patch)> {
        if dst.max(src) >= self.len() {
            return None;
        }
        Some(split(self, dst, src))
    }
}

impl PatchStore for Vec<Patch> {
    fn patch(&self, leaf: usize) -> Option<&Patch> {
        self.as_slice().patch(leaf)
    }

    fn patch_mut(&mut self, leaf: usize) -> Option<&mut Patch> {
        self.as_mut_slice().patch_mut(leaf)
    }

    fn pair(&mut self, dst: usize, src: usize) -> Option<(&mut Patch, &Patch)> {
        self.as_mut_slice().pair(dst, src)
    }
}

impl PatchStore for [Option<Patch>] {
    fn patch(&self, leaf: usize) -> Option<&Patch> {
        self.get(leaf)?.as_ref()
    }

    fn patch_mut(&mut self, leaf: usize) -> Option<&mut Patch> {
        self.get_mut(leaf)?.as_mut()
    }

    fn pair(&mut self, dst: usize, src: usize) -> Option<(&mut Patch, &Patch)> {
        if dst.max(src) >= self.len() {
            return None;
        }
        let (d, s) = split(self, dst, src);
        Some((d.as_mut()?, s.as_ref()?))
    }
}

/// Runs one ghost operation against `store`.
pub fn execute_op<S: PatchStore + ?Sized>(op: &GhostOp, store: &mut S) -> Result<()> {
    let missing = |leaf| Error::MissingGhostPatch { rank: 0, leaf };
    if let GhostOp::PhysBc { dst, dir, boundary } = *op {
        let p = store.patch_mut(dst).ok_or_else(|| missing(dst))?;
        return p.apply_physbc(dir, &boundary);
    }
    let dst = op.dst();
    let src = op.src().expect("neighbor operations have a source");
    if dst == src {
        // A fully periodic single patch is its own neighbor.
        let copy = store.patch(src).ok_or_else(|| missing(src))?.clone();
        let d = store.patch_mut(dst).ok_or_else(|| missing(dst))?;
        return apply(op, d, &copy);
    }
    if store.patch(src).is_none() {
        return Err(missing(src));
    }
    let (d, s) = store.pair(dst, src).ok_or_else(|| missing(dst))?;
    apply(op, d, s)
}

fn apply(op: &GhostOp, dst: &mut Patch, src: &Patch) -> Result<()> {
    match *op {
        GhostOp::Copy { dir, t, .. } => dst.copy_ghost(src, dir, &t),
        GhostOp::Average { dir, half, t, .. } => dst.average_ghost(src, dir, half, &t),
        GhostOp::Interpolate { dir, t, .. } => dst.interpolate_ghost(src, dir, &t),
        GhostOp::PhysBc { .. } => unreachable!("handled by the caller"),
    }
}
