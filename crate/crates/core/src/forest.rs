//! Leaf storage for a forest of quadtrees.
//!
//! Leaves are kept in one global vector ordered by block id and then by the
//! Morton key of the quadrant's lower-left corner at maximum depth, which is
//! also the order used to partition leaves among ranks.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use smallvec::SmallVec;

use crate::connectivity::{Connectivity, Direction, FrameMap};
use crate::error::{Error, Result};

/// Deepest level representable by the 32-bit coordinates.
pub const MAX_LEVEL: u8 = 29;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadrant {
    pub block: u32,
    pub level: u8,
    pub x: u32,
    pub y: u32,
}

impl fmt::Debug for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q(b{} l{} {},{})",
            self.block, self.level, self.x, self.y
        )
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.block, self.level, self.x, self.y)
    }
}

impl Quadrant {
    pub fn new(block: usize, level: u8, x: u32, y: u32) -> Self {
        debug_assert!(level <= MAX_LEVEL);
        debug_assert!(x < (1u32 << level) && y < (1u32 << level));
        Quadrant {
            block: block as u32,
            level,
            x,
            y,
        }
    }

    pub fn root(block: usize) -> Self {
        Quadrant::new(block, 0, 0, 0)
    }

    pub fn block(&self) -> usize {
        self.block as usize
    }

    /// Quadrants per block edge at this level.
    pub fn extent(&self) -> u32 {
        1 << self.level
    }

    /// Edge length as a fraction of the block edge.
    pub fn edge(&self) -> f64 {
        1.0 / self.extent() as f64
    }

    /// Lower-left corner in block units.
    pub fn origin(&self) -> [f64; 2] {
        let e = self.edge();
        [self.x as f64 * e, self.y as f64 * e]
    }

    /// Interleaved-bit key of the lower-left corner at [`MAX_LEVEL`].
    pub fn morton(&self) -> u64 {
        let shift = MAX_LEVEL - self.level;
        interleave(self.x << shift, self.y << shift)
    }

    /// Children in Morton order: `(0,0), (1,0), (0,1), (1,1)`.
    pub fn children(&self) -> [Quadrant; 4] {
        let (x, y) = (self.x * 2, self.y * 2);
        let l = self.level + 1;
        let b = self.block;
        [
            Quadrant {
                block: b,
                level: l,
                x,
                y,
            },
            Quadrant {
                block: b,
                level: l,
                x: x + 1,
                y,
            },
            Quadrant {
                block: b,
                level: l,
                x,
                y: y + 1,
            },
            Quadrant {
                block: b,
                level: l,
                x: x + 1,
                y: y + 1,
            },
        ]
    }

    pub fn parent(&self) -> Option<Quadrant> {
        (self.level > 0).then(|| Quadrant {
            block: self.block,
            level: self.level - 1,
            x: self.x / 2,
            y: self.y / 2,
        })
    }

    pub fn ancestor(&self, level: u8) -> Quadrant {
        assert!(level <= self.level);
        let s = self.level - level;
        Quadrant {
            block: self.block,
            level,
            x: self.x >> s,
            y: self.y >> s,
        }
    }

    /// Position among its siblings, matching [`Quadrant::children`].
    pub fn child_id(&self) -> usize {
        ((self.x & 1) + 2 * (self.y & 1)) as usize
    }

    /// True if `self` equals or contains `other`.
    pub fn contains(&self, other: &Quadrant) -> bool {
        self.block == other.block
            && self.level <= other.level
            && other.ancestor(self.level) == *self
    }

    fn sort_key(&self) -> (u32, u64, u8) {
        (self.block, self.morton(), self.level)
    }
}

fn interleave(x: u32, y: u32) -> u64 {
    fn spread(v: u32) -> u64 {
        let mut v = v as u64;
        v = (v | (v << 16)) & 0x0000_FFFF_0000_FFFF;
        v = (v | (v << 8)) & 0x00FF_00FF_00FF_00FF;
        v = (v | (v << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
        v = (v | (v << 2)) & 0x3333_3333_3333_3333;
        v = (v | (v << 1)) & 0x5555_5555_5555_5555;
        v
    }
    spread(x) | (spread(y) << 1)
}

/// A neighboring leaf together with the frame map from the querying
/// quadrant's block into the neighbor's block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeighborQuad {
    pub index: usize,
    pub quad: Quadrant,
    pub map: FrameMap,
    /// For half-size face neighbors: 0 for the half nearer the lower end of
    /// the shared face in the querying quadrant's frame, 1 for the other.
    pub which_half: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NeighborInfo {
    Boundary,
    SameSize(NeighborQuad),
    DoubleSize(NeighborQuad),
    HalfSize(SmallVec<[NeighborQuad; 2]>),
}

impl NeighborInfo {
    pub fn quads(&self) -> &[NeighborQuad] {
        match self {
            NeighborInfo::Boundary => &[],
            NeighborInfo::SameSize(n) | NeighborInfo::DoubleSize(n) => std::slice::from_ref(n),
            NeighborInfo::HalfSize(v) => v,
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, NeighborInfo::Boundary)
    }
}

/// Same-size cell position next to a quadrant, possibly in another block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub quad: Quadrant,
    pub map: FrameMap,
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

#[derive(Clone)]
pub struct Forest {
    conn: Arc<Connectivity>,
    leaves: Vec<Quadrant>,
    lookup: HashMap<Quadrant, usize>,
    num_ranks: usize,
    rank_starts: Vec<usize>,
    version: u64,
    table: OnceLock<Arc<Vec<[NeighborInfo; 8]>>>,
}

impl fmt::Debug for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Forest")
            .field("blocks", &self.conn.num_blocks())
            .field("leaves", &self.leaves.len())
            .field("ranks", &self.num_ranks)
            .finish()
    }
}

impl Forest {
    pub fn new_uniform(conn: Arc<Connectivity>, level: u8) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::LevelOutOfRange {
                level: level as u32,
                max: MAX_LEVEL as u32,
            });
        }
        let n = 1u32 << level;
        let mut leaves = Vec::with_capacity(conn.num_blocks() * (n * n) as usize);
        for b in 0..conn.num_blocks() {
            for y in 0..n {
                for x in 0..n {
                    leaves.push(Quadrant::new(b, level, x, y));
                }
            }
        }
        Ok(Forest::from_leaves(conn, leaves, 1))
    }

    /// Builds a forest from an explicit frontier. The caller guarantees the
    /// quadrants tile every block without overlap.
    pub fn from_leaves(conn: Arc<Connectivity>, leaves: Vec<Quadrant>, num_ranks: usize) -> Self {
        let mut forest = Forest {
            conn,
            leaves,
            lookup: HashMap::new(),
            num_ranks: num_ranks.max(1),
            rank_starts: Vec::new(),
            version: 0,
            table: OnceLock::new(),
        };
        forest.rebuild();
        forest
    }

    fn rebuild(&mut self) {
        self.leaves.sort_by_key(Quadrant::sort_key);
        self.lookup = self
            .leaves
            .iter()
            .enumerate()
            .map(|(i, q)| (*q, i))
            .collect();
        self.version = NEXT_VERSION.fetch_add(1, Ordering::Relaxed);
        self.table = OnceLock::new();
        self.assign_ranks();
    }

    fn assign_ranks(&mut self) {
        let n = self.leaves.len();
        let p = self.num_ranks;
        let base = n / p;
        let extra = n % p;
        self.rank_starts.clear();
        let mut start = 0;
        for r in 0..p {
            self.rank_starts.push(start);
            start += base + usize::from(r < extra);
        }
        self.rank_starts.push(n);
    }

    pub fn connectivity(&self) -> &Arc<Connectivity> {
        &self.conn
    }

    pub fn leaves(&self) -> &[Quadrant] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Changes whenever the leaf set or partition changes.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn index_of(&self, q: &Quadrant) -> Option<usize> {
        self.lookup.get(q).copied()
    }

    pub fn is_leaf(&self, q: &Quadrant) -> bool {
        self.lookup.contains_key(q)
    }

    pub fn min_level(&self) -> u8 {
        self.leaves.iter().map(|q| q.level).min().unwrap_or(0)
    }

    pub fn max_level(&self) -> u8 {
        self.leaves.iter().map(|q| q.level).max().unwrap_or(0)
    }

    /// Leaf equal to or containing `q`, if `q` is not subdivided further.
    pub fn containing_leaf(&self, q: &Quadrant) -> Option<usize> {
        (0..=q.level)
            .rev()
            .find_map(|l| self.lookup.get(&q.ancestor(l)).copied())
    }

    pub fn refine_leaf(&mut self, q: &Quadrant) -> Result<[Quadrant; 4]> {
        self.adapt(std::slice::from_ref(q), &[])?;
        Ok(q.children())
    }

    /// Replaces four sibling leaves by their parent.
    pub fn coarsen_family(&mut self, family: &[Quadrant]) -> Result<Quadrant> {
        let parent = family_parent(family)?;
        for q in family {
            if !self.is_leaf(q) {
                return Err(Error::NotALeaf(*q));
            }
        }
        self.adapt(&[], &[parent])?;
        Ok(parent)
    }

    /// Refines every quadrant in `refine` and coarsens every family whose
    /// parent is listed in `coarsen`, then rebuilds ordering and partition.
    pub fn adapt(&mut self, refine: &[Quadrant], coarsen: &[Quadrant]) -> Result<()> {
        let mut set: HashSet<Quadrant> = self.leaves.iter().copied().collect();
        for q in refine {
            if q.level >= MAX_LEVEL {
                return Err(Error::LevelOutOfRange {
                    level: q.level as u32 + 1,
                    max: MAX_LEVEL as u32,
                });
            }
            if !set.remove(q) {
                return Err(Error::NotALeaf(*q));
            }
            set.extend(q.children());
        }
        for parent in coarsen {
            let kids = parent.children();
            if !kids.iter().all(|k| set.contains(k)) {
                return Err(Error::NotAFamily);
            }
            for k in &kids {
                set.remove(k);
            }
            set.insert(*parent);
        }
        self.leaves = set.into_iter().collect();
        self.rebuild();
        Ok(())
    }

    /// Same-size position adjacent to `q` in direction `dir`, following block
    /// links. `None` at physical boundaries, and at corners where the two
    /// ways around a block vertex disagree (a vertex shared by three blocks).
    pub fn candidate(&self, q: &Quadrant, dir: Direction) -> Option<Candidate> {
        let off = dir.offset();
        let lim = 2i64 << q.level;
        let center = [
            2 * q.x as i64 + 1 + 2 * off[0] as i64,
            2 * q.y as i64 + 1 + 2 * off[1] as i64,
        ];
        let outside = |c: [i64; 2]| [c[0] < 0 || c[0] >= lim, c[1] < 0 || c[1] >= lim];
        let exit_face = |c: [i64; 2], axis: usize| -> u8 {
            if axis == 0 {
                if c[0] < 0 {
                    0
                } else {
                    1
                }
            } else if c[1] < 0 {
                2
            } else {
                3
            }
        };
        let walk = |first_axis: usize| -> Option<(usize, [i64; 2], FrameMap)> {
            let mut block = q.block();
            let mut c = center;
            let mut map = FrameMap::IDENTITY;
            let mut preferred = first_axis;
            for _ in 0..2 {
                let out = outside(c);
                let axis = if out[preferred] {
                    preferred
                } else if out[1 - preferred] {
                    1 - preferred
                } else {
                    return Some((block, c, map));
                };
                let face = exit_face(c, axis);
                let step = self.conn.face_map(block, face)?;
                c = step.apply_scaled(c, q.level as u32 + 1);
                map = map.then(&step);
                block = self.conn.face_link(block, face)?.block;
                preferred = 1 - preferred;
            }
            let out = outside(c);
            (!out[0] && !out[1]).then_some((block, c, map))
        };
        let to_candidate = |(block, c, map): (usize, [i64; 2], FrameMap)| Candidate {
            quad: Quadrant::new(
                block,
                q.level,
                ((c[0] - 1) / 2) as u32,
                ((c[1] - 1) / 2) as u32,
            ),
            map,
        };
        let both_out = {
            let o = outside(center);
            o[0] && o[1]
        };
        if !both_out {
            return walk(0).map(to_candidate);
        }
        let a = walk(0)?;
        let b = walk(1)?;
        if a.0 != b.0 || a.1 != b.1 || a.2 != b.2 {
            return None;
        }
        Some(to_candidate(a))
    }

    /// Resolves the neighbor of leaf `q` in direction `dir`.
    pub fn neighbor(&self, q: &Quadrant, dir: Direction) -> Result<NeighborInfo> {
        if !self.is_leaf(q) {
            return Err(Error::NotALeaf(*q));
        }
        let Some(cand) = self.candidate(q, dir) else {
            return Ok(NeighborInfo::Boundary);
        };
        let c = cand.quad;
        if let Some(i) = self.containing_leaf(&c) {
            let leaf = self.leaves[i];
            let nq = NeighborQuad {
                index: i,
                quad: leaf,
                map: cand.map,
                which_half: 0,
            };
            return if leaf.level == c.level {
                Ok(NeighborInfo::SameSize(nq))
            } else if leaf.level + 1 == c.level {
                Ok(NeighborInfo::DoubleSize(nq))
            } else {
                Err(Error::Unbalanced {
                    quad: *q,
                    neighbor_level: leaf.level,
                })
            };
        }
        // Candidate is subdivided: keep the children that touch q.
        let scale = q.level as u32 + 2;
        let qc = cand
            .map
            .apply_scaled([4 * q.x as i64 + 2, 4 * q.y as i64 + 2], scale);
        let inverse = cand.map.inverse();
        let mut found: SmallVec<[(i64, NeighborQuad); 2]> = SmallVec::new();
        for child in c.children() {
            let cc = [2 * child.x as i64 + 1, 2 * child.y as i64 + 1];
            let d = [(cc[0] - qc[0]).abs(), (cc[1] - qc[1]).abs()];
            if d[0].max(d[1]) != 3 {
                continue;
            }
            let Some(i) = self.index_of(&child) else {
                return Err(Error::Unbalanced {
                    quad: *q,
                    neighbor_level: q.level + 2,
                });
            };
            let back = inverse.apply_scaled(cc, scale);
            let tangential = match dir {
                Direction::Face(0) | Direction::Face(1) => back[1],
                _ => back[0],
            };
            found.push((
                tangential,
                NeighborQuad {
                    index: i,
                    quad: child,
                    map: cand.map,
                    which_half: 0,
                },
            ));
        }
        found.sort_by_key(|(t, _)| *t);
        let found = found
            .into_iter()
            .enumerate()
            .map(|(h, (_, mut n))| {
                n.which_half = h as u8;
                n
            })
            .collect();
        Ok(NeighborInfo::HalfSize(found))
    }

    /// Refines leaves until every face and corner neighbor pair differs by
    /// at most one level. Returns the number of refinements performed.
    pub fn balance_2to1(&mut self) -> usize {
        let mut set: HashSet<Quadrant> = self.leaves.iter().copied().collect();
        let refined = self.balance_set(&mut set);
        if refined > 0 {
            self.leaves = set.into_iter().collect();
            self.rebuild();
        }
        refined
    }

    fn balance_set(&self, set: &mut HashSet<Quadrant>) -> usize {
        let mut refined = 0;
        loop {
            let mut order: Vec<Quadrant> = set.iter().copied().collect();
            order.sort_by_key(|q| (std::cmp::Reverse(q.level), q.sort_key()));
            let before = refined;
            for q in order {
                if !set.contains(&q) || q.level < 2 {
                    continue;
                }
                for dir in Direction::ALL {
                    let Some(cand) = self.candidate(&q, dir) else {
                        continue;
                    };
                    while let Some(coarse) = (0..=cand.quad.level)
                        .rev()
                        .map(|l| cand.quad.ancestor(l))
                        .find(|a| set.contains(a))
                    {
                        if coarse.level + 1 >= q.level {
                            break;
                        }
                        set.remove(&coarse);
                        set.extend(coarse.children());
                        refined += 1;
                    }
                }
            }
            if refined == before {
                return refined;
            }
        }
    }

    /// Applies `refine` and `coarsen` (family parents), then balances.
    /// Coarsenings that balance would immediately undo are dropped and the
    /// adaptation is retried. Returns the coarsenings actually applied.
    pub fn adapt_balanced(
        &mut self,
        refine: &[Quadrant],
        coarsen: &[Quadrant],
    ) -> Result<Vec<Quadrant>> {
        let mut coarsen: Vec<Quadrant> = coarsen.to_vec();
        loop {
            let mut trial = self.clone();
            trial.adapt(refine, &coarsen)?;
            trial.balance_2to1();
            let undone: HashSet<Quadrant> = coarsen
                .iter()
                .copied()
                .filter(|p| !trial.is_leaf(p))
                .collect();
            if undone.is_empty() {
                *self = trial;
                return Ok(coarsen);
            }
            coarsen.retain(|p| !undone.contains(p));
        }
    }

    /// True if no face or corner neighbor pair differs by more than one level.
    pub fn is_balanced(&self) -> bool {
        self.leaves
            .iter()
            .all(|q| Direction::ALL.iter().all(|&d| self.neighbor(q, d).is_ok()))
    }

    /// Splits the global leaf order into `num_ranks` contiguous segments
    /// whose sizes differ by at most one, larger segments first.
    pub fn partition(&mut self, num_ranks: usize) {
        self.num_ranks = num_ranks.max(1);
        self.assign_ranks();
        self.version = NEXT_VERSION.fetch_add(1, Ordering::Relaxed);
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    pub fn owner(&self, leaf: usize) -> usize {
        self.rank_starts.partition_point(|&s| s <= leaf) - 1
    }

    pub fn rank_range(&self, rank: usize) -> std::ops::Range<usize> {
        self.rank_starts[rank]..self.rank_starts[rank + 1]
    }

    pub fn rank_counts(&self) -> Vec<usize> {
        (0..self.num_ranks)
            .map(|r| self.rank_range(r).len())
            .collect()
    }

    /// Neighbors of every leaf in [`Direction::ALL`] order, cached until the
    /// forest changes. Fails on unbalanced forests.
    pub fn neighbor_table(&self) -> Result<Arc<Vec<[NeighborInfo; 8]>>> {
        if let Some(t) = self.table.get() {
            return Ok(t.clone());
        }
        let mut rows = Vec::with_capacity(self.leaves.len());
        for q in &self.leaves {
            let mut row: [NeighborInfo; 8] = std::array::from_fn(|_| NeighborInfo::Boundary);
            for d in Direction::ALL {
                row[d.index()] = self.neighbor(q, d)?;
            }
            rows.push(row);
        }
        Ok(self.table.get_or_init(|| Arc::new(rows)).clone())
    }

    /// Local leaves of `rank` with at least one face or corner neighbor owned
    /// by another rank.
    pub fn parallel_boundary_leaves(&self, rank: usize) -> Result<Vec<usize>> {
        let table = self.neighbor_table()?;
        Ok(self
            .rank_range(rank)
            .filter(|&i| {
                table[i]
                    .iter()
                    .flat_map(NeighborInfo::quads)
                    .any(|n| self.owner(n.index) != rank)
            })
            .collect())
    }

    /// One line per leaf, `block level x y rank`, in global order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, q) in self.leaves.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                q.block,
                q.level,
                q.x,
                q.y,
                self.owner(i)
            );
        }
        out
    }
}

fn family_parent(family: &[Quadrant]) -> Result<Quadrant> {
    if family.len() != 4 {
        return Err(Error::NotAFamily);
    }
    let parent = family[0].parent().ok_or(Error::NotAFamily)?;
    let mut seen = [false; 4];
    for q in family {
        if q.parent() != Some(parent) {
            return Err(Error::NotAFamily);
        }
        seen[q.child_id()] = true;
    }
    if seen.iter().all(|&s| s) {
        Ok(parent)
    } else {
        Err(Error::NotAFamily)
    }
}
