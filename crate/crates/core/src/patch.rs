//! Fixed-size cell storage attached to one leaf, and the cell-level ghost
//! operators: copy, average, interpolate and physical boundary fill.

use std::ops::Range;

use crate::connectivity::Direction;
use crate::error::{Error, Result};
use crate::forest::Quadrant;
use crate::transforms::{CoarseFineTransform, Index, SameSizeTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Limiter {
    #[default]
    Minmod,
    /// Central differences; reproduces linear data exactly.
    None,
}

impl Limiter {
    #[inline]
    pub fn slope(self, left: f64, right: f64) -> f64 {
        match self {
            Limiter::Minmod => {
                if left * right <= 0.0 {
                    0.0
                } else if left.abs() < right.abs() {
                    left
                } else {
                    right
                }
            }
            Limiter::None => 0.5 * (left + right),
        }
    }
}

/// Shape shared by every patch of a run: `M` interior cells per side, `m`
/// ghost layers, interpolation stencil width `w` and slope limiter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub mx: usize,
    pub mg: usize,
    pub width: usize,
    pub limiter: Limiter,
}

impl Layout {
    /// Validates the sizes. Ghost filling relies on `m <= M/4` and
    /// `w <= M/2`, so violating either is a configuration error.
    pub fn new(mx: usize, mg: usize, width: usize, limiter: Limiter) -> Result<Self> {
        if mx < 4 || !mx.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch size M={mx} must be even and at least 4"
            )));
        }
        if mg == 0 {
            return Err(Error::Config("at least one ghost layer is required".into()));
        }
        if 4 * mg > mx {
            return Err(Error::Config(format!(
                "ghost layers m={mg} exceed the bound m <= M/4 = {} for M={mx}",
                mx / 4
            )));
        }
        if width < 3 {
            return Err(Error::Config(format!(
                "stencil width w={width} is too narrow; the limited gradient needs 3 cells"
            )));
        }
        if 2 * width > mx {
            return Err(Error::Config(format!(
                "stencil width w={width} exceeds the bound w <= M/2 = {} for M={mx}",
                mx / 2
            )));
        }
        Ok(Layout {
            mx,
            mg,
            width,
            limiter,
        })
    }

    /// Cells per side including ghosts.
    pub fn stride(&self) -> usize {
        self.mx + 2 * self.mg
    }

    pub fn cells(&self) -> usize {
        self.stride() * self.stride()
    }

    #[inline]
    pub fn idx(&self, i: i32, j: i32) -> usize {
        let m = self.mg as i32;
        debug_assert!(i >= -m && j >= -m && i < self.mx as i32 + m && j < self.mx as i32 + m);
        (j + m) as usize * self.stride() + (i + m) as usize
    }

    /// Ghost cells making up a face strip (optionally one half of it) or a
    /// corner square, as `(i range, j range)`.
    pub fn region(&self, dir: Direction, half: Option<u8>) -> (Range<i32>, Range<i32>) {
        let mx = self.mx as i32;
        let m = self.mg as i32;
        let lo = -m..0;
        let hi = mx..mx + m;
        let along = match half {
            None => 0..mx,
            Some(h) => {
                let s = h as i32 * mx / 2;
                s..s + mx / 2
            }
        };
        match dir {
            Direction::Face(0) => (lo, along),
            Direction::Face(1) => (hi, along),
            Direction::Face(2) => (along, lo),
            Direction::Face(_) => (along, hi),
            Direction::Corner(c) => (
                if c & 1 == 1 { hi.clone() } else { lo.clone() },
                if c & 2 == 2 { hi } else { lo },
            ),
        }
    }

    /// The ghost region holding cell `(i, j)`, or `None` for interior cells.
    pub fn region_of(&self, i: i32, j: i32) -> Option<Direction> {
        let mx = self.mx as i32;
        let sx = if i < 0 {
            -1
        } else if i >= mx {
            1
        } else {
            0
        };
        let sy = if j < 0 {
            -1
        } else if j >= mx {
            1
        } else {
            0
        };
        Direction::from_offset([sx, sy])
    }
}

/// How a ghost region was last filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RegionKind {
    #[default]
    Unset,
    Copy,
    Average,
    Interpolate,
    Boundary,
}

impl RegionKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => RegionKind::Unset,
            1 => RegionKind::Copy,
            2 => RegionKind::Average,
            3 => RegionKind::Interpolate,
            4 => RegionKind::Boundary,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub quad: Quadrant,
    pub layout: Layout,
    q: Vec<f64>,
    kinds: [RegionKind; 8],
    pub target_level: u8,
}

impl Patch {
    pub fn new(quad: Quadrant, layout: Layout) -> Self {
        Patch {
            quad,
            layout,
            q: vec![0.0; layout.cells()],
            kinds: [RegionKind::Unset; 8],
            target_level: quad.level,
        }
    }

    pub fn from_data(quad: Quadrant, layout: Layout, q: Vec<f64>) -> Self {
        assert_eq!(q.len(), layout.cells());
        Patch {
            q,
            ..Patch::new(quad, layout)
        }
    }

    pub fn level(&self) -> u8 {
        self.quad.level
    }

    pub fn mx(&self) -> i32 {
        self.layout.mx as i32
    }

    pub fn mg(&self) -> i32 {
        self.layout.mg as i32
    }

    /// Cell width in block units.
    pub fn h(&self) -> f64 {
        self.quad.edge() / self.layout.mx as f64
    }

    #[inline]
    pub fn get(&self, i: i32, j: i32) -> f64 {
        self.q[self.layout.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: i32, j: i32, v: f64) {
        let k = self.layout.idx(i, j);
        self.q[k] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.q
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    pub fn kinds(&self) -> &[RegionKind; 8] {
        &self.kinds
    }

    pub fn set_kinds(&mut self, kinds: [RegionKind; 8]) {
        self.kinds = kinds;
    }

    pub fn kind(&self, dir: Direction) -> RegionKind {
        self.kinds[dir.index()]
    }

    pub fn interior(&self) -> impl Iterator<Item = Index> + '_ {
        let mx = self.mx();
        (0..mx).flat_map(move |j| (0..mx).map(move |i| [i, j]))
    }

    /// Block-frame center of cell `(i, j)`.
    pub fn cell_center(&self, i: i32, j: i32) -> [f64; 2] {
        let o = self.quad.origin();
        let h = self.h();
        [o[0] + (i as f64 + 0.5) * h, o[1] + (j as f64 + 0.5) * h]
    }

    /// Sets every cell, ghosts included, to `f` at the cell center in block
    /// coordinates.
    pub fn fill_from_function(&mut self, f: impl Fn(f64, f64) -> f64) {
        let (m, mx) = (self.mg(), self.mx());
        for j in -m..mx + m {
            for i in -m..mx + m {
                let c = self.cell_center(i, j);
                self.set(i, j, f(c[0], c[1]));
            }
        }
    }

    /// Largest minus smallest interior value.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .interior()
            .map(|[i, j]| self.get(i, j))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }

    pub fn interior_sum(&self) -> f64 {
        self.interior().map(|[i, j]| self.get(i, j)).sum()
    }

    pub fn tag_refine(&self, tau_r: f64, max_level: u8) -> bool {
        self.level() < max_level && self.spread() > tau_r
    }

    pub fn tag_coarsen(family: [&Patch; 4], tau_c: f64, min_level: u8) -> bool {
        family[0].level() > min_level && family.iter().all(|p| p.spread() < tau_c)
    }

    /// Fills ghost cells of `region` with values of the same-size patch
    /// `src`, where `t` maps this patch's indices into `src`'s.
    pub fn copy_ghost(&mut self, src: &Patch, dir: Direction, t: &SameSizeTransform) -> Result<()> {
        if src.level() != self.level() {
            return Err(Error::LevelMismatch {
                expected: self.level(),
                found: src.level(),
            });
        }
        let (ir, jr) = self.layout.region(dir, None);
        let probe = t.apply([ir.start, jr.start]);
        if src.layout.region_of(probe[0], probe[1]).is_some() {
            return Err(Error::RegionNotAdjacent {
                quad: self.quad,
                region: dir.name(),
            });
        }
        for j in jr {
            for i in ir.clone() {
                let s = t.apply([i, j]);
                debug_assert!(src.layout.region_of(s[0], s[1]).is_none());
                self.set(i, j, src.get(s[0], s[1]));
            }
        }
        self.kinds[dir.index()] = RegionKind::Copy;
        Ok(())
    }

    /// Fills this coarse patch's ghost cells in `region` (half a face when
    /// `half` is set) with the mean of the four covering cells of the fine
    /// patch `src`. `t` maps this patch's indices into `src`'s.
    pub fn average_ghost(
        &mut self,
        src: &Patch,
        dir: Direction,
        half: Option<u8>,
        t: &CoarseFineTransform,
    ) -> Result<()> {
        if src.level() != self.level() + 1 {
            return Err(Error::LevelMismatch {
                expected: self.level() + 1,
                found: src.level(),
            });
        }
        let (ir, jr) = self.layout.region(dir, half);
        let probe = t.fine_indices([ir.start, jr.start])[0];
        if src.layout.region_of(probe[0], probe[1]).is_some() {
            return Err(Error::RegionNotAdjacent {
                quad: self.quad,
                region: dir.name(),
            });
        }
        for j in jr {
            for i in ir.clone() {
                let f = t.fine_indices([i, j]);
                let v = f.map(|c| src.get(c[0], c[1]));
                // Pairwise sums keep a constant field exactly constant.
                let sum = (v[0] + v[1]) + (v[2] + v[3]);
                self.set(i, j, 0.25 * sum);
            }
        }
        self.kinds[dir.index()] = RegionKind::Average;
        Ok(())
    }

    /// Fills this fine patch's ghost cells in `region` from the coarse patch
    /// `src` by limited linear reconstruction. `t` maps `src`'s indices into
    /// this patch's. Fails if the stencil would read a ghost region of `src`
    /// that was itself interpolated from a coarser level.
    pub fn interpolate_ghost(
        &mut self,
        src: &Patch,
        dir: Direction,
        t: &CoarseFineTransform,
    ) -> Result<()> {
        if src.level() + 1 != self.level() {
            return Err(Error::LevelMismatch {
                expected: self.level() - 1,
                found: src.level(),
            });
        }
        let limiter = self.layout.limiter;
        let (ir, jr) = self.layout.region(dir, None);
        for j in jr {
            for i in ir.clone() {
                let ([ci, cj], d) = t.coarse_index([i, j]);
                if src.layout.region_of(ci, cj).is_some() {
                    return Err(Error::RegionNotAdjacent {
                        quad: self.quad,
                        region: dir.name(),
                    });
                }
                for [si, sj] in [[ci - 1, cj], [ci + 1, cj], [ci, cj - 1], [ci, cj + 1]] {
                    if let Some(r) = src.layout.region_of(si, sj) {
                        match src.kind(r) {
                            RegionKind::Copy | RegionKind::Average | RegionKind::Boundary => {}
                            RegionKind::Interpolate | RegionKind::Unset => {
                                return Err(Error::LocalityViolation { quad: self.quad });
                            }
                        }
                    }
                }
                let qc = src.get(ci, cj);
                let sx = limiter.slope(qc - src.get(ci - 1, cj), src.get(ci + 1, cj) - qc);
                let sy = limiter.slope(qc - src.get(ci, cj - 1), src.get(ci, cj + 1) - qc);
                let v = qc + (sx * (0.25 * d[0] as f64) + sy * (0.25 * d[1] as f64));
                self.set(i, j, v);
            }
        }
        self.kinds[dir.index()] = RegionKind::Interpolate;
        Ok(())
    }

    /// Zeroth-order extrapolation into an exterior region. `boundary[d]`
    /// flags the directions (indexed as [`Direction::index`]) that have no
    /// neighbor. A corner clamps along the axes whose adjacent face is
    /// exterior, or along both when neither is.
    pub fn apply_physbc(&mut self, dir: Direction, boundary: &[bool; 8]) -> Result<()> {
        if !boundary[dir.index()] {
            return Err(Error::NotPhysicalBoundary {
                quad: self.quad,
                region: dir.name(),
            });
        }
        let mx = self.mx();
        let (clamp_x, clamp_y) = match dir {
            Direction::Face(f) => (f < 2, f >= 2),
            Direction::Corner(c) => {
                let [fx, fy] = Direction::corner_faces(c);
                match (boundary[fx as usize], boundary[fy as usize]) {
                    (false, false) => (true, true),
                    pair => pair,
                }
            }
        };
        let (ir, jr) = self.layout.region(dir, None);
        for j in jr {
            for i in ir.clone() {
                let si = if clamp_x { i.clamp(0, mx - 1) } else { i };
                let sj = if clamp_y { j.clamp(0, mx - 1) } else { j };
                let v = self.get(si, sj);
                self.set(i, j, v);
            }
        }
        self.kinds[dir.index()] = RegionKind::Boundary;
        Ok(())
    }

    /// Patches covering this one `levels` levels finer, in global order,
    /// filled by limited linear reconstruction of each cell. One level
    /// reproduces the ghost interpolation formula exactly.
    pub fn refine(&self, levels: u8) -> Vec<Patch> {
        assert!(levels >= 1);
        let mx = self.mx();
        let n = 1i32 << levels;
        let limiter = self.layout.limiter;
        let mut slopes = vec![[0.0f64; 2]; (mx * mx) as usize];
        for [i, j] in self.interior() {
            let q = self.get(i, j);
            slopes[(j * mx + i) as usize] = [
                limiter.slope(q - self.get(i - 1, j), self.get(i + 1, j) - q),
                limiter.slope(q - self.get(i, j - 1), self.get(i, j + 1) - q),
            ];
        }
        let offset = |sub: i32| (2 * sub + 1) as f64 / (2 * n) as f64 - 0.5;
        let mut out = Vec::with_capacity((n * n) as usize);
        let mut descendants: Vec<Quadrant> = (0..n)
            .flat_map(|dy| {
                (0..n).map(move |dx| Quadrant {
                    block: self.quad.block,
                    level: self.quad.level + levels,
                    x: (self.quad.x << levels) + dx as u32,
                    y: (self.quad.y << levels) + dy as u32,
                })
            })
            .collect();
        descendants.sort_by_key(|q| q.morton());
        for quad in descendants {
            let mut child = Patch::new(quad, self.layout);
            let bx = (quad.x - (self.quad.x << levels)) as i32 * mx;
            let by = (quad.y - (self.quad.y << levels)) as i32 * mx;
            for j in 0..mx {
                for i in 0..mx {
                    let (gx, gy) = (bx + i, by + j);
                    let (pi, pj) = (gx / n, gy / n);
                    let s = slopes[(pj * mx + pi) as usize];
                    let v = self.get(pi, pj) + (s[0] * offset(gx % n) + s[1] * offset(gy % n));
                    child.set(i, j, v);
                }
            }
            out.push(child);
        }
        out
    }

    pub fn interpolate_to_children(&self) -> [Patch; 4] {
        let kids = self.refine(1);
        kids.try_into().expect("one level yields four children")
    }

    /// Parent whose interior cells are the means of the children's cells.
    /// `children` must be in child order.
    pub fn average_to_parent(children: [&Patch; 4]) -> Result<Patch> {
        let quads: Vec<Quadrant> = children.iter().map(|p| p.quad).collect();
        let parent_quad = quads[0].parent().ok_or(Error::NotAFamily)?;
        if quads != parent_quad.children() {
            return Err(Error::NotAFamily);
        }
        let layout = children[0].layout;
        let mx = layout.mx as i32;
        let half = mx / 2;
        let mut parent = Patch::new(parent_quad, layout);
        for j in 0..mx {
            for i in 0..mx {
                let k = (i / half + 2 * (j / half)) as usize;
                let c = children[k];
                let (fi, fj) = (2 * (i % half), 2 * (j % half));
                let sum = (c.get(fi, fj) + c.get(fi + 1, fj))
                    + (c.get(fi, fj + 1) + c.get(fi + 1, fj + 1));
                parent.set(i, j, 0.25 * sum);
            }
        }
        Ok(parent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::Orientation;

    fn layout() -> Layout {
        Layout::new(8, 2, 3, Limiter::Minmod).unwrap()
    }

    #[test]
    fn layout_enforces_bounds() {
        assert!(Layout::new(8, 3, 3, Limiter::Minmod).is_err());
        assert!(Layout::new(8, 2, 5, Limiter::Minmod).is_err());
        assert!(Layout::new(32, 8, 16, Limiter::Minmod).is_ok());
    }

    #[test]
    fn fill_linear_in_x() {
        let mut p = Patch::new(Quadrant::root(0), layout());
        p.fill_from_function(|x, _| x);
        for [i, j] in p.interior().collect::<Vec<_>>() {
            assert_eq!(p.get(i, j), (i as f64 + 0.5) / 8.0);
        }
    }

    #[test]
    fn average_of_one_to_four() {
        let l = layout();
        let fine = Quadrant::new(0, 1, 1, 0);
        let coarse_q = Quadrant::new(0, 0, 0, 0);
        let mut src = Patch::new(fine, l);
        src.set(0, 0, 1.0);
        src.set(1, 0, 2.0);
        src.set(0, 1, 3.0);
        src.set(1, 1, 4.0);
        let mut dst = Patch::new(coarse_q, l);
        let t = CoarseFineTransform::new(Orientation::IDENTITY, [8, 0], 8);
        dst.average_ghost(&src, Direction::Face(1), Some(0), &t)
            .unwrap();
        assert_eq!(dst.get(8, 0), 2.5);
    }

    #[test]
    fn physbc_copies_edge_column() {
        let mut p = Patch::new(Quadrant::root(0), layout());
        for j in 0..8 {
            for i in 0..8 {
                p.set(i, j, (i + 10 * j) as f64);
            }
        }
        let mut boundary = [false; 8];
        boundary[0] = true;
        p.apply_physbc(Direction::Face(0), &boundary).unwrap();
        assert_eq!(p.get(-1, 3), 30.0);
        assert_eq!(p.get(-2, 3), 30.0);
        assert!(p.apply_physbc(Direction::Face(1), &boundary).is_err());
    }

    #[test]
    fn refine_then_average_round_trips() {
        let mut p = Patch::new(Quadrant::new(0, 2, 1, 3), layout());
        p.fill_from_function(|x, y| (7.0 * x).sin() + y * y);
        let kids = p.interpolate_to_children();
        let back = Patch::average_to_parent([&kids[0], &kids[1], &kids[2], &kids[3]]).unwrap();
        for [i, j] in p.interior().collect::<Vec<_>>() {
            assert!((back.get(i, j) - p.get(i, j)).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
