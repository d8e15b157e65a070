//! Static multiblock topology: which block faces abut which, and how the
//! index axes of neighboring blocks are oriented relative to each other.
//!
//! Faces are numbered `0: -x`, `1: +x`, `2: -y`, `3: +y` and corners
//! `0: (-,-)`, `1: (+,-)`, `2: (-,+)`, `3: (+,+)`, so that corner `k` points
//! along the coarse-fine direction vector `d_k`.

use std::fmt;

use crate::error::{Error, Result};

/// One of the eight signed permutation matrices relating two index frames.
///
/// Codes `0..4` are the in-plane rotations by `0, 90, 180, 270` degrees, codes
/// `4..8` the reflected placements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Orientation(u8);

const MATRICES: [[[i8; 2]; 2]; 8] = [
    [[1, 0], [0, 1]],
    [[0, -1], [1, 0]],
    [[-1, 0], [0, -1]],
    [[0, 1], [-1, 0]],
    [[1, 0], [0, -1]],
    [[0, 1], [1, 0]],
    [[-1, 0], [0, 1]],
    [[0, -1], [-1, 0]],
];

impl Orientation {
    pub const IDENTITY: Orientation = Orientation(0);

    pub fn from_code(code: u8) -> Option<Self> {
        (code < 8).then_some(Orientation(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Orientation> {
        (0..8).map(Orientation)
    }

    /// Row-major 2x2 matrix `A`; `apply(v) = A v`.
    pub fn matrix(self) -> [[i8; 2]; 2] {
        MATRICES[self.0 as usize]
    }

    pub fn from_matrix(m: [[i8; 2]; 2]) -> Option<Self> {
        MATRICES
            .iter()
            .position(|candidate| *candidate == m)
            .map(|code| Orientation(code as u8))
    }

    pub fn apply(self, v: [i64; 2]) -> [i64; 2] {
        let a = self.matrix();
        [
            a[0][0] as i64 * v[0] + a[0][1] as i64 * v[1],
            a[1][0] as i64 * v[0] + a[1][1] as i64 * v[1],
        ]
    }

    pub fn apply_i32(self, v: [i32; 2]) -> [i32; 2] {
        let r = self.apply([v[0] as i64, v[1] as i64]);
        [r[0] as i32, r[1] as i32]
    }

    /// `self.then(other)` is the orientation of `other ∘ self`.
    pub fn then(self, other: Orientation) -> Orientation {
        let a = self.matrix();
        let b = other.matrix();
        let mut c = [[0i8; 2]; 2];
        for (r, row) in c.iter_mut().enumerate() {
            for (col, entry) in row.iter_mut().enumerate() {
                *entry = b[r][0] * a[0][col] + b[r][1] * a[1][col];
            }
        }
        Orientation::from_matrix(c).expect("signed permutations are closed under products")
    }

    pub fn inverse(self) -> Orientation {
        let a = self.matrix();
        Orientation::from_matrix([[a[0][0], a[1][0]], [a[0][1], a[1][1]]])
            .expect("transpose of a signed permutation")
    }

    pub fn determinant(self) -> i8 {
        let a = self.matrix();
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    }
}

/// A face or corner direction of a quadrant or patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Face(u8),
    Corner(u8),
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::Face(0),
        Direction::Face(1),
        Direction::Face(2),
        Direction::Face(3),
        Direction::Corner(0),
        Direction::Corner(1),
        Direction::Corner(2),
        Direction::Corner(3),
    ];

    /// Position in [`Direction::ALL`].
    pub fn index(self) -> usize {
        match self {
            Direction::Face(f) => f as usize,
            Direction::Corner(c) => 4 + c as usize,
        }
    }

    pub fn offset(self) -> [i32; 2] {
        match self {
            Direction::Face(f) => face_normal(f),
            Direction::Corner(c) => corner_offset(c),
        }
    }

    pub fn from_offset(v: [i32; 2]) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.offset() == v)
    }

    pub fn is_face(self) -> bool {
        matches!(self, Direction::Face(_))
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; 8] = [
            "face0", "face1", "face2", "face3", "corner0", "corner1", "corner2", "corner3",
        ];
        NAMES[self.index()]
    }

    /// The faces touching a corner, x-face first.
    pub fn corner_faces(corner: u8) -> [u8; 2] {
        [corner & 1, 2 + ((corner >> 1) & 1)]
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn face_normal(face: u8) -> [i32; 2] {
    match face {
        0 => [-1, 0],
        1 => [1, 0],
        2 => [0, -1],
        3 => [0, 1],
        _ => panic!("face index {face} out of range"),
    }
}

pub fn corner_offset(corner: u8) -> [i32; 2] {
    assert!(corner < 4, "corner index {corner} out of range");
    [
        if corner & 1 == 1 { 1 } else { -1 },
        if corner & 2 == 2 { 1 } else { -1 },
    ]
}

/// Affine map `p -> A p + shift` between the unit-square frames of two
/// blocks, with `shift` in whole block lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrameMap {
    pub orientation: Orientation,
    pub shift: [i64; 2],
}

impl FrameMap {
    pub const IDENTITY: FrameMap = FrameMap {
        orientation: Orientation::IDENTITY,
        shift: [0, 0],
    };

    /// Maps a point given in units of `2^-scale` block lengths.
    pub fn apply_scaled(&self, p: [i64; 2], scale: u32) -> [i64; 2] {
        let r = self.orientation.apply(p);
        [
            r[0] + (self.shift[0] << scale),
            r[1] + (self.shift[1] << scale),
        ]
    }

    pub fn apply_f64(&self, p: [f64; 2]) -> [f64; 2] {
        let a = self.orientation.matrix();
        [
            a[0][0] as f64 * p[0] + a[0][1] as f64 * p[1] + self.shift[0] as f64,
            a[1][0] as f64 * p[0] + a[1][1] as f64 * p[1] + self.shift[1] as f64,
        ]
    }

    /// `self.then(next)` maps through `self` first.
    pub fn then(&self, next: &FrameMap) -> FrameMap {
        let s = next.orientation.apply(self.shift);
        FrameMap {
            orientation: self.orientation.then(next.orientation),
            shift: [s[0] + next.shift[0], s[1] + next.shift[1]],
        }
    }

    pub fn inverse(&self) -> FrameMap {
        let inv = self.orientation.inverse();
        let s = inv.apply(self.shift);
        FrameMap {
            orientation: inv,
            shift: [-s[0], -s[1]],
        }
    }

    /// Maps the axis-aligned square `[lo, lo + size]^2` (units `2^-scale`)
    /// and returns the lower corner of its image.
    pub fn map_square(&self, lo: [i64; 2], size: i64, scale: u32) -> [i64; 2] {
        let a = self.apply_scaled(lo, scale);
        let b = self.apply_scaled([lo[0] + size, lo[1] + size], scale);
        [a[0].min(b[0]), a[1].min(b[1])]
    }
}

/// Target of a linked face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceLink {
    pub block: usize,
    pub face: u8,
    pub orientation: Orientation,
}

/// Geometric placement of a block, used for initial conditions and tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlockGeometry {
    /// Unit square translated to `origin` in the plane.
    Planar { origin: [f64; 2] },
    /// Face of the cube `[-1,1]^3` centered at `center`, with block axes along
    /// `u` and `v` (`u × v = center`), projected gnomonically to the sphere.
    CubeFace {
        center: [i8; 3],
        u: [i8; 3],
        v: [i8; 3],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    Brick {
        nx: usize,
        ny: usize,
        periodic_x: bool,
        periodic_y: bool,
    },
    CubedSphere,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// The reverse link does not lead back, or lacks the inverse orientation.
    Involution,
    /// The orientation does not turn the face normal into the opposite
    /// normal of the target face.
    Orientation,
    /// The face does not map onto the complete target face.
    PartialFace,
    /// Link points at a block or face that does not exist.
    Dangling,
    /// More than four blocks meet at this corner.
    CornerValence(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub block: usize,
    pub face: Option<u8>,
    pub corner: Option<u8>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {}", self.block)?;
        if let Some(face) = self.face {
            write!(f, " face {face}")?;
        }
        if let Some(corner) = self.corner {
            write!(f, " corner {corner}")?;
        }
        write!(f, ": {:?}", self.kind)
    }
}

/// Closed walk around a block corner.
#[derive(Clone, Debug)]
pub struct CornerCycle {
    /// `(block, corner)` visited, starting with the origin.
    pub visits: Vec<(usize, u8)>,
    /// Composite frame map accumulated around the cycle.
    pub holonomy: FrameMap,
}

#[derive(Clone, Debug)]
pub struct Connectivity {
    links: Vec<[Option<FaceLink>; 4]>,
    geometry: Vec<BlockGeometry>,
    kind: DomainKind,
}

impl Connectivity {
    /// Builds a connectivity from explicit links, rejecting inconsistent
    /// tables and corners shared by more than four blocks.
    pub fn from_links(
        links: Vec<[Option<FaceLink>; 4]>,
        geometry: Vec<BlockGeometry>,
    ) -> Result<Self> {
        if links.len() != geometry.len() {
            return Err(Error::Connectivity(format!(
                "{} link rows for {} blocks",
                links.len(),
                geometry.len()
            )));
        }
        let conn = Connectivity {
            links,
            geometry,
            kind: DomainKind::Custom,
        };
        conn.check()?;
        Ok(conn)
    }

    fn check(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(v) => Err(Error::Connectivity(v.to_string())),
        }
    }

    pub fn build_brick(nx: usize, ny: usize, periodic_x: bool, periodic_y: bool) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Connectivity(format!(
                "brick dimensions must be positive, got {nx}x{ny}"
            )));
        }
        let id = |i: usize, j: usize| j * nx + i;
        let link = |block, face| {
            Some(FaceLink {
                block,
                face,
                orientation: Orientation::IDENTITY,
            })
        };
        let mut links = Vec::with_capacity(nx * ny);
        let mut geometry = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let left = if i > 0 {
                    link(id(i - 1, j), 1)
                } else if periodic_x {
                    link(id(nx - 1, j), 1)
                } else {
                    None
                };
                let right = if i + 1 < nx {
                    link(id(i + 1, j), 0)
                } else if periodic_x {
                    link(id(0, j), 0)
                } else {
                    None
                };
                let bottom = if j > 0 {
                    link(id(i, j - 1), 3)
                } else if periodic_y {
                    link(id(i, ny - 1), 3)
                } else {
                    None
                };
                let top = if j + 1 < ny {
                    link(id(i, j + 1), 2)
                } else if periodic_y {
                    link(id(i, 0), 2)
                } else {
                    None
                };
                links.push([left, right, bottom, top]);
                geometry.push(BlockGeometry::Planar {
                    origin: [i as f64, j as f64],
                });
            }
        }
        let conn = Connectivity {
            links,
            geometry,
            kind: DomainKind::Brick {
                nx,
                ny,
                periodic_x,
                periodic_y,
            },
        };
        conn.check()?;
        Ok(conn)
    }

    /// Six-block cubed sphere. Links are derived from the cube geometry by
    /// unfolding each edge, which fixes the orientation table.
    pub fn build_cubed_sphere() -> Self {
        const FACES: [([i8; 3], [i8; 3], [i8; 3]); 6] = [
            ([1, 0, 0], [0, 1, 0], [0, 0, 1]),
            ([0, 1, 0], [-1, 0, 0], [0, 0, 1]),
            ([-1, 0, 0], [0, -1, 0], [0, 0, 1]),
            ([0, -1, 0], [1, 0, 0], [0, 0, 1]),
            ([0, 0, 1], [1, 0, 0], [0, 1, 0]),
            ([0, 0, -1], [0, 1, 0], [1, 0, 0]),
        ];
        let neg = |a: [i8; 3]| [-a[0], -a[1], -a[2]];
        let dot = |a: [i8; 3], b: [i8; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let outward = |b: usize, face: u8| {
            let (_, u, v) = FACES[b];
            match face {
                0 => neg(u),
                1 => u,
                2 => neg(v),
                _ => v,
            }
        };

        let mut links = Vec::with_capacity(6);
        for (b, &(center, u, v)) in FACES.iter().enumerate() {
            let mut row = [None; 4];
            for face in 0..4u8 {
                let n3 = outward(b, face);
                let nb = FACES
                    .iter()
                    .position(|f| f.0 == n3)
                    .expect("every edge direction is a cube face");
                let nface = (0..4u8)
                    .find(|&g| outward(nb, g) == center)
                    .expect("neighbor shares the edge");
                // Unfolding across the edge sends the outward direction to
                // -center and leaves the edge tangent fixed.
                let (img_u, img_v) = match face {
                    0 => (center, v),
                    1 => (neg(center), v),
                    2 => (u, center),
                    _ => (u, neg(center)),
                };
                let (_, nu, nv) = FACES[nb];
                let m = [
                    [dot(img_u, nu), dot(img_v, nu)],
                    [dot(img_u, nv), dot(img_v, nv)],
                ];
                row[face as usize] = Some(FaceLink {
                    block: nb,
                    face: nface,
                    orientation: Orientation::from_matrix(m)
                        .expect("cube unfolding is a signed permutation"),
                });
            }
            links.push(row);
        }
        let geometry = FACES
            .iter()
            .map(|&(center, u, v)| BlockGeometry::CubeFace { center, u, v })
            .collect();
        let conn = Connectivity {
            links,
            geometry,
            kind: DomainKind::CubedSphere,
        };
        debug_assert!(conn.validate().is_empty());
        conn
    }

    pub fn num_blocks(&self) -> usize {
        self.links.len()
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn geometry(&self, block: usize) -> BlockGeometry {
        self.geometry[block]
    }

    pub fn face_link(&self, block: usize, face: u8) -> Option<FaceLink> {
        self.links[block][face as usize]
    }

    /// Replaces one link without validation; used to exercise `validate`.
    pub fn set_face_link_unchecked(&mut self, block: usize, face: u8, link: Option<FaceLink>) {
        self.links[block][face as usize] = link;
    }

    /// Frame map carrying points of `block` across `face` into the frame of
    /// the linked block.
    pub fn face_map(&self, block: usize, face: u8) -> Option<FrameMap> {
        let link = self.face_link(block, face)?;
        Some(link_map(face, &link))
    }

    /// Lists every inconsistency in the link table; empty for builder output.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.num_blocks();
        for b in 0..n {
            for face in 0..4u8 {
                let Some(link) = self.face_link(b, face) else {
                    continue;
                };
                let violation = |kind| Violation {
                    block: b,
                    face: Some(face),
                    corner: None,
                    kind,
                };
                if link.block >= n || link.face > 3 {
                    out.push(violation(ViolationKind::Dangling));
                    continue;
                }
                let normal = face_normal(face);
                let target = face_normal(link.face);
                if link.orientation.apply_i32(normal) != [-target[0], -target[1]] {
                    out.push(violation(ViolationKind::Orientation));
                }
                match self.face_link(link.block, link.face) {
                    Some(back)
                        if back.block == b
                            && back.face == face
                            && back.orientation == link.orientation.inverse() => {}
                    _ => out.push(violation(ViolationKind::Involution)),
                }
                let map = link_map(face, &link);
                let mut ends = face_endpoints(face).map(|p| map.apply_scaled(p, 0));
                let mut expect = face_endpoints(link.face);
                ends.sort();
                expect.sort();
                if ends != expect {
                    out.push(violation(ViolationKind::PartialFace));
                }
            }
        }
        if out.is_empty() {
            for b in 0..n {
                for corner in 0..4u8 {
                    let valence = self.corner_valence(b, corner);
                    if valence > 4 {
                        out.push(Violation {
                            block: b,
                            face: None,
                            corner: Some(corner),
                            kind: ViolationKind::CornerValence(valence),
                        });
                    }
                }
            }
        }
        out
    }

    /// Walks around a block corner through face links. Returns `None` when
    /// the walk reaches a physical boundary or does not close within eight
    /// steps.
    pub fn corner_cycle(&self, block: usize, corner: u8) -> Option<CornerCycle> {
        let start = (block, corner);
        let mut visits = vec![start];
        let mut holonomy = FrameMap::IDENTITY;
        let (mut b, mut c) = start;
        let mut entered: Option<u8> = None;
        for _ in 0..8 {
            let [fx, fy] = Direction::corner_faces(c);
            let exit = match entered {
                None => fx,
                Some(e) if e == fx => fy,
                Some(_) => fx,
            };
            let link = self.face_link(b, exit)?;
            let map = link_map(exit, &link);
            let p = [(c & 1) as i64, ((c >> 1) & 1) as i64];
            let q = map.apply_scaled(p, 0);
            if !(0..=1).contains(&q[0]) || !(0..=1).contains(&q[1]) {
                return None;
            }
            holonomy = holonomy.then(&map);
            b = link.block;
            c = (q[0] + 2 * q[1]) as u8;
            entered = Some(link.face);
            if (b, c) == start {
                return Some(CornerCycle { visits, holonomy });
            }
            visits.push((b, c));
        }
        None
    }

    /// Number of blocks around a corner; boundary corners count the blocks
    /// reached before hitting the boundary.
    pub fn corner_valence(&self, block: usize, corner: u8) -> usize {
        match self.corner_cycle(block, corner) {
            Some(cycle) => cycle.visits.len(),
            None => {
                // Open fan or runaway walk; count distinct visits from both sides.
                let mut seen = vec![(block, corner)];
                let mut b = block;
                let mut c = corner;
                let mut entered: Option<u8> = None;
                for _ in 0..8 {
                    let [fx, fy] = Direction::corner_faces(c);
                    let exit = match entered {
                        None => fx,
                        Some(e) if e == fx => fy,
                        Some(_) => fx,
                    };
                    let Some(link) = self.face_link(b, exit) else {
                        break;
                    };
                    let q = link_map(exit, &link)
                        .apply_scaled([(c & 1) as i64, ((c >> 1) & 1) as i64], 0);
                    if !(0..=1).contains(&q[0]) || !(0..=1).contains(&q[1]) {
                        break;
                    }
                    b = link.block;
                    c = (q[0] + 2 * q[1]) as u8;
                    entered = Some(link.face);
                    if !seen.contains(&(b, c)) {
                        seen.push((b, c));
                    }
                }
                seen.len().min(9)
            }
        }
    }

    /// Physical coordinates of block-local point `(xi, eta)`; the third
    /// component is zero for planar blocks.
    pub fn map_to_world(&self, block: usize, xi: f64, eta: f64) -> [f64; 3] {
        match self.geometry[block] {
            BlockGeometry::Planar { origin } => [origin[0] + xi, origin[1] + eta, 0.0],
            BlockGeometry::CubeFace { center, u, v } => {
                let a = 2.0 * xi - 1.0;
                let b = 2.0 * eta - 1.0;
                let p: [f64; 3] =
                    std::array::from_fn(|k| center[k] as f64 + a * u[k] as f64 + b * v[k] as f64);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                [p[0] / r, p[1] / r, p[2] / r]
            }
        }
    }

    pub fn is_planar(&self) -> bool {
        self.geometry
            .iter()
            .all(|g| matches!(g, BlockGeometry::Planar { .. }))
    }
}

fn face_midpoint_doubled(face: u8) -> [i64; 2] {
    match face {
        0 => [0, 1],
        1 => [2, 1],
        2 => [1, 0],
        _ => [1, 2],
    }
}

fn face_endpoints(face: u8) -> [[i64; 2]; 2] {
    match face {
        0 => [[0, 0], [0, 1]],
        1 => [[1, 0], [1, 1]],
        2 => [[0, 0], [1, 0]],
        _ => [[0, 1], [1, 1]],
    }
}

fn link_map(face: u8, link: &FaceLink) -> FrameMap {
    let from = face_midpoint_doubled(face);
    let to = face_midpoint_doubled(link.face);
    let rotated = link.orientation.apply(from);
    let d = [to[0] - rotated[0], to[1] - rotated[1]];
    // Odd offsets only arise from inconsistent links, which `validate`
    // reports as partial faces.
    FrameMap {
        orientation: link.orientation,
        shift: [d[0].div_euclid(2), d[1].div_euclid(2)],
    }
}
