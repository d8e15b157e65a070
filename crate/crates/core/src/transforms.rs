//! Affine maps between the cell-index spaces of neighboring patches.
//!
//! Interior cells are indexed `0..M`, ghost cells `-m..0` and `M..M+m`. A
//! same-size map sends `I` to `A I + F`; a coarse-to-fine map sends a coarse
//! cell and a child direction `d_k` to `2 A I + A d_k / 2 + F_f`, with `F_f`
//! kept doubled so everything stays in integers.

use crate::connectivity::{FrameMap, Orientation};
use crate::forest::Quadrant;

pub type Index = [i32; 2];

/// Child offsets `d_0..d_3`, in the same order as quadrant children.
pub const DIRECTIONS: [[i32; 2]; 4] = [[-1, -1], [1, -1], [-1, 1], [1, 1]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SameSizeTransform {
    pub a: Orientation,
    pub f: [i32; 2],
}

impl SameSizeTransform {
    pub const IDENTITY: SameSizeTransform = SameSizeTransform {
        a: Orientation::IDENTITY,
        f: [0, 0],
    };

    /// Transform for a neighbor displaced by `delta` patch widths (in the
    /// source frame) whose frame is turned by `a`.
    pub fn new(a: Orientation, delta: [i32; 2], mx: i32) -> Self {
        let shifted = a.apply_i32([-mx * delta[0], -mx * delta[1]]);
        let ones = a.apply_i32([1, 1]);
        let half = mx - 1;
        // (M-1)/2 * (1 - A 1) is integral because each entry of A 1 is +-1.
        SameSizeTransform {
            a,
            f: [
                shifted[0] + half * (1 - ones[0]) / 2,
                shifted[1] + half * (1 - ones[1]) / 2,
            ],
        }
    }

    /// Transform from `from`'s cell indices to those of the same-size
    /// quadrant `to`, where `map` carries `from`'s block frame into `to`'s.
    pub fn between(from: &Quadrant, to: &Quadrant, map: &FrameMap, mx: i32) -> Self {
        debug_assert_eq!(from.level, to.level);
        let inv = map.inverse();
        let lo = inv.map_square([to.x as i64, to.y as i64], 1, to.level as u32);
        let delta = [
            (lo[0] - from.x as i64) as i32,
            (lo[1] - from.y as i64) as i32,
        ];
        SameSizeTransform::new(map.orientation, delta, mx)
    }

    pub fn apply(&self, i: Index) -> Index {
        let r = self.a.apply_i32(i);
        [r[0] + self.f[0], r[1] + self.f[1]]
    }

    pub fn invert(&self) -> Self {
        let inv = self.a.inverse();
        let f = inv.apply_i32(self.f);
        SameSizeTransform {
            a: inv,
            f: [-f[0], -f[1]],
        }
    }
}

/// Map from a coarse patch's indices to the indices of a neighboring patch
/// one level finer, always written from the coarse side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CoarseFineTransform {
    pub a: Orientation,
    /// Twice the half-integer offset `F_f`.
    pub f2: [i32; 2],
}

impl CoarseFineTransform {
    /// `p` is the lower corner of the fine patch in the coarse patch's local
    /// frame, measured in coarse cells.
    pub fn new(a: Orientation, p: [i32; 2], mx: i32) -> Self {
        let r = a.apply_i32([2 - mx - 4 * p[0], 2 - mx - 4 * p[1]]);
        CoarseFineTransform {
            a,
            f2: [r[0] + mx - 1, r[1] + mx - 1],
        }
    }

    /// Transform from coarse quadrant `coarse` to the fine quadrant `fine`,
    /// where `map` carries `fine`'s block frame into `coarse`'s.
    pub fn between(coarse: &Quadrant, fine: &Quadrant, map: &FrameMap, mx: i32) -> Self {
        debug_assert_eq!(coarse.level + 1, fine.level);
        let lo = map.map_square([fine.x as i64, fine.y as i64], 1, fine.level as u32);
        let half = (mx / 2) as i64;
        let p = [
            ((lo[0] - 2 * coarse.x as i64) * half) as i32,
            ((lo[1] - 2 * coarse.y as i64) * half) as i32,
        ];
        CoarseFineTransform::new(map.orientation.inverse(), p, mx)
    }

    /// Offset table for a fine neighbor in face or corner direction `dir` of
    /// the coarse patch. For faces, `half` selects the lower or upper half
    /// of the shared face.
    pub fn table_offset(dir: crate::connectivity::Direction, half: u8, mx: i32) -> [i32; 2] {
        use crate::connectivity::Direction;
        let h = half as i32 * mx / 2;
        match dir {
            Direction::Face(0) => [-mx / 2, h],
            Direction::Face(1) => [mx, h],
            Direction::Face(2) => [h, -mx / 2],
            Direction::Face(_) => [h, mx],
            Direction::Corner(c) => [
                if c & 1 == 1 { mx } else { -mx / 2 },
                if c & 2 == 2 { mx } else { -mx / 2 },
            ],
        }
    }

    /// The fine cells `I_f^k` covering coarse cell `ic`, ordered by `d_k`.
    pub fn fine_indices(&self, ic: Index) -> [Index; 4] {
        std::array::from_fn(|k| {
            let v = self
                .a
                .apply_i32([4 * ic[0] + DIRECTIONS[k][0], 4 * ic[1] + DIRECTIONS[k][1]]);
            debug_assert!((v[0] + self.f2[0]) % 2 == 0 && (v[1] + self.f2[1]) % 2 == 0);
            [(v[0] + self.f2[0]) / 2, (v[1] + self.f2[1]) / 2]
        })
    }

    /// Coarse cell containing fine cell `fi`, and the direction `d_k` (in the
    /// coarse frame) of `fi` within it.
    pub fn coarse_index(&self, fi: Index) -> (Index, [i32; 2]) {
        let v = self
            .a
            .inverse()
            .apply_i32([2 * fi[0] - self.f2[0], 2 * fi[1] - self.f2[1]]);
        let ic = [(v[0] + 1).div_euclid(4), (v[1] + 1).div_euclid(4)];
        (ic, [v[0] - 4 * ic[0], v[1] - 4 * ic[1]])
    }
}
