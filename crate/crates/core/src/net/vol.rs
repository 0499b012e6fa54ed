//! Zero-padded channel-first volume layout used by the convolution stack.
//!
//! A `X × Y × Z` volume is stored as `(X+2)(Y+2)(Z+2)` values with a one
//! voxel zero border. A 3×3×3 same-padded convolution then becomes a set of
//! contiguous shifted multiply-adds over the flat range `[start, end)` that
//! spans every interior voxel.

#[derive(Debug, Clone, PartialEq)]
pub struct Vol {
    pub dims: [usize; 3],
    pub px: usize,
    pub pyx: usize,
    pub plen: usize,
    pub start: usize,
    pub end: usize,
    /// Row starts of interior x-runs, `dims[1] * dims[2]` of them.
    pub rows: Vec<usize>,
    /// Border positions inside `[start, end)`.
    pub pads: Vec<usize>,
}

impl Vol {
    pub fn new(dims: [usize; 3]) -> Self {
        let px = dims[0] + 2;
        let py = dims[1] + 2;
        let pz = dims[2] + 2;
        let pyx = px * py;
        let plen = pyx * pz;
        let start = pyx + px + 1;
        let end = dims[2] * pyx + dims[1] * px + dims[0] + 1;
        let mut rows = Vec::with_capacity(dims[1] * dims[2]);
        for z in 1..=dims[2] {
            for y in 1..=dims[1] {
                rows.push(z * pyx + y * px + 1);
            }
        }
        let mut interior = vec![false; plen];
        for &r in &rows {
            interior[r..r + dims[0]].fill(true);
        }
        let pads = (start..end).filter(|&i| !interior[i]).collect();
        Self { dims, px, pyx, plen, start, end, rows, pads }
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> usize {
        (z + 1) * self.pyx + (y + 1) * self.px + x + 1
    }

    /// Offset of the `(dy, dz)` kernel row center, for `dy, dz ∈ {-1, 0, 1}`.
    #[inline]
    pub fn row_offset(&self, dy: isize, dz: isize) -> isize {
        dz * self.pyx as isize + dy * self.px as isize
    }
}
