//! Amanatides–Woo voxel traversal.
//!
//! Distances are reported in world meters along a unit direction. Each
//! boundary crossing is computed directly from the origin rather than by
//! accumulating per-axis increments, so the exit distance of one voxel is
//! bit-identical to the entry distance of the next.

use crate::geom::Vec3;
use crate::grid::GridSpec;

/// One voxel visited by a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayVisit {
    pub voxel: [usize; 3],
    pub index: usize,
    /// Distance at which the ray enters the voxel (0 for the start voxel).
    pub t_enter: f64,
    /// Distance at which the ray leaves the voxel.
    pub t_exit: f64,
}

/// Iterator over the voxels pierced by a ray, in order, until the ray leaves
/// the grid or the entry distance reaches `max_range`.
pub struct VoxelRay<'g> {
    grid: &'g GridSpec,
    cell: [i64; 3],
    step: [i64; 3],
    start: Vec3,
    /// Reciprocal direction components (unused where the step is 0).
    inv: Vec3,
    t_enter: f64,
    /// Next boundary distance per axis; only the stepped axis changes.
    bound: [f64; 3],
    index: i64,
    /// Signed change of the linear index for one step along each axis.
    stride: [i64; 3],
    max_t: f64,
    res: f64,
    done: bool,
}

impl<'g> VoxelRay<'g> {
    /// `dir` must be unit length. Rays starting outside the grid yield nothing.
    pub fn new(grid: &'g GridSpec, origin: Vec3, dir: Vec3, max_range: f64) -> Self {
        let start = grid.to_grid(origin);
        let cell = [start[0].floor() as i64, start[1].floor() as i64, start[2].floor() as i64];
        let step = [sign(dir[0]), sign(dir[1]), sign(dir[2])];
        let res = grid.res();
        let mut ray = Self {
            grid,
            cell,
            step,
            start,
            inv: dir.map(|d| 1.0 / d),
            t_enter: 0.0,
            bound: [0.0; 3],
            index: 0,
            stride: [0; 3],
            max_t: max_range / res,
            res,
            done: !grid.contains(cell) || !(max_range > 0.0),
        };
        ray.bound = [ray.boundary_t(0), ray.boundary_t(1), ray.boundary_t(2)];
        if !ray.done {
            let d = grid.dims.map(|d| d as i64);
            ray.index = cell[0] + d[0] * (cell[1] + d[1] * cell[2]);
            ray.stride = [step[0], step[1] * d[0], step[2] * d[0] * d[1]];
        }
        ray
    }

    #[inline]
    fn boundary_t(&self, axis: usize) -> f64 {
        match self.step[axis] {
            0 => f64::INFINITY,
            1 => ((self.cell[axis] + 1) as f64 - self.start[axis]) * self.inv[axis],
            _ => (self.cell[axis] as f64 - self.start[axis]) * self.inv[axis],
        }
    }
}

impl VoxelRay<'_> {
    /// Visits the remaining voxel indices in order, stopping early once `f`
    /// returns false. Same voxels as iterating, minus the bookkeeping.
    #[inline]
    pub fn walk_indices(mut self, mut f: impl FnMut(usize) -> bool) {
        if self.done {
            return;
        }
        while f(self.index as usize) && self.advance() {}
    }

    /// One crossing, choosing the axis without branches (ties go x, y, z
    /// as in `next`). False once the ray leaves the grid or the range.
    #[inline(always)]
    fn advance(&mut self) -> bool {
        let [tx, ty, tz] = self.bound;
        let (t01, a01) = if ty < tx { (ty, 1) } else { (tx, 0) };
        let (t_exit, axis) = if tz < t01 { (tz, 2) } else { (t01, a01) };
        let c = self.cell[axis] + self.step[axis];
        if c < 0 || c >= self.grid.dims[axis] as i64 || t_exit >= self.max_t || !t_exit.is_finite() {
            return false;
        }
        self.cell[axis] = c;
        self.index += self.stride[axis];
        // `axis` steps, so its next face is c or c + 1; same value as
        // boundary_t without the match.
        let face = c + (self.step[axis] > 0) as i64;
        self.bound[axis] = (face as f64 - self.start[axis]) * self.inv[axis];
        true
    }
}

/// Walks every ray like [`VoxelRay::walk_indices`], several at a time so
/// their step chains overlap. Calls `f` once per visited voxel, in an
/// interleaved order across rays.
pub fn walk_all<'g>(rays: impl IntoIterator<Item = VoxelRay<'g>>, mut f: impl FnMut(usize) -> bool) {
    const LANES: usize = 8;
    let mut rays = rays.into_iter().filter(|r| !r.done);
    let mut lanes: Vec<VoxelRay<'g>> = rays.by_ref().take(LANES).collect();
    while lanes.len() == LANES {
        for k in 0..LANES {
            let lane = &mut lanes[k];
            if !(f(lane.index as usize) && lane.advance()) {
                match rays.next() {
                    Some(r) => lanes[k] = r,
                    None => {
                        lanes.swap_remove(k);
                        break;
                    }
                }
            }
        }
    }
    for lane in lanes {
        lane.walk_indices(&mut f);
    }
}

#[inline]
fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

impl Iterator for VoxelRay<'_> {
    type Item = RayVisit;

    #[inline]
    fn next(&mut self) -> Option<RayVisit> {
        if self.done {
            return None;
        }
        let [tx, ty, tz] = self.bound;
        let (axis, t_exit) = if tx <= ty && tx <= tz {
            (0, tx)
        } else if ty <= tz {
            (1, ty)
        } else {
            (2, tz)
        };
        let voxel = [self.cell[0] as usize, self.cell[1] as usize, self.cell[2] as usize];
        let visit = RayVisit {
            voxel,
            index: self.index as usize,
            t_enter: self.t_enter * self.res,
            t_exit: t_exit * self.res,
        };
        self.cell[axis] += self.step[axis];
        self.index += self.stride[axis];
        self.bound[axis] = self.boundary_t(axis);
        self.t_enter = t_exit;
        let c = self.cell[axis];
        if c < 0 || c >= self.grid.dims[axis] as i64 || self.t_enter >= self.max_t || !t_exit.is_finite() {
            self.done = true;
        }
        Some(visit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::normalize;

    fn grid() -> GridSpec {
        GridSpec::new([10, 10, 10], 1.0, [0.0; 3]).unwrap()
    }

    #[test]
    fn axis_aligned_ray_walks_row() {
        let g = grid();
        let visits: Vec<_> = VoxelRay::new(&g, [0.5, 0.5, 0.5], [1.0, 0.0, 0.0], 100.0).collect();
        assert_eq!(visits.len(), 10);
        for (i, v) in visits.iter().enumerate() {
            assert_eq!(v.voxel, [i, 0, 0]);
        }
        assert_eq!(visits[0].t_enter, 0.0);
        assert_eq!(visits[1].t_enter, 0.5);
        assert_eq!(visits[9].t_exit, 9.5);
    }

    #[test]
    fn max_range_stops_walk() {
        let g = grid();
        let visits: Vec<_> = VoxelRay::new(&g, [0.5, 0.5, 0.5], [1.0, 0.0, 0.0], 2.0).collect();
        // entries at 0, 0.5, 1.5; the next voxel would start at 2.5
        assert_eq!(visits.len(), 3);
    }

    #[test]
    fn exits_are_next_entries() {
        let g = GridSpec::new([20, 20, 20], 0.4, [-1.0, 2.0, 0.5]).unwrap();
        let dir = normalize([0.3, -0.7, 0.2]);
        let visits: Vec<_> = VoxelRay::new(&g, [3.1, 5.3, 2.2], dir, 50.0).collect();
        assert!(visits.len() > 5);
        for w in visits.windows(2) {
            assert_eq!(w[0].t_exit, w[1].t_enter);
            let d: usize = (0..3).map(|a| w[0].voxel[a].abs_diff(w[1].voxel[a])).sum();
            assert_eq!(d, 1, "consecutive voxels must be face neighbors");
        }
    }

    #[test]
    fn outside_origin_yields_nothing() {
        let g = grid();
        assert_eq!(VoxelRay::new(&g, [-0.5, 0.5, 0.5], [1.0, 0.0, 0.0], 10.0).count(), 0);
    }

    #[test]
    fn negative_direction() {
        let g = grid();
        let visits: Vec<_> = VoxelRay::new(&g, [5.5, 5.5, 5.5], [0.0, -1.0, 0.0], 100.0).collect();
        let ys: Vec<_> = visits.iter().map(|v| v.voxel[1]).collect();
        assert_eq!(ys, vec![5, 4, 3, 2, 1, 0]);
    }
}
