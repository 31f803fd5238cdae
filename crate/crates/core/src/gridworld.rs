//! Voxel occupancy map and weighted A* front-end path search.
//!
//! The map keeps the raw rasterized obstacles and an inflated copy used
//! for path search; corridor construction later queries the raw layer so
//! that inflation is not applied twice. Path costs are tracked as exact
//! step counts (axis, face-diagonal, cube-diagonal) and converted to
//! meters through one canonical expression, which makes search results
//! and cost comparisons deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point ({0}, {1}, {2}) outside the grid")]
    OutOfBounds(f64, f64, f64),
    #[error("start voxel is occupied")]
    StartOccupied,
    #[error("goal voxel is occupied")]
    GoalOccupied,
    #[error("goal is unreachable from start")]
    NoPath,
    #[error("resolution {0} must be strictly positive")]
    BadResolution(f64),
}

/// Dense voxel occupancy grid.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    origin: Vector3<f64>,
    resolution: f64,
    dims: [usize; 3],
    raw: Vec<bool>,
    inflated: Vec<bool>,
    inflation_radius: f64,
}

impl VoxelGrid {
    /// Empty grid covering `dims` voxels from `origin`.
    pub fn new(origin: Vector3<f64>, resolution: f64, dims: [usize; 3]) -> Result<Self, GridError> {
        if !(resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        let len = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            resolution,
            dims,
            raw: vec![false; len],
            inflated: vec![false; len],
            inflation_radius: 0.0,
        })
    }

    /// Grid from a point cloud: every voxel containing a point is marked
    /// occupied, then the map is inflated. The grid extent is the cloud
    /// bounding box padded by the inflation radius plus one voxel.
    pub fn from_point_cloud(
        points: &[Vector3<f64>],
        resolution: f64,
        inflation_radius: f64,
    ) -> Result<Self, GridError> {
        if points.is_empty() {
            return Err(GridError::EmptyCloud);
        }
        if !(resolution > 0.0) {
            return Err(GridError::BadResolution(resolution));
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let pad = inflation_radius + resolution;
        let origin = lo - Vector3::repeat(pad);
        let span = hi - origin + Vector3::repeat(pad);
        let dims = [
            (span.x / resolution).ceil() as usize + 1,
            (span.y / resolution).ceil() as usize + 1,
            (span.z / resolution).ceil() as usize + 1,
        ];
        let mut grid = Self::new(origin, resolution, dims)?;
        for p in points {
            if let Some(v) = grid.world_to_voxel(p) {
                grid.mark_occupied(v);
            }
        }
        grid.inflate(inflation_radius);
        Ok(grid)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn inflation_radius(&self) -> f64 {
        self.inflation_radius
    }

    /// World-space lower and upper corners of the grid.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.origin,
            self.origin
                + self.resolution
                    * Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64),
        )
    }

    #[inline]
    pub fn linear_index(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> Vector3<f64> {
        self.origin
            + self.resolution
                * Vector3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5)
    }

    pub fn world_to_voxel(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let rel = (p - self.origin) / self.resolution;
        if rel.x < 0.0 || rel.y < 0.0 || rel.z < 0.0 {
            return None;
        }
        let v = [rel.x as usize, rel.y as usize, rel.z as usize];
        if v[0] < self.dims[0] && v[1] < self.dims[1] && v[2] < self.dims[2] {
            Some(v)
        } else {
            None
        }
    }

    pub fn mark_occupied(&mut self, v: [usize; 3]) {
        let i = self.linear_index(v);
        self.raw[i] = true;
        self.inflated[i] = true;
    }

    pub fn mark_occupied_world(&mut self, p: &Vector3<f64>) -> bool {
        match self.world_to_voxel(p) {
            Some(v) => {
                self.mark_occupied(v);
                true
            }
            None => false,
        }
    }

    /// Rasterize a solid: marks every voxel whose center satisfies the
    /// predicate.
    pub fn rasterize<F: Fn(&Vector3<f64>) -> bool>(&mut self, inside: F) {
        for iz in 0..self.dims[2] {
            for iy in 0..self.dims[1] {
                for ix in 0..self.dims[0] {
                    let v = [ix, iy, iz];
                    if inside(&self.voxel_center(v)) {
                        self.mark_occupied(v);
                    }
                }
            }
        }
    }

    /// Inflate the raw occupancy by stamping a center-distance ball of
    /// the given radius around every occupied voxel.
    pub fn inflate(&mut self, radius: f64) {
        self.inflation_radius = radius;
        self.inflated.copy_from_slice(&self.raw);
        if radius <= 0.0 {
            return;
        }
        let r_vox = (radius / self.resolution).floor() as i64;
        let r2 = radius * radius;
        // precompute the stamp offsets once
        let mut stamp = Vec::new();
        for dz in -r_vox..=r_vox {
            for dy in -r_vox..=r_vox {
                for dx in -r_vox..=r_vox {
                    let d2 = (dx * dx + dy * dy + dz * dz) as f64 * self.resolution * self.resolution;
                    if d2 <= r2 {
                        stamp.push([dx, dy, dz]);
                    }
                }
            }
        }
        for iz in 0..self.dims[2] {
            for iy in 0..self.dims[1] {
                for ix in 0..self.dims[0] {
                    if !self.raw[self.linear_index([ix, iy, iz])] {
                        continue;
                    }
                    for d in &stamp {
                        let nx = ix as i64 + d[0];
                        let ny = iy as i64 + d[1];
                        let nz = iz as i64 + d[2];
                        if nx >= 0
                            && ny >= 0
                            && nz >= 0
                            && (nx as usize) < self.dims[0]
                            && (ny as usize) < self.dims[1]
                            && (nz as usize) < self.dims[2]
                        {
                            let i = self.linear_index([nx as usize, ny as usize, nz as usize]);
                            self.inflated[i] = true;
                        }
                    }
                }
            }
        }
    }

    #[inline]
    pub fn is_occupied(&self, v: [usize; 3]) -> bool {
        self.inflated[self.linear_index(v)]
    }

    #[inline]
    pub fn is_raw_occupied(&self, v: [usize; 3]) -> bool {
        self.raw[self.linear_index(v)]
    }

    pub fn occupied_count(&self) -> usize {
        self.inflated.iter().filter(|&&o| o).count()
    }

    pub fn raw_count(&self) -> usize {
        self.raw.iter().filter(|&&o| o).count()
    }

    /// Line-of-sight on the inflated map: the sampled tube of voxels
    /// along the segment must be free. Transitions across voxel edges
    /// also check the axis-adjacent voxels so the tube is face-connected.
    pub fn line_of_sight(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        let (Some(va), Some(vb)) = (self.world_to_voxel(a), self.world_to_voxel(b)) else {
            return false;
        };
        if self.is_occupied(va) || self.is_occupied(vb) {
            return false;
        }
        let dist = (b - a).norm();
        let steps = (dist / (self.resolution * 0.25)).ceil().max(1.0) as usize;
        let mut prev = va;
        for s in 1..=steps {
            let p = a + (b - a) * (s as f64 / steps as f64);
            let Some(v) = self.world_to_voxel(&p) else {
                return false;
            };
            if self.is_occupied(v) {
                return false;
            }
            // diagonal hop: require the shared axis neighbors free too
            let mut diff_axes = Vec::with_capacity(3);
            for axis in 0..3 {
                if v[axis] != prev[axis] {
                    diff_axes.push(axis);
                }
            }
            if diff_axes.len() > 1 {
                for &axis in &diff_axes {
                    let mut side = prev;
                    side[axis] = v[axis];
                    if self.is_occupied(side) {
                        return false;
                    }
                }
            }
            prev = v;
        }
        true
    }
}

/// Exact cost bookkeeping: counts of axis, face-diagonal, and
/// cube-diagonal steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepCounts {
    pub axis: u32,
    pub face: u32,
    pub cube: u32,
}

impl StepCounts {
    /// Canonical metric cost; equal counts always produce bit-identical
    /// values.
    #[inline]
    pub fn cost(&self, resolution: f64) -> f64 {
        resolution * self.axis as f64
            + (resolution * std::f64::consts::SQRT_2) * self.face as f64
            + (resolution * 1.7320508075688772) * self.cube as f64
    }
}

/// Result of a grid search.
#[derive(Debug, Clone)]
pub struct GridPath {
    /// Voxel centers from start to goal.
    pub waypoints: Vec<Vector3<f64>>,
    /// The corresponding voxel indices.
    pub voxels: Vec<[usize; 3]>,
    /// Exact step counts along the path.
    pub counts: StepCounts,
    /// Metric path cost.
    pub cost: f64,
    /// Number of node expansions performed by the search.
    pub expansions: usize,
}

#[derive(Debug, Clone, Copy)]
struct OpenNode {
    f: f64,
    h: f64,
    index: usize,
    g: f64,
    counts: StepCounts,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.h == other.h && self.index == other.index
    }
}
impl Eq for OpenNode {}

impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for min-f ordering with
        // deterministic tie-breaks: lower f, then lower h, then lower index
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.index.cmp(&self.index))
    }
}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Diagonal moves may not cut corners: every axis-projected sub-move of
/// the step must land on a free voxel.
#[inline]
fn diagonal_clear(grid: &VoxelGrid, v: [usize; 3], d: [i64; 3]) -> bool {
    let mut axes = [0usize; 3];
    let mut n_axes = 0;
    for (a, item) in d.iter().enumerate() {
        if *item != 0 {
            axes[n_axes] = a;
            n_axes += 1;
        }
    }
    if n_axes < 2 {
        return true;
    }
    let count = 1usize << n_axes;
    for mask in 1..count - 1 {
        let mut u = v;
        for (bit, &axis) in axes[..n_axes].iter().enumerate() {
            if mask & (1 << bit) != 0 {
                u[axis] = (u[axis] as i64 + d[axis]) as usize;
            }
        }
        if grid.is_occupied(u) {
            return false;
        }
    }
    true
}

/// Weighted A* over the 26-connected inflated grid.
///
/// `epsilon >= 1` inflates the Euclidean heuristic; the returned cost is
/// at most `epsilon` times optimal, and exactly optimal at `epsilon = 1`.
pub fn weighted_astar(
    grid: &VoxelGrid,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    epsilon: f64,
) -> Result<GridPath, GridError> {
    let vs = grid
        .world_to_voxel(start)
        .ok_or(GridError::OutOfBounds(start.x, start.y, start.z))?;
    let vg = grid
        .world_to_voxel(goal)
        .ok_or(GridError::OutOfBounds(goal.x, goal.y, goal.z))?;
    if grid.is_occupied(vs) {
        return Err(GridError::StartOccupied);
    }
    if grid.is_occupied(vg) {
        return Err(GridError::GoalOccupied);
    }
    let epsilon = epsilon.max(1.0);
    let dims = grid.dims();
    let n = dims[0] * dims[1] * dims[2];
    let goal_center = grid.voxel_center(vg);
    let heuristic = |v: [usize; 3]| (grid.voxel_center(v) - goal_center).norm();

    let mut g_best = vec![f64::INFINITY; n];
    let mut counts_best = vec![StepCounts::default(); n];
    let mut parent: Vec<u32> = vec![u32::MAX; n];
    let mut open = BinaryHeap::new();

    let start_idx = grid.linear_index(vs);
    let goal_idx = grid.linear_index(vg);
    g_best[start_idx] = 0.0;
    let h0 = heuristic(vs);
    open.push(OpenNode {
        f: epsilon * h0,
        h: h0,
        index: start_idx,
        g: 0.0,
        counts: StepCounts::default(),
    });

    let mut expansions = 0usize;
    let from_linear = |i: usize| -> [usize; 3] {
        let x = i % dims[0];
        let y = (i / dims[0]) % dims[1];
        let z = i / (dims[0] * dims[1]);
        [x, y, z]
    };

    while let Some(node) = open.pop() {
        if node.g > g_best[node.index] {
            continue; // stale entry
        }
        if node.index == goal_idx {
            // reconstruct
            let mut voxels = Vec::new();
            let mut i = node.index;
            loop {
                voxels.push(from_linear(i));
                if i == start_idx {
                    break;
                }
                i = parent[i] as usize;
            }
            voxels.reverse();
            let waypoints = voxels.iter().map(|&v| grid.voxel_center(v)).collect();
            return Ok(GridPath {
                waypoints,
                voxels,
                counts: node.counts,
                cost: node.g,
                expansions,
            });
        }
        expansions += 1;
        let v = from_linear(node.index);
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let nx = v[0] as i64 + dx;
                    let ny = v[1] as i64 + dy;
                    let nz = v[2] as i64 + dz;
                    if nx < 0
                        || ny < 0
                        || nz < 0
                        || nx as usize >= dims[0]
                        || ny as usize >= dims[1]
                        || nz as usize >= dims[2]
                    {
                        continue;
                    }
                    let nv = [nx as usize, ny as usize, nz as usize];
                    if grid.is_occupied(nv) {
                        continue;
                    }
                    if !diagonal_clear(grid, v, [dx, dy, dz]) {
                        continue;
                    }
                    let mut counts = node.counts;
                    match dx.abs() + dy.abs() + dz.abs() {
                        1 => counts.axis += 1,
                        2 => counts.face += 1,
                        _ => counts.cube += 1,
                    }
                    let g_new = counts.cost(grid.resolution());
                    let ni = grid.linear_index(nv);
                    if g_new < g_best[ni] {
                        g_best[ni] = g_new;
                        counts_best[ni] = counts;
                        parent[ni] = node.index as u32;
                        let h = heuristic(nv);
                        open.push(OpenNode {
                            f: g_new + epsilon * h,
                            h,
                            index: ni,
                            g: g_new,
                            counts,
                        });
                    }
                }
            }
        }
    }
    Err(GridError::NoPath)
}

/// Greedy line-of-sight shortcutting of a grid path. Returns waypoint
/// positions including both endpoints.
pub fn simplify_path(grid: &VoxelGrid, path: &GridPath) -> Vec<Vector3<f64>> {
    let pts = &path.waypoints;
    if pts.len() <= 2 {
        return pts.clone();
    }
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !grid.line_of_sight(&pts[i], &pts[j]) {
            j -= 1;
        }
        out.push(pts[j]);
        i = j;
    }
    out
}
