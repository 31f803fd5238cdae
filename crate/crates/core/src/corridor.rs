//! Safe flight corridor: a sequence of overlapping convex polytopes that
//! covers the path from start to goal with obstacle-free space.
//!
//! Polytopes are grown around path sub-segments as axis-aligned boxes and
//! optionally tightened with diagonal corner-cut faces in the tube
//! cross-section plane, which recovers most of a circular aperture
//! instead of only its inscribed square. Growth never admits a raw
//! occupied voxel cube, so every polytope is free space by construction.

use nalgebra::Vector3;

use crate::gridworld::{simplify_path, GridPath, VoxelGrid};

/// One face: outward unit normal `n` and a point `r` on the plane.
/// Membership is `(x - r) . n <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
}

impl Halfspace {
    pub fn violation(&self, x: &Vector3<f64>) -> f64 {
        (x - self.point).dot(&self.normal)
    }
}

/// Convex polytope in halfspace form with a strictly interior seed point.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub faces: Vec<Halfspace>,
    pub seed: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorridorError {
    #[error("cannot cover path segment {segment}: {reason}")]
    CorridorFailure { segment: usize, reason: String },
    #[error("path has no waypoints")]
    EmptyPath,
    #[error("malformed corridor text at line {line}: {message}")]
    ParseError { line: usize, message: String },
}

impl Polytope {
    /// Signed violation: maximum over faces of `(x - r) . n`;
    /// non-positive iff the point is inside.
    pub fn point_violation(&self, x: &Vector3<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| f.violation(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        self.point_violation(x) <= tol
    }

    /// Enumerate vertices by intersecting all face triples and keeping
    /// the points that satisfy every face. Intended for small face
    /// counts (boxes plus a few cuts).
    pub fn vertices(&self) -> Vec<Vector3<f64>> {
        let m = self.faces.len();
        let mut out: Vec<Vector3<f64>> = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                for k in (j + 1)..m {
                    let a = nalgebra::Matrix3::from_rows(&[
                        self.faces[i].normal.transpose(),
                        self.faces[j].normal.transpose(),
                        self.faces[k].normal.transpose(),
                    ]);
                    let b = Vector3::new(
                        self.faces[i].normal.dot(&self.faces[i].point),
                        self.faces[j].normal.dot(&self.faces[j].point),
                        self.faces[k].normal.dot(&self.faces[k].point),
                    );
                    let Some(inv) = a.try_inverse() else { continue };
                    let v = inv * b;
                    if !v.iter().all(|c| c.is_finite()) {
                        continue;
                    }
                    if self.point_violation(&v) <= 1e-7
                        && !out.iter().any(|u| (u - v).norm() < 1e-9)
                    {
                        out.push(v);
                    }
                }
            }
        }
        out
    }
}

/// Ordered overlapping polytopes covering the path.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub polytopes: Vec<Polytope>,
    /// Entry/exit points: `waypoints[k]` and `waypoints[k+1]` lie in
    /// polytope `k`; interior waypoints lie in both adjacent polytopes.
    pub waypoints: Vec<Vector3<f64>>,
    /// Map from seed sub-segment index to the polytope covering it.
    pub assignment: Vec<usize>,
}

impl Corridor {
    pub fn len(&self) -> usize {
        self.polytopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polytopes.is_empty()
    }
}

// axis-aligned box under construction
#[derive(Debug, Clone, Copy)]
struct Box3 {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Box3 {
    fn of_segment(a: &Vector3<f64>, b: &Vector3<f64>, margin: f64) -> Self {
        Self {
            lo: a.inf(b) - Vector3::repeat(margin),
            hi: a.sup(b) + Vector3::repeat(margin),
        }
    }

    fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }
}

const TOUCH_EPS: f64 = 1e-9;
/// Longest seed sub-segment before splitting, m.
const MAX_SEGMENT_LEN: f64 = 1.5;
/// Per-axis cap on polytope extent, m.
const MAX_BOX_EXTENT: f64 = 4.0;
/// Margin by which seed waypoints stay strictly interior, in voxels.
const SEED_MARGIN_VOXELS: f64 = 0.45;
const MAX_BISECT_DEPTH: usize = 8;

/// True if any raw occupied voxel cube overlaps the box region.
fn region_blocked(grid: &VoxelGrid, lo: &Vector3<f64>, hi: &Vector3<f64>) -> bool {
    let res = grid.resolution();
    let half = res / 2.0;
    let (grid_lo, _) = grid.bounds();
    let dims = grid.dims();
    let mut idx_lo = [0usize; 3];
    let mut idx_hi = [0usize; 3];
    for a in 0..3 {
        // voxel cube [c-half, c+half] intersects [lo, hi] iff center in
        // [lo - half, hi + half] (with a touch tolerance)
        let f = ((lo[a] - half + TOUCH_EPS - grid_lo[a]) / res).floor();
        let c = ((hi[a] + half - TOUCH_EPS - grid_lo[a]) / res).ceil();
        idx_lo[a] = f.max(0.0) as usize;
        idx_hi[a] = (c.max(0.0) as usize).min(dims[a]);
    }
    for iz in idx_lo[2]..idx_hi[2] {
        for iy in idx_lo[1]..idx_hi[1] {
            for ix in idx_lo[0]..idx_hi[0] {
                let v = [ix, iy, iz];
                if !grid.is_raw_occupied(v) {
                    continue;
                }
                let c = grid.voxel_center(v);
                let hit = (0..3).all(|a| {
                    c[a] + half > lo[a] + TOUCH_EPS && c[a] - half < hi[a] - TOUCH_EPS
                });
                if hit {
                    return true;
                }
            }
        }
    }
    false
}

/// Occupied voxel centers whose cubes overlap the box region.
fn blocking_cubes(grid: &VoxelGrid, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let res = grid.resolution();
    let half = res / 2.0;
    let (grid_lo, _) = grid.bounds();
    let dims = grid.dims();
    let mut idx_lo = [0usize; 3];
    let mut idx_hi = [0usize; 3];
    for a in 0..3 {
        let f = ((lo[a] - half + TOUCH_EPS - grid_lo[a]) / res).floor();
        let c = ((hi[a] + half - TOUCH_EPS - grid_lo[a]) / res).ceil();
        idx_lo[a] = f.max(0.0) as usize;
        idx_hi[a] = (c.max(0.0) as usize).min(dims[a]);
    }
    let mut out = Vec::new();
    for iz in idx_lo[2]..idx_hi[2] {
        for iy in idx_lo[1]..idx_hi[1] {
            for ix in idx_lo[0]..idx_hi[0] {
                let v = [ix, iy, iz];
                if !grid.is_raw_occupied(v) {
                    continue;
                }
                let c = grid.voxel_center(v);
                let hit = (0..3).all(|a| {
                    c[a] + half > lo[a] + TOUCH_EPS && c[a] - half < hi[a] - TOUCH_EPS
                });
                if hit {
                    out.push(c);
                }
            }
        }
    }
    out
}

struct TubeBuilder<'g> {
    grid: &'g VoxelGrid,
    seg_a: Vector3<f64>,
    seg_b: Vector3<f64>,
    boxed: Box3,
    /// Dominant axis of the seed segment. Expansions along it may never
    /// use diagonal cuts, so tubes cannot tunnel through walls.
    axis: usize,
    /// Cross-section diagonal cuts: unit normal and offset `o` for the
    /// constraint `n . x <= o`. `None` means the cut has never been
    /// engaged and tracks the box support implicitly.
    diagonals: Vec<(Vector3<f64>, Option<f64>)>,
    seed_margin: f64,
}

impl<'g> TubeBuilder<'g> {
    fn support(boxed: &Box3, n: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            s += if n[a] >= 0.0 { n[a] * boxed.hi[a] } else { n[a] * boxed.lo[a] };
        }
        s
    }

    fn new(grid: &'g VoxelGrid, a: Vector3<f64>, b: Vector3<f64>, boxed: Box3, cuts: bool) -> Self {
        let d = b - a;
        let axis = (0..3)
            .max_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()))
            .unwrap();
        let mut diagonals = Vec::new();
        if cuts {
            let (u, v) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for (su, sv) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut n = Vector3::zeros();
                n[u] = su * s;
                n[v] = sv * s;
                diagonals.push((n, None));
            }
        }
        Self {
            grid,
            seg_a: a,
            seg_b: b,
            boxed,
            axis,
            diagonals,
            seed_margin: SEED_MARGIN_VOXELS * grid.resolution(),
        }
    }

    /// `min over the cube corners of n . x >= o` excludes the cube.
    fn cube_excluded(n: &Vector3<f64>, o: f64, c: &Vector3<f64>, half: f64) -> bool {
        n.dot(c) - half * (n.x.abs() + n.y.abs() + n.z.abs()) >= o - TOUCH_EPS
    }

    /// Expand one face outward by a step if the newly swept slab can be
    /// kept free, tightening diagonal cuts when allowed. Returns false if
    /// the face is blocked.
    fn try_expand_face(&mut self, face: usize) -> bool {
        let axis = face / 2;
        let positive = face % 2 == 1;
        let res = self.grid.resolution();
        if self.boxed.extent(axis) + res > MAX_BOX_EXTENT {
            return false;
        }
        let (lo_bound, hi_bound) = self.grid.bounds();
        let mut candidate = self.boxed;
        if positive {
            candidate.hi[axis] += res;
            if candidate.hi[axis] > hi_bound[axis] {
                return false;
            }
        } else {
            candidate.lo[axis] -= res;
            if candidate.lo[axis] < lo_bound[axis] {
                return false;
            }
        }
        // slab that the expansion sweeps
        let mut slab_lo = candidate.lo;
        let mut slab_hi = candidate.hi;
        if positive {
            slab_lo[axis] = self.boxed.hi[axis];
        } else {
            slab_hi[axis] = self.boxed.lo[axis];
        }
        let offenders = blocking_cubes(self.grid, &slab_lo, &slab_hi);
        if offenders.is_empty() {
            self.boxed = candidate;
            return true;
        }
        if self.diagonals.is_empty() || axis == self.axis {
            return false;
        }
        // every offender in the new slab must be excluded by some cut,
        // tightening cuts only as far as the seed segment allows
        let half = res / 2.0;
        let mut new_diagonals = self.diagonals.clone();
        let center = (candidate.lo + candidate.hi) / 2.0;
        'offender: for c in &offenders {
            let excluded = new_diagonals.iter().any(|(n, o)| {
                o.is_some_and(|o| Self::cube_excluded(n, o, c, half))
            });
            if excluded {
                continue;
            }
            // engage/tighten the best-aligned cut that still keeps the
            // seed segment strictly inside
            let mut order: Vec<usize> = (0..new_diagonals.len()).collect();
            order.sort_by(|&i, &j| {
                let si = new_diagonals[i].0.dot(&(c - center));
                let sj = new_diagonals[j].0.dot(&(c - center));
                sj.total_cmp(&si)
            });
            for i in order {
                let (n, o) = new_diagonals[i];
                let effective = o.unwrap_or(Self::support(&candidate, &n));
                let required = n.dot(c) - half * (n.x.abs() + n.y.abs() + n.z.abs()) + TOUCH_EPS;
                let tightened = effective.min(required);
                let seg_support = n.dot(&self.seg_a).max(n.dot(&self.seg_b));
                if tightened >= seg_support + self.seed_margin {
                    new_diagonals[i] = (n, Some(tightened));
                    continue 'offender;
                }
            }
            return false;
        }
        self.boxed = candidate;
        self.diagonals = new_diagonals;
        true
    }

    fn grow(&mut self) {
        let mut blocked = [false; 6];
        while !blocked.iter().all(|&b| b) {
            for face in 0..6 {
                if !blocked[face] && !self.try_expand_face(face) {
                    blocked[face] = true;
                }
            }
        }
    }

    fn finish(self, max_faces: usize) -> Polytope {
        let mut faces = Vec::with_capacity(10);
        let b = self.boxed;
        for axis in 0..3 {
            let mut n = Vector3::zeros();
            n[axis] = 1.0;
            let mut p = (b.lo + b.hi) / 2.0;
            p[axis] = b.hi[axis];
            faces.push(Halfspace { normal: n, point: p });
            let mut p = (b.lo + b.hi) / 2.0;
            p[axis] = b.lo[axis];
            faces.push(Halfspace { normal: -n, point: p });
        }
        for (n, o) in &self.diagonals {
            // keep only cuts that actually trim the final box
            if let Some(o) = o {
                if *o < Self::support(&b, n) - TOUCH_EPS && faces.len() < max_faces {
                    faces.push(Halfspace {
                        normal: *n,
                        point: *o * *n,
                    });
                }
            }
        }
        Polytope {
            faces,
            seed: (self.seg_a + self.seg_b) / 2.0,
        }
    }
}

/// Build the corridor for a grid path, with corner cuts allowed on every
/// sub-segment whenever `max_faces` leaves room for them.
pub fn build_corridor(
    grid: &VoxelGrid,
    path: &GridPath,
    max_faces: usize,
) -> Result<Corridor, CorridorError> {
    build_corridor_selective(grid, path, max_faces, &|_| max_faces >= 10)
}

/// Build the corridor with corner cuts enabled only for the seed
/// sub-segments selected by `cuts_enabled` (indexed like
/// `Corridor::assignment`). Cut faces trade axis-aligned cross-section
/// for area near round apertures, so callers enable them only where a
/// plain box turns out too small.
///
/// The path is line-of-sight simplified, split into sub-segments, and
/// each sub-segment grows one polytope. Consecutive polytopes share the
/// sub-segment endpoints strictly in their interiors, which guarantees
/// overlapping interiors.
pub fn build_corridor_selective(
    grid: &VoxelGrid,
    path: &GridPath,
    max_faces: usize,
    cuts_enabled: &dyn Fn(usize) -> bool,
) -> Result<Corridor, CorridorError> {
    let simplified = simplify_path(grid, path);
    if simplified.is_empty() {
        return Err(CorridorError::EmptyPath);
    }
    if simplified.len() == 1 {
        // degenerate single-point path: one box around the point
        let seg = (simplified[0], simplified[0]);
        let margin = SEED_MARGIN_VOXELS * grid.resolution();
        let poly = grow_segment(grid, seg.0, seg.1, margin, max_faces, false, 0)?;
        return Ok(Corridor {
            polytopes: vec![poly],
            waypoints: vec![simplified[0], simplified[0]],
            assignment: vec![0],
        });
    }

    // split long legs so polytopes stay local, then bisect any piece
    // whose margined bounding box still intersects obstacles; the seed
    // margin backs off in tight quarters before giving up
    let full_margin = SEED_MARGIN_VOXELS * grid.resolution();
    let mut seeds: Vec<(Vector3<f64>, Vector3<f64>, f64)> = Vec::new();
    for (leg_index, leg) in simplified.windows(2).enumerate() {
        let len = (leg[1] - leg[0]).norm();
        let pieces = (len / MAX_SEGMENT_LEN).ceil().max(1.0) as usize;
        for i in 0..pieces {
            let a = leg[0] + (leg[1] - leg[0]) * (i as f64 / pieces as f64);
            let b = leg[0] + (leg[1] - leg[0]) * ((i + 1) as f64 / pieces as f64);
            let mut covered = false;
            for margin_scale in [1.0, 0.5, 0.25, 0.0] {
                let margin = full_margin * margin_scale;
                if let Some(ordered) = bisect_free_pieces(grid, a, b, margin) {
                    seeds.extend(ordered.into_iter().map(|(pa, pb)| (pa, pb, margin)));
                    covered = true;
                    break;
                }
            }
            if !covered {
                return Err(CorridorError::CorridorFailure {
                    segment: leg_index,
                    reason: format!(
                        "no free seed box around ({:.2},{:.2},{:.2})-({:.2},{:.2},{:.2})",
                        a.x, a.y, a.z, b.x, b.y, b.z
                    ),
                });
            }
        }
    }

    let mut polytopes: Vec<Polytope> = Vec::new();
    let mut waypoints: Vec<Vector3<f64>> = vec![seeds[0].0];
    let mut assignment = Vec::with_capacity(seeds.len());
    for (i, (a, b, margin)) in seeds.iter().enumerate() {
        // containment merge: reuse the previous polytope when it already
        // holds this sub-segment with margin
        if let Some(prev) = polytopes.last() {
            if prev.point_violation(a) <= -full_margin && prev.point_violation(b) <= -full_margin {
                assignment.push(polytopes.len() - 1);
                *waypoints.last_mut().unwrap() = *b;
                continue;
            }
        }
        let poly = grow_segment(grid, *a, *b, *margin, max_faces, cuts_enabled(i), i)?;
        assignment.push(polytopes.len());
        polytopes.push(poly);
        waypoints.push(*b);
    }
    Ok(Corridor {
        polytopes,
        waypoints,
        assignment,
    })
}

/// Bisect a segment into pieces whose margined bounding boxes are free;
/// `None` if the depth budget runs out.
fn bisect_free_pieces(
    grid: &VoxelGrid,
    a: Vector3<f64>,
    b: Vector3<f64>,
    margin: f64,
) -> Option<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let mut stack = vec![(a, b, 0usize)];
    let mut ordered = Vec::new();
    while let Some((pa, pb, depth)) = stack.pop() {
        let seed = Box3::of_segment(&pa, &pb, margin);
        if !region_blocked(grid, &seed.lo, &seed.hi) {
            ordered.push((pa, pb));
        } else if depth < MAX_BISECT_DEPTH {
            let mid = (pa + pb) / 2.0;
            stack.push((mid, pb, depth + 1));
            stack.push((pa, mid, depth + 1));
        } else {
            return None;
        }
    }
    Some(ordered)
}

fn grow_segment(
    grid: &VoxelGrid,
    a: Vector3<f64>,
    b: Vector3<f64>,
    margin: f64,
    max_faces: usize,
    cuts: bool,
    segment: usize,
) -> Result<Polytope, CorridorError> {
    let seed_box = Box3::of_segment(&a, &b, margin);
    if region_blocked(grid, &seed_box.lo, &seed_box.hi) {
        return Err(CorridorError::CorridorFailure {
            segment,
            reason: "seed box intersects obstacles".into(),
        });
    }
    let mut builder = TubeBuilder::new(grid, a, b, seed_box, cuts && max_faces >= 10);
    builder.seed_margin = margin.max(TOUCH_EPS);
    builder.grow();
    Ok(builder.finish(max_faces))
}

/// Serialize a corridor to the plain-text exchange format: per polytope
/// a face-count line followed by `nx ny nz rx ry rz` lines.
pub fn corridor_to_text(corridor: &Corridor) -> String {
    let mut out = String::new();
    for poly in &corridor.polytopes {
        out.push_str(&format!("{}\n", poly.faces.len()));
        for f in &poly.faces {
            out.push_str(&format!(
                "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
                f.normal.x, f.normal.y, f.normal.z, f.point.x, f.point.y, f.point.z
            ));
        }
    }
    out
}

/// Parse the plain-text corridor format. Seeds are recovered as vertex
/// centroids; waypoints/assignment are not part of the format.
pub fn corridor_from_text(text: &str) -> Result<Vec<Polytope>, CorridorError> {
    let mut polytopes = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    while let Some((lineno, header)) = lines.next() {
        let count: usize = header.trim().parse().map_err(|_| CorridorError::ParseError {
            line: lineno + 1,
            message: format!("expected face count, got '{}'", header.trim()),
        })?;
        let mut faces = Vec::with_capacity(count);
        for _ in 0..count {
            let (lineno, line) = lines.next().ok_or(CorridorError::ParseError {
                line: lineno + 1,
                message: "unexpected end of input inside polytope block".into(),
            })?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CorridorError::ParseError {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 6 {
                return Err(CorridorError::ParseError {
                    line: lineno + 1,
                    message: format!("expected 6 values, got {}", vals.len()),
                });
            }
            faces.push(Halfspace {
                normal: Vector3::new(vals[0], vals[1], vals[2]),
                point: Vector3::new(vals[3], vals[4], vals[5]),
            });
        }
        let mut poly = Polytope {
            faces,
            seed: Vector3::zeros(),
        };
        let verts = poly.vertices();
        if !verts.is_empty() {
            poly.seed = verts.iter().sum::<Vector3<f64>>() / verts.len() as f64;
        }
        polytopes.push(poly);
    }
    Ok(polytopes)
}
