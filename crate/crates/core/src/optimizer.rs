//! Spatial-temporal trajectory optimization with full-body collision
//! penalties and morph scheduling.
//!
//! The constrained problem (stay inside the corridor with every vertex of
//! the shape-dependent body box, respect velocity and body-rate limits)
//! is relaxed into an unconstrained objective: jerk energy plus weighted
//! time plus cubic penalty integrals sampled with trapezoidal quadrature.
//! Durations are optimized through `T = exp(tau)` so positivity never
//! needs an explicit constraint. A quasi-Newton loop drives waypoints and
//! log-durations together.
//!
//! Morphing is handled in two stages: before the continuous optimization
//! each polytope gets a target arm angle and conservative planning
//! extents (covering the angles swept while ramping in a neighbor), and
//! after optimization the angle ramps are placed on the segment-time
//! axis so every ramp completes before its constraining polytope.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};

use crate::corridor::{Corridor, Polytope};
use crate::lbfgs::{self, LbfgsOptions, StopReason};
use crate::morphology::{box_vertices, half_extents_for_angle, GeometryParams, MorphState, ALPHA_MAX, ALPHA_X};
use crate::trajectory::{jerk_gram, time_basis, BoundaryState, CoeffBlock, MincoTrajectory};

/// Penalty and limit configuration.
#[derive(Debug, Clone)]
pub struct OptimizerWeights {
    /// Time regularization weight applied to the total duration.
    pub time_weight: f64,
    /// Velocity feasibility penalty weight.
    pub velocity_weight: f64,
    /// Body-rate feasibility penalty weight.
    pub omega_weight: f64,
    /// Collision penalty weight.
    pub collision_weight: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Quadrature samples per segment (trapezoidal nodes are L + 1).
    pub samples_per_segment: usize,
}

impl Default for OptimizerWeights {
    fn default() -> Self {
        Self {
            time_weight: 20.0,
            velocity_weight: 1e5,
            omega_weight: 1e5,
            collision_weight: 1e6,
            v_max: 1.0,
            omega_max: 3.0,
            samples_per_segment: 16,
        }
    }
}

impl OptimizerWeights {
    /// The penalty weight vector over the three constraint families.
    pub fn penalty_weight_vector(&self) -> [f64; 3] {
        [self.velocity_weight, self.omega_weight, self.collision_weight]
    }
}

/// Per-polytope morph targets and conservative planning extents.
#[derive(Debug, Clone)]
pub struct MorphPlan {
    /// Commanded uniform arm angle inside each polytope.
    pub targets: Vec<f64>,
    /// Planning half extents per polytope, covering the ramp angles.
    pub extents: Vec<(f64, f64, f64)>,
    /// For each polytope boundary, the index of the polytope hosting the
    /// angle ramp (the looser of the two).
    pub hosts: Vec<usize>,
    /// Feasible angle interval per polytope.
    pub feasible: Vec<(f64, f64)>,
}

/// Everything the optimizer needs for one query.
#[derive(Debug, Clone)]
pub struct PlanProblem<'a> {
    pub corridor: &'a Corridor,
    pub boundary: BoundaryState,
    pub geom: &'a GeometryParams,
    pub morph: MorphPlan,
    pub yaw: f64,
    pub gravity: f64,
    /// Initial guess: interior waypoints and segment durations.
    pub initial_waypoints: Vec<Vector3<f64>>,
    pub initial_durations: Vec<f64>,
}

/// Post-hoc feasibility maxima from dense sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub max_velocity: f64,
    pub max_body_rate: f64,
    /// Worst corridor violation over all body vertices, meters.
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: MincoTrajectory,
    pub morph_profile: MorphProfile,
    pub cost: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub success: bool,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PlanError {
    #[error("boundary state outside the corridor (violation {violation:.3} m at {which})")]
    InfeasibleStart { which: &'static str, violation: f64 },
    #[error("no feasible arm angle for polytope {polytope}")]
    MorphInfeasible { polytope: usize },
    #[error("ramp between polytopes {left} and {right} does not fit its host window")]
    MorphRampTooFast { left: usize, right: usize },
    #[error("optimizer hit the iteration cap without meeting the gradient tolerance")]
    DidNotConverge(Box<PlanResult>),
    #[error("corridor is empty")]
    EmptyCorridor,
    #[error(transparent)]
    Trajectory(#[from] crate::trajectory::TrajectoryError),
}

/// Scheduling options for the morph profile.
#[derive(Debug, Clone)]
pub struct MorphScheduleOptions {
    /// Preferred ramp duration, s.
    pub ramp_duration: f64,
    /// Servo slew limit, rad/s.
    pub max_rate: f64,
    /// Fraction of a host window a ramp may occupy.
    pub window_fraction: f64,
}

impl Default for MorphScheduleOptions {
    fn default() -> Self {
        Self {
            ramp_duration: 0.8,
            max_rate: 3.0,
            window_fraction: 0.8,
        }
    }
}

/// One smooth angle ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphTransition {
    pub start: f64,
    pub duration: f64,
    pub from: f64,
    pub to: f64,
}

/// Piecewise morph profile: plateaus joined by quintic-smoothstep ramps.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphProfile {
    pub initial: f64,
    pub transitions: Vec<MorphTransition>,
}

impl MorphProfile {
    pub fn constant(alpha: f64) -> Self {
        Self {
            initial: alpha,
            transitions: Vec::new(),
        }
    }

    /// Uniform arm angle and rate at time `t`.
    pub fn angle(&self, t: f64) -> (f64, f64) {
        let mut level = self.initial;
        for tr in &self.transitions {
            if t < tr.start {
                break;
            }
            if t <= tr.start + tr.duration {
                let u = ((t - tr.start) / tr.duration).clamp(0.0, 1.0);
                let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / tr.duration;
                return (tr.from + (tr.to - tr.from) * s, (tr.to - tr.from) * ds);
            }
            level = tr.to;
        }
        (level, 0.0)
    }

    pub fn state(&self, t: f64) -> MorphState {
        let (alpha, rate) = self.angle(t);
        MorphState::new([alpha; 4], [rate; 4])
    }

    /// Peak angle rate over all ramps.
    pub fn max_rate(&self) -> f64 {
        self.transitions
            .iter()
            .map(|tr| 1.875 * (tr.to - tr.from).abs() / tr.duration)
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------
// planning attitude (drag-free flatness, closed form with fallbacks)
// ---------------------------------------------------------------------

/// Rotation matrix with z-column along `u` and x-column projected onto
/// the yaw heading; falls back gracefully near degeneracies so the
/// penalty stays total.
pub fn planning_attitude(u: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
    let norm = u.norm();
    if norm < 1e-9 {
        return Matrix3::identity();
    }
    let z = u / norm;
    let y_c = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let x_raw = y_c.cross(&z);
    let cross = x_raw.norm();
    if cross < 1e-9 {
        // thrust axis parallel to the yaw plane normal; use the heading
        // x-axis instead to stay defined
        let x_c = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let y_raw = z.cross(&x_c);
        let y = y_raw / y_raw.norm();
        let x = y.cross(&z);
        return Matrix3::from_columns(&[x, y, z]);
    }
    let x = x_raw / cross;
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Attitude and its derivative against the specific-thrust vector by
/// central differences.
fn attitude_with_jacobian(u: &Vector3<f64>, yaw: f64) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let r = planning_attitude(u, yaw);
    let h = 1e-6 * u.norm().max(1.0);
    let mut jac = [Matrix3::zeros(); 3];
    for (i, jac_i) in jac.iter_mut().enumerate() {
        let mut up = *u;
        let mut um = *u;
        up[i] += h;
        um[i] -= h;
        *jac_i = (planning_attitude(&up, yaw) - planning_attitude(&um, yaw)) / (2.0 * h);
    }
    (r, jac)
}

/// Squared tilt rate of the thrust axis and its gradients:
/// `w^2 = ||(I - u u^T / |u|^2) j||^2 / |u|^2`.
fn tilt_rate_squared(u: &Vector3<f64>, j: &Vector3<f64>) -> (f64, Vector3<f64>, Vector3<f64>) {
    let r2 = u.norm_squared().max(1e-12);
    let s = u.dot(j);
    let jj = j.norm_squared();
    let w2 = (jj - s * s / r2) / r2;
    let grad_j = 2.0 * (j - (s / r2) * u) / r2;
    let grad_u = -2.0 * jj * u / (r2 * r2) - 2.0 * s * j / (r2 * r2) + 4.0 * s * s * u / (r2 * r2 * r2);
    (w2, grad_u, grad_j)
}

// ---------------------------------------------------------------------
// morph planning: which angle does each polytope demand
// ---------------------------------------------------------------------

/// Arm angle whose width half-extent equals `w_half` (inverse of the
/// width branch of the extents model).
pub fn alpha_for_width(geom: &GeometryParams, w_half: f64) -> Option<f64> {
    let c = (2.0 * w_half - geom.arm_length) / geom.body_half_length;
    if (-1.0..=1.0).contains(&c) {
        Some(c.acos())
    } else {
        None
    }
}

/// Arm angle whose length half-extent equals `r_half`.
pub fn alpha_for_length(geom: &GeometryParams, r_half: f64) -> Option<f64> {
    let s = (2.0 * r_half - geom.arm_length) / geom.body_half_length;
    if (0.0..=1.0).contains(&s) {
        Some(s.asin())
    } else {
        None
    }
}

/// Exact test: can a box with half extents `(ex, ey, ez)` be translated
/// to fit inside the polytope with `clearance` to every face? Solves
/// `min_p max_f (n_f . p + support_f - offset_f)` by enumerating active
/// face triples of the epigraph linear program.
pub fn box_fits(poly: &Polytope, ex: f64, ey: f64, ez: f64, clearance: f64) -> bool {
    let m = poly.faces.len();
    // reduced constraint: n . p <= b_f
    let mut normals = Vec::with_capacity(m);
    let mut bounds = Vec::with_capacity(m);
    for f in &poly.faces {
        let support =
            ex * f.normal.x.abs() + ey * f.normal.y.abs() + ez * f.normal.z.abs();
        normals.push(f.normal);
        bounds.push(f.normal.dot(&f.point) - support - clearance);
    }
    // quick accept at the seed
    if (0..m).all(|f| normals[f].dot(&poly.seed) <= bounds[f]) {
        return true;
    }
    // min-max via active quadruples (3 position dofs + 1 level)
    let mut best = f64::INFINITY;
    let idx: Vec<usize> = (0..m).collect();
    for a in 0..m {
        for b in (a + 1)..m {
            for c in (b + 1)..m {
                for d in (c + 1)..m {
                    let quad = [idx[a], idx[b], idx[c], idx[d]];
                    let mut mat = nalgebra::Matrix4::zeros();
                    let mut rhs = nalgebra::Vector4::zeros();
                    for (row, &f) in quad.iter().enumerate() {
                        mat[(row, 0)] = normals[f].x;
                        mat[(row, 1)] = normals[f].y;
                        mat[(row, 2)] = normals[f].z;
                        mat[(row, 3)] = -1.0;
                        rhs[row] = bounds[f];
                    }
                    let Some(inv) = mat.try_inverse() else { continue };
                    let sol = inv * rhs;
                    let p = Vector3::new(sol[0], sol[1], sol[2]);
                    let t = sol[3];
                    if !t.is_finite() {
                        continue;
                    }
                    // candidate must dominate every other constraint
                    let valid = (0..m).all(|f| normals[f].dot(&p) - bounds[f] <= t + 1e-9);
                    if valid && t < best {
                        best = t;
                    }
                }
            }
        }
    }
    if best.is_finite() {
        return best <= 0.0;
    }
    // no bounded active set: descend from the seed along the worst-face
    // subgradient (covers cones/slabs that still fit everywhere)
    let mut p = poly.seed;
    let phi = |p: &Vector3<f64>| -> f64 {
        (0..m)
            .map(|f| normals[f].dot(p) - bounds[f])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut step = 1.0;
    for _ in 0..200 {
        if phi(&p) <= 0.0 {
            return true;
        }
        let worst = (0..m)
            .max_by(|&i, &j| {
                (normals[i].dot(&p) - bounds[i]).total_cmp(&(normals[j].dot(&p) - bounds[j]))
            })
            .unwrap();
        p -= step * normals[worst];
        step *= 0.97;
    }
    phi(&p) <= 0.0
}

/// Does the body fit for a uniform arm angle?
fn angle_fits(poly: &Polytope, geom: &GeometryParams, alpha: f64, clearance: f64) -> bool {
    let (r, w, h) = half_extents_for_angle(geom, alpha);
    box_fits(poly, r, w, h, clearance)
}

/// Does the body fit while sweeping the whole angle range?
fn range_fits(poly: &Polytope, geom: &GeometryParams, lo: f64, hi: f64, clearance: f64) -> bool {
    let (r, _, h) = half_extents_for_angle(geom, hi);
    let (_, w, _) = half_extents_for_angle(geom, lo);
    box_fits(poly, r, w, h, clearance)
}

/// Feasible uniform-angle interval for one polytope, by coarse scan plus
/// bisection refinement of the edges around the feasible point nearest
/// the X preset.
fn feasible_alpha_interval(
    poly: &Polytope,
    geom: &GeometryParams,
    clearance: f64,
) -> Option<(f64, f64)> {
    const COARSE: usize = 64;
    let alphas: Vec<f64> = (0..=COARSE)
        .map(|i| ALPHA_MAX * i as f64 / COARSE as f64)
        .collect();
    let mask: Vec<bool> = alphas
        .iter()
        .map(|&a| angle_fits(poly, geom, a, clearance))
        .collect();
    // feasible sample closest to the X preset
    let anchor = (0..=COARSE)
        .filter(|&i| mask[i])
        .min_by(|&i, &j| {
            (alphas[i] - ALPHA_X)
                .abs()
                .total_cmp(&(alphas[j] - ALPHA_X).abs())
        })?;
    // expand to the contiguous feasible block around the anchor
    let mut lo_i = anchor;
    while lo_i > 0 && mask[lo_i - 1] {
        lo_i -= 1;
    }
    let mut hi_i = anchor;
    while hi_i < COARSE && mask[hi_i + 1] {
        hi_i += 1;
    }
    // bisect the edges
    let refine = |mut infeasible: f64, mut feasible: f64| -> f64 {
        for _ in 0..40 {
            let mid = 0.5 * (infeasible + feasible);
            if angle_fits(poly, geom, mid, clearance) {
                feasible = mid;
            } else {
                infeasible = mid;
            }
        }
        feasible
    };
    let lo = if lo_i == 0 {
        0.0
    } else {
        refine(alphas[lo_i - 1], alphas[lo_i])
    };
    let hi = if hi_i == COARSE {
        ALPHA_MAX
    } else {
        refine(alphas[hi_i + 1], alphas[hi_i])
    };
    Some((lo, hi))
}

/// Choose per-polytope morph targets and conservative planning extents.
///
/// With morphing disabled only the X preset is considered, so a corridor
/// that demands deformation fails with `MorphInfeasible`.
pub fn plan_morph(
    corridor: &Corridor,
    geom: &GeometryParams,
    clearance: f64,
    morph_enabled: bool,
) -> Result<MorphPlan, PlanError> {
    let k = corridor.polytopes.len();
    if k == 0 {
        return Err(PlanError::EmptyCorridor);
    }
    let mut targets = Vec::with_capacity(k);
    let mut feasible = Vec::with_capacity(k);
    for (i, poly) in corridor.polytopes.iter().enumerate() {
        if !morph_enabled {
            if !angle_fits(poly, geom, ALPHA_X, clearance) {
                return Err(PlanError::MorphInfeasible { polytope: i });
            }
            targets.push(ALPHA_X);
            feasible.push((ALPHA_X, ALPHA_X));
            continue;
        }
        let (lo, hi) =
            feasible_alpha_interval(poly, geom, clearance).ok_or(PlanError::MorphInfeasible { polytope: i })?;
        targets.push(ALPHA_X.clamp(lo, hi));
        feasible.push((lo, hi));
    }
    // ramp hosts: the looser neighbor carries each angle change
    let mut hosts = Vec::with_capacity(k.saturating_sub(1));
    for i in 0..k.saturating_sub(1) {
        let loose_left = feasible[i].1 - feasible[i].0;
        let loose_right = feasible[i + 1].1 - feasible[i + 1].0;
        let host = if loose_left >= loose_right { i } else { i + 1 };
        hosts.push(host);
    }
    // conservative extents cover every angle the body can assume inside
    // the polytope: its own target plus ramps it hosts
    let mut extents = Vec::with_capacity(k);
    for i in 0..k {
        let mut lo = targets[i];
        let mut hi = targets[i];
        if i > 0 && hosts[i - 1] == i {
            lo = lo.min(targets[i - 1]);
            hi = hi.max(targets[i - 1]);
        }
        if i + 1 < k && hosts[i] == i {
            lo = lo.min(targets[i + 1]);
            hi = hi.max(targets[i + 1]);
        }
        // the host must accommodate the swept range; move the ramp to the
        // other side if it cannot
        if !range_fits(&corridor.polytopes[i], geom, lo, hi, clearance * 0.5) {
            let mut fixed = false;
            if i > 0 && hosts[i - 1] == i && range_fits(
                &corridor.polytopes[i - 1],
                geom,
                targets[i - 1].min(targets[i]),
                targets[i - 1].max(targets[i]),
                clearance * 0.5,
            ) {
                hosts[i - 1] = i - 1;
                fixed = true;
            }
            if i + 1 < k && hosts[i] == i && range_fits(
                &corridor.polytopes[i + 1],
                geom,
                targets[i].min(targets[i + 1]),
                targets[i].max(targets[i + 1]),
                clearance * 0.5,
            ) {
                hosts[i] = i + 1;
                fixed = true;
            }
            if !fixed {
                return Err(PlanError::MorphInfeasible { polytope: i });
            }
            // recompute this polytope's range with the new hosts
            lo = targets[i];
            hi = targets[i];
            if i > 0 && hosts[i - 1] == i {
                lo = lo.min(targets[i - 1]);
                hi = hi.max(targets[i - 1]);
            }
            if i + 1 < k && hosts[i] == i {
                lo = lo.min(targets[i + 1]);
                hi = hi.max(targets[i + 1]);
            }
        }
        let (r, _, h) = half_extents_for_angle(geom, hi);
        let (_, w, _) = half_extents_for_angle(geom, lo);
        extents.push((r, w, h));
    }
    Ok(MorphPlan {
        targets,
        extents,
        hosts,
        feasible,
    })
}

// ---------------------------------------------------------------------
// cost and gradient
// ---------------------------------------------------------------------

fn cubic_penalty(g: f64) -> (f64, f64) {
    if g > 0.0 {
        (g * g * g, 3.0 * g * g)
    } else {
        (0.0, 0.0)
    }
}

/// Objective value and gradients with respect to waypoints and raw
/// (log-space) durations.
pub fn cost_and_gradient(
    problem: &PlanProblem,
    weights: &OptimizerWeights,
    waypoints: &[Vector3<f64>],
    tau: &[f64],
) -> Result<(f64, Vec<Vector3<f64>>, Vec<f64>), PlanError> {
    let segments = tau.len();
    let durations: Vec<f64> = tau.iter().map(|t| t.exp()).collect();
    let traj = MincoTrajectory::solve(waypoints.to_vec(), durations.clone(), problem.boundary)?;
    let coeffs = traj.coefficients();
    let big_l = weights.samples_per_segment.max(8);

    let mut cost = 0.0;
    let mut grad_c = vec![CoeffBlock::zeros(); segments];
    let mut grad_t_direct = vec![0.0; segments];

    let gravity_vec = Vector3::new(0.0, 0.0, problem.gravity);
    let vmax2 = weights.v_max * weights.v_max;
    let wmax2 = weights.omega_max * weights.omega_max;

    for k in 0..segments {
        let tk = durations[k];
        let ck = &coeffs[k];
        // smoothness: jerk energy
        let gram = jerk_gram(tk);
        cost += (ck.transpose() * gram * ck).trace();
        grad_c[k] += 2.0 * gram * ck;
        let jerk_end = ck.transpose() * time_basis(tk, 3);
        grad_t_direct[k] += jerk_end.norm_squared();
        // time regularization rho_T * sum(T)
        cost += weights.time_weight * tk;
        grad_t_direct[k] += weights.time_weight;

        let poly = &problem.corridor.polytopes[k];
        let (ex, ey, ez) = problem.morph.extents[k];
        let body = box_vertices(ex, ey, ez);
        let step = tk / big_l as f64;
        for l in 0..=big_l {
            let t = step * l as f64;
            let trap = if l == 0 || l == big_l { 0.5 } else { 1.0 };
            let frac = l as f64 / big_l as f64;
            let beta0 = time_basis(t, 0);
            let beta1 = time_basis(t, 1);
            let beta2 = time_basis(t, 2);
            let beta3 = time_basis(t, 3);
            let pos = ck.transpose() * beta0;
            let vel = ck.transpose() * beta1;
            let acc = ck.transpose() * beta2;
            let jerk = ck.transpose() * beta3;
            let snap = ck.transpose() * time_basis(t, 4);

            // velocity feasibility
            let gv = vel.norm_squared() - vmax2;
            let (pen, dpen) = cubic_penalty(gv);
            if pen > 0.0 {
                let scale = weights.velocity_weight * step * trap;
                cost += scale * pen;
                let dg_dc = 2.0 * beta1 * vel.transpose();
                grad_c[k] += scale * dpen * dg_dc;
                let dg_dt = 2.0 * vel.dot(&acc);
                grad_t_direct[k] += weights.velocity_weight * trap * pen / big_l as f64
                    + scale * dpen * dg_dt * frac;
            }

            // body-rate feasibility on the thrust-axis tilt rate
            let u = acc + gravity_vec;
            let (w2, dw_du, dw_dj) = tilt_rate_squared(&u, &jerk);
            let gw = w2 - wmax2;
            let (pen, dpen) = cubic_penalty(gw);
            if pen > 0.0 {
                let scale = weights.omega_weight * step * trap;
                cost += scale * pen;
                grad_c[k] += scale * dpen * (beta2 * dw_du.transpose() + beta3 * dw_dj.transpose());
                let dg_dt = dw_du.dot(&jerk) + dw_dj.dot(&snap);
                grad_t_direct[k] += weights.omega_weight * trap * pen / big_l as f64
                    + scale * dpen * dg_dt * frac;
            }

            // full-body collision: every box vertex against every face
            let needs_attitude = poly.faces.iter().any(|f| {
                // cheap reject: center far inside by more than the body radius
                f.violation(&pos) > -(ex * ex + ey * ey + ez * ez).sqrt()
            });
            if needs_attitude {
                let (rot, drot) = attitude_with_jacobian(&u, problem.yaw);
                for vertex in &body {
                    let world = rot * vertex + pos;
                    for face in &poly.faces {
                        let gc = face.violation(&world);
                        let (pen, dpen) = cubic_penalty(gc);
                        if pen == 0.0 {
                            continue;
                        }
                        let scale = weights.collision_weight * step * trap;
                        cost += scale * pen;
                        let n = face.normal;
                        let dg_du = Vector3::new(
                            n.dot(&(drot[0] * vertex)),
                            n.dot(&(drot[1] * vertex)),
                            n.dot(&(drot[2] * vertex)),
                        );
                        grad_c[k] += scale
                            * dpen
                            * (beta0 * n.transpose() + beta2 * dg_du.transpose());
                        let dg_dt = n.dot(&vel) + dg_du.dot(&jerk);
                        grad_t_direct[k] += weights.collision_weight * trap * pen / big_l as f64
                            + scale * dpen * dg_dt * frac;
                    }
                }
            }
        }
    }

    let (grad_q, grad_t) = traj.propagate_gradient(&grad_c, &grad_t_direct);
    let grad_tau: Vec<f64> = grad_t
        .iter()
        .zip(&durations)
        .map(|(g, t)| g * t)
        .collect();
    Ok((cost, grad_q, grad_tau))
}

// ---------------------------------------------------------------------
// dense feasibility check
// ---------------------------------------------------------------------

/// Maximum constraint residuals over a dense sampling (4L nodes per
/// segment). The half extents used at each sample come from `extents_at`
/// (planned extents for the post-hoc gate, actual morph-profile extents
/// for end-to-end audits).
pub fn dense_residuals<F>(
    traj: &MincoTrajectory,
    corridor: &Corridor,
    yaw: f64,
    gravity: f64,
    samples_per_segment: usize,
    mut extents_at: F,
) -> Residuals
where
    F: FnMut(usize, f64) -> (f64, f64, f64),
{
    let mut max_velocity: f64 = 0.0;
    let mut max_body_rate: f64 = 0.0;
    let mut max_violation: f64 = f64::NEG_INFINITY;
    let gravity_vec = Vector3::new(0.0, 0.0, gravity);
    for k in 0..traj.segment_count() {
        let tk = traj.durations()[k];
        let poly = &corridor.polytopes[k.min(corridor.polytopes.len() - 1)];
        for l in 0..=samples_per_segment {
            let t_local = tk * l as f64 / samples_per_segment as f64;
            let t_global = traj.segment_start(k) + t_local;
            let vel = traj.segment_eval(k, t_local, 1);
            let acc = traj.segment_eval(k, t_local, 2);
            let jerk = traj.segment_eval(k, t_local, 3);
            max_velocity = max_velocity.max(vel.norm());
            let u = acc + gravity_vec;
            let (w2, _, _) = tilt_rate_squared(&u, &jerk);
            max_body_rate = max_body_rate.max(w2.max(0.0).sqrt());
            let (ex, ey, ez) = extents_at(k, t_global);
            let rot = planning_attitude(&u, yaw);
            let pos = traj.segment_eval(k, t_local, 0);
            for vertex in box_vertices(ex, ey, ez) {
                let world = rot * vertex + pos;
                max_violation = max_violation.max(poly.point_violation(&world));
            }
        }
    }
    Residuals {
        max_velocity,
        max_body_rate,
        max_violation,
    }
}

// ---------------------------------------------------------------------
// morph scheduling on the time axis
// ---------------------------------------------------------------------

/// Place the angle ramps on the solved time axis: each ramp lives inside
/// its host polytope's window and completes before the tighter polytope
/// is entered.
pub fn schedule_morph(
    traj: &MincoTrajectory,
    morph: &MorphPlan,
    options: &MorphScheduleOptions,
) -> Result<MorphProfile, PlanError> {
    let k = morph.targets.len();
    let mut transitions = Vec::new();
    for i in 0..k.saturating_sub(1) {
        let from = morph.targets[i];
        let to = morph.targets[i + 1];
        if (to - from).abs() < 1e-9 {
            continue;
        }
        let host = morph.hosts[i];
        let boundary_time = traj.segment_start(i) + traj.durations()[i];
        let window = traj.durations()[host];
        let min_duration = 1.875 * (to - from).abs() / options.max_rate;
        let duration = options
            .ramp_duration
            .min(options.window_fraction * window)
            .max(min_duration);
        if duration > options.window_fraction * window + 1e-9 {
            return Err(PlanError::MorphRampTooFast { left: i, right: i + 1 });
        }
        let start = if host == i {
            boundary_time - duration
        } else {
            boundary_time
        };
        transitions.push(MorphTransition {
            start,
            duration,
            from,
            to,
        });
    }
    // ramps sharing a window must not overlap
    for pair in transitions.windows(2) {
        if pair[1].start < pair[0].start + pair[0].duration - 1e-9 {
            return Err(PlanError::MorphRampTooFast {
                left: 0,
                right: transitions.len(),
            });
        }
    }
    Ok(MorphProfile {
        initial: morph.targets[0],
        transitions,
    })
}

// ---------------------------------------------------------------------
// the full planning entry point
// ---------------------------------------------------------------------

/// Build the standard problem for a corridor: initial waypoints from the
/// corridor junctions, trapezoidal time allocation at half the velocity
/// limit.
pub fn problem_for_corridor<'a>(
    corridor: &'a Corridor,
    boundary: BoundaryState,
    geom: &'a GeometryParams,
    morph: MorphPlan,
    gravity: f64,
    v_max: f64,
) -> PlanProblem<'a> {
    let k = corridor.polytopes.len();
    let initial_waypoints: Vec<Vector3<f64>> = (1..k).map(|i| corridor.waypoints[i]).collect();
    let mut initial_durations = Vec::with_capacity(k);
    let mut prev = boundary.start.position;
    for i in 0..k {
        let next = if i + 1 < k {
            corridor.waypoints[i + 1]
        } else {
            boundary.goal.position
        };
        let chord = (next - prev).norm();
        initial_durations.push((chord / (0.5 * v_max)).max(0.3));
        prev = next;
    }
    PlanProblem {
        corridor,
        boundary,
        geom,
        morph,
        yaw: 0.0,
        gravity,
        initial_waypoints,
        initial_durations,
    }
}

/// Thresholds of the post-hoc feasibility gate.
const VELOCITY_SLACK: f64 = 1.02;
const OMEGA_SLACK: f64 = 1.02;
const VIOLATION_LIMIT: f64 = 0.01;

/// Solve the spatial-temporal problem end to end.
pub fn plan(
    problem: &PlanProblem,
    weights: &OptimizerWeights,
    schedule: &MorphScheduleOptions,
) -> Result<PlanResult, PlanError> {
    let started = Instant::now();
    let k = problem.corridor.polytopes.len();
    if k == 0 {
        return Err(PlanError::EmptyCorridor);
    }
    let sv = problem.corridor.polytopes[0].point_violation(&problem.boundary.start.position);
    if sv > 1e-9 {
        return Err(PlanError::InfeasibleStart {
            which: "start",
            violation: sv,
        });
    }
    let gv = problem.corridor.polytopes[k - 1].point_violation(&problem.boundary.goal.position);
    if gv > 1e-9 {
        return Err(PlanError::InfeasibleStart {
            which: "goal",
            violation: gv,
        });
    }

    // pack (q, tau) into a flat vector
    let nq = problem.initial_waypoints.len();
    let mut x0 = Vec::with_capacity(3 * nq + k);
    for w in &problem.initial_waypoints {
        x0.extend_from_slice(&[w.x, w.y, w.z]);
    }
    for t in &problem.initial_durations {
        x0.push(t.max(1e-3).ln());
    }

    let unpack = |x: &[f64]| -> (Vec<Vector3<f64>>, Vec<f64>) {
        let q: Vec<Vector3<f64>> = (0..nq)
            .map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
            .collect();
        let tau = x[3 * nq..].to_vec();
        (q, tau)
    };

    let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
        let (q, tau) = unpack(x);
        match cost_and_gradient(problem, weights, &q, &tau) {
            Ok((cost, gq, gtau)) => {
                for (i, g) in gq.iter().enumerate() {
                    grad[3 * i] = g.x;
                    grad[3 * i + 1] = g.y;
                    grad[3 * i + 2] = g.z;
                }
                grad[3 * nq..].copy_from_slice(&gtau);
                cost
            }
            Err(_) => {
                grad.fill(0.0);
                f64::INFINITY
            }
        }
    };

    let options = LbfgsOptions {
        memory: 12,
        max_iterations: 3000,
        gradient_tolerance: 1e-5,
        ..Default::default()
    };
    let result = lbfgs::minimize(objective, &x0, &options);

    let (q, tau) = unpack(&result.x);
    let durations: Vec<f64> = tau.iter().map(|t| t.exp()).collect();
    let trajectory = MincoTrajectory::solve(q, durations, problem.boundary)?;
    let dense = 4 * weights.samples_per_segment.max(8);
    let residuals = dense_residuals(
        &trajectory,
        problem.corridor,
        problem.yaw,
        problem.gravity,
        dense,
        |seg, _| problem.morph.extents[seg],
    );
    let morph_profile = schedule_morph(&trajectory, &problem.morph, schedule)?;
    let success = residuals.max_velocity <= VELOCITY_SLACK * weights.v_max
        && residuals.max_body_rate <= OMEGA_SLACK * weights.omega_max
        && residuals.max_violation <= VIOLATION_LIMIT;
    let plan_result = PlanResult {
        trajectory,
        morph_profile,
        cost: result.cost,
        residuals,
        iterations: result.iterations,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        success,
    };
    if result.stop == StopReason::MaxIterations {
        return Err(PlanError::DidNotConverge(Box::new(plan_result)));
    }
    Ok(plan_result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::Halfspace;
    use crate::dynamics::GRAVITY;
    use crate::trajectory::EndpointState;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn box_polytope(lo: Vector3<f64>, hi: Vector3<f64>) -> Polytope {
        let mut faces = Vec::new();
        let center = (lo + hi) / 2.0;
        for axis in 0..3 {
            let mut n = Vector3::zeros();
            n[axis] = 1.0;
            let mut p = center;
            p[axis] = hi[axis];
            faces.push(Halfspace { normal: n, point: p });
            let mut p = center;
            p[axis] = lo[axis];
            faces.push(Halfspace { normal: -n, point: p });
        }
        Polytope { faces, seed: center }
    }

    fn test_geom() -> GeometryParams {
        GeometryParams::with_hinges_at_corners(0.2, 0.28, 0.9, 0.11, 0.05, 0.016, 1.0).unwrap()
    }

    fn corridor_of_boxes(boxes: &[(Vector3<f64>, Vector3<f64>)], path: &[Vector3<f64>]) -> Corridor {
        Corridor {
            polytopes: boxes.iter().map(|(lo, hi)| box_polytope(*lo, *hi)).collect(),
            waypoints: path.to_vec(),
            assignment: (0..boxes.len()).collect(),
        }
    }

    fn x_extents(geom: &GeometryParams) -> (f64, f64, f64) {
        half_extents_for_angle(geom, ALPHA_X)
    }

    fn uniform_morph_plan(k: usize, geom: &GeometryParams) -> MorphPlan {
        MorphPlan {
            targets: vec![ALPHA_X; k],
            extents: vec![x_extents(geom); k],
            hosts: (0..k.saturating_sub(1)).collect(),
            feasible: vec![(0.0, ALPHA_MAX); k],
        }
    }

    fn rest_boundary(a: Vector3<f64>, b: Vector3<f64>) -> BoundaryState {
        BoundaryState {
            start: EndpointState::at_rest(a),
            goal: EndpointState::at_rest(b),
        }
    }

    #[test]
    fn inactive_penalties_reduce_to_smooth_cost() {
        let geom = test_geom();
        let corridor = corridor_of_boxes(
            &[(Vector3::new(-10.0, -10.0, -10.0), Vector3::new(10.0, 10.0, 10.0))],
            &[Vector3::new(0.0, 0.0, 1.0), Vector3::new(2.0, 0.0, 1.0)],
        );
        let boundary = rest_boundary(Vector3::new(0.0, 0.0, 1.0), Vector3::new(2.0, 0.0, 1.0));
        let morph = uniform_morph_plan(1, &geom);
        let weights = OptimizerWeights {
            v_max: 100.0,
            omega_max: 100.0,
            ..Default::default()
        };
        let problem = problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, weights.v_max);
        let tau = [2.0f64.ln()];
        let (cost, _, _) = cost_and_gradient(&problem, &weights, &[], &tau).unwrap();
        let traj = MincoTrajectory::solve(vec![], vec![2.0], boundary).unwrap();
        let expect = traj.jerk_energy() + weights.time_weight * 2.0;
        assert_relative_eq!(cost, expect, max_relative = 1e-12);
    }

    /// Closed-form smoothness gradient against finite differences of the
    /// jerk-energy expression.
    #[test]
    fn smoothness_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let t = 1.37;
        let mut c = CoeffBlock::zeros();
        for m in 0..6 {
            for a in 0..3 {
                c[(m, a)] = rng.random_range(-1.0..1.0);
            }
        }
        let energy = |c: &CoeffBlock| (c.transpose() * jerk_gram(t) * c).trace();
        let analytic = 2.0 * jerk_gram(t) * c;
        let h = 1e-6;
        for m in 0..6 {
            for a in 0..3 {
                let mut cp = c;
                let mut cm = c;
                cp[(m, a)] += h;
                cm[(m, a)] -= h;
                let fd = (energy(&cp) - energy(&cm)) / (2.0 * h);
                assert!(
                    (fd - analytic[(m, a)]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "coeff ({m},{a}): {fd} vs {}",
                    analytic[(m, a)]
                );
            }
        }
    }

    fn random_three_box_problem(
        seed: u64,
        geom: &GeometryParams,
    ) -> (Corridor, BoundaryState, Vec<Vector3<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = || rng.random_range(-0.08..0.08);
        let half_y = 0.45 + jitter();
        let half_z = 0.45 + jitter();
        let boxes = vec![
            (
                Vector3::new(-0.4 + jitter(), -half_y, 1.0 - half_z),
                Vector3::new(1.3 + jitter(), half_y, 1.0 + half_z),
            ),
            (
                Vector3::new(1.0 + jitter(), -half_y - 0.1, 1.0 - half_z),
                Vector3::new(2.4 + jitter(), half_y + 0.1, 1.0 + half_z),
            ),
            (
                Vector3::new(2.1 + jitter(), -half_y, 1.0 - half_z),
                Vector3::new(3.6 + jitter(), half_y, 1.0 + half_z),
            ),
        ];
        let path = vec![
            Vector3::new(0.0, jitter(), 1.0),
            Vector3::new(1.2, jitter(), 1.0 + jitter()),
            Vector3::new(2.3, jitter(), 1.0 + jitter()),
            Vector3::new(3.2, jitter(), 1.0),
        ];
        let corridor = corridor_of_boxes(&boxes, &path);
        let boundary = rest_boundary(path[0], path[3]);
        let q = vec![path[1], path[2]];
        let t = vec![
            rng.random_range(0.8..1.6),
            rng.random_range(0.8..1.6),
            rng.random_range(0.8..1.6),
        ];
        (corridor, boundary, q, t)
    }

    /// Full objective gradient audit in both waypoints and log-durations
    /// on random three-polytope instances with active penalties.
    #[test]
    fn full_gradient_audit() {
        let geom = test_geom();
        let weights = OptimizerWeights {
            v_max: 1.2,
            omega_max: 2.0,
            ..Default::default()
        };
        let started = std::time::Instant::now();
        for seed in 0..20 {
            let (corridor, boundary, q, t) = random_three_box_problem(seed, &geom);
            let morph = uniform_morph_plan(3, &geom);
            let problem =
                problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, weights.v_max);
            let tau: Vec<f64> = t.iter().map(|x| x.ln()).collect();
            let (cost, gq, gtau) = cost_and_gradient(&problem, &weights, &q, &tau).unwrap();
            assert!(cost.is_finite());

            let eval = |q: &[Vector3<f64>], tau: &[f64]| -> f64 {
                cost_and_gradient(&problem, &weights, q, tau).unwrap().0
            };
            let h = 1e-6;
            let gmax = gq
                .iter()
                .flat_map(|g| g.iter().copied())
                .chain(gtau.iter().copied())
                .map(f64::abs)
                .fold(0.0, f64::max);
            for j in 0..q.len() {
                for axis in 0..3 {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[j][axis] += h;
                    qm[j][axis] -= h;
                    let fd = (eval(&qp, &tau) - eval(&qm, &tau)) / (2.0 * h);
                    let scale = fd.abs().max(gq[j][axis].abs()).max(1e-6 * gmax).max(1e-6);
                    assert!(
                        (fd - gq[j][axis]).abs() / scale < 1e-4,
                        "seed {seed} dq[{j}][{axis}]: fd={fd:.8e} analytic={:.8e}",
                        gq[j][axis]
                    );
                }
            }
            for k in 0..tau.len() {
                let mut tp = tau.clone();
                let mut tm = tau.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (eval(&q, &tp) - eval(&q, &tm)) / (2.0 * h);
                let scale = fd.abs().max(gtau[k].abs()).max(1e-6 * gmax).max(1e-6);
                assert!(
                    (fd - gtau[k]).abs() / scale < 1e-4,
                    "seed {seed} dtau[{k}]: fd={fd:.8e} analytic={:.8e}",
                    gtau[k]
                );
            }
        }
        assert!(
            started.elapsed().as_secs_f64() < 10.0,
            "gradient audit too slow: {:?}",
            started.elapsed()
        );
    }

    /// Free-space hop: the optimizer's jerk cost must come within 1% of
    /// the single-segment minimum-jerk cost for its own chosen total time.
    #[test]
    fn free_space_hop_matches_boundary_value_cost() {
        let geom = test_geom();
        let corridor = corridor_of_boxes(
            &[
                (Vector3::new(-1.0, -1.0, 0.0), Vector3::new(1.4, 1.0, 2.0)),
                (Vector3::new(0.6, -1.0, 0.0), Vector3::new(3.0, 1.0, 2.0)),
            ],
            &[
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(1.0, 0.0, 1.0),
                Vector3::new(2.0, 0.0, 1.0),
            ],
        );
        let boundary = rest_boundary(Vector3::new(0.0, 0.0, 1.0), Vector3::new(2.0, 0.0, 1.0));
        let weights = OptimizerWeights {
            v_max: 2.0,
            omega_max: 4.0,
            ..Default::default()
        };
        let morph = uniform_morph_plan(2, &geom);
        let problem = problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, weights.v_max);
        let result = plan(&problem, &weights, &MorphScheduleOptions::default()).unwrap();
        assert!(result.success, "residuals: {:?}", result.residuals);

        let total = result.trajectory.total_duration();
        let single = MincoTrajectory::solve(vec![], vec![total], boundary).unwrap();
        let jerk_opt = result.trajectory.jerk_energy();
        let jerk_ref = single.jerk_energy();
        assert!(
            (jerk_opt - jerk_ref).abs() <= 0.01 * jerk_ref,
            "jerk {jerk_opt} vs single-segment {jerk_ref}"
        );
    }

    #[test]
    fn plan_is_deterministic() {
        let geom = test_geom();
        let (corridor, boundary, _, _) = random_three_box_problem(3, &geom);
        let weights = OptimizerWeights {
            v_max: 1.5,
            omega_max: 3.0,
            ..Default::default()
        };
        let morph = uniform_morph_plan(3, &geom);
        let p1 = problem_for_corridor(&corridor, boundary, &geom, morph.clone(), GRAVITY, weights.v_max);
        let p2 = problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, weights.v_max);
        let a = plan(&p1, &weights, &MorphScheduleOptions::default()).unwrap();
        let b = plan(&p2, &weights, &MorphScheduleOptions::default()).unwrap();
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        assert_eq!(a.iterations, b.iterations);
        for (ca, cb) in a.trajectory.coefficients().iter().zip(b.trajectory.coefficients()) {
            for m in 0..6 {
                for axis in 0..3 {
                    assert_eq!(ca[(m, axis)].to_bits(), cb[(m, axis)].to_bits());
                }
            }
        }
    }

    /// Raising the penalty weights must not worsen post-hoc feasibility.
    #[test]
    fn penalty_weights_monotone_feasibility() {
        let geom = test_geom();
        let (corridor, boundary, _, _) = random_three_box_problem(7, &geom);
        let run = |mult: f64| -> Residuals {
            let weights = OptimizerWeights {
                v_max: 1.0,
                omega_max: 2.0,
                velocity_weight: 1e3 * mult,
                omega_weight: 1e3 * mult,
                collision_weight: 1e3 * mult,
                time_weight: 30.0,
                ..Default::default()
            };
            let morph = uniform_morph_plan(3, &geom);
            let problem =
                problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, weights.v_max);
            match plan(&problem, &weights, &MorphScheduleOptions::default()) {
                Ok(r) => r.residuals,
                Err(PlanError::DidNotConverge(r)) => r.residuals,
                Err(e) => panic!("{e}"),
            }
        };
        let low = run(1.0);
        let high = run(10.0);
        let excess = |r: &Residuals| {
            (r.max_velocity - 1.0).max(0.0)
                + (r.max_body_rate - 2.0).max(0.0)
                + r.max_violation.max(0.0)
        };
        assert!(
            excess(&high) <= excess(&low) + 1e-9,
            "low {low:?} high {high:?}"
        );
    }

    #[test]
    fn box_fits_basic_cases() {
        let poly = box_polytope(Vector3::new(-0.5, -0.5, 0.0), Vector3::new(0.5, 0.5, 1.0));
        assert!(box_fits(&poly, 0.4, 0.4, 0.4, 0.05));
        assert!(!box_fits(&poly, 0.6, 0.1, 0.1, 0.0));
        assert!(!box_fits(&poly, 0.4, 0.4, 0.4, 0.2));
        // diagonal cut shaving a corner still leaves room for a small box
        let mut poly = poly;
        let n = Vector3::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2, 0.0);
        poly.faces.push(Halfspace {
            normal: n,
            point: n * 0.55,
        });
        assert!(box_fits(&poly, 0.3, 0.3, 0.3, 0.0));
        assert!(!box_fits(&poly, 0.45, 0.45, 0.3, 0.0));
    }

    #[test]
    fn morph_plan_wide_corridor_stays_at_x() {
        let geom = test_geom();
        let corridor = corridor_of_boxes(
            &[
                (Vector3::new(-1.0, -1.0, 0.0), Vector3::new(1.5, 1.0, 2.0)),
                (Vector3::new(1.0, -1.0, 0.0), Vector3::new(3.0, 1.0, 2.0)),
            ],
            &[
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(1.2, 0.0, 1.0),
                Vector3::new(2.5, 0.0, 1.0),
            ],
        );
        let plan = plan_morph(&corridor, &geom, 0.02, true).unwrap();
        for &t in &plan.targets {
            assert_relative_eq!(t, ALPHA_X, epsilon = 1e-9);
        }
        let profile = MorphProfile {
            initial: plan.targets[0],
            transitions: vec![],
        };
        assert_eq!(profile.angle(1.0).0, ALPHA_X);
    }

    /// Narrow middle polytope: the schedule is X -> H -> X and the H
    /// plateau covers the narrow polytope's whole time window.
    #[test]
    fn narrow_polytope_schedules_full_fold() {
        let geom = test_geom();
        // H extents: r = 0.10, w = 0.24; make the middle tube only fit
        // alpha near zero: x half-width 0.107 demands r(alpha) <= 0.102
        let boxes = [
            (Vector3::new(-2.0, -2.0, 0.0), Vector3::new(2.0, 2.0, 2.0)),
            (Vector3::new(-0.107, -2.0, 0.84), Vector3::new(0.107, 2.0, 1.16)),
            (Vector3::new(-2.0, -2.0, 0.0), Vector3::new(2.0, 2.0, 2.0)),
        ];
        let path = [
            Vector3::new(0.0, -1.5, 1.0),
            Vector3::new(0.0, -0.5, 1.0),
            Vector3::new(0.0, 0.5, 1.0),
            Vector3::new(0.0, 1.5, 1.0),
        ];
        let corridor = corridor_of_boxes(&boxes, &path);
        let morph = plan_morph(&corridor, &geom, 0.005, true).unwrap();
        assert_relative_eq!(morph.targets[0], ALPHA_X, epsilon = 1e-9);
        assert!(morph.targets[1] < 0.06, "middle target {}", morph.targets[1]);
        assert_relative_eq!(morph.targets[2], ALPHA_X, epsilon = 1e-9);
        // hosts are the wide neighbors
        assert_eq!(morph.hosts, vec![0, 2]);

        let boundary = rest_boundary(path[0], path[3]);
        let traj = MincoTrajectory::solve(
            vec![path[1], path[2]],
            vec![2.0, 2.0, 2.0],
            boundary,
        )
        .unwrap();
        let profile = schedule_morph(&traj, &morph, &MorphScheduleOptions::default()).unwrap();
        assert_eq!(profile.transitions.len(), 2);
        // fold completes before entering the narrow window [2, 4]
        let fold = &profile.transitions[0];
        assert!(fold.start + fold.duration <= 2.0 + 1e-9);
        // unfold starts only after leaving it
        let unfold = &profile.transitions[1];
        assert!(unfold.start >= 4.0 - 1e-9);
        // plateau covers the entire narrow window
        for i in 0..=20 {
            let t = 2.0 + 2.0 * i as f64 / 20.0;
            let (alpha, _) = profile.angle(t);
            assert!((alpha - morph.targets[1]).abs() < 1e-9);
        }
        // servo rate bound
        assert!(profile.max_rate() <= MorphScheduleOptions::default().max_rate + 1e-9);
    }

    /// The commanded angle for a width-limited polytope solves the
    /// extents model exactly.
    #[test]
    fn width_limited_target_matches_root_solve() {
        let geom = test_geom();
        let clearance = 0.01;
        // available width half-extent after clearance: exactly 0.19,
        // which the X preset (w = 0.199) cannot satisfy
        let w_avail = 0.19 + clearance;
        let boxes = [(
            Vector3::new(-2.0, -w_avail, 0.0),
            Vector3::new(2.0, w_avail, 2.0),
        )];
        let path = [Vector3::new(-1.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0)];
        let corridor = corridor_of_boxes(&boxes, &path);
        let morph = plan_morph(&corridor, &geom, clearance, true).unwrap();
        let oracle = alpha_for_width(&geom, 0.19).unwrap();
        assert!(
            (morph.targets[0] - oracle).abs() < 1e-6,
            "target {} vs root {}",
            morph.targets[0],
            oracle
        );
    }

    #[test]
    fn morph_disabled_fails_on_narrow_corridor() {
        let geom = test_geom();
        let boxes = [(Vector3::new(-0.11, -2.0, 0.8), Vector3::new(0.11, 2.0, 1.2))];
        let path = [Vector3::new(0.0, -1.0, 1.0), Vector3::new(0.0, 1.0, 1.0)];
        let corridor = corridor_of_boxes(&boxes, &path);
        assert!(matches!(
            plan_morph(&corridor, &geom, 0.005, false),
            Err(PlanError::MorphInfeasible { .. })
        ));
        // with morphing it folds
        let morph = plan_morph(&corridor, &geom, 0.005, true).unwrap();
        assert!(morph.targets[0] < 0.1);
    }

    #[test]
    fn infeasible_start_detected() {
        let geom = test_geom();
        let corridor = corridor_of_boxes(
            &[(Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 1.0))],
            &[Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.9, 0.5, 0.5)],
        );
        let boundary = rest_boundary(Vector3::new(-1.0, 0.5, 0.5), Vector3::new(0.9, 0.5, 0.5));
        let weights = OptimizerWeights::default();
        let morph = uniform_morph_plan(1, &geom);
        let problem = problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, 1.0);
        assert!(matches!(
            plan(&problem, &weights, &MorphScheduleOptions::default()),
            Err(PlanError::InfeasibleStart { which: "start", .. })
        ));
    }

    #[test]
    fn monotone_accepted_cost_during_planning() {
        let geom = test_geom();
        let (corridor, boundary, _, _) = random_three_box_problem(11, &geom);
        let weights = OptimizerWeights {
            v_max: 1.0,
            omega_max: 2.5,
            ..Default::default()
        };
        let morph = uniform_morph_plan(3, &geom);
        let problem = problem_for_corridor(&corridor, boundary, &geom, morph, GRAVITY, 1.0);
        // call the optimizer directly to read the accepted-cost history
        let nq = problem.initial_waypoints.len();
        let mut x0 = Vec::new();
        for w in &problem.initial_waypoints {
            x0.extend_from_slice(&[w.x, w.y, w.z]);
        }
        for t in &problem.initial_durations {
            x0.push(t.ln());
        }
        let objective = |x: &[f64], grad: &mut [f64]| -> f64 {
            let q: Vec<Vector3<f64>> = (0..nq)
                .map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]))
                .collect();
            let tau = &x[3 * nq..];
            match cost_and_gradient(&problem, &weights, &q, tau) {
                Ok((cost, gq, gtau)) => {
                    for (i, g) in gq.iter().enumerate() {
                        grad[3 * i] = g.x;
                        grad[3 * i + 1] = g.y;
                        grad[3 * i + 2] = g.z;
                    }
                    grad[3 * nq..].copy_from_slice(&gtau);
                    cost
                }
                Err(_) => {
                    grad.fill(0.0);
                    f64::INFINITY
                }
            }
        };
        let result = lbfgs::minimize(objective, &x0, &LbfgsOptions::default());
        for pair in result.history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs());
        }
    }
}
