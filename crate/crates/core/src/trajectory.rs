//! Minimum-jerk piecewise-quintic trajectories parameterized by
//! intermediate waypoints and segment durations.
//!
//! A trajectory with `K` segments is determined by `K - 1` waypoints,
//! `K` durations, and boundary position/velocity/acceleration at both
//! ends. Coefficients are the unique solution of a banded linear system
//! enforcing waypoint interpolation, the boundary conditions, and
//! continuity of derivatives up to order four at every junction; this is
//! the minimizer of the jerk integral over all C2 interpolants of the
//! same data.

use nalgebra::{Matrix6, SMatrix, Vector3, Vector6};

use crate::banded::BandedLu;

/// Coefficients of one segment: rows are the monomial basis `1..t^5`,
/// columns are x, y, z.
pub type CoeffBlock = SMatrix<f64, 6, 3>;

/// Position, velocity, and acceleration at a trajectory endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl EndpointState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

/// Boundary conditions at the start and goal of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryState {
    pub start: EndpointState,
    pub goal: EndpointState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("segment duration {0} is not strictly positive")]
    DegenerateTime(f64),
    #[error("waypoint count {0} does not match segment count {1} (need K-1)")]
    WaypointMismatch(usize, usize),
    #[error("query time {0} outside trajectory domain [0, {1}]")]
    OutOfDomain(f64, f64),
    #[error("coefficient system is singular")]
    SingularSystem,
}

/// Evaluate the monomial time basis `[1, t, .., t^5]` or one of its
/// derivatives.
pub fn time_basis(t: f64, order: usize) -> Vector6<f64> {
    let mut beta = Vector6::zeros();
    if order > 5 {
        return beta;
    }
    // falling-factorial coefficients i!/(i-order)!
    let mut tn = 1.0;
    for i in order..6 {
        let mut coef = 1.0;
        for d in 0..order {
            coef *= (i - d) as f64;
        }
        beta[i] = coef * tn;
        tn *= t;
    }
    beta
}

/// Gram matrix of the third-derivative basis over `[0, T]`, so the jerk
/// integral of a segment is `tr(c^T G c)`.
pub fn jerk_gram(duration: f64) -> Matrix6<f64> {
    let t = duration;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let mut g = Matrix6::zeros();
    g[(3, 3)] = 36.0 * t;
    g[(3, 4)] = 72.0 * t2;
    g[(3, 5)] = 120.0 * t3;
    g[(4, 4)] = 192.0 * t3;
    g[(4, 5)] = 360.0 * t4;
    g[(5, 5)] = 720.0 * t5;
    g[(4, 3)] = g[(3, 4)];
    g[(5, 3)] = g[(3, 5)];
    g[(5, 4)] = g[(4, 5)];
    g
}

/// A solved piecewise-quintic trajectory.
#[derive(Debug, Clone)]
pub struct MincoTrajectory {
    waypoints: Vec<Vector3<f64>>,
    durations: Vec<f64>,
    cumulative: Vec<f64>,
    coeffs: Vec<CoeffBlock>,
    boundary: BoundaryState,
}

// band widths of the coefficient system under the row ordering used below
const KL: usize = 8;
const KU: usize = 7;

impl MincoTrajectory {
    /// Solve for the coefficients interpolating `waypoints` with the given
    /// segment `durations` and boundary conditions.
    pub fn solve(
        waypoints: Vec<Vector3<f64>>,
        durations: Vec<f64>,
        boundary: BoundaryState,
    ) -> Result<Self, TrajectoryError> {
        let segments = durations.len();
        if waypoints.len() + 1 != segments {
            return Err(TrajectoryError::WaypointMismatch(waypoints.len(), segments));
        }
        for &t in &durations {
            if !(t > 0.0) || !t.is_finite() {
                return Err(TrajectoryError::DegenerateTime(t));
            }
        }
        let n = 6 * segments;
        let mut system = BandedLu::new(n, KL, KU);
        let mut rhs = vec![Vector3::zeros(); n];
        assemble(&mut system, &durations, false);
        fill_rhs(&mut rhs, &waypoints, &boundary, segments);
        system
            .factorize()
            .map_err(|_| TrajectoryError::SingularSystem)?;
        system.solve_in_place(&mut rhs);

        let coeffs: Vec<CoeffBlock> = (0..segments)
            .map(|k| {
                let mut c = CoeffBlock::zeros();
                for m in 0..6 {
                    c.set_row(m, &rhs[6 * k + m].transpose());
                }
                c
            })
            .collect();
        let mut cumulative = Vec::with_capacity(segments + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for &t in &durations {
            acc += t;
            cumulative.push(acc);
        }
        Ok(Self {
            waypoints,
            durations,
            cumulative,
            coeffs,
            boundary,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }

    pub fn coefficients(&self) -> &[CoeffBlock] {
        &self.coeffs
    }

    pub fn boundary(&self) -> &BoundaryState {
        &self.boundary
    }

    pub fn total_duration(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Start time of segment `k` on the global clock.
    pub fn segment_start(&self, k: usize) -> f64 {
        self.cumulative[k]
    }

    /// Segment index and local time for a global time `t`, clamped to the
    /// domain.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let total = self.total_duration();
        let t = t.clamp(0.0, total);
        // last segment whose start is <= t
        let mut k = match self
            .cumulative
            .binary_search_by(|s| s.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if k >= self.durations.len() {
            k = self.durations.len() - 1;
        }
        (k, t - self.cumulative[k])
    }

    /// Evaluate the trajectory or one of its derivatives (order 0..=5).
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vector3<f64>, TrajectoryError> {
        let total = self.total_duration();
        let tol = 1e-9 * total.max(1.0);
        if t < -tol || t > total + tol {
            return Err(TrajectoryError::OutOfDomain(t, total));
        }
        let (k, tau) = self.locate(t);
        Ok(self.segment_eval(k, tau, order))
    }

    /// Evaluate segment `k` at local time `tau` without domain checks.
    #[inline]
    pub fn segment_eval(&self, k: usize, tau: f64, order: usize) -> Vector3<f64> {
        let beta = time_basis(tau, order);
        self.coeffs[k].transpose() * beta
    }

    /// Integral of the squared jerk over the whole trajectory.
    pub fn jerk_energy(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.durations)
            .map(|(c, &t)| (c.transpose() * jerk_gram(t) * c).trace())
            .sum()
    }

    /// Back-propagate gradients of a scalar cost through the coefficient
    /// solve: given `dJ/dc` per segment and the direct part of `dJ/dT`,
    /// return `(dJ/dq, dJ/dT)`.
    pub fn propagate_gradient(
        &self,
        grad_coeffs: &[CoeffBlock],
        grad_t_direct: &[f64],
    ) -> (Vec<Vector3<f64>>, Vec<f64>) {
        let segments = self.durations.len();
        assert_eq!(grad_coeffs.len(), segments);
        assert_eq!(grad_t_direct.len(), segments);
        let n = 6 * segments;

        // adjoint solve against the transposed system
        let mut system_t = BandedLu::new(n, KU, KL);
        assemble(&mut system_t, &self.durations, true);
        system_t.factorize().expect("solved trajectory has nonsingular system");
        let mut adjoint = vec![Vector3::zeros(); n];
        for k in 0..segments {
            for m in 0..6 {
                adjoint[6 * k + m] = grad_coeffs[k].row(m).transpose();
            }
        }
        system_t.solve_in_place(&mut adjoint);

        // waypoint gradients are the adjoint rows of the pin equations
        let grad_q: Vec<Vector3<f64>> = (0..segments.saturating_sub(1))
            .map(|j| adjoint[3 + 6 * j])
            .collect();

        // duration gradients: direct part minus adjoint-weighted derivative
        // of the system rows that depend on T_k
        let mut grad_t = grad_t_direct.to_vec();
        for k in 0..segments {
            let tk = self.durations[k];
            let ck = &self.coeffs[k];
            let mut acc = 0.0;
            if k + 1 < segments {
                let base = 3 + 6 * k;
                // pin row: d/dT beta(T)^T c = beta'(T)^T c
                let dpin = ck.transpose() * time_basis(tk, 1);
                acc += adjoint[base].dot(&dpin);
                // continuity rows for derivative orders 0..=4
                for j in 0..5 {
                    let drow = ck.transpose() * time_basis(tk, j + 1);
                    acc += adjoint[base + 1 + j].dot(&drow);
                }
            } else {
                let base = n - 3;
                for i in 0..3 {
                    let drow = ck.transpose() * time_basis(tk, i + 1);
                    acc += adjoint[base + i].dot(&drow);
                }
            }
            grad_t[k] -= acc;
        }
        (grad_q, grad_t)
    }
}

fn assemble(system: &mut BandedLu, durations: &[f64], transpose: bool) {
    let segments = durations.len();
    let n = 6 * segments;
    let mut put = |i: usize, j: usize, v: f64| {
        let (r, c) = if transpose { (j, i) } else { (i, j) };
        system.add(r, c, v).expect("entry within band");
    };
    // start boundary: p, v, a of segment 0 at t = 0
    for o in 0..3 {
        let beta = time_basis(0.0, o);
        for m in 0..6 {
            if beta[m] != 0.0 {
                put(o, m, beta[m]);
            }
        }
    }
    // junctions
    for k in 0..segments - 1 {
        let base = 3 + 6 * k;
        let tk = durations[k];
        let beta0 = time_basis(tk, 0);
        for m in 0..6 {
            put(base, 6 * k + m, beta0[m]);
        }
        for j in 0..5 {
            let left = time_basis(tk, j);
            let right = time_basis(0.0, j);
            let row = base + 1 + j;
            for m in 0..6 {
                if left[m] != 0.0 {
                    put(row, 6 * k + m, left[m]);
                }
                if right[m] != 0.0 {
                    put(row, 6 * (k + 1) + m, -right[m]);
                }
            }
        }
    }
    // goal boundary: p, v, a of the last segment at t = T_K
    let tk = durations[segments - 1];
    for o in 0..3 {
        let beta = time_basis(tk, o);
        for m in 0..6 {
            if beta[m] != 0.0 {
                put(n - 3 + o, 6 * (segments - 1) + m, beta[m]);
            }
        }
    }
}

fn fill_rhs(
    rhs: &mut [Vector3<f64>],
    waypoints: &[Vector3<f64>],
    boundary: &BoundaryState,
    segments: usize,
) {
    rhs[0] = boundary.start.position;
    rhs[1] = boundary.start.velocity;
    rhs[2] = boundary.start.acceleration;
    for k in 0..segments - 1 {
        rhs[3 + 6 * k] = waypoints[k];
    }
    let n = 6 * segments;
    rhs[n - 3] = boundary.goal.position;
    rhs[n - 2] = boundary.goal.velocity;
    rhs[n - 1] = boundary.goal.acceleration;
}
