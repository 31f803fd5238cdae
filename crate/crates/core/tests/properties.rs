//! Property tests for the structural invariants of the core types.

use nalgebra::Vector3;
use proptest::prelude::*;

use morphquad::corridor::{Halfspace, Polytope};
use morphquad::dynamics::{rk4_step, DragParams, RigidState, WrenchInput, GRAVITY};
use morphquad::morphology::{
    allocation_matrix, bounding_half_extents, half_extents_for_angle, inertial_props,
    GeometryParams, MorphState, ALPHA_MAX,
};
use morphquad::trajectory::{BoundaryState, EndpointState, MincoTrajectory};

fn geometry(arm: f64, body: f64) -> GeometryParams {
    GeometryParams::with_hinges_at_corners(arm, body, 0.9, 0.11, 0.05, 0.016, 1.0).unwrap()
}

proptest! {
    /// The length extent grows and the width extent shrinks as the arms
    /// sweep forward, for any geometry.
    #[test]
    fn extents_monotone_in_alpha(
        arm in 0.05f64..0.6,
        body in 0.05f64..0.6,
        a1 in 0.0f64..ALPHA_MAX,
        a2 in 0.0f64..ALPHA_MAX,
    ) {
        prop_assume!((a1 - a2).abs() > 1e-9);
        let geom = geometry(arm, body);
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let (r_lo, w_lo, _) = half_extents_for_angle(&geom, lo);
        let (r_hi, w_hi, _) = half_extents_for_angle(&geom, hi);
        prop_assert!(r_hi > r_lo);
        prop_assert!(w_hi < w_lo);
    }

    /// Inertia stays symmetric positive definite and the bounding box
    /// always covers the rotors, whatever the four arm angles do.
    #[test]
    fn inertia_and_bounding_box_hold(
        a1 in 0.0f64..ALPHA_MAX,
        a2 in 0.0f64..ALPHA_MAX,
        a3 in 0.0f64..ALPHA_MAX,
        a4 in 0.0f64..ALPHA_MAX,
    ) {
        let geom = geometry(0.2, 0.28);
        let morph = MorphState::new([a1, a2, a3, a4], [0.0; 4]);
        let props = inertial_props(&geom, &morph);
        let j = props.inertia;
        prop_assert!((j - j.transpose()).norm() < 1e-13);
        prop_assert!(j.symmetric_eigenvalues().min() > 0.0);
        let (r, w, h) = bounding_half_extents(&geom, &morph);
        for m in props.motor_positions {
            prop_assert!(m.x.abs() <= r + 1e-9);
            prop_assert!(m.y.abs() <= w + 1e-9);
            prop_assert!(m.z.abs() <= h + 1e-9);
        }
    }

    /// Allocation composed with its inverse reproduces the rotor thrusts.
    #[test]
    fn allocation_roundtrip(
        a1 in 0.0f64..ALPHA_MAX,
        a2 in 0.0f64..ALPHA_MAX,
        a3 in 0.0f64..ALPHA_MAX,
        a4 in 0.0f64..ALPHA_MAX,
        u1 in 0.1f64..3.0,
        u2 in 0.1f64..3.0,
        u3 in 0.1f64..3.0,
        u4 in 0.1f64..3.0,
    ) {
        let geom = geometry(0.2, 0.28);
        let morph = MorphState::new([a1, a2, a3, a4], [0.0; 4]);
        let props = inertial_props(&geom, &morph);
        if let Ok(m) = allocation_matrix(&geom, &props) {
            let u = nalgebra::Vector4::new(u1, u2, u3, u4);
            let back = m.try_inverse().unwrap() * (m * u);
            prop_assert!((back - u).norm() / u.norm() < 1e-10);
        }
    }

    /// The attitude quaternion stays unit after every integrator step.
    #[test]
    fn quaternion_stays_normalized(
        wx in -4.0f64..4.0,
        wy in -4.0f64..4.0,
        wz in -4.0f64..4.0,
        thrust in 0.0f64..30.0,
    ) {
        let geom = geometry(0.2, 0.28);
        let props = inertial_props(&geom, &MorphState::preset_x());
        let mut state = RigidState::at_rest(Vector3::zeros());
        state.angular_velocity = Vector3::new(wx, wy, wz);
        let input = WrenchInput::new(thrust, Vector3::new(0.01, -0.01, 0.002));
        for _ in 0..50 {
            state = rk4_step(
                &state,
                &input,
                &props,
                &DragParams::default_rotor_drag(),
                geom.total_mass(),
                GRAVITY,
                0.002,
            )
            .unwrap();
            prop_assert!((state.attitude.norm() - 1.0).abs() < 1e-9);
        }
    }

    /// Solved trajectories interpolate their waypoints and boundaries.
    #[test]
    fn trajectory_interpolates(
        x1 in -2.0f64..2.0,
        y1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        y2 in -2.0f64..2.0,
        t1 in 0.3f64..2.0,
        t2 in 0.3f64..2.0,
        t3 in 0.3f64..2.0,
    ) {
        let boundary = BoundaryState {
            start: EndpointState::at_rest(Vector3::new(-3.0, 0.0, 1.0)),
            goal: EndpointState::at_rest(Vector3::new(3.0, 0.0, 1.0)),
        };
        let waypoints = vec![Vector3::new(x1, y1, 1.0), Vector3::new(x2, y2, 1.0)];
        let traj = MincoTrajectory::solve(waypoints.clone(), vec![t1, t2, t3], boundary).unwrap();
        prop_assert!((traj.evaluate(0.0, 0).unwrap() - boundary.start.position).norm() < 1e-9);
        prop_assert!(
            (traj.evaluate(traj.total_duration(), 0).unwrap() - boundary.goal.position).norm() < 1e-9
        );
        prop_assert!((traj.segment_eval(0, t1, 0) - waypoints[0]).norm() < 1e-9);
        prop_assert!((traj.segment_eval(1, t2, 0) - waypoints[1]).norm() < 1e-9);
    }

    /// Signed violation of a box polytope agrees with coordinate-wise
    /// membership and is convex along segments.
    #[test]
    fn box_violation_convex_and_consistent(
        px in -2.0f64..2.0,
        py in -2.0f64..2.0,
        pz in -2.0f64..2.0,
        qx in -2.0f64..2.0,
        qy in -2.0f64..2.0,
        qz in -2.0f64..2.0,
    ) {
        let mut faces = Vec::new();
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut n = Vector3::zeros();
                n[axis] = sign;
                faces.push(Halfspace { normal: n, point: n * 0.5 });
            }
        }
        let cube = Polytope { faces, seed: Vector3::zeros() };
        let p = Vector3::new(px, py, pz);
        let q = Vector3::new(qx, qy, qz);
        let inside = p.x.abs() <= 0.5 && p.y.abs() <= 0.5 && p.z.abs() <= 0.5;
        prop_assert_eq!(cube.point_violation(&p) <= 0.0, inside);
        let mid = (p + q) / 2.0;
        prop_assert!(
            cube.point_violation(&mid)
                <= 0.5 * (cube.point_violation(&p) + cube.point_violation(&q)) + 1e-12
        );
    }
}
