//! Geometry, inertia, and control allocation of the four-arm morphing
//! quadrotor as functions of the arm angles.
//!
//! Each arm hinges at a corner of the central body and sweeps in the
//! body x-y plane. Arm angle 0 points the rotors straight out along
//! body-y (H shape), pi/2 points them along body-x, and pi/4 is the
//! familiar X layout. Folding the arms trades footprint length against
//! width, which is what lets the vehicle squeeze through narrow
//! openings.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

/// Arm angle of the X configuration.
pub const ALPHA_X: f64 = std::f64::consts::FRAC_PI_4;
/// Arm angle of the H configuration (arms along body-y, minimal length).
pub const ALPHA_H: f64 = 0.0;
/// Maximum arm angle (arms along body-x).
pub const ALPHA_MAX: f64 = std::f64::consts::FRAC_PI_2;

/// Sign pattern of the four arms in the body x-y plane.
///
/// Arms 1 and 2 sit on one diagonal and their rotors share a spin
/// direction; arms 3 and 4 take the other diagonal and the opposite spin.
pub const ARM_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];

/// Reaction-torque sign of each rotor (+ for arms 1, 2; - for 3, 4).
pub const SPIN_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

/// Fixed physical parameters of the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    /// Arm length `a` in meters.
    pub arm_length: f64,
    /// Central-body half length `l` in meters.
    pub body_half_length: f64,
    /// Mass of the central body, kg.
    pub body_mass: f64,
    /// Mass of one arm including its motor, kg.
    pub arm_mass: f64,
    /// Body half height `h` in meters.
    pub body_half_height: f64,
    /// Rotor torque coefficient `c_M`, N*m per (rad/s)^2.
    pub torque_coeff: f64,
    /// Rotor thrust coefficient `c_T`, N per (rad/s)^2.
    pub thrust_coeff: f64,
    /// Hinge positions of the four arms on the central body, meters.
    pub motor_mount_offsets: [Vector2<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MorphologyError {
    #[error("geometry parameter {name} = {value} must be strictly positive")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("allocation matrix is singular (|det| = {0:.3e})")]
    SingularAllocation(f64),
}

impl GeometryParams {
    /// Geometry with hinges placed at the body corners so the rotor of
    /// arm i sits at `(+-(a + l sin a_i)/2, +-(a + l cos a_i)/2)`: the
    /// rotors coincide with the corners of the morphing bounding box.
    pub fn with_hinges_at_corners(
        arm_length: f64,
        body_half_length: f64,
        body_mass: f64,
        arm_mass: f64,
        body_half_height: f64,
        torque_coeff: f64,
        thrust_coeff: f64,
    ) -> Result<Self, MorphologyError> {
        let half = arm_length / 2.0;
        let offsets =
            ARM_SIGNS.map(|(sx, sy)| Vector2::new(sx * half, sy * half));
        let geom = Self {
            arm_length,
            body_half_length,
            body_mass,
            arm_mass,
            body_half_height,
            torque_coeff,
            thrust_coeff,
            motor_mount_offsets: offsets,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<(), MorphologyError> {
        let checks = [
            ("arm_length", self.arm_length),
            ("body_half_length", self.body_half_length),
            ("body_mass", self.body_mass),
            ("body_half_height", self.body_half_height),
            ("torque_coeff", self.torque_coeff),
            ("thrust_coeff", self.thrust_coeff),
        ];
        for (name, value) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(MorphologyError::NonPositiveParam { name, value });
            }
        }
        if !(self.arm_mass >= 0.0) || !self.arm_mass.is_finite() {
            return Err(MorphologyError::NonPositiveParam {
                name: "arm_mass",
                value: self.arm_mass,
            });
        }
        Ok(())
    }

    /// Total vehicle mass `m_t = body + 4 arms`.
    pub fn total_mass(&self) -> f64 {
        self.body_mass + 4.0 * self.arm_mass
    }
}

/// Arm angles and rates. Angles are clamped to `[0, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphState {
    pub alpha: [f64; 4],
    pub alpha_dot: [f64; 4],
}

impl MorphState {
    pub fn new(alpha: [f64; 4], alpha_dot: [f64; 4]) -> Self {
        Self {
            alpha: alpha.map(|a| a.clamp(0.0, ALPHA_MAX)),
            alpha_dot,
        }
    }

    /// Same angle on all four arms, zero rates.
    pub fn uniform(alpha: f64) -> Self {
        Self::new([alpha; 4], [0.0; 4])
    }

    /// Standard flight configuration (all arms at 45 degrees).
    pub fn preset_x() -> Self {
        Self::uniform(ALPHA_X)
    }

    /// Narrow configuration with all arms along body-y.
    pub fn preset_h() -> Self {
        Self::uniform(ALPHA_H)
    }

    /// Front arms swept fully forward, rear arms out: T shape.
    pub fn preset_t() -> Self {
        Self::new([ALPHA_MAX, ALPHA_MAX, 0.0, 0.0], [0.0; 4])
    }

    /// Three-point support: one diagonal pair folded together.
    pub fn preset_y() -> Self {
        Self::new([ALPHA_MAX, ALPHA_X, ALPHA_X, 0.0], [0.0; 4])
    }
}

/// Inertia, center-of-gravity offset, and rotor positions for one morph
/// state, all in the body frame about the geometric center (inertia about
/// the CoG).
#[derive(Debug, Clone, PartialEq)]
pub struct InertialProps {
    pub inertia: Matrix3<f64>,
    pub cog_offset: Vector3<f64>,
    pub motor_positions: [Vector3<f64>; 4],
}

/// Position of each rotor axis in the body frame.
///
/// Arm `i` pivots about its hinge; the link from hinge to rotor has
/// length `l/2` and points along `(s_x sin a, s_y cos a)`.
pub fn motor_positions(geom: &GeometryParams, morph: &MorphState) -> [Vector3<f64>; 4] {
    let link = geom.body_half_length / 2.0;
    let mut out = [Vector3::zeros(); 4];
    for i in 0..4 {
        let (sx, sy) = ARM_SIGNS[i];
        let hinge = geom.motor_mount_offsets[i];
        let a = morph.alpha[i];
        out[i] = Vector3::new(
            hinge.x + sx * link * a.sin(),
            hinge.y + sy * link * a.cos(),
            0.0,
        );
    }
    out
}

/// Mid-span position of arm `i` (where the rod mass is lumped).
fn arm_midspan(geom: &GeometryParams, morph: &MorphState, i: usize) -> Vector3<f64> {
    let link = geom.body_half_length / 4.0;
    let (sx, sy) = ARM_SIGNS[i];
    let hinge = geom.motor_mount_offsets[i];
    let a = morph.alpha[i];
    Vector3::new(
        hinge.x + sx * link * a.sin(),
        hinge.y + sy * link * a.cos(),
        0.0,
    )
}

/// Inertia tensor and CoG offset for the given morph state.
///
/// The central body is a cuboid; each arm contributes a point mass at its
/// mid-span (rod) and one at the rotor (motor), split evenly. Everything
/// is summed about the geometric center and then transferred to the CoG.
pub fn inertial_props(geom: &GeometryParams, morph: &MorphState) -> InertialProps {
    let motors = motor_positions(geom, morph);
    let m_rod = 0.5 * geom.arm_mass;
    let m_motor = 0.5 * geom.arm_mass;
    let m_total = geom.total_mass();

    // CoG offset (body cuboid is centered, contributes nothing)
    let mut cog = Vector3::zeros();
    for i in 0..4 {
        cog += m_rod * arm_midspan(geom, morph, i);
        cog += m_motor * motors[i];
    }
    cog /= m_total;

    // body cuboid about the geometric center: full sides (2l, 2l, 2h)
    let l2 = geom.body_half_length * geom.body_half_length;
    let h2 = geom.body_half_height * geom.body_half_height;
    let mb = geom.body_mass;
    let mut inertia = Matrix3::from_diagonal(&Vector3::new(
        mb * (l2 + h2) / 3.0,
        mb * (l2 + h2) / 3.0,
        mb * (l2 + l2) / 3.0,
    ));
    // arm point masses about the geometric center
    for i in 0..4 {
        inertia += point_mass_inertia(m_rod, &arm_midspan(geom, morph, i));
        inertia += point_mass_inertia(m_motor, &motors[i]);
    }
    // transfer to the CoG
    inertia -= point_mass_inertia(m_total, &cog);

    InertialProps {
        inertia,
        cog_offset: cog,
        motor_positions: motors,
    }
}

/// `m (||r||^2 I - r r^T)`.
pub fn point_mass_inertia(mass: f64, r: &Vector3<f64>) -> Matrix3<f64> {
    mass * (Matrix3::identity() * r.norm_squared() - r * r.transpose())
}

/// Half extents `(r, w, h)` of the shape-dependent bounding box:
/// `r = (a + l sin a)/2`, `w = (a + l cos a)/2`, taking the most
/// conservative angle per axis when the arms disagree.
pub fn bounding_half_extents(geom: &GeometryParams, morph: &MorphState) -> (f64, f64, f64) {
    let a = geom.arm_length;
    let l = geom.body_half_length;
    let mut r: f64 = 0.0;
    let mut w: f64 = 0.0;
    for &alpha in &morph.alpha {
        r = r.max((a + l * alpha.sin()) / 2.0);
        w = w.max((a + l * alpha.cos()) / 2.0);
    }
    (r, w, geom.body_half_height)
}

/// Half extents for a single uniform arm angle.
pub fn half_extents_for_angle(geom: &GeometryParams, alpha: f64) -> (f64, f64, f64) {
    bounding_half_extents(geom, &MorphState::uniform(alpha))
}

/// The eight vertices `[+-r, +-w, +-h]` of the bounding box in the body
/// frame.
pub fn body_vertices(geom: &GeometryParams, morph: &MorphState) -> [Vector3<f64>; 8] {
    let (r, w, h) = bounding_half_extents(geom, morph);
    box_vertices(r, w, h)
}

/// Vertices of an axis-aligned box with the given half extents.
pub fn box_vertices(r: f64, w: f64, h: f64) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (v, out_v) in out.iter_mut().enumerate() {
        let sx = if v & 1 == 0 { 1.0 } else { -1.0 };
        let sy = if v & 2 == 0 { 1.0 } else { -1.0 };
        let sz = if v & 4 == 0 { 1.0 } else { -1.0 };
        *out_v = Vector3::new(sx * r, sy * w, sz * h);
    }
    out
}

/// Control allocation matrix mapping per-rotor thrusts `U` to
/// `[f, tau_x, tau_y, tau_z]`.
///
/// Row 1 sums thrusts; rows 2-3 are the thrust moment arms about the CoG
/// (`tau = (l_i - p_C) x u z`); row 4 carries the rotor reaction torques
/// with the diagonal spin pattern.
pub fn allocation_matrix(
    geom: &GeometryParams,
    props: &InertialProps,
) -> Result<Matrix4<f64>, MorphologyError> {
    let km = geom.torque_coeff / geom.thrust_coeff;
    let (xc, yc) = (props.cog_offset.x, props.cog_offset.y);
    let mut m = Matrix4::zeros();
    for i in 0..4 {
        let l = &props.motor_positions[i];
        m[(0, i)] = 1.0;
        m[(1, i)] = l.y - yc;
        m[(2, i)] = xc - l.x;
        m[(3, i)] = SPIN_SIGNS[i] * km;
    }
    let det = m.determinant();
    if det.abs() < 1e-10 {
        return Err(MorphologyError::SingularAllocation(det.abs()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector4;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_geom() -> GeometryParams {
        GeometryParams::with_hinges_at_corners(0.2, 0.28, 0.9, 0.11, 0.05, 0.016, 1.0).unwrap()
    }

    /// Independent oracle: rotate each arm endpoint about its hinge with
    /// an explicit 2-D rotation, starting from the arm-at-zero pose.
    fn rotation_oracle(geom: &GeometryParams, morph: &MorphState) -> [Vector3<f64>; 4] {
        let link = geom.body_half_length / 2.0;
        let mut out = [Vector3::zeros(); 4];
        for i in 0..4 {
            let (sx, sy) = ARM_SIGNS[i];
            let hinge = geom.motor_mount_offsets[i];
            // at alpha = 0 the arm points straight out along +-y; positive
            // alpha sweeps it toward +-x. In this quadrant that is a
            // rotation by -sx*sy*alpha in the standard 2-D convention.
            let rest = Vector2::new(0.0, sy * link);
            let ang = -sx * sy * morph.alpha[i];
            let (s, c) = ang.sin_cos();
            let rotated = Vector2::new(c * rest.x - s * rest.y, s * rest.x + c * rest.y);
            out[i] = Vector3::new(hinge.x + rotated.x, hinge.y + rotated.y, 0.0);
        }
        out
    }

    #[test]
    fn x_preset_rotor_magnitudes_equal() {
        let geom = test_geom();
        let motors = motor_positions(&geom, &MorphState::preset_x());
        for m in &motors {
            assert_relative_eq!(m.x.abs(), m.y.abs(), epsilon = 1e-12);
            assert_relative_eq!(m.z, 0.0);
        }
    }

    #[test]
    fn h_preset_maximizes_y_spread() {
        let geom = test_geom();
        let h = motor_positions(&geom, &MorphState::preset_h());
        let x = motor_positions(&geom, &MorphState::preset_x());
        for i in 0..4 {
            assert!(h[i].y.abs() > x[i].y.abs());
            assert!(h[i].x.abs() < x[i].x.abs());
        }
        // arms straight out: |y| = (a + l)/2, |x| = a/2
        assert_relative_eq!(h[0].y, (0.2 + 0.28) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(h[0].x, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn mixed_angles_match_rotation_oracle() {
        let geom = GeometryParams::with_hinges_at_corners(0.1, 0.14, 0.5, 0.05, 0.03, 0.01, 1.0)
            .unwrap();
        let morph = MorphState::new([ALPHA_X, ALPHA_X, 0.0, 0.0], [0.0; 4]);
        let got = motor_positions(&geom, &morph);
        let want = rotation_oracle(&geom, &morph);
        for i in 0..4 {
            assert!((got[i] - want[i]).norm() < 1e-12, "arm {i}: {} vs {}", got[i], want[i]);
        }
        // and on a batch of random morphs
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let morph = MorphState::new(
                [(); 4].map(|_| rng.random_range(0.0..ALPHA_MAX)),
                [0.0; 4],
            );
            let got = motor_positions(&geom, &morph);
            let want = rotation_oracle(&geom, &morph);
            for i in 0..4 {
                assert!((got[i] - want[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn x_preset_cog_is_centered() {
        let geom = test_geom();
        let props = inertial_props(&geom, &MorphState::preset_x());
        assert!(props.cog_offset.norm() < 1e-12);
    }

    #[test]
    fn massless_arms_reduce_to_body_cuboid() {
        let mut geom = test_geom();
        geom.arm_mass = 0.0;
        let props = inertial_props(&geom, &MorphState::preset_t());
        let l2 = geom.body_half_length * geom.body_half_length;
        let h2 = geom.body_half_height * geom.body_half_height;
        let mb = geom.body_mass;
        assert!(props.cog_offset.norm() < 1e-15);
        assert_relative_eq!(props.inertia[(0, 0)], mb * (l2 + h2) / 3.0, epsilon = 1e-12);
        assert_relative_eq!(props.inertia[(2, 2)], mb * 2.0 * l2 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(props.inertia[(0, 1)], 0.0, epsilon = 1e-15);
    }

    /// Independent oracle: explicit point-mass sums about the CoG.
    #[test]
    fn asymmetric_morph_matches_point_mass_oracle() {
        let geom = test_geom();
        let morph = MorphState::new([ALPHA_MAX, ALPHA_X, ALPHA_X, ALPHA_X], [0.0; 4]);
        let props = inertial_props(&geom, &morph);

        // oracle: enumerate the nine mass bodies, CoG first, then inertia
        // about the CoG directly
        let mut parts: Vec<(f64, Vector3<f64>)> = vec![(geom.body_mass, Vector3::zeros())];
        let motors = motor_positions(&geom, &morph);
        for i in 0..4 {
            parts.push((0.5 * geom.arm_mass, arm_midspan(&geom, &morph, i)));
            parts.push((0.5 * geom.arm_mass, motors[i]));
        }
        let m_total: f64 = parts.iter().map(|(m, _)| m).sum();
        let cog: Vector3<f64> =
            parts.iter().map(|(m, r)| *m * r).sum::<Vector3<f64>>() / m_total;
        assert!((cog - props.cog_offset).norm() < 1e-12);

        let l2 = geom.body_half_length * geom.body_half_length;
        let h2 = geom.body_half_height * geom.body_half_height;
        let mb = geom.body_mass;
        let mut j = Matrix3::from_diagonal(&Vector3::new(
            mb * (l2 + h2) / 3.0,
            mb * (l2 + h2) / 3.0,
            mb * 2.0 * l2 / 3.0,
        ));
        // body cuboid transferred from center to CoG
        j += point_mass_inertia(mb, &(-cog));
        for (m, r) in parts.iter().skip(1) {
            j += point_mass_inertia(*m, &(r - cog));
        }
        assert!((j - props.inertia).norm() < 1e-12, "\n{j} vs {}", props.inertia);
    }

    #[test]
    fn inertia_symmetric_positive_definite_for_all_morphs() {
        let geom = test_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let morph = MorphState::new(
                [(); 4].map(|_| rng.random_range(0.0..ALPHA_MAX)),
                [0.0; 4],
            );
            let j = inertial_props(&geom, &morph).inertia;
            assert!((j - j.transpose()).norm() < 1e-14);
            let eig = j.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "non-PD inertia for {:?}", morph.alpha);
            // triangle inequality on principal moments
            assert!(eig[0] + eig[1] >= eig[2] - 1e-12);
            assert!(eig[1] + eig[2] >= eig[0] - 1e-12);
            assert!(eig[0] + eig[2] >= eig[1] - 1e-12);
        }
    }

    #[test]
    fn cog_is_lipschitz_in_alpha() {
        let geom = test_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // C = 4 * arm_mass * (l/2 + l/4) / m_t bounds |dp_C/dalpha|
        let lip = 4.0 * geom.arm_mass * 0.75 * geom.body_half_length / geom.total_mass();
        for _ in 0..100 {
            let base: [f64; 4] = [(); 4].map(|_| rng.random_range(0.0..ALPHA_MAX));
            let delta = 1e-4;
            let i = rng.random_range(0..4);
            let mut bumped = base;
            bumped[i] = (bumped[i] + delta).min(ALPHA_MAX);
            let p0 = inertial_props(&geom, &MorphState::new(base, [0.0; 4])).cog_offset;
            let p1 = inertial_props(&geom, &MorphState::new(bumped, [0.0; 4])).cog_offset;
            assert!((p1 - p0).norm() <= lip * delta + 1e-12);
        }
    }

    #[test]
    fn eq7_extents_and_monotonicity() {
        let geom = test_geom();
        let (r, w, h) = half_extents_for_angle(&geom, ALPHA_MAX);
        assert_relative_eq!(r, 0.24, epsilon = 1e-12);
        assert_relative_eq!(w, 0.10, epsilon = 1e-12);
        assert_relative_eq!(h, 0.05);
        let (r, w, _) = half_extents_for_angle(&geom, 0.0);
        assert_relative_eq!(r, 0.10, epsilon = 1e-12);
        assert_relative_eq!(w, 0.24, epsilon = 1e-12);
        // r strictly increases and w strictly decreases with alpha
        let mut prev = half_extents_for_angle(&geom, 0.0);
        for i in 1..=40 {
            let alpha = ALPHA_MAX * i as f64 / 40.0;
            let cur = half_extents_for_angle(&geom, alpha);
            assert!(cur.0 > prev.0);
            assert!(cur.1 < prev.1);
            prev = cur;
        }
    }

    /// Folding from X to H shrinks the length extent by the claimed bound
    /// for the real platform geometry (reduction of exactly 37.5% when
    /// l = 0.18 sqrt(2) and a = 0.3).
    #[test]
    fn x_to_h_width_reduction_bound() {
        let geom = GeometryParams::with_hinges_at_corners(
            0.3,
            0.18 * std::f64::consts::SQRT_2,
            1.0,
            0.12,
            0.05,
            0.016,
            1.0,
        )
        .unwrap();
        let (r_x, _, _) = half_extents_for_angle(&geom, ALPHA_X);
        let (r_h, _, _) = half_extents_for_angle(&geom, ALPHA_H);
        let reduction = (r_x - r_h) / r_x;
        assert_relative_eq!(2.0 * r_x, 0.48, epsilon = 1e-12);
        assert_relative_eq!(reduction, 0.375, epsilon = 1e-12);
    }

    #[test]
    fn body_vertices_unit_cube_and_symmetry() {
        let verts = box_vertices(1.0, 1.0, 1.0);
        assert_eq!(verts.len(), 8);
        for v in &verts {
            assert_eq!(v.x.abs(), 1.0);
            assert_eq!(v.y.abs(), 1.0);
            assert_eq!(v.z.abs(), 1.0);
        }
        // closed under sign flips: every flipped vertex is in the set
        for v in &verts {
            for axis in 0..3 {
                let mut f = *v;
                f[axis] = -f[axis];
                assert!(verts.iter().any(|u| (u - f).norm() < 1e-15));
            }
        }
        // all distinct
        for i in 0..8 {
            for j in i + 1..8 {
                assert!((verts[i] - verts[j]).norm() > 1e-12);
            }
        }
    }

    #[test]
    fn vertices_within_norm_bound_after_transform() {
        let geom = test_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let morph = MorphState::preset_x();
        let (r, w, h) = bounding_half_extents(&geom, &morph);
        let radius = (r * r + w * w + h * h).sqrt();
        for _ in 0..20 {
            let q = nalgebra::UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let p = Vector3::new(rng.random(), rng.random(), rng.random());
            for v in body_vertices(&geom, &morph) {
                let world = q * v + p;
                assert!((world - p).norm() <= radius + 1e-12);
            }
        }
    }

    #[test]
    fn motors_inside_bounding_box_at_x() {
        let geom = test_geom();
        let morph = MorphState::preset_x();
        let (r, w, h) = bounding_half_extents(&geom, &morph);
        for m in motor_positions(&geom, &morph) {
            assert!(m.x.abs() <= r + 1e-12);
            assert!(m.y.abs() <= w + 1e-12);
            assert!(m.z.abs() <= h + 1e-12);
        }
    }

    #[test]
    fn allocation_symmetric_x_structure() {
        let geom = test_geom();
        let props = inertial_props(&geom, &MorphState::preset_x());
        let m = allocation_matrix(&geom, &props).unwrap();
        let d = (geom.arm_length + geom.body_half_length / std::f64::consts::SQRT_2) / 2.0;
        let km = geom.torque_coeff / geom.thrust_coeff;
        for i in 0..4 {
            assert_relative_eq!(m[(0, i)], 1.0);
            assert_relative_eq!(m[(1, i)].abs(), d, epsilon = 1e-12);
            assert_relative_eq!(m[(2, i)].abs(), d, epsilon = 1e-12);
            assert_relative_eq!(m[(3, i)].abs(), km, epsilon = 1e-12);
        }
        // equal thrusts: pure collective, no torque
        let u = Vector4::new(0.3, 0.3, 0.3, 0.3);
        let wrench = m * u;
        assert_relative_eq!(wrench[0], 1.2, epsilon = 1e-12);
        assert!(wrench.fixed_rows::<3>(1).norm() < 1e-12);
    }

    /// Independent oracle: thrust moments as explicit cross products plus
    /// rotor reaction torques.
    #[test]
    fn allocation_matches_cross_product_oracle() {
        let geom = test_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let morphs = [
            MorphState::new([ALPHA_MAX, ALPHA_X, ALPHA_X, ALPHA_X], [0.0; 4]),
            MorphState::preset_t(),
            MorphState::new(
                [(); 4].map(|_| rng.random_range(0.0..ALPHA_MAX)),
                [0.0; 4],
            ),
        ];
        let km = geom.torque_coeff / geom.thrust_coeff;
        for morph in &morphs {
            let props = inertial_props(&geom, morph);
            let m = allocation_matrix(&geom, &props).unwrap();
            let u = Vector4::new(
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
            );
            let wrench = m * u;
            let mut f = 0.0;
            let mut tau = Vector3::zeros();
            for i in 0..4 {
                f += u[i];
                let arm = props.motor_positions[i] - props.cog_offset;
                tau += arm.cross(&(u[i] * Vector3::z()));
                tau += SPIN_SIGNS[i] * km * u[i] * Vector3::z();
            }
            assert_relative_eq!(wrench[0], f, epsilon = 1e-12);
            assert!((Vector3::new(wrench[1], wrench[2], wrench[3]) - tau).norm() < 1e-12);
        }
    }

    #[test]
    fn allocation_inverse_roundtrip() {
        let geom = test_geom();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let morph = MorphState::new(
                [(); 4].map(|_| rng.random_range(0.0..ALPHA_MAX)),
                [0.0; 4],
            );
            let props = inertial_props(&geom, &morph);
            let m = match allocation_matrix(&geom, &props) {
                Ok(m) => m,
                Err(MorphologyError::SingularAllocation(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let u = Vector4::new(rng.random(), rng.random(), rng.random(), rng.random());
            let back = m.try_inverse().unwrap() * (m * u);
            assert!((back - u).norm() / u.norm().max(1e-12) < 1e-10);
        }
    }
}
