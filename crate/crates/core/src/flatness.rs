//! Differential-flatness map: recover attitude, body rates, body-rate
//! derivatives, and collective thrust from position derivatives and yaw.
//!
//! The thrust direction must balance gravity, the desired acceleration,
//! and the rotor-drag force; since the drag force itself depends on the
//! attitude, the construction runs a short fixed-point iteration. Body
//! rates come from differencing the attitude map along a local Taylor
//! model of the flat outputs, which stays exact for the drag-free cases
//! with closed forms and remains consistent when drag is enabled.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::dynamics::DragParams;

/// Flat outputs of the trajectory at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatOutputs {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub jerk: Vector3<f64>,
    /// Fourth derivative; improves the body-rate derivative when known.
    pub snap: Option<Vector3<f64>>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl FlatOutputs {
    pub fn hover(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            jerk: Vector3::zeros(),
            snap: Some(Vector3::zeros()),
            yaw,
            yaw_rate: 0.0,
        }
    }
}

/// Attitude, feedforward body rates, and thrust recovered from the flat
/// outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatReference {
    pub attitude: UnitQuaternion<f64>,
    pub body_rate: Vector3<f64>,
    pub body_rate_dot: Vector3<f64>,
    pub thrust: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlatnessError {
    #[error("yaw frame singular: thrust axis within {0:.2e} of the yaw plane normal")]
    SingularYaw(f64),
    #[error("commanded acceleration norm {0:.2e} too small to define a thrust axis")]
    FreeFall(f64),
}

const MIN_THRUST_ACC: f64 = 1e-6;
const MIN_YAW_CROSS: f64 = 1e-6;
/// Half-step for differencing the attitude map along the trajectory, s.
const RATE_DELTA: f64 = 5e-4;

/// Rotation matrix whose z column carries the commanded specific thrust
/// and whose x column projects onto the yaw heading.
fn attitude_from(a_cmd: &Vector3<f64>, yaw: f64) -> Result<Rotation3<f64>, FlatnessError> {
    let norm = a_cmd.norm();
    if norm < MIN_THRUST_ACC {
        return Err(FlatnessError::FreeFall(norm));
    }
    let z_b = a_cmd / norm;
    let y_c = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let x_raw = y_c.cross(&z_b);
    let cross = x_raw.norm();
    if cross < MIN_YAW_CROSS {
        return Err(FlatnessError::SingularYaw(cross));
    }
    let x_b = x_raw / cross;
    let y_b = z_b.cross(&x_b);
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        x_b, y_b, z_b,
    ])))
}

/// Commanded specific thrust `a + g e3 + R D R^T v`, resolving the
/// attitude dependence of the drag term with two fixed-point passes.
fn specific_thrust(
    acceleration: &Vector3<f64>,
    velocity: &Vector3<f64>,
    yaw: f64,
    drag: &DragParams,
    gravity: f64,
) -> Result<(Vector3<f64>, Rotation3<f64>), FlatnessError> {
    let base = acceleration + Vector3::new(0.0, 0.0, gravity);
    let mut a_cmd = base;
    let mut rot = attitude_from(&a_cmd, yaw)?;
    for _ in 0..2 {
        let body_vel = rot.transpose() * velocity;
        a_cmd = base + rot * drag.linear.component_mul(&body_vel);
        rot = attitude_from(&a_cmd, yaw)?;
    }
    Ok((a_cmd, rot))
}

/// Attitude only, without rates. Used by the controller on its commanded
/// acceleration and by the planner's collision model.
pub fn attitude_for(
    acceleration: &Vector3<f64>,
    velocity: &Vector3<f64>,
    yaw: f64,
    drag: &DragParams,
    gravity: f64,
) -> Result<UnitQuaternion<f64>, FlatnessError> {
    let (_, rot) = specific_thrust(acceleration, velocity, yaw, drag, gravity)?;
    Ok(UnitQuaternion::from_rotation_matrix(&rot))
}

/// Attitude whose body z axis carries an already-assembled specific
/// thrust command (gravity and drag feedforward included by the caller).
pub fn attitude_from_thrust_direction(
    a_cmd: &Vector3<f64>,
    yaw: f64,
) -> Result<UnitQuaternion<f64>, FlatnessError> {
    let rot = attitude_from(a_cmd, yaw)?;
    Ok(UnitQuaternion::from_rotation_matrix(&rot))
}

/// Flat outputs advanced by `dt` along their own Taylor expansion.
fn taylor_shift(flat: &FlatOutputs, dt: f64) -> FlatOutputs {
    let snap = flat.snap.unwrap_or_else(Vector3::zeros);
    FlatOutputs {
        position: flat.position
            + flat.velocity * dt
            + flat.acceleration * (dt * dt / 2.0)
            + flat.jerk * (dt * dt * dt / 6.0),
        velocity: flat.velocity
            + flat.acceleration * dt
            + flat.jerk * (dt * dt / 2.0)
            + snap * (dt * dt * dt / 6.0),
        acceleration: flat.acceleration + flat.jerk * dt + snap * (dt * dt / 2.0),
        jerk: flat.jerk + snap * dt,
        snap: flat.snap,
        yaw: flat.yaw + flat.yaw_rate * dt,
        yaw_rate: flat.yaw_rate,
    }
}

fn rotation_log(r: &Rotation3<f64>) -> Vector3<f64> {
    UnitQuaternion::from_rotation_matrix(r).scaled_axis()
}

/// Full flatness map. Body rates and their derivative come from the
/// attitude map evaluated at `t - d, t, t + d` on the local Taylor model:
/// `w = log(R(t)^T R(t + d)) / d` style central differences.
pub fn flat_to_reference(
    flat: &FlatOutputs,
    total_mass: f64,
    drag: &DragParams,
    gravity: f64,
) -> Result<FlatReference, FlatnessError> {
    let (a_cmd, rot) = specific_thrust(&flat.acceleration, &flat.velocity, flat.yaw, drag, gravity)?;
    let thrust = total_mass * a_cmd.dot(&(rot * Vector3::z()));

    let d = RATE_DELTA;
    let prev = taylor_shift(flat, -d);
    let next = taylor_shift(flat, d);
    let (_, rot_prev) =
        specific_thrust(&prev.acceleration, &prev.velocity, prev.yaw, drag, gravity)?;
    let (_, rot_next) =
        specific_thrust(&next.acceleration, &next.velocity, next.yaw, drag, gravity)?;

    // body rates over the two half-intervals, then average / difference
    let w_early = rotation_log(&(rot_prev.transpose() * rot)) / d;
    let w_late = rotation_log(&(rot.transpose() * rot_next)) / d;
    let body_rate = 0.5 * (w_early + w_late);
    let body_rate_dot = (w_late - w_early) / d;

    Ok(FlatReference {
        attitude: UnitQuaternion::from_rotation_matrix(&rot),
        body_rate,
        body_rate_dot,
        thrust,
    })
}
