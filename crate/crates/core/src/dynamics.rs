//! Rigid-body dynamics of the morphing quadrotor with rotor drag, and a
//! fixed-step RK4 integrator.
//!
//! Translational drag enters as `-R D R^T v` with `D` diagonal in the
//! body frame; the rotational equation carries a translational coupling
//! moment `-A R^T v` and self-rotation damping `-B w`. Morphing is
//! treated quasi-statically: the caller refreshes the inertial
//! properties between steps and no inertia-rate terms appear.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::morphology::InertialProps;

/// Default gravitational acceleration, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Rigid-body state: position, velocity (world frame), attitude, and
/// body-frame angular velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl RigidState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }
}

/// Aerodynamic drag parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DragParams {
    /// Diagonal of the mass-normalized rotor-drag matrix `D`, 1/s.
    pub linear: Vector3<f64>,
    /// Translational-motion moment coupling `A`.
    pub translational_moment: Matrix3<f64>,
    /// Self-rotation damping `B`.
    pub rotation_damping: Matrix3<f64>,
}

impl DragParams {
    pub fn zero() -> Self {
        Self {
            linear: Vector3::zeros(),
            translational_moment: Matrix3::zeros(),
            rotation_damping: Matrix3::zeros(),
        }
    }

    /// Rotor-drag defaults; `A = B = 0`.
    pub fn default_rotor_drag() -> Self {
        Self {
            linear: Vector3::new(0.3, 0.3, 0.1),
            ..Self::zero()
        }
    }

    /// The drag matrix `D` as a full 3x3.
    pub fn linear_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.linear)
    }

    /// World-frame drag acceleration `R D R^T v` for attitude `R`.
    pub fn drag_acceleration(&self, attitude: &UnitQuaternion<f64>, velocity: &Vector3<f64>) -> Vector3<f64> {
        let body_vel = attitude.inverse_transform_vector(velocity);
        attitude.transform_vector(&self.linear.component_mul(&body_vel))
    }
}

/// Collective thrust along body z and body torques.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchInput {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl WrenchInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self {
            thrust: thrust.max(0.0),
            torque,
        }
    }
}

/// Time derivative of the rigid state. The attitude slot carries the raw
/// quaternion derivative.
#[derive(Debug, Clone, Copy)]
pub struct StateDerivative {
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub attitude_dot: Quaternion<f64>,
    pub angular_acceleration: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("state derivative is not finite")]
    NonFiniteState,
    #[error("time step {0} outside (0, 0.01]")]
    InvalidTimeStep(f64),
}

/// Continuous-time dynamics:
/// `dv = -g e3 + R (f/m) e3 - R D R^T v`,
/// `dq = q (0, w) / 2`,
/// `dw = J^-1 (tau - w x J w - A R^T v - B w)`.
pub fn state_derivative(
    state: &RigidState,
    input: &WrenchInput,
    props: &InertialProps,
    drag: &DragParams,
    total_mass: f64,
    gravity: f64,
) -> Result<StateDerivative, DynamicsError> {
    let r = &state.attitude;
    let thrust_acc = r.transform_vector(&Vector3::new(0.0, 0.0, input.thrust / total_mass));
    let drag_acc = drag.drag_acceleration(r, &state.velocity);
    let acceleration = Vector3::new(0.0, 0.0, -gravity) + thrust_acc - drag_acc;

    let omega = state.angular_velocity;
    let omega_quat = Quaternion::from_parts(0.0, omega);
    let attitude_dot = state.attitude.into_inner() * omega_quat * 0.5;

    let body_vel = r.inverse_transform_vector(&state.velocity);
    let torque = input.torque
        - omega.cross(&(props.inertia * omega))
        - drag.translational_moment * body_vel
        - drag.rotation_damping * omega;
    let angular_acceleration = props
        .inertia
        .try_inverse()
        .ok_or(DynamicsError::NonFiniteState)?
        * torque;

    let d = StateDerivative {
        velocity: state.velocity,
        acceleration,
        attitude_dot,
        angular_acceleration,
    };
    let finite = d.velocity.iter().all(|v| v.is_finite())
        && d.acceleration.iter().all(|v| v.is_finite())
        && d.attitude_dot.coords.iter().all(|v| v.is_finite())
        && d.angular_acceleration.iter().all(|v| v.is_finite());
    if finite {
        Ok(d)
    } else {
        Err(DynamicsError::NonFiniteState)
    }
}

// intermediate Euler update used by the RK4 stages
fn advance(state: &RigidState, d: &StateDerivative, dt: f64) -> RigidState {
    let q = Quaternion::from(state.attitude.into_inner()) + d.attitude_dot * dt;
    RigidState {
        position: state.position + d.velocity * dt,
        velocity: state.velocity + d.acceleration * dt,
        attitude: UnitQuaternion::from_quaternion(q),
        angular_velocity: state.angular_velocity + d.angular_acceleration * dt,
    }
}

/// One classical RK4 step with quaternion renormalization. The wrench and
/// inertial properties are held constant over the step.
pub fn rk4_step(
    state: &RigidState,
    input: &WrenchInput,
    props: &InertialProps,
    drag: &DragParams,
    total_mass: f64,
    gravity: f64,
    dt: f64,
) -> Result<RigidState, DynamicsError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(DynamicsError::InvalidTimeStep(dt));
    }
    let k1 = state_derivative(state, input, props, drag, total_mass, gravity)?;
    let s2 = advance(state, &k1, 0.5 * dt);
    let k2 = state_derivative(&s2, input, props, drag, total_mass, gravity)?;
    let s3 = advance(state, &k2, 0.5 * dt);
    let k3 = state_derivative(&s3, input, props, drag, total_mass, gravity)?;
    let s4 = advance(state, &k3, dt);
    let k4 = state_derivative(&s4, input, props, drag, total_mass, gravity)?;

    let q = Quaternion::from(state.attitude.into_inner())
        + (k1.attitude_dot + k2.attitude_dot * 2.0 + k3.attitude_dot * 2.0 + k4.attitude_dot)
            * (dt / 6.0);
    let next = RigidState {
        position: state.position
            + (k1.velocity + 2.0 * k2.velocity + 2.0 * k3.velocity + k4.velocity) * (dt / 6.0),
        velocity: state.velocity
            + (k1.acceleration + 2.0 * k2.acceleration + 2.0 * k3.acceleration + k4.acceleration)
                * (dt / 6.0),
        attitude: UnitQuaternion::from_quaternion(q),
        angular_velocity: state.angular_velocity
            + (k1.angular_acceleration
                + 2.0 * k2.angular_acceleration
                + 2.0 * k3.angular_acceleration
                + k4.angular_acceleration)
                * (dt / 6.0),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::NonFiniteState)
    }
}
