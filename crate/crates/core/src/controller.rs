//! Nonlinear cascaded tracking controller for the morphing quadrotor.
//!
//! Position loop -> commanded acceleration, attitude construction from
//! the thrust direction, body-rate command from the quaternion error,
//! torque law with gyroscopic and drag terms, forgetting-factor RLS for
//! the thrust-model slope, rotor allocation with saturation priorities,
//! and the servo PD law for the arm angles. PID and LQR reference
//! baselines used by the benchmark live here too; both are deliberately
//! simple cascades, not reproductions of any particular vehicle stack.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4};

use crate::dynamics::{DragParams, RigidState};
use crate::flatness::{attitude_from_thrust_direction, FlatnessError};
use crate::morphology::InertialProps;

#[derive(Debug, Clone)]
pub struct ControllerGains {
    /// Feedforward gain on the reference acceleration.
    pub accel_feedforward: Matrix3<f64>,
    /// Position error gain inside the feedback acceleration.
    pub position_p: Vector3<f64>,
    /// Velocity error gain (damping).
    pub velocity_p: Vector3<f64>,
    /// Velocity-error integral gain.
    pub velocity_i: Vector3<f64>,
    /// Per-axis clamp on the velocity-error integral.
    pub integral_limit: f64,
    /// Leak time constant of the velocity-error integral, s. The leak
    /// removes the bias a raw velocity-error integral would keep from
    /// the initial position offset.
    pub integral_leak: f64,
    /// Attitude gain mapping the quaternion error vector to body rates.
    pub attitude_p: Vector3<f64>,
    pub rate_p: Vector3<f64>,
    pub rate_i: Vector3<f64>,
    pub rate_d: Vector3<f64>,
    pub rate_integral_limit: f64,
    pub servo_p: f64,
    pub servo_d: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            accel_feedforward: Matrix3::identity(),
            position_p: Vector3::new(6.0, 6.0, 8.0),
            velocity_p: Vector3::new(4.5, 4.5, 5.5),
            velocity_i: Vector3::new(0.8, 0.8, 1.0),
            integral_limit: 2.0,
            integral_leak: 0.5,
            attitude_p: Vector3::new(9.0, 9.0, 4.0),
            rate_p: Vector3::new(28.0, 28.0, 18.0),
            rate_i: Vector3::new(8.0, 8.0, 5.0),
            rate_d: Vector3::new(0.002, 0.002, 0.001),
            rate_integral_limit: 3.0,
            servo_p: 1.0,
            servo_d: 0.02,
        }
    }
}

/// Forgetting-factor recursive least squares estimating the slope of the
/// measured z-acceleration response against the commanded normalized
/// thrust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlsState {
    /// Identified thrust-model slope `H_n`.
    pub slope: f64,
    /// Covariance `P_n`.
    pub covariance: f64,
    /// Forgetting factor in (0.9, 1].
    pub forgetting: f64,
    /// Last gain `K_n`.
    pub gain: f64,
    /// Last normalized-thrust regressor `c_n`.
    pub regressor: f64,
}

impl Default for RlsState {
    fn default() -> Self {
        Self::new(1.0, 100.0, 0.995)
    }
}

impl RlsState {
    pub fn new(initial_slope: f64, initial_covariance: f64, forgetting: f64) -> Self {
        Self {
            slope: initial_slope,
            covariance: initial_covariance,
            forgetting,
            gain: 0.0,
            regressor: 0.0,
        }
    }

    /// One recursion: gain, covariance, slope, with the regressor formed
    /// from the previous slope estimate.
    pub fn update(&mut self, commanded_z_accel: f64, measured_z_accel: f64) {
        let c = commanded_z_accel / self.slope;
        let denom = self.forgetting + c * self.covariance * c;
        let k = self.covariance * c / denom;
        self.covariance = (1.0 - k * c) * self.covariance / self.forgetting;
        self.slope += k * (measured_z_accel - c * self.slope);
        self.gain = k;
        self.regressor = c;
    }
}

/// Output of one allocation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub thrust: f64,
    pub torque: Vector3<f64>,
    pub rotor_thrusts: Vector4<f64>,
    /// Servo angle increments from the PD law.
    pub servo_command: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("allocation matrix is singular")]
    SingularAllocation,
    #[error(transparent)]
    Flatness(#[from] FlatnessError),
}

/// Cascaded controller state: integrators, RLS, and derivative memory.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: ControllerGains,
    pub drag: DragParams,
    pub gravity: f64,
    pub rls: RlsState,
    velocity_error_integral: Vector3<f64>,
    rate_error_integral: Vector3<f64>,
    previous_rate: Option<Vector3<f64>>,
}

impl Controller {
    pub fn new(gains: ControllerGains, drag: DragParams, gravity: f64, rls: RlsState) -> Self {
        Self {
            gains,
            drag,
            gravity,
            rls,
            velocity_error_integral: Vector3::zeros(),
            rate_error_integral: Vector3::zeros(),
            previous_rate: None,
        }
    }

    pub fn reset(&mut self) {
        self.velocity_error_integral = Vector3::zeros();
        self.rate_error_integral = Vector3::zeros();
        self.previous_rate = None;
    }

    /// Position loop: commanded acceleration from reference and state.
    ///
    /// `a_cmd = K_a a_d + a_ff - a_fb + g e3`, where the drag feedforward
    /// is `R D R^T v_d` and the feedback term collects position error,
    /// velocity error, and the clamped velocity-error integral (measured
    /// minus desired).
    pub fn position_loop(
        &mut self,
        state: &RigidState,
        position_ref: &Vector3<f64>,
        velocity_ref: &Vector3<f64>,
        accel_ref: &Vector3<f64>,
        dt: f64,
    ) -> Vector3<f64> {
        let drag_ff = self.drag.drag_acceleration(&state.attitude, velocity_ref);
        let pos_err = state.position - position_ref;
        let vel_err = state.velocity - velocity_ref;
        self.velocity_error_integral +=
            (vel_err - self.velocity_error_integral / self.gains.integral_leak) * dt;
        let lim = self.gains.integral_limit;
        self.velocity_error_integral = self.velocity_error_integral.map(|v| v.clamp(-lim, lim));
        let feedback = self.gains.position_p.component_mul(&pos_err)
            + self.gains.velocity_p.component_mul(&vel_err)
            + self.gains.velocity_i.component_mul(&self.velocity_error_integral);
        self.gains.accel_feedforward * accel_ref + drag_ff - feedback
            + Vector3::new(0.0, 0.0, self.gravity)
    }

    /// Attitude loop: desired attitude from the commanded acceleration
    /// and yaw, and the body-rate command from the quaternion error with
    /// shortest-rotation sign handling.
    pub fn attitude_loop(
        &self,
        a_cmd: &Vector3<f64>,
        yaw_ref: f64,
        state: &RigidState,
        rate_feedforward: &Vector3<f64>,
    ) -> Result<(UnitQuaternion<f64>, Vector3<f64>), ControlError> {
        let q_d = attitude_from_thrust_direction(a_cmd, yaw_ref)?;
        let q_e = state.attitude.inverse() * q_d;
        let sign = if q_e.w >= 0.0 { 1.0 } else { -1.0 };
        let rate_cmd =
            self.gains.attitude_p.component_mul(&(sign * q_e.imag())) + rate_feedforward;
        Ok((q_d, rate_cmd))
    }

    /// Torque loop: `tau = J(w_dot_ff + w_dot_cmd) + w_cmd x J w_cmd +
    /// A R_d^T v + B w_cmd`, with the PID on the body-rate error using a
    /// derivative on the measurement.
    pub fn torque_loop(
        &mut self,
        rate_cmd: &Vector3<f64>,
        rate_dot_ff: &Vector3<f64>,
        attitude_ref: &UnitQuaternion<f64>,
        state: &RigidState,
        props: &InertialProps,
        dt: f64,
    ) -> Vector3<f64> {
        let rate_err = rate_cmd - state.angular_velocity;
        self.rate_error_integral += rate_err * dt;
        let lim = self.gains.rate_integral_limit;
        self.rate_error_integral = self.rate_error_integral.map(|v| v.clamp(-lim, lim));
        let measurement_rate = match self.previous_rate {
            Some(prev) => (state.angular_velocity - prev) / dt,
            None => Vector3::zeros(),
        };
        self.previous_rate = Some(state.angular_velocity);
        let rate_dot_cmd = self.gains.rate_p.component_mul(&rate_err)
            + self.gains.rate_i.component_mul(&self.rate_error_integral)
            - self.gains.rate_d.component_mul(&measurement_rate);
        let j = props.inertia;
        j * (rate_dot_ff + rate_dot_cmd)
            + rate_cmd.cross(&(j * rate_cmd))
            + self.drag.translational_moment
                * attitude_ref.inverse_transform_vector(&state.velocity)
            + self.drag.rotation_damping * rate_cmd
    }

    /// Collective thrust from the commanded acceleration projected on the
    /// current body z axis, scaled by the identified thrust slope.
    pub fn thrust_command(&self, a_cmd: &Vector3<f64>, state: &RigidState, total_mass: f64) -> f64 {
        let body_z = state.attitude.transform_vector(&Vector3::z());
        (total_mass * a_cmd.dot(&body_z) / self.slope()).max(0.0)
    }

    pub fn slope(&self) -> f64 {
        self.rls.slope.max(0.1)
    }

    /// Servo PD law: angle increments `Kp e + Kd e_dot` with the rate of
    /// the implied motion left to the servo plant.
    pub fn servo_loop(
        &self,
        alpha_ref: &[f64; 4],
        alpha_meas: &[f64; 4],
        alpha_rate_meas: &[f64; 4],
    ) -> [f64; 4] {
        let mut out = [0.0; 4];
        for i in 0..4 {
            let err = alpha_ref[i] - alpha_meas[i];
            let err_rate = -alpha_rate_meas[i];
            out[i] = self.gains.servo_p * err + self.gains.servo_d * err_rate;
        }
        out
    }
}

/// Invert the allocation matrix with saturation priorities: roll/pitch
/// torques are preserved, yaw torque is scaled toward feasibility, then
/// the collective is moved, and only then the rotor forces are clamped.
pub fn allocate(
    thrust: f64,
    torque: &Vector3<f64>,
    allocation: &Matrix4<f64>,
    max_rotor_thrust: f64,
) -> Result<Vector4<f64>, ControlError> {
    let inv = allocation
        .try_inverse()
        .ok_or(ControlError::SingularAllocation)?;
    let wrench = Vector4::new(thrust, torque.x, torque.y, torque.z);
    let direct = inv * wrench;
    let in_bounds =
        |u: &Vector4<f64>| u.iter().all(|&v| (-1e-9..=max_rotor_thrust + 1e-9).contains(&v));
    if in_bounds(&direct) {
        return Ok(direct.map(|v| v.clamp(0.0, max_rotor_thrust)));
    }
    // affine decomposition: u = base + f * col_f + gamma * col_z
    let base = inv * Vector4::new(0.0, torque.x, torque.y, 0.0);
    let col_f = inv * Vector4::new(1.0, 0.0, 0.0, 0.0);
    let col_z = inv * Vector4::new(0.0, 0.0, 0.0, torque.z);

    // step 1: keep thrust, shrink yaw
    let with_f = base + thrust * col_f;
    if let Some(gamma) = max_feasible_fraction(&with_f, &col_z, max_rotor_thrust) {
        let u = with_f + gamma * col_z;
        return Ok(u.map(|v| v.clamp(0.0, max_rotor_thrust)));
    }
    // step 2: drop yaw entirely, move thrust toward feasibility
    if let Some(f_new) = nearest_feasible_scalar(&base, &col_f, thrust, max_rotor_thrust) {
        let u = base + f_new * col_f;
        return Ok(u.map(|v| v.clamp(0.0, max_rotor_thrust)));
    }
    // roll/pitch alone infeasible: clamp and accept the error
    Ok(direct.map(|v| v.clamp(0.0, max_rotor_thrust)))
}

/// Largest `gamma` in [0, 1] keeping `base + gamma * dir` within bounds.
fn max_feasible_fraction(
    base: &Vector4<f64>,
    dir: &Vector4<f64>,
    max_value: f64,
) -> Option<f64> {
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 1.0;
    for i in 0..4 {
        let b = base[i];
        let d = dir[i];
        if d.abs() < 1e-12 {
            if !(-1e-9..=max_value + 1e-9).contains(&b) {
                return None;
            }
            continue;
        }
        let t0 = (0.0 - b) / d;
        let t1 = (max_value - b) / d;
        let (tmin, tmax) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(tmin);
        hi = hi.min(tmax);
    }
    (hi >= lo - 1e-12).then(|| hi.clamp(0.0, 1.0)).filter(|&g| {
        let u = base + g * dir;
        u.iter().all(|&v| (-1e-6..=max_value + 1e-6).contains(&v))
    })
}

/// Value of `f` nearest `preferred` keeping `base + f * dir` in bounds.
fn nearest_feasible_scalar(
    base: &Vector4<f64>,
    dir: &Vector4<f64>,
    preferred: f64,
    max_value: f64,
) -> Option<f64> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for i in 0..4 {
        let b = base[i];
        let d = dir[i];
        if d.abs() < 1e-12 {
            if !(-1e-9..=max_value + 1e-9).contains(&b) {
                return None;
            }
            continue;
        }
        let t0 = (0.0 - b) / d;
        let t1 = (max_value - b) / d;
        let (tmin, tmax) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        lo = lo.max(tmin);
        hi = hi.min(tmax);
    }
    if hi < lo {
        return None;
    }
    Some(preferred.clamp(lo, hi).max(0.0))
}

// ---------------------------------------------------------------------
// reference baselines for the benchmark
// ---------------------------------------------------------------------

/// Linear PID cascade with a frozen X-configuration model: no drag
/// terms, no feedforward, fixed inertia and allocation.
#[derive(Debug, Clone)]
pub struct PidBaseline {
    pub position_p: Vector3<f64>,
    pub position_i: Vector3<f64>,
    pub position_d: Vector3<f64>,
    pub attitude_p: Vector3<f64>,
    pub attitude_d: Vector3<f64>,
    pub gravity: f64,
    position_integral: Vector3<f64>,
}

impl PidBaseline {
    pub fn new(gravity: f64) -> Self {
        Self {
            position_p: Vector3::new(5.0, 5.0, 7.0),
            position_i: Vector3::new(0.6, 0.6, 0.8),
            position_d: Vector3::new(3.8, 3.8, 4.5),
            attitude_p: Vector3::new(60.0, 60.0, 25.0),
            attitude_d: Vector3::new(12.0, 12.0, 6.0),
            gravity,
            position_integral: Vector3::zeros(),
        }
    }

    pub fn reset(&mut self) {
        self.position_integral = Vector3::zeros();
    }

    /// Thrust and torque from the linear cascade with small-angle
    /// attitude setpoints and the frozen model `props`.
    pub fn control(
        &mut self,
        state: &RigidState,
        position_ref: &Vector3<f64>,
        velocity_ref: &Vector3<f64>,
        yaw_ref: f64,
        frozen: &InertialProps,
        total_mass: f64,
        dt: f64,
    ) -> (f64, Vector3<f64>) {
        let pos_err = position_ref - state.position;
        let vel_err = velocity_ref - state.velocity;
        self.position_integral += pos_err * dt;
        self.position_integral = self.position_integral.map(|v| v.clamp(-1.0, 1.0));
        let a_cmd = self.position_p.component_mul(&pos_err)
            + self.position_d.component_mul(&vel_err)
            + self.position_i.component_mul(&self.position_integral)
            + Vector3::new(0.0, 0.0, self.gravity);
        // small-angle attitude setpoints
        let (sy, cy) = yaw_ref.sin_cos();
        let g = self.gravity;
        let roll_cmd = (a_cmd.x * sy - a_cmd.y * cy) / g;
        let pitch_cmd = (a_cmd.x * cy + a_cmd.y * sy) / g;
        let (roll, pitch, yaw) = state.attitude.euler_angles();
        let angle_err = Vector3::new(
            roll_cmd - roll,
            pitch_cmd - pitch,
            wrap_angle(yaw_ref - yaw),
        );
        let torque = frozen.inertia
            * (self.attitude_p.component_mul(&angle_err)
                - self.attitude_d.component_mul(&state.angular_velocity));
        let thrust = (total_mass * a_cmd.z).max(0.0);
        (thrust, torque)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

/// Hover-linearized LQR with morph-updated inertia: per-axis
/// double-integrator Riccati gains for position, rotation-vector state
/// feedback for attitude. No drag model and no thrust adaptation.
#[derive(Debug, Clone)]
pub struct LqrBaseline {
    pub position_gain: f64,
    pub velocity_gain: f64,
    pub attitude_gain: f64,
    pub rate_gain: f64,
    pub gravity: f64,
}

impl LqrBaseline {
    /// Gains from the closed-form Riccati solution of the per-axis double
    /// integrator with weights `(q_p, q_v)` and control weight `r`.
    pub fn new(gravity: f64, q_p: f64, q_v: f64, r: f64) -> Self {
        let k1 = (q_p / r).sqrt();
        let k2 = (q_v / r + 2.0 * k1).sqrt();
        // attitude loop uses the same structure with stiffer weights
        let ka1 = (400.0f64).sqrt();
        let ka2 = (30.0 + 2.0 * ka1).sqrt();
        Self {
            position_gain: k1,
            velocity_gain: k2,
            attitude_gain: ka1,
            rate_gain: ka2,
            gravity,
        }
    }

    pub fn control(
        &self,
        state: &RigidState,
        position_ref: &Vector3<f64>,
        velocity_ref: &Vector3<f64>,
        accel_ref: &Vector3<f64>,
        yaw_ref: f64,
        props: &InertialProps,
        total_mass: f64,
    ) -> (f64, Vector3<f64>) {
        let a_cmd = accel_ref
            + self.position_gain * (position_ref - state.position)
            + self.velocity_gain * (velocity_ref - state.velocity)
            + Vector3::new(0.0, 0.0, self.gravity);
        let thrust_dir = if a_cmd.norm() > 1e-6 {
            a_cmd / a_cmd.norm()
        } else {
            Vector3::z()
        };
        let q_d = attitude_from_thrust_direction(&(thrust_dir * a_cmd.norm().max(1e-6)), yaw_ref)
            .unwrap_or(UnitQuaternion::identity());
        let q_e = state.attitude.inverse() * q_d;
        let sign = if q_e.w >= 0.0 { 1.0 } else { -1.0 };
        let attitude_err = sign * 2.0 * q_e.imag();
        let rate_dot_cmd =
            self.attitude_gain * attitude_err - self.rate_gain * state.angular_velocity;
        let torque = props.inertia * rate_dot_cmd
            + state
                .angular_velocity
                .cross(&(props.inertia * state.angular_velocity));
        let body_z = state.attitude.transform_vector(&Vector3::z());
        let thrust = (total_mass * a_cmd.dot(&body_z)).max(0.0);
        (thrust, torque)
    }
}
