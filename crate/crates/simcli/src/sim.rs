//! Closed-loop tracking simulation: rigid-body physics at the control
//! rate, a first-order servo plant with slew limiting for the arms, a
//! fold-dependent thrust-efficiency loss, and one of three tracking
//! controllers (the full cascade, or the PID / LQR baselines).

use nalgebra::{Matrix4, UnitQuaternion, Vector3, Vector4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use morphquad::controller::{
    allocate, Controller, ControllerGains, LqrBaseline, PidBaseline, RlsState,
};
use morphquad::corridor::Corridor;
use morphquad::dynamics::{rk4_step, RigidState, WrenchInput, GRAVITY};
use morphquad::flatness::{flat_to_reference, FlatOutputs};
use morphquad::morphology::{
    allocation_matrix, box_vertices, half_extents_for_angle, inertial_props, GeometryParams,
    MorphState, ALPHA_MAX, ALPHA_X,
};
use morphquad::optimizer::MorphProfile;
use morphquad::trajectory::MincoTrajectory;

use crate::scenario::{ControllerKind, Scenario};

/// One reference sample for the tracking loop.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSample {
    pub flat: FlatOutputs,
    pub alpha: [f64; 4],
    pub alpha_rate: [f64; 4],
}

/// Anything the simulator can track.
pub trait ReferenceSource {
    fn sample(&self, t: f64) -> ReferenceSample;
    /// Length of the tracking window (error statistics stop here).
    fn duration(&self) -> f64;
}

/// Planned trajectory plus morph profile; holds the goal state after the
/// trajectory ends.
pub struct PlannedReference<'a> {
    pub trajectory: &'a MincoTrajectory,
    pub profile: &'a MorphProfile,
}

impl ReferenceSource for PlannedReference<'_> {
    fn sample(&self, t: f64) -> ReferenceSample {
        let total = self.trajectory.total_duration();
        let tc = t.clamp(0.0, total);
        let (k, tau) = self.trajectory.locate(tc);
        let at_end = t >= total;
        let flat = FlatOutputs {
            position: self.trajectory.segment_eval(k, tau, 0),
            velocity: if at_end {
                Vector3::zeros()
            } else {
                self.trajectory.segment_eval(k, tau, 1)
            },
            acceleration: if at_end {
                Vector3::zeros()
            } else {
                self.trajectory.segment_eval(k, tau, 2)
            },
            jerk: if at_end {
                Vector3::zeros()
            } else {
                self.trajectory.segment_eval(k, tau, 3)
            },
            snap: Some(if at_end {
                Vector3::zeros()
            } else {
                self.trajectory.segment_eval(k, tau, 4)
            }),
            yaw: 0.0,
            yaw_rate: 0.0,
        };
        let (alpha, rate) = self.profile.angle(t);
        ReferenceSample {
            flat,
            alpha: [alpha; 4],
            alpha_rate: [rate; 4],
        }
    }

    fn duration(&self) -> f64 {
        self.trajectory.total_duration()
    }
}

/// One telemetry record per control step.
#[derive(Debug, Clone, Copy)]
pub struct TelemetryRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub body_rate: Vector3<f64>,
    pub alpha: [f64; 4],
    pub thrust: f64,
    pub torque: Vector3<f64>,
    pub rotor_thrusts: Vector4<f64>,
    pub thrust_slope: f64,
    pub reference_position: Vector3<f64>,
    pub error_norm: f64,
}

/// Aggregate outcome of a closed-loop run.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub rows: Vec<TelemetryRow>,
    pub avg_error: f64,
    pub max_error: f64,
    /// Worst corridor violation of any body vertex (actual arm angles),
    /// `-inf` when no corridor applies.
    pub max_violation: f64,
    /// Integral of the squared collective thrust.
    pub thrust_energy: f64,
    pub final_error: f64,
    pub goal_reached: bool,
}

enum ControlLoop {
    Proposed(Box<Controller>),
    Pid(Box<PidBaseline>),
    Lqr(Box<LqrBaseline>),
}

/// Servo plant: first-order lag toward the setpoint with slew limiting
/// and hard angle limits.
fn servo_plant(alpha: &mut [f64; 4], alpha_dot: &mut [f64; 4], setpoint: &[f64; 4], tau: f64, slew: f64, dt: f64) {
    for i in 0..4 {
        let target = setpoint[i].clamp(0.0, ALPHA_MAX);
        let rate = ((target - alpha[i]) / tau).clamp(-slew, slew);
        alpha[i] = (alpha[i] + rate * dt).clamp(0.0, ALPHA_MAX);
        alpha_dot[i] = rate;
    }
}

/// Thrust efficiency: folding toward H overlaps the propellers with the
/// body and bleeds collective thrust.
fn thrust_efficiency(alpha: &[f64; 4], loss: f64) -> f64 {
    let x_cos = ALPHA_X.cos();
    let fold: f64 = alpha
        .iter()
        .map(|a| ((a.cos() - x_cos) / (1.0 - x_cos)).clamp(0.0, 1.0))
        .sum::<f64>()
        / 4.0;
    1.0 - loss * fold
}

/// Run the closed loop against a reference.
///
/// `corridor` (with the trajectory for the time-to-segment map) enables
/// per-step full-body violation tracking using the actual arm angles.
pub fn simulate_tracking(
    scenario: &Scenario,
    reference: &dyn ReferenceSource,
    corridor: Option<(&Corridor, &MincoTrajectory)>,
    kind: ControllerKind,
    seed: u64,
) -> SimOutcome {
    let geom = scenario
        .geometry
        .build()
        .expect("scenario was validated at load time");
    let m_t = geom.total_mass();
    let drag = scenario.drag.build();
    let dt = scenario.control_dt();
    let sim = &scenario.sim;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sim.noise_sigma.max(0.0)).expect("valid sigma");

    let start_sample = reference.sample(0.0);
    let mut state = RigidState::at_rest(start_sample.flat.position);
    let mut alpha = start_sample.alpha;
    let mut alpha_dot = [0.0; 4];

    let frozen_props = inertial_props(&geom, &MorphState::preset_x());
    let frozen_mc = allocation_matrix(&geom, &frozen_props).expect("X allocation");

    let mut control = match kind {
        ControllerKind::Proposed => ControlLoop::Proposed(Box::new(Controller::new(
            ControllerGains::default(),
            drag,
            GRAVITY,
            RlsState::new(
                scenario.rls.initial_slope,
                scenario.rls.initial_covariance,
                scenario.rls.forgetting,
            ),
        ))),
        ControllerKind::Pid => ControlLoop::Pid(Box::new(PidBaseline::new(GRAVITY))),
        ControllerKind::Lqr => ControlLoop::Lqr(Box::new(LqrBaseline::new(GRAVITY, 16.0, 8.0, 1.0))),
    };

    let tracking_end = reference.duration();
    let total_time = tracking_end + sim.duration_padding;
    let steps = (total_time / dt).round() as usize;

    let mut rows = Vec::with_capacity(steps + 1);
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    let mut max_error = 0.0f64;
    let mut max_violation = f64::NEG_INFINITY;
    let mut thrust_energy = 0.0;
    let mut held_accel = Vector3::new(0.0, 0.0, GRAVITY);
    let mut prev_velocity = state.velocity;

    for n in 0..=steps {
        let t = n as f64 * dt;
        let reference_sample = reference.sample(t);
        let flat = &reference_sample.flat;

        // measured state (optionally noisy)
        let measured = if sim.noise_sigma > 0.0 {
            let mut s = state;
            s.position += Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            );
            s.velocity += Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            );
            s.angular_velocity += Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            );
            s
        } else {
            state
        };

        let morph_meas = MorphState::new(alpha, alpha_dot);
        let props = inertial_props(&geom, &morph_meas);
        let m_c = allocation_matrix(&geom, &props).unwrap_or(frozen_mc);

        // feedforward from the drag-aware flatness map
        let flat_ref = flat_to_reference(flat, m_t, &drag, GRAVITY).ok();

        let (thrust_cmd, torque_cmd, slope, servo_setpoint): (f64, Vector3<f64>, f64, [f64; 4]) =
            match &mut control {
                ControlLoop::Proposed(ctrl) => {
                    if n % sim.position_loop_divider == 0 {
                        held_accel = ctrl.position_loop(
                            &measured,
                            &flat.position,
                            &flat.velocity,
                            &flat.acceleration,
                            dt * sim.position_loop_divider as f64,
                        );
                    }
                    let (rate_ff, rate_dot_ff) = flat_ref
                        .map(|r| (r.body_rate, r.body_rate_dot))
                        .unwrap_or((Vector3::zeros(), Vector3::zeros()));
                    let (q_d, rate_cmd) = match ctrl.attitude_loop(&held_accel, flat.yaw, &measured, &rate_ff)
                    {
                        Ok(v) => v,
                        Err(_) => (measured.attitude, rate_ff),
                    };
                    let tau =
                        ctrl.torque_loop(&rate_cmd, &rate_dot_ff, &q_d, &measured, &props, dt);
                    let f = ctrl.thrust_command(&held_accel, &measured, m_t);
                    // thrust-slope estimation from the measured response
                    if n > 0 {
                        let accel_meas = (state.velocity - prev_velocity) / dt;
                        let body_z = state.attitude.transform_vector(&Vector3::z());
                        let specific = accel_meas
                            + Vector3::new(0.0, 0.0, GRAVITY)
                            + drag.drag_acceleration(&state.attitude, &state.velocity);
                        let a_meas_z = specific.dot(&body_z);
                        let a_cmd_z = held_accel.dot(&body_z);
                        ctrl.rls.update(a_cmd_z, a_meas_z);
                    }
                    let inc = ctrl.servo_loop(&reference_sample.alpha, &alpha, &alpha_dot);
                    let setpoint = [
                        alpha[0] + inc[0],
                        alpha[1] + inc[1],
                        alpha[2] + inc[2],
                        alpha[3] + inc[3],
                    ];
                    (f, tau, ctrl.rls.slope, setpoint)
                }
                ControlLoop::Pid(pid) => {
                    let (f, tau) = pid.control(
                        &measured,
                        &flat.position,
                        &flat.velocity,
                        flat.yaw,
                        &frozen_props,
                        m_t,
                        dt,
                    );
                    (f, tau, 1.0, reference_sample.alpha)
                }
                ControlLoop::Lqr(lqr) => {
                    let (f, tau) = lqr.control(
                        &measured,
                        &flat.position,
                        &flat.velocity,
                        &flat.acceleration,
                        flat.yaw,
                        &props,
                        m_t,
                    );
                    (f, tau, 1.0, reference_sample.alpha)
                }
            };

        // allocation: the PID baseline mixes with its frozen matrix
        let mixer: &Matrix4<f64> = match kind {
            ControllerKind::Pid => &frozen_mc,
            _ => &m_c,
        };
        let rotor = allocate(thrust_cmd, &torque_cmd, mixer, sim.max_rotor_thrust)
            .unwrap_or_else(|_| Vector4::repeat(thrust_cmd / 4.0));
        // the plant converts rotor thrusts through the true allocation,
        // with the fold-dependent efficiency loss
        let kappa = thrust_efficiency(&alpha, scenario.morph.thrust_loss);
        let wrench = m_c * (rotor * kappa);
        let input = WrenchInput::new(wrench[0], Vector3::new(wrench[1], wrench[2], wrench[3]));

        // telemetry before stepping
        let err = (state.position - flat.position).norm();
        rows.push(TelemetryRow {
            t,
            position: state.position,
            velocity: state.velocity,
            attitude: state.attitude,
            body_rate: state.angular_velocity,
            alpha,
            thrust: wrench[0],
            torque: Vector3::new(wrench[1], wrench[2], wrench[3]),
            rotor_thrusts: rotor,
            thrust_slope: slope,
            reference_position: flat.position,
            error_norm: err,
        });
        if t <= tracking_end {
            err_sum += err;
            err_count += 1;
            max_error = max_error.max(err);
            if let Some((corridor, traj)) = corridor {
                let (k, _) = traj.locate(t.min(traj.total_duration()));
                let poly = &corridor.polytopes[k.min(corridor.polytopes.len() - 1)];
                // conservative extents over the four arm angles
                let alpha_min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
                let alpha_max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let (ex, _, ez) = half_extents_for_angle(&geom, alpha_max);
                let (_, ey, _) = half_extents_for_angle(&geom, alpha_min);
                for vertex in box_vertices(ex, ey, ez) {
                    let world = state.attitude.transform_vector(&vertex) + state.position;
                    max_violation = max_violation.max(poly.point_violation(&world));
                }
            }
        }
        thrust_energy += wrench[0] * wrench[0] * dt;

        if n == steps {
            break;
        }
        prev_velocity = state.velocity;
        servo_plant(
            &mut alpha,
            &mut alpha_dot,
            &servo_setpoint,
            sim.servo_tau,
            sim.servo_slew,
            dt,
        );
        state = rk4_step(&state, &input, &props, &drag, m_t, GRAVITY, dt)
            .expect("simulation state stayed finite");
    }

    let final_sample = reference.sample(total_time);
    let final_error = (state.position - final_sample.flat.position).norm();
    SimOutcome {
        avg_error: if err_count > 0 { err_sum / err_count as f64 } else { 0.0 },
        max_error,
        max_violation,
        thrust_energy,
        final_error,
        goal_reached: final_error <= sim.goal_tolerance,
        rows,
    }
}

pub fn geometry_of(scenario: &Scenario) -> GeometryParams {
    scenario
        .geometry
        .build()
        .expect("scenario was validated at load time")
}
