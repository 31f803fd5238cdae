//! Controller benchmark: track a circular trajectory at several maximum
//! velocities while the arms continuously oscillate, and tabulate the
//! average and maximum tracking error per controller.

use nalgebra::Vector3;

use morphquad::flatness::FlatOutputs;
use morphquad::morphology::ALPHA_X;

use crate::scenario::{ControllerKind, Scenario};
use crate::sim::{simulate_tracking, ReferenceSample, ReferenceSource};

/// Analytic circle with a quintic speed ramp and per-arm phase-shifted
/// morph oscillation.
pub struct CircleReference {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub cruise_speed: f64,
    pub ramp_time: f64,
    pub laps: f64,
    pub morph_period: f64,
    pub morph_amplitude: f64,
}

impl CircleReference {
    pub fn from_scenario(scenario: &Scenario, cruise_speed: f64) -> Self {
        let b = &scenario.benchmark;
        Self {
            center: Vector3::new(0.0, 0.0, b.height),
            radius: b.radius,
            cruise_speed,
            ramp_time: b.ramp_time,
            laps: b.laps,
            morph_period: b.morph_period,
            morph_amplitude: b.morph_amplitude,
        }
    }

    fn cruise_rate(&self) -> f64 {
        self.cruise_speed / self.radius
    }

    /// Angle along the circle and its first three derivatives.
    fn phase(&self, t: f64) -> (f64, f64, f64, f64) {
        let w = self.cruise_rate();
        let tr = self.ramp_time;
        if self.cruise_speed <= 0.0 {
            return (0.0, 0.0, 0.0, 0.0);
        }
        if t < tr {
            let u = t / tr;
            let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / tr;
            let dds = (60.0 * u - 180.0 * u * u + 120.0 * u * u * u) / (tr * tr);
            // integral of the smoothstep: 2.5u^4 - 3u^5 + u^6
            let integral = 2.5 * u.powi(4) - 3.0 * u.powi(5) + u.powi(6);
            (w * tr * integral, w * s, w * ds, w * dds)
        } else {
            let theta0 = w * tr * 0.5;
            (theta0 + w * (t - tr), w, 0.0, 0.0)
        }
    }
}

impl ReferenceSource for CircleReference {
    fn sample(&self, t: f64) -> ReferenceSample {
        let (theta, d1, d2, d3) = self.phase(t);
        let (s, c) = theta.sin_cos();
        let r = self.radius;
        let radial = Vector3::new(c, s, 0.0);
        let tangent = Vector3::new(-s, c, 0.0);
        let position = self.center + r * radial;
        let velocity = r * d1 * tangent;
        let acceleration = r * (d2 * tangent - d1 * d1 * radial);
        let jerk = r * (d3 * tangent - 3.0 * d1 * d2 * radial - d1.powi(3) * tangent);
        // degenerate zero-speed runs hover in the X preset without morphing
        let mut alpha = [ALPHA_X; 4];
        let mut alpha_rate = [0.0; 4];
        if self.cruise_speed > 0.0 {
            let omega_m = 2.0 * std::f64::consts::PI / self.morph_period;
            for i in 0..4 {
                let phase = i as f64 * std::f64::consts::FRAC_PI_2;
                alpha[i] = ALPHA_X + self.morph_amplitude * (omega_m * t + phase).sin();
                alpha_rate[i] = self.morph_amplitude * omega_m * (omega_m * t + phase).cos();
            }
        }
        ReferenceSample {
            flat: FlatOutputs {
                position,
                velocity,
                acceleration,
                jerk,
                snap: None,
                yaw: 0.0,
                yaw_rate: 0.0,
            },
            alpha,
            alpha_rate,
        }
    }

    fn duration(&self) -> f64 {
        if self.cruise_speed <= 0.0 {
            return 10.0;
        }
        self.ramp_time + self.laps * 2.0 * std::f64::consts::PI * self.radius / self.cruise_speed
    }
}

/// One benchmark cell: tracking statistics for a controller at a speed.
#[derive(Debug, Clone, Copy)]
pub struct BenchCell {
    pub controller: ControllerKind,
    pub avg_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub v_max: f64,
    pub cells: Vec<BenchCell>,
}

/// Run every controller at every speed on the morphing-circle reference.
pub fn benchmark_controllers(
    scenario: &Scenario,
    controllers: &[ControllerKind],
    v_maxes: &[f64],
    seed: u64,
) -> Vec<BenchRow> {
    let mut rows = Vec::with_capacity(v_maxes.len());
    for &v in v_maxes {
        let reference = CircleReference::from_scenario(scenario, v);
        let mut cells = Vec::with_capacity(controllers.len());
        for &kind in controllers {
            let outcome = simulate_tracking(scenario, &reference, None, kind, seed);
            cells.push(BenchCell {
                controller: kind,
                avg_error: outcome.avg_error,
                max_error: outcome.max_error,
            });
        }
        rows.push(BenchRow { v_max: v, cells });
    }
    rows
}
