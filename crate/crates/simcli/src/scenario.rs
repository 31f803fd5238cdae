//! Scenario configuration: a TOML file with explicit keys describing the
//! vehicle, the world, the limits, and the simulation setup.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::Deserialize;

use morphquad::dynamics::DragParams;
use morphquad::morphology::{GeometryParams, MorphologyError, ARM_SIGNS};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// The embedded message carries the line and column of the offending
    /// key.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] MorphologyError),
}

/// Which tracking controller runs the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Proposed,
    Pid,
    Lqr,
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(Self::Proposed),
            "pid" => Ok(Self::Pid),
            "lqr" => Ok(Self::Lqr),
            other => Err(format!("unknown controller '{other}' (proposed|pid|lqr)")),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Proposed => write!(f, "proposed"),
            Self::Pid => write!(f, "pid"),
            Self::Lqr => write!(f, "lqr"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub arm_length: f64,
    pub body_half_length: f64,
    pub body_mass: f64,
    pub arm_mass: f64,
    pub body_half_height: f64,
    pub torque_coeff: f64,
    pub thrust_coeff: f64,
    /// Optional explicit hinge positions; defaults to the body corners.
    #[serde(default)]
    pub motor_mount_offsets: Option<[[f64; 2]; 4]>,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<GeometryParams, MorphologyError> {
        let mut geom = GeometryParams::with_hinges_at_corners(
            self.arm_length,
            self.body_half_length,
            self.body_mass,
            self.arm_mass,
            self.body_half_height,
            self.torque_coeff,
            self.thrust_coeff,
        )?;
        if let Some(offsets) = self.motor_mount_offsets {
            for i in 0..4 {
                geom.motor_mount_offsets[i] = Vector2::new(offsets[i][0], offsets[i][1]);
            }
            let _ = ARM_SIGNS;
        }
        Ok(geom)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
    pub inflation_radius: f64,
}

/// Procedural obstacles or a point-cloud file.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ObstacleConfig {
    /// Solid axis-aligned box.
    #[serde(rename = "slab")]
    Slab { min: [f64; 3], max: [f64; 3] },
    /// Wall slab normal to `y` with an optional rectangular opening.
    #[serde(rename = "wall")]
    Wall {
        /// Center of the wall along y, m.
        position: f64,
        thickness: f64,
        /// Vertical extent of the wall: [z_min, z_max].
        z_range: [f64; 2],
        /// Optional opening: center (x, z) and full size (width, height).
        #[serde(default)]
        opening_center: Option<[f64; 2]>,
        #[serde(default)]
        opening_size: Option<[f64; 2]>,
    },
    /// Wall normal to `y` with a circular aperture.
    #[serde(rename = "circle")]
    CircleAperture {
        position: f64,
        thickness: f64,
        center: [f64; 2],
        inner_diameter: f64,
    },
    /// Tube along `y` with a circular bore.
    #[serde(rename = "pipe")]
    Pipe {
        start: f64,
        length: f64,
        center: [f64; 2],
        inner_diameter: f64,
        wall_thickness: f64,
    },
    /// Plain-text XYZ point cloud (one `x y z` triple per line, meters).
    #[serde(rename = "point_cloud")]
    PointCloud { path: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    pub v_max: f64,
    pub omega_max: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub time: f64,
    pub velocity: f64,
    pub omega: f64,
    pub collision: f64,
    pub samples_per_segment: usize,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            time: 20.0,
            velocity: 1e5,
            omega: 1e5,
            collision: 1e6,
            samples_per_segment: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Heuristic inflation of the weighted A* search.
    pub epsilon: f64,
    pub max_faces: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.5,
            max_faces: 12,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    pub enabled: bool,
    /// Clearance between body vertices and polytope faces when choosing
    /// arm angles, m.
    pub clearance: f64,
    pub ramp_duration: f64,
    pub max_rate: f64,
    /// Fraction of collective thrust lost at a full fold.
    pub thrust_loss: f64,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            clearance: 0.015,
            ramp_duration: 0.8,
            max_rate: 3.0,
            thrust_loss: 0.15,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DragConfig {
    pub linear: [f64; 3],
}

impl Default for DragConfig {
    fn default() -> Self {
        Self {
            linear: [0.3, 0.3, 0.1],
        }
    }
}

impl DragConfig {
    pub fn build(&self) -> DragParams {
        DragParams {
            linear: Vector3::new(self.linear[0], self.linear[1], self.linear[2]),
            ..DragParams::zero()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics and inner-loop control rate, Hz.
    pub control_rate: f64,
    /// The position loop runs every n-th control step.
    pub position_loop_divider: usize,
    /// Settling time appended after the trajectory ends, s.
    pub duration_padding: f64,
    /// Standard deviation of optional Gaussian state noise fed back to
    /// the controller (position / velocity / rate channels), m.
    pub noise_sigma: f64,
    pub max_rotor_thrust: f64,
    /// First-order servo time constant, s.
    pub servo_tau: f64,
    /// Servo slew limit, rad/s.
    pub servo_slew: f64,
    /// Goal tolerance for the success flag, m.
    pub goal_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_rate: 1000.0,
            position_loop_divider: 4,
            duration_padding: 2.0,
            noise_sigma: 0.0,
            max_rotor_thrust: 8.0,
            servo_tau: 0.08,
            servo_slew: 3.0,
            goal_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlsConfig {
    pub initial_slope: f64,
    pub initial_covariance: f64,
    pub forgetting: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            initial_slope: 1.0,
            initial_covariance: 100.0,
            forgetting: 0.995,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Circle radius, m.
    pub radius: f64,
    /// Height of the circle plane, m.
    pub height: f64,
    /// Laps flown at cruise speed.
    pub laps: f64,
    /// Period of the continuous morph oscillation, s.
    pub morph_period: f64,
    /// Amplitude of the per-arm oscillation around the X preset, rad.
    pub morph_amplitude: f64,
    /// Speed ramp-up duration, s.
    pub ramp_time: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            height: 1.0,
            laps: 2.0,
            morph_period: 4.0,
            morph_amplitude: std::f64::consts::FRAC_PI_8,
            ramp_time: 3.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    pub start: EndpointConfig,
    pub goal: EndpointConfig,
    pub limits: LimitsConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub morph: MorphConfig,
    #[serde(default)]
    pub drag: DragConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub rls: RlsConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| ScenarioError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    /// Parse and validate; the error string carries line/column info from
    /// the TOML parser.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| e.to_string())?;
        scenario.validate().map_err(|e| e.to_string())?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.geometry.build()?;
        if !(self.grid.resolution > 0.0) {
            return Err(ScenarioError::Invalid("grid.resolution must be positive".into()));
        }
        if self.grid.dims.iter().any(|&d| d == 0) {
            return Err(ScenarioError::Invalid("grid.dims must be nonzero".into()));
        }
        if !(self.limits.v_max > 0.0) || !(self.limits.omega_max > 0.0) {
            return Err(ScenarioError::Invalid("limits must be positive".into()));
        }
        for obstacle in &self.obstacles {
            match obstacle {
                ObstacleConfig::Slab { min, max } => {
                    if (0..3).any(|a| max[a] <= min[a]) {
                        return Err(ScenarioError::Invalid("slab max must exceed min".into()));
                    }
                }
                ObstacleConfig::Wall { thickness, .. } => {
                    if !(*thickness > 0.0) {
                        return Err(ScenarioError::Invalid("wall thickness must be positive".into()));
                    }
                }
                ObstacleConfig::CircleAperture { inner_diameter, thickness, .. } => {
                    if !(*inner_diameter > 0.0) || !(*thickness > 0.0) {
                        return Err(ScenarioError::Invalid(
                            "circle aperture dimensions must be positive".into(),
                        ));
                    }
                }
                ObstacleConfig::Pipe {
                    length,
                    inner_diameter,
                    wall_thickness,
                    ..
                } => {
                    if !(*length > 0.0) || !(*inner_diameter > 0.0) || !(*wall_thickness > 0.0) {
                        return Err(ScenarioError::Invalid("pipe dimensions must be positive".into()));
                    }
                }
                ObstacleConfig::PointCloud { .. } => {}
            }
        }
        Ok(())
    }

    pub fn start_position(&self) -> Vector3<f64> {
        Vector3::from(self.start.position)
    }

    pub fn goal_position(&self) -> Vector3<f64> {
        Vector3::from(self.goal.position)
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.sim.control_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
[geometry]
arm_length = 0.3
body_half_length = 0.2546
body_mass = 0.85
arm_mass = 0.1125
body_half_height = 0.05
torque_coeff = 0.016
thrust_coeff = 1.0
[grid]
origin = [-1.0, -1.0, 0.0]
resolution = 0.1
dims = [20, 20, 20]
inflation_radius = 0.15
[start]
position = [-0.5, 0.0, 1.0]
[goal]
position = [0.5, 0.0, 1.0]
[limits]
v_max = 1.0
omega_max = 3.0
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.name, "mini");
        assert_eq!(s.weights.samples_per_segment, 16);
        assert!(s.morph.enabled);
        assert_eq!(s.sim.position_loop_divider, 4);
        assert!((s.search.epsilon - 1.5).abs() < 1e-12);
    }

    #[test]
    fn parse_error_carries_location() {
        let bad = MINIMAL.replace("v_max = 1.0", "v_max = \"fast\"");
        let err = Scenario::from_toml(&bad).unwrap_err();
        assert!(err.contains("line"), "no location in: {err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MINIMAL}\n[limits2]\nfoo = 1\n");
        assert!(Scenario::from_toml(&bad).is_err());
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let bad = MINIMAL.replace("resolution = 0.1", "resolution = -0.1");
        assert!(Scenario::from_toml(&bad).is_err());
    }
}
