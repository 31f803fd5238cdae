//! Planning and control library for a four-arm morphing quadrotor.
//!
//! The crate covers the full pipeline needed to fly a shape-changing
//! quadrotor through restricted spaces:
//!
//! - [`morphology`]: arm-angle dependent geometry, inertia, and control
//!   allocation of the vehicle.
//! - [`dynamics`]: rigid-body dynamics with rotor drag and an RK4 stepper.
//! - [`gridworld`]: voxel occupancy maps and weighted A* path search.
//! - [`corridor`]: safe flight corridors as sequences of overlapping
//!   convex polytopes.
//! - [`trajectory`]: minimum-jerk piecewise-quintic trajectories
//!   parameterized by waypoints and segment times.
//! - [`flatness`]: differential-flatness map from flat outputs to
//!   attitude, body rates, and thrust, including rotor drag.
//! - [`optimizer`]: spatial-temporal trajectory optimization with
//!   full-body collision penalties and morph scheduling.
//! - [`controller`]: nonlinear cascaded tracking controller with online
//!   thrust-coefficient estimation, plus PID/LQR reference baselines.

pub mod banded;
pub mod controller;
pub mod corridor;
pub mod dynamics;
pub mod flatness;
pub mod gridworld;
pub mod lbfgs;
pub mod morphology;
pub mod optimizer;
pub mod trajectory;

pub use nalgebra;
