//! Rasterize procedural obstacles and point clouds into the voxel grid.

use std::path::Path;

use nalgebra::Vector3;

use morphquad::gridworld::VoxelGrid;

use crate::scenario::{ObstacleConfig, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("cannot read point cloud {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad point cloud line {line} in {path}: {message}")]
    BadPoint {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Grid(#[from] morphquad::gridworld::GridError),
}

/// Load a plain-text XYZ cloud: one `x y z` triple per line; blank lines
/// and `#` comments are skipped.
pub fn load_xyz(path: &Path) -> Result<Vec<Vector3<f64>>, WorldError> {
    let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = trimmed
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| WorldError::BadPoint {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if vals.len() != 3 {
            return Err(WorldError::BadPoint {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected 3 values, got {}", vals.len()),
            });
        }
        points.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(points)
}

fn inside_obstacle(obstacle: &ObstacleConfig, p: &Vector3<f64>) -> bool {
    match obstacle {
        ObstacleConfig::Slab { min, max } => {
            (0..3).all(|a| p[a] > min[a] && p[a] < max[a])
        }
        ObstacleConfig::Wall {
            position,
            thickness,
            z_range,
            opening_center,
            opening_size,
        } => {
            let in_wall = (p.y - position).abs() < thickness / 2.0
                && p.z > z_range[0]
                && p.z < z_range[1];
            if !in_wall {
                return false;
            }
            if let (Some(center), Some(size)) = (opening_center, opening_size) {
                let in_opening = (p.x - center[0]).abs() < size[0] / 2.0
                    && (p.z - center[1]).abs() < size[1] / 2.0;
                !in_opening
            } else {
                true
            }
        }
        ObstacleConfig::CircleAperture {
            position,
            thickness,
            center,
            inner_diameter,
        } => {
            if (p.y - position).abs() >= thickness / 2.0 {
                return false;
            }
            let dx = p.x - center[0];
            let dz = p.z - center[1];
            (dx * dx + dz * dz).sqrt() > inner_diameter / 2.0
        }
        ObstacleConfig::Pipe {
            start,
            length,
            center,
            inner_diameter,
            wall_thickness,
        } => {
            if p.y < *start || p.y > start + length {
                return false;
            }
            let dx = p.x - center[0];
            let dz = p.z - center[1];
            let rad = (dx * dx + dz * dz).sqrt();
            let inner = inner_diameter / 2.0;
            rad > inner && rad <= inner + wall_thickness
        }
        ObstacleConfig::PointCloud { .. } => false,
    }
}

/// Build the occupancy grid for a scenario: rasterize every procedural
/// obstacle, stamp point clouds, then inflate.
pub fn build_grid(scenario: &Scenario, base_dir: &Path) -> Result<VoxelGrid, WorldError> {
    let g = &scenario.grid;
    let mut grid = VoxelGrid::new(Vector3::from(g.origin), g.resolution, g.dims)?;
    for obstacle in &scenario.obstacles {
        match obstacle {
            ObstacleConfig::PointCloud { path } => {
                let full = base_dir.join(path);
                for p in load_xyz(&full)? {
                    grid.mark_occupied_world(&p);
                }
            }
            other => grid.rasterize(|p| inside_obstacle(other, p)),
        }
    }
    grid.inflate(g.inflation_radius);
    Ok(grid)
}
