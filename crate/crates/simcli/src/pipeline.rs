//! Map -> path -> corridor -> morph plan -> trajectory, with stage-tagged
//! errors so failures land in the report instead of panicking.

use std::collections::BTreeSet;
use std::path::Path;

use morphquad::corridor::{build_corridor_selective, Corridor, CorridorError};
use morphquad::dynamics::GRAVITY;
use morphquad::gridworld::{weighted_astar, GridError, GridPath, VoxelGrid};
use morphquad::morphology::GeometryParams;
use morphquad::optimizer::{
    plan, plan_morph, problem_for_corridor, MorphPlan, MorphScheduleOptions, OptimizerWeights,
    PlanError, PlanResult,
};
use morphquad::trajectory::{BoundaryState, EndpointState};

use crate::scenario::Scenario;
use crate::world::{build_grid, WorldError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("map stage: {0}")]
    Map(#[from] WorldError),
    #[error("search stage: {0}")]
    Search(#[from] GridError),
    #[error("corridor stage: {0}")]
    Corridor(#[from] CorridorError),
    #[error("plan stage: {0}")]
    Plan(#[from] PlanError),
}

/// Everything produced by the planning pipeline.
pub struct PlannedScenario {
    pub grid: VoxelGrid,
    pub path: GridPath,
    pub corridor: Corridor,
    pub morph: MorphPlan,
    pub geom: GeometryParams,
    pub result: PlanResult,
}

pub fn optimizer_weights(scenario: &Scenario) -> OptimizerWeights {
    OptimizerWeights {
        time_weight: scenario.weights.time,
        velocity_weight: scenario.weights.velocity,
        omega_weight: scenario.weights.omega,
        collision_weight: scenario.weights.collision,
        v_max: scenario.limits.v_max,
        omega_max: scenario.limits.omega_max,
        samples_per_segment: scenario.weights.samples_per_segment,
    }
}

pub fn schedule_options(scenario: &Scenario) -> MorphScheduleOptions {
    MorphScheduleOptions {
        ramp_duration: scenario.morph.ramp_duration,
        max_rate: scenario.morph.max_rate,
        ..Default::default()
    }
}

/// Run the full planning pipeline for a scenario file rooted at
/// `base_dir` (for point-cloud paths).
pub fn plan_scenario(scenario: &Scenario, base_dir: &Path) -> Result<PlannedScenario, PipelineError> {
    let geom = scenario
        .geometry
        .build()
        .expect("scenario was validated at load time");
    let grid = build_grid(scenario, base_dir)?;
    let start = scenario.start_position();
    let goal = scenario.goal_position();
    let path = weighted_astar(&grid, &start, &goal, scenario.search.epsilon)?;

    // corridor + morph plan, enabling corner cuts only where a plain box
    // cross-section turns out too small for any arm angle (round
    // apertures); rectangular openings keep clean boxes
    let mut cut_seeds: BTreeSet<usize> = BTreeSet::new();
    let (corridor, morph) = loop {
        let corridor = build_corridor_selective(&grid, &path, scenario.search.max_faces, &|i| {
            cut_seeds.contains(&i)
        })?;
        match plan_morph(&corridor, &geom, scenario.morph.clearance, scenario.morph.enabled) {
            Ok(morph) => break (corridor, morph),
            Err(PlanError::MorphInfeasible { polytope }) => {
                let newly: Vec<usize> = corridor
                    .assignment
                    .iter()
                    .enumerate()
                    .filter(|&(_, &p)| p == polytope)
                    .map(|(s, _)| s)
                    .collect();
                if newly.is_empty() || newly.iter().all(|s| cut_seeds.contains(s)) {
                    return Err(PlanError::MorphInfeasible { polytope }.into());
                }
                cut_seeds.extend(newly);
            }
            Err(e) => return Err(e.into()),
        }
    };
    let boundary = BoundaryState {
        start: EndpointState::at_rest(start),
        goal: EndpointState::at_rest(goal),
    };
    let weights = optimizer_weights(scenario);
    let problem = problem_for_corridor(
        &corridor,
        boundary,
        &geom,
        morph.clone(),
        GRAVITY,
        weights.v_max,
    );
    let result = plan(&problem, &weights, &schedule_options(scenario))?;
    Ok(PlannedScenario {
        grid,
        path,
        corridor,
        morph,
        geom,
        result,
    })
}
