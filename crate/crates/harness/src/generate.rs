//! Seeded scenario generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use safempd_core::registry::{SystemParams, SystemRegistry};
use safempd_core::{Aabb, CostSpec, Goal, Obstacle, SafeSet, State};

use crate::error::{HarnessError, Result};
use crate::scenario_file::{ScenarioFile, ShieldSection, SCHEMA_VERSION};

/// Clearance `-g` required at the start and goal poses.
pub const ENDPOINT_CLEARANCE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Non-overlapping circles scattered between start and goal.
    Random,
    /// A walled passage whose axis is offset from the start–goal line.
    Corridor,
}

/// A family of generated scenarios in an experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedSuite {
    pub kind: GeneratorKind,
    pub system: String,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Obstacle count for the random generator.
    #[serde(default = "default_obstacles")]
    pub obstacles: usize,
}

fn default_obstacles() -> usize {
    8
}

impl GeneratedSuite {
    /// Scenario `i` uses seed `seed + i`.
    pub fn scenarios(&self) -> Result<Vec<ScenarioFile>> {
        (0..self.count as u64)
            .map(|i| generate(self.kind, self.seed + i, &self.system, self.obstacles))
            .collect()
    }
}

pub fn generate(kind: GeneratorKind, seed: u64, system: &str, obstacles: usize) -> Result<ScenarioFile> {
    match kind {
        GeneratorKind::Random => generate_random(seed, system, obstacles),
        GeneratorKind::Corridor => generate_corridor(seed, system),
    }
}

fn base_file(name: String, system: &str, world: Aabb, start_xy: [f64; 2], goal_xy: [f64; 2]) -> Result<ScenarioFile> {
    let registry = SystemRegistry::builtin();
    let params = SystemParams {
        id: system.into(),
        ..Default::default()
    };
    let bundle = registry
        .build(&params, &Default::default())
        .map_err(|e| HarnessError::core("generator", e))?;
    let mut start = vec![0.0; bundle.vehicle.state_dim()];
    start[..2].copy_from_slice(&start_xy);
    let articulated = bundle.vehicle.hitch_angle(&State::new(&start)).is_some();
    let goal = Goal {
        heading: articulated.then_some(0.0),
        ..Goal::at(goal_xy)
    };
    let cost = CostSpec {
        w_heading: if articulated { 5.0 } else { 0.0 },
        ..CostSpec::default()
    };
    Ok(ScenarioFile {
        schema: SCHEMA_VERSION,
        name,
        start,
        system: params,
        goal,
        world,
        shield: ShieldSection::default(),
        cost,
        obstacles: Vec::new(),
    })
}

/// Whether the start pose and the goal pose (at rest, start heading) both
/// keep `ENDPOINT_CLEARANCE` from every obstacle and the world boundary.
fn endpoints_clear(file: &ScenarioFile) -> Result<bool> {
    let loaded = file.clone().build(&SystemRegistry::builtin());
    let loaded = match loaded {
        Ok(l) => l,
        Err(HarnessError::Core { source: safempd_core::CoreError::UnsafeInitialState { .. }, .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    let s = &loaded.scenario;
    let mut at_goal = s.start.clone();
    at_goal[0] = s.goal.position[0];
    at_goal[1] = s.goal.position[1];
    Ok(s.margin(&s.start) <= -ENDPOINT_CLEARANCE && s.margin(&at_goal) <= -ENDPOINT_CLEARANCE)
}

/// `count` circles with radii in [0.4, 1.2] m, pairwise gaps of at least
/// 0.2 m, in a 20 m × 16 m world with start (−7, 0) and goal (7, 0).
pub fn generate_random(seed: u64, system: &str, count: usize) -> Result<ScenarioFile> {
    let world = Aabb { min: [-10.0, -8.0], max: [10.0, 8.0] };
    let mut file = base_file(format!("random_{system}_{seed}"), system, world, [-7.0, 0.0], [7.0, 0.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if file.obstacles.len() == count {
            break;
        }
        let center = [rng.random_range(-5.0..5.0), rng.random_range(-6.5..6.5)];
        let radius = rng.random_range(0.4..1.2);
        let overlaps = file.obstacles.iter().any(|o| match o {
            Obstacle::Circle { center: c, radius: r } => {
                (c[0] - center[0]).hypot(c[1] - center[1]) < r + radius + 0.2
            }
            Obstacle::Box { .. } => false,
        });
        if overlaps {
            continue;
        }
        file.obstacles.push(Obstacle::Circle { center, radius });
        if !endpoints_clear(&file)? {
            file.obstacles.pop();
        }
    }
    if file.obstacles.len() < count {
        return Err(HarnessError::Config(format!(
            "placed only {} of {count} obstacles for seed {seed}",
            file.obstacles.len()
        )));
    }
    Ok(file)
}

/// Narrow walled passage 6 m long between start (−7, 0) and goal (7, 0).
/// Its axis sits 1.0–1.3 m off the start–goal line, so the straight path
/// clips a wall corner, and it is 2.4–2.8 m wide.
pub fn generate_corridor(seed: u64, system: &str) -> Result<ScenarioFile> {
    let world = Aabb { min: [-10.0, -6.0], max: [10.0, 6.0] };
    let mut file = base_file(format!("corridor_{system}_{seed}"), system, world, [-7.0, 0.0], [7.0, 0.0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let axis = side * rng.random_range(1.0..1.3);
    let half_width = rng.random_range(1.2..1.4);
    file.obstacles = vec![
        Obstacle::Box { min: [-3.0, axis + half_width], max: [3.0, world.max[1]] },
        Obstacle::Box { min: [-3.0, world.min[1]], max: [3.0, axis - half_width] },
    ];
    if !endpoints_clear(&file)? {
        return Err(HarnessError::Config(format!("corridor seed {seed} blocks its endpoints")));
    }
    Ok(file)
}
