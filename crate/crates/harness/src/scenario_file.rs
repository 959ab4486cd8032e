//! TOML scenario files.
//!
//! ```toml
//! schema = 1
//! name = "di_default"
//! start = [-6.0, 0.0, 0.0, 0.0]
//!
//! [system]
//! id = "double_integrator"
//! v_max = 2.0
//!
//! [goal]
//! position = [6.0, 0.0]
//!
//! [world]
//! min = [-10.0, -10.0]
//! max = [10.0, 10.0]
//!
//! [[obstacles]]
//! kind = "circle"
//! center = [0.0, 0.0]
//! radius = 1.0
//! ```
//!
//! `[shield]` and `[cost]` are optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use safempd_core::registry::{BackupParams, SystemParams, SystemRegistry};
use safempd_core::{Aabb, BackupPolicy, CoreError, CostSpec, Goal, Obstacle, SafetySpec, Scenario, State};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Backup policy and safe-set settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tb: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_delta: Option<f64>,
    pub c_margin: f64,
    pub c_angle: f64,
    pub v_eps: f64,
    pub braking_envelope: bool,
}

impl Default for ShieldSection {
    fn default() -> Self {
        let s = SafetySpec::default();
        Self {
            tb: None,
            k_v: None,
            k_delta: None,
            c_margin: s.c_margin,
            c_angle: s.c_angle,
            v_eps: s.v_eps,
            braking_envelope: s.braking_envelope,
        }
    }
}

impl ShieldSection {
    pub fn backup(&self) -> BackupParams {
        BackupParams {
            tb: self.tb,
            k_v: self.k_v,
            k_delta: self.k_delta,
        }
    }

    pub fn safety(&self) -> SafetySpec {
        SafetySpec {
            c_margin: self.c_margin,
            c_angle: self.c_angle,
            v_eps: self.v_eps,
            braking_envelope: self.braking_envelope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub name: String,
    pub start: Vec<f64>,
    pub system: SystemParams,
    pub goal: Goal,
    pub world: Aabb,
    #[serde(default)]
    pub shield: ShieldSection,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

/// A validated scenario with the backup policy for its system.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub backup: BackupPolicy,
    pub file: ScenarioFile,
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.schema != SCHEMA_VERSION {
            return Err(HarnessError::Parse {
                path: origin.to_path_buf(),
                message: format!("schema: unsupported version {} (expected {SCHEMA_VERSION})", file.schema),
            });
        }
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Builds the system and checks geometry, parameters and the start state.
    pub fn build(self, registry: &SystemRegistry) -> Result<LoadedScenario> {
        let context = format!("scenario '{}'", self.name);
        let wrap = |e: CoreError| HarnessError::core(context.clone(), e);
        if !(self.world.min[0] < self.world.max[0] && self.world.min[1] < self.world.max[1]) {
            return Err(HarnessError::Config(format!("{context}: world.min must lie below world.max")));
        }
        let bundle = registry.build(&self.system, &self.shield.backup()).map_err(wrap)?;
        let scenario = Scenario {
            name: self.name.clone(),
            system: bundle.vehicle,
            obstacles: self.obstacles.clone(),
            start: State::new(&self.start),
            goal: self.goal.clone(),
            world: self.world,
            safety: self.shield.safety(),
            cost: self.cost.clone(),
        };
        scenario.validate().map_err(wrap)?;
        Ok(LoadedScenario {
            scenario,
            backup: bundle.backup,
            file: self,
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario> {
    load_scenario_with(path, &SystemRegistry::builtin())
}

pub fn load_scenario_with(path: impl AsRef<Path>, registry: &SystemRegistry) -> Result<LoadedScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ScenarioFile::parse(&text, path)?.build(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
name = "one_circle"
start = [-5.0, 0.0, 0.0, 0.0]

[system]
id = "double_integrator"

[goal]
position = [5.0, 0.0]

[world]
min = [-10.0, -10.0]
max = [10.0, 10.0]

[[obstacles]]
kind = "circle"
center = [0.0, 0.0]
radius = 1.0
"#;

    fn load(text: &str) -> Result<LoadedScenario> {
        ScenarioFile::parse(text, Path::new("test.toml"))?.build(&SystemRegistry::builtin())
    }

    #[test]
    fn minimal_file() {
        let s = load(MINIMAL).unwrap();
        assert_eq!(s.scenario.obstacles.len(), 1);
        assert_eq!(s.scenario.system.id(), "double_integrator");
        assert_eq!(s.scenario.goal.tolerance, 0.3);
        assert_eq!(s.backup.horizon, 15);
    }

    #[test]
    fn start_inside_obstacle() {
        let text = MINIMAL.replace("start = [-5.0", "start = [0.2");
        let err = load(&text).unwrap_err();
        assert!(matches!(
            err,
            HarnessError::Core { source: CoreError::UnsafeInitialState { .. }, .. }
        ));
    }

    #[test]
    fn negative_radius_is_named() {
        let err = load(&MINIMAL.replace("radius = 1.0", "radius = -1.0")).unwrap_err();
        assert!(err.to_string().contains("radius"), "{err}");
    }

    #[test]
    fn unknown_system() {
        let err = load(&MINIMAL.replace("double_integrator", "unicycle")).unwrap_err();
        assert!(matches!(err, HarnessError::Core { source: CoreError::Unknown { kind: "system", .. }, .. }));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = load(&MINIMAL.replace("[goal]\n", "[goal]\nspeed = 3\n")).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
        let err = load(&MINIMAL.replace("schema = 1", "schema = 7")).unwrap_err();
        assert!(err.to_string().contains("schema"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let s = load(MINIMAL).unwrap();
        let again = ScenarioFile::parse(&s.file.to_toml(), Path::new("again.toml")).unwrap();
        assert_eq!(again, s.file);
    }
}
