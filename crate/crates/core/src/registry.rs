//! Name-keyed lookup of vehicle models and candidate strategies, so
//! scenarios and command lines can select them at runtime.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{CandidateStrategy, Filtered, Penalty, Shielded, Vanilla};
use crate::error::{CoreError, Result};
use crate::shield::BackupPolicy;
use crate::systems::{AccelTractorTrailer, DoubleIntegrator2D, KinematicTractorTrailer, TrailerGeometry, Vehicle};

/// Vehicle parameters as written in a scenario file. Unset fields take the
/// model's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub id: String,
    pub dt: Option<f64>,
    pub a_max: Option<f64>,
    pub v_max: Option<f64>,
    pub omega_max: Option<f64>,
    pub radius: Option<f64>,
    pub wheelbase: Option<f64>,
    pub hitch_length: Option<f64>,
    pub delta_max: Option<f64>,
    pub jackknife_limit: Option<f64>,
    pub tractor_radius: Option<f64>,
    pub trailer_radius: Option<f64>,
}

/// Backup policy overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackupParams {
    /// Recovery budget `T_B` in steps.
    pub tb: Option<usize>,
    /// Speed feedback gain of the hold law; defaults to `1/dt`.
    pub k_v: Option<f64>,
    /// Steering feedback gain; defaults to `1/dt`.
    pub k_delta: Option<f64>,
}

pub const DEFAULT_DT: f64 = 0.1;
/// Steps added to the worst-case stopping time in the default `T_B`.
pub const BRAKING_SLACK: usize = 5;

fn positive(field: &str, value: Option<f64>, default: f64) -> Result<f64> {
    let v = value.unwrap_or(default);
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::Config(format!("system.{field} must be positive, got {v}")))
    }
}

fn non_negative(field: &str, value: Option<f64>, default: f64) -> Result<f64> {
    let v = value.unwrap_or(default);
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::Config(format!("system.{field} must be non-negative, got {v}")))
    }
}

fn backup_horizon(backup: &BackupParams, default: usize) -> Result<usize> {
    match backup.tb.unwrap_or(default) {
        0 => Err(CoreError::Config("shield.tb must be at least 1".into())),
        tb => Ok(tb),
    }
}

fn trailer_geometry(p: &SystemParams) -> Result<TrailerGeometry> {
    let d = TrailerGeometry::default();
    let geo = TrailerGeometry {
        wheelbase: positive("wheelbase", p.wheelbase, d.wheelbase)?,
        hitch_length: positive("hitch_length", p.hitch_length, d.hitch_length)?,
        v_max: positive("v_max", p.v_max, d.v_max)?,
        delta_max: positive("delta_max", p.delta_max, d.delta_max)?,
        jackknife_limit: positive("jackknife_limit", p.jackknife_limit, d.jackknife_limit)?,
        tractor_radius: non_negative("tractor_radius", p.tractor_radius, d.tractor_radius)?,
        trailer_radius: non_negative("trailer_radius", p.trailer_radius, d.trailer_radius)?,
    };
    if geo.delta_max >= std::f64::consts::FRAC_PI_2 {
        return Err(CoreError::Config(format!(
            "system.delta_max must be below pi/2, got {}",
            geo.delta_max
        )));
    }
    Ok(geo)
}

/// A vehicle with its default backup policy.
#[derive(Clone, Debug)]
pub struct SystemBundle {
    pub vehicle: Arc<dyn Vehicle>,
    pub backup: BackupPolicy,
}

impl std::fmt::Debug for dyn Vehicle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Vehicle({})", self.id())
    }
}

pub type SystemBuilder = fn(&SystemParams, &BackupParams) -> Result<SystemBundle>;

fn build_double_integrator(p: &SystemParams, b: &BackupParams) -> Result<SystemBundle> {
    let dt = positive("dt", p.dt, DEFAULT_DT)?;
    let a_max = positive("a_max", p.a_max, 2.0)?;
    let v_max = positive("v_max", p.v_max, 2.0)?;
    let radius = non_negative("radius", p.radius, 0.3)?;
    let model = DoubleIntegrator2D::new(dt, a_max, v_max).with_radius(radius);
    let k_v = positive("k_v", b.k_v, 1.0 / dt)?;
    let tb = backup_horizon(b, BackupPolicy::braking_horizon(v_max, a_max, dt, BRAKING_SLACK))?;
    let backup = BackupPolicy::double_integrator(&model, k_v, tb);
    Ok(SystemBundle {
        vehicle: Arc::new(model),
        backup,
    })
}

fn build_kinematic_tt(p: &SystemParams, b: &BackupParams) -> Result<SystemBundle> {
    let dt = positive("dt", p.dt, DEFAULT_DT)?;
    let model = KinematicTractorTrailer::new(dt, trailer_geometry(p)?);
    let backup = BackupPolicy::stop_in_place(2, backup_horizon(b, 1)?);
    Ok(SystemBundle {
        vehicle: Arc::new(model),
        backup,
    })
}

fn build_accel_tt(p: &SystemParams, b: &BackupParams) -> Result<SystemBundle> {
    let dt = positive("dt", p.dt, DEFAULT_DT)?;
    let a_max = positive("a_max", p.a_max, 2.0)?;
    let omega_max = positive("omega_max", p.omega_max, 1.0)?;
    let geo = trailer_geometry(p)?;
    let v_max = geo.v_max;
    let model = AccelTractorTrailer::new(dt, geo, a_max, omega_max);
    let k_v = positive("k_v", b.k_v, 1.0 / dt)?;
    let k_delta = positive("k_delta", b.k_delta, 1.0 / dt)?;
    let tb = backup_horizon(b, BackupPolicy::braking_horizon(v_max, a_max, dt, BRAKING_SLACK))?;
    let backup = BackupPolicy::accel_tractor_trailer(&model, k_v, k_delta, tb);
    Ok(SystemBundle {
        vehicle: Arc::new(model),
        backup,
    })
}

pub struct SystemRegistry {
    builders: BTreeMap<String, SystemBuilder>,
}

impl SystemRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// `double_integrator`, `kinematic_tt` and `accel_tt`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("double_integrator", build_double_integrator);
        r.register("kinematic_tt", build_kinematic_tt);
        r.register("accel_tt", build_accel_tt);
        r
    }

    pub fn register(&mut self, id: &str, builder: SystemBuilder) {
        self.builders.insert(id.to_owned(), builder);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, params: &SystemParams, backup: &BackupParams) -> Result<SystemBundle> {
        let builder = self.builders.get(&params.id).ok_or_else(|| CoreError::Unknown {
            kind: "system",
            name: params.id.clone(),
        })?;
        builder(params, backup)
    }
}

impl Default for SystemRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

pub struct StrategyRegistry {
    strategies: BTreeMap<String, Arc<dyn CandidateStrategy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: BTreeMap::new(),
        }
    }

    /// `shielded`, `vanilla`, `filtered` and `penalty`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Shielded));
        r.register(Arc::new(Vanilla));
        r.register(Arc::new(Filtered));
        r.register(Arc::new(Penalty));
        r
    }

    pub fn register(&mut self, strategy: Arc<dyn CandidateStrategy>) {
        self.strategies.insert(strategy.name().to_owned(), strategy);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn CandidateStrategy>> {
        self.strategies.get(name).cloned().ok_or_else(|| CoreError::Unknown {
            kind: "mode",
            name: name.to_owned(),
        })
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
