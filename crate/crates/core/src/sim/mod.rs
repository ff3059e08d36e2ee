//! Two impedance-controlled endpoints holding a saw against a block of wood.
//!
//! World frame: `y` is the sawing axis and `z` points up. Endpoint A sits at
//! the negative-`y` end of the saw and B at the positive end. The saw is an
//! axial spring between the endpoints; the wood touches the blade at
//! `y = wood_y` and its normal force is shared between the endpoints by the
//! lever rule, so a support point away from the middle of the saw loads the
//! nearer endpoint more.

mod dynamics;
mod log;
mod metrics;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{PlannerConfig, PlannerError};
use crate::skill::{SkillError, SkillFrame, SkillModel};

pub use dynamics::{
    clamp_stiffness, damping_matrix, environment_forces, impedance_force, run_sawing, step_dynamics, EndpointState,
    EnvironmentForces, SimState, Simulator,
};
pub use log::{EndpointSample, SimLog, StepRecord};
pub use metrics::{metrics, leader_score, AxisMetrics, RolePhase, SimMetrics, StrokeMetrics, TIE_ABS, TIE_REL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("tracking error of endpoint {endpoint} exceeded the bound at t = {t:.3} s")]
    InstabilityDetected { t: f64, endpoint: char, log: Box<SimLog> },
    #[error("non-finite state at t = {t:.3} s")]
    NonFiniteState { t: f64, log: Box<SimLog> },
    #[error("empty simulation log")]
    EmptyLog,
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Skill(#[from] SkillError),
}

impl SimError {
    /// The log recorded up to an abort, if any.
    pub fn partial_log(&self) -> Option<&SimLog> {
        match self {
            SimError::InstabilityDetected { log, .. } | SimError::NonFiniteState { log, .. } => Some(log),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SawCouplingConfig {
    /// axial stiffness of the saw, N/m
    pub k_couple: f64,
    /// unloaded distance between the endpoints, m
    pub rest_length: f64,
    pub mu: f64,
    /// vertical contact stiffness, N/m
    pub k_wood: f64,
    pub wood_top_z: f64,
    /// where along the sawing axis the blade rests on the wood
    pub wood_y: f64,
    /// velocity scale of the smoothed friction sign, m/s
    pub v_eps: f64,
}

impl Default for SawCouplingConfig {
    fn default() -> Self {
        Self {
            k_couple: 1e5,
            rest_length: 1.0,
            mu: 0.8,
            k_wood: 1e5,
            wood_top_z: 0.0,
            wood_y: 0.0,
            v_eps: 1e-3,
        }
    }
}

impl SawCouplingConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.k_couple > 0.0
            && self.k_wood > 0.0
            && self.mu >= 0.0
            && self.rest_length > 0.0
            && self.v_eps > 0.0
            && self.wood_top_z.is_finite()
            && self.wood_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("coupling: k_couple, k_wood, rest_length, v_eps must be positive and mu non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkillAxes {
    /// only the sawing-axis stiffness comes from the skill
    #[default]
    YOnly,
    Full,
}

/// How an endpoint obtains its stiffness, as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StiffnessSpec {
    /// diagonal `(kx, ky, kz)`, N/m
    Constant([f64; 3]),
    Model {
        path: PathBuf,
        #[serde(default)]
        axes: SkillAxes,
        /// fixed stiffness of the axes not taken from the skill
        #[serde(default)]
        kx: f64,
        #[serde(default = "default_kz")]
        kz: f64,
        /// mapping from world to skill coordinates; derived when absent
        #[serde(default)]
        frame: Option<SkillFrame>,
    },
}

fn default_kz() -> f64 {
    800.0
}

impl Default for StiffnessSpec {
    fn default() -> Self {
        StiffnessSpec::Constant([0.0, 800.0, 800.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub mass: f64,
    pub damping_ratio: f64,
    pub feedforward_force: [f64; 3],
    /// `[k_min, k_max]`, N/m
    pub stiffness_limits: [f64; 2],
    pub stiffness: StiffnessSpec,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            mass: 5.0,
            damping_ratio: 1.0,
            feedforward_force: [0.0, 0.0, -10.0],
            stiffness_limits: [0.0, 800.0],
            stiffness: StiffnessSpec::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self, name: &str) -> Result<(), SimError> {
        let [kmin, kmax] = self.stiffness_limits;
        if !(self.mass > 0.0 && self.damping_ratio > 0.0 && kmin >= 0.0 && kmax >= kmin) {
            return Err(SimError::InvalidConfig(format!(
                "endpoint {name}: need mass > 0, damping_ratio > 0, 0 <= k_min <= k_max"
            )));
        }
        if self.feedforward_force.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig(format!("endpoint {name}: non-finite feedforward force")));
        }
        if let StiffnessSpec::Constant(k) = &self.stiffness {
            if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(SimError::InvalidConfig(format!("endpoint {name}: constant stiffness must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub duration_s: f64,
    pub dt_s: f64,
    /// abort when any tracking error component exceeds this, m
    pub error_bound_m: f64,
    /// stiffness floor used for damping of soft axes, N/m
    pub k_floor: f64,
    /// endpoint B runs its stroke machine this much later, s
    pub phase_offset_s: f64,
    pub coupling: SawCouplingConfig,
    pub endpoint_a: EndpointConfig,
    pub endpoint_b: EndpointConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration_s: 12.0,
            dt_s: 1e-3,
            error_bound_m: 0.15,
            k_floor: 10.0,
            phase_offset_s: 0.0,
            coupling: SawCouplingConfig::default(),
            endpoint_a: EndpointConfig::default(),
            endpoint_b: EndpointConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0 && self.dt_s > 0.0 && self.dt_s <= self.duration_s) {
            return Err(SimError::InvalidConfig("need 0 < dt_s <= duration_s".into()));
        }
        if !(self.error_bound_m > 0.0 && self.k_floor >= 0.0 && self.phase_offset_s.is_finite()) {
            return Err(SimError::InvalidConfig("error_bound_m must be positive and k_floor non-negative".into()));
        }
        self.coupling.validate()?;
        self.endpoint_a.validate("a")?;
        self.endpoint_b.validate("b")
    }

    /// Resting centre of each endpoint's stroke.
    pub fn centers(&self, planner: &PlannerConfig) -> [Vector3<f64>; 2] {
        let half = planner.axis.unit() * (self.coupling.rest_length / 2.0);
        let base = Vector3::new(0.0, self.coupling.wood_y, planner.z_height_m);
        [base - half, base + half]
    }

    /// Builds the runtime setup, loading skill models through `load`.
    pub fn resolve(
        &self,
        planner: &PlannerConfig,
        mut load: impl FnMut(&Path) -> Result<Arc<SkillModel>, SkillError>,
    ) -> Result<SawingSetup, SimError> {
        self.validate()?;
        planner.validate()?;
        let centers = self.centers(planner);
        let mut endpoints = Vec::with_capacity(2);
        for (i, cfg) in [&self.endpoint_a, &self.endpoint_b].into_iter().enumerate() {
            let stiffness = match &cfg.stiffness {
                StiffnessSpec::Constant(k) => StiffnessSource::Constant(Matrix3::from_diagonal(&Vector3::from(*k))),
                StiffnessSpec::Model { path, axes, kx, kz, frame } => {
                    let model = load(path)?;
                    let frame = frame.unwrap_or_else(|| default_skill_frame(&model, centers[i], i == 1));
                    StiffnessSource::Skill {
                        model,
                        frame,
                        axes: *axes,
                        kx: *kx,
                        kz: *kz,
                    }
                }
            };
            endpoints.push(Endpoint {
                mass: cfg.mass,
                damping_ratio: cfg.damping_ratio,
                feedforward: Vector3::from(cfg.feedforward_force),
                limits: cfg.stiffness_limits,
                stiffness,
            });
        }
        let b = endpoints.pop().expect("two endpoints");
        let a = endpoints.pop().expect("two endpoints");
        Ok(SawingSetup {
            endpoints: [a, b],
            coupling: self.coupling,
            planner: *planner,
            duration: self.duration_s,
            dt: self.dt_s,
            error_bound: self.error_bound_m,
            k_floor: self.k_floor,
            phase_offset: self.phase_offset_s,
        })
    }
}

/// Skill frame whose origin maps the stroke centre onto the mean training
/// input. Endpoint B faces A, so its frame is turned half a turn about `z`.
pub fn default_skill_frame(model: &SkillModel, center: Vector3<f64>, facing_negative_y: bool) -> SkillFrame {
    let shift = &model.gmm().normalization().shift;
    let (my, mz) = (shift[0], shift[1]);
    let local = if facing_negative_y { Vector3::new(0.0, -my, mz) } else { Vector3::new(0.0, my, mz) };
    SkillFrame {
        origin: (center - local).into(),
        flip: facing_negative_y,
    }
}

#[derive(Debug, Clone)]
pub enum StiffnessSource {
    Constant(Matrix3<f64>),
    Skill {
        model: Arc<SkillModel>,
        frame: SkillFrame,
        axes: SkillAxes,
        kx: f64,
        kz: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub mass: f64,
    pub damping_ratio: f64,
    pub feedforward: Vector3<f64>,
    pub limits: [f64; 2],
    pub stiffness: StiffnessSource,
}

/// Everything a run needs, with models loaded.
#[derive(Debug, Clone)]
pub struct SawingSetup {
    pub endpoints: [Endpoint; 2],
    pub coupling: SawCouplingConfig,
    pub planner: PlannerConfig,
    pub duration: f64,
    pub dt: f64,
    pub error_bound: f64,
    pub k_floor: f64,
    pub phase_offset: f64,
}

impl SawingSetup {
    /// Setup with constant diagonal stiffness on both endpoints and no skills.
    pub fn constant(cfg: &SimConfig, planner: &PlannerConfig) -> Result<Self, SimError> {
        cfg.resolve(planner, |p| {
            Err(SkillError::Io(p.display().to_string(), "model sources are not allowed here".into()))
        })
    }
}
