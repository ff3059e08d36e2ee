//! The single TOML file shared by all pipeline stages.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CameraIntrinsics, IngestConfig};
use crate::planner::PlannerConfig;
use crate::sim::SimConfig;
use crate::skill::SkillConfig;
use crate::stiffness::StiffnessParams;
use crate::synth::SyntheticDemoSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// skeleton JSON; the synthetic one in `out_dir` when absent
    pub skeleton: Option<PathBuf>,
    /// directory of `frame_NNNNNN.bin` depth maps for pixel keypoints
    pub depth_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            skeleton: None,
            depth_dir: None,
        }
    }
}

/// Parameters of the comparison runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `z` stiffness values of the tracking-error sweep, N/m
    pub kz_sweep: Vec<f64>,
    /// vertical feedforward of the stiffness sweep, N
    pub sweep_fz: f64,
    /// vertical feedforward values of the zero-`z`-stiffness runs, N
    pub zero_kz_forces: Vec<f64>,
    /// stiffness used on axes not being varied, N/m
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kz_sweep: vec![0.0, 200.0, 400.0, 800.0],
            sweep_fz: -10.0,
            zero_kz_forces: vec![-4.0, -8.0, -10.0],
            kx: 0.0,
            ky: 800.0,
            kz: 800.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// person ids; the first drives endpoint A, the second endpoint B
    pub subjects: Vec<String>,
    pub paths: PathsConfig,
    pub camera: CameraIntrinsics,
    pub synth: SyntheticDemoSpec,
    pub ingest: IngestConfig,
    pub stiffness: StiffnessParams,
    pub gmm: SkillConfig,
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub experiments: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            subjects: vec!["A".into(), "B".into()],
            paths: PathsConfig::default(),
            camera: CameraIntrinsics::default(),
            synth: SyntheticDemoSpec::default(),
            ingest: IngestConfig::default(),
            stiffness: StiffnessParams::default(),
            gmm: SkillConfig::default(),
            planner: PlannerConfig::default(),
            sim: SimConfig::default(),
            experiments: ExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_owned(),
            msg: e.to_string().trim_end().to_owned(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if self.subjects.is_empty() {
            return Err(ConfigError::Invalid("subjects must not be empty".into()));
        }
        if self.subjects.iter().collect::<BTreeSet<_>>().len() != self.subjects.len() {
            return Err(ConfigError::Invalid("subjects must be distinct".into()));
        }
        self.camera.validate().map_err(|e| invalid(&e))?;
        self.synth.validate().map_err(|e| invalid(&e))?;
        self.ingest.validate().map_err(|e| invalid(&e))?;
        self.stiffness.validate().map_err(|e| invalid(&e))?;
        let g = &self.gmm;
        if g.k == 0 || g.max_iter == 0 || !(g.tol >= 0.0) || !(g.reg >= 0.0) || !(g.delta_min > 0.0) || !(g.stiffness_limit >= 0.0) {
            return Err(ConfigError::Invalid(
                "gmm: need k >= 1, max_iter >= 1, tol >= 0, reg >= 0, delta_min > 0, stiffness_limit >= 0".into(),
            ));
        }
        self.planner.validate().map_err(|e| invalid(&e))?;
        self.sim.validate().map_err(|e| invalid(&e))?;
        let x = &self.experiments;
        let finite = |v: &[f64]| v.iter().all(|f| f.is_finite());
        if x.kz_sweep.is_empty() || !finite(&x.kz_sweep) || x.kz_sweep.iter().any(|k| *k < 0.0) {
            return Err(ConfigError::Invalid("experiments.kz_sweep must be non-empty and non-negative".into()));
        }
        if !finite(&x.zero_kz_forces) || ![x.sweep_fz, x.kx, x.ky, x.kz].iter().all(|v| v.is_finite()) {
            return Err(ConfigError::Invalid("experiments: values must be finite".into()));
        }
        if x.kx < 0.0 || x.ky < 0.0 || x.kz < 0.0 {
            return Err(ConfigError::Invalid("experiments: stiffness must be non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[gmm]\nk = 2\n[sim.endpoint_a]\nmass = 4.0\n", "mem").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.gmm.k, 2);
        assert_eq!(cfg.sim.endpoint_a.mass, 4.0);
        assert_eq!(cfg.sim.endpoint_b.mass, 5.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sede = 1\n", "[gmm]\nkk = 2\n", "[sim.coupling]\nmuu = 0.1\n", "[paths]\nout = \"x\"\n"] {
            let err = PipelineConfig::from_toml(text, "cfg.toml").unwrap_err();
            assert!(matches!(err, ConfigError::Parse { .. }), "{text}: {err}");
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.subjects = vec!["A".into(), "A".into()];
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.sim.dt_s = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.experiments.kz_sweep.clear();
        assert!(cfg.validate().is_err());
    }
}
