//! Stiffness skills: a mixture over wrist `(y, z)` and Cholesky-vectorized
//! stiffness, queried by regression.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{em_fit, EmConfig, GaussianComponent, GmmError, GmmModel, Normalization, TrainReport};
use crate::ingest::ArmFrame;
use crate::spd::{decode_checked, encode, SpdError, DEFAULT_DELTA_MIN};
use crate::stiffness::{endpoint_stiffness, StiffnessError, StiffnessMatrix, StiffnessParams};
use crate::tables::TrainingRow;

pub const MODEL_VERSION: u32 = 1;
pub const DIM_I: usize = 2;
pub const DIM_O: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Stiffness(#[from] StiffnessError),
    #[error("no usable training samples")]
    NoSamples,
    #[error("all {0} frames are singular")]
    AllFramesSingular(usize),
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("{0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkillConfig {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
    pub delta_min: f64,
    /// Largest eigenvalue over the training poses after scaling, N/m. Zero
    /// leaves the regression output unscaled.
    pub stiffness_limit: f64,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            k: 5,
            tol: 1e-6,
            max_iter: 300,
            reg: 1e-6,
            delta_min: DEFAULT_DELTA_MIN,
            stiffness_limit: 800.0,
        }
    }
}

impl SkillConfig {
    pub fn em(&self, seed: u64) -> EmConfig {
        EmConfig {
            k: self.k,
            seed,
            tol: self.tol,
            max_iter: self.max_iter,
            reg: self.reg,
            ..EmConfig::default()
        }
    }
}

/// Endpoint stiffness of every frame paired with the wrist `(y, z)`.
/// Singular frames are skipped; their count is returned.
pub fn extract_training(frames: &[ArmFrame], params: &StiffnessParams) -> Result<(Vec<TrainingRow>, Vec<(f64, StiffnessMatrix)>, usize), SkillError> {
    params.validate()?;
    let mut rows = Vec::with_capacity(frames.len());
    let mut stiffness = Vec::with_capacity(frames.len());
    let mut skipped = 0;
    for f in frames {
        match endpoint_stiffness(f, params) {
            Ok(k) => {
                rows.push(TrainingRow::new([f.wrist.y, f.wrist.z], encode(&k)?.0));
                stiffness.push((f.t, k));
            }
            Err(StiffnessError::SingularConfiguration(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if rows.is_empty() {
        return Err(if frames.is_empty() { SkillError::NoSamples } else { SkillError::AllFramesSingular(frames.len()) });
    }
    Ok((rows, stiffness, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillModel {
    gmm: GmmModel,
    output_scale: f64,
    delta_min: f64,
    seed: u64,
}

/// Result of a single skill query.
#[derive(Debug, Clone, Copy)]
pub struct Reproduction {
    pub stiffness: StiffnessMatrix,
    /// a Cholesky diagonal entry was raised to `delta_min`
    pub clamped: bool,
}

impl SkillModel {
    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    /// Regression output before the output scale is applied.
    pub fn reproduce_unscaled(&self, pose: [f64; 2]) -> Result<Reproduction, SkillError> {
        if pose.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite(0).into());
        }
        let v = self.gmm.predict(&DVector::from_column_slice(&pose))?;
        let arr: [f64; 6] = std::array::from_fn(|i| v[i]);
        let d = decode_checked(&arr, self.delta_min)?;
        Ok(Reproduction {
            stiffness: d.stiffness,
            clamped: d.clamped,
        })
    }

    pub fn reproduce(&self, pose: [f64; 2]) -> Result<Reproduction, SkillError> {
        let r = self.reproduce_unscaled(pose)?;
        if r.clamped {
            log::warn!("Cholesky diagonal clamped to {} at pose ({}, {})", self.delta_min, pose[0], pose[1]);
        }
        Ok(Reproduction {
            stiffness: r.stiffness.scaled(self.output_scale),
            clamped: r.clamped,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_VERSION,
            dim_i: self.gmm.dim_i(),
            dim_o: self.gmm.dim_o(),
            normalization: self.gmm.normalization().clone(),
            components: self.gmm.components().to_vec(),
            a_cc: self.output_scale,
            seed: self.seed,
            k: self.gmm.k(),
            delta_min: self.delta_min,
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self, SkillError> {
        if f.version != MODEL_VERSION {
            return Err(SkillError::UnsupportedVersion(f.version));
        }
        if f.dim_i != DIM_I || f.dim_o != DIM_O {
            return Err(SkillError::InvalidModel(format!("expected {DIM_I}+{DIM_O} dimensions, got {}+{}", f.dim_i, f.dim_o)));
        }
        if f.k != f.components.len() {
            return Err(SkillError::InvalidModel(format!("K = {} but {} components", f.k, f.components.len())));
        }
        if !(f.a_cc > 0.0 && f.a_cc.is_finite() && f.delta_min > 0.0) {
            return Err(SkillError::InvalidModel("a_cc and delta_min must be positive".into()));
        }
        let gmm = GmmModel::new(f.components, f.dim_i, f.dim_o, f.normalization)?;
        Ok(Self {
            gmm,
            output_scale: f.a_cc,
            delta_min: f.delta_min,
            seed: f.seed,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("model serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SkillError> {
        let f: ModelFile = serde_json::from_str(text).map_err(|e| SkillError::InvalidModel(e.to_string()))?;
        Self::from_file(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), SkillError> {
        std::fs::write(path, self.to_json()).map_err(|e| SkillError::Io(path.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SkillError> {
        let text = std::fs::read_to_string(path).map_err(|e| SkillError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }
}

/// On-disk form of a [`SkillModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    #[serde(rename = "dim_I")]
    pub dim_i: usize,
    #[serde(rename = "dim_O")]
    pub dim_o: usize,
    pub normalization: Normalization,
    pub components: Vec<GaussianComponent>,
    /// output scale, N/m per regression unit
    pub a_cc: f64,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta_min: f64,
}

/// Fits a skill on `(y, z, l11 … l33)` rows. All eight dimensions are
/// standardized before EM.
pub fn learn_stiffness_skill(rows: &[TrainingRow], cfg: &SkillConfig, seed: u64) -> Result<(SkillModel, TrainReport), SkillError> {
    if rows.is_empty() {
        return Err(SkillError::NoSamples);
    }
    let raw: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_vec(r.to_vec())).collect();
    let norm = Normalization::fit(&raw);
    let data: Vec<DVector<f64>> = raw.iter().map(|x| norm.standardize(x)).collect();
    let (gmm, report) = em_fit(&data, &cfg.em(seed))?;
    let gmm = gmm.with_normalization(norm)?.with_blocks(DIM_I, DIM_O)?;
    let mut skill = SkillModel {
        gmm,
        output_scale: 1.0,
        delta_min: cfg.delta_min,
        seed,
    };
    if cfg.stiffness_limit > 0.0 {
        let mut peak = 0.0f64;
        for r in rows {
            peak = peak.max(skill.reproduce_unscaled(r.pose())?.stiffness.max_eigenvalue());
        }
        skill.output_scale = cfg.stiffness_limit / peak;
    }
    Ok((skill, report))
}

/// Convenience wrapper: scaled stiffness at a wrist pose.
pub fn reproduce_cds(skill: &SkillModel, pose: [f64; 2]) -> Result<StiffnessMatrix, SkillError> {
    skill.reproduce(pose).map(|r| r.stiffness)
}

/// Maps simulator positions into the frame a skill was trained in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillFrame {
    /// world position of the skill frame origin
    pub origin: [f64; 3],
    /// skill axes are world axes rotated half a turn about z
    pub flip: bool,
}

impl Default for SkillFrame {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            flip: false,
        }
    }
}

impl SkillFrame {
    fn rotate(&self, v: Vector3<f64>) -> Vector3<f64> {
        if self.flip {
            Vector3::new(-v.x, -v.y, v.z)
        } else {
            v
        }
    }

    pub fn to_skill(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotate(world - Vector3::from(self.origin))
    }

    /// Re-expresses a skill-frame stiffness in world axes.
    pub fn stiffness_to_world(&self, k: &StiffnessMatrix) -> StiffnessMatrix {
        if !self.flip {
            return *k;
        }
        let r = nalgebra::Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        StiffnessMatrix::from_spd_unchecked(r * k.matrix() * r)
    }
}
