//! Skeleton ingestion: parsing, depth lifting, gap filling and resampling.

pub mod camera;
pub mod skeleton;
pub mod trajectory;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{deproject, lift_keypoint, CameraIntrinsics, DepthMap, Keypoint2D};
pub use skeleton::{
    extract_arm, lift_arm, DepthDir, DepthLifting, DepthSource, ObservedArmFrame, Observation, Person, PersonId,
    RawArmFrame, RawKeypoint, Side, SkeletonFrame, SkeletonStream, BODY_25,
};
pub use trajectory::{fill_gaps, resample_smooth, GapReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("depth {0} is not finite and positive")]
    NonFiniteDepth(f64),
    #[error("depth map has {got} values, expected {expected}")]
    DepthSize { expected: usize, got: usize },
    #[error("keypoint ({u}, {v}) lies outside the image")]
    OutOfImage { u: f64, v: f64 },
    #[error("no valid depth around keypoint ({u}, {v})")]
    AllNeighborsInvalid { u: f64, v: f64 },
    #[error("frame {0} has pixel keypoints but no depth source was given")]
    MissingDepth(usize),
    #[error("person '{0}' not found in skeleton stream")]
    PersonNotFound(PersonId),
    #[error("person '{0}' has no {1:?} arm keypoints")]
    SideKeypointsAbsent(PersonId, Side),
    #[error("no frames survive gap filling")]
    EmptyTrajectory,
    #[error("too few frames ({0})")]
    TooFewFrames(usize),
    #[error("smoothing window {0} must be odd and positive")]
    InvalidWindow(usize),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Shoulder, elbow and wrist of one arm at one instant, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmFrame {
    pub t: f64,
    pub shoulder: Vector3<f64>,
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
}

impl ArmFrame {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && [self.shoulder, self.elbow, self.wrist].iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            t: self.t,
            shoulder: f(&self.shoulder),
            elbow: f(&self.elbow),
            wrist: f(&self.wrist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub side: Side,
    pub conf_min: f64,
    pub max_gap: usize,
    /// moving-average width, odd
    pub smooth_window: usize,
    /// depth averaging neighborhood, pixels
    pub depth_window: usize,
    /// output length; 0 keeps the cleaned frame count
    pub samples_per_demo: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            side: Side::Right,
            conf_min: 0.3,
            max_gap: 5,
            smooth_window: 5,
            depth_window: 5,
            samples_per_demo: 0,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(IngestError::InvalidWindow(self.smooth_window));
        }
        if !(0.0..=1.0).contains(&self.conf_min) {
            return Err(IngestError::Parse(format!("conf_min {} outside [0, 1]", self.conf_min)));
        }
        if self.samples_per_demo == 1 {
            return Err(IngestError::TooFewFrames(1));
        }
        Ok(())
    }
}

/// Demonstrations grouped by subject; every demonstration of a subject has
/// the same number of samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoDataset {
    pub subjects: Vec<(String, Vec<Vec<ArmFrame>>)>,
    pub samples_per_demo: usize,
}

impl DemoDataset {
    pub fn new(subjects: Vec<(String, Vec<Vec<ArmFrame>>)>) -> Result<Self, IngestError> {
        let mut len = None;
        for demo in subjects.iter().flat_map(|(_, d)| d) {
            match len {
                None => len = Some(demo.len()),
                Some(n) if n != demo.len() => {
                    return Err(IngestError::Parse(format!(
                        "demonstrations differ in length ({n} vs {})",
                        demo.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            subjects,
            samples_per_demo: len.unwrap_or(0),
        })
    }
}

/// Extract, lift, clean and resample one arm of one person.
pub fn process_arm(
    stream: &SkeletonStream,
    person: &PersonId,
    depth: Option<&DepthLifting<'_>>,
    cfg: &IngestConfig,
) -> Result<(Vec<ArmFrame>, GapReport), IngestError> {
    cfg.validate()?;
    let raw = extract_arm(stream, person, cfg.side)?;
    let observed = lift_arm(&raw, depth)?;
    let (clean, report) = fill_gaps(&observed, cfg.max_gap, cfg.conf_min)?;
    let n = if cfg.samples_per_demo == 0 { clean.len() } else { cfg.samples_per_demo };
    let out = resample_smooth(&clean, n, cfg.smooth_window)?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_ragged_demos() {
        let f = ArmFrame {
            t: 0.0,
            shoulder: Vector3::zeros(),
            elbow: Vector3::x(),
            wrist: Vector3::y(),
        };
        let ok = DemoDataset::new(vec![("A".into(), vec![vec![f; 3], vec![f; 3]])]).unwrap();
        assert_eq!(ok.samples_per_demo, 3);
        assert!(DemoDataset::new(vec![("A".into(), vec![vec![f; 3]]), ("B".into(), vec![vec![f; 4]])]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IngestConfig::default().validate().is_ok());
        let bad = IngestConfig { smooth_window: 4, ..Default::default() };
        assert_eq!(bad.validate(), Err(IngestError::InvalidWindow(4)));
    }
}
