//! Skeleton stream JSON and per-arm keypoint extraction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize};

use super::camera::{lift_keypoint, CameraIntrinsics, DepthMap, Keypoint2D};
use super::IngestError;

/// Keypoint names of the 25-point body model.
pub const BODY_25: [&str; 25] = [
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist", "MidHip", "RHip",
    "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye", "LEye", "REar", "LEar", "LBigToe", "LSmallToe",
    "LHeel", "RBigToe", "RSmallToe", "RHeel",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Shoulder, elbow and wrist keypoint names.
    pub fn joint_names(self) -> [&'static str; 3] {
        match self {
            Side::Right => ["RShoulder", "RElbow", "RWrist"],
            Side::Left => ["LShoulder", "LElbow", "LWrist"],
        }
    }
}

impl std::str::FromStr for Side {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(IngestError::Parse(format!("unknown side '{other}'"))),
        }
    }
}

fn default_confidence() -> f64 {
    1.0
}

/// A keypoint as stored in the skeleton file: either a 3D point or a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawKeypoint {
    Point {
        x: f64,
        y: f64,
        z: f64,
        #[serde(default = "default_confidence")]
        confidence: f64,
    },
    Pixel {
        u: f64,
        v: f64,
        confidence: f64,
    },
}

impl RawKeypoint {
    pub fn confidence(&self) -> f64 {
        match *self {
            RawKeypoint::Point { confidence, .. } | RawKeypoint::Pixel { confidence, .. } => confidence,
        }
    }

    pub fn point(p: Vector3<f64>, confidence: f64) -> Self {
        RawKeypoint::Point {
            x: p.x,
            y: p.y,
            z: p.z,
            confidence,
        }
    }
}

/// Person identifiers may be written as strings or integers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct PersonId(pub String);

impl<'de> Deserialize<'de> for PersonId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Str(String),
            Int(i64),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Str(s) => PersonId(s),
            Repr::Int(i) => PersonId(i.to_string()),
        })
    }
}

impl fmt::Display for PersonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PersonId {
    fn from(s: &str) -> Self {
        PersonId(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Person {
    pub id: PersonId,
    pub keypoints: BTreeMap<String, RawKeypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFrame {
    pub t: f64,
    pub persons: Vec<Person>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkeletonStream {
    pub frames: Vec<SkeletonFrame>,
}

impl SkeletonStream {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let stream: SkeletonStream = serde_json::from_str(text)
            .map_err(|e| IngestError::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        stream.validate()?;
        Ok(stream)
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| IngestError::Io(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serialization")
    }

    fn validate(&self) -> Result<(), IngestError> {
        for (i, frame) in self.frames.iter().enumerate() {
            if !frame.t.is_finite() {
                return Err(IngestError::Parse(format!("frame {i}: non-finite timestamp")));
            }
            if i > 0 && frame.t <= self.frames[i - 1].t {
                return Err(IngestError::Parse(format!("frame {i}: timestamps must be strictly increasing")));
            }
            for person in &frame.persons {
                if let Some(name) = person.keypoints.keys().find(|k| !BODY_25.contains(&k.as_str())) {
                    return Err(IngestError::Parse(format!(
                        "frame {i}, person {}: unknown keypoint '{name}'",
                        person.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn person_ids(&self) -> Vec<PersonId> {
        let mut ids: Vec<PersonId> = self
            .frames
            .iter()
            .flat_map(|f| f.persons.iter().map(|p| p.id.clone()))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Arm keypoints of one person in one frame, before lifting and cleaning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawArmFrame {
    pub frame_index: usize,
    pub t: f64,
    /// shoulder, elbow, wrist
    pub joints: [Option<RawKeypoint>; 3],
}

/// Shoulder/elbow/wrist of one arm of `person`, in stream order.
pub fn extract_arm(stream: &SkeletonStream, person: &PersonId, side: Side) -> Result<Vec<RawArmFrame>, IngestError> {
    let names = side.joint_names();
    let out: Vec<RawArmFrame> = stream
        .frames
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            f.persons.iter().find(|p| &p.id == person).map(|p| RawArmFrame {
                frame_index: i,
                t: f.t,
                joints: names.map(|n| p.keypoints.get(n).copied()),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(IngestError::PersonNotFound(person.clone()));
    }
    if out.iter().all(|f| f.joints.iter().all(Option::is_none)) {
        return Err(IngestError::SideKeypointsAbsent(person.clone(), side));
    }
    Ok(out)
}

/// A lifted joint position with its detection confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub position: Vector3<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedArmFrame {
    pub t: f64,
    pub joints: [Option<Observation>; 3],
}

/// Source of depth maps for pixel keypoints, indexed by stream frame.
pub trait DepthSource {
    fn depth(&self, frame_index: usize) -> Result<DepthMap, IngestError>;
}

/// Depth files named `frame_{index:06}.bin` inside a directory.
pub struct DepthDir<'a> {
    pub dir: &'a Path,
    pub intrinsics: &'a CameraIntrinsics,
}

impl DepthDir<'_> {
    pub fn file_name(frame_index: usize) -> String {
        format!("frame_{frame_index:06}.bin")
    }
}

impl DepthSource for DepthDir<'_> {
    fn depth(&self, frame_index: usize) -> Result<DepthMap, IngestError> {
        DepthMap::read(&self.dir.join(Self::file_name(frame_index)), self.intrinsics)
    }
}

pub struct DepthLifting<'a> {
    pub source: &'a dyn DepthSource,
    pub intrinsics: &'a CameraIntrinsics,
    pub window: usize,
}

/// Turns raw keypoints into 3D observations. Pixel keypoints are lifted with
/// the depth map of their frame; a pixel whose neighborhood has no valid depth
/// becomes a missing sample.
pub fn lift_arm(raw: &[RawArmFrame], depth: Option<&DepthLifting<'_>>) -> Result<Vec<ObservedArmFrame>, IngestError> {
    let mut out = Vec::with_capacity(raw.len());
    for f in raw {
        let needs_depth = f.joints.iter().flatten().any(|k| matches!(k, RawKeypoint::Pixel { .. }));
        let map = match (needs_depth, depth) {
            (false, _) => None,
            (true, Some(d)) => Some(d.source.depth(f.frame_index)?),
            (true, None) => return Err(IngestError::MissingDepth(f.frame_index)),
        };
        let mut joints = [None; 3];
        for (slot, kp) in joints.iter_mut().zip(&f.joints) {
            *slot = match *kp {
                None => None,
                Some(RawKeypoint::Point { x, y, z, confidence }) => Some(Observation {
                    position: Vector3::new(x, y, z),
                    confidence,
                }),
                Some(RawKeypoint::Pixel { u, v, confidence }) => {
                    let d = depth.expect("checked above");
                    let kp2 = Keypoint2D { u, v, confidence };
                    match lift_keypoint(&kp2, map.as_ref().expect("loaded"), d.intrinsics, d.window) {
                        Ok(position) => Some(Observation { position, confidence }),
                        Err(IngestError::AllNeighborsInvalid { .. }) | Err(IngestError::OutOfImage { .. }) => None,
                        Err(e) => return Err(e),
                    }
                }
            };
        }
        out.push(ObservedArmFrame { t: f.t, joints });
    }
    Ok(out)
}
