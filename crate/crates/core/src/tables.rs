//! CSV tables exchanged between pipeline stages.

use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ArmFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("{0}: {1}")]
    Io(String, String),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

/// One arm frame: `t, sx,sy,sz, ex,ey,ez, wx,wy,wz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub t: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl From<&ArmFrame> for ArmRow {
    fn from(f: &ArmFrame) -> Self {
        Self {
            t: f.t,
            sx: f.shoulder.x,
            sy: f.shoulder.y,
            sz: f.shoulder.z,
            ex: f.elbow.x,
            ey: f.elbow.y,
            ez: f.elbow.z,
            wx: f.wrist.x,
            wy: f.wrist.y,
            wz: f.wrist.z,
        }
    }
}

impl From<ArmRow> for ArmFrame {
    fn from(r: ArmRow) -> Self {
        Self {
            t: r.t,
            shoulder: Vector3::new(r.sx, r.sy, r.sz),
            elbow: Vector3::new(r.ex, r.ey, r.ez),
            wrist: Vector3::new(r.wx, r.wy, r.wz),
        }
    }
}

/// Upper triangle of an endpoint stiffness plus the arm distances it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRow {
    pub t: f64,
    pub k11: f64,
    pub k12: f64,
    pub k13: f64,
    pub k22: f64,
    pub k23: f64,
    pub k33: f64,
    pub d1: f64,
    pub d2: f64,
}

impl StiffnessRow {
    pub fn upper(&self) -> [f64; 6] {
        [self.k11, self.k12, self.k13, self.k22, self.k23, self.k33]
    }
}

/// Wrist `(y, z)` and the Cholesky vector of the stiffness at that pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub y: f64,
    pub z: f64,
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
    pub l31: f64,
    pub l32: f64,
    pub l33: f64,
}

impl TrainingRow {
    pub fn new(pose: [f64; 2], chol: [f64; 6]) -> Self {
        Self {
            y: pose[0],
            z: pose[1],
            l11: chol[0],
            l21: chol[1],
            l22: chol[2],
            l31: chol[3],
            l32: chol[4],
            l33: chol[5],
        }
    }

    pub fn pose(&self) -> [f64; 2] {
        [self.y, self.z]
    }

    pub fn chol(&self) -> [f64; 6] {
        [self.l11, self.l21, self.l22, self.l31, self.l32, self.l33]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.pose().to_vec();
        v.extend_from_slice(&self.chol());
        v
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), TableError> {
    let io = |e: &dyn std::fmt::Display| TableError::Io(path.display().to_string(), e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TableError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TableError::Io(path.display().to_string(), e.to_string()))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| TableError::Parse {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_arm_csv(path: &Path, frames: &[ArmFrame]) -> Result<(), TableError> {
    write_csv(path, &frames.iter().map(ArmRow::from).collect::<Vec<_>>())
}

pub fn read_arm_csv(path: &Path) -> Result<Vec<ArmFrame>, TableError> {
    Ok(read_csv::<ArmRow>(path)?.into_iter().map(ArmFrame::from).collect())
}
