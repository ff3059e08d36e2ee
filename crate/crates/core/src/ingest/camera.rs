//! Pinhole intrinsics and depth lifting of 2D keypoints.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// frames per second
    pub rate: f64,
}

impl Default for CameraIntrinsics {
    /// 640×480 at 20 Hz with a typical RGB-D focal length.
    fn default() -> Self {
        Self {
            fx: 615.0,
            fy: 615.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            rate: 20.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), IngestError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64
            && self.rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(IngestError::InvalidIntrinsics)
        }
    }

    /// Pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

pub fn deproject(kp: &Keypoint2D, depth: f64, intr: &CameraIntrinsics) -> Result<Vector3<f64>, IngestError> {
    if !depth.is_finite() || depth <= 0.0 {
        return Err(IngestError::NonFiniteDepth(depth));
    }
    Ok(Vector3::new(
        (kp.u - intr.cx) * depth / intr.fx,
        (kp.v - intr.cy) * depth / intr.fy,
        depth,
    ))
}

/// Row-major depth image in meters; NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, IngestError> {
        if data.len() != width * height {
            return Err(IngestError::DepthSize {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    /// Reads little-endian `f32` pixels; dimensions come from the intrinsics.
    pub fn read(path: &Path, intr: &CameraIntrinsics) -> Result<Self, IngestError> {
        let bytes = std::fs::read(path).map_err(|e| IngestError::Io(path.display().to_string(), e.to_string()))?;
        if bytes.len() % 4 != 0 {
            return Err(IngestError::DepthSize {
                expected: intr.width * intr.height * 4,
                got: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(intr.width, intr.height, data)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Deprojects a keypoint using the mean of the valid depths in a square
/// `window × window` neighborhood of its nearest pixel.
pub fn lift_keypoint(
    kp: &Keypoint2D,
    depth: &DepthMap,
    intr: &CameraIntrinsics,
    window: usize,
) -> Result<Vector3<f64>, IngestError> {
    let col = kp.u.round();
    let row = kp.v.round();
    if !(col >= 0.0 && row >= 0.0 && (col as usize) < depth.width && (row as usize) < depth.height) {
        return Err(IngestError::OutOfImage { u: kp.u, v: kp.v });
    }
    let (col, row) = (col as usize, row as usize);
    let half = window.max(1) / 2;
    let (c0, c1) = (col.saturating_sub(half), (col + half).min(depth.width - 1));
    let (r0, r1) = (row.saturating_sub(half), (row + half).min(depth.height - 1));
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let d = depth.get(c, r) as f64;
            if d.is_finite() && d > 0.0 {
                sum += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(IngestError::AllNeighborsInvalid { u: kp.u, v: kp.v });
    }
    deproject(kp, sum / count as f64, intr)
}
