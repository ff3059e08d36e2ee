//! Synthetic two-person sawing demonstrations.
//!
//! Each person is written in their own body frame: `y` points forward from the
//! torso and `z` up. The wrists of the two people move in anti-phase along
//! `y`, so when one arm reaches forward the other pulls back. Shoulders are
//! nearly still. Elbows follow from two-link inverse kinematics, which makes
//! arm extension, and with it the stiffness ellipsoid, change over a stroke.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Person, PersonId, RawKeypoint, SkeletonFrame, SkeletonStream};

pub const UPPER_ARM_M: f64 = 0.32;
pub const FOREARM_M: f64 = 0.30;
/// middle of the wrist stroke; the arm is almost straight at the front end
pub const WRIST_CENTER_Y: f64 = 0.41;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDemoSpec {
    /// peak-to-peak wrist travel along `y`, m
    pub amplitude_m: f64,
    /// one push and one pull, s
    pub period_s: f64,
    pub n_cycles: usize,
    pub noise_std_m: f64,
    /// extra phase of the second person on top of the half-cycle lag, rad
    pub phase_offset_rad: f64,
    pub rate_hz: f64,
    pub confidence: f64,
}

impl Default for SyntheticDemoSpec {
    fn default() -> Self {
        Self {
            amplitude_m: 0.30,
            period_s: 4.0,
            n_cycles: 5,
            noise_std_m: 0.002,
            phase_offset_rad: 0.0,
            rate_hz: 20.0,
            confidence: 0.9,
        }
    }
}

impl SyntheticDemoSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if !(self.amplitude_m > 0.0 && self.amplitude_m <= 0.30) {
            return bad("amplitude_m must be in (0, 0.3]");
        }
        if !(self.period_s > 0.0 && self.rate_hz > 0.0) {
            return bad("period_s and rate_hz must be positive");
        }
        if self.n_cycles == 0 {
            return bad("n_cycles must be at least 1");
        }
        if !(self.noise_std_m >= 0.0 && self.phase_offset_rad.is_finite()) {
            return bad("noise_std_m must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad("confidence must be in [0, 1]");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.n_cycles as f64 * self.period_s * self.rate_hz).round() as usize
    }
}

/// Elbow of a two-link arm reaching from `shoulder` to `wrist`, on the side
/// of the swivel circle closest to `hint`.
pub fn elbow_ik(shoulder: &Vector3<f64>, wrist: &Vector3<f64>, hint: &Vector3<f64>) -> Vector3<f64> {
    let (a, b) = (UPPER_ARM_M, FOREARM_M);
    let d_vec = wrist - shoulder;
    let d = d_vec.norm().clamp((a - b).abs() + 1e-9, a + b - 1e-9);
    let axis = d_vec / d_vec.norm();
    let along = (a * a - b * b + d * d) / (2.0 * d);
    let radius = (a * a - along * along).max(0.0).sqrt();
    let perp = hint - axis * hint.dot(&axis);
    shoulder + axis * along + perp.normalize() * radius
}

/// Noise-free shoulder, elbow and wrist of one person at time `t`.
pub fn arm_pose(spec: &SyntheticDemoSpec, t: f64, phase: f64) -> [Vector3<f64>; 3] {
    let theta = 2.0 * PI * t / spec.period_s + phase;
    let shoulder = Vector3::new(0.18, 0.002 * theta.sin(), 1.40 + 0.001 * (2.0 * theta).sin());
    let half = spec.amplitude_m / 2.0;
    let wrist = Vector3::new(0.10, WRIST_CENTER_Y - half * theta.cos(), 1.20 - 0.01 * (2.0 * theta).cos());
    let elbow = elbow_ik(&shoulder, &wrist, &Vector3::new(0.5, 0.0, -1.0));
    [shoulder, elbow, wrist]
}

/// Skeleton stream with persons "A" and "B"; B lags A by half a cycle.
pub fn synth_skeleton(spec: &SyntheticDemoSpec, seed: u64) -> Result<SkeletonStream, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std_m).expect("validated std");
    let mut jitter = |p: Vector3<f64>| {
        if spec.noise_std_m > 0.0 {
            p + Vector3::from_fn(|_, _| noise.sample(&mut rng))
        } else {
            p
        }
    };
    let names = ["RShoulder", "RElbow", "RWrist"];
    let mut frames = Vec::with_capacity(spec.frame_count());
    for i in 0..spec.frame_count() {
        let t = i as f64 / spec.rate_hz;
        let mut persons = Vec::with_capacity(2);
        for (id, phase) in [("A", 0.0), ("B", PI + spec.phase_offset_rad)] {
            let joints = arm_pose(spec, t, phase);
            let mut keypoints = BTreeMap::new();
            for (name, p) in names.iter().zip(joints) {
                keypoints.insert((*name).to_owned(), RawKeypoint::point(jitter(p), spec.confidence));
            }
            keypoints.insert("Neck".to_owned(), RawKeypoint::point(jitter(Vector3::new(0.0, 0.0, 1.45)), spec.confidence));
            keypoints.insert("MidHip".to_owned(), RawKeypoint::point(jitter(Vector3::new(0.0, 0.0, 0.95)), spec.confidence));
            persons.push(Person {
                id: PersonId(id.to_owned()),
                keypoints,
            });
        }
        frames.push(SkeletonFrame { t, persons });
    }
    Ok(SkeletonStream { frames })
}
