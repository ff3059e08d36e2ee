//! Rest-to-rest quintic segments and the push/pull stroke state machine.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("segment duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

/// `s(t) = x0 + (xT − x0)(10τ³ − 15τ⁴ + 6τ⁵)` with `τ = t / T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticSegment {
    pub x0: Vector3<f64>,
    pub xt: Vector3<f64>,
    pub duration: f64,
    /// per axis, `a0 … a5` of the polynomial in `t`
    pub coefficients: [[f64; 6]; 3],
}

/// Ratio of peak speed to mean speed over a segment.
pub const PEAK_VELOCITY_FACTOR: f64 = 15.0 / 8.0;

impl QuinticSegment {
    pub fn new(x0: Vector3<f64>, xt: Vector3<f64>, duration: f64) -> Result<Self, PlannerError> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(PlannerError::NonPositiveDuration(duration));
        }
        let t = duration;
        let coefficients = std::array::from_fn(|i| {
            let d = xt[i] - x0[i];
            [x0[i], 0.0, 0.0, 10.0 * d / t.powi(3), -15.0 * d / t.powi(4), 6.0 * d / t.powi(5)]
        });
        Ok(Self { x0, xt, duration, coefficients })
    }

    fn tau(&self, t: f64) -> f64 {
        (t / self.duration).clamp(0.0, 1.0)
    }

    /// Blend weight `10τ³ − 15τ⁴ + 6τ⁵`.
    fn blend(tau: f64) -> f64 {
        tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        // written as a convex blend so both end points and the midpoint are exact
        let p = Self::blend(self.tau(t));
        self.x0 * (1.0 - p) + self.xt * p
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let tau = self.tau(t);
        let dp = 30.0 * tau * tau * (1.0 + tau * (-2.0 + tau));
        (self.xt - self.x0) * (dp / self.duration)
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        let tau = self.tau(t);
        let ddp = 60.0 * tau * (1.0 + tau * (-3.0 + 2.0 * tau));
        (self.xt - self.x0) * (ddp / (self.duration * self.duration))
    }
}

pub fn quintic(x0: Vector3<f64>, xt: Vector3<f64>, duration: f64) -> Result<QuinticSegment, PlannerError> {
    QuinticSegment::new(x0, xt, duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeDirection {
    /// from the first waypoint to the second
    Forward,
    Backward,
}

impl StrokeDirection {
    pub fn flipped(self) -> Self {
        match self {
            StrokeDirection::Forward => StrokeDirection::Backward,
            StrokeDirection::Backward => StrokeDirection::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub stroke_length_m: f64,
    /// seconds per stroke
    pub period_s: f64,
    pub axis: Axis,
    /// desired height of both endpoints
    pub z_height_m: f64,
    /// shifts the first endpoint's goals along the stroke axis
    pub goal_offset_m: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            stroke_length_m: 0.30,
            period_s: 2.0,
            axis: Axis::Y,
            z_height_m: 0.0,
            goal_offset_m: 0.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if !(self.stroke_length_m > 0.0) {
            return Err(PlannerError::InvalidConfig(format!("stroke_length_m = {}", self.stroke_length_m)));
        }
        if !(self.period_s > 0.0) {
            return Err(PlannerError::NonPositiveDuration(self.period_s));
        }
        if !self.z_height_m.is_finite() || !self.goal_offset_m.is_finite() {
            return Err(PlannerError::InvalidConfig("non-finite height or offset".into()));
        }
        Ok(())
    }

    /// Stroke end points around `center`.
    pub fn waypoints(&self, center: Vector3<f64>) -> [Vector3<f64>; 2] {
        let half = self.axis.unit() * (self.stroke_length_m / 2.0);
        [center - half, center + half]
    }
}

/// Alternating strokes between two waypoints. Time may be shifted so a
/// second machine can run with a phase lag.
#[derive(Debug, Clone, PartialEq)]
pub struct SawFsm {
    pub waypoints: [Vector3<f64>; 2],
    pub period: f64,
    pub state: StrokeDirection,
    pub stroke_count: u64,
    pub segment: QuinticSegment,
    initial: StrokeDirection,
    time_shift: f64,
    segment_start: f64,
}

impl SawFsm {
    pub fn new(waypoints: [Vector3<f64>; 2], period: f64, initial: StrokeDirection) -> Result<Self, PlannerError> {
        if waypoints[0] == waypoints[1] {
            return Err(PlannerError::InvalidConfig("waypoints coincide".into()));
        }
        let segment = Self::segment_for(&waypoints, initial, period)?;
        Ok(Self {
            waypoints,
            period,
            state: initial,
            stroke_count: 0,
            segment,
            initial,
            time_shift: 0.0,
            segment_start: 0.0,
        })
    }

    /// Queries at `t` evaluate the machine at `t − shift`; before the shifted
    /// start the machine rests at its first waypoint.
    pub fn with_time_shift(mut self, shift: f64) -> Self {
        self.time_shift = shift;
        self
    }

    fn segment_for(w: &[Vector3<f64>; 2], dir: StrokeDirection, period: f64) -> Result<QuinticSegment, PlannerError> {
        match dir {
            StrokeDirection::Forward => QuinticSegment::new(w[0], w[1], period),
            StrokeDirection::Backward => QuinticSegment::new(w[1], w[0], period),
        }
    }

    pub fn initial_direction(&self) -> StrokeDirection {
        self.initial
    }

    /// Desired position and velocity at time `t`; `t` must not decrease
    /// between calls.
    pub fn step(&mut self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let local = t - self.time_shift;
        if local < 0.0 {
            return (self.segment.x0, Vector3::zeros());
        }
        while local >= self.segment_start + self.period {
            self.stroke_count += 1;
            self.segment_start = self.stroke_count as f64 * self.period;
            self.state = self.state.flipped();
            self.segment = Self::segment_for(&self.waypoints, self.state, self.period).expect("period validated");
        }
        let s = local - self.segment_start;
        (self.segment.position(s), self.segment.velocity(s))
    }
}
