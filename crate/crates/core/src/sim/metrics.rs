//! Tracking-error, force and role-allocation summaries of a run.

use serde::{Deserialize, Serialize};

use super::log::{SimLog, StepRecord};
use super::SimError;

/// Force magnitudes closer than this (relative to the larger) are a tie.
pub const TIE_REL: f64 = 0.05;
/// Force magnitudes closer than this many newtons are a tie.
pub const TIE_ABS: f64 = 0.05;

/// 1 when A pushes harder along the sawing axis, 0 when B does, ½ on a tie.
pub fn leader_score(fy_a: f64, fy_b: f64) -> f64 {
    let (a, b) = (fy_a.abs(), fy_b.abs());
    if (a - b).abs() <= TIE_ABS.max(TIE_REL * a.max(b)) {
        0.5
    } else if a > b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisMetrics {
    /// per axis x, y, z
    pub max_abs_e: [f64; 3],
    pub rms_e: [f64; 3],
    pub max_abs_f: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeMetrics {
    pub index: u64,
    pub t_start: f64,
    pub t_end: f64,
    /// endpoints A, B
    pub mean_abs_fy: [f64; 2],
    pub mean_k_y: [f64; 2],
    pub leader_fraction_a: f64,
}

/// Window of one stroke period centred on a stroke reversal of A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolePhase {
    pub t_center: f64,
    pub mean_k_y: [f64; 2],
    pub mean_abs_fy: [f64; 2],
    pub leader_fraction_a: f64,
    /// "A" or "B", by mean sawing-axis stiffness
    pub stiffer: String,
    pub stiffer_leader_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub steps: usize,
    pub duration_s: f64,
    /// set when the run was stopped by the tracking-error bound
    pub aborted_at_s: Option<f64>,
    pub endpoint_a: AxisMetrics,
    pub endpoint_b: AxisMetrics,
    pub max_abs_ez: f64,
    pub strokes: Vec<StrokeMetrics>,
    pub role_phases: Vec<RolePhase>,
    pub min_stiffer_leader_fraction: Option<f64>,
    /// the stiffer endpoint changes from each role phase to the next
    pub leader_alternates: bool,
}

fn axis_metrics(records: &[StepRecord], i: usize) -> AxisMetrics {
    let mut m = AxisMetrics {
        max_abs_e: [0.0; 3],
        rms_e: [0.0; 3],
        max_abs_f: [0.0; 3],
    };
    for r in records {
        let s = &r.endpoints[i];
        for a in 0..3 {
            m.max_abs_e[a] = m.max_abs_e[a].max(s.e[a].abs());
            m.max_abs_f[a] = m.max_abs_f[a].max(s.f_ctrl[a].abs());
            m.rms_e[a] += s.e[a] * s.e[a];
        }
    }
    let n = records.len() as f64;
    m.rms_e = m.rms_e.map(|v| (v / n).sqrt());
    m
}

struct Window {
    mean_abs_fy: [f64; 2],
    mean_k_y: [f64; 2],
    leader_fraction_a: f64,
}

fn window(records: &[StepRecord]) -> Window {
    let n = records.len() as f64;
    let mut w = Window {
        mean_abs_fy: [0.0; 2],
        mean_k_y: [0.0; 2],
        leader_fraction_a: 0.0,
    };
    for r in records {
        for i in 0..2 {
            w.mean_abs_fy[i] += r.endpoints[i].f_ctrl.y.abs() / n;
            w.mean_k_y[i] += r.endpoints[i].k_diag.y / n;
        }
        w.leader_fraction_a += leader_score(r.endpoints[0].f_ctrl.y, r.endpoints[1].f_ctrl.y) / n;
    }
    w
}

pub fn metrics(log: &SimLog) -> Result<SimMetrics, SimError> {
    let records = &log.records;
    let last = records.last().ok_or(SimError::EmptyLog)?;
    let full_len = (log.period / log.dt).round() as usize;

    let mut strokes = Vec::new();
    for group in records.chunk_by(|a, b| a.stroke[0] == b.stroke[0]) {
        if group.len() + 1 < full_len {
            continue;
        }
        let w = window(group);
        strokes.push(StrokeMetrics {
            index: group[0].stroke[0],
            t_start: group[0].t,
            t_end: group[group.len() - 1].t + log.dt,
            mean_abs_fy: w.mean_abs_fy,
            mean_k_y: w.mean_k_y,
            leader_fraction_a: w.leader_fraction_a,
        });
    }

    let mut role_phases = Vec::new();
    let t_end = last.t + log.dt;
    let mut k = 1u64;
    loop {
        let center = k as f64 * log.period;
        let (lo, hi) = (center - log.period / 2.0, center + log.period / 2.0);
        if hi > t_end + log.dt / 2.0 {
            break;
        }
        let start = records.partition_point(|r| r.t < lo - log.dt / 2.0);
        let end = records.partition_point(|r| r.t < hi - log.dt / 2.0);
        let w = window(&records[start..end]);
        let a_stiffer = w.mean_k_y[0] >= w.mean_k_y[1];
        role_phases.push(RolePhase {
            t_center: center,
            mean_k_y: w.mean_k_y,
            mean_abs_fy: w.mean_abs_fy,
            leader_fraction_a: w.leader_fraction_a,
            stiffer: if a_stiffer { "A" } else { "B" }.to_owned(),
            stiffer_leader_fraction: if a_stiffer { w.leader_fraction_a } else { 1.0 - w.leader_fraction_a },
        });
        k += 1;
    }
    let leader_alternates = role_phases.len() >= 2 && role_phases.windows(2).all(|p| p[0].stiffer != p[1].stiffer);
    let min_stiffer_leader_fraction = role_phases.iter().map(|p| p.stiffer_leader_fraction).reduce(f64::min);

    let endpoint_a = axis_metrics(records, 0);
    let endpoint_b = axis_metrics(records, 1);
    Ok(SimMetrics {
        steps: records.len(),
        duration_s: t_end,
        aborted_at_s: None,
        max_abs_ez: endpoint_a.max_abs_e[2].max(endpoint_b.max_abs_e[2]),
        endpoint_a,
        endpoint_b,
        strokes,
        role_phases,
        min_stiffer_leader_fraction,
        leader_alternates,
    })
}

#[cfg(test)]
mod tests {
    use super::super::log::EndpointSample;
    use super::*;
    use crate::planner::StrokeDirection;
    use nalgebra::Vector3;

    fn log_with(n: usize, f: impl Fn(usize) -> [EndpointSample; 2]) -> SimLog {
        let mut log = SimLog::new(0.01, 1.0, 0.0);
        for i in 0..n {
            log.records.push(StepRecord {
                t: i as f64 * 0.01,
                stroke: [(i / 100) as u64; 2],
                direction: [StrokeDirection::Forward; 2],
                endpoints: f(i),
            });
        }
        log
    }

    #[test]
    fn constant_error() {
        let s = EndpointSample { e: Vector3::new(0.0, 0.0, 0.02), ..Default::default() };
        let m = metrics(&log_with(50, |_| [s, s])).unwrap();
        assert_eq!(m.endpoint_a.max_abs_e[2], 0.02);
        assert!((m.endpoint_a.rms_e[2] - 0.02).abs() < 1e-15);
        assert_eq!(m.max_abs_ez, 0.02);
    }

    #[test]
    fn symmetric_endpoints_tie() {
        let m = metrics(&log_with(300, |i| {
            let s = EndpointSample { f_ctrl: Vector3::new(0.0, (i as f64 * 0.1).sin() * 20.0, 0.0), ..Default::default() };
            [s, s]
        }))
        .unwrap();
        assert_eq!(m.strokes.len(), 3);
        assert!(m.strokes.iter().all(|s| (s.leader_fraction_a - 0.5).abs() < 1e-12));
    }

    #[test]
    fn alternating_schedule() {
        let m = metrics(&log_with(500, |i| {
            let a_high = ((i + 50) / 100) % 2 == 1;
            let (ka, kb) = if a_high { (800.0, 200.0) } else { (200.0, 800.0) };
            let e = 0.01;
            let mk = |k: f64| EndpointSample {
                f_ctrl: Vector3::new(0.0, k * e, 0.0),
                k_diag: Vector3::new(0.0, k, 800.0),
                ..Default::default()
            };
            [mk(ka), mk(kb)]
        }))
        .unwrap();
        assert_eq!(m.role_phases.len(), 4);
        assert!(m.leader_alternates);
        assert_eq!(m.min_stiffer_leader_fraction, Some(1.0));
    }

    #[test]
    fn tie_band() {
        assert_eq!(leader_score(10.0, -10.4), 0.5);
        assert_eq!(leader_score(10.0, 9.0), 1.0);
        assert_eq!(leader_score(0.01, 0.04), 0.5);
        assert_eq!(leader_score(-1.0, 3.0), 0.0);
    }

    #[test]
    fn empty_log() {
        assert_eq!(metrics(&SimLog::new(0.1, 1.0, 0.0)).unwrap_err(), SimError::EmptyLog);
    }
}
