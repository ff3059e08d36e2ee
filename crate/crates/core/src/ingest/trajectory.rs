//! Occlusion gap filling, smoothing and uniform resampling of arm trajectories.

use nalgebra::Vector3;
use serde::Serialize;

use super::skeleton::ObservedArmFrame;
use super::{ArmFrame, IngestError};

/// What [`fill_gaps`] did to a trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GapReport {
    pub input_frames: usize,
    pub output_frames: usize,
    /// `(time, joint index)` of every interpolated sample.
    pub interpolated: Vec<(f64, usize)>,
    /// timestamps of dropped frames
    pub dropped: Vec<f64>,
}

/// Interpolates short interior gaps and drops frames that cannot be repaired.
///
/// A joint sample is missing when absent, below `conf_min`, or non-finite.
/// Interior runs of at most `max_gap` missing samples of one joint are linearly
/// interpolated in time; longer runs, and any missing samples before the first
/// or after the last valid one, drop the whole frame.
pub fn fill_gaps(
    frames: &[ObservedArmFrame],
    max_gap: usize,
    conf_min: f64,
) -> Result<(Vec<ArmFrame>, GapReport), IngestError> {
    let n = frames.len();
    let mut keep = vec![true; n];
    let mut filled: Vec<[Vector3<f64>; 3]> = vec![[Vector3::zeros(); 3]; n];
    let mut interpolated = Vec::new();

    for joint in 0..3 {
        let valid: Vec<Option<Vector3<f64>>> = frames
            .iter()
            .map(|f| {
                f.joints[joint]
                    .filter(|o| o.confidence >= conf_min && o.position.iter().all(|c| c.is_finite()))
                    .map(|o| o.position)
            })
            .collect();
        let mut i = 0;
        while i < n {
            if let Some(p) = valid[i] {
                filled[i][joint] = p;
                i += 1;
                continue;
            }
            let start = i;
            while i < n && valid[i].is_none() {
                i += 1;
            }
            let end = i; // exclusive
            let interior = start > 0 && end < n;
            if interior && end - start <= max_gap {
                let (t0, p0) = (frames[start - 1].t, valid[start - 1].expect("valid before gap"));
                let (t1, p1) = (frames[end].t, valid[end].expect("valid after gap"));
                for k in start..end {
                    let a = (frames[k].t - t0) / (t1 - t0);
                    filled[k][joint] = p0 + (p1 - p0) * a;
                    interpolated.push((frames[k].t, joint));
                }
            } else {
                keep[start..end].iter_mut().for_each(|k| *k = false);
            }
        }
    }

    let mut out = Vec::new();
    let mut dropped = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        if keep[k] {
            let [shoulder, elbow, wrist] = filled[k];
            out.push(ArmFrame { t: f.t, shoulder, elbow, wrist });
        } else {
            dropped.push(f.t);
        }
    }
    interpolated.retain(|(t, _)| !dropped.contains(t));
    interpolated.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if out.is_empty() {
        return Err(IngestError::EmptyTrajectory);
    }
    let report = GapReport {
        input_frames: n,
        output_frames: out.len(),
        interpolated,
        dropped,
    };
    Ok((out, report))
}

fn moving_average(values: &[Vector3<f64>], window: usize) -> Vec<Vector3<f64>> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let sum: Vector3<f64> = values[lo..=hi].iter().sum();
            sum / (hi - lo + 1) as f64
        })
        .collect()
}

/// Edge-truncated moving average of width `window`, then linear resampling
/// onto `n_samples` uniformly spaced times spanning the original interval.
pub fn resample_smooth(traj: &[ArmFrame], n_samples: usize, window: usize) -> Result<Vec<ArmFrame>, IngestError> {
    if traj.len() < 2 {
        return Err(IngestError::TooFewFrames(traj.len()));
    }
    if n_samples < 2 {
        return Err(IngestError::TooFewFrames(n_samples));
    }
    if window == 0 || window % 2 == 0 {
        return Err(IngestError::InvalidWindow(window));
    }
    let joints: [Vec<Vector3<f64>>; 3] = [
        moving_average(&traj.iter().map(|f| f.shoulder).collect::<Vec<_>>(), window),
        moving_average(&traj.iter().map(|f| f.elbow).collect::<Vec<_>>(), window),
        moving_average(&traj.iter().map(|f| f.wrist).collect::<Vec<_>>(), window),
    ];
    let t_first = traj[0].t;
    let t_last = traj[traj.len() - 1].t;
    let step = (t_last - t_first) / (n_samples - 1) as f64;
    let mut seg = 0;
    let out = (0..n_samples)
        .map(|i| {
            let t = if i == n_samples - 1 { t_last } else { t_first + step * i as f64 };
            while seg + 2 < traj.len() && traj[seg + 1].t <= t {
                seg += 1;
            }
            let (ta, tb) = (traj[seg].t, traj[seg + 1].t);
            let a = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            let lerp = |v: &[Vector3<f64>]| v[seg] + (v[seg + 1] - v[seg]) * a;
            ArmFrame {
                t,
                shoulder: lerp(&joints[0]),
                elbow: lerp(&joints[1]),
                wrist: lerp(&joints[2]),
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::skeleton::Observation;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obs(p: [f64; 3]) -> Option<Observation> {
        Some(Observation { position: Vector3::from(p), confidence: 0.9 })
    }

    fn clean(n: usize) -> Vec<ObservedArmFrame> {
        (0..n)
            .map(|i| {
                let x = i as f64;
                ObservedArmFrame { t: x, joints: [obs([0.0, 0.0, 0.0]), obs([0.3, x, 0.0]), obs([0.5, 2.0 * x, 0.1])] }
            })
            .collect()
    }

    fn ramp(n: usize) -> Vec<ArmFrame> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                ArmFrame {
                    t,
                    shoulder: Vector3::new(t, 0.0, 0.0),
                    elbow: Vector3::new(0.3, t, 0.0),
                    wrist: Vector3::new(0.5, 0.2, -t),
                }
            })
            .collect()
    }

    #[test]
    fn clean_input_is_identity() {
        let frames = clean(6);
        let (out, report) = fill_gaps(&frames, 5, 0.3).unwrap();
        assert_eq!(out.len(), 6);
        assert!(report.interpolated.is_empty() && report.dropped.is_empty());
        for (o, f) in out.iter().zip(&frames) {
            assert_eq!(o.elbow, f.joints[1].unwrap().position);
        }
    }

    #[test]
    fn single_missing_wrist_is_midpoint() {
        let frames = vec![
            ObservedArmFrame { t: 0.0, joints: [obs([0.0; 3]), obs([0.3, 0.0, 0.0]), obs([0.0, 0.0, 0.0])] },
            ObservedArmFrame { t: 1.0, joints: [obs([0.0; 3]), obs([0.3, 0.0, 0.0]), None] },
            ObservedArmFrame { t: 2.0, joints: [obs([0.0; 3]), obs([0.3, 0.0, 0.0]), obs([0.0, 2.0, 0.0])] },
        ];
        let (out, report) = fill_gaps(&frames, 1, 0.3).unwrap();
        assert_eq!(out[1].wrist, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(report.interpolated, vec![(1.0, 2)]);
    }

    #[test]
    fn low_confidence_and_nan_count_as_missing() {
        let mut frames = clean(5);
        frames[1].joints[2].as_mut().unwrap().confidence = 0.1;
        frames[3].joints[1].as_mut().unwrap().position.x = f64::NAN;
        let (out, report) = fill_gaps(&frames, 2, 0.3).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(report.interpolated.len(), 2);
        assert_relative_eq!(out[1].wrist, Vector3::new(0.5, 2.0, 0.1));
        assert!(out[3].elbow.x.is_finite());
    }

    #[test]
    fn long_run_is_dropped() {
        let mut frames = clean(10);
        for f in &mut frames[2..7] {
            f.joints[2] = None;
        }
        let (out, report) = fill_gaps(&frames, 3, 0.3).unwrap();
        assert_eq!(out.iter().map(|f| f.t).collect::<Vec<_>>(), vec![0.0, 1.0, 7.0, 8.0, 9.0]);
        assert_eq!(report.dropped, vec![2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn leading_and_trailing_gaps_dropped() {
        let mut frames = clean(5);
        frames[0].joints[0] = None;
        frames[4].joints[2] = None;
        let (out, _) = fill_gaps(&frames, 5, 0.3).unwrap();
        assert_eq!(out.iter().map(|f| f.t).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn nothing_survives() {
        let mut frames = clean(3);
        frames.iter_mut().for_each(|f| f.joints[0] = None);
        assert_eq!(fill_gaps(&frames, 5, 0.3).unwrap_err(), IngestError::EmptyTrajectory);
    }

    #[test]
    fn constant_stays_constant() {
        let f = ArmFrame {
            t: 0.0,
            shoulder: Vector3::new(0.1, 0.2, 0.3),
            elbow: Vector3::new(0.4, 0.2, 0.3),
            wrist: Vector3::new(0.4, 0.5, 0.3),
        };
        let traj: Vec<ArmFrame> = (0..7).map(|i| ArmFrame { t: i as f64 * 0.05, ..f }).collect();
        for (n, w) in [(3, 1), (20, 3), (11, 5)] {
            for o in resample_smooth(&traj, n, w).unwrap() {
                assert_relative_eq!(o.wrist, f.wrist, epsilon = 1e-15);
                assert_relative_eq!(o.shoulder, f.shoulder, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn linear_ramp_resampled_exactly() {
        let out = resample_smooth(&ramp(3), 5, 1).unwrap();
        let xs: Vec<f64> = out.iter().map(|f| f.shoulder.x).collect();
        for (x, want) in xs.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert_relative_eq!(*x, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn moving_average_center_value() {
        let xs = [0.0, 0.0, 3.0, 0.0, 0.0];
        let traj: Vec<ArmFrame> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ArmFrame {
                t: i as f64,
                shoulder: Vector3::new(x, 0.0, 0.0),
                elbow: Vector3::zeros(),
                wrist: Vector3::zeros(),
            })
            .collect();
        let out = resample_smooth(&traj, 5, 3).unwrap();
        assert_relative_eq!(out[2].shoulder.x, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn argument_errors() {
        assert_eq!(resample_smooth(&ramp(3)[..1], 5, 1).unwrap_err(), IngestError::TooFewFrames(1));
        assert_eq!(resample_smooth(&ramp(3), 5, 2).unwrap_err(), IngestError::InvalidWindow(2));
    }

    proptest! {
        #[test]
        fn resample_length_and_monotone_time(n in 2usize..200, len in 2usize..50, w in 0usize..4) {
            let out = resample_smooth(&ramp(len), n, 2 * w + 1).unwrap();
            prop_assert_eq!(out.len(), n);
            prop_assert!(out.windows(2).all(|p| p[1].t > p[0].t));
        }

        #[test]
        fn clean_uniform_data_is_fixed_point(len in 2usize..60) {
            let traj = ramp(len);
            let observed: Vec<ObservedArmFrame> = traj
                .iter()
                .map(|f| ObservedArmFrame {
                    t: f.t,
                    joints: [f.shoulder, f.elbow, f.wrist].map(|p| Some(Observation { position: p, confidence: 1.0 })),
                })
                .collect();
            let (filled, _) = fill_gaps(&observed, 5, 0.3).unwrap();
            let again = resample_smooth(&filled, len, 1).unwrap();
            for (a, b) in again.iter().zip(&traj) {
                prop_assert!((a.t - b.t).abs() < 1e-12);
                prop_assert!((a.wrist - b.wrist).norm() < 1e-12);
                prop_assert!((a.shoulder - b.shoulder).norm() < 1e-12);
            }
        }
    }
}
