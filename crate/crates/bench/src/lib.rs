//! Shared inputs for the benchmarks in `benches/`.

use std::sync::Arc;

use cdskill_core::planner::PlannerConfig;
use cdskill_core::sim::{SawingSetup, SimConfig, SkillAxes, StiffnessSpec};
use cdskill_core::skill::{extract_training, learn_stiffness_skill, SkillConfig, SkillModel};
use cdskill_core::synth::{arm_pose, SyntheticDemoSpec};
use cdskill_core::tables::TrainingRow;
use cdskill_core::{ArmFrame, StiffnessParams};

/// `n` noise-free arm frames spread over one stroke cycle.
pub fn demo_frames(n: usize) -> Vec<ArmFrame> {
    let spec = SyntheticDemoSpec::default();
    (0..n)
        .map(|i| {
            let t = spec.period_s * i as f64 / n as f64;
            let [shoulder, elbow, wrist] = arm_pose(&spec, t, 0.0);
            ArmFrame { t, shoulder, elbow, wrist }
        })
        .collect()
}

pub fn training_rows(n: usize) -> Vec<TrainingRow> {
    extract_training(&demo_frames(n), &StiffnessParams::default()).expect("regular arm poses").0
}

pub fn trained_skill(n: usize) -> SkillModel {
    learn_stiffness_skill(&training_rows(n), &SkillConfig::default(), 7).expect("fit").0
}

/// Default sawing run of `duration` seconds, with the learned skill on the
/// sawing axis of both endpoints when `skill` is given.
pub fn sawing_setup(duration: f64, skill: Option<Arc<SkillModel>>) -> SawingSetup {
    let mut cfg = SimConfig { duration_s: duration, ..SimConfig::default() };
    if skill.is_some() {
        for ep in [&mut cfg.endpoint_a, &mut cfg.endpoint_b] {
            ep.stiffness = StiffnessSpec::Model {
                path: "in-memory".into(),
                axes: SkillAxes::YOnly,
                kx: 0.0,
                kz: 800.0,
                frame: None,
            };
        }
    }
    cfg.resolve(&PlannerConfig::default(), |_| Ok(skill.clone().expect("model requested")))
        .expect("valid setup")
}
