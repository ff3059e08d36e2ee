//! Pipeline stages. Each stage reads the files written by the previous one
//! and writes its own into an output directory:
//!
//! | stage     | writes                                                    |
//! |-----------|-----------------------------------------------------------|
//! | synth     | `skeleton.json`                                           |
//! | ingest    | `arm_<id>.csv`, `ingest_report.json`                      |
//! | extract   | `stiffness_<id>.csv`, `training_<id>.csv`, `extract_report.json` |
//! | train     | `model_<id>.json`, `train_report_<id>.json`               |
//! | reproduce | `reproduced_<id>.csv`, `reproduce_report_<id>.json`       |
//! | simulate  | `simlog_<tag>.csv`, `metrics_<tag>.json`                  |
//! | all       | everything above plus `experiments.json`                  |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::gmm::{GmmError, TrainReport};
use crate::ingest::{process_arm, DepthDir, DepthLifting, GapReport, IngestError, PersonId, SkeletonStream};
use crate::planner::PlannerConfig;
use crate::seed::stage_seed;
use crate::sim::{metrics, run_sawing, SawingSetup, SimConfig, SimError, SimLog, SimMetrics, SkillAxes, StiffnessSpec};
use crate::skill::{extract_training, learn_stiffness_skill, SkillError, SkillModel};
use crate::spd::decode;
use crate::stiffness::{arm_geometry, endpoint_stiffness_from_geometry, StiffnessError};
use crate::synth::{synth_skeleton, SynthError};
use crate::tables::{read_arm_csv, read_csv, write_arm_csv, write_csv, StiffnessRow, TableError, TrainingRow};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}: {1}")]
    Io(String, String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Stiffness(#[from] StiffnessError),
    #[error("{0}")]
    Data(String),
}

/// Error classes with stable process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Parse,
    Data,
    Numeric,
    Instability,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Parse => 4,
            ErrorCategory::Data => 5,
            ErrorCategory::Numeric => 6,
            ErrorCategory::Instability => 7,
        }
    }
}

fn skill_category(e: &SkillError) -> ErrorCategory {
    match e {
        SkillError::Io(..) => ErrorCategory::Io,
        SkillError::UnsupportedVersion(_) | SkillError::InvalidModel(_) => ErrorCategory::Parse,
        SkillError::NoSamples | SkillError::AllFramesSingular(_) => ErrorCategory::Data,
        SkillError::Gmm(GmmError::TooFewPoints { .. }) => ErrorCategory::Data,
        SkillError::Stiffness(StiffnessError::InvalidParam { .. }) => ErrorCategory::Config,
        SkillError::Gmm(_) | SkillError::Spd(_) | SkillError::Stiffness(_) => ErrorCategory::Numeric,
    }
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        use ErrorCategory as C;
        match self {
            PipelineError::Config(ConfigError::Io(..)) => C::Io,
            PipelineError::Config(_) => C::Config,
            PipelineError::Io(..) => C::Io,
            PipelineError::Ingest(e) => match e {
                IngestError::Io(..) => C::Io,
                IngestError::Parse(_) => C::Parse,
                IngestError::InvalidIntrinsics | IngestError::InvalidWindow(_) => C::Config,
                _ => C::Data,
            },
            PipelineError::Table(TableError::Io(..)) => C::Io,
            PipelineError::Table(TableError::Parse { .. }) => C::Parse,
            PipelineError::Skill(e) => skill_category(e),
            PipelineError::Sim(e) => match e {
                SimError::InvalidConfig(_) | SimError::Planner(_) => C::Config,
                SimError::InstabilityDetected { .. } | SimError::NonFiniteState { .. } => C::Instability,
                SimError::EmptyLog => C::Data,
                SimError::Skill(s) => skill_category(s),
            },
            PipelineError::Synth(_) => C::Config,
            PipelineError::Stiffness(StiffnessError::InvalidParam { .. }) => C::Config,
            PipelineError::Stiffness(_) => C::Numeric,
            PipelineError::Data(_) => C::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(path.display().to_string(), e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn skeleton_path(dir: &Path) -> PathBuf {
    dir.join("skeleton.json")
}
pub fn arm_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("arm_{id}.csv"))
}
pub fn stiffness_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("stiffness_{id}.csv"))
}
pub fn training_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("training_{id}.csv"))
}
pub fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("model_{id}.json"))
}
pub fn simlog_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("simlog_{tag}.csv"))
}
pub fn metrics_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("metrics_{tag}.json"))
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let stream = synth_skeleton(&cfg.synth, stage_seed(cfg.seed, "synth"))?;
    let path = skeleton_path(out);
    write_text(&path, &(stream.to_json() + "\n"))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectIngest {
    pub id: String,
    #[serde(flatten)]
    pub gaps: GapReport,
}

/// Writes one arm CSV per subject and a gap report.
pub fn ingest(
    cfg: &PipelineConfig,
    skeleton: &Path,
    depth_dir: Option<&Path>,
    subjects: &[String],
    out: &Path,
) -> Result<Vec<SubjectIngest>> {
    ensure_dir(out)?;
    let stream = SkeletonStream::read(skeleton)?;
    let depth_source = depth_dir.map(|dir| DepthDir {
        dir,
        intrinsics: &cfg.camera,
    });
    let lifting = depth_source.as_ref().map(|source| DepthLifting {
        source,
        intrinsics: &cfg.camera,
        window: cfg.ingest.depth_window,
    });
    let mut reports = Vec::with_capacity(subjects.len());
    for id in subjects {
        let (frames, gaps) = process_arm(&stream, &PersonId(id.clone()), lifting.as_ref(), &cfg.ingest)?;
        write_arm_csv(&arm_path(out, id), &frames)?;
        if !gaps.interpolated.is_empty() || !gaps.dropped.is_empty() {
            log::warn!(
                "subject {id}: {} samples interpolated, {} frames dropped",
                gaps.interpolated.len(),
                gaps.dropped.len()
            );
        }
        reports.push(SubjectIngest { id: id.clone(), gaps });
    }
    write_json(&out.join("ingest_report.json"), &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectExtract {
    pub id: String,
    pub frames: usize,
    pub skipped_singular: usize,
}

/// Stiffness and training tables for each `(id, arm CSV)`.
pub fn extract(cfg: &PipelineConfig, arms: &[(String, PathBuf)], out: &Path) -> Result<Vec<SubjectExtract>> {
    ensure_dir(out)?;
    let mut reports = Vec::with_capacity(arms.len());
    for (id, path) in arms {
        let frames = read_arm_csv(path)?;
        let (rows, _, skipped) = extract_training(&frames, &cfg.stiffness)?;
        let mut table = Vec::with_capacity(rows.len());
        for f in &frames {
            let Ok(geom) = arm_geometry(f) else { continue };
            let k = endpoint_stiffness_from_geometry(&geom, &cfg.stiffness)?;
            let [k11, k12, k13, k22, k23, k33] = k.upper_triangle();
            table.push(StiffnessRow {
                t: f.t,
                k11,
                k12,
                k13,
                k22,
                k23,
                k33,
                d1: geom.d1,
                d2: geom.d2,
            });
        }
        if skipped > 0 {
            log::warn!("subject {id}: {skipped} singular frames skipped");
        }
        write_csv(&stiffness_path(out, id), &table)?;
        write_csv(&training_path(out, id), &rows)?;
        reports.push(SubjectExtract {
            id: id.clone(),
            frames: frames.len(),
            skipped_singular: skipped,
        });
    }
    write_json(&out.join("extract_report.json"), &reports)?;
    Ok(reports)
}

/// Fits a skill for one subject. The EM seed is derived from the root seed
/// and the subject id.
pub fn train(cfg: &PipelineConfig, training: &Path, id: &str, out: &Path) -> Result<(SkillModel, TrainReport)> {
    ensure_dir(out)?;
    let rows: Vec<TrainingRow> = read_csv(training)?;
    let seed = stage_seed(cfg.seed, &format!("train/{id}"));
    let (model, report) = learn_stiffness_skill(&rows, &cfg.gmm, seed)?;
    model.save(&model_path(out, id))?;
    write_json(&out.join(format!("train_report_{id}.json")), &report)?;
    Ok((model, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReproducedRow {
    y: f64,
    z: f64,
    k11: f64,
    k12: f64,
    k13: f64,
    k22: f64,
    k23: f64,
    k33: f64,
    /// relative Frobenius error of the unscaled regression vs the demonstration
    rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub samples: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub clamped: usize,
    pub output_scale: f64,
}

/// Queries a skill at every training pose and compares with the demonstrated
/// stiffness. The CSV holds the scaled stiffness a robot would apply.
pub fn reproduce(model: &Path, training: &Path, id: &str, out: &Path) -> Result<ReproduceReport> {
    ensure_dir(out)?;
    let skill = SkillModel::load(model)?;
    let rows: Vec<TrainingRow> = read_csv(training)?;
    if rows.is_empty() {
        return Err(PipelineError::Data(format!("{}: no training rows", training.display())));
    }
    let mut table = Vec::with_capacity(rows.len());
    let (mut max, mut sum, mut clamped) = (0.0f64, 0.0, 0);
    for r in &rows {
        let demo = decode(&r.chol(), f64::MIN_POSITIVE).map_err(SkillError::from)?;
        let raw = skill.reproduce_unscaled(r.pose())?;
        let err = raw.stiffness.relative_frobenius(&demo);
        let scaled = raw.stiffness.scaled(skill.output_scale());
        clamped += raw.clamped as usize;
        max = max.max(err);
        sum += err;
        let [k11, k12, k13, k22, k23, k33] = scaled.upper_triangle();
        table.push(ReproducedRow {
            y: r.y,
            z: r.z,
            k11,
            k12,
            k13,
            k22,
            k23,
            k33,
            rel_error: err,
        });
    }
    write_csv(&out.join(format!("reproduced_{id}.csv")), &table)?;
    let report = ReproduceReport {
        samples: rows.len(),
        max_rel_error: max,
        mean_rel_error: sum / rows.len() as f64,
        clamped,
        output_scale: skill.output_scale(),
    };
    write_json(&out.join(format!("reproduce_report_{id}.json")), &report)?;
    Ok(report)
}

/// Runs one configuration. Returns the metrics and, for a run stopped by the
/// error bound, the abort; the log and metrics are written either way.
pub fn simulate(sim: &SimConfig, planner: &PlannerConfig, out: &Path, tag: &str) -> Result<(SimMetrics, Option<SimError>)> {
    ensure_dir(out)?;
    let setup = sim.resolve(planner, |p| SkillModel::load(p).map(Arc::new))?;
    let (m, log, abort) = run_with_metrics(&setup)?;
    let path = simlog_path(out, tag);
    log.save_csv(&path).map_err(|e| io_err(&path, e))?;
    write_json(&metrics_path(out, tag), &m)?;
    Ok((m, abort))
}

/// Runs a setup, keeping the partial log of an aborted run.
pub fn run_with_metrics(setup: &SawingSetup) -> Result<(SimMetrics, SimLog, Option<SimError>)> {
    match run_sawing(setup) {
        Ok(log) => Ok((metrics(&log)?, log, None)),
        Err(e) => {
            let Some(log) = e.partial_log().cloned() else { return Err(e.into()) };
            let mut m = metrics(&log)?;
            m.aborted_at_s = log.records.last().map(|r| r.t);
            Ok((m, log, Some(e)))
        }
    }
}

/// Recomputes metrics from a log file.
pub fn metrics_from_log(cfg: &PipelineConfig, simlog: &Path, out: &Path) -> Result<SimMetrics> {
    ensure_dir(out)?;
    let file = std::fs::File::open(simlog).map_err(|e| io_err(simlog, e))?;
    let log = SimLog::read_csv(std::io::BufReader::new(file), cfg.planner.period_s, cfg.sim.phase_offset_s, cfg.sim.dt_s)
        .map_err(|msg| TableError::Parse {
            path: simlog.display().to_string(),
            msg,
        })?;
    let m = metrics(&log)?;
    let stem = simlog.file_stem().and_then(|s| s.to_str()).unwrap_or("simlog");
    let tag = stem.strip_prefix("simlog_").unwrap_or(stem);
    write_json(&metrics_path(out, tag), &m)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kz: f64,
    pub fz: f64,
    pub max_abs_ez: f64,
    pub aborted_at_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// `z` stiffness sweep at the sweep feedforward
    pub kz_sweep: Vec<SweepPoint>,
    /// zero `z` stiffness at increasing downward feedforward
    pub zero_kz: Vec<SweepPoint>,
    pub equal_constant: SimMetrics,
    pub learned: Option<SimMetrics>,
}

fn with_constant(base: &SimConfig, k: [f64; 3], fz: Option<f64>) -> SimConfig {
    let mut cfg = base.clone();
    for ep in [&mut cfg.endpoint_a, &mut cfg.endpoint_b] {
        ep.stiffness = StiffnessSpec::Constant(k);
        if let Some(fz) = fz {
            ep.feedforward_force[2] = fz;
        }
    }
    cfg
}

fn sweep(cfg: &PipelineConfig, points: Vec<(f64, f64)>) -> Result<Vec<SweepPoint>> {
    let x = &cfg.experiments;
    points
        .into_par_iter()
        .map(|(kz, fz)| {
            let sim = with_constant(&cfg.sim, [x.kx, x.ky, kz], Some(fz));
            let setup = SawingSetup::constant(&sim, &cfg.planner)?;
            let (m, _, _) = run_with_metrics(&setup)?;
            Ok(SweepPoint {
                kz,
                fz,
                max_abs_ez: m.max_abs_ez,
                aborted_at_s: m.aborted_at_s,
            })
        })
        .collect()
}

/// Learned-stiffness config: each endpoint takes its sawing-axis stiffness
/// from one model and keeps the experiment `x`/`z` stiffness.
pub fn learned_config(cfg: &PipelineConfig, models: [&Path; 2]) -> SimConfig {
    let x = &cfg.experiments;
    let mut sim = cfg.sim.clone();
    for (ep, path) in [&mut sim.endpoint_a, &mut sim.endpoint_b].into_iter().zip(models) {
        ep.stiffness = StiffnessSpec::Model {
            path: path.to_path_buf(),
            axes: SkillAxes::YOnly,
            kx: x.kx,
            kz: x.kz,
            frame: None,
        };
    }
    sim
}

/// Stiffness sweep, feedforward sweep and the role-allocation comparison.
/// Logs of the two role runs are written to `out`.
pub fn experiments(cfg: &PipelineConfig, models: Option<[&Path; 2]>, out: &Path) -> Result<ExperimentReport> {
    ensure_dir(out)?;
    let x = &cfg.experiments;
    let kz_sweep = sweep(cfg, x.kz_sweep.iter().map(|k| (*k, x.sweep_fz)).collect())?;
    let zero_kz = sweep(cfg, x.zero_kz_forces.iter().map(|f| (0.0, *f)).collect())?;
    let (equal_constant, _) = simulate(&with_constant(&cfg.sim, [x.kx, x.ky, x.kz], None), &cfg.planner, out, "equal_constant")?;
    let learned = match models {
        Some(paths) => Some(simulate(&learned_config(cfg, paths), &cfg.planner, out, "learned")?.0),
        None => None,
    };
    let report = ExperimentReport {
        kz_sweep,
        zero_kz,
        equal_constant,
        learned,
    };
    write_json(&out.join("experiments.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub reproduce: Vec<(String, ReproduceReport)>,
    pub experiments: ExperimentReport,
}

/// Every stage in order. Uses the configured skeleton when given, otherwise
/// a synthetic one.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let skeleton = match &cfg.paths.skeleton {
        Some(p) => p.clone(),
        None => synth(cfg, out)?,
    };
    ingest(cfg, &skeleton, cfg.paths.depth_dir.as_deref(), &cfg.subjects, out)?;
    let arms: Vec<(String, PathBuf)> = cfg.subjects.iter().map(|id| (id.clone(), arm_path(out, id))).collect();
    extract(cfg, &arms, out)?;
    let mut reproduce_reports = Vec::new();
    for id in &cfg.subjects {
        train(cfg, &training_path(out, id), id, out)?;
        reproduce_reports.push((id.clone(), reproduce(&model_path(out, id), &training_path(out, id), id, out)?));
    }
    let models = match cfg.subjects.as_slice() {
        [a, b, ..] => Some([model_path(out, a), model_path(out, b)]),
        _ => None,
    };
    let experiments = experiments(cfg, models.as_ref().map(|[a, b]| [a.as_path(), b.as_path()]), out)?;
    Ok(RunSummary {
        reproduce: reproduce_reports,
        experiments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes: Vec<i32> = [
            ErrorCategory::Config,
            ErrorCategory::Io,
            ErrorCategory::Parse,
            ErrorCategory::Data,
            ErrorCategory::Numeric,
            ErrorCategory::Instability,
        ]
        .iter()
        .map(|c| c.exit_code())
        .collect();
        assert_eq!(codes, vec![2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn categories() {
        let e = PipelineError::from(IngestError::PersonNotFound(PersonId("Z".into())));
        assert_eq!(e.category(), ErrorCategory::Data);
        let e = PipelineError::from(IngestError::Parse("line 1".into()));
        assert_eq!(e.category(), ErrorCategory::Parse);
        let e = PipelineError::from(SimError::InvalidConfig("x".into()));
        assert_eq!(e.category(), ErrorCategory::Config);
        let e = PipelineError::from(SkillError::AllFramesSingular(3));
        assert_eq!(e.category(), ErrorCategory::Data);
    }

    #[test]
    fn constant_arm_gives_constant_stiffness() {
        let dir = tempfile::tempdir().unwrap();
        let f = crate::ArmFrame {
            t: 0.0,
            shoulder: nalgebra::Vector3::new(0.0, 0.0, 1.4),
            elbow: nalgebra::Vector3::new(0.1, 0.2, 1.2),
            wrist: nalgebra::Vector3::new(0.0, 0.45, 1.2),
        };
        let frames: Vec<_> = (0..5).map(|i| crate::ArmFrame { t: i as f64 * 0.05, ..f }).collect();
        let arm = dir.path().join("arm_A.csv");
        write_arm_csv(&arm, &frames).unwrap();
        let cfg = PipelineConfig::default();
        let rep = extract(&cfg, &[("A".into(), arm)], dir.path()).unwrap();
        assert_eq!(rep[0].skipped_singular, 0);
        let rows: Vec<StiffnessRow> = read_csv(&stiffness_path(dir.path(), "A")).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.upper() == rows[0].upper()));
    }

    #[test]
    fn empty_arm_table_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let arm = dir.path().join("arm_A.csv");
        write_arm_csv(&arm, &[]).unwrap();
        let err = extract(&PipelineConfig::default(), &[("A".into(), arm)], dir.path()).unwrap_err();
        assert_eq!(err.category(), ErrorCategory::Data);
    }
}
