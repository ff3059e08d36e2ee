//! `cdskill`: learn arm stiffness skills from keypoint recordings and test
//! them in the sawing simulator.
//!
//! Every flag that takes a value can also be set through an environment
//! variable with the `CDSKILL_` prefix, e.g. `CDSKILL_CONFIG`, `CDSKILL_SEED`,
//! `CDSKILL_OUT_DIR`. Logging follows `CDSKILL_LOG` (default `info`).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use cdskill_core::config::PipelineConfig;
use cdskill_core::pipeline::{self, PipelineError};
use cdskill_core::sim::{SkillAxes, StiffnessSpec};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cdskill", version, about)]
struct Cli {
    /// TOML configuration; built-in defaults when absent
    #[arg(long, global = true, env = "CDSKILL_CONFIG")]
    config: Option<PathBuf>,
    /// root seed, overrides the config file
    #[arg(long, global = true, env = "CDSKILL_SEED")]
    seed: Option<u64>,
    /// output directory, overrides `paths.out_dir`
    #[arg(long, global = true, env = "CDSKILL_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Subjects {
    /// person id to process; repeat for several (default: config `subjects`)
    #[arg(long = "subject", env = "CDSKILL_SUBJECT", value_delimiter = ',')]
    subjects: Vec<String>,
    /// directory holding the previous stage's files (default: the output directory)
    #[arg(long, env = "CDSKILL_IN_DIR")]
    in_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic two-person sawing skeleton
    Synth,
    /// Clean, smooth and resample arm keypoints into per-subject arm CSVs
    Ingest {
        /// skeleton JSON (default: `paths.skeleton`, then `skeleton.json` in the output directory)
        #[arg(long, env = "CDSKILL_SKELETON")]
        skeleton: Option<PathBuf>,
        /// directory of depth maps for pixel keypoints
        #[arg(long, env = "CDSKILL_DEPTH_DIR")]
        depth_dir: Option<PathBuf>,
        #[command(flatten)]
        subjects: Subjects,
    },
    /// Compute stiffness and training tables from arm CSVs
    Extract {
        #[command(flatten)]
        subjects: Subjects,
    },
    /// Fit one stiffness skill per subject
    Train {
        #[command(flatten)]
        subjects: Subjects,
        /// number of mixture components
        #[arg(long, env = "CDSKILL_K_COMPONENTS")]
        k_components: Option<usize>,
    },
    /// Query each skill at its training poses and report the error
    Reproduce {
        #[command(flatten)]
        subjects: Subjects,
    },
    /// Run the sawing simulation with the configured or given stiffness
    Simulate {
        /// `constant:<k>`, `constant:<kx>,<ky>,<kz>` or `model:<path>`; the
        /// first applies to endpoint A, the second to B, one applies to both
        #[arg(long, env = "CDSKILL_STIFFNESS", value_delimiter = ';')]
        stiffness: Vec<String>,
        /// name used in `simlog_<tag>.csv` and `metrics_<tag>.json`
        #[arg(long, default_value = "run", env = "CDSKILL_TAG")]
        tag: String,
    },
    /// Recompute metrics from a simulation log
    Metrics {
        /// `simlog_<tag>.csv` file
        simlog: PathBuf,
    },
    /// Run every stage followed by the comparison experiments
    All {
        /// number of mixture components
        #[arg(long, env = "CDSKILL_K_COMPONENTS")]
        k_components: Option<usize>,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.category().exit_code() as u8,
            err: e.into(),
        }
    }
}

fn config_failure(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn parse_stiffness(text: &str, cfg: &PipelineConfig) -> anyhow::Result<StiffnessSpec> {
    let (kind, value) = text.split_once(':').with_context(|| format!("stiffness `{text}`: expected kind:value"))?;
    match kind {
        "constant" => {
            let parts = value
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("stiffness `{text}`: not a number"))?;
            let k = match parts[..] {
                [k] => [k, k, k],
                [kx, ky, kz] => [kx, ky, kz],
                _ => bail!("stiffness `{text}`: give one value or three"),
            };
            if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                bail!("stiffness `{text}`: values must be finite and non-negative");
            }
            Ok(StiffnessSpec::Constant(k))
        }
        "model" => Ok(StiffnessSpec::Model {
            path: PathBuf::from(value),
            axes: SkillAxes::YOnly,
            kx: cfg.experiments.kx,
            kz: cfg.experiments.kz,
            frame: None,
        }),
        _ => bail!("stiffness `{text}`: unknown kind `{kind}` (constant or model)"),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(PipelineError::from)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    match &cli.command {
        Command::Ingest { subjects, .. }
        | Command::Extract { subjects }
        | Command::Train { subjects, .. }
        | Command::Reproduce { subjects }
            if !subjects.subjects.is_empty() =>
        {
            cfg.subjects = subjects.subjects.clone();
        }
        _ => {}
    }
    if let Command::Train { k_components: Some(k), .. } | Command::All { k_components: Some(k) } = &cli.command {
        cfg.gmm.k = *k;
    }
    if let Command::Simulate { stiffness, .. } = &cli.command {
        let specs = stiffness
            .iter()
            .map(|s| parse_stiffness(s, &cfg))
            .collect::<anyhow::Result<Vec<_>>>()
            .map_err(config_failure)?;
        match specs.as_slice() {
            [] => {}
            [both] => {
                cfg.sim.endpoint_a.stiffness = both.clone();
                cfg.sim.endpoint_b.stiffness = both.clone();
            }
            [a, b] => {
                cfg.sim.endpoint_a.stiffness = a.clone();
                cfg.sim.endpoint_b.stiffness = b.clone();
            }
            _ => return Err(config_failure(anyhow::anyhow!("--stiffness given more than twice"))),
        }
    }
    cfg.validate().map_err(PipelineError::from)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let out = cfg.paths.out_dir.as_path();
    let input = |s: &Subjects| s.in_dir.clone().unwrap_or_else(|| out.to_path_buf());
    match &cli.command {
        Command::Synth => {
            let path = pipeline::synth(&cfg, out)?;
            log::info!("wrote {}", path.display());
        }
        Command::Ingest { skeleton, depth_dir, subjects } => {
            let skeleton = skeleton
                .clone()
                .or_else(|| cfg.paths.skeleton.clone())
                .unwrap_or_else(|| pipeline::skeleton_path(&input(subjects)));
            let depth_dir = depth_dir.as_deref().or(cfg.paths.depth_dir.as_deref());
            print_json(&pipeline::ingest(&cfg, &skeleton, depth_dir, &cfg.subjects, out)?);
        }
        Command::Extract { subjects } => {
            let dir = input(subjects);
            let arms: Vec<(String, PathBuf)> =
                cfg.subjects.iter().map(|id| (id.clone(), pipeline::arm_path(&dir, id))).collect();
            print_json(&pipeline::extract(&cfg, &arms, out)?);
        }
        Command::Train { subjects, .. } => {
            let dir = input(subjects);
            for id in &cfg.subjects {
                let (_, report) = pipeline::train(&cfg, &pipeline::training_path(&dir, id), id, out)?;
                log::info!(
                    "subject {id}: {} iterations, objective {:.6}",
                    report.iterations,
                    report.loglik_trace.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Reproduce { subjects } => {
            let dir = input(subjects);
            let mut reports = Vec::new();
            for id in &cfg.subjects {
                let report =
                    pipeline::reproduce(&pipeline::model_path(&dir, id), &pipeline::training_path(&dir, id), id, out)?;
                reports.push((id.clone(), report));
            }
            print_json(&reports);
        }
        Command::Simulate { tag, .. } => {
            let (metrics, abort) = pipeline::simulate(&cfg.sim, &cfg.planner, out, tag)?;
            print_json(&metrics);
            if let Some(e) = abort {
                // outputs are written; the abort still decides the exit code
                return Err(PipelineError::from(e).into());
            }
        }
        Command::Metrics { simlog } => {
            print_json(&pipeline::metrics_from_log(&cfg, simlog, out)?);
        }
        Command::All { .. } => {
            print_json(&pipeline::run_all(&cfg, out)?);
        }
    }
    Ok(())
}

fn describe(err: &anyhow::Error) -> String {
    err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDSKILL_LOG", "info").write_style("CDSKILL_LOG_STYLE"))
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, err }) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use std::path::Path;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn stiffness_specs() {
        let cfg = PipelineConfig::default();
        assert_eq!(parse_stiffness("constant:800", &cfg).unwrap(), StiffnessSpec::Constant([800.0; 3]));
        assert_eq!(parse_stiffness("constant:0,800,400", &cfg).unwrap(), StiffnessSpec::Constant([0.0, 800.0, 400.0]));
        let StiffnessSpec::Model { path, axes, kz, .. } = parse_stiffness("model:out/model_A.json", &cfg).unwrap() else {
            panic!()
        };
        assert_eq!(path, Path::new("out/model_A.json"));
        assert_eq!(axes, SkillAxes::YOnly);
        assert_eq!(kz, cfg.experiments.kz);
        for bad in ["800", "constant:", "constant:1,2", "constant:-5", "spring:3", "constant:nan"] {
            assert!(parse_stiffness(bad, &cfg).is_err(), "{bad}");
        }
    }
}
