//! Stage orchestration for the end-to-end experiment.
//!
//! Stages exchange data only through files under the work directory. Each
//! completed stage leaves a stamp carrying the configuration hash, so a
//! rerun with an unchanged configuration is skipped and a stage whose
//! inputs came from another configuration refuses to run.

pub mod config;
pub mod eval;
pub mod report;
pub mod rtf;
mod stages;
pub mod workspace;

use std::fmt;
use std::str::FromStr;

pub use config::{PipelineConfig, RegressionInputs};
pub use eval::{EvalSummary, SystemResult};
pub use report::{report, Report};
pub use rtf::{bench_rtf, RtfReport, RtfRow};
pub use stages::dump_m;
pub use workspace::{Stamp, Workspace};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Prep,
    TrainEmbed,
    ExtractSvr,
    TrainAm,
    Sat,
    TrainFlhuc,
    Adapt,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Prep,
        Stage::TrainEmbed,
        Stage::ExtractSvr,
        Stage::TrainAm,
        Stage::Sat,
        Stage::TrainFlhuc,
        Stage::Adapt,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prep => "prep",
            Stage::TrainEmbed => "train-embed",
            Stage::ExtractSvr => "extract-svr",
            Stage::TrainAm => "train-am",
            Stage::Sat => "sat",
            Stage::TrainFlhuc => "train-flhuc",
            Stage::Adapt => "adapt",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Direct prerequisites.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Prep => &[],
            Stage::TrainEmbed => &[Stage::Prep],
            Stage::ExtractSvr => &[Stage::TrainEmbed],
            Stage::TrainAm => &[Stage::ExtractSvr],
            Stage::Sat => &[Stage::TrainAm],
            Stage::TrainFlhuc => &[Stage::Sat],
            Stage::Adapt => &[Stage::Sat],
            Stage::Evaluate => &[Stage::TrainFlhuc, Stage::Adapt],
        }
    }

    /// True when `other` is a direct or transitive prerequisite.
    pub fn depends_on(self, other: Stage) -> bool {
        self.deps().iter().any(|&d| d == other || d.depends_on(other))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Outputs already exist for the current configuration.
    UpToDate,
}

/// Runs one stage. Without `force`, a stage already stamped with the current
/// configuration hash is left alone.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    cfg.validate()?;
    let ws = Workspace::new(cfg);
    ws.require(stage)?;
    if !force && ws.is_current(stage) {
        log::info!("stage {stage} is up to date (config {})", ws.hash);
        return Ok(StageOutcome::UpToDate);
    }
    ws.invalidate_from(stage)?;
    log::info!("stage {stage} starting (config {}, seed {})", ws.hash, cfg.seed);
    let started = std::time::Instant::now();
    let outputs = stages::run(cfg, &ws, stage)?;
    let secs = started.elapsed().as_secs_f64();
    let log_line = format!(
        "stage {stage} config {} seed {} outputs {} elapsed {secs:.1}s\n",
        ws.hash,
        cfg.seed,
        outputs.join(",")
    );
    crate::io::write_atomic(&ws.path(&format!("logs/{}.log", stage.name())), log_line.as_bytes())?;
    ws.write_stamp(stage, outputs)?;
    log::info!("stage {stage} finished in {secs:.1}s");
    Ok(StageOutcome::Ran)
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig, force: bool) -> Result<Vec<(Stage, StageOutcome)>> {
    Stage::ALL
        .into_iter()
        .map(|s| run_stage(cfg, s, force).map(|o| (s, o)))
        .collect()
}

/// Worker threads for evaluation, from `OTF_ADAPT_THREADS` when set.
pub fn eval_threads() -> usize {
    std::env::var("OTF_ADAPT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
