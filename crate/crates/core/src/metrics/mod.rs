//! Evaluation: baseline-adjusted scores, relative final scores, and per-level
//! perturbation sensitivity (APS) with its normalized form (RAPS).

mod report;
mod score;
mod sensitivity;
mod sweep;

pub use report::{
    raps_episode_header, raps_header, write_raps_csv, write_raps_episode_csv, write_rfs_csv, write_scores_csv, RfsRow,
    RFS_HEADER, SCORE_HEADER,
};
pub use score::{episode_score, evaluate_agent, rfs, Agent, GtnAgent, OracleAgent, ScoreSample, UniformAgent};
pub use sensitivity::{
    aps, level_aps, raps, sensitivity_report, spearman, SensitivityOptions, SensitivityReport, APS_DELTA,
};
pub use sweep::{raps_episode_sweep, raps_sweep, RapsEpisodeRow, RapsRow, RapsTable};

use thiserror::Error;

use crate::envs::EnvError;
use crate::model::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("RFS undefined: single-task reference score {single_score} is zero (task not learned)")]
    UndefinedRfs { single_score: f64 },
    #[error("APS undefined: clean score {clean_score} is not positive")]
    UndefinedAps { clean_score: f64 },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("network has no policy head of size {0}")]
    MissingHead(usize),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
