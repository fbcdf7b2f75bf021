use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("rt60 of {rt60} s is infeasible for this room (average absorption {absorption:.4} >= 1)")]
    InfeasibleRt60 { rt60: f64, absorption: f64 },

    #[error("energy decay only reached {reached_db:.1} dB, need -25 dB for a T20 fit")]
    InsufficientDecay { reached_db: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("degenerate batch: {count} values per channel, need at least 2 in train mode")]
    DegenerateBatch { count: usize },

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    TrainingDiverged { epoch: usize },

    #[error("group size {requested} unavailable; valid sizes: {valid:?}")]
    Grouping { requested: usize, valid: Vec<usize> },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
