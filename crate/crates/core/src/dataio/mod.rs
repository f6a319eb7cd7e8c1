//! Trajectory recordings: CSV ingestion, merge episodes, replay evaluation
//! and a synthetic generator.
//!
//! The CSV header is `frame,id,x,y,xVelocity,yVelocity,laneId`. Positions
//! follow the crate convention: `x` along travel, `y` leftward from the
//! outer road edge, lane `0` the ramp.

mod record;
mod replay;
mod synthetic;

use thiserror::Error;

pub use record::{
    load, load_with_rate, read_record, road_for, road_sidecar, write_record, Track, TrackPoint, TrajectoryRecord,
    COLUMNS, DEFAULT_FRAME_RATE,
};
pub use replay::{
    epoch_states, extract_merge_episodes, infer_track, observation_history, replay_all, replay_eval, replay_scenario,
    reproduce, summarize, write_belief_csv, write_summary_csv, write_verdicts_csv, EpisodeResult, MergeEpisode,
    ReplayConfig, ReproduceResult, ReproduceRow, SceneSummary,
};
pub use synthetic::{generate, record_from_outcome, upsample, GeneratorConfig, SyntheticDataset, SyntheticKind};

use crate::world::VehicleId;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("row {row}: duplicate row for frame {frame}, vehicle {id}")]
    Duplicate { row: usize, frame: i64, id: u32 },

    #[error("row {row}: frames of vehicle {id} go backwards")]
    NonMonotone { id: u32, row: usize },

    #[error("row {row}: frames of vehicle {id} are not contiguous")]
    NonContiguous { id: u32, row: usize },

    #[error("frame rate must be positive")]
    FrameRate,

    #[error("vehicle {0} is not in the recording")]
    UnknownVehicle(VehicleId),

    #[error("episode of vehicle {id} spans frames {start}..={end}, outside its track")]
    EpisodeSpan { id: u32, start: i64, end: i64 },

    #[error("{0}")]
    Csv(String),
}
