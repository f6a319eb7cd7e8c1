use thiserror::Error;

use crate::dataio::DataError;
use crate::world::VehicleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("vehicle {0} is not present in the snapshot")]
    UnknownVehicle(VehicleId),

    #[error("vehicle {0} has no adjacent vehicles")]
    NoNeighbors(VehicleId),

    #[error("disturbance covariance is not symmetric positive-definite")]
    SingularCovariance,

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
