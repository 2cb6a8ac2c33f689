use thiserror::Error;

use slicefuse::checkpoint::CheckpointError;
use slicefuse::crf::CrfError;
use slicefuse::data::DataError;
use slicefuse::fusion::FusionError;
use slicefuse::metrics::MetricsError;
use slicefuse::mlp::MlpError;
use slicefuse::tensor::TensorError;
use slicefuse::training::TrainError;

/// Command failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Exit code 2.
    #[error("{0}")]
    Data(String),
    /// Exit code 3.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn tensor_error(e: TensorError) -> CliError {
    match e {
        TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        tensor_error(e)
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Tensor(t) => tensor_error(t),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MlpError> for CliError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::Tensor(t) => tensor_error(t),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Config(_) | TrainError::Parse(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CrfError> for CliError {
    fn from(e: CrfError) -> Self {
        match e {
            CrfError::NonFinite(_) => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) | DataError::Fractions(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFinite => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
