use crate::topology::DeviceId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate device id {0}")]
    DuplicateDevice(u64),

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("program failed on device {device} at round {round}: {reason}")]
    ProgramFailed {
        device: DeviceId,
        round: u64,
        reason: String,
    },

    #[error("incomplete snapshot: device {0} never fired")]
    IncompleteSnapshot(DeviceId),

    #[error("malformed partition: device {device} follows {leader}, which does not lead itself")]
    MalformedPartition { device: DeviceId, leader: DeviceId },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
