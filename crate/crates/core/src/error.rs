use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("target out of reach: best position error {position_error:.6} m, orientation error {orientation_error:.6} rad")]
    OutOfReach {
        position_error: f64,
        orientation_error: f64,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{path}: {reason}")]
    InvalidSequence { path: String, reason: String },

    #[error("no keyframe at t={t} on {target}")]
    NoSuchKeyframe { target: String, t: f64 },

    #[error("paste window overlaps existing keyframe at t={t} on {target}")]
    PasteOverlap { target: String, t: f64 },

    #[error("invalid time scale factor {0}: must be finite and > 0")]
    InvalidScaleFactor(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence targets robot `{sequence}` but model is `{model}`")]
    ModelMismatch { sequence: String, model: String },

    #[error("simulation busy: {0}")]
    Busy(String),

    #[error("trajectory log too short: {0} samples (need at least 3)")]
    LogTooShort(usize),

    #[error("trajectory log has zero duration")]
    ZeroDuration,

    #[error("malformed trajectory log: {0}")]
    MalformedLog(String),

    #[error("unsupported {kind} schema version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Rejects any schema version other than the one this build understands.
pub(crate) fn check_version(kind: &'static str, found: u32, supported: u32) -> Result<()> {
    if found == supported {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion {
            kind,
            found,
            supported,
        })
    }
}

/// Parses a JSON object whose optional top-level `"version"` must equal
/// `supported`; the key is removed before typed deserialization.
pub(crate) fn from_versioned_json<T: serde::de::DeserializeOwned>(
    s: &str,
    kind: &'static str,
    supported: u32,
) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(s)?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(v) = obj.remove("version") {
            let found = v
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| Error::Parse(format!("{kind}: version must be an integer")))?;
            check_version(kind, found, supported)?;
        }
    }
    Ok(serde_json::from_value(value)?)
}
