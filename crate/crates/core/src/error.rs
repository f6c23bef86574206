use core::fmt;

/// Errors raised by the core passes.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Timestamps (or other ordered keys) are not strictly increasing.
    Ordering { index: usize, prev: f64, next: f64 },
    /// Not enough samples to perform the operation.
    InsufficientData { needed: usize, got: usize },
    /// A value lies outside its admissible domain.
    Domain(&'static str),
    /// A message cannot be framed with the configured separator.
    Framing(FramingError),
    /// Duplicate tag in the device registry.
    DuplicateTag(alloc::string::String),
    /// Unknown tag in the device registry.
    UnknownTag(alloc::string::String),
    /// The requested tree shape is invalid (missing or non-controller parent).
    Structure(alloc::string::String),
    /// A required telemetry channel is absent.
    MissingChannel(&'static str),
    /// Invalid configuration value.
    Config(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FramingError {
    ContainsSeparator { separator: u8, position: usize },
    Empty,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Ordering { index, prev, next } => write!(
                f,
                "ordering violated at index {index}: {next} does not follow {prev}"
            ),
            Error::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need {needed}, got {got}")
            }
            Error::Domain(what) => write!(f, "value out of domain: {what}"),
            Error::Framing(e) => write!(f, "framing error: {e}"),
            Error::DuplicateTag(tag) => write!(f, "device tag `{tag}` already registered"),
            Error::UnknownTag(tag) => write!(f, "no device with tag `{tag}`"),
            Error::Structure(msg) => write!(f, "invalid device tree: {msg}"),
            Error::MissingChannel(ch) => write!(f, "missing telemetry channel `{ch}`"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl fmt::Display for FramingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FramingError::ContainsSeparator {
                separator,
                position,
            } => write!(
                f,
                "message contains separator byte 0x{separator:02X} at offset {position}"
            ),
            FramingError::Empty => f.write_str("empty messages cannot be framed"),
        }
    }
}

impl core::error::Error for Error {}
impl core::error::Error for FramingError {}

impl From<FramingError> for Error {
    fn from(e: FramingError) -> Self {
        Error::Framing(e)
    }
}
