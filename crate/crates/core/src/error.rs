use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate (lon {lon}, lat {lat})")]
    InvalidPoint { lon: f64, lat: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kind} index {index} outside vocabulary of size {size}")]
    Vocabulary {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("segment too short: {0} message(s)")]
    SegmentTooShort(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("schema version mismatch: found {found}, expected {expected}; regenerate the file with this version")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
