use std::io;

use thiserror::Error;

/// Errors produced by the spike-budget engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },

    #[error("spike tensor entry {value} at index {index} is not binary")]
    NonBinarySpike { index: usize, value: u8 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("event {index} at t={t}us lies outside the window [0, {duration_us})")]
    EventOutOfWindow { index: usize, t: u64, duration_us: u64 },

    #[error("event {index} at ({x}, {y}) is outside the {width}x{height} sensor")]
    EventOutOfBounds { index: usize, x: u16, y: u16, width: u16, height: u16 },

    #[error("event {index} has polarity {polarity}; expected 0 or 1")]
    BadPolarity { index: usize, polarity: u8 },

    #[error("event timestamps are not sorted at event {index}")]
    UnsortedEvents { index: usize },

    #[error("bad magic number {found:#010x}")]
    BadIdxMagic { found: u32 },

    #[error("bad event file magic")]
    BadEventMagic,

    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },

    #[error("dimension product overflows: {dims:?}")]
    DimensionOverflow { dims: Vec<u32> },

    #[error("event count mismatch: header says {header}, payload holds {payload}")]
    EventCountMismatch { header: usize, payload: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} is outside the active class set")]
    InactiveLabel { label: usize },

    #[error("label {label} exceeds class count {num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("forward record is stale: network changed since the forward pass")]
    StaleRecord,

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("empty spike tensor")]
    EmptyTensor,

    #[error("invalid task schedule: {0}")]
    Schedule(String),

    #[error("invalid accuracy matrix: {0}")]
    Matrix(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at task {task}, step {step}: task loss {loss}, spike rate {rate}")]
    Diverged { task: usize, step: usize, loss: f64, rate: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
