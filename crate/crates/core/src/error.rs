use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration or input failed validation. `field` names the offending input.
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },

    /// A policy produced an allocation that breaks the slot invariants.
    #[error("slot {slot}: invalid allocation: {message}")]
    InvalidAllocation { slot: u64, message: String },

    #[error("subset enumeration refused: {num_queues} queues exceeds the limit of {limit}")]
    EnumerationLimit { num_queues: usize, limit: usize },

    #[error("rate vector is outside the capacity interior (m = {margin})")]
    OutsideInterior { margin: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("truncation mass {mass:e} at cap {cap} exceeds {threshold:e}; use a larger cap")]
    Truncation { cap: u32, mass: f64, threshold: f64 },

    #[error("oracle: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), message: message.into() }
    }
}
