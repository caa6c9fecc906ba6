use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto exit codes:
/// configuration problems exit 2, numerical failures exit 3, and the
/// mesh size floor exits 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown experiment preset '{0}'")]
    UnknownPreset(String),

    #[error("preset '{preset}' cannot be built with {n} elements: {reason}")]
    BadElementCount {
        preset: &'static str,
        n: usize,
        reason: &'static str,
    },

    #[error("marked index {index} out of range ({len} entities)")]
    BadMarkedIndex { index: usize, len: usize },

    #[error("refinement floor reached: new {kind} size {size:.3e} is below the floor {floor:.3e}")]
    MeshFloor {
        kind: &'static str,
        size: f64,
        floor: f64,
    },

    #[error("diagonal block {block} is numerically singular (reciprocal condition estimate {rcond:.3e})")]
    SingularBlock { block: usize, rcond: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
