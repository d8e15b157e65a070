use std::path::PathBuf;

use crate::forest::Quadrant;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid connectivity: {0}")]
    Connectivity(String),

    #[error("level {level} exceeds the supported maximum of {max}")]
    LevelOutOfRange { level: u32, max: u32 },

    #[error("quadrant {0:?} is not a leaf of the forest")]
    NotALeaf(Quadrant),

    #[error("quadrants do not form a sibling family")]
    NotAFamily,

    #[error("forest is not 2:1 balanced near {quad:?} (neighbor level {neighbor_level})")]
    Unbalanced { quad: Quadrant, neighbor_level: u8 },

    #[error("ghost region {region} of {quad:?} is not adjacent to the source patch")]
    RegionNotAdjacent {
        quad: Quadrant,
        region: &'static str,
    },

    #[error("patch level mismatch: expected source level {expected}, found {found}")]
    LevelMismatch { expected: u8, found: u8 },

    #[error("interpolation stencil for {quad:?} reads a fine ghost region of its coarse source")]
    LocalityViolation { quad: Quadrant },

    #[error("region {region} of {quad:?} is not on a physical boundary")]
    NotPhysicalBoundary {
        quad: Quadrant,
        region: &'static str,
    },

    #[error("rank {rank}: missing ghost patch for leaf {leaf}")]
    MissingGhostPatch { rank: usize, leaf: usize },

    #[error("rank {rank}: exchange_end called without exchange_begin")]
    ExchangeNotStarted { rank: usize },

    #[error("non-finite value after advancing patch {0:?}")]
    NonFinite(Quadrant),

    #[error("CFL number {0} exceeds 1")]
    CflExceeded(f64),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("malformed dump: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
