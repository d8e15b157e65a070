//! Forest-of-quadtrees, patch-based adaptive mesh refinement for explicit
//! finite-volume advection in two dimensions.

pub mod config;
pub mod connectivity;
pub mod error;
pub mod forest;
pub mod ghost_parallel;
pub mod ghost_serial;
pub mod output;
pub mod patch;
pub mod solver;
pub mod timing;
pub mod transforms;

pub use connectivity::{Connectivity, Direction, FrameMap, Orientation};
pub use error::{Error, Result};
pub use forest::{Forest, NeighborInfo, Quadrant};
