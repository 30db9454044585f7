//! Block families, networks built from them, and parameter accounting.

pub mod checkpoint;
pub mod forcing;
pub mod network;
pub mod params;
pub mod steps;

pub use forcing::{glorot_bound, Affine, ForcingFunction};
pub use network::{Architecture, ForwardOutput, Mode, Network, NetworkConfig, Readout, Trajectory};
pub use params::{parameter_count, weight_count, ParamArch, WeightRatio};
pub use steps::{LayerHistory, StateVector};
