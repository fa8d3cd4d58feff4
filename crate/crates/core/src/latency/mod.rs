//! Latency lookup tables and the runtime model built on them.

pub mod lutgen;
pub mod model;
pub mod table;

pub use lutgen::lutgen;
pub use model::{type_gates, Algebra, Plain, RuntimeModel};
pub use table::{LatencyTable, LutEntry, LutFile, MonotonePolicy, ScalingFactors};
