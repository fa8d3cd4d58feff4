//! Search space: candidate layer types, superkernel encoding, supernet and
//! fixed networks.

pub mod block;
pub mod config;
pub mod dropout;
pub mod fixed;
pub mod superkernel;
pub mod supernet;
pub mod types;

pub use config::{LayerSpec, ResolvedLayer, SearchSpaceConfig};
pub use dropout::{sample_keep, DropoutSchedule};
pub use fixed::{Classifier, FixedNet, KernelView};
pub use superkernel::{Gates, IndicatorMode, Keep, SubsetMasks};
pub use supernet::{Encoding, Supernet, SupernetOutput};
pub use types::{Architecture, LayerRecord, MBConvType, SeRatio};
