use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squeeze-and-excitation ratio of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeRatio {
    None,
    Quarter,
    Half,
}

impl SeRatio {
    pub const ALL: [SeRatio; 3] = [SeRatio::None, SeRatio::Quarter, SeRatio::Half];

    pub fn value(self) -> f64 {
        match self {
            SeRatio::None => 0.0,
            SeRatio::Quarter => 0.25,
            SeRatio::Half => 0.5,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        match v {
            x if x == 0.0 => Ok(SeRatio::None),
            x if x == 0.25 => Ok(SeRatio::Quarter),
            x if x == 0.5 => Ok(SeRatio::Half),
            _ => Err(Error::Config(format!("se ratio must be 0, 0.25 or 0.5, got {v}"))),
        }
    }
}

/// One candidate layer: an MBConv block `(kernel, expansion, se)` or the skip-op.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MBConvType {
    Skip,
    Block { kernel: u8, expansion: u8, se: SeRatio },
}

impl MBConvType {
    /// The twelve non-skip candidates.
    pub fn blocks() -> impl Iterator<Item = MBConvType> {
        [3u8, 5].into_iter().flat_map(|kernel| {
            [3u8, 6].into_iter().flat_map(move |expansion| {
                SeRatio::ALL
                    .into_iter()
                    .map(move |se| MBConvType::Block { kernel, expansion, se })
            })
        })
    }

    /// All thirteen candidates, skip first.
    pub fn all() -> impl Iterator<Item = MBConvType> {
        std::iter::once(MBConvType::Skip).chain(Self::blocks())
    }

    /// Candidates available to a layer.
    pub fn candidates(skippable: bool) -> Vec<MBConvType> {
        if skippable {
            Self::all().collect()
        } else {
            Self::blocks().collect()
        }
    }

    pub fn block(kernel: u8, expansion: u8, se: SeRatio) -> Result<Self> {
        if !matches!(kernel, 3 | 5) || !matches!(expansion, 3 | 6) {
            return Err(Error::Config(format!("no MBConv-{kernel}x{kernel}-{expansion}")));
        }
        Ok(MBConvType::Block { kernel, expansion, se })
    }

    /// Largest candidate, MBConv-5x5-6-0.5.
    pub const MAX: MBConvType = MBConvType::Block {
        kernel: 5,
        expansion: 6,
        se: SeRatio::Half,
    };

    /// Smallest non-skip candidate, MBConv-3x3-3-0.
    pub const MIN: MBConvType = MBConvType::Block {
        kernel: 3,
        expansion: 3,
        se: SeRatio::None,
    };

    pub fn is_skip(self) -> bool {
        matches!(self, MBConvType::Skip)
    }
}

impl fmt::Display for MBConvType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MBConvType::Skip => write!(f, "skip"),
            MBConvType::Block { kernel, expansion, se } => {
                write!(f, "MBConv-{kernel}x{kernel}-{expansion}-{}", se.value())
            }
        }
    }
}

/// Per-layer record of the architecture JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub kernel: u8,
    pub expansion: u8,
    pub se: f64,
    pub skip: bool,
}

/// Decoded network: one candidate per searchable layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture(pub Vec<MBConvType>);

impl Architecture {
    pub fn layers(&self) -> &[MBConvType] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Skip layers are exported with the minimal block's kernel and expansion.
    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.0
            .iter()
            .enumerate()
            .map(|(layer, t)| match *t {
                MBConvType::Skip => LayerRecord {
                    layer,
                    kernel: 3,
                    expansion: 3,
                    se: 0.0,
                    skip: true,
                },
                MBConvType::Block { kernel, expansion, se } => LayerRecord {
                    layer,
                    kernel,
                    expansion,
                    se: se.value(),
                    skip: false,
                },
            })
            .collect()
    }

    pub fn from_records(records: &[LayerRecord]) -> Result<Self> {
        let mut sorted: Vec<&LayerRecord> = records.iter().collect();
        sorted.sort_by_key(|r| r.layer);
        let mut layers = Vec::with_capacity(sorted.len());
        for (i, r) in sorted.iter().enumerate() {
            if r.layer != i {
                return Err(Error::Config(format!("architecture layers not contiguous at index {i}")));
            }
            layers.push(if r.skip {
                MBConvType::Skip
            } else {
                MBConvType::block(r.kernel, r.expansion, SeRatio::from_value(r.se)?)?
            });
        }
        Ok(Architecture(layers))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_records()).expect("records serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let records: Vec<LayerRecord> = serde_json::from_str(s)?;
        Self::from_records(&records)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}
