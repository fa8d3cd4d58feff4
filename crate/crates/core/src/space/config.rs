use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output width and stride of one searchable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub stride: usize,
}

/// Fixed backbone around the searchable layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpaceConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub layers: Vec<LayerSpec>,
    pub head_channels: usize,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        SearchSpaceConfig {
            image_size: 28,
            in_channels: 1,
            classes: 4,
            stem_channels: 8,
            stem_stride: 2,
            layers: vec![
                LayerSpec { out_channels: 8, stride: 1 },
                LayerSpec { out_channels: 16, stride: 2 },
                LayerSpec { out_channels: 16, stride: 1 },
                LayerSpec { out_channels: 16, stride: 1 },
                LayerSpec { out_channels: 16, stride: 1 },
            ],
            head_channels: 32,
        }
    }
}

/// Maximum expansion ratio; every superkernel is sized for it.
pub const MAX_EXPANSION: usize = 6;

/// Shape facts of a searchable layer derived from the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedLayer {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Spatial size of the layer input (square).
    pub in_size: usize,
    pub out_size: usize,
}

impl ResolvedLayer {
    /// Only stride-1, width-preserving layers have a residual path and
    /// therefore admit the skip-op.
    pub fn skippable(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expanded(&self, expansion: usize) -> usize {
        self.in_channels * expansion
    }

    pub fn max_expanded(&self) -> usize {
        self.expanded(MAX_EXPANSION)
    }

    /// Squeeze channels for an SE ratio, relative to the block input width.
    pub fn squeeze(&self, se: f64) -> usize {
        (self.in_channels as f64 * se).round() as usize
    }

    pub fn max_squeeze(&self) -> usize {
        self.squeeze(0.5)
    }
}

impl SearchSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers.is_empty() {
            return bad("at least one searchable layer is required".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.image_size == 0 || self.in_channels == 0 || self.stem_channels == 0 || self.head_channels == 0 {
            return bad("image size and channel counts must be positive".into());
        }
        if !matches!(self.stem_stride, 1 | 2) {
            return bad(format!("stem stride must be 1 or 2, got {}", self.stem_stride));
        }
        for l in self.resolve_unchecked() {
            if !matches!(l.stride, 1 | 2) {
                return bad(format!("layer {} stride must be 1 or 2", l.index));
            }
            if l.out_channels == 0 {
                return bad(format!("layer {} has no output channels", l.index));
            }
            if l.in_channels % 4 != 0 {
                return bad(format!(
                    "layer {} input width {} must be a multiple of 4 so SE subsets split evenly",
                    l.index, l.in_channels
                ));
            }
        }
        Ok(())
    }

    fn resolve_unchecked(&self) -> Vec<ResolvedLayer> {
        let mut size = self.image_size.div_ceil(self.stem_stride);
        let mut c = self.stem_channels;
        self.layers
            .iter()
            .enumerate()
            .map(|(index, spec)| {
                let out_size = size.div_ceil(spec.stride.max(1));
                let r = ResolvedLayer {
                    index,
                    in_channels: c,
                    out_channels: spec.out_channels,
                    stride: spec.stride,
                    in_size: size,
                    out_size,
                };
                size = out_size;
                c = spec.out_channels;
                r
            })
            .collect()
    }

    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        self.validate()?;
        Ok(self.resolve_unchecked())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn stem_out_size(&self) -> usize {
        self.image_size.div_ceil(self.stem_stride)
    }

    pub fn last_channels(&self) -> usize {
        self.layers.last().map_or(self.stem_channels, |l| l.out_channels)
    }

    pub fn last_size(&self) -> usize {
        self.resolve_unchecked().last().map_or(self.stem_out_size(), |l| l.out_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_resolves() {
        let cfg = SearchSpaceConfig::default();
        let layers = cfg.resolve().unwrap();
        assert_eq!(layers.len(), 5);
        assert_eq!(layers[0].in_size, 14);
        assert!(layers[0].skippable());
        assert!(!layers[1].skippable());
        assert_eq!(layers[1].out_size, 7);
        assert_eq!(layers[2].max_expanded(), 96);
        assert_eq!(layers[2].max_squeeze(), 8);
        assert_eq!(layers[2].squeeze(0.25), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = SearchSpaceConfig::default();
        cfg.layers.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = SearchSpaceConfig::default();
        cfg.layers[0].stride = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = SearchSpaceConfig::default();
        cfg.stem_channels = 6;
        assert!(cfg.validate().is_err());
    }
}
