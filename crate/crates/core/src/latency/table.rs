use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Architecture, MBConvType, SeRatio};

pub const LUT_VERSION: u32 = 1;
pub const KERNELS: [u8; 2] = [3, 5];
pub const EXPANSIONS: [u8; 2] = [3, 6];

/// Runtimes of the twelve block types of one layer, indexed `[k][e][se]`.
pub type LayerEntries = [[[f64; 3]; 2]; 2];

fn k_index(k: u8) -> Option<usize> {
    KERNELS.iter().position(|&v| v == k)
}

fn e_index(e: u8) -> Option<usize> {
    EXPANSIONS.iter().position(|&v| v == e)
}

fn se_index(se: SeRatio) -> usize {
    match se {
        SeRatio::None => 0,
        SeRatio::Quarter => 1,
        SeRatio::Half => 2,
    }
}

/// On-disk record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutEntry {
    pub layer: usize,
    pub k: u8,
    pub e: u8,
    pub se: f64,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutFile {
    pub version: u32,
    pub fixed_overhead_ms: f64,
    pub entries: Vec<LutEntry>,
}

/// Per-layer runtimes of every block type plus the fixed stem/head cost.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyTable {
    pub fixed_overhead_ms: f64,
    layers: Vec<LayerEntries>,
}

/// Ratios `R(k, e, se) / R(k, e, 0)` for `se` in {0.25, 0.5}, indexed `[k][e][se - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingFactors(pub Vec<[[[f64; 2]; 2]; 2]>);

impl ScalingFactors {
    pub fn get(&self, layer: usize, k: u8, e: u8, se: SeRatio) -> Option<f64> {
        let s = se_index(se).checked_sub(1)?;
        Some(self.0.get(layer)?[k_index(k)?][e_index(e)?][s])
    }

    pub fn len(&self) -> usize {
        self.0.len() * 8
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What to do with a table whose runtimes decrease with a larger kernel or
/// expansion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MonotonePolicy {
    /// Keep the table and log a warning.
    #[default]
    Warn,
    Reject,
}

impl LatencyTable {
    pub fn new(fixed_overhead_ms: f64, layers: Vec<LayerEntries>) -> Result<Self> {
        let t = LatencyTable {
            fixed_overhead_ms,
            layers,
        };
        t.check_values()?;
        Ok(t)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &LayerEntries {
        &self.layers[i]
    }

    /// Runtime of one block type; `None` for an unknown layer or value.
    pub fn get(&self, layer: usize, k: u8, e: u8, se: SeRatio) -> Option<f64> {
        Some(self.layers.get(layer)?[k_index(k)?][e_index(e)?][se_index(se)])
    }

    /// Runtime of `ty` at `layer` (zero for the skip-op).
    pub fn type_ms(&self, layer: usize, ty: MBConvType) -> Result<f64> {
        match ty {
            MBConvType::Skip => Ok(0.0),
            MBConvType::Block { kernel, expansion, se } => self
                .get(layer, kernel, expansion, se)
                .ok_or_else(|| Error::Config(format!("latency table has no layer {layer}"))),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = LutEntry> + '_ {
        self.layers.iter().enumerate().flat_map(|(layer, l)| {
            MBConvType::blocks().map(move |ty| {
                let MBConvType::Block { kernel, expansion, se } = ty else { unreachable!() };
                LutEntry {
                    layer,
                    k: kernel,
                    e: expansion,
                    se: se.value(),
                    ms: l[k_index(kernel).unwrap()][e_index(expansion).unwrap()][se_index(se)],
                }
            })
        })
    }

    pub fn scaling_factors(&self) -> ScalingFactors {
        ScalingFactors(
            self.layers
                .iter()
                .map(|l| {
                    let mut s = [[[0.0; 2]; 2]; 2];
                    for k in 0..2 {
                        for e in 0..2 {
                            for q in 0..2 {
                                s[k][e][q] = l[k][e][q + 1] / l[k][e][0];
                            }
                        }
                    }
                    s
                })
                .collect(),
        )
    }

    /// Descriptions of every monotonicity violation.
    pub fn monotonicity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for se in SeRatio::ALL {
                let q = se_index(se);
                for e in 0..2 {
                    if l[1][e][q] < l[0][e][q] {
                        out.push(format!(
                            "layer {i}: R(5,{},{}) < R(3,{},{})",
                            EXPANSIONS[e],
                            se.value(),
                            EXPANSIONS[e],
                            se.value()
                        ));
                    }
                }
                for k in 0..2 {
                    if l[k][1][q] < l[k][0][q] {
                        out.push(format!(
                            "layer {i}: R({},6,{}) < R({},3,{})",
                            KERNELS[k],
                            se.value(),
                            KERNELS[k],
                            se.value()
                        ));
                    }
                }
            }
        }
        out
    }

    fn check_values(&self) -> Result<()> {
        if !(self.fixed_overhead_ms.is_finite() && self.fixed_overhead_ms >= 0.0) {
            return Err(Error::Config(format!(
                "fixed_overhead_ms must be finite and non-negative, got {}",
                self.fixed_overhead_ms
            )));
        }
        for e in self.entries() {
            if !(e.ms.is_finite() && e.ms > 0.0) {
                return Err(Error::Config(format!(
                    "runtime of layer {} k={} e={} se={} must be positive, got {}",
                    e.layer, e.k, e.e, e.se, e.ms
                )));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> LutFile {
        LutFile {
            version: LUT_VERSION,
            fixed_overhead_ms: self.fixed_overhead_ms,
            entries: self.entries().collect(),
        }
    }

    pub fn from_file(file: &LutFile, policy: MonotonePolicy) -> Result<Self> {
        if file.version != LUT_VERSION {
            return Err(Error::Config(format!("unsupported latency table version {}", file.version)));
        }
        let layers = file.entries.iter().map(|e| e.layer + 1).max().unwrap_or(0);
        let mut slots: Vec<[[[Option<f64>; 3]; 2]; 2]> = vec![Default::default(); layers];
        for e in &file.entries {
            let (k, x) = match (k_index(e.k), e_index(e.e)) {
                (Some(k), Some(x)) => (k, x),
                _ => {
                    return Err(Error::Config(format!(
                        "invalid entry for layer {}: k={} e={}",
                        e.layer, e.k, e.e
                    )))
                }
            };
            let q = se_index(SeRatio::from_value(e.se)?);
            let slot = &mut slots[e.layer][k][x][q];
            if slot.is_some() {
                return Err(Error::Config(format!(
                    "duplicate entry for layer {} k={} e={} se={}",
                    e.layer, e.k, e.e, e.se
                )));
            }
            *slot = Some(e.ms);
        }
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(layers);
        for (i, l) in slots.iter().enumerate() {
            let mut full = [[[0.0; 3]; 2]; 2];
            for (k, &kv) in KERNELS.iter().enumerate() {
                for (x, &ev) in EXPANSIONS.iter().enumerate() {
                    for se in SeRatio::ALL {
                        match l[k][x][se_index(se)] {
                            Some(ms) => full[k][x][se_index(se)] = ms,
                            None => missing.push((i, kv, ev, se.value())),
                        }
                    }
                }
            }
            out.push(full);
        }
        if layers == 0 {
            return Err(Error::Empty("latency table has no entries".into()));
        }
        if !missing.is_empty() {
            return Err(Error::IncompleteTable { missing });
        }
        let table = LatencyTable::new(file.fixed_overhead_ms, out)?;
        let violations = table.monotonicity_violations();
        if !violations.is_empty() {
            match policy {
                MonotonePolicy::Reject => return Err(Error::NonMonotone(violations.join("; "))),
                MonotonePolicy::Warn => {
                    for v in &violations {
                        log::warn!("latency table not monotone: {v}");
                    }
                }
            }
        }
        Ok(table)
    }

    pub fn from_json(s: &str, policy: MonotonePolicy) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?, policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("latency table serializes")
    }

    pub fn load(path: impl AsRef<Path>, policy: MonotonePolicy) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s, policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Sum of table lookups for `arch` plus the fixed overhead.
    pub fn lookup_sum(&self, arch: &Architecture) -> Result<f64> {
        if arch.len() != self.num_layers() {
            return Err(Error::Config(format!(
                "architecture has {} layers, latency table has {}",
                arch.len(),
                self.num_layers()
            )));
        }
        let mut total = self.fixed_overhead_ms;
        for (i, ty) in arch.layers().iter().enumerate() {
            total += self.type_ms(i, *ty)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer() -> LatencyTable {
        let mut l = [[[0.0; 3]; 2]; 2];
        for k in 0..2 {
            for e in 0..2 {
                for q in 0..3 {
                    l[k][e][q] = 1.0 + k as f64 + 2.0 * e as f64 + 0.1 * q as f64;
                }
            }
        }
        LatencyTable::new(0.5, vec![l]).unwrap()
    }

    #[test]
    fn minimal_table_has_twelve_entries_and_four_factor_pairs() {
        let t = LatencyTable::from_json(&one_layer().to_json(), MonotonePolicy::Reject).unwrap();
        assert_eq!(t.entries().count(), 12);
        assert_eq!(t.scaling_factors().len(), 8);
        assert_eq!(t.get(0, 5, 6, SeRatio::Half), Some(4.2));
    }

    #[test]
    fn missing_entry_is_named() {
        let mut f = one_layer().to_file();
        f.entries.retain(|e| !(e.k == 5 && e.e == 6 && e.se == 0.5));
        match LatencyTable::from_file(&f, MonotonePolicy::Warn) {
            Err(Error::IncompleteTable { missing }) => assert_eq!(missing, vec![(0, 5, 6, 0.5)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_monotone_policy() {
        let mut f = one_layer().to_file();
        f.entries[0].ms = 100.0;
        assert!(LatencyTable::from_file(&f, MonotonePolicy::Warn).is_ok());
        assert!(matches!(
            LatencyTable::from_file(&f, MonotonePolicy::Reject),
            Err(Error::NonMonotone(_))
        ));
    }

    #[test]
    fn rejects_bad_values() {
        let mut f = one_layer().to_file();
        f.entries[3].ms = 0.0;
        assert!(LatencyTable::from_file(&f, MonotonePolicy::Warn).is_err());
        let mut f = one_layer().to_file();
        f.entries.push(f.entries[0].clone());
        assert!(LatencyTable::from_file(&f, MonotonePolicy::Warn).is_err());
        let mut f = one_layer().to_file();
        f.version = 2;
        assert!(LatencyTable::from_file(&f, MonotonePolicy::Warn).is_err());
    }
}
