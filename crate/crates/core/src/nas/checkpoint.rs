//! Versioned binary container of named `f64` arrays with a JSON manifest.
//!
//! Layout: 8-byte magic, `u32` version, `u64` manifest length (all little
//! endian), the manifest, then every array's data back to back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::BatchNormState;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPNASCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every tensor of `store` under `prefix`.
    pub fn push_store<T: Scalar>(&mut self, prefix: &str, store: &ParamStore<T>) {
        for (_, name, t) in store.iter() {
            self.push(format!("{prefix}{name}"), t);
        }
    }

    /// Overwrites every tensor of `store` from the entries under `prefix`.
    pub fn restore_store<T: Scalar>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, name) in ids {
            let src = self.require(&format!("{prefix}{name}"), store.get(id).shape())?;
            *store.get_mut(id) = src.cast();
        }
        Ok(())
    }

    pub fn push_batchnorm<T: Scalar>(&mut self, prefix: &str, states: &[BatchNormState<T>]) {
        for (i, s) in states.iter().enumerate() {
            let n = s.running_mean.len();
            self.push(format!("{prefix}bn{i}.mean"), &Tensor::new(vec![n], s.running_mean.clone()).expect("bn shape"));
            self.push(format!("{prefix}bn{i}.var"), &Tensor::new(vec![n], s.running_var.clone()).expect("bn shape"));
        }
    }

    pub fn restore_batchnorm<T: Scalar>(&self, prefix: &str, states: &mut [BatchNormState<T>]) -> Result<()> {
        for (i, s) in states.iter_mut().enumerate() {
            let n = [s.running_mean.len()];
            s.running_mean = self.require(&format!("{prefix}bn{i}.mean"), &n)?.cast().into_data();
            s.running_var = self.require(&format!("{prefix}bn{i}.var"), &n)?.cast().into_data();
        }
        Ok(())
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f64>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {name:?}")))?;
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "checkpoint tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let r = TensorRecord {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                r
            })
            .collect();
        let manifest = Manifest {
            version: VERSION,
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, detail: String| Error::Format {
            offset: offset as u64,
            detail,
        };
        if bytes.len() < 20 {
            return Err(fmt(bytes.len(), "truncated checkpoint header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(fmt(0, "not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fmt(8, format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20 + len;
        let json = bytes
            .get(20..data_start)
            .ok_or_else(|| fmt(bytes.len(), "truncated checkpoint manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for r in manifest.tensors {
            let n: usize = r.shape.iter().product();
            let (lo, hi) = (8 * r.offset, 8 * (r.offset + n));
            let raw = data
                .get(lo..hi)
                .ok_or_else(|| fmt(data_start + data.len(), format!("truncated data for tensor {:?}", r.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((r.name, Tensor::new(r.shape, values)?));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
