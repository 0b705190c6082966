//! On-disk checkpoints: a directory holding `manifest.toml` and `params.bin`.
//!
//! The manifest lists every tensor with its shape, byte offset and element count
//! into the blob, which is the concatenation of all tensors (sorted by name) as
//! little-endian float64. Two saves of the same checkpoint are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{OptimizerKind, OptimizerState};
use super::tensor::{ParamSet, Tensor};
use crate::blob;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.toml";
pub const BLOB: &str = "params.bin";
const FORMAT: &str = "dancegen-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    kind: String,
    blob: String,
    blob_bytes: u64,
    meta: BTreeMap<String, String>,
    config: toml::Table,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub config: toml::Table,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = toml::Table::try_from(config).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    pub fn config<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        self.config
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(format!("checkpoint config: {e}")))
    }

    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            let mut clean = Tensor::new(t.shape(), t.data().to_vec()).expect("consistent");
            clean.zero_grad();
            self.tensors.insert(format!("{prefix}{name}"), clean);
        }
    }

    pub fn params(&self, prefix: &str) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, t) in &self.tensors {
            if let Some(stripped) = name.strip_prefix(prefix) {
                out.insert(stripped, t.clone())?;
            }
        }
        if out.is_empty() {
            return Err(Error::Validation(format!(
                "checkpoint `{}` has no parameters under `{prefix}`",
                self.kind
            )));
        }
        Ok(out)
    }

    pub fn put_optimizer(&mut self, prefix: &str, opt: &OptimizerState) -> Result<()> {
        let kind = toml::to_string(&opt.kind).map_err(|e| Error::Validation(e.to_string()))?;
        self.meta.insert(format!("{prefix}kind"), kind);
        self.meta.insert(format!("{prefix}lr"), format!("{:?}", opt.lr));
        self.meta.insert(format!("{prefix}step"), opt.step.to_string());
        for (name, buf) in &opt.accum {
            self.tensors
                .insert(format!("{prefix}{name}"), Tensor::vector(buf.clone()));
        }
        Ok(())
    }

    pub fn optimizer(&self, prefix: &str) -> Result<Option<OptimizerState>> {
        let Some(kind) = self.meta.get(&format!("{prefix}kind")) else {
            return Ok(None);
        };
        let kind: OptimizerKind =
            toml::from_str(kind).map_err(|e| Error::Validation(format!("optimizer kind: {e}")))?;
        let lr = self.meta_f64(&format!("{prefix}lr"))?;
        let step = self
            .meta
            .get(&format!("{prefix}step"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Validation("optimizer step missing".into()))?;
        let accum = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.data().to_vec())))
            .collect();
        Ok(Some(OptimizerState { kind, lr, step, accum }))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Validation(format!("checkpoint meta `{key}` missing or not a number")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::ensure_dir(dir)?;
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: (data.len() * 8) as u64,
                len: t.numel() as u64,
            });
            data.extend_from_slice(t.data());
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            kind: self.kind.clone(),
            blob: BLOB.into(),
            blob_bytes: (data.len() * 8) as u64,
            meta: self.meta.clone(),
            config: self.config.clone(),
            tensors: entries,
        };
        blob::write_toml(&dir.join(MANIFEST), &manifest)?;
        blob::write_f64(&dir.join(BLOB), &data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let manifest: Manifest = blob::read_toml(&mpath)?;
        if manifest.format != FORMAT {
            return Err(Error::parse(&mpath, format!("unknown format `{}`", manifest.format)));
        }
        let bpath = dir.join(&manifest.blob);
        let data = blob::read_f64(&bpath, (manifest.blob_bytes / 8) as usize)?;
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let start = (e.offset / 8) as usize;
            let end = start + e.len as usize;
            if e.offset % 8 != 0 || end > data.len() {
                return Err(Error::parse(&bpath, format!("tensor `{}` lies outside the blob", e.name)));
            }
            let t = Tensor::new(&e.shape, data[start..end].to_vec())
                .map_err(|err| Error::parse(&mpath, format!("tensor `{}`: {err}", e.name)))?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::parse(&mpath, format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Self {
            kind: manifest.kind,
            meta: manifest.meta,
            config: manifest.config,
            tensors,
        })
    }
}
