//! `MWCKPT` files: magic, u32 version, u64 metadata length, JSON metadata,
//! then little-endian f64 tensors in metadata table order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{forward, ClassSample, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::objective::TemplatedSample;

const MAGIC: &[u8] = b"MWCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointProvenance {
    pub corpus: String,
    /// Stages and objectives applied so far, oldest first.
    pub history: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub m: Params,
    pub v: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub training_state: Option<TrainingState>,
    pub provenance: CheckpointProvenance,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
    provenance: CheckpointProvenance,
    optimizer_step: Option<u64>,
}

impl ModelCheckpoint {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(ModelCheckpoint {
            params: Params::init(&config, seed),
            config,
            training_state: None,
            provenance: CheckpointProvenance::default(),
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelCheckpoint {
            params: Params::zeros(&config),
            config,
            training_state: None,
            provenance: CheckpointProvenance::default(),
        })
    }

    pub fn forward_mlm(&self, sample: &TemplatedSample) -> Result<Vec<Vec<f64>>> {
        forward::forward_mlm(&self.params, &self.config, sample)
    }

    pub fn forward_classifier(&self, ids: &[u32], mask: &[bool]) -> Result<Vec<f64>> {
        forward::forward_classifier(&self.params, &self.config, ids, mask)
    }

    pub fn mlm_logits_at(&self, ids: &[u32], mask: &[bool], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        forward::mlm_logits_at(&self.params, &self.config, ids, mask, positions)
    }

    pub fn classify(&self, sample: &ClassSample) -> Result<Vec<f64>> {
        self.forward_classifier(&sample.input_ids, &sample.attention_mask)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let specs = self.params.specs(&self.config);
        let mut tensors: Vec<TensorEntry> = specs
            .iter()
            .map(|s| TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
            })
            .collect();
        let mut data: Vec<&[f64]> = self.params.slices();
        if let Some(state) = &self.training_state {
            for (prefix, moments) in [("opt.m.", &state.m), ("opt.v.", &state.v)] {
                tensors.extend(specs.iter().map(|s| TensorEntry {
                    name: format!("{prefix}{}", s.name),
                    shape: s.shape.clone(),
                }));
                data.extend(moments.slices());
            }
        }
        let meta = Metadata {
            config: self.config.clone(),
            dtype: "f64".into(),
            tensors,
            provenance: self.provenance.clone(),
            optimizer_step: self.training_state.as_ref().map(|s| s.step),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let n: usize = data.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        for t in data {
            for v in t {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| fmt("bad magic"))?;
        if rest.len() < 12 {
            return Err(fmt("truncated header"));
        }
        let version = u32::from_le_bytes(rest[..4].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(rest[4..12].try_into().unwrap()) as usize;
        let rest = &rest[12..];
        if rest.len() < len {
            return Err(fmt("truncated metadata"));
        }
        let meta: Metadata = serde_json::from_slice(&rest[..len]).map_err(|e| fmt(&e.to_string()))?;
        if meta.dtype != "f64" {
            return Err(fmt(&format!("unsupported dtype {}", meta.dtype)));
        }
        meta.config.validate()?;
        let mut raw = rest[len..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        if rest[len..].len() % 8 != 0 {
            return Err(fmt("tensor data is not a whole number of f64 values"));
        }

        let mut params = Params::zeros(&meta.config);
        let specs = params.specs(&meta.config);
        let with_state = meta.optimizer_step.is_some();
        let expected = if with_state { 3 * specs.len() } else { specs.len() };
        if meta.tensors.len() != expected {
            return Err(fmt(&format!("expected {expected} tensors, found {}", meta.tensors.len())));
        }
        let mut fill = |target: &mut Params, prefix: &str, offset: usize| -> Result<()> {
            for (i, (spec, t)) in specs.iter().zip(target.slices_mut()).enumerate() {
                let entry = &meta.tensors[offset + i];
                if entry.name != format!("{prefix}{}", spec.name) || entry.shape != spec.shape {
                    return Err(fmt(&format!("tensor {} does not match the config", entry.name)));
                }
                for v in t.iter_mut() {
                    *v = raw.next().ok_or_else(|| fmt("truncated tensor data"))?;
                }
            }
            Ok(())
        };
        fill(&mut params, "", 0)?;
        let training_state = match meta.optimizer_step {
            Some(step) => {
                let mut m = params.zeros_like();
                let mut v = params.zeros_like();
                fill(&mut m, "opt.m.", specs.len())?;
                fill(&mut v, "opt.v.", 2 * specs.len())?;
                Some(TrainingState { step, m, v })
            }
            None => None,
        };
        if raw.next().is_some() {
            return Err(fmt("trailing tensor data"));
        }
        if !params.all_finite() {
            return Err(Error::Numerics("checkpoint contains non-finite parameters".into()));
        }
        Ok(ModelCheckpoint {
            config: meta.config,
            params,
            training_state,
            provenance: meta.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
