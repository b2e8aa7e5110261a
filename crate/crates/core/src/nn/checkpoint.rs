//! Model (and optional optimizer) snapshots.
//!
//! A TOML header records the architecture, instance shape, seed, optimizer
//! step count and tensor table; the payload holds every tensor as
//! little-endian `f32` in table order. Loading reproduces the saved values
//! bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::arch::Architecture;
use super::model::Model;
use super::tensor::{Param, Tensor};
use crate::container::{self, Cursor};
use crate::error::{Error, Result};

const MAGIC: &str = "ising-topo checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: String,
    nodes: usize,
    steps: usize,
    heads: usize,
    seed: u64,
    step_count: u64,
    epochs: usize,
    has_optimizer: bool,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<AdamState<f32>>,
    /// Completed training epochs.
    pub epochs: usize,
}

impl Checkpoint {
    pub fn model_only(model: Model<f32>) -> Self {
        Self {
            model,
            optimizer: None,
            epochs: 0,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .model
            .params()
            .iter()
            .map(|p| (p.name.clone(), &p.tensor))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (p, m) in self.model.params().iter().zip(&opt.m) {
                tensors.push((format!("adam.m.{}", p.name), m));
            }
            for (p, v) in self.model.params().iter().zip(&opt.v) {
                tensors.push((format!("adam.v.{}", p.name), v));
            }
        }
        let header = Header {
            architecture: self.model.architecture().to_string(),
            nodes: self.model.nodes(),
            steps: self.model.steps(),
            heads: self.model.heads(),
            seed: self.model.seed(),
            step_count: self.optimizer.as_ref().map_or(0, |o| o.step),
            epochs: self.epochs,
            has_optimizer: self.optimizer.is_some(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut payload = Vec::new();
        for (_, t) in &tensors {
            container::push_f32s(&mut payload, t.data());
        }
        Ok(container::encode(MAGIC, VERSION, &text, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, payload) = container::decode(MAGIC, VERSION, bytes)?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let arch: Architecture = header.architecture.parse()?;
        let mut cur = Cursor::new(payload);
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n = entry.shape.iter().product();
            tensors.push(Param {
                name: entry.name.clone(),
                tensor: Tensor::from_vec(&entry.shape, cur.f32s(n)?)?,
            });
        }
        cur.finish()?;
        let n_params = if header.has_optimizer {
            if tensors.len() % 3 != 0 {
                return Err(Error::Format("optimizer tensors incomplete".into()));
            }
            tensors.len() / 3
        } else {
            tensors.len()
        };
        let mut rest = tensors.split_off(n_params);
        let model = Model::from_params(arch, header.nodes, header.steps, header.seed, tensors)?;
        if model.heads() != header.heads {
            return Err(Error::Format(format!(
                "header lists {} heads, architecture yields {}",
                header.heads,
                model.heads()
            )));
        }
        let optimizer = if header.has_optimizer {
            let v = rest.split_off(n_params);
            let m = rest;
            for (p, (mm, vv)) in model.params().iter().zip(m.iter().zip(&v)) {
                if mm.name != format!("adam.m.{}", p.name) || vv.name != format!("adam.v.{}", p.name) {
                    return Err(Error::Format(format!("optimizer tensor order broken at `{}`", p.name)));
                }
            }
            Some(AdamState {
                step: header.step_count,
                m: m.into_iter().map(|p| p.tensor).collect(),
                v: v.into_iter().map(|p| p.tensor).collect(),
            })
        } else {
            None
        };
        Ok(Self {
            model,
            optimizer,
            epochs: header.epochs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
