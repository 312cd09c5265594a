//! Named parameter arrays and their JSON checkpoint layout:
//!
//! ```text
//! {"params": [{"name": "node_embed", "shape": [10, 16], "data": [...]}, ...]}
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_named(&self) -> Vec<NamedParam> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| NamedParam {
                name: n.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    /// Rebuilds from a checkpoint, requiring names and shapes to match `self`.
    pub fn load_named(&mut self, named: Vec<NamedParam>) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::validation(
                "params",
                format!("expected {} arrays, found {}", self.len(), named.len()),
            ));
        }
        for (i, p) in named.into_iter().enumerate() {
            if p.name != self.names[i] || p.shape != self.tensors[i].shape() {
                return Err(Error::validation(
                    format!("params[{i}]"),
                    format!(
                        "expected {} {:?}, found {} {:?}",
                        self.names[i],
                        self.tensors[i].shape(),
                        p.name,
                        p.shape
                    ),
                ));
            }
            self.tensors[i] = Tensor::new(p.shape, p.data)
                .map_err(|e| Error::validation(format!("params[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}
