// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use crate::error::{Error, Result};
use crate::tape::Tensor;

/// Ordered, named parameter tensors. Order is the optimizer's slot order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        if let Some(i) = self.position(name) {
            self.tensors[i] = tensor;
        } else {
            self.names.push(name.to_string());
            self.tensors.push(tensor);
        }
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Format(format!("missing parameter {name:?}")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Writes `<dir>/<name>.rstn` for every parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (n, t) in self.names.iter().zip(&self.tensors) {
            t.save(&dir.join(format!("{n}.rstn")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, names: &[String]) -> Result<Self> {
        let mut set = Self::new();
        for n in names {
            set.insert(n, Tensor::load(&dir.join(format!("{n}.rstn")))?);
        }
        Ok(set)
    }

    /// Order-sensitive checksum over names and raw bits.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            bytes.extend_from_slice(n.as_bytes());
            t.write_to(&mut bytes).expect("writing to a Vec cannot fail");
        }
        crate::hashing::sha256_hex(&bytes)
    }
}
