use std::collections::BTreeMap;

use crate::io::stf::StfError;

/// One named tensor: dims plus a flat f32 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named tensors keyed by dotted path (`l4.block0.conv1.w`), kept in
/// lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, TensorRecord>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Rejects empty or duplicate names and payloads whose
    /// length differs from the product of `dims`.
    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<(), StfError> {
        let name = name.into();
        if name.is_empty() {
            return Err(StfError::EmptyName);
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(StfError::LengthMismatch {
                name,
                expected,
                found: data.len(),
            });
        }
        if self.tensors.contains_key(&name) {
            return Err(StfError::DuplicateName(name));
        }
        self.tensors.insert(name, TensorRecord { dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorRecord> {
        self.tensors.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<TensorRecord> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorRecord)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total element count over every tensor.
    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(TensorRecord::numel).sum()
    }
}
