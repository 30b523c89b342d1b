use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a tensor registered in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learned tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique name. Parameters always require gradients.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::invalid(
                "ParamSet::add",
                format!("duplicate parameter name `{name}`"),
            ));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad(true));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    /// Total number of learned scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds a set of gradients into the per-tensor gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (id, g) in &grads.entries {
            self.tensors
                .get_mut(id.0)
                .ok_or_else(|| AutodiffError::invalid("accumulate", "unknown parameter id"))?
                .accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrites every parameter from `(name, tensor)` records.
    ///
    /// The records must name exactly the registered parameters with identical
    /// shapes; the first discrepancy is reported.
    pub fn load_records(&mut self, records: &[(String, Tensor<f32>)]) -> Result<()> {
        for (name, t) in records {
            let Some(&i) = self.index.get(name) else {
                return Err(AutodiffError::Checkpoint(format!(
                    "unexpected tensor `{name}` in checkpoint"
                )));
            };
            if self.tensors[i].shape() != t.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?} in checkpoint but {:?} in model",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
        }
        if let Some(missing) = self.names.iter().find(|n| !records.iter().any(|(r, _)| r == *n)) {
            return Err(AutodiffError::Checkpoint(format!(
                "tensor `{missing}` missing from checkpoint"
            )));
        }
        for (name, t) in records {
            let i = self.index[name];
            let dst = self.tensors[i].data_mut();
            for (d, s) in dst.iter_mut().zip(t.data()) {
                *d = T::lit(*s as f64);
            }
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    pub(crate) entries: Vec<(ParamId, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.entries.iter().map(|(i, g)| (*i, g.as_slice()))
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: T) {
        for (_, g) in &mut self.entries {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
