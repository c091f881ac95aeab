use serde::{Deserialize, Serialize};

use super::{Real, Tensor};

/// Handle of a trainable parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Param<T> {
    name: String,
    group: usize,
    value: Tensor<T>,
}

/// Named parameter set partitioned into learning-rate groups.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
    groups: Vec<String>,
}

/// A view of one group: its name and member handles.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub members: Vec<ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), groups: Vec::new() }
    }

    /// Registers a parameter; the group is created on first use.
    pub fn add(&mut self, name: impl Into<String>, group: &str, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let group = match self.groups.iter().position(|g| g == group) {
            Some(g) => g,
            None => {
                self.groups.push(group.to_string());
                self.groups.len() - 1
            }
        };
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group_of(&self, id: ParamId) -> &str {
        &self.groups[self.params[id.0].group]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.groups
            .iter()
            .enumerate()
            .map(|(gi, name)| ParamGroup {
                name: name.clone(),
                members: self.ids().filter(|id| self.params[id.0].group == gi).collect(),
            })
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn numel_in_group(&self, group: &str) -> usize {
        self.params.iter().filter(|p| self.groups[p.group] == group).map(|p| p.value.len()).sum()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_values(&mut self, values: Vec<Tensor<T>>) {
        assert_eq!(values.len(), self.params.len());
        for (p, v) in self.params.iter_mut().zip(values) {
            assert_eq!(p.value.shape(), v.shape(), "shape mismatch restoring {}", p.name);
            p.value = v;
        }
    }
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Real> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], momentum: 0.1, eps: 1e-5 }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}
