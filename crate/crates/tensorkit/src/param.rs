use crate::element::Element;
use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    /// Optimizer partition tag, e.g. `"gen"` or `"dis"`.
    pub group: String,
    pub tensor: Tensor<T>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    frozen: bool,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(ParamEntry {
            name,
            group: group.into(),
            tensor: tensor.with_grad(),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Frozen stores enter graphs as constants and never receive gradient.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Adds the parameter gradients of one backward sweep onto stored grads.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            self.entries[id.0].tensor.accumulate_grad(g);
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    group: e.group.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }
}
