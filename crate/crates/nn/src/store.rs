use crate::{Real, Tensor};

/// Handle to a named tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Trainable parameter.
    Param,
    /// Non-trainable state such as normalization running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<S> {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor<S>,
}

/// Flat, ordered collection of every parameter and buffer of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    entries: Vec<Entry<S>>,
}

/// Batch statistics produced by a training-mode batch norm, to be folded
/// into the running averages once the step is accepted.
#[derive(Clone, Debug)]
pub struct RunningStatUpdate<S> {
    pub mean_buffer: ParamId,
    pub var_buffer: ParamId,
    pub momentum: f64,
    pub batch_mean: Vec<S>,
    /// Unbiased batch variance.
    pub batch_var: Vec<S>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.push(name.into(), EntryKind::Param, value)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.push(name.into(), EntryKind::Buffer, value)
    }

    fn push(&mut self, name: String, kind: EntryKind, value: Tensor<S>) -> ParamId {
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(Entry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &Entry<S> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[Entry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids of trainable parameters.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|id| self.entries[id.0].kind == EntryKind::Param)
    }

    /// Number of trainable scalars, optionally restricted to names with a prefix.
    pub fn count_params(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param && e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
        }
    }

    pub fn apply_running_stats(&mut self, updates: &[RunningStatUpdate<S>]) {
        for u in updates {
            let m = S::from_f64_lossy(u.momentum);
            let keep = S::one() - m;
            for (r, &b) in self
                .get_mut(u.mean_buffer)
                .data_mut()
                .iter_mut()
                .zip(&u.batch_mean)
            {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self
                .get_mut(u.var_buffer)
                .data_mut()
                .iter_mut()
                .zip(&u.batch_var)
            {
                *r = keep * *r + m * b;
            }
        }
    }
}
