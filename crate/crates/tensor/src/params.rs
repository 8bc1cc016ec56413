use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

/// Named model parameters, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Argument(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Number of scalar values across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Copies values from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(TensorError::Argument("parameter layouts differ".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(TensorError::Argument(format!(
                    "parameter {} does not match {}",
                    dst.name, src.name
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Converts every parameter to another element type.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            let data = e.value.data().iter().map(|v| G::c(v.as_f64())).collect();
            let t = Tensor::from_vec(e.value.shape(), data).expect("same shape");
            out.add(e.name.clone(), t, e.trainable).expect("unique names");
        }
        out
    }
}

/// Gradients produced by one backward pass, or summed over several.
#[derive(Debug, Clone, Default)]
pub struct Gradients<F> {
    pub(crate) params: Vec<Option<Tensor<F>>>,
    pub(crate) leaves: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            params: vec![None; n_params],
            leaves: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, var: crate::Var) -> Option<&Tensor<F>> {
        self.leaves.get(var.index()).and_then(|g| g.as_ref())
    }

    pub fn param_slots(&self) -> usize {
        self.params.len()
    }

    /// Sums parameter gradients of `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => d.add_assign(s),
                (None, Some(s)) => *dst = Some(s.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.params.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }

    pub fn has_nan(&self) -> bool {
        self.params.iter().flatten().any(|g| g.has_nan())
    }
}
