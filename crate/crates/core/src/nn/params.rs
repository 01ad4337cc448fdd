use indexmap::IndexMap;

use super::{NnError, Tensor};

/// Index of a parameter inside its [`ParameterSet`].
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    grad: Tensor,
}

/// Named parameters with a parallel gradient slot for each one.
///
/// Iteration order is insertion order, so two sets built by the same code
/// enumerate identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    slots: IndexMap<String, Slot>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        let (id, _) = self.slots.insert_full(name, Slot { value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.slots.get_index_of(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.slots.get_index(id).map(|(k, _)| k.as_str()).expect("parameter id out of range")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id].grad
    }

    /// Value and gradient slot of one parameter, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Tensor, &mut Tensor) {
        let slot = &mut self.slots[id];
        (&slot.value, &mut slot.grad)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn get_grad(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.grad)
    }

    /// `(name, value, grad)` triples in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value, &s.grad))
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.values().all(|s| s.value.is_finite())
    }

    pub fn grads_finite(&self) -> bool {
        self.slots.values().all(|s| s.grad.is_finite())
    }

    /// True when both sets have the same names in the same order with the same shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.slots.len() == other.slots.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|((ka, a), (kb, b))| ka == kb && a.value.shape() == b.value.shape())
    }

    /// Overwrites every value with the corresponding value of `src`.
    /// Gradient slots are left alone.
    pub fn copy_values_from(&mut self, src: &ParameterSet) -> Result<(), NnError> {
        if !self.same_layout(src) {
            return Err(NnError::Usage("parameter layouts differ".into()));
        }
        for (dst, src) in self.slots.values_mut().zip(src.slots.values()) {
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> f64 {
        self.slots
            .values()
            .zip(other.slots.values())
            .map(|(a, b)| a.value.max_abs_diff(&b.value))
            .fold(0.0, f64::max)
    }

    /// Euclidean norm over all gradient slots.
    pub fn grad_norm(&self) -> f64 {
        self.slots
            .values()
            .flat_map(|s| s.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for slot in self.slots.values_mut() {
            slot.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }
}
