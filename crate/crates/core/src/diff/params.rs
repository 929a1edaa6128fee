use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named tensor with a trainability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization and iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.params.push(Param {
            name,
            value,
            trainable: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn expect_id(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Σ of squared entries over trainable tensors.
    pub fn trainable_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.sum_sq())
            .sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Glorot-uniform initialised tensor: U(−a, a), a = √(6 / (fan_in + fan_out)).
    pub fn glorot<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-a..a);
        }
        t
    }
}

/// Gradient slots aligned with a [`ParamSet`]. Frozen parameters keep `None`.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            slots: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn slot_mut(&mut self, id: ParamId, shape: &[usize]) -> &mut Tensor {
        self.slots[id.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.slots[id.0] {
            Some(t) => t.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn merge(&mut self, other: &Grads) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.scale(s);
        }
    }

    /// Adds `λ·θ` for every trainable parameter (gradient of `λ/2‖θ‖²`).
    pub fn add_l2(&mut self, params: &ParamSet, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (i, p) in params.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let slot = self.slot_mut(ParamId(i), p.value.shape());
            for (g, v) in slot.data_mut().iter_mut().zip(p.value.data()) {
                *g += lambda * v;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor>)> {
        self.slots.iter().enumerate().map(|(i, t)| (ParamId(i), t.as_ref()))
    }
}
