use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    store: u64,
    index: usize,
}

impl ParamId {
    pub fn store_id(&self) -> u64 {
        self.store
    }

    /// Position within its store, in insertion order.
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// Owned, named parameter tensors of one model.
///
/// Clones keep the store identity, so layer handles created against the
/// original remain valid for the clone.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { id: NEXT_STORE.fetch_add(1, Ordering::Relaxed), params: Vec::new() }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Parameter { name, value, frozen: false });
        ParamId { store: self.id, index: self.params.len() - 1 }
    }

    /// Uniform(−bound, bound) initialization.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)));
        self.add(name, t)
    }

    fn check(&self, id: ParamId) -> usize {
        assert_eq!(id.store, self.id, "parameter handle used with a foreign store");
        id.index
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[self.check(id)].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        let i = self.check(id);
        &mut self.params[i].value
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[self.check(id)].frozen
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    /// Freezes or thaws every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(move |index| ParamId { store: self.id, index })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(|index| ParamId { store: self.id, index })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[self.check(id)].name
    }

    /// Order-sensitive FNV-1a digest over every parameter's bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for x in p.value.data() {
                h = (h ^ x.as_f64().to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// Overwrite values from `(name, tensor)` pairs; every parameter must be
    /// supplied with a matching shape.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = named
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::ModelMismatch(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::ModelMismatch(format!(
                    "parameter {} has shape {:?} in checkpoint, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
