//! Named parameter storage and binding onto a tape.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of named tensors owned by one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform fan-in initialization in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = libm::sqrt(1.0 / fan_in.max(1) as f64);
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Marks every entry frozen (excluded from optimizer updates).
    pub fn freeze(&mut self) {
        self.entries.iter_mut().for_each(|e| e.trainable = false);
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// FNV-1a digest over names, shapes and the exact bit patterns of all
    /// values.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for e in &self.entries {
            feed(e.name.as_bytes());
            for &d in e.value.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            for &x in e.value.data() {
                feed(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Replaces values from `(name, tensor)` pairs; every entry must be
    /// covered with a matching shape.
    pub fn load_named<'a>(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<&'a Tensor>,
    ) -> Result<()> {
        for e in &mut self.entries {
            let t = lookup(&e.name)
                .ok_or_else(|| Error::contract(alloc::format!("missing tensor `{}`", e.name)))?;
            if t.shape() != e.value.shape() {
                return Err(Error::shape("load_named", e.value.shape(), t.shape()));
            }
            e.value = t.clone();
        }
        Ok(())
    }

    /// Puts every entry on the tape: trainable entries as parameter leaves,
    /// frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.trainable {
                    tape.param(ParamId(i), e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// Puts every entry on the tape as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.constant(e.value.clone()))
            .collect();
        Binding { vars }
    }
}

/// Tape handles of a store's entries for one forward pass.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
