use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::float::Float;
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter tensors of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// He-normal initialized weight (`std = sqrt(2 / fan_in)`).
    pub fn add_kaiming(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64_lossy(normal.sample(rng)))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// FNV-1a over the exact bit patterns of every scalar, in order.
    pub fn checksum(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for t in &self.tensors {
            for &v in t.data() {
                h = fnv1a(h, &v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Replaces tensors from a name-ordered list, validating names and shapes.
    pub fn load(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<(), Error> {
        if entries.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.tensors.len(),
                entries.len()
            )));
        }
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, Tensor<T>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph variables for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Float> Graph<T> {
    /// Inserts every parameter of `store` as a leaf.
    pub fn bind(&mut self, store: &ParamStore<T>, trainable: bool) -> Bound {
        let vars = store.tensors.iter().map(|t| self.leaf(t.clone(), trainable)).collect();
        Bound { vars }
    }
}

impl<T: Float> Gradients<T> {
    /// Gradients for a bound store in store order; parameters that received
    /// no gradient get zeros.
    pub fn for_params(&mut self, bound: &Bound, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        bound
            .vars
            .iter()
            .zip(&store.tensors)
            .map(|(&v, t)| self.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
