use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Position in the owning [`ParamSet`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

pub(crate) enum Init {
    Zeros,
    Ones,
    /// Glorot-uniform over the two dimensions of a matrix.
    Glorot,
    Normal(f64),
}

pub(crate) fn init_tensor<R: Rng>(shape: Vec<usize>, init: Init, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Glorot => {
            let fan = (shape[0] + shape[shape.len() - 1]) as f64;
            let a = (6.0 / fan).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a)).collect()
        }
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
    };
    Tensor::new(shape, data).expect("shape and data agree")
}
