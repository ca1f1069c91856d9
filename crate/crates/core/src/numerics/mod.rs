//! Differentiable numeric kernels and the machinery around them: named
//! parameter sets, seeded initialization, a reverse-mode tape, recurrent
//! cells, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod gru;
pub mod kernels;
pub mod tape;

#[cfg(test)]
mod op_grad_tests;

use std::collections::HashMap;

use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use kernels::{conv, ConvSpec};
pub use tape::{Grads, Tape, Var};

/// Named parameter tensors with stable (insertion) iteration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.tensors[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.tensors[i]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (n, t) in self.entries() {
            out.insert(n, t.cast());
        }
        out
    }
}

/// Seeded parameter construction. Weights are uniform in +-1/sqrt(fan_in),
/// biases zero, norm gains one; every tensor draws from its own stream so
/// parameter order never changes the values.
pub struct ParamBuilder<'a, S: Scalar> {
    pub params: &'a mut ParamSet<S>,
    seed: u64,
}

impl<'a, S: Scalar> ParamBuilder<'a, S> {
    pub fn new(params: &'a mut ParamSet<S>, seed: u64) -> Self {
        ParamBuilder { params, seed }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = rng::stream(self.seed, &format!("init:{name}"));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::from_f(rng.gen_range(-bound..bound)))
            .collect();
        self.params.insert(name, Tensor::from_vec(shape, data));
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.params.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) {
        self.params.insert(name, Tensor::full(shape, S::one()));
    }
}

/// Parameters bound onto a tape as leaves, addressable by name.
pub struct ParamVars {
    by_name: HashMap<String, Var>,
    ordered: Vec<Var>,
}

impl ParamVars {
    pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ParamSet<S>) -> Self {
        let mut by_name = HashMap::new();
        let mut ordered = Vec::with_capacity(params.len());
        for (name, tensor) in params.entries() {
            let v = tape.leaf(tensor.clone());
            by_name.insert(name.to_string(), v);
            ordered.push(v);
        }
        ParamVars { by_name, ordered }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Gradients in parameter order; zeros for parameters the loss never
    /// touched.
    pub fn collect_grads<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        grads: &Grads<S>,
    ) -> Vec<Tensor<S>> {
        self.ordered
            .iter()
            .enumerate()
            .map(|(i, &v)| match grads.of(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(params.tensor_at(i).shape()),
            })
            .collect()
    }
}
