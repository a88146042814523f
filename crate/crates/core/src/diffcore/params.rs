use std::collections::BTreeMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// One learnable tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) steps: u64,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let n = value.len();
        Param {
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Param::new(value));
        Ok(())
    }

    /// Inserts a parameter drawn uniformly from (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    ///
    /// Values are rounded to `f32` so that models survive the on-disk format bit for bit.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.random_range(-bound..bound) as f32 as f64)
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Sets every gradient buffer to zeros.
    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds `delta` into the gradient of `name`, creating the buffer if absent.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if delta.len() != p.value.len() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: p.value.shape().to_vec(),
                rhs: vec![delta.len()],
            });
        }
        let grad = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for (g, d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Flattened copy of all gradients in name order (zeros where absent).
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for p in self.params.values() {
            match &p.grad {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, p.value.len())),
            }
        }
        out
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }
}
