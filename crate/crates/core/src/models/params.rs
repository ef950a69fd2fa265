use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn push_xavier(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-a..a))).collect();
        self.push(name, Tensor::matrix(fan_in, fan_out, data).expect("sized"))
    }

    pub fn push_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.push(name, Tensor::zeros(&[rows, cols]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `g`, as variables when training.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| if trainable { g.variable(v.clone()) } else { g.constant(v.clone()) })
            .collect()
    }

    /// Gradients of bound parameters; untouched ones come back as zeros.
    pub fn grads(&self, g: &Graph<T>, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter()
            .zip(&self.values)
            .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }

    /// Replaces values by name, checking shapes.
    pub fn load_from(&mut self, blocks: &[(String, Tensor<T>)]) -> Result<()> {
        if blocks.len() != self.len() {
            return Err(Error::Checkpoint(format!("expected {} blocks, found {}", self.len(), blocks.len())));
        }
        for (name, value) in blocks {
            let i = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
            if self.values[i].shape() != value.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
            }
            self.values[i] = value.clone();
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<(String, Tensor<T>)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Affine layer `x W + b`, stored as indices into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: ps.push_xavier(&format!("{name}.w"), fan_in, fan_out, rng),
            b: ps.push_zeros(&format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, vars[self.w])?;
        g.add_row(h, vars[self.b])
    }
}
