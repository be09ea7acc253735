//! Named, freezable model weights.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tensor};

/// A named tensor plus a trainable flag.
///
/// The leaf handed to forward passes requires a gradient exactly when the
/// parameter is trainable, so frozen weights never appear in a backward
/// sweep. Gradients gathered with [`Parameter::accumulate`] add up in the
/// `grad` slot until [`Parameter::zero_grad`].
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
    trainable: bool,
    grad: Option<Vec<f64>>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            tensor: Tensor::leaf(shape, values, true)?,
            trainable: true,
            grad: None,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![value; n])
    }

    /// i.i.d. `N(0, std²)` entries.
    pub fn gaussian<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(name, shape, gaussian_values(n, std, rng)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn values(&self) -> &[f64] {
        self.tensor.values()
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        if self.trainable != trainable {
            self.trainable = trainable;
            self.tensor = Tensor::leaf(self.shape(), self.tensor.to_vec(), trainable)
                .expect("existing tensor is valid");
            if !trainable {
                self.grad = None;
            }
        }
    }

    /// Replaces the values, keeping shape and flag.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(
                "set_values",
                self.shape(),
                &[values.len()],
            ));
        }
        self.tensor = Tensor::leaf(self.shape(), values, self.trainable)?;
        Ok(())
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds this sweep's gradient, if any, into the slot.
    pub fn accumulate(&mut self, grads: &Gradients) {
        if !self.trainable {
            return;
        }
        if let Some(g) = grads.get(&self.tensor) {
            match &mut self.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => self.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

pub(crate) fn gaussian_values<R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::Argument(format!("gaussian std {std}: {e}")))?;
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

/// Anything that owns parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Parameter));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.name().to_string()));
        out
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_mut(&mut |p| p.set_trainable(!frozen));
    }

    fn accumulate_grads(&mut self, grads: &Gradients) {
        self.visit_mut(&mut |p| p.accumulate(grads));
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable() {
                n += p.numel();
            }
        });
        n
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }

    fn all_frozen(&self) -> bool {
        let mut frozen = true;
        self.visit(&mut |p| frozen &= !p.trainable());
        frozen
    }
}
