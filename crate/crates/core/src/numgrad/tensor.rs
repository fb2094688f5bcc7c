//! Dense row-major f32 tensor with an optional gradient store.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::ensure;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` matches the shape's extent
    /// product and contains only finite values.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == data.len(),
            "tensor data length {} does not match shape {:?} (numel {})",
            data.len(),
            shape,
            numel
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            "tensor construction with non-finite values"
        );
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient store, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        ensure!(
            delta.len() == self.data.len(),
            "gradient length {} does not match tensor numel {}",
            delta.len(),
            self.data.len()
        );
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gv, &d) in g.iter_mut().zip(delta) {
            *gv += d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// The scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f32> {
        ensure!(self.data.len() == 1, "item() on tensor with shape {:?}", self.shape);
        Ok(self.data[0])
    }
}
