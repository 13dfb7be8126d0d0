//! Fully connected ReLU networks and their derivatives.
//!
//! Two evaluation routes live here. [`FnnRef`] evaluates a network and its
//! input gradient with straight-line loops and is what the pointwise code
//! uses. [`graph::Graph`] records the same computation as scalar nodes,
//! including the input-gradient tangents, so that reverse accumulation over
//! the tape yields exact parameter gradients of losses built from `∇_z φ̂`.

pub mod graph;

use std::ops::Range;

use crate::error::{Error, Result};

pub use graph::{loss_param_gradient, Graph, Var};

/// ReLU with the subgradient convention `σ'(0) = 0`.
#[inline]
pub fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

/// Depth, width and input dimension of a uniform-width network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FnnShape {
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
}

impl FnnShape {
    pub fn new(depth: usize, width: usize, input_dim: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::contract("network depth must be at least 1"));
        }
        if width < 1 {
            return Err(Error::contract("network width must be at least 1"));
        }
        if input_dim < 2 {
            return Err(Error::contract("network input dimension must be at least 2"));
        }
        Ok(Self {
            depth,
            width,
            input_dim,
        })
    }

    /// Fan-in of hidden layer `layer` (0-based).
    #[inline]
    pub fn layer_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.width
        }
    }

    fn layer_offset(&self, layer: usize) -> usize {
        let first = self.width * self.input_dim + self.width;
        if layer == 0 {
            0
        } else {
            first + (layer - 1) * (self.width * self.width + self.width)
        }
    }

    /// Row-major `width × layer_in` weight block of hidden layer `layer`.
    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.width * self.layer_in(layer)
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.width
    }

    pub fn output_range(&self) -> Range<usize> {
        let start = self.layer_offset(self.depth);
        start..start + self.width
    }

    pub fn param_count(&self) -> usize {
        self.output_range().end
    }
}

/// Owned parameters `θ = {a, W_ℓ, b_ℓ}` stored flat in the [`FnnShape`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FnnParams {
    shape: FnnShape,
    data: Vec<f64>,
}

impl FnnParams {
    pub fn zeros(shape: FnnShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: FnnShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::contract(format!(
                "expected {} network parameters, got {}",
                shape.param_count(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("network parameter {i}"), data[i]));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> FnnShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn view(&self) -> FnnRef<'_> {
        FnnRef {
            shape: self.shape,
            theta: &self.data,
        }
    }
}

/// Flat gradient with respect to every trainable scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient(pub Vec<f64>);

impl ParamGradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Index of the first non-finite component.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|g| !g.is_finite())
    }
}

/// Reusable activation buffers for pointwise evaluation.
#[derive(Clone, Debug, Default)]
pub struct FnnScratch {
    act: Vec<f64>,
    adj: Vec<f64>,
    tmp: Vec<f64>,
}

/// Borrowed view of one network's parameters inside a larger flat vector.
#[derive(Clone, Copy, Debug)]
pub struct FnnRef<'a> {
    pub shape: FnnShape,
    pub theta: &'a [f64],
}

impl<'a> FnnRef<'a> {
    pub fn new(shape: FnnShape, theta: &'a [f64]) -> Result<Self> {
        if theta.len() != shape.param_count() {
            return Err(Error::contract(format!(
                "expected {} network parameters, got {}",
                shape.param_count(),
                theta.len()
            )));
        }
        Ok(Self { shape, theta })
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.shape.input_dim {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                self.shape.input_dim,
                z.len()
            )));
        }
        Ok(())
    }

    fn run_forward(&self, z: &[f64], scratch: &mut FnnScratch) -> f64 {
        let s = self.shape;
        let m = s.width;
        scratch.act.resize(s.depth * m, 0.0);
        for layer in 0..s.depth {
            let w = &self.theta[s.weight_range(layer)];
            let b = &self.theta[s.bias_range(layer)];
            let fan_in = s.layer_in(layer);
            let (prev, cur) = scratch.act.split_at_mut(layer * m);
            let input: &[f64] = if layer == 0 {
                z
            } else {
                &prev[(layer - 1) * m..]
            };
            for (k, out) in cur[..m].iter_mut().enumerate() {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                let pre = row.iter().zip(input).fold(b[k], |acc, (wi, xi)| acc + wi * xi);
                *out = relu(pre);
            }
        }
        let a = &self.theta[s.output_range()];
        let last = &scratch.act[(s.depth - 1) * m..s.depth * m];
        a.iter().zip(last).map(|(ai, hi)| ai * hi).sum()
    }

    fn run_reverse(&self, scratch: &mut FnnScratch, grad: &mut [f64]) {
        let s = self.shape;
        let m = s.width;
        let a = &self.theta[s.output_range()];
        scratch.adj.resize(m, 0.0);
        scratch.tmp.resize(m, 0.0);
        let last = &scratch.act[(s.depth - 1) * m..s.depth * m];
        for k in 0..m {
            scratch.adj[k] = if last[k] > 0.0 { a[k] } else { 0.0 };
        }
        for layer in (1..s.depth).rev() {
            let w = &self.theta[s.weight_range(layer)];
            let below = &scratch.act[(layer - 1) * m..layer * m];
            scratch.tmp.iter_mut().for_each(|t| *t = 0.0);
            for k in 0..m {
                let g = scratch.adj[k];
                if g != 0.0 {
                    let row = &w[k * m..(k + 1) * m];
                    for (t, wi) in scratch.tmp.iter_mut().zip(row) {
                        *t += g * wi;
                    }
                }
            }
            for i in 0..m {
                scratch.adj[i] = if below[i] > 0.0 { scratch.tmp[i] } else { 0.0 };
            }
        }
        let w = &self.theta[s.weight_range(0)];
        let fan_in = s.input_dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..m {
            let g = scratch.adj[k];
            if g != 0.0 {
                for (gj, wj) in grad.iter_mut().zip(&w[k * fan_in..(k + 1) * fan_in]) {
                    *gj += g * wj;
                }
            }
        }
    }

    /// `φ̂(z) = a·h_L∘…∘h_1(z)`.
    pub fn forward(&self, z: &[f64], scratch: &mut FnnScratch) -> Result<f64> {
        self.check_input(z)?;
        Ok(self.run_forward(z, scratch))
    }

    /// Value and `∇_z φ̂(z)` in one pass; `grad` must have `input_dim` slots.
    pub fn forward_grad(&self, z: &[f64], grad: &mut [f64], scratch: &mut FnnScratch) -> Result<f64> {
        self.check_input(z)?;
        if grad.len() != self.shape.input_dim {
            return Err(Error::contract("gradient buffer has the wrong length"));
        }
        let value = self.run_forward(z, scratch);
        self.run_reverse(scratch, grad);
        Ok(value)
    }
}

/// Evaluates the network at `z`.
pub fn fnn_forward(params: &FnnParams, z: &[f64]) -> Result<f64> {
    params.view().forward(z, &mut FnnScratch::default())
}

/// Input gradient `∇_z φ̂(z)`; ReLU kinks contribute the subgradient 0.
pub fn fnn_grad_input(params: &FnnParams, z: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.shape().input_dim];
    params
        .view()
        .forward_grad(z, &mut grad, &mut FnnScratch::default())?;
    Ok(grad)
}
