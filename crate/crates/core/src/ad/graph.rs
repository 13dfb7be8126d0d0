//! Scalar computation graph with reverse accumulation.
//!
//! Every intermediate is a node on a flat tape. Network input gradients are
//! recorded as forward-mode tangent nodes ([`Graph::fnn`]), so a loss that
//! contains `|∇_z φ̂|²` is an ordinary expression on the tape and one reverse
//! sweep returns its exact parameter gradient, mixed second derivatives
//! included.

use std::fmt;

use super::{FnnShape, ParamGradient};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    Relu(Var),
    // Heaviside indicator of x > 0; treated as locally constant.
    Step,
    Softplus(Var),
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Powf(..) => "powf",
            Op::Relu(_) => "relu",
            Op::Step => "step",
            Op::Softplus(_) => "softplus",
        };
        f.write_str(name)
    }
}

/// Output of [`Graph::fnn`]: the network value and its input gradient.
#[derive(Clone, Debug)]
pub struct FnnNodes {
    pub value: Var,
    pub grad: Vec<Var>,
}

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    vals: Vec<f64>,
    labels: Vec<(usize, String)>,
    n_params: usize,
    first_bad: Option<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: f64) -> Var {
        let idx = self.ops.len();
        if !value.is_finite() && self.first_bad.is_none() {
            self.first_bad = Some(idx);
        }
        self.ops.push(op);
        self.vals.push(value);
        Var(idx)
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0]
    }

    /// Attaches a name used in non-finite diagnostics.
    pub fn label(&mut self, v: Var, name: impl Into<String>) {
        self.labels.push((v.0, name.into()));
    }

    fn describe(&self, idx: usize) -> String {
        let label = self
            .labels
            .iter()
            .rev()
            .find(|(i, _)| *i == idx)
            .map(|(_, l)| format!(" '{l}'"))
            .unwrap_or_default();
        format!("graph node #{idx} ({}){label}", self.ops[idx])
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.push(Op::Const, value)
    }

    /// Registers the trainable scalars, in order, as parameter leaves.
    pub fn params(&mut self, values: &[f64]) -> Vec<Var> {
        values
            .iter()
            .map(|&v| {
                let id = self.n_params;
                self.n_params += 1;
                self.push(Op::Param(id), v)
            })
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Op::Neg(a), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.push(Op::Scale(a, c), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).exp();
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).ln();
        self.push(Op::Ln(a), v)
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).powf(p);
        self.push(Op::Powf(a, p), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = super::relu(self.value(a));
        self.push(Op::Relu(a), v)
    }

    pub fn step(&mut self, a: Var) -> Var {
        let v = if self.value(a) > 0.0 { 1.0 } else { 0.0 };
        self.push(Op::Step, v)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = softplus(self.value(a));
        self.push(Op::Softplus(a), v)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        let prods: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&prods)
    }

    /// Records a ReLU network together with forward-mode tangents for each
    /// input direction. `theta` must follow the [`FnnShape`] flat layout.
    pub fn fnn(&mut self, shape: &FnnShape, theta: &[Var], z: &[Var]) -> Result<FnnNodes> {
        if theta.len() != shape.param_count() {
            return Err(Error::contract(format!(
                "expected {} network parameters, got {}",
                shape.param_count(),
                theta.len()
            )));
        }
        if z.len() != shape.input_dim {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                shape.input_dim,
                z.len()
            )));
        }
        let m = shape.width;
        let dirs = shape.input_dim;
        let mut acts: Vec<Var> = z.to_vec();
        // tangents[k][j] = ∂(act_k)/∂z_j; None for the identity rows of layer 0
        let mut tangents: Option<Vec<Vec<Var>>> = None;
        for layer in 0..shape.depth {
            let w = &theta[shape.weight_range(layer)];
            let b = &theta[shape.bias_range(layer)];
            let fan_in = shape.layer_in(layer);
            let mut next_acts = Vec::with_capacity(m);
            let mut next_tan = Vec::with_capacity(m);
            for k in 0..m {
                let row = &w[k * fan_in..(k + 1) * fan_in];
                let lin = self.dot(row, &acts);
                let pre = self.add(lin, b[k]);
                let gate = self.step(pre);
                next_acts.push(self.relu(pre));
                let mut t_row = Vec::with_capacity(dirs);
                for j in 0..dirs {
                    let dpre = match &tangents {
                        None => row[j],
                        Some(t) => {
                            let col: Vec<Var> = t.iter().map(|tk| tk[j]).collect();
                            self.dot(row, &col)
                        }
                    };
                    t_row.push(self.mul(gate, dpre));
                }
                next_tan.push(t_row);
            }
            acts = next_acts;
            tangents = Some(next_tan);
        }
        let a = &theta[shape.output_range()];
        let value = self.dot(a, &acts);
        let t = tangents.expect("depth >= 1");
        let grad = (0..dirs)
            .map(|j| {
                let col: Vec<Var> = t.iter().map(|tk| tk[j]).collect();
                self.dot(a, &col)
            })
            .collect();
        Ok(FnnNodes { value, grad })
    }

    /// Reverse sweep from `output`; returns the gradient over all parameter
    /// leaves in registration order.
    pub fn backward(&self, output: Var) -> Result<ParamGradient> {
        if let Some(idx) = self.first_bad {
            if idx <= output.0 {
                return Err(Error::non_finite(self.describe(idx), self.vals[idx]));
            }
        }
        let mut adj = vec![0.0f64; output.0 + 1];
        adj[output.0] = 1.0;
        let mut grad = ParamGradient::zeros(self.n_params);
        for idx in (0..=output.0).rev() {
            let g = adj[idx];
            if g == 0.0 {
                continue;
            }
            if !g.is_finite() {
                return Err(Error::non_finite(format!("adjoint of {}", self.describe(idx)), g));
            }
            match self.ops[idx] {
                Op::Const | Op::Step => {}
                Op::Param(id) => grad.0[id] += g,
                Op::Add(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] += g;
                }
                Op::Sub(a, b) => {
                    adj[a.0] += g;
                    adj[b.0] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a.0] += g * self.vals[b.0];
                    adj[b.0] += g * self.vals[a.0];
                }
                Op::Neg(a) => adj[a.0] -= g,
                Op::Scale(a, c) => adj[a.0] += g * c,
                Op::Exp(a) => adj[a.0] += g * self.vals[idx],
                Op::Ln(a) => adj[a.0] += g / self.vals[a.0],
                Op::Powf(a, p) => adj[a.0] += g * p * self.vals[a.0].powf(p - 1.0),
                Op::Relu(a) => {
                    if self.vals[a.0] > 0.0 {
                        adj[a.0] += g;
                    }
                }
                Op::Softplus(a) => adj[a.0] += g * sigmoid(self.vals[a.0]),
            }
        }
        if let Some(i) = grad.first_non_finite() {
            return Err(Error::non_finite(format!("gradient component {i}"), grad.0[i]));
        }
        Ok(grad)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and exact parameter gradient of the loss recorded by `build`.
///
/// `build` receives the graph and one leaf per entry of `params`.
pub fn loss_param_gradient<F>(params: &[f64], build: F) -> Result<(f64, ParamGradient)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves = g.params(params);
    let out = build(&mut g, &leaves)?;
    let grad = g.backward(out)?;
    Ok((g.value(out), grad))
}
