//! Trial functions on the extended cylinder `Ω × (0, ∞)`.
//!
//! The special structure is
//!
//! ```text
//! φ̂(x, y) = φ̂′(x, y) h(x) e^{−γ′y} + y^{1−α} φ̂″(x, y) h(x) e^{−γ″y}
//! ```
//!
//! and the simple baseline is `φ̂′(x, y) h(x) e^{−y/2}`. The decay rates are
//! stored as unconstrained scalars `g` and mapped through `γ = softplus(g)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::ad::graph::softplus;
use crate::ad::{FnnRef, FnnScratch, FnnShape};
use crate::domain::Hypercube;
use crate::error::{Error, Result};
use crate::reference::Rhs;

/// Raw decay parameter giving `γ = 0.5`.
pub fn initial_decay_raw() -> f64 {
    (0.5f64.exp() - 1.0).ln()
}

/// Fraction `s`, the derived extension constants and the data of the problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    s: f64,
    alpha: f64,
    d_s: f64,
    rhs: Rhs,
    domain: Hypercube,
}

impl ProblemSpec {
    pub fn new(s: f64, domain: Hypercube, rhs: Rhs) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::contract(format!("fraction s = {s} must lie in (0, 1)")));
        }
        let d_s = extension_constant(s);
        if !(d_s.is_finite() && d_s > 0.0) {
            return Err(Error::Numerical(format!("d_s is not positive and finite for s = {s}")));
        }
        Ok(Self {
            s,
            alpha: 1.0 - 2.0 * s,
            d_s,
            rhs,
            domain,
        })
    }

    /// The sine-product model problem on `(−1, 1)^d`.
    pub fn model(dim: usize, s: f64) -> Result<Self> {
        Self::new(s, Hypercube::symmetric_unit(dim)?, Rhs::SineProduct)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `α = 1 − 2s`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `d_s = 2^{1−2s} Γ(1−s) / Γ(s)`.
    pub fn d_s(&self) -> f64 {
        self.d_s
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Hypercube {
        &self.domain
    }

    pub fn rhs_id(&self) -> Rhs {
        self.rhs
    }

    pub fn rhs(&self, x: &[f64]) -> f64 {
        self.rhs.eval(self.s, x)
    }
}

/// `d_s` through log-Gamma, so it stays finite as `s` nears 0 or 1.
pub fn extension_constant(s: f64) -> f64 {
    ((1.0 - 2.0 * s) * std::f64::consts::LN_2 + ln_gamma(1.0 - s) - ln_gamma(s)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnsatzKind {
    Special,
    Simple,
}

impl AnsatzKind {
    pub fn code(self) -> u32 {
        match self {
            AnsatzKind::Special => 0,
            AnsatzKind::Simple => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AnsatzKind::Special),
            1 => Some(AnsatzKind::Simple),
            _ => None,
        }
    }

    /// Trainable scalar count for two networks of `shape` (special) or one (simple).
    pub fn param_count(self, shape: &FnnShape) -> usize {
        match self {
            AnsatzKind::Special => 2 * shape.param_count() + 2,
            AnsatzKind::Simple => shape.param_count(),
        }
    }
}

impl std::fmt::Display for AnsatzKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AnsatzKind::Special => "special",
            AnsatzKind::Simple => "simple",
        })
    }
}

/// All trainable parameters of an ansatz, flat.
///
/// Special layout: `[θ′ | θ″ | g′ | g″]` with `γ = softplus(g)`.
/// Simple layout: `[θ′]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    kind: AnsatzKind,
    shape: FnnShape,
    flat: Vec<f64>,
}

impl NetParams {
    /// Zero networks; decay rates (special) start at `γ = 0.5`.
    pub fn zeros(kind: AnsatzKind, shape: FnnShape) -> Self {
        let mut flat = vec![0.0; kind.param_count(&shape)];
        if kind == AnsatzKind::Special {
            let n = flat.len();
            flat[n - 2] = initial_decay_raw();
            flat[n - 1] = initial_decay_raw();
        }
        Self { kind, shape, flat }
    }

    pub fn from_flat(kind: AnsatzKind, shape: FnnShape, flat: Vec<f64>) -> Result<Self> {
        let want = kind.param_count(&shape);
        if flat.len() != want {
            return Err(Error::contract(format!(
                "{kind} ansatz with this shape has {want} parameters, got {}",
                flat.len()
            )));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("ansatz parameter {i}"), flat[i]));
        }
        Ok(Self { kind, shape, flat })
    }

    pub fn kind(&self) -> AnsatzKind {
        self.kind
    }

    pub fn shape(&self) -> FnnShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// `φ̂′`.
    pub fn primary(&self) -> FnnRef<'_> {
        let p = self.shape.param_count();
        FnnRef {
            shape: self.shape,
            theta: &self.flat[..p],
        }
    }

    /// `φ̂″` (special only).
    pub fn singular(&self) -> Option<FnnRef<'_>> {
        let p = self.shape.param_count();
        match self.kind {
            AnsatzKind::Special => Some(FnnRef {
                shape: self.shape,
                theta: &self.flat[p..2 * p],
            }),
            AnsatzKind::Simple => None,
        }
    }

    /// `(γ′, γ″)` for the special ansatz; the simple one has the fixed rate 1/2.
    pub fn decay_rates(&self) -> (f64, f64) {
        match self.kind {
            AnsatzKind::Special => {
                let n = self.flat.len();
                (softplus(self.flat[n - 2]), softplus(self.flat[n - 1]))
            }
            AnsatzKind::Simple => (0.5, 0.5),
        }
    }

    pub fn scale_output_weights(&mut self, c: f64) {
        let p = self.shape.param_count();
        let out = self.shape.output_range();
        for v in &mut self.flat[out.clone()] {
            *v *= c;
        }
        if self.kind == AnsatzKind::Special {
            for v in &mut self.flat[p + out.start..p + out.end] {
                *v *= c;
            }
        }
    }
}

/// Any function on the cylinder the energy can be evaluated on.
pub trait TrialFunction {
    fn dim(&self) -> usize;
    /// `v(x, 0)`.
    fn trace(&mut self, x: &[f64]) -> Result<f64>;
    /// `∇_{(x,y)} v` at `y > 0`, written to `grad` (length `d + 1`).
    fn grad(&mut self, x: &[f64], y: f64, grad: &mut [f64]) -> Result<()>;
}

/// Pointwise evaluator binding parameters to a problem, with reusable buffers.
pub struct AnsatzEval<'a> {
    params: &'a NetParams,
    spec: &'a ProblemSpec,
    z: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    grad_h: Vec<f64>,
    scratch: FnnScratch,
}

impl<'a> AnsatzEval<'a> {
    pub fn new(params: &'a NetParams, spec: &'a ProblemSpec) -> Result<Self> {
        let d = spec.dim();
        if params.shape().input_dim != d + 1 {
            return Err(Error::contract(format!(
                "networks take {} inputs but the problem needs {}",
                params.shape().input_dim,
                d + 1
            )));
        }
        Ok(Self {
            params,
            spec,
            z: vec![0.0; d + 1],
            grad_a: vec![0.0; d + 1],
            grad_b: vec![0.0; d + 1],
            grad_h: vec![0.0; d],
            scratch: FnnScratch::default(),
        })
    }

    fn load(&mut self, x: &[f64], y: f64) -> Result<()> {
        let d = self.spec.dim();
        if x.len() != d {
            return Err(Error::contract(format!("expected a point of dimension {d}, got {}", x.len())));
        }
        self.z[..d].copy_from_slice(x);
        self.z[d] = y;
        Ok(())
    }

    /// `φ̂(x, y)` for `y ≥ 0`.
    pub fn value(&mut self, x: &[f64], y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::contract(format!("y = {y} must be non-negative")));
        }
        self.load(x, y)?;
        let h = self.spec.domain().boundary_factor(x);
        let (g1, g2) = self.params.decay_rates();
        let a = self.params.primary().forward(&self.z, &mut self.scratch)?;
        match self.params.singular() {
            None => Ok(a * h * (-0.5 * y).exp()),
            Some(net) => {
                let head = a * h * (-g1 * y).exp();
                if y == 0.0 {
                    return Ok(head);
                }
                let b = net.forward(&self.z, &mut self.scratch)?;
                let p = 1.0 - self.spec.alpha();
                let e2 = (p * y.ln() - g2 * y).exp();
                Ok(head + e2 * b * h)
            }
        }
    }

    /// `∇_{(x,y)} φ̂` at `y > 0`.
    pub fn gradient(&mut self, x: &[f64], y: f64, out: &mut [f64]) -> Result<()> {
        if y.is_nan() || y <= 0.0 {
            return Err(Error::contract(format!(
                "gradient needs y > 0 (the singular factor is not differentiable at 0), got {y}"
            )));
        }
        let d = self.spec.dim();
        if out.len() != d + 1 {
            return Err(Error::contract("gradient buffer must have length d + 1"));
        }
        self.load(x, y)?;
        let h = self.spec.domain().boundary_factor_grad(x, &mut self.grad_h);
        let (g1, g2) = self.params.decay_rates();
        let a = self
            .params
            .primary()
            .forward_grad(&self.z, &mut self.grad_a, &mut self.scratch)?;
        let e1 = (-g1 * y).exp();
        for i in 0..d {
            out[i] = e1 * (h * self.grad_a[i] + a * self.grad_h[i]);
        }
        out[d] = e1 * h * (self.grad_a[d] - g1 * a);
        if let Some(net) = self.params.singular() {
            let b = net.forward_grad(&self.z, &mut self.grad_b, &mut self.scratch)?;
            let p = 1.0 - self.spec.alpha();
            let e2 = (p * y.ln() - g2 * y).exp();
            let de2 = (p / y - g2) * e2;
            for i in 0..d {
                out[i] += e2 * (h * self.grad_b[i] + b * self.grad_h[i]);
            }
            out[d] += h * (e2 * self.grad_b[d] + b * de2);
        }
        Ok(())
    }
}

impl TrialFunction for AnsatzEval<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn trace(&mut self, x: &[f64]) -> Result<f64> {
        self.value(x, 0.0)
    }

    fn grad(&mut self, x: &[f64], y: f64, grad: &mut [f64]) -> Result<()> {
        self.gradient(x, y, grad)
    }
}

fn require_kind(p: &NetParams, kind: AnsatzKind) -> Result<()> {
    if p.kind() != kind {
        return Err(Error::contract(format!("expected {kind} ansatz parameters, got {}", p.kind())));
    }
    Ok(())
}

/// Special structure at `(x, y)`, `y ≥ 0`.
pub fn special_forward(p: &NetParams, spec: &ProblemSpec, x: &[f64], y: f64) -> Result<f64> {
    require_kind(p, AnsatzKind::Special)?;
    AnsatzEval::new(p, spec)?.value(x, y)
}

/// Gradient of the special structure in `(x, y)`, `y > 0`.
pub fn special_grad(p: &NetParams, spec: &ProblemSpec, x: &[f64], y: f64) -> Result<Vec<f64>> {
    require_kind(p, AnsatzKind::Special)?;
    let mut out = vec![0.0; spec.dim() + 1];
    AnsatzEval::new(p, spec)?.gradient(x, y, &mut out)?;
    Ok(out)
}

/// `tr{φ̂}(x) = φ̂(x, 0)`.
pub fn trace_eval(p: &NetParams, spec: &ProblemSpec, x: &[f64]) -> Result<f64> {
    AnsatzEval::new(p, spec)?.value(x, 0.0)
}

/// Simple baseline `φ̂′(x, y) h(x) e^{−y/2}`.
pub fn simple_forward(p: &NetParams, spec: &ProblemSpec, x: &[f64], y: f64) -> Result<f64> {
    require_kind(p, AnsatzKind::Simple)?;
    AnsatzEval::new(p, spec)?.value(x, y)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FRCKPT01";
const CHECKPOINT_HEADER: usize = 32;

/// Serializes parameters to the fixed little-endian checkpoint layout:
///
/// | offset | type     | content                                  |
/// |--------|----------|------------------------------------------|
/// | 0      | [u8; 8]  | magic `FRCKPT01`                          |
/// | 8      | u32      | ansatz kind (0 special, 1 simple)         |
/// | 12     | u32      | network input dimension (`d + 1`)         |
/// | 16     | u32      | depth `L`                                 |
/// | 20     | u32      | width `M`                                 |
/// | 24     | u64      | number of f64 values that follow          |
/// | 32     | f64 × n  | flat parameters in [`NetParams`] order    |
pub fn encode_checkpoint(p: &NetParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER + 8 * p.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&p.kind.code().to_le_bytes());
    out.extend_from_slice(&(p.shape.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(p.shape.depth as u32).to_le_bytes());
    out.extend_from_slice(&(p.shape.width as u32).to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in &p.flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetParams> {
    if bytes.len() < CHECKPOINT_HEADER || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let kind = AnsatzKind::from_code(u32_at(8))
        .ok_or_else(|| Error::Checkpoint(format!("unknown ansatz kind {}", u32_at(8))))?;
    let shape = FnnShape::new(u32_at(16) as usize, u32_at(20) as usize, u32_at(12) as usize)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    if count != kind.param_count(&shape) {
        return Err(Error::Checkpoint(format!(
            "header announces {count} values but the shape needs {}",
            kind.param_count(&shape)
        )));
    }
    if bytes.len() != CHECKPOINT_HEADER + 8 * count {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes, found {}",
            CHECKPOINT_HEADER + 8 * count,
            bytes.len()
        )));
    }
    let flat = bytes[CHECKPOINT_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NetParams::from_flat(kind, shape, flat).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn write_checkpoint(path: &Path, p: &NetParams) -> Result<()> {
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<NetParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
