//! Batched evaluation of the discrete energy and its exact parameter gradient.
//!
//! Rows are `(x_n, y_m)` pairs (m-major) followed by the trace rows
//! `(x_n, 0)` of the source term. For each network a chunk of rows goes
//! through
//!
//! 1. a forward pass storing activations (which fix the ReLU pattern `D_ℓ`),
//! 2. a reverse pass giving `G_ℓ` and the input gradient `∇_z φ̂`,
//! 3. a frozen-pattern pass on `ũ = u + r z` with biases scaled by `r`.
//!
//! Here `u = ∂𝓘/∂(∇_z φ̂)` and `r = ∂𝓘/∂φ̂` per row. Because ReLU networks are
//! piecewise linear, `u·∇φ̂ + r φ̂` equals the frozen-pattern network evaluated
//! at `(ũ, r)`, and its parameter gradient is `∂a = X_L`, `∂W_ℓ = G_ℓ X_{ℓ−1}ᵀ`,
//! `∂b_ℓ = r G_ℓ`. That is the a.e. gradient of the full loss, including the
//! path through the input gradient.

use std::ops::Range;

use crate::ad::graph::{sigmoid, softplus};
use crate::ad::{loss_param_gradient, FnnShape, Graph, ParamGradient, Var};
use crate::ansatz::{AnsatzKind, NetParams, ProblemSpec};
use crate::domain::McSample;
use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::quadrature::SincScheme;
use crate::sum::CompensatedSum;

const DEFAULT_CHUNK: usize = 512;

/// Quadrature points with `h`, `∇h` and `f` precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    dim: usize,
    x: Vec<f64>,
    h: Vec<f64>,
    grad_h: Vec<f64>,
    f: Vec<f64>,
}

impl PreparedSample {
    pub fn new(spec: &ProblemSpec, sample: &McSample) -> Result<Self> {
        let d = spec.dim();
        if sample.dim() != d {
            return Err(Error::contract("sample dimension differs from the problem dimension"));
        }
        let n = sample.len();
        let mut h = Vec::with_capacity(n);
        let mut grad_h = vec![0.0; n * d];
        let mut f = Vec::with_capacity(n);
        for (i, x) in sample.iter().enumerate() {
            h.push(spec.domain().boundary_factor_grad(x, &mut grad_h[i * d..(i + 1) * d]));
            f.push(spec.rhs(x));
        }
        Ok(Self {
            dim: d,
            x: sample.points().to_vec(),
            h,
            grad_h,
            f,
        })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Loss value and flat gradient in [`NetParams`] layout.
#[derive(Clone, Debug)]
pub struct EnergyValue {
    pub loss: f64,
    pub grad: ParamGradient,
}

/// Per-network chunk buffers.
struct NetBatch {
    shape: FnnShape,
    act: Vec<Vec<f64>>,
    adj: Vec<Vec<f64>>,
    frozen: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    value: Vec<f64>,
    grad_z: Vec<f64>,
    u_tilde: Vec<f64>,
    r: Vec<f64>,
}

impl NetBatch {
    fn new(shape: FnnShape, cap: usize) -> Self {
        let m = shape.width;
        let layers = || (0..shape.depth).map(|_| vec![0.0; cap * m]).collect::<Vec<_>>();
        Self {
            shape,
            act: layers(),
            adj: layers(),
            frozen: layers(),
            tmp: vec![0.0; cap * m],
            value: vec![0.0; cap],
            grad_z: vec![0.0; cap * shape.input_dim],
            u_tilde: vec![0.0; cap * shape.input_dim],
            r: vec![0.0; cap],
        }
    }

    /// Activations and values for `rows` inputs stored row-major in `z`.
    fn forward(&mut self, theta: &[f64], z: &[f64], rows: usize) {
        let s = self.shape;
        let m = s.width;
        for layer in 0..s.depth {
            let fan_in = s.layer_in(layer);
            let w = &theta[s.weight_range(layer)];
            let b = &theta[s.bias_range(layer)];
            let (below, rest) = self.act.split_at_mut(layer);
            let out = &mut rest[0][..rows * m];
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(b);
            }
            let input = if layer == 0 { &z[..rows * fan_in] } else { &below[layer - 1][..rows * m] };
            gemm(
                1.0,
                MatRef::row_major(input, rows, fan_in),
                MatRef::row_major(w, m, fan_in).t(),
                1.0,
                out,
                m,
            );
            for v in out.iter_mut() {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        let a = &theta[s.output_range()];
        let last = &self.act[s.depth - 1];
        for (i, v) in self.value[..rows].iter_mut().enumerate() {
            *v = last[i * m..(i + 1) * m].iter().zip(a).map(|(h, a)| h * a).sum();
        }
    }

    /// `G_ℓ` for every layer and `∇_z φ̂` per row.
    fn reverse(&mut self, theta: &[f64], rows: usize) {
        let s = self.shape;
        let m = s.width;
        let a = &theta[s.output_range()];
        let top = s.depth - 1;
        {
            let act = &self.act[top];
            let adj = &mut self.adj[top];
            for i in 0..rows {
                for k in 0..m {
                    adj[i * m + k] = if act[i * m + k] > 0.0 { a[k] } else { 0.0 };
                }
            }
        }
        for layer in (1..s.depth).rev() {
            let w = &theta[s.weight_range(layer)];
            gemm(
                1.0,
                MatRef::row_major(&self.adj[layer][..rows * m], rows, m),
                MatRef::row_major(w, m, m),
                0.0,
                &mut self.tmp[..rows * m],
                m,
            );
            let act = &self.act[layer - 1];
            let adj = &mut self.adj[layer - 1];
            for idx in 0..rows * m {
                adj[idx] = if act[idx] > 0.0 { self.tmp[idx] } else { 0.0 };
            }
        }
        let dz = s.input_dim;
        gemm(
            1.0,
            MatRef::row_major(&self.adj[0][..rows * m], rows, m),
            MatRef::row_major(&theta[s.weight_range(0)], m, dz),
            0.0,
            &mut self.grad_z[..rows * dz],
            dz,
        );
    }

    /// Accumulates `∂/∂θ Σ_rows (u·∇φ̂ + r φ̂)` into `grad`, reading `ũ` and `r`.
    fn backward(&mut self, theta: &[f64], rows: usize, grad: &mut [f64]) {
        let s = self.shape;
        let m = s.width;
        for layer in 0..s.depth {
            let fan_in = s.layer_in(layer);
            let w = &theta[s.weight_range(layer)];
            let b = &theta[s.bias_range(layer)];
            let (below, rest) = self.frozen.split_at_mut(layer);
            let out = &mut rest[0][..rows * m];
            for (row, &r) in out.chunks_exact_mut(m).zip(&self.r[..rows]) {
                for (o, bk) in row.iter_mut().zip(b) {
                    *o = r * bk;
                }
            }
            let input = if layer == 0 {
                &self.u_tilde[..rows * fan_in]
            } else {
                &below[layer - 1][..rows * m]
            };
            gemm(
                1.0,
                MatRef::row_major(input, rows, fan_in),
                MatRef::row_major(w, m, fan_in).t(),
                1.0,
                out,
                m,
            );
            let act = &self.act[layer];
            for (o, &h) in out.iter_mut().zip(&act[..rows * m]) {
                if h <= 0.0 {
                    *o = 0.0;
                }
            }
        }
        for layer in 0..s.depth {
            let fan_in = s.layer_in(layer);
            let input: &[f64] = if layer == 0 {
                &self.u_tilde[..rows * fan_in]
            } else {
                &self.frozen[layer - 1][..rows * m]
            };
            let adj = MatRef::row_major(&self.adj[layer][..rows * m], rows, m);
            gemm(
                1.0,
                adj.t(),
                MatRef::row_major(input, rows, fan_in),
                1.0,
                &mut grad[s.weight_range(layer)],
                fan_in,
            );
            gemm(
                1.0,
                MatRef::row_major(&self.r[..rows], 1, rows),
                adj,
                1.0,
                &mut grad[s.bias_range(layer)],
                m,
            );
        }
        let top = &self.frozen[s.depth - 1];
        let ga = &mut grad[s.output_range()];
        for row in top[..rows * m].chunks_exact(m) {
            for (g, v) in ga.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
}

#[derive(Clone, Copy)]
struct NodeFactors {
    y: f64,
    weight: f64,
    e1: f64,
    e2: f64,
    de2: f64,
}

/// Which rows a block covers.
#[derive(Clone, Debug)]
enum RowBlock {
    /// Dirichlet rows `rows` of the flattened (active node, point) grid.
    Dirichlet(Range<usize>),
    /// Trace rows at `y = 0` for these sample points.
    Trace(Range<usize>),
}

struct Partial {
    loss: CompensatedSum,
    grad: Vec<f64>,
    dgamma: [f64; 2],
}

/// Read-only data shared by all blocks of one evaluation.
struct Pass<'a> {
    kind: AnsatzKind,
    shape: FnnShape,
    d_s: f64,
    scale: f64,
    decay: (f64, f64),
    thetas: [&'a [f64]; 2],
    sample: &'a PreparedSample,
    points: Range<usize>,
    active: Vec<NodeFactors>,
}

/// Chunk buffers owned by one block.
struct Worker {
    nets: Vec<NetBatch>,
    z: Vec<f64>,
    rows: Vec<(usize, usize)>,
}

impl Worker {
    fn new(kind: AnsatzKind, shape: FnnShape, chunk: usize) -> Self {
        let n_nets = match kind {
            AnsatzKind::Special => 2,
            AnsatzKind::Simple => 1,
        };
        Self {
            nets: (0..n_nets).map(|_| NetBatch::new(shape, chunk)).collect(),
            z: vec![0.0; chunk * shape.input_dim],
            rows: Vec::with_capacity(chunk),
        }
    }

    fn load_inputs(&mut self, pass: &Pass<'_>, y_of: impl Fn(usize) -> f64) {
        let d = pass.sample.dim;
        let dz = d + 1;
        for (i, &(n, node)) in self.rows.iter().enumerate() {
            self.z[i * dz..i * dz + d].copy_from_slice(&pass.sample.x[n * d..(n + 1) * d]);
            self.z[i * dz + d] = y_of(node);
        }
    }

    fn run(&mut self, pass: &Pass<'_>, block: &RowBlock, chunk: usize) -> Partial {
        let pc = pass.shape.param_count();
        let mut part = Partial {
            loss: CompensatedSum::new(),
            grad: vec![0.0; pc * self.nets.len()],
            dgamma: [0.0; 2],
        };
        match block {
            RowBlock::Dirichlet(rows) => {
                let n = pass.points.len();
                for start in rows.clone().step_by(chunk) {
                    self.rows.clear();
                    self.rows.extend(
                        (start..(start + chunk).min(rows.end)).map(|r| (pass.points.start + r % n, r / n)),
                    );
                    self.dirichlet_chunk(pass, &mut part);
                }
            }
            RowBlock::Trace(points) => {
                for start in points.clone().step_by(chunk) {
                    self.rows.clear();
                    self.rows.extend((start..(start + chunk).min(points.end)).map(|p| (p, 0)));
                    self.trace_chunk(pass, &mut part);
                }
            }
        }
        part
    }

    fn dirichlet_chunk(&mut self, pass: &Pass<'_>, part: &mut Partial) {
        let rows = self.rows.len();
        let sample = pass.sample;
        let d = sample.dim;
        let dz = d + 1;
        let pc = pass.shape.param_count();
        let (g1, _) = pass.decay;
        self.load_inputs(pass, |node| pass.active[node].y);
        for (net, theta) in self.nets.iter_mut().zip(pass.thetas) {
            net.forward(theta, &self.z, rows);
            net.reverse(theta, rows);
        }

        let special = pass.kind == AnsatzKind::Special;
        let mut v = vec![0.0; dz];
        let mut v1 = vec![0.0; dz];
        let mut v2 = vec![0.0; dz];
        for i in 0..rows {
            let (n, node) = self.rows[i];
            let nf = pass.active[node];
            let (h, gh) = (sample.h[n], &sample.grad_h[n * d..(n + 1) * d]);
            let y = nf.y;
            let a = self.nets[0].value[i];
            let ga = &self.nets[0].grad_z[i * dz..(i + 1) * dz];
            for j in 0..d {
                v1[j] = nf.e1 * (h * ga[j] + a * gh[j]);
            }
            v1[d] = nf.e1 * h * (ga[d] - g1 * a);
            let mut b = 0.0;
            if special {
                b = self.nets[1].value[i];
                let gb = &self.nets[1].grad_z[i * dz..(i + 1) * dz];
                for j in 0..d {
                    v2[j] = nf.e2 * (h * gb[j] + b * gh[j]);
                }
                v2[d] = h * (nf.e2 * gb[d] + b * nf.de2);
            }
            for j in 0..dz {
                v[j] = v1[j] + v2[j];
            }
            let sq: f64 = v.iter().map(|t| t * t).sum();
            part.loss.add(nf.weight * sq);
            // g = ∂(c|v|²)/∂v = gscale · v
            let gscale = 2.0 * nf.weight;
            let gx_dot_gh: f64 = gscale * (0..d).map(|j| v[j] * gh[j]).sum::<f64>();
            let gy = gscale * v[d];
            let z = &self.z[i * dz..(i + 1) * dz];

            let r_a = nf.e1 * gx_dot_gh - g1 * nf.e1 * h * gy;
            let u_a = nf.e1 * h * gscale;
            let net_a = &mut self.nets[0];
            net_a.r[i] = r_a;
            for j in 0..dz {
                net_a.u_tilde[i * dz + j] = u_a * v[j] + r_a * z[j];
            }
            let g_dot_v1 = gscale * v.iter().zip(&v1).map(|(p, q)| p * q).sum::<f64>();
            part.dgamma[0] += -y * g_dot_v1 - gy * nf.e1 * h * a;

            if special {
                let r_b = nf.e2 * gx_dot_gh + h * nf.de2 * gy;
                let u_b = nf.e2 * h * gscale;
                let net_b = &mut self.nets[1];
                net_b.r[i] = r_b;
                for j in 0..dz {
                    net_b.u_tilde[i * dz + j] = u_b * v[j] + r_b * z[j];
                }
                let g_dot_v2 = gscale * v.iter().zip(&v2).map(|(p, q)| p * q).sum::<f64>();
                part.dgamma[1] += -y * g_dot_v2 - gy * h * b * nf.e2;
            }
        }
        for (k, net) in self.nets.iter_mut().enumerate() {
            net.backward(pass.thetas[k], rows, &mut part.grad[k * pc..(k + 1) * pc]);
        }
    }

    fn trace_chunk(&mut self, pass: &Pass<'_>, part: &mut Partial) {
        let rows = self.rows.len();
        let dz = pass.sample.dim + 1;
        let pc = pass.shape.param_count();
        self.load_inputs(pass, |_| 0.0);
        let coef = -pass.scale * pass.d_s;
        let net = &mut self.nets[0];
        net.forward(pass.thetas[0], &self.z, rows);
        net.reverse(pass.thetas[0], rows);
        for i in 0..rows {
            let n = self.rows[i].0;
            let r = coef * pass.sample.f[n] * pass.sample.h[n];
            part.loss.add(r * net.value[i]);
            net.r[i] = r;
            for j in 0..dz {
                net.u_tilde[i * dz + j] = r * self.z[i * dz + j];
            }
        }
        net.backward(pass.thetas[0], rows, &mut part.grad[..pc]);
    }
}

/// Evaluator of `𝓘_{𝒯,h̄}` and `∂𝓘/∂θ` for one problem and network shape.
///
/// Rows are split into fixed blocks that depend only on the row counts, and
/// block results are reduced in block order. The result is therefore the
/// same whether blocks run sequentially or on a thread pool.
pub struct EnergyKernel {
    spec: ProblemSpec,
    scheme: SincScheme,
    kind: AnsatzKind,
    shape: FnnShape,
    chunk: usize,
    parallel: bool,
}

/// Upper bound on Dirichlet blocks per evaluation.
const MAX_BLOCKS: usize = 64;

impl EnergyKernel {
    pub fn new(spec: &ProblemSpec, scheme: &SincScheme, kind: AnsatzKind, shape: FnnShape) -> Result<Self> {
        Self::with_chunk(spec, scheme, kind, shape, DEFAULT_CHUNK)
    }

    pub fn with_chunk(
        spec: &ProblemSpec,
        scheme: &SincScheme,
        kind: AnsatzKind,
        shape: FnnShape,
        chunk: usize,
    ) -> Result<Self> {
        if shape.input_dim != spec.dim() + 1 {
            return Err(Error::contract("network input dimension must be d + 1"));
        }
        if (scheme.s() - spec.s()).abs() > 1e-15 {
            return Err(Error::contract("sinc scheme and problem use different fractions"));
        }
        Ok(Self {
            spec: spec.clone(),
            scheme: scheme.clone(),
            kind,
            shape,
            chunk: chunk.max(1),
            parallel: false,
        })
    }

    /// Runs blocks on the rayon pool. Results do not change.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn scheme(&self) -> &SincScheme {
        &self.scheme
    }

    fn active_nodes(&self, params: &NetParams, scale: f64) -> Vec<NodeFactors> {
        let (g1, g2) = params.decay_rates();
        let p = 1.0 - self.spec.alpha();
        self.scheme
            .nodes()
            .iter()
            .zip(self.scheme.weights())
            .filter_map(|(&y, &w)| {
                let e1 = (-g1 * y).exp();
                let (e2, de2) = match self.kind {
                    AnsatzKind::Special => {
                        let e2 = (p * y.ln() - g2 * y).exp();
                        (e2, (p / y - g2) * e2)
                    }
                    AnsatzKind::Simple => (0.0, 0.0),
                };
                // rows whose decay factors underflow contribute exactly zero
                (e1 != 0.0 || e2 != 0.0).then_some(NodeFactors {
                    y,
                    weight: 0.5 * scale * w,
                    e1,
                    e2,
                    de2,
                })
            })
            .collect()
    }

    fn blocks(&self, dirichlet_rows: usize, points: Range<usize>) -> Vec<RowBlock> {
        let chunks = dirichlet_rows.div_ceil(self.chunk);
        let count = chunks.clamp(1, MAX_BLOCKS);
        let per = chunks.div_ceil(count) * self.chunk;
        let mut out: Vec<RowBlock> = (0..dirichlet_rows)
            .step_by(per.max(1))
            .map(|s| RowBlock::Dirichlet(s..(s + per).min(dirichlet_rows)))
            .collect();
        out.push(RowBlock::Trace(points));
        out
    }

    /// Loss and gradient over the sample points in `range`, normalized by
    /// `|Ω| / range.len()`.
    pub fn evaluate(&self, params: &NetParams, sample: &PreparedSample, range: Range<usize>) -> Result<EnergyValue> {
        if params.kind() != self.kind || params.shape() != self.shape {
            return Err(Error::contract("parameters do not match the kernel's ansatz"));
        }
        if sample.dim != self.spec.dim() {
            return Err(Error::contract("sample dimension differs from the problem dimension"));
        }
        if range.is_empty() || range.end > sample.len() {
            return Err(Error::contract(format!(
                "batch range {range:?} is empty or exceeds the sample of {}",
                sample.len()
            )));
        }
        let scale = self.spec.domain().volume() / range.len() as f64;
        let pc = self.shape.param_count();
        let flat = params.as_slice();
        let pass = Pass {
            kind: self.kind,
            shape: self.shape,
            d_s: self.spec.d_s(),
            scale,
            decay: params.decay_rates(),
            thetas: [&flat[..pc], flat.get(pc..2 * pc).unwrap_or(&[])],
            sample,
            points: range.clone(),
            active: self.active_nodes(params, scale),
        };
        let blocks = self.blocks(pass.active.len() * range.len(), range);
        let run = |block: &RowBlock| Worker::new(self.kind, self.shape, self.chunk).run(&pass, block, self.chunk);
        let partials: Vec<Partial> = if self.parallel {
            use rayon::prelude::*;
            blocks.par_iter().map(run).collect()
        } else {
            blocks.iter().map(run).collect()
        };

        let mut grad = ParamGradient::zeros(params.len());
        let mut loss = CompensatedSum::new();
        let mut dgamma = [0.0f64; 2];
        for part in &partials {
            loss.add(part.loss.value());
            for (g, p) in grad.0.iter_mut().zip(&part.grad) {
                *g += p;
            }
            dgamma[0] += part.dgamma[0];
            dgamma[1] += part.dgamma[1];
        }
        if self.kind == AnsatzKind::Special {
            let n = params.len();
            grad.0[n - 2] = dgamma[0] * sigmoid(flat[n - 2]);
            grad.0[n - 1] = dgamma[1] * sigmoid(flat[n - 1]);
        }
        let loss = loss.value();
        if !loss.is_finite() {
            return Err(Error::non_finite("discrete energy", loss));
        }
        if let Some(i) = grad.first_non_finite() {
            return Err(Error::non_finite(format!("energy gradient component {i}"), grad.0[i]));
        }
        Ok(EnergyValue { loss, grad })
    }
}

/// The same energy and gradient recorded on the scalar [`Graph`]; an
/// independent route for validating [`EnergyKernel`] on small problems.
pub fn tape_energy_gradient(
    params: &NetParams,
    spec: &ProblemSpec,
    batch: &McSample,
    scheme: &SincScheme,
) -> Result<(f64, ParamGradient)> {
    let shape = params.shape();
    let pc = shape.param_count();
    let d = spec.dim();
    let kind = params.kind();
    let alpha = spec.alpha();
    let p = 1.0 - alpha;
    let scale = spec.domain().volume() / batch.len() as f64;
    loss_param_gradient(params.as_slice(), |g, leaves| {
        let theta_a = &leaves[..pc];
        let (gamma1, gamma2) = match kind {
            AnsatzKind::Special => {
                let n = leaves.len();
                (g.softplus(leaves[n - 2]), Some(g.softplus(leaves[n - 1])))
            }
            AnsatzKind::Simple => (g.constant(0.5), None),
        };
        let mut terms = Vec::new();
        for (&y, &w) in scheme.nodes().iter().zip(scheme.weights()) {
            for x in batch.iter() {
                let mut gh = vec![0.0; d];
                let hv = spec.domain().boundary_factor_grad(x, &mut gh);
                let z: Vec<Var> = x.iter().chain(std::iter::once(&y)).map(|&c| g.constant(c)).collect();
                let h = g.constant(hv);
                let ghv: Vec<Var> = gh.iter().map(|&c| g.constant(c)).collect();
                let na = g.fnn(&shape, theta_a, &z)?;
                let ge1 = g.scale(gamma1, -y);
                let e1 = g.exp(ge1);
                let mut comps = branch(g, &na.value, &na.grad, h, &ghv, e1, None, gamma1, d);
                if let Some(gamma2) = gamma2 {
                    let nb = g.fnn(&shape, &leaves[pc..2 * pc], &z)?;
                    let lny = g.constant(p * y.ln());
                    let ge2 = g.scale(gamma2, -y);
                    let expo = g.add(lny, ge2);
                    let e2 = g.exp(expo);
                    let py = g.constant(p / y);
                    let rate = g.sub(py, gamma2);
                    let de2 = g.mul(rate, e2);
                    let c2 = branch(g, &nb.value, &nb.grad, h, &ghv, e2, Some(de2), gamma2, d);
                    comps = comps.iter().zip(&c2).map(|(&a, &b)| g.add(a, b)).collect();
                }
                let sq = g.dot(&comps, &comps);
                terms.push(g.scale(sq, 0.5 * scale * w));
            }
        }
        for x in batch.iter() {
            let z: Vec<Var> = x.iter().chain(std::iter::once(&0.0)).map(|&c| g.constant(c)).collect();
            let na = g.fnn(&shape, theta_a, &z)?;
            let coef = -scale * spec.d_s() * spec.rhs(x) * spec.domain().boundary_factor(x);
            terms.push(g.scale(na.value, coef));
        }
        Ok(g.sum(&terms))
    })
}

/// Gradient components of one branch `N(x,y) h(x) E(y)`; `dexp` is `E′`, or
/// `None` for `E = e^{−γy}`.
#[allow(clippy::too_many_arguments)]
fn branch(
    g: &mut Graph,
    value: &Var,
    grad: &[Var],
    h: Var,
    gh: &[Var],
    e: Var,
    dexp: Option<Var>,
    gamma: Var,
    d: usize,
) -> Vec<Var> {
    let mut out = Vec::with_capacity(d + 1);
    for j in 0..d {
        let t1 = g.mul(h, grad[j]);
        let t2 = g.mul(*value, gh[j]);
        let s = g.add(t1, t2);
        out.push(g.mul(e, s));
    }
    let ny = match dexp {
        None => {
            let ga = g.mul(gamma, *value);
            let diff = g.sub(grad[d], ga);
            let he = g.mul(h, e);
            g.mul(he, diff)
        }
        Some(de) => {
            let t1 = g.mul(e, grad[d]);
            let t2 = g.mul(*value, de);
            let s = g.add(t1, t2);
            g.mul(h, s)
        }
    };
    out.push(ny);
    out
}

/// Decay rate from the raw parameter; exposed for diagnostics.
pub fn decay_rate(raw: f64) -> f64 {
    softplus(raw)
}
