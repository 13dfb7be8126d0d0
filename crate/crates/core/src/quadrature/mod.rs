//! Sinc quadrature in `y`, quasi-Monte Carlo in `x`, and the discrete energy
//!
//! ```text
//! 𝓘_{𝒯,h̄}[φ̂] = |Ω|/N · ( ½ Σ_m w_m Σ_n |∇φ̂(x_n, y_m)|² − d_s Σ_n f(x_n) φ̂(x_n, 0) )
//! ```
//!
//! with `y_m = e^{m h̄}` and `w_m = h̄ e^{(α+1) m h̄}`. The pointwise assembly in
//! this module is the reference route; [`energy::EnergyKernel`] is the batched
//! route used for training.

pub mod energy;

use crate::ansatz::{ProblemSpec, TrialFunction};
use crate::domain::McSample;
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// Nodes and weights of the sinc rule for `∫_0^∞ y^α g(y) dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct SincScheme {
    h: f64,
    s: f64,
    n_minus: usize,
    n_plus: usize,
    mu: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

/// `N₊ = ⌈π²/(4 s h̄²)⌉`, `N₋ = ⌈π²/(4 (1−s) h̄²)⌉`, `μ_m = m h̄` for `m = −N₋..=N₊`.
pub fn sinc_scheme(s: f64, h: f64) -> Result<SincScheme> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::contract(format!("fraction s = {s} must lie in (0, 1)")));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::contract(format!("sinc step {h} must be positive")));
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let n_plus = (pi2 / (4.0 * s * h * h)).ceil() as usize;
    let n_minus = (pi2 / (4.0 * (1.0 - s) * h * h)).ceil() as usize;
    let alpha = 1.0 - 2.0 * s;
    let mu: Vec<f64> = (-(n_minus as i64)..=n_plus as i64).map(|m| m as f64 * h).collect();
    let y = mu.iter().map(|m| m.exp()).collect();
    let w = mu.iter().map(|m| h * ((alpha + 1.0) * m).exp()).collect();
    Ok(SincScheme {
        h,
        s,
        n_minus,
        n_plus,
        mu,
        y,
        w,
    })
}

impl SincScheme {
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn alpha(&self) -> f64 {
        1.0 - 2.0 * self.s
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `μ_m`, ascending.
    pub fn exponents(&self) -> &[f64] {
        &self.mu
    }

    /// `y_m = e^{μ_m}`.
    pub fn nodes(&self) -> &[f64] {
        &self.y
    }

    /// `h̄ e^{(α+1) μ_m}`.
    pub fn weights(&self) -> &[f64] {
        &self.w
    }
}

/// `h̄ Σ_m e^{(α+1)μ_m} g(e^{μ_m}) ≈ ∫_0^∞ y^α g(y) dy`.
pub fn sinc_integrate<G: FnMut(f64) -> f64>(mut g: G, scheme: &SincScheme) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for (i, (&y, &w)) in scheme.y.iter().zip(&scheme.w).enumerate() {
        let v = g(y);
        if !v.is_finite() {
            let m = i as i64 - scheme.n_minus as i64;
            return Err(Error::non_finite(format!("sinc node m = {m} (y = {y:e})"), v));
        }
        acc.add(w * v);
    }
    Ok(acc.value())
}

/// `|Ω|/N Σ_n f(x_n)`.
pub fn mc_integrate<F: FnMut(&[f64]) -> f64>(mut f: F, sample: &McSample, volume: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::contract("Monte Carlo sample is empty"));
    }
    let mut acc = CompensatedSum::new();
    for (n, x) in sample.iter().enumerate() {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::non_finite(format!("Monte Carlo point {n}"), v));
        }
        acc.add(v);
    }
    Ok(volume / sample.len() as f64 * acc.value())
}

fn check_consistent(spec: &ProblemSpec, batch: &McSample, scheme: &SincScheme) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("quadrature batch is empty"));
    }
    if batch.dim() != spec.dim() {
        return Err(Error::contract("batch dimension differs from the problem dimension"));
    }
    if (scheme.s - spec.s()).abs() > 1e-15 {
        return Err(Error::contract(format!(
            "sinc scheme built for s = {} used with s = {}",
            scheme.s,
            spec.s()
        )));
    }
    Ok(())
}

/// Discrete energy `𝓘_{𝒯,h̄}` of any trial function, evaluated point by point.
///
/// Sums run m-major then n with compensated accumulation.
pub fn assemble_loss<T: TrialFunction + ?Sized>(
    trial: &mut T,
    spec: &ProblemSpec,
    batch: &McSample,
    scheme: &SincScheme,
) -> Result<f64> {
    check_consistent(spec, batch, scheme)?;
    let d = spec.dim();
    let mut grad = vec![0.0; d + 1];
    let mut dirichlet = CompensatedSum::new();
    for (m, (&y, &w)) in scheme.y.iter().zip(&scheme.w).enumerate() {
        for (n, x) in batch.iter().enumerate() {
            trial.grad(x, y, &mut grad)?;
            let sq: f64 = grad.iter().map(|g| g * g).sum();
            let term = w * sq;
            if !term.is_finite() {
                return Err(Error::non_finite(format!("gradient term at node {m}, point {n}"), term));
            }
            dirichlet.add(term);
        }
    }
    let mut source = CompensatedSum::new();
    for (n, x) in batch.iter().enumerate() {
        let v = spec.rhs(x) * trial.trace(x)?;
        if !v.is_finite() {
            return Err(Error::non_finite(format!("source term at point {n}"), v));
        }
        source.add(v);
    }
    let scale = spec.domain().volume() / batch.len() as f64;
    Ok(scale * (0.5 * dirichlet.value() - spec.d_s() * source.value()))
}

/// `𝓘_{𝒯,h̄}[u + τ w]` for every `τ` in `taus`, sharing the pointwise
/// evaluations of `u` and `w`.
pub fn energy_along<U, W>(
    u: &mut U,
    w: &mut W,
    taus: &[f64],
    spec: &ProblemSpec,
    batch: &McSample,
    scheme: &SincScheme,
) -> Result<Vec<f64>>
where
    U: TrialFunction + ?Sized,
    W: TrialFunction + ?Sized,
{
    check_consistent(spec, batch, scheme)?;
    let d = spec.dim();
    let mut gu = vec![0.0; d + 1];
    let mut gw = vec![0.0; d + 1];
    let mut dirichlet = vec![CompensatedSum::new(); taus.len()];
    for (&y, &wt) in scheme.y.iter().zip(&scheme.w) {
        for x in batch.iter() {
            u.grad(x, y, &mut gu)?;
            w.grad(x, y, &mut gw)?;
            for (acc, &tau) in dirichlet.iter_mut().zip(taus) {
                let sq: f64 = gu.iter().zip(&gw).map(|(a, b)| (a + tau * b) * (a + tau * b)).sum();
                acc.add(wt * sq);
            }
        }
    }
    let mut source = vec![CompensatedSum::new(); taus.len()];
    for x in batch.iter() {
        let f = spec.rhs(x);
        let (tu, tw) = (u.trace(x)?, w.trace(x)?);
        for (acc, &tau) in source.iter_mut().zip(taus) {
            acc.add(f * (tu + tau * tw));
        }
    }
    let scale = spec.domain().volume() / batch.len() as f64;
    let out: Vec<f64> = dirichlet
        .iter()
        .zip(&source)
        .map(|(dch, src)| scale * (0.5 * dch.value() - spec.d_s() * src.value()))
        .collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("energy at tau = {}", taus[i]), out[i]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{halton_points, Hypercube};
    use statrs::function::gamma::gamma;

    #[test]
    fn node_counts() {
        let sch = sinc_scheme(0.5, 1.0 / 3.0).unwrap();
        assert_eq!((sch.n_plus(), sch.n_minus()), (45, 45));
        assert_eq!(sch.len(), 91);
        let sch = sinc_scheme(0.25, 1.0 / 3.0).unwrap();
        assert_eq!((sch.n_plus(), sch.n_minus()), (89, 30));
        for h in [0.1, 0.37, 1.0, 2.5] {
            let sch = sinc_scheme(0.5, h).unwrap();
            assert_eq!(sch.n_plus(), sch.n_minus());
        }
        let sch = sinc_scheme(0.3, 0.5).unwrap();
        assert!(sch.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(sch.nodes().iter().all(|&y| y > 0.0));
        assert!(sinc_scheme(0.0, 0.5).is_err());
        assert!(sinc_scheme(0.5, 0.0).is_err());
    }

    #[test]
    fn gamma_identities() {
        let cases = [(0.5, 1.0, 1.0), (0.75, 1.0, std::f64::consts::PI.sqrt()), (0.25, 2.0, 0.313_328_534_328_875_2)];
        for (s, rate, want) in cases {
            let sch = sinc_scheme(s, 1.0 / 3.0).unwrap();
            let got = sinc_integrate(|y| (-rate * y).exp(), &sch).unwrap();
            assert!((got - want).abs() < 1e-5, "s = {s}: {got} vs {want}");
        }
        // Γ(1.5)/2^1.5 from the Gamma function itself
        assert!((gamma(1.5) / 2f64.powf(1.5) - 0.313_328_534_328_875_2).abs() < 1e-15);
    }

    #[test]
    fn error_shrinks_with_the_step() {
        for s in [0.25, 0.5, 0.75] {
            let alpha = 1.0 - 2.0 * s;
            let exact = gamma(alpha + 1.0);
            let errs: Vec<f64> = [1.0, 0.5, 1.0 / 3.0, 0.25]
                .iter()
                .map(|&h| {
                    let sch = sinc_scheme(s, h).unwrap();
                    (sinc_integrate(|y| (-y).exp(), &sch).unwrap() - exact).abs()
                })
                .collect();
            for w in errs.windows(2) {
                assert!(w[1] <= 1.1 * w[0] + 1e-15, "s = {s}: {errs:?}");
            }
        }
    }

    #[test]
    fn non_finite_integrand_names_the_node() {
        let sch = sinc_scheme(0.5, 1.0).unwrap();
        let err = sinc_integrate(|y| if y > 100.0 { f64::INFINITY } else { y }, &sch).unwrap_err();
        assert!(err.to_string().contains("m = 5"), "{err}");
    }

    #[test]
    fn monte_carlo_rules() {
        let dom = Hypercube::new(vec![(-1.0, 2.0), (0.0, 0.5)]).unwrap();
        let sample = halton_points(&dom, 37, 0).unwrap();
        assert!((mc_integrate(|_| 1.0, &sample, dom.volume()).unwrap() - 1.5).abs() < 1e-15);

        let sq = Hypercube::symmetric_unit(2).unwrap();
        let pts = vec![0.3, -0.2, -0.3, 0.2, 0.7, 0.1, -0.7, -0.1];
        let paired = McSample::from_points(2, pts).unwrap();
        let odd = mc_integrate(|x| x[0] * x[0] * x[0] + x[1], &paired, sq.volume()).unwrap();
        assert_eq!(odd, 0.0);

        let sample = halton_points(&sq, 100_000, 0).unwrap();
        let pi = std::f64::consts::PI;
        let v = mc_integrate(|x| (pi * x[0]).sin().powi(2) * (pi * x[1]).sin().powi(2), &sample, sq.volume()).unwrap();
        assert!((v - 1.0).abs() < 1e-3, "{v}");

        let bad = mc_integrate(|x| if x[0] > 0.9 { f64::NAN } else { 0.0 }, &sample, 4.0);
        assert!(bad.is_err());
    }
}
