//! Closed-form model solutions, the extension-profile oracle, error metrics
//! and the stationarity probe.
//!
//! The model problem on `(−1, 1)^d` is `U*(x) = ∏ sin(π x_i)` with
//! `f = (dπ²)^s U*`. Its extension is `U*(x) ψ_s(√λ y)` with `λ = dπ²`, where
//! `ψ_s` solves
//!
//! ```text
//! ψ″ + (α/t) ψ′ = ψ,   ψ(0) = 1,   ψ(∞) = 0.
//! ```
//!
//! For `s = 1/2` this is `e^{−t}`. For other `s` the profile comes from
//! [`PsiTable`], built without touching the network or quadrature code:
//!
//! * near the origin, the Frobenius pair `ψ = R(t) + β t^{2s} S(t)` with
//!   `R = Σ a_k t^{2k}`, `a_k = a_{k−1} / (2k(2k − 2s))` and
//!   `S = Σ b_k t^{2k}`, `b_k = b_{k−1} / (2k(2k + 2s))`;
//! * `β = −lim R / (t^{2s} S)`, read off where the ratio has converged;
//! * beyond `t_match` a backward RK4 sweep started on the decaying branch,
//!   `ψ′/ψ ≈ −1 + (s − ½)/t`, scaled to meet the series at `t_match`.
//!
//! As a consistency check `β` must equal `−d_s / (2s)`, which is the
//! statement `−lim t^α ψ′(t) = d_s`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::{extension_constant, AnsatzEval, NetParams, ProblemSpec, TrialFunction};
use crate::domain::McSample;
use crate::error::{Error, Result};
use crate::quadrature::{energy_along, SincScheme};
use crate::sum::CompensatedSum;

/// Right-hand sides known to the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rhs {
    /// `(dπ²)^s ∏ sin(π x_i)`.
    #[serde(rename = "sine-product")]
    SineProduct,
}

impl Rhs {
    pub fn eval(self, s: f64, x: &[f64]) -> f64 {
        match self {
            Rhs::SineProduct => eigenvalue(x.len()).powf(s) * sine_product(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rhs::SineProduct => "sine-product",
        }
    }
}

fn sine_product(x: &[f64]) -> f64 {
    x.iter().map(|&t| (PI * t).sin()).product()
}

/// `λ = dπ²`.
pub fn eigenvalue(dim: usize) -> f64 {
    dim as f64 * PI * PI
}

/// The sine-product problem on `(−1, 1)^d`.
#[derive(Clone, Debug)]
pub struct ModelProblem {
    spec: ProblemSpec,
    psi: Option<PsiTable>,
}

impl ModelProblem {
    /// For `s ≠ 1/2` the extension needs [`ModelProblem::with_psi_table`].
    pub fn new(dim: usize, s: f64) -> Result<Self> {
        Ok(Self {
            spec: ProblemSpec::model(dim, s)?,
            psi: None,
        })
    }

    pub fn with_psi_table(mut self, table: PsiTable) -> Result<Self> {
        if (table.s - self.spec.s()).abs() > 1e-12 {
            return Err(Error::PsiTable(format!(
                "table built for s = {} but the problem has s = {}",
                table.s,
                self.spec.s()
            )));
        }
        self.psi = Some(table);
        Ok(self)
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn s(&self) -> f64 {
        self.spec.s()
    }

    pub fn eigenvalue(&self) -> f64 {
        eigenvalue(self.dim())
    }

    /// `U*(x)`.
    pub fn exact_trace(&self, x: &[f64]) -> f64 {
        sine_product(x)
    }

    pub fn rhs(&self, x: &[f64]) -> f64 {
        self.spec.rhs(x)
    }

    /// `ψ_s(t)` and `ψ_s′(t)`.
    fn profile(&self, t: f64) -> Result<(f64, f64)> {
        if self.s() == 0.5 {
            let e = (-t).exp();
            return Ok((e, -e));
        }
        match &self.psi {
            Some(table) => Ok(table.eval_with_derivative(t)),
            None => Err(Error::PsiTable(format!(
                "no extension profile table loaded for s = {}",
                self.s()
            ))),
        }
    }

    /// `U*(x) ψ_s(√λ y)`.
    pub fn exact_extension(&self, x: &[f64], y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::contract(format!("y = {y} must be non-negative")));
        }
        let (psi, _) = self.profile(self.eigenvalue().sqrt() * y)?;
        Ok(self.exact_trace(x) * psi)
    }

    /// `𝓘[u*] = −½ d_s (f, U*)_Ω`, using `∫_{−1}^{1} sin²(πt) dt = 1`.
    pub fn exact_energy(&self) -> f64 {
        -0.5 * self.spec.d_s() * self.eigenvalue().powf(self.s())
    }
}

/// The exact extension as a trial function.
pub struct ExactExtension<'a> {
    mp: &'a ModelProblem,
}

impl<'a> ExactExtension<'a> {
    pub fn new(mp: &'a ModelProblem) -> Result<Self> {
        mp.profile(1.0)?;
        Ok(Self { mp })
    }
}

impl TrialFunction for ExactExtension<'_> {
    fn dim(&self) -> usize {
        self.mp.dim()
    }

    fn trace(&mut self, x: &[f64]) -> Result<f64> {
        Ok(self.mp.exact_trace(x))
    }

    fn grad(&mut self, x: &[f64], y: f64, grad: &mut [f64]) -> Result<()> {
        let d = self.mp.dim();
        if x.len() != d || grad.len() != d + 1 {
            return Err(Error::contract("point or gradient buffer has the wrong dimension"));
        }
        let k = self.mp.eigenvalue().sqrt();
        let (psi, dpsi) = self.mp.profile(k * y)?;
        let sines: Vec<f64> = x.iter().map(|&t| (PI * t).sin()).collect();
        for i in 0..d {
            let others: f64 = sines
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v)
                .product();
            grad[i] = PI * (PI * x[i]).cos() * others * psi;
        }
        grad[d] = sines.iter().product::<f64>() * k * dpsi;
        Ok(())
    }
}

/// Tabulated extension profile `ψ_s` on a logarithmic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiTable {
    s: f64,
    beta: f64,
    t_match: f64,
    t: Vec<f64>,
    psi: Vec<f64>,
    ln_t: Vec<f64>,
    ln_psi: Vec<f64>,
}

const SERIES_TOL: f64 = 1e-17;
const T_MATCH: f64 = 2.0;
const T_FAR: f64 = 45.0;
const RK_STEP: f64 = 1e-3;

/// `(R, R′)` and `(S, S′)` of the Frobenius pair.
fn frobenius(s: f64, t: f64) -> ((f64, f64), (f64, f64)) {
    let t2 = t * t;
    let mut r = (1.0, 0.0);
    let mut q = (1.0, 0.0);
    let mut a = 1.0;
    let mut b = 1.0;
    let mut pow = 1.0;
    for k in 1..2000 {
        let kf = k as f64;
        a /= 2.0 * kf * (2.0 * kf - 2.0 * s);
        b /= 2.0 * kf * (2.0 * kf + 2.0 * s);
        let prev = pow;
        pow *= t2;
        r.0 += a * pow;
        r.1 += a * 2.0 * kf * prev * t;
        q.0 += b * pow;
        q.1 += b * 2.0 * kf * prev * t;
        if a * pow <= SERIES_TOL * r.0 && b * pow <= SERIES_TOL * q.0 {
            break;
        }
    }
    (r, q)
}

/// `ψ` and `ψ′` from the series with connection coefficient `beta`.
fn series(s: f64, beta: f64, t: f64) -> (f64, f64) {
    if t == 0.0 {
        return (1.0, f64::NEG_INFINITY);
    }
    let ((r, dr), (q, dq)) = frobenius(s, t);
    let tp = (2.0 * s * t.ln()).exp();
    let psi = r + beta * tp * q;
    let dpsi = dr + beta * (2.0 * s * tp / t * q + tp * dq);
    (psi, dpsi)
}

fn rk4_step(alpha: f64, t: f64, state: (f64, f64), h: f64) -> (f64, f64) {
    let f = |t: f64, (p, dp): (f64, f64)| (dp, p - alpha / t * dp);
    let k1 = f(t, state);
    let k2 = f(t + h / 2.0, (state.0 + h / 2.0 * k1.0, state.1 + h / 2.0 * k1.1));
    let k3 = f(t + h / 2.0, (state.0 + h / 2.0 * k2.0, state.1 + h / 2.0 * k2.1));
    let k4 = f(t + h, (state.0 + h * k3.0, state.1 + h * k3.1));
    (
        state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

impl PsiTable {
    /// Tabulates `ψ_s` on `points` log-spaced abscissae in `[t_min, t_max]`.
    pub fn build(s: f64, t_min: f64, t_max: f64, points: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::contract(format!("fraction s = {s} must lie in (0, 1)")));
        }
        if !(t_min > 0.0 && t_min < T_MATCH && t_max > T_MATCH && t_max < T_FAR && points >= 8) {
            return Err(Error::contract(format!(
                "grid [{t_min}, {t_max}] with {points} points must straddle t = {T_MATCH} and stay below {T_FAR}"
            )));
        }
        let alpha = 1.0 - 2.0 * s;

        let ratio = |t: f64| {
            let ((r, _), (q, _)) = frobenius(s, t);
            -r / ((2.0 * s * t.ln()).exp() * q)
        };
        let beta = ratio(30.0);
        let beta_check = ratio(34.0);
        if !beta.is_finite() || (beta - beta_check).abs() > 1e-12 * beta.abs() {
            return Err(Error::PsiTable(format!(
                "connection coefficient did not settle: {beta} vs {beta_check}"
            )));
        }

        let ln_min = t_min.ln();
        let step = (t_max.ln() - ln_min) / (points - 1) as f64;
        let t: Vec<f64> = (0..points).map(|i| (ln_min + step * i as f64).exp()).collect();
        let mut psi = vec![0.0; points];

        // decaying branch, integrated towards the origin
        let mut state = (1.0, -1.0 + (s - 0.5) / T_FAR);
        let mut tc = T_FAR;
        let mut advance = |to: f64, state: &mut (f64, f64)| {
            let n = ((tc - to) / RK_STEP).ceil().max(1.0) as usize;
            let h = (to - tc) / n as f64;
            for _ in 0..n {
                *state = rk4_step(alpha, tc, *state, h);
                tc += h;
            }
            tc = to;
        };
        let far: Vec<usize> = (0..points).filter(|&i| t[i] > T_MATCH).collect();
        for &i in far.iter().rev() {
            advance(t[i], &mut state);
            psi[i] = state.0;
        }
        advance(T_MATCH, &mut state);
        let (p_match, dp_match) = series(s, beta, T_MATCH);
        let scale = p_match / state.0;
        let mismatch = (scale * state.1 - dp_match).abs() / dp_match.abs();
        if !(mismatch < 1e-7) {
            return Err(Error::PsiTable(format!(
                "series and far-field branches disagree in slope at t = {T_MATCH}: relative gap {mismatch:e}"
            )));
        }
        for &i in &far {
            psi[i] *= scale;
        }
        for i in 0..points {
            if t[i] <= T_MATCH {
                psi[i] = series(s, beta, t[i]).0;
            }
        }
        Self::from_parts(s, beta, T_MATCH, t, psi)
    }

    /// The default grid: 4001 points on `[1e−8, 40]`.
    pub fn build_default(s: f64) -> Result<Self> {
        Self::build(s, 1e-8, 40.0, 4001)
    }

    fn from_parts(s: f64, beta: f64, t_match: f64, t: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::PsiTable(format!("fraction s = {s} must lie in (0, 1)")));
        }
        if t.len() != psi.len() || t.len() < 4 {
            return Err(Error::PsiTable("table needs at least four (t, psi) rows".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) || !(t[0] > 0.0) {
            return Err(Error::PsiTable(
                "abscissae must be positive and strictly increasing".into(),
            ));
        }
        if let Some(i) = psi.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::PsiTable(format!(
                "psi at row {i} is not positive and finite: {}",
                psi[i]
            )));
        }
        if !(t[0] <= t_match && t_match < *t.last().unwrap()) {
            return Err(Error::PsiTable("matching point lies outside the grid".into()));
        }
        Ok(Self {
            s,
            beta,
            t_match,
            ln_t: t.iter().map(|v| v.ln()).collect(),
            ln_psi: psi.iter().map(|v| v.ln()).collect(),
            t,
            psi,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Coefficient of the `t^{2s}` branch.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t.iter().copied().zip(self.psi.iter().copied())
    }

    /// `−lim t^α ψ′(t)`, which should equal `d_s`.
    pub fn flux_at_origin(&self) -> f64 {
        -2.0 * self.s * self.beta
    }

    /// Relative gap between [`PsiTable::flux_at_origin`] and `d_s`.
    pub fn flux_gap(&self) -> f64 {
        let d_s = extension_constant(self.s);
        (self.flux_at_origin() - d_s).abs() / d_s
    }

    /// Cubic Lagrange in `(ln t, ln ψ)`: value and derivative in `ln t`.
    fn lagrange(&self, lt: f64) -> (f64, f64) {
        let i = self.ln_t.partition_point(|&v| v <= lt);
        let j = i.saturating_sub(2).min(self.ln_t.len() - 4);
        let xs = &self.ln_t[j..j + 4];
        let ys = &self.ln_psi[j..j + 4];
        let mut v = 0.0;
        let mut dv = 0.0;
        for i in 0..4 {
            let mut li = 1.0;
            let mut dli = 0.0;
            for k in 0..4 {
                if k == i {
                    continue;
                }
                let mut prod = 1.0 / (xs[i] - xs[k]);
                for m in 0..4 {
                    if m != i && m != k {
                        prod *= (lt - xs[m]) / (xs[i] - xs[m]);
                    }
                }
                dli += prod;
                li *= (lt - xs[k]) / (xs[i] - xs[k]);
            }
            v += ys[i] * li;
            dv += ys[i] * dli;
        }
        (v, dv)
    }

    fn tail(&self, t: f64) -> (f64, f64) {
        let t_end = *self.t.last().unwrap();
        let p_end = *self.psi.last().unwrap();
        let psi = p_end * (t / t_end).powf(self.s - 0.5) * (-(t - t_end)).exp();
        (psi, psi * (-1.0 + (self.s - 0.5) / t))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).1
    }

    /// `(ψ(t), ψ′(t))` for `t ≥ 0`.
    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        if t <= self.t_match {
            return series(self.s, self.beta, t.max(0.0));
        }
        if t > *self.t.last().unwrap() {
            return self.tail(t);
        }
        let (lv, dlv) = self.lagrange(t.ln());
        let psi = lv.exp();
        (psi, psi * dlv / t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# extension profile psi_s");
        let _ = writeln!(out, "# s = {:e}", self.s);
        let _ = writeln!(out, "# beta = {:e}", self.beta);
        let _ = writeln!(out, "# t_match = {:e}", self.t_match);
        let _ = writeln!(
            out,
            "# grid = log {:e} {:e} {}",
            self.t[0],
            self.t.last().unwrap(),
            self.t.len()
        );
        let _ = writeln!(out, "# t psi");
        for (t, p) in self.rows() {
            let _ = writeln!(out, "{t:e} {p:e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = None;
        let mut beta = None;
        let mut t_match = None;
        let mut t = Vec::new();
        let mut psi = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once('=') {
                    let key = key.trim();
                    let parse = || {
                        value.trim().parse::<f64>().map_err(|e| {
                            Error::PsiTable(format!("line {}: bad value for {key}: {e}", lineno + 1))
                        })
                    };
                    match key {
                        "s" => s = Some(parse()?),
                        "beta" => beta = Some(parse()?),
                        "t_match" => t_match = Some(parse()?),
                        _ => {}
                    }
                }
                continue;
            }
            let mut cols = line.split_whitespace().map(str::parse::<f64>);
            match (cols.next(), cols.next(), cols.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => {
                    t.push(a);
                    psi.push(b);
                }
                _ => {
                    return Err(Error::PsiTable(format!(
                        "line {}: expected two numbers",
                        lineno + 1
                    )))
                }
            }
        }
        let missing = |k: &str| Error::PsiTable(format!("header field '{k}' missing"));
        Self::from_parts(
            s.ok_or_else(|| missing("s"))?,
            beta.ok_or_else(|| missing("beta"))?,
            t_match.ok_or_else(|| missing("t_match"))?,
            t,
            psi,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// `(Σ |φ(x)−U*(x)|² / Σ |U*(x)|²)^{1/2}` over the test points.
pub fn relative_l2_error<F>(mut approx: F, mp: &ModelProblem, test: &McSample) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if test.is_empty() || test.dim() != mp.dim() {
        return Err(Error::contract("test set is empty or has the wrong dimension"));
    }
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for x in test.iter() {
        let u = mp.exact_trace(x);
        let e = approx(x)? - u;
        num.add(e * e);
        den.add(u * u);
    }
    if den.value() == 0.0 {
        return Err(Error::Numerical(
            "exact solution vanishes on the whole test set".into(),
        ));
    }
    let r = (num.value() / den.value()).sqrt();
    if !r.is_finite() {
        return Err(Error::non_finite("relative l2 error", r));
    }
    Ok(r)
}

/// [`relative_l2_error`] of a network trace.
pub fn network_l2_error(params: &NetParams, mp: &ModelProblem, test: &McSample) -> Result<f64> {
    let mut eval = AnsatzEval::new(params, mp.spec())?;
    relative_l2_error(|x| eval.trace(x), mp, test)
}

/// `ln(e_{i+1}/e_i) / ln(M_{i+1}/M_i)` for consecutive pairs.
pub fn convergence_order(errors: &[f64], ms: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != ms.len() || errors.len() < 2 {
        return Err(Error::contract(
            "need at least two (error, M) pairs of equal count",
        ));
    }
    if let Some(e) = errors.iter().find(|&&e| !(e > 0.0)) {
        return Err(Error::Numerical(format!("errors must be positive, got {e}")));
    }
    if ms.windows(2).any(|w| !(w[1] > w[0] && w[0] > 0.0)) {
        return Err(Error::contract("M values must be positive and increasing"));
    }
    Ok(errors
        .windows(2)
        .zip(ms.windows(2))
        .map(|(e, m)| (e[1] / e[0]).ln() / (m[1] / m[0]).ln())
        .collect())
}

/// Least-squares slope of `ln e` against `ln M`.
pub fn log_log_slope(errors: &[f64], ms: &[f64]) -> Result<f64> {
    convergence_order(errors, ms)?;
    let xs: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Energy along one direction: `g(τ) = 𝓘[u + τ w]` at `−τ, 0, τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionProbe {
    pub tau: f64,
    pub g_minus: f64,
    pub g_zero: f64,
    pub g_plus: f64,
}

impl DirectionProbe {
    /// Central-difference `g′(0)`.
    pub fn slope(&self) -> f64 {
        (self.g_plus - self.g_minus) / (2.0 * self.tau)
    }

    /// `(g(τ) − 2g(0) + g(−τ)) / τ`.
    pub fn curvature_term(&self) -> f64 {
        (self.g_plus - 2.0 * self.g_zero + self.g_minus) / self.tau
    }

    pub fn is_local_min(&self) -> bool {
        self.g_zero <= self.g_plus && self.g_zero <= self.g_minus
    }

    /// `|g′(0)| ≤ ratio · |curvature term|`.
    pub fn slope_is_small(&self, ratio: f64) -> bool {
        self.slope().abs() <= ratio * self.curvature_term().abs()
    }
}

/// Probes `𝓘_{𝒯,h̄}` around `u` along each direction at `±τ`.
pub fn stationarity_check<U, W>(
    u: &mut U,
    directions: &mut [W],
    tau: f64,
    spec: &ProblemSpec,
    batch: &McSample,
    scheme: &SincScheme,
) -> Result<Vec<DirectionProbe>>
where
    U: TrialFunction + ?Sized,
    W: TrialFunction,
{
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::contract(format!("tau = {tau} must be positive")));
    }
    directions
        .iter_mut()
        .map(|w| {
            let g = energy_along(u, w, &[-tau, 0.0, tau], spec, batch, scheme)?;
            Ok(DirectionProbe {
                tau,
                g_minus: g[0],
                g_zero: g[1],
                g_plus: g[2],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{halton_points, uniform_test_points};

    #[test]
    fn trace_and_rhs_hand_values() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        assert_eq!(mp.exact_trace(&[0.0, 0.3]), 0.0);
        assert!((mp.exact_trace(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((mp.rhs(&[0.5, 0.5]) - PI * 2f64.sqrt()).abs() < 1e-12);
        let x = [0.21, -0.4];
        assert!((mp.rhs(&x) / mp.exact_trace(&x) - (2.0 * PI * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn half_extension_closed_form() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        let x = [0.5, 0.5];
        assert_eq!(mp.exact_extension(&x, 0.0).unwrap(), mp.exact_trace(&x));
        let v = mp.exact_extension(&x, 1.0).unwrap();
        let want = (-(2f64.sqrt()) * PI).exp();
        assert!((v - want).abs() < 1e-15, "{v}");
        assert!((v - 0.011762).abs() < 1e-6, "{v}");
        assert!(mp.exact_extension(&x, -1.0).is_err());
    }

    #[test]
    fn general_s_needs_table() {
        let mp = ModelProblem::new(1, 0.3).unwrap();
        assert!(matches!(mp.exact_extension(&[0.2], 0.5), Err(Error::PsiTable(_))));
        assert!(ExactExtension::new(&mp).is_err());
    }

    #[test]
    fn extension_gradient_matches_differences() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        let mut u = ExactExtension::new(&mp).unwrap();
        let (x, y) = ([0.3, -0.2], 0.4);
        let mut g = [0.0; 3];
        u.grad(&x, y, &mut g).unwrap();
        let h = 1e-6;
        let f = |x0: f64, x1: f64, y: f64| mp.exact_extension(&[x0, x1], y).unwrap();
        let fd = [
            (f(x[0] + h, x[1], y) - f(x[0] - h, x[1], y)) / (2.0 * h),
            (f(x[0], x[1] + h, y) - f(x[0], x[1] - h, y)) / (2.0 * h),
            (f(x[0], x[1], y + h) - f(x[0], x[1], y - h)) / (2.0 * h),
        ];
        for i in 0..3 {
            assert!((g[i] - fd[i]).abs() < 1e-7 * (1.0 + fd[i].abs()), "{i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn psi_table_reproduces_exponential_at_half() {
        let table = PsiTable::build_default(0.5).unwrap();
        assert!((table.beta() + 1.0).abs() < 1e-12);
        for t in [1e-6f64, 0.01, 0.5, 1.9, 2.5, 7.0, 20.0, 39.0, 45.0] {
            let e = (-t).exp();
            let rel = (table.eval(t) - e).abs() / e;
            assert!(rel < 1e-7, "t = {t}: rel {rel}");
            let drel = (table.derivative(t) + e).abs() / e;
            assert!(drel < 1e-6, "t = {t}: derivative rel {drel}");
        }
    }

    #[test]
    fn psi_table_flux_matches_extension_constant() {
        for s in [0.1, 0.3, 0.7, 0.9] {
            let table = PsiTable::build_default(s).unwrap();
            assert!(table.flux_gap() < 1e-9, "s = {s}: gap {}", table.flux_gap());
            assert!((table.eval(0.0) - 1.0).abs() < 1e-15);
            let mut prev = f64::INFINITY;
            for (t, p) in table.rows() {
                assert!(p <= prev + 1e-14, "s = {s}: psi({t}) = {p} above {prev}");
                prev = p;
            }
        }
    }

    #[test]
    fn psi_table_solves_the_profile_equation() {
        let s = 0.3;
        let alpha = 1.0 - 2.0 * s;
        let table = PsiTable::build_default(s).unwrap();
        for t in [0.5, 1.5, 3.0, 8.0, 15.0] {
            let h = 1e-3 * t;
            let p = |t: f64| table.eval(t);
            let d1 = (p(t + h) - p(t - h)) / (2.0 * h);
            let d2 = (p(t + h) - 2.0 * p(t) + p(t - h)) / (h * h);
            let residual = (d2 + alpha / t * d1 - p(t)).abs() / p(t);
            assert!(residual < 1e-4, "t = {t}: residual {residual}");
        }
    }

    #[test]
    fn psi_table_text_round_trip() {
        let table = PsiTable::build(0.3, 1e-6, 30.0, 200).unwrap();
        let back = PsiTable::from_text(&table.to_text()).unwrap();
        assert_eq!(back, table);
        assert!(PsiTable::from_text("# s = 0.3\n1 2\n").is_err());
        assert!(PsiTable::from_text("# s = 0.3\n# beta = -1\n# t_match = 2\n1 2 3\n").is_err());
    }

    #[test]
    fn general_s_extension_via_table() {
        let table = PsiTable::build_default(0.3).unwrap();
        let mp = ModelProblem::new(1, 0.3).unwrap().with_psi_table(table.clone()).unwrap();
        let y = 0.2;
        let want = table.eval(PI * y);
        assert!((mp.exact_extension(&[0.5], y).unwrap() - want).abs() < 1e-15);
        assert!(ModelProblem::new(1, 0.4).unwrap().with_psi_table(table).is_err());
    }

    #[test]
    fn l2_error_trivial_cases() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        let test = uniform_test_points(mp.spec().domain(), 1000, 7).unwrap();
        assert_eq!(relative_l2_error(|x| Ok(mp.exact_trace(x)), &mp, &test).unwrap(), 0.0);
        assert!((relative_l2_error(|_| Ok(0.0), &mp, &test).unwrap() - 1.0).abs() < 1e-15);
        let e = relative_l2_error(|x| Ok(1.1 * mp.exact_trace(x)), &mp, &test).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        let zeros = McSample::from_points(2, vec![0.0, 0.0, 0.0, 0.5]).unwrap();
        assert!(relative_l2_error(|_| Ok(1.0), &mp, &zeros).is_err());
    }

    #[test]
    fn orders_from_definition() {
        let o = convergence_order(&[0.4, 0.2], &[25.0, 100.0]).unwrap();
        assert!((o[0] + 0.5).abs() < 1e-15);
        assert!(convergence_order(&[0.1], &[25.0]).is_err());
        assert!(convergence_order(&[0.1, 0.0], &[25.0, 50.0]).is_err());
        assert!(convergence_order(&[0.1, 0.2], &[50.0, 25.0]).is_err());
        let slope = log_log_slope(&[0.4, 0.2, 0.1], &[1.0, 4.0, 16.0]).unwrap();
        assert!((slope + 0.5).abs() < 1e-14);
    }

    #[test]
    fn exact_energy_value() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        assert!((mp.exact_energy() + PI * 2f64.sqrt() / 2.0).abs() < 1e-14);
    }

    struct Zero(usize);

    impl TrialFunction for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn trace(&mut self, _: &[f64]) -> Result<f64> {
            Ok(0.0)
        }
        fn grad(&mut self, _: &[f64], _: f64, g: &mut [f64]) -> Result<()> {
            g.fill(0.0);
            Ok(())
        }
    }

    #[test]
    fn zero_direction_is_flat() {
        let mp = ModelProblem::new(2, 0.5).unwrap();
        let mut u = ExactExtension::new(&mp).unwrap();
        let batch = halton_points(mp.spec().domain(), 64, 0).unwrap();
        let scheme = crate::quadrature::sinc_scheme(0.5, 1.0).unwrap();
        let probes =
            stationarity_check(&mut u, &mut [Zero(2)], 0.1, mp.spec(), &batch, &scheme).unwrap();
        assert_eq!(probes[0].slope(), 0.0);
        assert_eq!(probes[0].g_minus, probes[0].g_zero);
        assert!(probes[0].is_local_min());
    }
}
