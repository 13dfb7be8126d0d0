//! Plain SGD on the discrete energy.
//!
//! Each epoch walks the batches of the Halton sample in order; every batch
//! uses the full sinc node set. Randomness enters only through the seeded
//! initialization and the seeded test set, so a run is a pure function of its
//! configuration.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{FnnShape, ParamGradient};
use crate::ansatz::{initial_decay_raw, AnsatzKind, NetParams, ProblemSpec};
use crate::domain::{halton_points, uniform_test_points};
use crate::error::{Error, Result};
use crate::quadrature::energy::{EnergyKernel, PreparedSample};
use crate::quadrature::sinc_scheme;
use crate::reference::{network_l2_error, ModelProblem};

/// Range of the uniform initialization of network entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitRange {
    /// `U(−1/√M, 1/√M)`.
    #[default]
    Scaled,
    /// `U(−√M, √M)`.
    Literal,
}

impl InitRange {
    pub fn bound(self, width: usize) -> f64 {
        let m = (width as f64).sqrt();
        match self {
            InitRange::Scaled => 1.0 / m,
            InitRange::Literal => m,
        }
    }
}

/// Step decay: `lr0 · factor^⌊(epoch − 1) / every⌋` for epochs counted from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 5e-2,
            factor: 0.5,
            every: 500,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        let k = epoch.saturating_sub(1) / self.every.max(1);
        self.lr0 * self.factor.powi(k.min(i32::MAX as usize) as i32)
    }
}

/// Quadrature settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub h_bar: f64,
    pub points: usize,
    pub skip: u64,
    pub batches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub init: InitRange,
    /// History rows are written every `record_every` epochs.
    pub record_every: usize,
    /// `e_{ℓ²}` is evaluated every `eval_every` epochs and after the last one.
    pub eval_every: usize,
    pub test_points: usize,
    pub test_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            schedule: LrSchedule::default(),
            seed: 1,
            init: InitRange::Scaled,
            record_every: 1,
            eval_every: 100,
            test_points: 10_000,
            test_seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("training.epochs must be at least 1");
        }
        if !(self.schedule.lr0 >= 0.0 && self.schedule.lr0.is_finite()) {
            return bad("training.lr0 must be finite and non-negative");
        }
        if !(self.schedule.factor > 0.0 && self.schedule.factor.is_finite()) {
            return bad("training.decay_factor must be positive");
        }
        if self.schedule.every == 0 || self.record_every == 0 || self.eval_every == 0 {
            return bad("training.decay_every, record_every and eval_every must be at least 1");
        }
        if self.test_points == 0 {
            return bad("training.test_points must be at least 1");
        }
        Ok(())
    }
}

/// One row of the error history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub rel_l2_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: AnsatzKind,
    pub depth: usize,
    pub width: usize,
    pub dim: usize,
    pub s: f64,
    pub seed: u64,
    pub test_seed: u64,
    pub epochs: usize,
    pub parameter_count: usize,
    /// Mean batch loss of every epoch.
    pub loss_history: Vec<f64>,
    /// Rows at the record and evaluation cadence.
    pub history: Vec<HistoryRow>,
    pub initial_error: Option<f64>,
    pub final_error: Option<f64>,
    pub final_loss: f64,
    pub decay_rates: (f64, f64),
    pub wall_clock_seconds: f64,
}

/// Report plus trained parameters.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub params: NetParams,
}

/// Seeded initialization: network entries uniform in `±init.bound(M)`, decay
/// rates at 0.5.
pub fn init_params(kind: AnsatzKind, shape: FnnShape, init: InitRange, seed: u64) -> NetParams {
    let mut p = NetParams::zeros(kind, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = init.bound(shape.width);
    let n = p.len();
    let nets = match kind {
        AnsatzKind::Special => n - 2,
        AnsatzKind::Simple => n,
    };
    for v in &mut p.as_mut_slice()[..nets] {
        *v = rng.random_range(-bound..=bound);
    }
    if kind == AnsatzKind::Special {
        p.as_mut_slice()[n - 2] = initial_decay_raw();
        p.as_mut_slice()[n - 1] = initial_decay_raw();
    }
    p
}

/// `p ← p − lr · grad`.
pub fn sgd_step(p: &mut [f64], grad: &ParamGradient, lr: f64) -> Result<()> {
    if p.len() != grad.len() {
        return Err(Error::contract(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            p.len()
        )));
    }
    if let Some(i) = grad.first_non_finite() {
        return Err(Error::non_finite(format!("gradient component {i}"), grad.0[i]));
    }
    for (v, g) in p.iter_mut().zip(&grad.0) {
        *v -= lr * g;
    }
    Ok(())
}

/// Callback receiving each recorded history row.
pub type RecordHook<'a> = Box<dyn FnMut(&HistoryRow) + 'a>;

/// Optional hooks into the training loop.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Called after each history row is recorded.
    pub on_record: Option<RecordHook<'a>>,
    pub parallel: bool,
}

/// Trains from a seeded initialization.
pub fn train(
    spec: &ProblemSpec,
    kind: AnsatzKind,
    shape: FnnShape,
    quad: &QuadConfig,
    cfg: &TrainConfig,
    model: Option<&ModelProblem>,
) -> Result<TrainOutcome> {
    let init = init_params(kind, shape, cfg.init, cfg.seed);
    train_from(spec, init, quad, cfg, model, TrainHooks::default())
}

/// Trains from the given parameters.
pub fn train_from(
    spec: &ProblemSpec,
    mut params: NetParams,
    quad: &QuadConfig,
    cfg: &TrainConfig,
    model: Option<&ModelProblem>,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let kind = params.kind();
    let shape = params.shape();
    let scheme = sinc_scheme(spec.s(), quad.h_bar)?;
    let sample = halton_points(spec.domain(), quad.points, quad.skip)?;
    let batches = sample.batches(quad.batches)?;
    let prepared = PreparedSample::new(spec, &sample)?;
    let mut kernel = EnergyKernel::new(spec, &scheme, kind, shape)?;
    kernel.set_parallel(hooks.parallel);
    let test = match model {
        Some(mp) => Some(uniform_test_points(mp.spec().domain(), cfg.test_points, cfg.test_seed)?),
        None => None,
    };
    let error_of = |p: &NetParams| -> Result<Option<f64>> {
        match (model, &test) {
            (Some(mp), Some(t)) => network_l2_error(p, mp, t).map(Some),
            _ => Ok(None),
        }
    };
    let initial_error = error_of(&params)?;

    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::new();
    let mut limit = None;
    let mut final_error = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.rate(epoch);
        let mut sum = 0.0;
        for range in &batches {
            let value = kernel.evaluate(&params, &prepared, range.clone())?;
            let cap = *limit.get_or_insert(1e6 * value.loss.abs().max(1.0));
            if !value.loss.is_finite() || value.loss.abs() > cap {
                return Err(Error::Divergence {
                    epoch,
                    loss: value.loss,
                    limit: cap,
                });
            }
            sum += value.loss;
            sgd_step(params.as_mut_slice(), &value.grad, lr).map_err(|e| match e {
                Error::NonFinite { location, value } => Error::NonFinite {
                    location: format!("{location} in epoch {epoch}"),
                    value,
                },
                other => other,
            })?;
        }
        let loss = sum / batches.len() as f64;
        loss_history.push(loss);
        let last = epoch == cfg.epochs;
        let eval = last || epoch % cfg.eval_every == 0;
        let record = last || eval || epoch % cfg.record_every == 0;
        let err = if eval { error_of(&params)? } else { None };
        if last {
            final_error = err;
        }
        if record {
            let row = HistoryRow {
                epoch,
                loss,
                rel_l2_error: err,
            };
            if let Some(cb) = hooks.on_record.as_mut() {
                cb(&row);
            }
            history.push(row);
        }
    }

    let report = RunReport {
        kind,
        depth: shape.depth,
        width: shape.width,
        dim: spec.dim(),
        s: spec.s(),
        seed: cfg.seed,
        test_seed: cfg.test_seed,
        epochs: cfg.epochs,
        parameter_count: params.len(),
        final_loss: *loss_history.last().unwrap(),
        loss_history,
        history,
        initial_error,
        final_error,
        decay_rates: params.decay_rates(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { report, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> FnnShape {
        FnnShape::new(2, 6, 2).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let shape = FnnShape::new(2, 100, 3).unwrap();
        let a = init_params(AnsatzKind::Special, shape, InitRange::Scaled, 4);
        let b = init_params(AnsatzKind::Special, shape, InitRange::Scaled, 4);
        assert_eq!(a, b);
        let n = a.len();
        assert!(a.as_slice()[..n - 2].iter().all(|v| v.abs() <= 0.1));
        assert_eq!(a.decay_rates(), (0.5, 0.5));
        let c = init_params(AnsatzKind::Special, shape, InitRange::Scaled, 5);
        assert_ne!(a, c);
    }

    #[test]
    fn init_variance_matches_uniform_law() {
        let shape = FnnShape::new(11, 100, 3).unwrap();
        let p = init_params(AnsatzKind::Simple, shape, InitRange::Scaled, 8);
        let v = p.as_slice();
        assert!(v.len() >= 100_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        let want = (2.0f64 / 10.0).powi(2) / 12.0;
        assert!((var - want).abs() < 0.1 * want, "{var} vs {want}");
    }

    #[test]
    fn literal_range_bound() {
        assert_eq!(InitRange::Literal.bound(100), 10.0);
        assert_eq!(InitRange::Scaled.bound(100), 0.1);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = [1.0];
        sgd_step(&mut p, &ParamGradient(vec![2.0]), 0.1).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut q = [1.0, -3.0];
        sgd_step(&mut q, &ParamGradient(vec![0.0, 0.0]), 0.7).unwrap();
        assert_eq!(q, [1.0, -3.0]);
        // ½p² from 1 with lr 0.5
        let mut r = [1.0];
        let g = ParamGradient(vec![r[0]]);
        sgd_step(&mut r, &g, 0.5).unwrap();
        assert_eq!(r[0], 0.5);
        assert!(0.5 * r[0] * r[0] < 0.5);
        assert!(sgd_step(&mut r, &ParamGradient(vec![f64::NAN]), 0.1).is_err());
        assert!(sgd_step(&mut r, &ParamGradient(vec![1.0, 2.0]), 0.1).is_err());
    }

    #[test]
    fn schedule_steps() {
        let s = LrSchedule {
            lr0: 1e-3,
            factor: 0.5,
            every: 1000,
        };
        assert_eq!(s.rate(1), 1e-3);
        assert_eq!(s.rate(1000), 1e-3);
        assert_eq!(s.rate(1001), 5e-4);
        assert_eq!(s.rate(2001), 2.5e-4);
    }

    fn quad(points: usize, batches: usize) -> QuadConfig {
        QuadConfig {
            h_bar: 1.0,
            points,
            skip: 0,
            batches,
        }
    }

    #[test]
    fn zero_rate_is_a_fixed_point() {
        let spec = ProblemSpec::model(1, 0.5).unwrap();
        let mp = ModelProblem::new(1, 0.5).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            schedule: LrSchedule {
                lr0: 0.0,
                ..LrSchedule::default()
            },
            test_points: 100,
            ..TrainConfig::default()
        };
        let out = train(&spec, AnsatzKind::Special, small_shape(), &quad(32, 1), &cfg, Some(&mp)).unwrap();
        assert_eq!(out.report.loss_history.len(), 1);
        assert_eq!(out.params, init_params(AnsatzKind::Special, small_shape(), InitRange::Scaled, cfg.seed));
        assert_eq!(out.report.initial_error, out.report.final_error);
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = ProblemSpec::model(1, 0.5).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            schedule: LrSchedule {
                lr0: 1e-2,
                ..LrSchedule::default()
            },
            test_points: 50,
            eval_every: 2,
            ..TrainConfig::default()
        };
        let a = train(&spec, AnsatzKind::Special, small_shape(), &quad(40, 3), &cfg, None).unwrap();
        let b = train(&spec, AnsatzKind::Special, small_shape(), &quad(40, 3), &cfg, None).unwrap();
        assert_eq!(a.report.loss_history, b.report.loss_history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.report.history.len(), 5);
    }

    #[test]
    fn batch_gradients_average_to_the_full_gradient() {
        let spec = ProblemSpec::model(2, 0.3).unwrap();
        let scheme = sinc_scheme(0.3, 1.0).unwrap();
        let sample = halton_points(spec.domain(), 60, 0).unwrap();
        let prepared = PreparedSample::new(&spec, &sample).unwrap();
        let shape = FnnShape::new(2, 5, 3).unwrap();
        let p = init_params(AnsatzKind::Special, shape, InitRange::Scaled, 3);
        let k = EnergyKernel::new(&spec, &scheme, AnsatzKind::Special, shape).unwrap();
        let full = k.evaluate(&p, &prepared, 0..60).unwrap();
        let mut avg = vec![0.0; p.len()];
        let batches = sample.batches(4).unwrap();
        for r in &batches {
            let g = k.evaluate(&p, &prepared, r.clone()).unwrap();
            for (a, b) in avg.iter_mut().zip(&g.grad.0) {
                *a += b / batches.len() as f64;
            }
        }
        for (a, b) in avg.iter().zip(&full.grad.0) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-8), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = TrainConfig::default();
        cfg.schedule.lr0 = f64::NAN;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.eval_every = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let spec = ProblemSpec::model(1, 0.5).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            schedule: LrSchedule {
                lr0: 50.0,
                ..LrSchedule::default()
            },
            init: InitRange::Literal,
            test_points: 10,
            ..TrainConfig::default()
        };
        let err = train(&spec, AnsatzKind::Special, small_shape(), &quad(16, 1), &cfg, None).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
