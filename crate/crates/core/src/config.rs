//! Run configuration in TOML.
//!
//! ```toml
//! [problem]
//! dim = 2
//! s = 0.5
//! bounds = [[-1.0, 1.0], [-1.0, 1.0]]   # optional, defaults to (−1, 1)^dim
//! rhs = "sine-product"                  # optional
//!
//! [ansatz]
//! kind = "special"                      # or "simple"
//! depth = 2
//! width = 50
//! init = "scaled"                       # or "literal"
//!
//! [quadrature]
//! h_bar = 0.3333333333333333
//! points = 20000
//! skip = 0
//! batches = 10
//!
//! [training]
//! epochs = 2000
//! seed = 1
//! lr0 = 0.05
//! decay_factor = 0.5
//! decay_every = 500
//! eval_every = 100
//! record_every = 1
//! test_points = 10000
//! test_seed = 2024
//!
//! [output]
//! dir = "out"
//!
//! [sweep]                               # optional, used by `sweep`
//! depths = [2]
//! widths = [25, 50, 100, 200]
//! fractions = []
//! kinds = []
//! seeds = [1, 2, 3]
//! ```
//!
//! Unknown keys are rejected. Omitted optional keys take the defaults shown
//! by [`RunConfig::default`]; empty sweep lists fall back to the base value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ad::FnnShape;
use crate::ansatz::{AnsatzKind, ProblemSpec};
use crate::domain::Hypercube;
use crate::error::{Error, Result};
use crate::reference::{ModelProblem, Rhs};
use crate::training::{InitRange, LrSchedule, QuadConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub dim: usize,
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_rhs")]
    pub rhs: Rhs,
}

fn default_rhs() -> Rhs {
    Rhs::SineProduct
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzBlock {
    pub kind: AnsatzKind,
    pub depth: usize,
    pub width: usize,
    #[serde(default)]
    pub init: InitRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureBlock {
    #[serde(default = "default_h_bar")]
    pub h_bar: f64,
    pub points: usize,
    #[serde(default)]
    pub skip: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    10
}

fn default_h_bar() -> f64 {
    1.0 / 3.0
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
}

fn default_seed() -> u64 {
    TrainConfig::default().seed
}

fn default_lr0() -> f64 {
    LrSchedule::default().lr0
}

fn default_decay_factor() -> f64 {
    LrSchedule::default().factor
}

fn default_decay_every() -> usize {
    LrSchedule::default().every
}

fn default_eval_every() -> usize {
    TrainConfig::default().eval_every
}

fn default_test_points() -> usize {
    TrainConfig::default().test_points
}

fn default_test_seed() -> u64 {
    TrainConfig::default().test_seed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

/// Lists swept by `sweep`; an empty list means "the base value only".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub kinds: Vec<AnsatzKind>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepBlock {
    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
            && self.widths.is_empty()
            && self.fractions.is_empty()
            && self.kinds.is_empty()
            && self.seeds.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub ansatz: AnsatzBlock,
    pub quadrature: QuadratureBlock,
    pub training: TrainingBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            problem: ProblemBlock {
                dim: 2,
                s: 0.5,
                bounds: None,
                rhs: Rhs::SineProduct,
            },
            ansatz: AnsatzBlock {
                kind: AnsatzKind::Special,
                depth: 2,
                width: 50,
                init: InitRange::Scaled,
            },
            quadrature: QuadratureBlock {
                h_bar: default_h_bar(),
                points: 20_000,
                skip: 0,
                batches: 10,
            },
            training: TrainingBlock {
                epochs: t.epochs,
                seed: t.seed,
                lr0: t.schedule.lr0,
                decay_factor: t.schedule.factor,
                decay_every: t.schedule.every,
                eval_every: t.eval_every,
                record_every: t.record_every,
                test_points: t.test_points,
                test_seed: t.test_seed,
            },
            output: OutputBlock::default(),
            sweep: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of the canonical TOML serialization with the output block
    /// reset, hex encoded; runs differing only in where they write agree.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.problem;
        if p.dim == 0 || p.dim > 64 {
            return bad(format!("problem.dim = {} must lie in 1..=64", p.dim));
        }
        if !(p.s > 0.0 && p.s < 1.0) {
            return bad(format!("problem.s = {} must lie in (0, 1)", p.s));
        }
        if let Some(b) = &p.bounds {
            if b.len() != p.dim {
                return bad(format!(
                    "problem.bounds has {} entries but problem.dim = {}",
                    b.len(),
                    p.dim
                ));
            }
            if let Some(i) = b.iter().position(|[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
                return bad(format!("problem.bounds[{i}] must satisfy lower < upper"));
            }
        }
        let a = &self.ansatz;
        if a.depth == 0 || a.width == 0 {
            return bad("ansatz.depth and ansatz.width must be at least 1".into());
        }
        let q = &self.quadrature;
        if !(q.h_bar > 0.0 && q.h_bar.is_finite()) {
            return bad(format!("quadrature.h_bar = {} must be positive", q.h_bar));
        }
        if q.points == 0 {
            return bad("quadrature.points must be at least 1".into());
        }
        if q.batches == 0 || q.batches > q.points {
            return bad(format!(
                "quadrature.batches = {} must lie in 1..=points",
                q.batches
            ));
        }
        self.train_config().validate()?;
        if let Some(sw) = &self.sweep {
            if sw.depths.contains(&0) || sw.widths.contains(&0) {
                return bad("sweep.depths and sweep.widths must be positive".into());
            }
            if let Some(s) = sw.fractions.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
                return bad(format!("sweep.fractions entry {s} must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Hypercube> {
        match &self.problem.bounds {
            Some(b) => Hypercube::new(b.iter().map(|[lo, hi]| (*lo, *hi)).collect()),
            None => Hypercube::symmetric_unit(self.problem.dim),
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(self.problem.s, self.domain()?, self.problem.rhs)
    }

    /// The closed-form solution, when the domain is `(−1, 1)^d`.
    pub fn model_problem(&self) -> Result<Option<ModelProblem>> {
        let unit = Hypercube::symmetric_unit(self.problem.dim)?;
        if self.domain()? != unit || self.problem.rhs != Rhs::SineProduct {
            return Ok(None);
        }
        ModelProblem::new(self.problem.dim, self.problem.s).map(Some)
    }

    pub fn shape(&self) -> Result<FnnShape> {
        FnnShape::new(self.ansatz.depth, self.ansatz.width, self.problem.dim + 1)
    }

    pub fn quad_config(&self) -> QuadConfig {
        QuadConfig {
            h_bar: self.quadrature.h_bar,
            points: self.quadrature.points,
            skip: self.quadrature.skip,
            batches: self.quadrature.batches,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            schedule: LrSchedule {
                lr0: t.lr0,
                factor: t.decay_factor,
                every: t.decay_every,
            },
            seed: t.seed,
            init: self.ansatz.init,
            record_every: t.record_every,
            eval_every: t.eval_every,
            test_points: t.test_points,
            test_seed: t.test_seed,
        }
    }
}
