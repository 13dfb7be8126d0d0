//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure, 1 anything else (I/O).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ad::FnnShape;
use crate::ansatz::{read_checkpoint, write_checkpoint, AnsatzEval, AnsatzKind, NetParams, ProblemSpec, TrialFunction};
use crate::config::RunConfig;
use crate::domain::{halton_points, uniform_test_points};
use crate::error::{Error, Result};
use crate::quadrature::energy::{tape_energy_gradient, EnergyKernel, PreparedSample};
use crate::quadrature::{assemble_loss, mc_integrate, sinc_integrate, sinc_scheme};
use crate::reference::{convergence_order, relative_l2_error};
use crate::training::{init_params, train_from, HistoryRow, RunReport, TrainHooks};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fracritz", version, about = "Deep Ritz solver for spectral fractional Laplacian problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write checkpoint, report and error history.
    Solve(RunArgs),
    /// Evaluate a checkpoint on a fresh seeded test set.
    Eval(EvalArgs),
    /// Train every combination listed in the [sweep] block.
    Sweep(RunArgs),
    /// Check the sinc and quasi-Monte Carlo rules against closed forms.
    QuadratureSelftest,
    /// Check the energy gradient against a tape and finite differences.
    GradientSelftest,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides training.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Evaluate quadrature blocks (solve) or sweep rows (sweep) on all cores.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides training.test_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the pointwise table `eval_points.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::QuadratureSelftest => selftest(quadrature_checks()),
        Command::GradientSelftest => selftest(gradient_checks()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Checkpoint(_) | Error::PsiTable(_) => EXIT_CONFIG,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_OTHER,
    }
}

fn load_config(path: &Path, seed: Option<u64>, out_dir: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = d.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Blank for missing values; shortest round-trip form otherwise.
fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Error-history table: config hash comment, header, one row per record.
pub fn history_csv(hash: &str, rows: &[HistoryRow]) -> String {
    let mut out = format!("# config-hash: {hash}\nepoch,loss,rel_l2_error\n");
    for r in rows {
        let _ = writeln!(out, "{},{:e},{}", r.epoch, r.loss, cell(r.rel_l2_error));
    }
    out
}

#[derive(Serialize)]
struct SolveReport<'a> {
    config_hash: String,
    config: &'a RunConfig,
    run: &'a RunReport,
}

fn cmd_solve(a: &RunArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.seed, &a.out_dir)?;
    let spec = cfg.problem_spec()?;
    let mp = cfg.model_problem()?;
    let shape = cfg.shape()?;
    let tc = cfg.train_config();
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let init = init_params(cfg.ansatz.kind, shape, tc.init, tc.seed);
    let hooks = TrainHooks {
        on_record: Some(Box::new(|r: &HistoryRow| {
            if let Some(e) = r.rel_l2_error {
                eprintln!("epoch {:>6}  loss {:>+.6e}  rel_l2 {:.4e}", r.epoch, r.loss, e);
            }
        })),
        parallel: a.parallel,
    };
    let out = train_from(&spec, init, &cfg.quad_config(), &tc, mp.as_ref(), hooks)?;
    let hash = cfg.hash();
    write_checkpoint(&dir.join("checkpoint.bin"), &out.params)?;
    write_file(&dir.join("history.csv"), history_csv(&hash, &out.report.history))?;
    let report = SolveReport {
        config_hash: hash,
        config: &cfg,
        run: &out.report,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))?;
    write_file(&dir.join("report.json"), json)?;
    println!(
        "final loss {:e}  rel_l2_error {}  ({:.1} s)  -> {}",
        out.report.final_loss,
        cell(out.report.final_error),
        out.report.wall_clock_seconds,
        dir.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let params = read_checkpoint(&a.checkpoint)?;
    let shape = cfg.shape()?;
    if params.kind() != cfg.ansatz.kind || params.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {} ansatz with depth {}, width {}, {} inputs; the config asks for {} with depth {}, width {}, {} inputs",
            params.kind(),
            params.shape().depth,
            params.shape().width,
            params.shape().input_dim,
            cfg.ansatz.kind,
            shape.depth,
            shape.width,
            shape.input_dim
        )));
    }
    let mp = cfg
        .model_problem()?
        .ok_or_else(|| Error::Config("evaluation needs the sine-product problem on (-1, 1)^d".into()))?;
    let seed = a.seed.unwrap_or(cfg.training.test_seed);
    let test = uniform_test_points(mp.spec().domain(), cfg.training.test_points, seed)?;
    let mut eval = AnsatzEval::new(&params, mp.spec())?;
    let err = relative_l2_error(|x| eval.trace(x), &mp, &test)?;
    println!("rel_l2_error {err:e}");
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        let d = mp.dim();
        let mut out = format!("# config-hash: {}\n", cfg.hash());
        let names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        let _ = writeln!(out, "{},trace,exact", names.join(","));
        for x in test.iter() {
            let coords: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{},{:e},{:e}", coords.join(","), eval.trace(x)?, mp.exact_trace(x));
        }
        write_file(&dir.join("eval_points.csv"), out)?;
    }
    Ok(())
}

/// One sweep setting.
#[derive(Clone, Debug)]
struct SweepRow {
    depth: usize,
    width: usize,
    s: f64,
    kind: AnsatzKind,
    seed: u64,
}

struct SweepResult {
    row: SweepRow,
    error: Option<f64>,
    seconds: f64,
    status: String,
}

fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

fn sweep_rows(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let sw = cfg
        .sweep
        .as_ref()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config("the [sweep] block is missing or lists nothing to sweep".into()))?;
    let mut rows = Vec::new();
    for &s in &or_base(&sw.fractions, cfg.problem.s) {
        for &kind in &or_base(&sw.kinds, cfg.ansatz.kind) {
            for &depth in &or_base(&sw.depths, cfg.ansatz.depth) {
                for &width in &or_base(&sw.widths, cfg.ansatz.width) {
                    for &seed in &or_base(&sw.seeds, cfg.training.seed) {
                        rows.push(SweepRow {
                            depth,
                            width,
                            s,
                            kind,
                            seed,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn run_sweep_row(base: &RunConfig, row: &SweepRow, runs_dir: &Path) -> SweepResult {
    let started = std::time::Instant::now();
    let mut cfg = base.clone();
    cfg.problem.s = row.s;
    cfg.ansatz.kind = row.kind;
    cfg.ansatz.depth = row.depth;
    cfg.ansatz.width = row.width;
    cfg.training.seed = row.seed;
    cfg.sweep = None;
    let attempt = || -> Result<Option<f64>> {
        cfg.validate()?;
        let spec = cfg.problem_spec()?;
        let mp = cfg.model_problem()?;
        let tc = cfg.train_config();
        let init = init_params(row.kind, cfg.shape()?, tc.init, tc.seed);
        let out = train_from(&spec, init, &cfg.quad_config(), &tc, mp.as_ref(), TrainHooks::default())?;
        let name = format!("L{}_M{}_s{}_{}_seed{}.csv", row.depth, row.width, row.s, row.kind, row.seed);
        write_file(&runs_dir.join(name), history_csv(&cfg.hash(), &out.report.history))?;
        Ok(out.report.final_error)
    };
    let (error, status) = match attempt() {
        Ok(e) => (e, "ok".to_string()),
        Err(e) => (None, format!("failed: {e}").replace(',', ";")),
    };
    SweepResult {
        row: row.clone(),
        error,
        seconds: started.elapsed().as_secs_f64(),
        status,
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Order against the previous row of the same group with smaller width.
fn orders_by_width(keys: &[(String, usize, Option<f64>)]) -> Vec<Option<f64>> {
    let mut out = vec![None; keys.len()];
    for i in 0..keys.len() {
        let (ref g, m, e) = keys[i];
        let prev = (0..i).rev().find(|&j| keys[j].0 == *g && keys[j].1 < m);
        if let (Some(j), Some(e)) = (prev, e) {
            if let Some(ep) = keys[j].2 {
                out[i] = convergence_order(&[ep, e], &[keys[j].1 as f64, m as f64])
                    .ok()
                    .map(|o| o[0]);
            }
        }
    }
    out
}

fn cmd_sweep(a: &RunArgs) -> Result<()> {
    let cfg = load_config(&a.config, None, &a.out_dir)?;
    let mut rows = sweep_rows(&cfg)?;
    if let Some(seed) = a.seed {
        for r in &mut rows {
            r.seed = seed;
        }
    }
    let dir = cfg.output.dir.clone();
    let runs_dir = dir.join("runs");
    create_dir(&runs_dir)?;
    let results: Vec<SweepResult> = if a.parallel {
        use rayon::prelude::*;
        rows.par_iter().map(|r| run_sweep_row(&cfg, r, &runs_dir)).collect()
    } else {
        rows.iter()
            .map(|r| {
                let res = run_sweep_row(&cfg, r, &runs_dir);
                eprintln!(
                    "L={} M={} s={} {} seed={}: {} {}",
                    r.depth,
                    r.width,
                    r.s,
                    r.kind,
                    r.seed,
                    cell(res.error),
                    res.status
                );
                res
            })
            .collect()
    };

    let hash = cfg.hash();
    let group = |r: &SweepRow| format!("{}|{}|{}", r.depth, r.s, r.kind);
    let keys: Vec<_> = results
        .iter()
        .map(|r| (format!("{}|{}", group(&r.row), r.row.seed), r.row.width, r.error))
        .collect();
    let orders = orders_by_width(&keys);
    let mut table = format!("# config-hash: {hash}\ndepth,width,s,kind,seed,final_error,order,wall_clock_s,status\n");
    for (r, o) in results.iter().zip(&orders) {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{:.3},{}",
            r.row.depth,
            r.row.width,
            r.row.s,
            r.row.kind,
            r.row.seed,
            cell(r.error),
            cell(*o),
            r.seconds,
            r.status
        );
    }
    write_file(&dir.join("sweep.csv"), table)?;

    // medians over seeds
    let mut summary: Vec<(SweepRow, Vec<f64>, usize)> = Vec::new();
    for r in &results {
        let pos = summary.iter().position(|(s, _, _)| {
            group(s) == group(&r.row) && s.width == r.row.width
        });
        let idx = pos.unwrap_or_else(|| {
            summary.push((r.row.clone(), Vec::new(), 0));
            summary.len() - 1
        });
        summary[idx].2 += 1;
        if let Some(e) = r.error {
            summary[idx].1.push(e);
        }
    }
    let medians: Vec<Option<f64>> = summary.iter_mut().map(|(_, v, _)| median(v)).collect();
    let keys: Vec<_> = summary
        .iter()
        .zip(&medians)
        .map(|((s, _, _), m)| (group(s), s.width, *m))
        .collect();
    let orders = orders_by_width(&keys);
    let mut table = format!("# config-hash: {hash}\ndepth,width,s,kind,median_error,order,runs,succeeded\n");
    for (((s, ok, n), m), o) in summary.iter().zip(&medians).zip(&orders) {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            s.depth,
            s.width,
            s.s,
            s.kind,
            cell(*m),
            cell(*o),
            n,
            ok.len()
        );
    }
    write_file(&dir.join("sweep_summary.csv"), table)?;
    println!("{} runs -> {}", results.len(), dir.display());
    if results.iter().all(|r| r.error.is_none() && r.status != "ok") {
        return Err(Error::Numerical("every sweep row failed".into()));
    }
    Ok(())
}

/// Outcome of one self-test line.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn selftest(checks: Result<Vec<Check>>) -> Result<()> {
    let checks = checks?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Error::Numerical("self-test failed".into()))
    }
}

/// Sinc Gamma identities and the Halton sine-square integral.
pub fn quadrature_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for s in [0.25, 0.5, 0.75] {
        let scheme = sinc_scheme(s, 1.0 / 3.0)?;
        let alpha = scheme.alpha();
        for eta in [0.5, 1.0, 2.0] {
            let got = sinc_integrate(|y| (-2.0 * eta * y).exp(), &scheme)?;
            let want = statrs::function::gamma::gamma(alpha + 1.0) / (2.0 * eta).powf(alpha + 1.0);
            let rel = (got - want).abs() / want;
            out.push(check(
                format!("sinc s={s} eta={eta}"),
                rel < 1e-5,
                format!("{got:.10} vs {want:.10}, rel {rel:.2e}"),
            ));
        }
    }
    let dom = crate::domain::Hypercube::symmetric_unit(2)?;
    let sample = halton_points(&dom, 100_000, 0)?;
    let pi = std::f64::consts::PI;
    let got = mc_integrate(
        |x| x.iter().map(|t| (pi * t).sin().powi(2)).product(),
        &sample,
        dom.volume(),
    )?;
    out.push(check(
        "halton sin^2 d=2 N=1e5",
        (got - 1.0).abs() < 1e-3,
        format!("{got:.6} vs 1, error {:.2e}", (got - 1.0).abs()),
    ));
    Ok(out)
}

/// Relative gap `|a − b| / max(|b|, floor)`.
fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Energy gradient of a random width-8, depth-2 special ansatz in d = 1 on
/// 64 Halton points: batched kernel against the
/// scalar tape and against central differences of the pointwise loss.
pub fn gradient_checks() -> Result<Vec<Check>> {
    let spec = ProblemSpec::model(1, 0.5)?;
    let scheme = sinc_scheme(0.5, 1.0 / 3.0)?;
    let sample = halton_points(spec.domain(), 64, 0)?;
    let shape = FnnShape::new(2, 8, 2)?;
    let mut p = NetParams::zeros(AnsatzKind::Special, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = p.len();
    for v in &mut p.as_mut_slice()[..n - 2] {
        *v = rng.random_range(-1.0..1.0);
    }
    let prepared = PreparedSample::new(&spec, &sample)?;
    let kernel = EnergyKernel::new(&spec, &scheme, AnsatzKind::Special, shape)?;
    let fast = kernel.evaluate(&p, &prepared, 0..sample.len())?;
    let (tape_loss, tape_grad) = tape_energy_gradient(&p, &spec, &sample, &scheme)?;
    let tape_gap = fast
        .grad
        .0
        .iter()
        .zip(&tape_grad.0)
        .map(|(a, b)| rel_gap(*a, *b, 1e-8))
        .fold(rel_gap(fast.loss, tape_loss, 1e-8), f64::max);

    let loss_at = |q: &NetParams| -> Result<f64> {
        let mut e = AnsatzEval::new(q, &spec)?;
        assemble_loss(&mut e as &mut dyn TrialFunction, &spec, &sample, &scheme)
    };
    // A ReLU switching inside the stencil makes the loss jump; such
    // components show up as differences that scale with 1/step.
    let central = |i: usize, step: f64| -> Result<f64> {
        let mut plus = p.clone();
        plus.as_mut_slice()[i] += step;
        let mut minus = p.clone();
        minus.as_mut_slice()[i] -= step;
        Ok((loss_at(&plus)? - loss_at(&minus)?) / (2.0 * step))
    };
    let step = 1e-4;
    let mut fd_gap: f64 = 0.0;
    let mut kinked = 0;
    for i in 0..n {
        let fd = central(i, step)?;
        let fd_half = central(i, 0.5 * step)?;
        if rel_gap(fd, fd_half, 1e-4) > 1e-6 {
            kinked += 1;
            continue;
        }
        fd_gap = fd_gap.max(rel_gap(fast.grad.0[i], fd, 1e-4));
    }
    Ok(vec![
        check(
            "kernel vs tape",
            tape_gap < 1e-9,
            format!("max relative gap {tape_gap:.2e} over {n} components"),
        ),
        check(
            "kernel vs central differences (step 1e-4)",
            fd_gap < 1e-5 && kinked * 4 <= n,
            format!("max relative gap {fd_gap:.2e} over {} smooth components, {kinked} straddle a ReLU switch", n - kinked),
        ),
    ])
}
