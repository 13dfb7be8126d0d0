use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fracritz::ad::FnnShape;
use fracritz::ansatz::{write_checkpoint, AnsatzKind, NetParams};

const BASE: &str = "[problem]\ndim = 1\ns = 0.5\n\n[ansatz]\nkind = \"special\"\ndepth = 2\nwidth = 8\n\n\
                    [quadrature]\npoints = 128\nbatches = 2\n\n[training]\nepochs = 6\neval_every = 3\ntest_points = 300\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracritz"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: Option<&Path>) -> Output {
    let mut c = bin();
    c.args(args).arg("--config").arg(config);
    if let Some(o) = out {
        c.arg("--out-dir").arg(o);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let out = dir.path().join("out");
    let o = run(&["solve"], &cfg, Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["checkpoint.bin", "history.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert!(lines[0].starts_with("# config-hash: "));
    assert_eq!(lines[1], "epoch,loss,rel_l2_error");
    assert_eq!(lines.len(), 8);
    assert!(lines[2].ends_with(','));
    assert!(!lines[4].ends_with(','));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run"]["loss_history"].as_array().unwrap().len(), 6);
    assert_eq!(report["config"]["training"]["epochs"], 6);
    assert_eq!(
        report["config_hash"].as_str().unwrap(),
        lines[0].trim_start_matches("# config-hash: ")
    );
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["solve"], &cfg, Some(&a)).status.success());
    assert!(run(&["solve", "--seed", "9"], &cfg, Some(&b)).status.success());
    let ha = std::fs::read_to_string(a.join("history.csv")).unwrap();
    let hb = std::fs::read_to_string(b.join("history.csv")).unwrap();
    assert_ne!(ha, hb);
}

#[test]
fn parallel_solve_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["solve"], &cfg, Some(&a)).status.success());
    assert!(run(&["solve", "--parallel"], &cfg, Some(&b)).status.success());
    assert_eq!(
        std::fs::read(a.join("history.csv")).unwrap(),
        std::fs::read(b.join("history.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &BASE.replace("s = 0.5", "s = 1.5"));
    let o = run(&["solve"], &cfg, Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.s"), "{}", stderr(&o));

    let typo = write_config(dir.path(), "typo.toml", &BASE.replace("epochs", "epoch"));
    let o = run(&["solve"], &typo, Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    let o = run(&["solve"], &dir.path().join("absent.toml"), None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("eval_every = 3", "eval_every = 3\nlr0 = 1e6");
    let cfg = write_config(dir.path(), "hot.toml", &text);
    let o = run(&["solve"], &cfg, Some(&dir.path().join("out")));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn eval_of_zero_checkpoint_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let ckpt = dir.path().join("zero.bin");
    let shape = FnnShape::new(2, 8, 2).unwrap();
    write_checkpoint(&ckpt, &NetParams::zeros(AnsatzKind::Special, shape)).unwrap();
    let eval = |extra: &[&str]| {
        let mut c = bin();
        c.arg("eval").arg("--config").arg(&cfg).arg("--checkpoint").arg(&ckpt).args(extra);
        c.output().unwrap()
    };
    let o = eval(&[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "rel_l2_error 1e0");

    let table = dir.path().join("pts");
    let o = eval(&["--out-dir", table.to_str().unwrap()]);
    assert!(o.status.success());
    let t = std::fs::read_to_string(table.join("eval_points.csv")).unwrap();
    assert_eq!(t.lines().nth(1), Some("x1,trace,exact"));
    assert_eq!(t.lines().count(), 302);
}

#[test]
fn eval_is_repeatable_and_rejects_mismatched_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    let out = dir.path().join("out");
    assert!(run(&["solve"], &cfg, Some(&out)).status.success());
    let eval = |config: &Path| {
        bin()
            .arg("eval")
            .arg("--config")
            .arg(config)
            .arg("--checkpoint")
            .arg(out.join("checkpoint.bin"))
            .args(["--seed", "5"])
            .output()
            .unwrap()
    };
    let a = eval(&cfg);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&eval(&cfg)));

    let wide = write_config(dir.path(), "wide.toml", &BASE.replace("width = 8", "width = 9"));
    let o = eval(&wide);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("width 8"), "{}", stderr(&o));
}

#[test]
fn sweep_records_rows_and_orders() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[sweep]\nwidths = [4, 8]\nseeds = [1, 2]\n");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let out = dir.path().join("sw");
    let o = run(&["sweep"], &cfg, Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("# config-hash: "));
    assert_eq!(lines[1], "depth,width,s,kind,seed,final_error,order,wall_clock_s,status");
    assert_eq!(lines.len(), 6);
    assert!(lines[2..].iter().all(|l| l.ends_with(",ok")));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[1], "depth,width,s,kind,median_error,order,runs,succeeded");
    assert_eq!(lines.len(), 4);
    let first: Vec<&str> = lines[2].split(',').collect();
    let last: Vec<&str> = lines[3].split(',').collect();
    assert_eq!((first[1], first[5]), ("4", ""));
    assert_eq!(last[1], "8");
    let (e4, e8): (f64, f64) = (first[4].parse().unwrap(), last[4].parse().unwrap());
    let order: f64 = last[5].parse().unwrap();
    assert!((order - (e8 / e4).ln() / 2f64.ln()).abs() < 1e-12);
    assert_eq!(std::fs::read_dir(out.join("runs")).unwrap().count(), 4);
}

#[test]
fn failed_sweep_rows_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[sweep]\nwidths = [4, 8]\n", BASE.replace("eval_every = 3", "eval_every = 3\nlr0 = 1e6"));
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let out = dir.path().join("sw");
    let o = run(&["sweep"], &cfg, Some(&out));
    assert_eq!(o.status.code(), Some(3));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains("failed: divergence")), "{table}");
}

#[test]
fn parallel_sweep_matches_sequential_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}\n[sweep]\nwidths = [4, 8]\n");
    let cfg = write_config(dir.path(), "sweep.toml", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["sweep"], &cfg, Some(&a)).status.success());
    assert!(run(&["sweep", "--parallel"], &cfg, Some(&b)).status.success());
    let errors = |d: &Path| -> Vec<String> {
        std::fs::read_to_string(d.join("sweep.csv"))
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| l.split(',').take(7).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(errors(&a), errors(&b));
}

#[test]
fn sweep_without_lists_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", BASE);
    assert_eq!(run(&["sweep"], &cfg, Some(dir.path())).status.code(), Some(2));
    let empty = write_config(dir.path(), "empty.toml", &format!("{BASE}\n[sweep]\nwidths = []\n"));
    assert_eq!(run(&["sweep"], &empty, Some(dir.path())).status.code(), Some(2));
}

#[test]
fn selftests_exit_zero() {
    for verb in ["quadrature-selftest", "gradient-selftest"] {
        let o = bin().arg(verb).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{verb}: {}", stdout(&o));
        assert!(stdout(&o).lines().all(|l| l.starts_with("PASS")));
    }
}
