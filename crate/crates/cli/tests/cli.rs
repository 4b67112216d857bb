use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyslab::config::RunConfig;
use polyslab::solver::IterationReport;
use polyslab::verify::SuiteReport;
use polyslab_cli::{self as cli, Manifest, MomentCsvRow, NormArtifact, SweepCsvRow};

const SMALL: &str = "n_x = 5\nn_v = [8, 8, 8]\nn_i = 4\nreplicates = 2\n";

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn polyslab(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polyslab"));
    c.args(args).env_remove("POLYSLAB_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    polyslab(&args, &[])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_config_is_filled_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gamma = 1.0\n");
    let loaded = cli::load_config(Some(&cfg), &cli::Overrides::default()).unwrap();
    assert_eq!(loaded, RunConfig { gamma: 1.0, ..RunConfig::default() });

    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run("sweep", &cfg, &out, &["--eps-list", "0.1", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = RunConfig::load(&out.join(cli::CONFIG_FILE)).unwrap();
    assert_eq!(echoed.seed, 9);
    assert_eq!(echoed.eps_list, vec![0.1]);
    assert_eq!(echoed.out_dir, out);
    let manifest: Manifest = cli::read_json(&out.join(cli::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.schema_version, cli::SCHEMA_VERSION);
    assert_eq!(manifest.config_digest, echoed.digest());
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases: [(&str, &[&str], &str); 4] = [
        ("gama = 1.0\n", &[], "gama"),
        ("a = 2.0\n", &[], "weight admissibility"),
        (SMALL, &["--eps-list", ""], "eps_list"),
        (SMALL, &["--eps-list", "0.1,abc"], "abc"),
    ];
    for (body, extra, needle) in cases {
        let cfg = write_config(dir.path(), body);
        let o = run("solve", &cfg, &out, extra);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{body}: {}", stderr(&o));
    }
    let o = polyslab(&["solve", "--config", dir.path().join("missing.toml").to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn solve_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = String::from_utf8_lossy(&o.stdout);
    for key in ["iterations", "residual", "contraction", "log margins"] {
        assert!(summary.contains(key), "{summary}");
    }

    let report: IterationReport = cli::read_json(&out.join(cli::ITERATION_FILE)).unwrap();
    assert!(report.converged);
    assert_eq!(report.schema_version, polyslab::solver::SCHEMA_VERSION);
    assert!(report.invariance.as_ref().unwrap().input.satisfied);
    let text = fs::read_to_string(out.join(cli::ITERATION_FILE)).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);

    let norms: NormArtifact = cli::read_json(&out.join(cli::NORMS_FILE)).unwrap();
    assert_eq!(&norms.solution, report.norms.as_ref().unwrap());
    assert!(norms.boundary.admissible);

    let rows: Vec<MomentCsvRow> = cli::read_csv(&out.join(cli::MOMENTS_FILE)).unwrap();
    assert_eq!(rows.len(), 5);
    let field = cli::load_field(&out.join(cli::FIELD_FILE)).unwrap();
    let expected: Vec<MomentCsvRow> = polyslab::solver::moments(&field, 0.0).iter().map(MomentCsvRow::from).collect();
    assert_eq!(rows, expected);

    let manifest: Manifest = cli::read_json(&out.join(cli::MANIFEST_FILE)).unwrap();
    for f in &manifest.files {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let outs: Vec<PathBuf> = (0..3).map(|k| dir.path().join(format!("out{k}"))).collect();
    for (out, threads) in outs.iter().zip(["1", "1", "3"]) {
        let o = polyslab(
            &["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()],
            &[("POLYSLAB_THREADS", threads)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [cli::ITERATION_FILE, cli::MOMENTS_FILE, cli::NORMS_FILE, cli::FIELD_FILE] {
        let first = fs::read(outs[0].join(f)).unwrap();
        for out in &outs[1..] {
            assert!(first == fs::read(out.join(f)).unwrap(), "{f} differs in {}", out.display());
        }
    }
}

#[test]
fn equilibrium_inflow_is_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_x = 3\nn_v = [8, 8, 8]\nn_i = 4\nboundary_family = \"half_maxwellian\"\n");
    let out = dir.path().join("out");
    assert!(run("solve", &cfg, &out, &[]).status.success());
    let r: IterationReport = cli::read_json(&out.join(cli::ITERATION_FILE)).unwrap();
    assert!(r.converged && r.iterations <= 2, "{r:?}");
    assert!(*r.residuals.last().unwrap() <= r.tol);
}

#[test]
fn zero_inflow_gives_the_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_x = 3\nn_v = [8, 8, 8]\nn_i = 4\nleft_density = 0.0\nright_density = 0.0\n");
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let field = cli::load_field(&out.join(cli::FIELD_FILE)).unwrap();
    assert!(field.values().iter().all(|x| *x == 0.0));
    let r: IterationReport = cli::read_json(&out.join(cli::ITERATION_FILE)).unwrap();
    assert!(r.invariance.is_none());
}

#[test]
fn colder_right_wall_gives_a_monotone_internal_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_x = 7\nn_v = [8, 8, 8]\nn_i = 4\nright_temperature = 0.5\n");
    let out = dir.path().join("out");
    assert!(run("solve", &cfg, &out, &[]).status.success());
    let rows: Vec<MomentCsvRow> = cli::read_csv(&out.join(cli::MOMENTS_FILE)).unwrap();
    let t: Vec<f64> = rows.iter().map(|r| r.t_int.unwrap()).collect();
    assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
    assert!(rows.iter().all(|r| r.flux > 0.0));
}

#[test]
fn reversed_attenuation_diverges_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_config(dir.path(), "n_x = 3\nn_v = [8, 8, 8]\nn_i = 4\nepsilon = 3.0\nmutation = \"wrong_attenuation_sign\"\n");
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let r: IterationReport = cli::read_json(&out.join(cli::ITERATION_FILE)).unwrap();
    assert!(r.diverged && !r.converged && r.norms.is_none());
}

#[test]
fn sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (list, n) in [("0.2,0.1,0.05,0.025", 4), ("0.1", 1)] {
        let out = dir.path().join(format!("out{n}"));
        let o = run("sweep", &cfg, &out, &["--eps-list", list]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows: Vec<SweepCsvRow> = cli::read_csv(&out.join(cli::SWEEP_FILE)).unwrap();
        assert_eq!(rows.len(), n);
        assert!(rows.windows(2).all(|w| w[1].ratio < w[0].ratio), "{rows:?}");
        assert!(rows.iter().all(|r| r.replicates == 2 && r.std_error >= 0.0));
    }
}

#[test]
fn trend_violations_respect_the_noise() {
    let row = |epsilon, ratio, std_error| SweepCsvRow { epsilon, ratio, std_error, replicates: 4 };
    assert!(cli::trend_violations(&[row(0.1, 0.5, 0.01), row(0.05, 0.52, 0.01)]).is_empty());
    assert_eq!(cli::trend_violations(&[row(0.05, 0.6, 0.01), row(0.1, 0.5, 0.01)]), vec![(0.1, 0.05)]);
}

#[test]
fn verify_writes_a_report_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}battery = \"empty\"\n"));
    let out = dir.path().join("pass");
    let o = run("verify", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: SuiteReport = cli::read_json(&out.join(cli::VERIFY_FILE)).unwrap();
    assert!(report.passed() && report.checks.is_empty());

    let body = format!("{SMALL}symmetry_samples = 20000\neps_list = [0.2, 0.05]\nmutation = \"wrong_attenuation_sign\"\n");
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("fail");
    let o = run("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report: SuiteReport = cli::read_json(&out.join(cli::VERIFY_FILE)).unwrap();
    assert!(!report.passed());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = polyslab(&["frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(polyslab(&["--help"], &[]).status.success());
}
