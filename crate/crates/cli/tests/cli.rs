use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn biharm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biharm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn run_ok(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Value {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = biharm(&args);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

const GRID: &str = "[grid]\ndimension = 2\nextents = [1.0, 1.0]\nn_nodes = [9, 9]\n";

#[test]
fn zero_data_simulation_writes_zero_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "zero.toml",
        &format!("{GRID}[density]\nrho0 = 1.0\n[initial]\nfamily = \"zero\"\n[dynamics]\ngamma = 1.0\nT = 0.1\nsnapshot_stride = 10\n"),
    );
    let out = tmp.path().join("out");
    let manifest = run_ok("simulate", &cfg, &out, &[]);
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    let mut lines = energy.lines();
    assert_eq!(lines.next().unwrap(), "t,E,dissipated,source_work,h_norm");
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1..].iter().all(|&x| x == 0.0));
    }
    assert!(out.join("snapshots/index.json").exists());
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["config"]["dynamics"]["dt"], 1e-3);
    assert!(manifest["warnings"][0].as_str().unwrap().contains("minimal observation time"));
}

#[test]
fn observability_table_has_one_row_per_mode_and_damping() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "obs.toml",
        &format!(
            "{GRID}[density]\nrho0 = 1.0\n[dynamics]\ngamma = 0.0\nT = 0.5\ndt = 5e-3\n[experiment]\nensemble = \"eigenmodes\"\nensemble_size = 5\ngammas = [0.0, 1.0, 4.0]\n"
        ),
    );
    let out = tmp.path().join("out");
    run_ok("observability", &cfg, &out, &[]);
    let table = fs::read_to_string(out.join("observability.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "gamma,T,E0,J,ratio");
    assert_eq!(lines.count(), 15);
}

#[test]
fn missing_grid_block_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[density]\nrho0 = 1.0\n[dynamics]\ngamma = 0.0\nT = 1.0\n");
    let out = tmp.path().join("out");
    let output = biharm(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("[grid]"));
}

#[test]
fn malformed_field_fails_with_its_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[grid]\ndimension = 2\nextents = [1.0, 1.0]\nn_nodes = \"many\"\n");
    let output = biharm(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("n_nodes"));
}

#[test]
fn stability_runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "stab.toml",
        &format!(
            "{GRID}[density]\nrho0 = 1.0\nrho1 = 1.0\ninclusion = {{ shape = \"disk\", center = [0.5, 0.5], radius = 0.25 }}\n\
             [initial]\nfamily = \"random\"\nseed = 1\nparts = \"both\"\n[dynamics]\ngamma = 0.0\nT = 0.3\ndt = 1e-2\n\
             [experiment]\ncontrasts = [0.25, 2.0]\ngammas = [0.0, 1.0]\n"
        ),
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let manifest = run_ok("stability", &cfg, &a, &["--threads", "2", "--seed", "5"]);
    run_ok("stability", &cfg, &b, &["--seed", "5"]);
    let table = fs::read(a.join("stability.csv")).unwrap();
    assert_eq!(table, fs::read(b.join("stability.csv")).unwrap());
    let text = String::from_utf8(table).unwrap();
    assert!(text.starts_with("contrast,gamma,T,rho_diff_inf,f_diff_H4,J,M_observed,ratio_thm1,ratio_thm2\n"));
    assert_eq!(text.lines().count(), 5);
    assert_eq!(manifest["config"]["initial"]["seed"], 5);
    let warnings = manifest["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("small-contrast")));
}

#[test]
fn inversions_write_structured_records() {
    let tmp = tempfile::tempdir().unwrap();
    let density = write_config(
        tmp.path(),
        "den.toml",
        &format!(
            "{GRID}[density]\nrho0 = 1.0\nrho1 = 1.5\ninclusion = {{ shape = \"disk\", center = [0.5, 0.5], radius = 0.25 }}\n\
             [initial]\nfamily = \"bump\"\namplitude = 1.0\n[dynamics]\ngamma = 0.5\nT = 0.5\ndt = 1e-2\n\
             [experiment]\nsearch_lo = 0.5\nsearch_hi = 3.0\nsearch_tol = 1e-4\n"
        ),
    );
    let out = tmp.path().join("den");
    run_ok("invert-density", &density, &out, &[]);
    let rec: Value = serde_json::from_str(&fs::read_to_string(out.join("density_inversion.json")).unwrap()).unwrap();
    assert!(rec["results"][0]["abs_error"].as_f64().unwrap() < 1e-3);

    let fine = tmp.path().join("fine");
    run_ok("invert-density", &density, &fine, &["--fine-data"]);
    let rec: Value = serde_json::from_str(&fs::read_to_string(fine.join("density_inversion.json")).unwrap()).unwrap();
    assert_eq!(rec["fine_data"], true);
    assert!(rec["results"][0]["rho1_hat"].as_f64().unwrap().is_finite());

    let modal = write_config(
        tmp.path(),
        "modal.toml",
        &format!(
            "{GRID}[density]\nrho0 = 1.0\n[initial]\nfamily = \"modal\"\ndisplacement = [1.0, -0.5]\nvelocity = [0.2]\n\
             [dynamics]\ngamma = 0.5\nT = 0.5\ndt = 1e-2\n[experiment]\nmodes = 3\n"
        ),
    );
    let out = tmp.path().join("modal");
    run_ok("invert-initial", &modal, &out, &[]);
    let rec: Value = serde_json::from_str(&fs::read_to_string(out.join("initial_inversion.json")).unwrap()).unwrap();
    assert!(rec["results"][0]["coefficient_error"].as_f64().unwrap() < 1e-8);
    assert_eq!(rec["results"][0]["estimate"]["coefficients"].as_array().unwrap().len(), 3);
}

#[test]
fn remaining_subcommands_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "mode.toml",
        &format!(
            "{GRID}[density]\nrho0 = 1.0\n[initial]\nfamily = \"eigenmode\"\nindex = 1\namplitude = 1.0\n\
             [dynamics]\ngamma = 1.0\nT = 0.2\ndt = 1e-2\n[experiment]\nlambdas = [1.0]\nmodes = 4\n"
        ),
    );
    for (command, file) in
        [("spectrum", "spectrum.csv"), ("resolvent", "resolvent.csv"), ("multiplier", "multiplier.json")]
    {
        let out = tmp.path().join(command);
        run_ok(command, &cfg, &out, &[]);
        assert!(out.join(file).exists(), "{command}");
    }
    let spectrum = fs::read_to_string(tmp.path().join("spectrum/spectrum.csv")).unwrap();
    assert_eq!(spectrum.lines().count(), 5);
}
