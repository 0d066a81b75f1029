use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("rwpin-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn rwpin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwpin")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.in.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

const SIMULATE: &str = r#"
[kernel]
gamma = 0.75
x_max = 16384

[model]
t_max = 8.0
step = 0.1

[disorder]
rho = [0.4]
seed = 11
samples = 6

[experiment]
name = "simulate-z"
workers = 1

[experiment.params]
chains = 200
method = "both"
"#;

#[test]
fn identical_runs_give_identical_bytes() {
    let d = scratch("determinism");
    let cfg = write_config(&d, SIMULATE);
    let mut outs = Vec::new();
    for (i, w) in ["1", "1", "2"].iter().enumerate() {
        let out = d.join(format!("run{i}"));
        let o = rwpin(&["simulate-z", "--config", &cfg, "--workers", w, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outs.push(fs::read_to_string(out.join("z.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    // the worker count appears in the header only
    let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&outs[0]), body(&outs[2]));
    assert_ne!(outs[0], outs[2]);

    let (h, r) = rows(&outs[0]);
    assert_eq!(h, ["sample_id", "method", "kind", "value", "log_value", "stderr"]);
    assert_eq!(r.len(), 6 * 4);
    assert!(outs[0].lines().next().unwrap().contains("config_sha256="));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("run0/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 11);
    assert_eq!(manifest["outputs"][0], "z.csv");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_flags_override_the_config() {
    let d = scratch("flags");
    let cfg = write_config(&d, SIMULATE);
    let out = d.join("o");
    let o = rwpin(&["simulate-z", "--config", &cfg, "--rho", "0", "--T", "5", "--samples", "2", "--method", "volterra", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, r) = rows(&fs::read_to_string(out.join("z.csv")).unwrap());
    assert_eq!(r.len(), 2 * 3);
    let (m, k, v) = (col(&h, "method"), col(&h, "kind"), col(&h, "value"));
    assert!(r.iter().all(|row| row[m] == "volterra"));
    // without disorder the normalized partition function is one
    for row in r.iter().filter(|row| row[k] == "normalized") {
        assert!((row[v].parse::<f64>().unwrap() - 1.0).abs() < 1e-9, "{row:?}");
    }
}

#[test]
fn unknown_key_fails_with_its_name() {
    let d = scratch("strict");
    let cfg = write_config(&d, &SIMULATE.replace("seed = 11", "seed = 11\nsaples = 3"));
    let o = rwpin(&["simulate-z", "--config", &cfg, "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("saples"), "{err}");

    let cfg = write_config(&d, &SIMULATE.replace("chains = 200", "chainz = 200"));
    let o = rwpin(&["run", "--config", &cfg, "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.params.chainz"));
}

#[test]
fn subcommand_rejects_foreign_experiment() {
    let d = scratch("foreign");
    let cfg = write_config(&d, SIMULATE);
    let o = rwpin(&["homogeneous", "--config", &cfg, "--out", d.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment.name"));
}

#[test]
fn homogeneous_has_zero_free_energy_row() {
    let d = scratch("homogeneous");
    let cfg = write_config(
        &d,
        r#"
[kernel]
gamma = 0.75
x_max = 65536

[model]
t_max = 50.0
step = 0.25
beta_grid = [1.0, 1.01, 1.1, 1.5]

[disorder]
rho = [0.0]
seed = 1
samples = 1

[experiment]
name = "homogeneous"

[experiment.params]
t_points = 5
"#,
    );
    let out = d.join("o");
    let o = rwpin(&["homogeneous", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, r) = rows(&fs::read_to_string(out.join("free_energy.csv")).unwrap());
    let (br, f) = (col(&h, "beta_ratio"), col(&h, "F"));
    let first = &r[0];
    assert_eq!(first[br].parse::<f64>().unwrap(), 1.0);
    assert!(first[f].parse::<f64>().unwrap().abs() <= 1e-8);
    assert!(r[1..].iter().all(|row| row[f].parse::<f64>().unwrap() > 0.0));
    let (h, r) = rows(&fs::read_to_string(out.join("renewal.csv")).unwrap());
    assert_eq!(h, ["t", "K", "u", "doney_ratio"]);
    assert!(!r.is_empty());
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("check free_energy_at_beta0: ok"), "{summary}");
}

#[test]
fn criticality_gives_one_slope_per_rho() {
    let d = scratch("criticality");
    let cfg = write_config(
        &d,
        r#"
[kernel]
gamma = 0.8
x_max = 65536

[model]
t_max = 20.0
step = 0.2

[disorder]
rho = [0.0, 0.5]
seed = 5
samples = 20

[experiment]
name = "criticality"

[experiment.params]
horizons = [5.0, 10.0, 20.0]
"#,
    );
    let out = d.join("o");
    let o = rwpin(&["irrelevance", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, r) = rows(&fs::read_to_string(out.join("criticality.csv")).unwrap());
    let (s, v, rho) = (col(&h, "statistic"), col(&h, "value"), col(&h, "rho"));
    let slopes: Vec<&Vec<String>> = r.iter().filter(|row| row[s] == "slope_log_median").collect();
    assert_eq!(slopes.len(), 2);
    let at0 = slopes.iter().find(|row| row[rho].parse::<f64>().unwrap() == 0.0).unwrap();
    assert!(at0[v].parse::<f64>().unwrap().abs() < 1e-9);
}

#[test]
fn claims_lists_the_registry() {
    let o = rwpin(&["claims"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let n: usize = text.lines().last().unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(n >= 13);
    for id in ["kernel-exactness", "criticality-decay", "epsilon-good-probe"] {
        assert!(text.contains(id));
    }
}
