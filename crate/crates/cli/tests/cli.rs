use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oulab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oulab"));
    cmd.args(args).env_remove("OULAB_OUT");
    if let Some(p) = env_out {
        cmd.env("OULAB_OUT", p);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SUITE: &str = r#"
[scenario.rot]
system = { kind = "rotation" }
study = "dichotomy"
seed = 1

[scenario.inv]
system = { kind = "stable-random", seed = 7 }
study = "norm-gap-invariant"
seed = 4
t = [1.0]
s = [0.5]

[scenario.grid]
system = { kind = "rotation" }
study = "norm-gap-l1"
semigroup = "R"
seed = 3
t = [0.5, 1.0, 1.5, 2.0, 2.5]
s = [0.0, 0.5, 1.0, 1.5, 2.0]

[scenario.map]
system = { kind = "inline", a = [[-1.0]], b = [[1.0]] }
study = "spectral-map"
seed = 5
grid = { re_min = -4.0, re_max = 1.0, im_min = -3.0, im_max = 3.0, n_re = 40, n_im = 40 }
"#;

#[test]
fn suite_runs_reports_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "suite.toml", SUITE);
    let out = dir.path().join("out");
    let o = oulab(&["run", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let index = read_json(&out.join("index.json"));
    assert_eq!(index["scenarios"].as_array().unwrap().len(), 4);
    assert_eq!(index["passed"], Value::Bool(true));

    let rot = read_json(&out.join("rot.json"));
    assert_eq!(rot["results"]["dichotomy"]["kind"], "periodic");
    let period = rot["results"]["dichotomy"]["period"].as_f64().unwrap();
    assert!((period - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    assert!(rot.get("wall_clock_seconds").is_none());

    let inv = read_json(&out.join("inv.json"));
    assert!(inv["results"]["witnesses"][0]["lower_bound"].as_f64().unwrap() >= 1.9);

    let plot = |report: &str, kind: &str| {
        let file = dir.path().join(format!("{report}-{kind}.csv"));
        let o = oulab(
            &["plot", out.join(format!("{report}.json")).to_str().unwrap(), "--kind", kind, "--out", file.to_str().unwrap()],
            None,
        );
        (o, file)
    };
    let (o, file) = plot("grid", "gap-heatmap");
    assert!(o.status.success());
    let csv = std::fs::read_to_string(file).unwrap();
    assert_eq!(csv.lines().count(), 1 + 25);

    let (o, file) = plot("map", "spectral-contour");
    assert!(o.status.success());
    let csv = std::fs::read_to_string(file).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1600);
    assert!(rows.iter().all(|r| !r.contains("NaN") && !r.ends_with(',')));

    let (o, file) = plot("inv", "witness-curve");
    assert!(o.status.success());
    let csv = std::fs::read_to_string(file).unwrap();
    let bounds: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(bounds.len(), 4);
    assert!(bounds.windows(2).all(|w| w[1] >= w[0]));

    let (o, _) = plot("rot", "spectral-contour");
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("available: dichotomy"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "suite.toml", SUITE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(oulab(&["run", &cfg, "--out", a.to_str().unwrap()], None).status.success());
    assert!(oulab(&["run", &cfg, "--out", b.to_str().unwrap(), "--workers", "1"], None).status.success());
    for name in ["rot", "inv", "grid", "map"] {
        let f = format!("{name}.json");
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_config_writes_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "");
    let out = dir.path().join("env-out");
    let o = oulab(&["run", &cfg], Some(&out));
    assert!(o.status.success());
    let index = read_json(&out.join("index.json"));
    assert_eq!(index["scenarios"].as_array().unwrap().len(), 0);
}

#[test]
fn validation_failure_exits_nonzero_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "[scenario.bad]\nsystem = { kind = \"rotation\" }\nstudy = \"norm-gap-buc\"\nseed = 1\nt = [-1.0]\ns = [0.0]\n",
    );
    let out = dir.path().join("out");
    let o = oulab(&["run", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1: scenario.bad.t:"), "{err}");
    assert!(!out.exists());
}

#[test]
fn study_failure_writes_report_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fail.toml",
        "[scenario.same]\nsystem = { kind = \"rotation\" }\nstudy = \"witness-gallery\"\nseed = 1\nt = [6.283185307179586]\ns = [0.0]\n",
    );
    let out = dir.path().join("out");
    let o = oulab(&["run", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let r = read_json(&out.join("same.json"));
    assert_eq!(r["passed"], Value::Bool(false));
    assert!(!r["failures"].as_array().unwrap().is_empty());
}

#[test]
fn seed_override_changes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "[scenario.r]\nsystem = { kind = \"rotation\" }\nstudy = \"dichotomy\"\nseed = 1\n");
    let out = dir.path().join("out");
    assert!(oulab(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed-override", "42"], None).status.success());
    let r = read_json(&out.join("r.json"));
    assert_eq!(r["seed"]["value"], 42);
    assert_eq!(r["seed"]["source"], "override");
}

#[test]
fn scenario_list_names_bundled_suite() {
    let o = oulab(&["scenarios", "--list"], None);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("rotation-dichotomy"));
    assert!(text.lines().count() >= 6);
}
