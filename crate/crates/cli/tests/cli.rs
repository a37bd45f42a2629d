use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TWO_LEVEL: &str = r#"
[problem]
dimension = 1
sizes = [255]

[problem.coefficient]
kind = "two_level"
cells = 16
low = 1.0
high = 3.0
upper_fraction = 0.5

[preconditioner.a0]
kind = "constant"

[solver]
max_iterations = 20
certificates = true
oracle = true
"#;

const MODULATED: &str = r#"
[problem]
dimension = 1
sizes = [127]

[problem.coefficient]
kind = "modulated"
epsilon = 0.3
frequency = 4

[problem.coefficient.mean]
kind = "constant"
value = 1.0

[preconditioner.a0]
kind = "mean_function"
"#;

const BUMPS: &str = r#"
seed = 11

[problem]
dimension = 2
sizes = [31]

[problem.coefficient]
kind = "bumps"
cells = 4
height = 1.0
support = 0.95
base = 0.5

[preconditioner]
sinc_m = 16

[preconditioner.a0]
kind = "constant"
value = 1.0

[solver]
max_iterations = 12
truncation_tol = 1e-8
initial = "random"

[sincplot]
m_values = [4, 9, 16, 25, 36]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qpkron"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(config).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn bounds_for_modulated_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.toml", MODULATED);
    let v = stdout_json(&run(&cfg, &["bounds"]));
    let q = v["spectral"]["q"].as_f64().unwrap();
    let rho = v["spectral"]["rho_star"].as_f64().unwrap();
    assert!((q - 0.3).abs() < 1e-12, "q = {q}");
    assert!((rho - 1.0).abs() < 1e-12, "rho = {rho}");
}

#[test]
fn oracle_check_passes_on_one_dimensional_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TWO_LEVEL);
    let v = stdout_json(&run(&cfg, &["oracle-check"]));
    assert_eq!(v["passed"], Value::Bool(true));
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] == "pass"), "{checks:?}");
}

#[test]
fn zero_iterations_record_only_the_initial_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TWO_LEVEL);
    let v = stdout_json(&run(&cfg, &["solve", "--max-iterations", "0"]));
    assert_eq!(v["steps"].as_array().unwrap().len(), 1);
    assert_eq!(v["certificates"].as_array().unwrap().len(), 1);
    assert_eq!(v["iterations"], 0);
}

#[test]
fn run_record_matches_published_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/run_record.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, text, extra) in [
        ("a.toml", TWO_LEVEL, vec![]),
        ("b.toml", MODULATED, vec!["--oracle"]),
        ("c.toml", BUMPS, vec![]),
        (
            "d.toml",
            BUMPS,
            vec!["--method", "pcg", "--tol", "1e-6", "--max-rank", "10"],
        ),
    ] {
        let cfg = write_config(dir.path(), name, text);
        let mut args = vec!["solve"];
        args.extend(extra);
        let v = stdout_json(&run(&cfg, &args));
        let msgs: Vec<String> = match validator.validate(&v) {
            Ok(()) => vec![],
            Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
        };
        assert!(msgs.is_empty(), "{name}: {msgs:?}");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BUMPS}\n[output]\nsolution_csv = true\n"),
    );
    let read = |sub: &str| {
        let out = dir.path().join(sub);
        let o = run(&cfg, &["solve", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(out.join("run_record.json")).unwrap(),
            std::fs::read(out.join("solution.csv")).unwrap(),
        )
    };
    let (r1, s1) = read("one");
    let (r2, s2) = read("two");
    let (j1, j2): (Value, Value) = (
        serde_json::from_slice(&r1).unwrap(),
        serde_json::from_slice(&r2).unwrap(),
    );
    assert_eq!(j1["steps"], j2["steps"]);
    assert_eq!(s1, s2);
    let header = String::from_utf8(s1).unwrap();
    assert!(header.starts_with("term,sigma,axis,index,x,value\n"));
    // The echoed output directory differs; everything else is identical.
    let strip = |mut v: Value| {
        v["config"]["output"]["dir"] = Value::Null;
        serde_json::to_vec(&v).unwrap()
    };
    assert_eq!(strip(j1), strip(j2));
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMPS);
    let first = stdout_json(&run(&cfg, &["solve", "--seed", "5", "--max-rank", "8"]));
    let echo = write_config(
        dir.path(),
        "echo.json",
        &serde_json::to_string(&first["config"]).unwrap(),
    );
    let second = stdout_json(&run(&echo, &["solve"]));
    assert_eq!(first, second);
}

#[test]
fn seed_changes_the_random_start() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMPS);
    let a = stdout_json(&run(&cfg, &["solve", "--seed", "1", "--max-iterations", "1"]));
    let b = stdout_json(&run(&cfg, &["solve", "--seed", "2", "--max-iterations", "1"]));
    assert_ne!(a["steps"][0]["residual"], b["steps"][0]["residual"]);
}

#[test]
fn errors_command_brackets_the_oracle_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", TWO_LEVEL);
    let v = stdout_json(&run(&cfg, &["errors", "--max-iterations", "8"]));
    let steps = v["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 9);
    for s in steps {
        let (lo, hi) = (s["lower"].as_f64().unwrap(), s["upper"].as_f64().unwrap());
        let e = s["oracle_error"].as_f64().unwrap();
        assert!(lo <= e + 1e-12 && e <= hi + 1e-12, "{s}");
    }
}

#[test]
fn plot_commands_write_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BUMPS);
    let out = run(&cfg, &["sincplot"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["m", "sqrt_m", "terms", "rel_error"]);
    let errs: Vec<f64> = rows.records().map(|r| r.unwrap()[3].parse().unwrap()).collect();
    assert_eq!(errs.len(), 5);
    assert!(errs.last().unwrap() < errs.first().unwrap());

    let out = run(&cfg, &["rankplot", "--source", "oracle"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(rows.headers().unwrap(), vec!["k", "sigma", "normalized"]);
    let first = rows.records().next().unwrap().unwrap();
    assert_eq!(&first[2], "1.0");
}

#[test]
fn malformed_config_reports_location_and_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[problem]\ndimension = 1\nsizes = [31\n");
    let out = run(&cfg, &["bounds"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line"), "{err}");

    let cfg = write_config(dir.path(), "field.toml", &TWO_LEVEL.replace("low = 1.0", "lo = 1.0"));
    let out = run(&cfg, &["bounds"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lo"));
}

#[test]
fn infeasible_sizes_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &TWO_LEVEL.replace("dimension = 1", "dimension = 3"),
    );
    assert_eq!(run(&cfg, &["bounds"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "d.toml", TWO_LEVEL);
    assert_eq!(run(&cfg, &["bounds", "--sizes", "0"]).status.code(), Some(2));
    assert_eq!(run(&cfg, &["solve", "--tol", "-1"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", MODULATED);
    let out = run(&cfg, &["solve", "--rho", "5.0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sampled_coefficient_files_are_resolved_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[problem]
dimension = 1
sizes = [63]

[problem.coefficient]
kind = "sampled"
file = "a.csv"
"#;
    let cfg = write_config(dir.path(), "c.toml", text);
    assert_eq!(run(&cfg, &["bounds"]).status.code(), Some(2));
    write_config(dir.path(), "a.csv", "x,a\n0.0,1.0\n0.5,2.0\n1.0,1.0\n");
    let v = stdout_json(&run(&cfg, &["bounds"]));
    let (hm, hp) = (
        v["spectral"]["h_minus"].as_f64().unwrap(),
        v["spectral"]["h_plus"].as_f64().unwrap(),
    );
    assert!((hp / hm - 2.0).abs() < 1e-9, "{hm} {hp}");
}

#[test]
fn shipped_configs_parse_and_report_bounds() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let v = stdout_json(&run(&path, &["bounds"]));
            assert!(v["spectral"]["q"].as_f64().unwrap() < 1.0);
            count += 1;
        }
    }
    assert!(count >= 5);
}
