use std::path::Path;
use std::process::{Command, Output};

use irtrel::datagen::Calibration;
use irtrel::eqc::{eqc_calibrate, EqcConfig};
use irtrel::items::{DifficultySource, ItemSpec, PoolConfig};
use irtrel::latent::{LatentSpec, Shape};
use irtrel::psychometrics::ScaleInterval;

fn irtrel(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irtrel"))
        .args(args)
        .current_dir(dir)
        .env_remove("IRTREL_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const REFERENCE: &[&str] = &[
    "calibrate",
    "--target",
    "0.75",
    "--items",
    "30",
    "--model",
    "rasch",
    "--latent-shape",
    "bimodal",
    "--latent-params",
    "delta=0.8",
    "--item-source",
    "pool",
    "--algorithm",
    "eqc",
    "--m",
    "20000",
    "--c-lower",
    "0.1",
    "--c-upper",
    "10",
    "--seed",
    "42",
];

fn with(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = REFERENCE.to_vec();
    v.extend_from_slice(extra);
    v
}

fn load_calibration(path: &Path) -> (serde_json::Value, Calibration) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let doc = v.clone();
    let obj = v.as_object_mut().unwrap();
    obj.remove("schema_version");
    obj.remove("reproducibility");
    (doc, serde_json::from_value(v).unwrap())
}

#[test]
fn calibrate_reference_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let o = irtrel(&with(&["--out", "cal.json"]), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for field in [
        "Target reliability",
        "Achieved reliability        : 0.7500",
        "Absolute error",
        "Scale factor (c*)",
        "Number of items (I)         : 30",
        "Quadrature points (M)       : 20000",
        "Reliability metric",
        "Latent variance",
        "Status                      : success",
        "Search bracket",
    ] {
        assert!(stdout.contains(field.split("  ").next().unwrap()), "{field}");
    }

    let (doc, cal) = load_calibration(&dir.path().join("cal.json"));
    assert_eq!(doc["schema_version"], 1);
    let repro = &doc["reproducibility"];
    assert_eq!(repro["library"], "irtrel");
    assert_eq!(repro["command"], "calibrate");
    assert_eq!(repro["seeds"]["seed"], 42);
    assert_eq!(repro["config"]["c_bounds"], serde_json::json!([0.1, 10.0]));

    let expected = eqc_calibrate(&EqcConfig {
        m_quadrature: 20_000,
        interval: ScaleInterval::WIDE,
        ..EqcConfig::new(
            0.75,
            LatentSpec::new(Shape::Bimodal { delta: 0.8 }),
            ItemSpec::Generate(PoolConfig::rasch(30, DifficultySource::bundled_pool())),
            42,
        )
    })
    .unwrap();
    assert_eq!(cal, Calibration::Eqc(expected));
    match cal {
        Calibration::Eqc(r) => assert!((r.achieved - 0.75).abs() < 1e-4),
        Calibration::Sac(_) => panic!("expected an eqc result"),
    }
}

#[test]
fn calibrate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = irtrel(&["calibrate", "--target", "1.2", "--items", "30"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("(0, 1)"));

    let mut high = with(&["--out", "edge.json"]);
    high[2] = "0.995";
    let o = irtrel(&high, dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("attainable range"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("boundary_high"));
    assert!(dir.path().join("edge.json").exists());

    for bad in [
        vec!["calibrate", "--target", "0.5"],
        vec!["calibrate", "--target", "0.5", "--items", "10", "--model", "3pl"],
        vec!["calibrate", "--target", "0.5", "--items", "10", "--latent-shape", "bimodal", "--latent-params", "k=2"],
        vec!["calibrate", "--target", "0.5", "--items", "10", "--metric", "msem"],
        vec!["calibrate", "--target", "0.5", "--items", "10", "--c-lower", "3", "--c-upper", "1"],
        vec!["calibrate", "--target", "0.5", "--items", "10", "--item-source", "custom"],
        vec!["calibrate", "--target", "abc", "--items", "10"],
        vec!["frobnicate"],
    ] {
        let o = irtrel(&bad, dir.path());
        assert_eq!(code(&o), 2, "{bad:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = irtrel(
        &["calibrate", "--target", "0.5", "--item-source", "custom", "--pool-file", "missing.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 5);
    std::fs::write(dir.path().join("bad.csv"), "beta\n0.1\nnope\n").unwrap();
    let o = irtrel(
        &["calibrate", "--target", "0.5", "--item-source", "custom", "--pool-file", "bad.csv"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
}

#[test]
fn sac_document_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "calibrate", "--target", "0.6", "--items", "20", "--model", "2pl", "--algorithm", "sac", "--n-iter", "120",
        "--burn-in", "60", "--m-per-iter", "300", "--seed", "3", "--out", "sac.json", "--trace", "trace.csv", "--threads",
        "1",
    ];
    let o = irtrel(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, cal) = load_calibration(&dir.path().join("sac.json"));
    let text = serde_json::to_string(&cal).unwrap();
    let again: Calibration = serde_json::from_str(&text).unwrap();
    assert_eq!(again, cal);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 121);
}

#[test]
fn generate_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&irtrel(&with(&["--out", "cal.json"]), dir.path())), 0);
    let o = irtrel(
        &["generate", "--calibration", "cal.json", "--n", "1000", "--seed", "7", "--out", "resp.csv", "--emit-theta"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("resp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1000);
    assert!(csv
        .lines()
        .all(|l| l.split(',').count() == 30 && l.split(',').all(|f| f == "0" || f == "1")));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("resp.csv.json")).unwrap()).unwrap();
    assert_eq!(side["theta_true"].as_array().unwrap().len(), 1000);
    assert_eq!(side["reproducibility"]["seeds"]["seed"], 7);

    let o = irtrel(
        &["generate", "--calibration", "cal.json", "--n", "5", "--out", "h.csv", "--header"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let h = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(h.starts_with("item_1,item_2,"));
    assert!(!std::fs::read_to_string(dir.path().join("h.csv.json")).unwrap().contains("theta_true"));

    assert_eq!(
        code(&irtrel(&["generate", "--calibration", "cal.json", "--n", "0", "--out", "z.csv"], dir.path())),
        2
    );
    assert_eq!(
        code(&irtrel(&["generate", "--calibration", "none.json", "--n", "5", "--out", "z.csv"], dir.path())),
        5
    );
    std::fs::write(dir.path().join("junk.json"), "{\"schema_version\": 1}").unwrap();
    assert_eq!(
        code(&irtrel(&["generate", "--calibration", "junk.json", "--n", "5", "--out", "z.csv"], dir.path())),
        2
    );

    let o = irtrel(&["compare", "--eqc", "cal.json", "--sac", "cal.json"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("0.00%"));
    let mut other = with(&["--out", "cal2.json"]);
    other[2] = "0.7";
    assert_eq!(code(&irtrel(&other, dir.path())), 0);
    let o = irtrel(&["compare", "--eqc", "cal.json", "--sac", "cal2.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn bounds_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = irtrel(
        &["bounds", "--items", "60", "--c-lower", "0.1", "--c-upper", "10", "--target", "0.7", "--out", "b.json"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("Reference ceiling           : 0.9375"), "{out}");
    assert!(out.contains("feasible"));
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert!(b["rho_lower"].as_f64().unwrap() < 0.7 && b["rho_upper"].as_f64().unwrap() > 0.7);

    let mut gap = String::from("beta\n");
    for b in [-3.0, 3.0] {
        for _ in 0..10 {
            gap.push_str(&format!("{b}\n"));
        }
    }
    std::fs::write(dir.path().join("gap.csv"), gap).unwrap();
    let o = irtrel(
        &[
            "bounds", "--item-source", "custom", "--pool-file", "gap.csv", "--latent-params", "sigma=0.2", "--c-lower", "1",
            "--c-upper", "50", "--m", "5000", "--scan-msem",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("non-monotone"));

    let o = irtrel(&["bounds", "--items", "15", "--target", "0.99"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn shapes_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = irtrel(&["shapes", "--n", "20000", "--out", "d.csv", "--moments", "m.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let d = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(d.lines().next().unwrap(), "theta,normal,bimodal,skew_pos,heavy_tail");
    assert!(!d.contains("-0,"));
    let m = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(m.lines().count(), 5);
    let o = irtrel(&["shapes", "--shape", "bimodal:delta=0.5", "--shape", "normal", "--n", "500"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("theta,bimodal,normal\n"));
    assert_eq!(code(&irtrel(&["shapes", "--shape", "uniform"], dir.path())), 2);
}

const SMOKE: &str = r#"
master_seed = 11
version_tag = "smoke"
[latent]
shapes = ["normal", "skew_pos"]
[items]
models = ["rasch"]
sources = ["pool"]
n_items = [15]
[eqc]
m = 2000
[sac]
n_iter = 60
burn_in = 30
m_per_iter = 200
[study]
n_persons = [100, 300]
replications = 4
"#;

#[test]
fn validate_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("study.toml"), SMOKE).unwrap();
    let o = irtrel(&["validate", "--profile", "desk", "--config", "study.toml", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.csv", "summary_by_algorithm.csv", "summary_by_target.csv", "replication_sd.csv", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_conditions"], 12);
    assert_eq!(manifest["reproducibility"]["version_tag"], "smoke");

    let o = irtrel(&["validate", "--profile", "full", "--dry-run"], dir.path());
    assert_eq!(code(&o), 0);
    let echo: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let cfg = &echo["reproducibility"]["config"];
    assert_eq!(cfg["c_bounds"], serde_json::json!([0.1, 10.0]));
    assert_eq!(cfg["m_quadrature"], 20000);
    assert_eq!(cfg["sac_n_iter"], 1000);
    assert_eq!(cfg["sac_m_per_iter"], 2000);
    assert_eq!(cfg["replications"], 2000);
    assert_eq!(cfg["n_conditions"], 2880);

    std::fs::write(dir.path().join("bad.toml"), "[study]\nreplications = \"many\"\n").unwrap();
    let o = irtrel(&["validate", "--config", "bad.toml", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("replications"), "{err}");

    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let o = irtrel(&["validate", "--config", "study.toml", "--out", "blocker/sub"], dir.path());
    assert_eq!(code(&o), 5);
    assert_eq!(code(&irtrel(&["validate", "--config", "missing.toml"], dir.path())), 5);
    assert_eq!(code(&irtrel(&["validate", "--config", "study.toml"], dir.path())), 2);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("study.toml"), SMOKE).unwrap();
    let run = |threads: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_irtrel"))
            .args(["validate", "--config", "study.toml", "--out", out])
            .env("IRTREL_THREADS", threads)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("1", "a")), 0);
    assert_eq!(code(&run("3", "b")), 0);
    assert_eq!(code(&run("0", "c")), 2);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("records.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}
