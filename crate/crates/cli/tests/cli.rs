use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecm::io::{atomic_write, districts_csv};
use ecm::simulate::stream_rng;
use ecm::vote::{SyntheticElection, TransitionMatrix};

const MODEL: &str = r#"
[model]
kind = "steady_ou"
tau = 0.4
sigma = 0.017888543819998316
z = [-0.2, 0.1]
"#;

const SMALL_DESIGN: &str = r#"
[design.generate]
n_times = 4
time_window = [0, 10]
cells_per_time = [10, 20]
cell_side = 0.1
placement_domain = { x = [-1, 1], y = [-1, 1] }
"#;

fn ecm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_small(dir: &Path, size: &str, out: &str) {
    let cfg = format!("seed = 3\nsize = {size}\n[output]\ndir = \"{out}\"\n{MODEL}{SMALL_DESIGN}");
    write(dir, "sim.toml", &cfg);
    let o = ecm(&["simulate", "-c", "sim.toml"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn fit_config(estimator: &str, size: &str, counts: &str) -> String {
    format!(
        r#"estimator = "{estimator}"
[data]
counts = "{counts}"
times = "sim/times.csv"
[family]
kind = "ou"
size = {size}
reference = {{ tau = 0.4, sigma = 0.017888543819998316, z = [-0.2, 0.1] }}
[output]
fit = "fit.json"
"#
    )
}

#[test]
fn standard_design_is_ragged_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!("seed = 11\nsize = {{ known = 1000 }}\n[design]\npreset = \"standard\"\n[output]\ndir = \"a\"\n{MODEL}");
    write(d, "sim.toml", &cfg);
    assert!(ecm(&["simulate", "-c", "sim.toml"], d).status.success());
    assert!(ecm(&["simulate", "-c", "sim.toml", "--set", "output.dir=\"b\""], d).status.success());
    for f in ["counts_0000.csv", "times.csv", "design.json", "metadata.json"] {
        assert_eq!(
            std::fs::read(d.join("a").join(f)).unwrap(),
            std::fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let (design, counts) = ecm::io::read_counts(&d.join("a/counts_0000.csv"), &d.join("a/times.csv")).unwrap();
    assert_eq!(design.n(), 10);
    assert!(design.cell_counts().iter().all(|&m| (10..=50).contains(&m)));
    assert!(counts.rows().iter().all(|r| r.iter().sum::<u64>() <= 1000));
}

#[test]
fn zero_replicates_write_metadata_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!("seed = 1\nsize = {{ known = 10 }}\n[output]\ndir = \"o\"\n{MODEL}{SMALL_DESIGN}");
    write(d, "sim.toml", &cfg);
    let o = ecm(&["simulate", "-c", "sim.toml", "--replicates", "0"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("o/metadata.json").exists());
    assert!(!d.join("o/counts_0000.csv").exists());
}

#[test]
fn invalid_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = format!("seed = 1\nsize = {{ known = 10 }}\ncolour = 3\n[output]\ndir = \"o\"\n{MODEL}{SMALL_DESIGN}");
    write(d, "bad.toml", &cfg);
    assert_eq!(ecm(&["simulate", "-c", "bad.toml"], d).status.code(), Some(1));
    write(d, "fit.toml", &fit_config("mcle", "{ known = 1000 }", "missing/counts.csv"));
    let o = ecm(&["fit", "-c", "fit.toml"], d);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn simulate_fit_bootstrap_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_small(d, "{ known = 1000 }", "sim");
    write(d, "fit.toml", &fit_config("mcle", "{ known = 1000 }", "sim/counts_0000.csv"));
    let o = ecm(&["fit", "-c", "fit.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["format_version"], 1);
    assert!(fit["result"]["natural"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap().is_finite()));

    let boot = "fit = \"fit.json\"\nn = 2\nseed = 5\n[output]\njson = \"b.json\"\nmarkdown = \"b.md\"\ncsv = \"b.csv\"\n";
    write(d, "boot.toml", boot);
    let o = ecm(&["bootstrap", "-c", "boot.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(d.join("b.json")).unwrap();
    let o = ecm(&["bootstrap", "-c", "boot.toml"], d);
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(d.join("b.json")).unwrap());
    let csv = std::fs::read_to_string(d.join("b.csv")).unwrap();
    assert!(csv.starts_with("parameter,estimate,lower,upper\ntau,"));
    assert!(std::fs::read_to_string(d.join("b.md")).unwrap().contains("95% bootstrap CI"));

    let o = ecm(&["bootstrap", "-c", "boot.toml", "--set", "n=0"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(b["n_retained"], 0);

    // an erratic fit is refused with the numerical-failure code
    let text = std::fs::read_to_string(d.join("fit.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["result"]["erratic"] = serde_json::Value::Bool(true);
    write(d, "fit.json", &serde_json::to_string(&v).unwrap());
    assert_eq!(ecm(&["bootstrap", "-c", "boot.toml"], d).status.code(), Some(2));
}

#[test]
fn mgle_on_small_poisson_counts_warns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_small(d, "{ poisson_rate = 100.0 }", "sim");
    write(d, "fit.toml", &fit_config("mgle", "{ poisson = 100.0 }", "sim/counts_0000.csv"));
    let o = ecm(&["fit", "-c", "fit.toml", "--set", "optimizer.max_iterations=5"], d);
    assert!(stderr(&o).contains("MGLE is unreliable"), "{}", stderr(&o));
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
}

#[test]
fn vote_transfer_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = TransitionMatrix::new(vec![[0.7, 0.1, 0.2], [0.15, 0.6, 0.25], [0.1, 0.05, 0.85]]).unwrap();
    let e = SyntheticElection {
        n_districts: 60,
        min_voters: 1000,
        max_voters: 20_000,
        shares: vec![0.3, 0.3, 0.4],
        concentration: 10.0,
    };
    let ds = e.generate(&t, &mut stream_rng(8, 0)).unwrap();
    atomic_write(&d.join("districts.csv"), districts_csv(&ds).unwrap().as_bytes()).unwrap();
    let cfg = r#"districts = "districts.csv"
seed = 2
bootstrap = 20
[labels]
sources = ["Left", "Right", "Abstention"]
destinations = ["Left", "Right", "Abstention"]
[output]
json = "vote.json"
markdown = "vote.md"
csv = "vote.csv"
"#;
    write(d, "vote.toml", cfg);
    let o = ecm(&["vote-transfer", "-c", "vote.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = std::fs::read_to_string(d.join("vote.md")).unwrap();
    assert!(md.starts_with("| | Left | Right | Abstention |"));
    assert_eq!(md.lines().count(), 5);
    let csv = std::fs::read_to_string(d.join("vote.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("vote.json")).unwrap()).unwrap();
    assert_eq!(v["intervals"].as_array().unwrap().len(), 9);

    write(d, "bad.csv", "district,opt_1,opt_2,res_1,res_2,res_3\na,5,5,3,3,3\n");
    let o = ecm(&["vote-transfer", "-c", "vote.toml", "--set", "districts=\"bad.csv\""], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.csv:2"), "{}", stderr(&o));
}

fn study_config(sizes: &str) -> String {
    format!(
        "seed = 4\nsizes = {sizes}\nestimators = [\"mcle\"]\n[truth]\ntau = 0.4\nsigma = 0.017888543819998316\nz = [-0.2, 0.1]\n[output]\ndir = \"study\"\n{}",
        SMALL_DESIGN
    )
}

#[test]
fn empty_study_grid_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "study.toml", &study_config("[]"));
    let o = ecm(&["study", "-c", "study.toml"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("study/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("size,estimator,replicate,parameter,estimate"));
}

#[test]
fn study_resume_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "study.toml", &study_config("[{ known = 1000 }]"));
    let fresh = ecm(&["study", "-c", "study.toml", "--replicates", "2", "--jobs", "1"], d);
    assert!(fresh.status.success(), "{}", stderr(&fresh));
    let full = std::fs::read(d.join("study/results.csv")).unwrap();
    let summary = std::fs::read(d.join("study/summary.md")).unwrap();
    std::fs::remove_dir_all(d.join("study")).unwrap();

    assert!(ecm(&["study", "-c", "study.toml", "--replicates", "1"], d).status.success());
    let o = ecm(&["study", "-c", "study.toml", "--replicates", "2", "--resume"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("study/results.csv")).unwrap(), full);
    assert_eq!(std::fs::read(d.join("study/summary.md")).unwrap(), summary);
    let text = String::from_utf8(full).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert!(text.lines().nth(1).unwrap().starts_with("N=1000,mcle,0,log_tau,"));
}
