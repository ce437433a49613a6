use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use penal_core::dump;
use sha2::{Digest, Sha256};

fn penal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penal"))
        .args(args)
        .env("PENAL_THREADS", "2")
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const LANGEVIN_SUP: &str = r#"
experiment = "martingale_identity_suite"
[model]
kind = "langevin"
[weight]
kind = "sup_f"
model = "langevin"
threshold = 0.5
f = { kind = "constant" }
[sampling]
dt = 0.01
times = [0.5]
starts = [[0.0, -1.0, -1.0]]
n = 100
"#;

const PERSISTENCE: &str = r#"
experiment = "persistence_exponent_langevin"
seed = 4
[model]
kind = "langevin"
[sampling]
dt = 0.01
times = [1.0, 2.0, 4.0]
starts = [[0.0, -1.0, -1.0]]
n = 4000
bootstrap = 10
"#;

#[test]
fn minimal_run_writes_one_row_per_start_and_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = configs().join("minimal.toml");
    let o = penal(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,l,t,estimate,se,n,reference,pass,shrinks");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].contains("1.0000000000000000e0"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 1);
    assert!(m["error"].is_null());
    assert!(m["config"].as_str().unwrap().contains("martingale_identity_suite"));
    assert!(json(&out.join("report.json"))["rows"].as_array().unwrap().len() == 6);
}

#[test]
fn langevin_threshold_above_zero_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", LANGEVIN_SUP);
    let out = tmp.path().join("out");
    let o = penal(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("domain: y₀ must be ≤ 0"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["status"], "error");
    assert_eq!(m["error"]["kind"], "config");
    assert!(m["error"]["message"].as_str().unwrap().contains("y₀ must be ≤ 0"));
    assert!(!out.join("report.csv").exists());
}

#[test]
fn unknown_keys_and_unreadable_files_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("minimal.toml"))
        .unwrap()
        .replace("n = 10000", "n = 10000\nsamples = 3");
    let cfg = write(tmp.path(), "unknown.toml", &text);
    assert_eq!(
        penal(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(penal(&["run", "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_4_and_passes_without_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", &format!("{PERSISTENCE}band = [0.5, 1.0]\n"));
    let out = tmp.path().join("out");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(penal(&args).status.code(), Some(0));
    let mut checked = args.to_vec();
    checked.push("--check");
    assert_eq!(penal(&checked).status.code(), Some(4));
    assert_eq!(json(&out.join("manifest.json"))["status"], "check_failed");
}

#[test]
fn reruns_are_byte_identical_and_independent_of_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("minimal.toml");
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let o = Command::new(env!("CARGO_BIN_EXE_penal"))
            .args([
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
                "--seed",
                "9",
            ])
            .output()
            .unwrap();
        assert!(o.status.success());
        let mut m = json(&out.join("manifest.json"));
        m.as_object_mut().unwrap().remove("wall_time_s");
        let config = m["config"].as_str().unwrap().replace(out.to_str().unwrap(), "OUT");
        m["config"] = config.into();
        (
            fs::read(out.join("report.csv")).unwrap(),
            fs::read(out.join("report.json")).unwrap(),
            m,
        )
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.2["seed"], 9);
}

#[test]
fn phi_eval_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let states = write(tmp.path(), "s.csv", "x,y,l\n0,0,0\n-2,-1,0\n-2,1,0\nfoo,1,2\n");
    let run = |cfg: &str| {
        let o = penal(&[
            "phi-eval",
            "--config",
            configs().join(cfg).to_str().unwrap(),
            "--states",
            states.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let hev = run("phi_hev.toml");
    let lines: Vec<&str> = hev.lines().collect();
    assert_eq!(lines[0], "x,y,l,phi,error");
    assert!(lines[1].ends_with(",1.0000000000000000e0,"), "{}", lines[1]);
    let sup = run("phi_sup.toml");
    let lines: Vec<&str> = sup.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[2].ends_with(",2.0000000000000000e0,"), "{}", lines[2]);
    // supremum above the threshold y0 = 0: outside the domain
    let mut rows = csv::Reader::from_reader(sup.as_bytes());
    let row = rows.records().nth(2).unwrap().unwrap();
    assert_eq!(&row[3], "");
    assert!(row[4].starts_with("domain"), "{}", lines[3]);
    assert!(lines[4].contains("usage"));
}

#[test]
fn phi_eval_accepts_a_full_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let states = write(tmp.path(), "s.csv", "1,1,0\n");
    let o = penal(&[
        "phi-eval",
        "--config",
        configs().join("minimal.toml").to_str().unwrap(),
        "--states",
        states.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .contains(",2.0000000000000000e0"));
}

#[test]
fn dump_paths_round_trip_header_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "d.toml",
        r#"
experiment = "build_penalised_ensemble"
seed = 77
[model]
kind = "brownian"
supremum = "grid"
local_time = "occupation"
bandwidth = 0.2
[sampling]
dt = 0.05
horizon = 1.0
starts = [[0.5, 0.5, 0.0]]
n = 20
"#,
    );
    let dump_to = |name: &str| {
        let p = tmp.path().join(name);
        let o = penal(&["dump-paths", "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        p
    };
    let (a, b) = (dump_to("a.bin"), dump_to("b.bin"));
    let (ba, bb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(Sha256::digest(&ba), Sha256::digest(&bb));
    let paths = dump::read_all(&mut ba.as_slice()).unwrap();
    assert_eq!(paths.len(), 20);
    for (i, p) in paths.iter().enumerate() {
        assert_eq!(p.seed, 77);
        assert_eq!(p.stream, i as u64);
        assert_eq!(p.dt, 0.05);
        assert_eq!(p.bandwidth, Some(0.2));
        assert_eq!(p.len(), 21);
        assert!((p.horizon() - 1.0).abs() < 1e-12);
        assert_eq!(p.initial().coords, [0.5, 0.5, 0.0]);
    }
    let mut again = Vec::new();
    for p in &paths {
        dump::write_path(&mut again, p).unwrap();
    }
    assert_eq!(again, ba);
}

#[test]
fn calibrate_writes_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", PERSISTENCE);
    let out = tmp.path().join("consts.toml");
    let o = penal(&["calibrate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: toml::Table = fs::read_to_string(&out).unwrap().parse().unwrap();
    assert!(t["c1"]["value"].as_float().unwrap() > 0.0);
    assert!(t["persistence_slope"]["value"].as_float().unwrap() < 0.0);
    assert_eq!(t["source"]["seed"].as_integer(), Some(4));
}
