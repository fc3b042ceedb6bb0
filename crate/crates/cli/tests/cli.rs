use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const XOR: &str = r#"
data_format = "synthetic"
synthetic_kind = "xor_quadrants"
synthetic_n = 600
synthetic_noise = 0.05
split = [400, 100, 100]
seed = 5
initial_units = 6
lambda = 1e-3
batch_size = 50
max_epochs = 8
log_unit_norms = true
"#;

fn npnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npnet"))
        .args(args)
        .env("NPNET_THREADS", "0")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_run(dir: &Path, text: &str) -> PathBuf {
    let config = write_config(dir, "run.toml", text);
    let out_dir = dir.join("run");
    let out = npnet(&["train", "--config", s(&config), "--out", s(&out_dir), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out_dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let metrics = read(&run.join("metrics.csv"));
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,phase,train_ce,train_err,valid_ce,valid_err,d_1,d_2,alpha_phi,lambda"
    );
    let epochs: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, (1..=8).collect::<Vec<_>>());
    for f in [
        "manifest.json",
        "config.toml",
        "unit_events.csv",
        "rewinds.csv",
        "unit_norms.csv",
        "checkpoint.bin",
        "model.bin",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["lambda"], 1e-3);
    assert_eq!(manifest["config"]["alpha_r"], 20.0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["epochs"], 8);
    assert!(summary["test_err"].as_f64().unwrap() <= 1.0);
}

#[test]
fn same_seed_reproduces_the_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train_run(a.path(), XOR);
    let rb = train_run(b.path(), XOR);
    assert_eq!(read(&ra.join("metrics.csv")), read(&rb.join("metrics.csv")));
    assert_eq!(read(&ra.join("unit_events.csv")), read(&rb.join("unit_events.csv")));
    assert_eq!(
        std::fs::read(ra.join("model.bin")).unwrap(),
        std::fs::read(rb.join("model.bin")).unwrap()
    );
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", XOR);
    let out_dir = dir.path().join("r");
    let out = npnet(&[
        "train",
        "--config",
        s(&config),
        "--out",
        s(&out_dir),
        "--seed",
        "77",
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out_dir.join("manifest.json"))["seed"], 77);
}

#[test]
fn resume_after_interruption_matches_an_uninterrupted_run() {
    let text = XOR
        .replace("max_epochs = 8", "max_epochs = 150")
        .replace("synthetic_n = 600", "synthetic_n = 3000")
        .replace("split = [400, 100, 100]", "split = [2000, 500, 500]");
    let reference = tempfile::tempdir().unwrap();
    let reference = train_run(reference.path(), &text);

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", &text);
    let out_dir = dir.path().join("run");
    let mut child = Command::new(env!("CARGO_BIN_EXE_npnet"))
        .args(["train", "--config", s(&config), "--out", s(&out_dir), "--quiet"])
        .env("NPNET_THREADS", "0")
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(120);
    let rows =
        || std::fs::read_to_string(out_dir.join("metrics.csv")).map_or(0, |t| t.lines().count().saturating_sub(1));
    while rows() < 5 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let interrupted_at = rows();
    assert!(interrupted_at < 150, "the run finished before it could be interrupted");

    let checkpoint = out_dir.join("checkpoint.bin");
    let out = npnet(&[
        "train",
        "--config",
        s(&config),
        "--out",
        s(&out_dir),
        "--resume",
        s(&checkpoint),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(&out_dir.join("metrics.csv")), read(&reference.join("metrics.csv")));
    assert_eq!(
        read(&out_dir.join("unit_events.csv")),
        read(&reference.join("unit_events.csv"))
    );
    assert_eq!(
        read(&out_dir.join("summary.json")),
        read(&reference.join("summary.json"))
    );
    assert!(json(&out_dir.join("manifest.json"))["resumed_from"].is_string());
}

#[test]
fn resume_with_a_changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let other = write_config(dir.path(), "other.toml", &XOR.replace("lambda = 1e-3", "lambda = 2e-3"));
    let out = npnet(&[
        "train",
        "--config",
        s(&other),
        "--out",
        s(&run),
        "--resume",
        s(&run.join("checkpoint.bin")),
        "--quiet",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("configuration"), "{}", stderr(&out));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "run.toml",
        "data_format = \"idx\"\ntrain_images = \"nope-images\"\ntrain_labels = \"nope-labels\"\n",
    );
    let out = npnet(&["train", "--config", s(&config), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope-images"), "{}", stderr(&out));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in [
        ("lambda = -1.0\n", "lambda"),
        ("batch_size = \"many\"\n", "batch_size"),
        ("learning_rate = 0.1\n", "learning_rate"),
        ("optimizer = \"rmsprop\"\nlambda = 0.1\n", "lambda"),
    ] {
        let config = write_config(dir.path(), "bad.toml", text);
        let out = npnet(&["train", "--config", s(&config), "--out", s(&dir.path().join("r"))]);
        assert_eq!(code(&out), 2, "{text}");
        assert!(stderr(&out).contains(field), "{text}: {}", stderr(&out));
    }
    let out = npnet(&["train", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(code(&out), 2);
    let out = npnet(&["train", "--bogus-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let again = dir.path().join("again");
    let out = npnet(&[
        "train",
        "--config",
        s(&run.join("config.toml")),
        "--out",
        s(&again),
        "--quiet",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(&run.join("config.toml")), read(&again.join("config.toml")));
    assert_eq!(read(&run.join("metrics.csv")), read(&again.join("metrics.csv")));
}

#[test]
fn eval_reproduces_the_logged_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let summary = json(&run.join("summary.json"));
    let model_epoch = summary["model_epoch"].as_u64().unwrap();
    let metrics = read(&run.join("metrics.csv"));
    let row = metrics
        .lines()
        .skip(1)
        .find(|l| l.split(',').next().unwrap().parse::<u64>().unwrap() == model_epoch)
        .unwrap();
    let logged: f64 = row.split(',').nth(5).unwrap().parse().unwrap();

    let config = dir.path().join("run.toml");
    let out = npnet(&[
        "eval",
        "--model",
        s(&run.join("model.bin")),
        "--config",
        s(&config),
        "--split",
        "valid",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"].as_f64().unwrap(), logged);
    assert_eq!(v["error"], summary["valid_err"]);
    assert_eq!(v["rows"], 100);

    let out = npnet(&[
        "eval",
        "--model",
        s(&run.join("model.bin")),
        "--config",
        s(&config),
        "--split",
        "test",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["error"], summary["test_err"]);

    let out = npnet(&["eval", "--model", s(&run.join("model.bin")), "--config", s(&config)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("error"));
}

#[test]
fn eval_on_raw_csv_applies_the_saved_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("blobs.csv");
    let mut text = String::from("x,y,label\n");
    for i in 0..200 {
        let k = i % 2;
        let jitter = (i as f64 * 0.37).sin() * 0.3;
        text.push_str(&format!("{},{},{k}\n", 100.0 + 50.0 * k as f64 + jitter, -3.0 + jitter,));
    }
    std::fs::write(&csv_path, &text).unwrap();
    let cfg = "data_format = \"csv\"\ntrain_path = \"blobs.csv\"\nhas_header = true\nlabel_column = 2\nmax_epochs = 10\nbatch_size = 20\nlambda = 1e-3\n";
    let run = train_run(dir.path(), cfg);
    let out = npnet(&[
        "eval",
        "--model",
        s(&run.join("model.bin")),
        "--csv",
        s(&csv_path),
        "--header",
        "--label-column",
        "2",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], 200);
    assert!(v["error"].as_f64().unwrap() < 0.1, "{v}");
}

#[test]
fn eval_rejects_bad_models_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let config = dir.path().join("run.toml");
    let mut bytes = std::fs::read(run.join("model.bin")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &bytes).unwrap();
    let out = npnet(&["eval", "--model", s(&bad), "--config", s(&config)]);
    assert_eq!(code(&out), 1);
    let out = npnet(&[
        "eval",
        "--model",
        s(&run.join("checkpoint.bin")),
        "--config",
        s(&config),
    ]);
    assert_eq!(code(&out), 1);
    let out = npnet(&[
        "eval",
        "--model",
        s(&dir.path().join("absent.bin")),
        "--config",
        s(&config),
    ]);
    assert_eq!(code(&out), 2);
    let out = npnet(&[
        "eval",
        "--model",
        s(&run.join("model.bin")),
        "--csv",
        s(&dir.path().join("absent.csv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_and_detects_a_fault() {
    let out = npnet(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = npnet(&["gradcheck", "--trials", "4", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["max_relative_error"].as_f64().unwrap() < 1e-6, "{v}");
    let out = npnet(&["gradcheck", "--trials", "3", "--inject-fault"]);
    assert_eq!(code(&out), 1);
    let out = npnet(&["gradcheck", "--trials", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn inspect_emits_series() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_run(dir.path(), XOR);
    let sizes_path = dir.path().join("sizes.csv");
    let out = npnet(&[
        "inspect",
        "--metrics",
        s(&run.join("metrics.csv")),
        "--emit",
        "sizes",
        "--out",
        s(&sizes_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sizes = read(&sizes_path);
    assert!(sizes.starts_with("epoch,phase,d_1,d_2\n"));
    assert_eq!(sizes.lines().count(), 9);

    let out = npnet(&["inspect", "--metrics", s(&run), "--emit", "lifetimes"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "unit_id,layer,birth,death,lifetime,survived");
    let survivors = lines.filter(|l| l.ends_with(",true")).count();
    let model = npnet(&[
        "eval",
        "--model",
        s(&run.join("model.bin")),
        "--config",
        s(&dir.path().join("run.toml")),
        "--json",
    ]);
    assert_eq!(code(&model), 0);
    let summary = json(&run.join("summary.json"));
    let width: u64 = summary["hidden_dims"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d.as_u64().unwrap())
        .sum();
    assert_eq!(survivors as u64, width);

    let out = npnet(&["inspect", "--metrics", s(&run), "--emit", "norms"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("epoch,layer,unit_id,fan_in,fan_out\n"));
}

#[test]
fn inspect_rejects_empty_or_missing_logs() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics.csv");
    std::fs::write(
        &metrics,
        "epoch,phase,train_ce,train_err,valid_ce,valid_err,d_1,alpha_phi,lambda\n",
    )
    .unwrap();
    let out = npnet(&["inspect", "--metrics", s(&metrics), "--emit", "sizes"]);
    assert_eq!(code(&out), 2);
    let out = npnet(&["inspect", "--metrics", s(&dir.path().join("absent")), "--emit", "sizes"]);
    assert_eq!(code(&out), 2);
    let out = npnet(&["inspect", "--metrics", s(&metrics), "--emit", "norms"]);
    assert_eq!(code(&out), 2);
}
