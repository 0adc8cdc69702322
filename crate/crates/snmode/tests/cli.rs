use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
downsample = 25
shot_min = 3
shot_max = 6
certificate_samples = 8
rollout_refresh = 2
lyapunov_window = 5

[arch]
h_hidden = [8]
feat_hidden = [8]
feat_out = 4
icnn_hidden = [8]
lipschitz = 2.0
smoothing = 0.1

[tangents]
epochs = 4
lr = 0.01

[multishoot]
epochs = 3
lr = 0.003

[lyapunov]
epochs = 3
lr = 0.003

[finetune]
epochs = 2
lr = 0.001
"#;

fn snmode(args: &[&str]) -> Output {
    snmode_env(args, &[])
}

fn snmode_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snmode"));
    c.args(args).env_remove("SNDOE_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Dataset plus a tiny trained model, shared by several tests.
fn fixture(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    ok(&snmode(&["gen-dataset", "--shape", "s-curve", "--manifold", "S3", "--out", s(&data)]));
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let model = root.join("model");
    ok(&snmode(&["train", "--dataset", s(&data), "--config", s(&cfg), "--out", s(&model)]));
    (data, model.join("model.json"))
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let cfg = dir.path().join("tiny.toml");
    let again = dir.path().join("again");
    ok(&snmode(&["train", "--dataset", s(&data), "--config", s(&cfg), "--out", s(&again)]));
    for f in ["model.json", "metrics.csv", "config.json"] {
        assert_eq!(fs::read(dir.path().join("model").join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let a = manifest(&dir.path().join("model"));
    let b = manifest(&again);
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["seed"], 3);
    assert_eq!(a["command"], "train");
    assert!(a["version"].as_str().unwrap().starts_with('v'));
    assert!(a["outputs"].as_array().unwrap().iter().any(|o| o == "model.json"));
    let metrics = fs::read_to_string(again.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("stage,epoch,loss,shot,certificate_violations,decay_fraction\n"));
    assert_eq!(metrics.lines().count(), 1 + 4 + 3 + 3 + 2);
}

#[test]
fn downstream_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = fixture(dir.path());
    assert!(data.join("preview.svg").exists());

    let roll = dir.path().join("roll");
    let out = ok(&snmode(&["rollout", "--model", s(&model), "--start", "demo:1", "--dataset", s(&data), "--steps", "50", "--out", s(&roll), "--print-every", "10"]));
    assert!(out.contains("final geodesic distance"), "{out}");
    let csv = fs::read_to_string(roll.join("rollout.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(roll.join("rollout.meta.json").exists() && roll.join("lyapunov.csv").exists());

    let perturbed = dir.path().join("perturbed");
    ok(&snmode(&["rollout", "--model", s(&model), "--start", "perturb:0:0.1", "--dataset", s(&data), "--steps", "5", "--seed", "2", "--out", s(&perturbed)]));

    let at_goal = dir.path().join("goal");
    let goal: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("dataset.json")).unwrap()).unwrap();
    let coords: Vec<String> = goal["goal"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
    ok(&snmode(&["rollout", "--model", s(&model), "--start", &coords.join(","), "--steps", "20", "--out", s(&at_goal)]));
    let v = fs::read_to_string(at_goal.join("lyapunov.csv")).unwrap();
    assert!(v.lines().skip(1).all(|l| l.ends_with(",0")), "{v}");

    let off = snmode(&["rollout", "--model", s(&model), "--start", "1,1,0,0", "--out", s(&dir.path().join("off"))]);
    assert_eq!(off.status.code(), Some(2));

    let ev = dir.path().join("eval");
    ok(&snmode(&["evaluate", "--model", s(&model), "--dataset", s(&data), "--out", s(&ev), "--downsample", "25"]));
    let table = fs::read_to_string(ev.join("evaluate.csv")).unwrap();
    assert!(table.starts_with("demo,rmse\n") && table.contains("\nmean,"));
    assert!(ev.join("overlay.svg").exists());

    let spd = dir.path().join("spd");
    ok(&snmode(&["gen-dataset", "--shape", "line", "--manifold", "SPD2", "--out", s(&spd)]));
    let mismatch = snmode(&["evaluate", "--model", s(&model), "--dataset", s(&spd), "--out", s(&dir.path().join("mm"))]);
    assert_eq!(mismatch.status.code(), Some(2));

    let tm = dir.path().join("timing");
    ok(&snmode(&["timing", "--dataset", s(&data), "--out", s(&tm), "--config", s(&dir.path().join("tiny.toml")), "--shot", "5", "--reps", "3", "--downsample", "25"]));
    let t = fs::read_to_string(tm.join("timing.csv")).unwrap();
    assert!(t.contains("stage1-base-multishoot") && t.contains("stage3-stable-multishoot"));
}

#[test]
fn standalone_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    let out = ok(&snmode(&["solver-bench", "--manifold", "SPD2", "--steps", "20,40", "--out", s(&bench)]));
    assert!(out.contains("Dc"));
    let csv = fs::read_to_string(bench.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
    assert!(bench.join("bench.svg").exists());
    assert_eq!(snmode(&["solver-bench", "--manifold", "S3", "--field", "spin", "--out", s(&bench)]).status.code(), Some(2));

    let defect = dir.path().join("defect");
    ok(&snmode(&["defect-demo", "--out", s(&defect), "--steps", "50"]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(defect.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trial"]["corrected_stays"], true);
    assert_eq!(report["trial"]["f_goal_corrected"], 0.0);
    assert!(defect.join("defect.svg").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(snmode(&["--help"]).status.code(), Some(0));
    assert_eq!(snmode(&["--version"]).status.code(), Some(0));
    assert_eq!(snmode(&["frobnicate"]).status.code(), Some(2));
    let out = dir.path().join("x");
    assert_eq!(snmode(&["gen-dataset", "--shape", "heart", "--manifold", "S3", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(snmode(&["gen-dataset", "--shape", "line", "--manifold", "S7", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(snmode(&["evaluate", "--model", "missing.json", "--dataset", "missing", "--out", s(&out)]).status.code(), Some(2));

    let data = dir.path().join("data");
    ok(&snmode(&["gen-dataset", "--shape", "line", "--manifold", "R2", "--out", s(&data)]));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "shot_min = 1\n").unwrap();
    assert_eq!(snmode(&["train", "--dataset", s(&data), "--config", s(&bad), "--out", s(&out)]).status.code(), Some(2));

    let huge = dir.path().join("huge.toml");
    fs::write(&huge, TINY.replace("lr = 0.01", "lr = 1e300")).unwrap();
    let o = snmode(&["train", "--dataset", s(&data), "--config", s(&huge), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn thread_cap_is_validated_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = ["gen-dataset", "--shape", "line", "--manifold", "R2", "--out", s(&out)];
    assert_eq!(snmode_env(&args, &[("SNDOE_THREADS", "zero")]).status.code(), Some(2));
    assert_eq!(snmode_env(&args, &[("SNDOE_THREADS", "0")]).status.code(), Some(2));
    ok(&snmode_env(&args, &[("SNDOE_THREADS", "3")]));
    assert_eq!(manifest(&out)["threads"], 3);
}
