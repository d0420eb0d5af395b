use std::path::Path;
use std::process::Command;

fn qp(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_quakepick")).current_dir(dir).args(args).output().expect("spawn");
    assert!(out.status.success(), "quakepick {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn traces(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir.join("c/traces"))
        .unwrap()
        .map(|e| format!("c/traces/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_features_train_pick_eval_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("s.toml"),
        "seed = 3\nn_stations = 3\nduration_s = 1800\nevent_rate_per_hour = 30\nmin_separation_s = 30\n\
         snr_min = 5\nsnr_max = 50\nburst_rate_per_hour = 100\nburst_snr_min = 3\nburst_snr_max = 10\n",
    )
    .unwrap();
    qp(d, &["synth", "--config", "s.toml", "--out-dir", "c", "--format", "csv"]);
    let tr = traces(d);
    assert_eq!(tr.len(), 3);

    let mut args = vec!["features", "--candidates", "auto-trigger", "--labels", "c/labels.csv", "--out", "f.csv", "--post-s", "10", "--in"];
    args.extend(tr.iter().map(String::as_str));
    qp(d, &args);
    let header = std::fs::read_to_string(d.join("f.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 691 + 3);

    qp(d, &["train", "--features", "f.csv", "--out", "b.json", "--seed", "1"]);

    let mut args = vec!["pick", "--bundle", "b.json", "--stations", "c/stations.csv", "--out", "p.csv", "--in"];
    args.extend(tr.iter().map(String::as_str));
    qp(d, &args);

    let out = qp(d, &["eval", "--picks", "p.csv", "--labels", "c/labels.csv", "--sweep", "0:1:0.25", "--report", "r.json"]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    let recall = r["mean"]["recall"].as_f64().unwrap();
    let precision = r["mean"]["precision"].as_f64().unwrap();
    assert!(recall >= 0.8 && precision >= 0.8, "{out}");
    assert_eq!(r["sweep"].as_array().unwrap().len(), 5);

    let mut args = vec!["bench", "--bundle", "b.json", "--stations", "c/stations.csv", "--report", "bench.json", "--parallel", "2", "--in"];
    args.extend(tr.iter().map(String::as_str));
    qp(d, &args);
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("bench.json")).unwrap()).unwrap();
    assert_eq!(b["identical"], serde_json::Value::Bool(true));
    assert!(b["samples"].as_u64().unwrap() >= b["candidates"].as_u64().unwrap());
}

#[test]
fn rejects_unknown_format() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_quakepick"))
        .current_dir(tmp.path())
        .args(["synth", "--out-dir", "c", "--format", "wav"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
