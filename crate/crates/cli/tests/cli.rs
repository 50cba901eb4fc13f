use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn anthro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anthro"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn anthro")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = anthro(dir, args);
    assert!(
        out.status.success(),
        "anthro {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn score_column(csv: &[u8]) -> Vec<(u64, u8, usize)> {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (id, level, score) = (col("stack_id"), col("level"), col("score"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[id].parse().unwrap(), f[level].parse().unwrap(), f[score].parse().unwrap())
        })
        .collect()
}

#[test]
fn stage_by_stage_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--n", "8", "--levels", "0,4", "--seed", "5"]);
    let manifest: serde_json::Value = serde_json::from_slice(&read(d, "data/manifest.json")).unwrap();
    assert_eq!(manifest["stacks"].as_array().unwrap().len(), 32);
    assert_eq!(read(d, "data/stacks/000001.f32").len(), 32 * 64 * 64 * 4);

    ok(d, &["features", "--in", "data", "--out", "post.csv"]);
    ok(d, &["features", "--in", "data/manifest.json", "--out", "pre.csv", "--stage", "pre-hvs"]);
    let header = String::from_utf8(read(d, "post.csv")).unwrap();
    assert!(header.starts_with("stack_id,label,level,f1,f2,f3,b1,b2,b3_1,"));
    assert_ne!(read(d, "post.csv"), read(d, "pre.csv"));

    let power: serde_json::Value = serde_json::from_str(&ok(
        d,
        &[
            "train-complexity", "--features", "pre.csv", "--set", "b3", "--mode", "pooled", "--out", "model.json",
            "--coefficients", "coef.csv",
        ],
    ))
    .unwrap();
    assert!(power["auc"].as_f64().unwrap() >= 0.5);
    let model: serde_json::Value = serde_json::from_slice(&read(d, "model.json")).unwrap();
    for key in ["w", "mu0", "mu1", "ridge", "calib_lo", "calib_hi", "feature_spec"] {
        assert!(model.get(key).is_some(), "model lacks {key}");
    }
    assert_eq!(model["w"].as_array().unwrap().len(), 31);
    assert_eq!(String::from_utf8(read(d, "coef.csv")).unwrap().lines().count(), 32);

    ok(
        d,
        &[
            "evaluate", "--features", "post.csv", "--complexity-features", "pre.csv", "--mode", "pre-hvs", "--model",
            "model.json", "--out", "scores.csv",
        ],
    );
    let scores = score_column(&read(d, "scores.csv"));
    assert_eq!(scores.len(), 32);
    // Each level is ranked as its own set: min-ranks lie in 1..=16.
    for level in [0u8, 4] {
        let s: Vec<usize> = scores.iter().filter(|x| x.1 == level).map(|x| x.2).collect();
        assert_eq!(s.len(), 16);
        assert!(s.iter().all(|&v| (1..=16).contains(&v)));
    }

    let report: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["report", "--scores", "scores.csv", "--scores", "scores.csv", "--out", "report.json", "--csv", "levels.csv"],
    ))
    .unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    for l in levels {
        let hist: usize = l["histogram_lesion"]
            .as_array()
            .unwrap()
            .iter()
            .chain(l["histogram_healthy"].as_array().unwrap())
            .map(|v| v.as_u64().unwrap() as usize)
            .sum();
        assert_eq!(hist, 16);
        assert_eq!(l["ci_halfwidth"].as_f64(), Some(0.0), "identical instances");
    }
    assert!(report["auc_drop"].is_number());
    assert_eq!(String::from_utf8(read(d, "levels.csv")).unwrap().lines().count(), 3);
}

#[test]
fn generate_is_deterministic_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (out, seed) in [("a", "9"), ("b", "9"), ("c", "10")] {
        ok(d, &["generate", "--out", out, "--n", "1", "--levels", "0,4", "--seed", seed]);
    }
    assert_eq!(read(d, "a/manifest.json"), read(d, "b/manifest.json"));
    assert_eq!(read(d, "a/stacks/000004.f32"), read(d, "b/stacks/000004.f32"));
    assert_ne!(read(d, "a/stacks/000004.f32"), read(d, "c/stacks/000004.f32"));
}

#[test]
fn mode_none_equals_zero_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--n", "4", "--levels", "0,4"]);
    ok(d, &["features", "--in", "data", "--out", "f.csv"]);
    ok(d, &["evaluate", "--features", "f.csv", "--mode", "none", "--out", "none.csv"]);
    ok(d, &["evaluate", "--features", "f.csv", "--mode", "ideal", "--kappa", "0", "--out", "k0.csv"]);
    ok(d, &["evaluate", "--features", "f.csv", "--mode", "ideal", "--kappa", "32", "--out", "k32.csv"]);
    assert_eq!(score_column(&read(d, "none.csv")), score_column(&read(d, "k0.csv")));
    let none = score_column(&read(d, "none.csv"));
    let noisy = score_column(&read(d, "k32.csv"));
    // Level 0 has ĉ = 0 under the ideal estimator, so it is untouched.
    let at = |v: &[(u64, u8, usize)], l: u8| v.iter().filter(|x| x.1 == l).cloned().collect::<Vec<_>>();
    assert_eq!(at(&none, 0), at(&noisy, 0));
    assert_ne!(at(&none, 4), at(&noisy, 4));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--n", "2", "--levels", "0,4"]);
    ok(d, &["features", "--in", "data", "--out", "f.csv"]);
    let out = anthro(d, &["evaluate", "--features", "f.csv", "--mode", "post-hvs", "--out", "s.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing complexity model"));
    let out = anthro(d, &["features", "--in", "nowhere", "--out", "f.csv"]);
    assert!(!out.status.success());
    let out = anthro(d, &["evaluate", "--features", "f.csv", "--mode", "sideways", "--out", "s.csv"]);
    assert!(!out.status.success());
}

#[test]
fn tables_bundle_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.json"), r#"{"dataset": {"n_per_cell": 8, "levels": [0, 4]}}"#).unwrap();
    let summary = ok(d, &["--config", "small.json", "--threads", "1", "tables", "--out", "one"]);
    assert!(summary.contains("lesion detection"));
    ok(d, &["--config", "small.json", "tables", "--out", "many"]);
    for f in [
        "report.json",
        "power_table.csv",
        "coefficients.csv",
        "detection_table.csv",
        "dprime_drop.csv",
        "histograms.csv",
    ] {
        assert_eq!(read(d, &format!("one/{f}")), read(d, &format!("many/{f}")), "{f} differs");
    }
    let report: serde_json::Value = serde_json::from_slice(&read(d, "one/report.json")).unwrap();
    assert_eq!(report["detection"]["cells"].as_array().unwrap().len(), 8);
    ok(d, &["--config", "small.json", "--seed", "77", "tables", "--out", "other"]);
    assert_ne!(read(d, "one/report.json"), read(d, "other/report.json"));
}

fn http(port: u16, request: &str) -> String {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).unwrap();
    String::from_utf8_lossy(&buf).into_owned()
}

#[test]
fn serve_accepts_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate", "--out", "data", "--n", "2", "--levels", "0"]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_anthro"))
        .current_dir(d)
        .args(["serve", "--data", "data", "--port", &port.to_string()])
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    let body = r#"{"conditions":[{"level":0,"label":"lesion"}],"stacks_per_condition":2}"#;
    let resp = http(
        port,
        &format!(
            "POST /api/sessions HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    );
    child.kill().ok();
    child.wait().ok();
    assert!(resp.starts_with("HTTP/1.1 201"), "{resp}");
    assert!(resp.contains("\"n_trials\":2"));
    assert!(d.join("data/sessions").is_dir());
}
