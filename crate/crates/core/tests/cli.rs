use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BALL: &str = "n = 2\npreset = \"ball\"\n";

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Writes `profile.toml` and `run.toml` into `dir` and returns the config path.
fn setup(dir: &Path, profile: &str, extra: &str) -> PathBuf {
    std::fs::write(dir.join("profile.toml"), profile).unwrap();
    let text = format!(
        "profile = \"profile.toml\"\ndirection = [0.5, 0.0, 0.0, 0.0]\nseed = 3\n{extra}\n[grid]\nnw = 17\nnr = 9\nnth = 16\nwmax = 1.5\nrmin = 0.1\n"
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mongeflow"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn green_rows(out: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(out.join("green_grid.csv")).unwrap();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn missing_config_is_an_input_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_mongeflow")).arg("green").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_profile_reports_its_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), "n = 2\npreset = \"perturbed\"\nepsilon = [\n", "");
    let o = run(&["green"], &cfg, &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_reports_its_line() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "colour = 1");
    let o = run(&["green"], &cfg, &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn direction_outside_the_ball_is_refused() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path(), BALL, "");
    let text = std::fs::read_to_string(d.path().join("run.toml")).unwrap().replace("[0.5, 0.0, 0.0, 0.0]", "[0.6, 0.0, 0.0, 0.8]");
    std::fs::write(d.path().join("run.toml"), text).unwrap();
    let o = run(&["frontier"], &d.path().join("run.toml"), &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("direction"), "{}", stderr(&o));
}

#[test]
fn grid_below_the_minimum_is_refused() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path(), BALL, "");
    let text = std::fs::read_to_string(d.path().join("run.toml")).unwrap().replace("nth = 16", "nth = 8");
    std::fs::write(d.path().join("run.toml"), text).unwrap();
    let o = run(&["flow"], &d.path().join("run.toml"), &d.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("below the minimum"), "{}", stderr(&o));
}

#[test]
fn trivial_segment_green_is_log_norm_squared() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "s = 0.0\n[green]\nsamples = 50\npoints = []");
    let out = d.path().join("out");
    let o = run(&["green"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = green_rows(&out);
    assert_eq!(rows.len(), 50);
    for r in rows {
        let x: Vec<f64> = r[..4].iter().map(|s| s.parse().unwrap()).collect();
        let g: f64 = r[5].parse().unwrap();
        let n2: f64 = x.iter().map(|a| a * a).sum();
        assert!((g - n2.ln()).abs() <= 1e-6);
    }
}

#[test]
fn ball_green_at_the_origin() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "[green]\nsamples = 5");
    let out = d.path().join("out");
    let o = run(&["green"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = green_rows(&out);
    assert_eq!(rows.len(), 6);
    let g: f64 = rows[0][5].parse().unwrap();
    assert!((g - 0.25f64.ln()).abs() <= 1e-3, "{g}");
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert!(m["outputs"]["green_grid.csv"].is_string());
}

#[test]
fn ball_fan_has_no_frontier() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "fan = 8");
    let out = d.path().join("out");
    let o = run(&["frontier"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("frontier.json")).unwrap()).unwrap();
    let dirs = doc["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 8);
    for e in dirs {
        assert_eq!(e["s_o"].as_f64(), Some(1.0));
        let v: Vec<f64> = e["direction"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((v.iter().map(|a| a * a).sum::<f64>().sqrt() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn ball_verify_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["verify"], &repo_configs().join("ball.toml"), d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["all_pass"], true);
}

#[test]
fn corrupted_checkpoint_is_an_input_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "");
    let flow_out = d.path().join("flow");
    let o = run(&["flow"], &cfg, &flow_out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ck = flow_out.join("checkpoint_003_chart1.bin");
    let mut bytes = std::fs::read(&ck).unwrap();
    let k = bytes.len() - 9;
    bytes[k] ^= 0x21;
    std::fs::write(&ck, bytes).unwrap();
    let cfg = setup(d.path(), BALL, "[verify]\ncheckpoint = \"flow/checkpoint_003_chart1.bin\"");
    let o = run(&["verify"], &cfg, &d.path().join("verify"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn outputs_of_another_configuration_are_refused() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = setup(d.path(), BALL, "s = 0.0\n[green]\nsamples = 3");
    assert_eq!(run(&["green"], &cfg, &out).status.code(), Some(0));
    let cfg = setup(d.path(), BALL, "s = 0.0\n[green]\nsamples = 4");
    let o = run(&["verify"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("another configuration"), "{}", stderr(&o));
}

#[test]
fn manifest_hash_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = setup(d.path(), BALL, "[green]\nsamples = 20");
    let a = run(&["green"], &cfg, &d.path().join("a"));
    let b = run(&["green", "--threads", "2"], &cfg, &d.path().join("b"));
    assert_eq!(a.status.code(), Some(0));
    let (ha, hb) = (String::from_utf8_lossy(&a.stdout), String::from_utf8_lossy(&b.stdout));
    assert_eq!(ha.trim().len(), 64);
    assert_eq!(ha, hb);
}
