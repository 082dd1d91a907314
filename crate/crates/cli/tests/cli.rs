use std::path::PathBuf;
use std::process::{Command, Output};

use radar_est::bounds::stochastic_crlb;
use radar_est::config::load_config;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radar-est"))
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn oracle() -> String {
    root().join("crates/core/tests/data/oracle.json").display().to_string()
}

fn desk() -> String {
    root().join("configs/desk.json").display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn temp_config(name: &str, text: &str) -> String {
    let dir = std::env::temp_dir().join(format!("radar-est-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn help_lists_verbs_and_flags() {
    let o = run(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for word in [
        "validate",
        "crlb",
        "emcb",
        "estimate",
        "sweep",
        "asymptote",
        "ortho-check",
        "--config",
        "--out",
        "--format",
        "--seed",
        "--threads",
        "--snr-db",
        "--trials",
        "--model",
    ] {
        assert!(text.contains(word), "help is missing {word}");
    }
}

#[test]
fn validate_echoes_dimensions() {
    let o = run(&["validate", "--config", &desk()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["m_t"], 2);
    assert_eq!(v["m_r"], 4);
    assert_eq!(v["l_r"], 8);
    assert!(v["n"].as_u64().unwrap() > 0);
}

#[test]
fn shipped_configs_validate() {
    for e in std::fs::read_dir(root().join("configs")).unwrap() {
        let p = e.unwrap().path();
        let o = run(&["validate", "--config", p.to_str().unwrap(), "--format", "csv"]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["crlb", "--config", &oracle(), "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error code=1 kind=usage"));
}

#[test]
fn missing_config_flag_and_file() {
    assert_eq!(run(&["crlb"]).status.code(), Some(1));
    let o = run(&["crlb", "--config", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kind=io"));
}

#[test]
fn bad_config_content_exits_3() {
    let p = temp_config("bad.json", r#"{"label": "x", "no_such_key": 1}"#);
    let o = run(&["validate", "--config", &p]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kind=config"));
}

#[test]
fn coincident_targets_exit_2() {
    let p = temp_config(
        "coincident.json",
        r#"{
        "label": "coincident",
        "ring": {"m_t": 2, "m_r": 2, "radius": 300, "rx_elements": 2},
        "targets": [{"position": [10, 10]}, {"position": [10, 10]}],
        "sample_interval_s": 0.5e-6,
        "samples": 16,
        "wave_speed": 3e8,
        "waveform": {"pulse_count": 1, "pri_s": 4e-6, "bandwidth_hz": 2e6, "pulse_duration_s": 3e-6, "tx_offsets_s": [0, 0]},
        "noise_power": 1e-15
    }"#,
    );
    let o = run(&["crlb", "--config", &p, "--model", "stochastic"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(
        err.lines().last().unwrap().starts_with("error code=2 kind=numerical"),
        "{err}"
    );
}

#[test]
fn crlb_matches_library_bytes() {
    let o = run(&["crlb", "--config", &oracle(), "--model", "stochastic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = load_config(oracle().as_ref()).unwrap();
    let s = &cfg.scenario;
    let b = stochastic_crlb(s, &cfg.waveforms, &cfg.reflectivity, s.noise_power, &cfg.layout).unwrap();
    let mut v = b.to_json_value(&cfg.layout);
    v.as_object_mut()
        .unwrap()
        .insert("noise_power".into(), serde_json::json!(s.noise_power));
    let expected = serde_json::to_string_pretty(&v).unwrap() + "\n";
    assert_eq!(stdout(&o), expected);
    assert!(b.per_param_variance.iter().all(|d| *d > 0.0));
}

#[test]
fn crlb_csv_rows_per_snr() {
    let o = run(&["crlb", "--config", &oracle(), "--snr-db=-5,10", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "snr_db,noise_power,param,variance");
    assert_eq!(lines.len(), 1 + 2 * 4);
    assert!(lines[1].starts_with("-5,"));
}

#[test]
fn ortho_check_passes_on_desk() {
    let o = run(&["ortho-check", "--config", &desk()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["max_cross_correlation"].as_f64().unwrap() < 1e-3);
}

#[test]
fn estimate_is_deterministic_and_writes_out_file() {
    let args = [
        "estimate",
        "--config",
        &oracle(),
        "--seed",
        "7",
        "--threads",
        "1",
        "--snr-db",
        "20",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let out = std::env::temp_dir().join(format!("radar-est-cli-est-{}.json", std::process::id()));
    let mut with_out = args.to_vec();
    let out_s = out.display().to_string();
    with_out.extend(["--out", &out_s]);
    let c = run(&with_out);
    assert!(c.status.success());
    assert!(c.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), a.stdout);
    let _ = std::fs::remove_file(out);
}

#[test]
fn thread_count_does_not_change_bounds() {
    let one = run(&["emcb", "--config", &oracle(), "--threads", "1", "--trials", "40"]);
    let two = run(&["emcb", "--config", &oracle(), "--threads", "2", "--trials", "40"]);
    assert!(one.status.success(), "{}", stderr(&one));
    let a: serde_json::Value = serde_json::from_str(&stdout(&one)).unwrap();
    let b: serde_json::Value = serde_json::from_str(&stdout(&two)).unwrap();
    let da = a["diagonal"].as_array().unwrap();
    let db = b["diagonal"].as_array().unwrap();
    for (x, y) in da.iter().zip(db) {
        let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
        assert!((x - y).abs() <= 1e-12 * x.abs());
    }
}

#[test]
fn sweep_trial_floor_and_csv_header() {
    let o = run(&["sweep", "--config", &oracle(), "--trials", "5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "sweep",
        "--config",
        &oracle(),
        "--trials",
        "10",
        "--snr-db",
        "15",
        "--model",
        "deterministic",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "config,snr_db,trials,param,mse,bound,sigma2_hat_mean,converged_fraction"
    );
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn asymptote_requires_its_section() {
    let o = run(&["asymptote", "--config", &oracle()]);
    assert_eq!(o.status.code(), Some(3));
}
