//! End-to-end checks of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sqdi"))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn write_sample_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "n_streams": 2,
        "auto_rho": true,
        "beta_matrix": [[0.05, 0.025], [0.025, 0.05]],
        "k_check": 2.0,
        "r": 1.0,
        "streams": [
            {
                "model": {"kind": "ar_p", "theta_star": [0.0]},
                "grid": {"points": [[0.5]]}
            },
            {
                "model": {"kind": "iid_gaussian", "mean": 0.0, "std": 1.0},
                "grid": {"linspace": {"lo": [0.5], "hi": [1.0], "count": [3]}}
            }
        ]
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn thresholds_prints_matrix_and_bounds() {
    let dir = tempdir("thresholds");
    let config = write_sample_config(&dir);
    let csv = dir.join("bounds.csv");
    let out = bin()
        .args(["thresholds", "--config"])
        .arg(&config)
        .arg("--csv")
        .arg(&csv)
        .args(["--kl-samples", "2000"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("A:"), "{text}");
    assert!(text.contains("pfa bounds"));
    assert!(text.contains("delay bounds"));
    let bounds = std::fs::read_to_string(&csv).unwrap();
    assert!(bounds.starts_with("i,theta_index,iota_1,iota_2,b_r,B_r,kl_source"));
}

#[test]
fn simulate_writes_records_and_trace() {
    let dir = tempdir("simulate");
    let config = write_sample_config(&dir);
    let records = dir.join("records.csv");
    let trace = dir.join("trace.csv");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--nu", "0", "--affected", "1", "--theta", "0.5"])
        .args(["-M", "40", "--horizon", "400", "--seed", "3", "--json"])
        .arg("--records")
        .arg(&records)
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("summary is JSON");
    assert_eq!(summary["trials"], 40);
    assert!(summary["delay"]["value"].as_f64().unwrap() > 0.0);
    let recs = std::fs::read_to_string(&records).unwrap();
    assert!(recs.starts_with("trial,stopped,T,d,nu"));
    assert_eq!(recs.lines().count(), 41);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("n,stream,log_L,log_Lhat,log_U_1,log_U_2"));
}

#[test]
fn characterize_emits_table_row() {
    let out = bin()
        .args([
            "characterize",
            "--epsilon",
            "0.3",
            "--k-check",
            "2",
            "--q",
            "1.2",
            "--p-star-offset",
            "100",
            "-M",
            "300",
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,k_check,q,pmi_1,pmi_1_se,pmi_2,pmi_2_se,pmi_3,pmi_3_se,pmi_4,pmi_4_se,pfa,pfa_se,delay,delay_se,theory"
    );
    let row = lines.next().unwrap();
    let delay: f64 = row.split(',').nth(13).unwrap().parse().unwrap();
    assert!(delay > 1.0 && delay < 4.0, "delay {delay}");
}

#[test]
fn kl_reports_estimate() {
    let dir = tempdir("kl");
    let config = write_sample_config(&dir);
    let out = bin()
        .args(["kl", "--config"])
        .arg(&config)
        .args(["--stream", "1", "--theta", "0.5", "-K", "20000", "--regime", "post"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("J_bar ="), "{text}");
}

#[test]
fn detect_runs_on_bundled_dataset() {
    let dir = tempdir("detect");
    let out = bin()
        .args(["detect", "--csv"])
        .arg(data_dir().join("italy_synthetic.csv"))
        .arg("--capacities")
        .arg(data_dir().join("italy_capacities.json"))
        .args(["--reference-date", "2020-03-08"])
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Lombardy"), "{text}");
    assert!(dir.join("decision.json").exists());
    assert!(dir.join("trace.csv").exists());
    assert!(dir.join("report.svg").exists());
    let decision: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("decision.json")).unwrap())
            .unwrap();
    assert_eq!(decision["stopped"], true);
    assert_eq!(decision["region"], "Lombardy");
}

#[test]
fn detect_missing_capacity_exits_2() {
    let dir = tempdir("detect-bad");
    let caps = dir.join("caps.json");
    std::fs::write(&caps, "{\"nowhere\": 100}").unwrap();
    let out = bin()
        .args(["detect", "--csv"])
        .arg(data_dir().join("italy_synthetic.csv"))
        .arg("--capacities")
        .arg(&caps)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempdir("bad-config");
    let path = dir.join("config.json");
    std::fs::write(&path, "{\"n_streams\": 1}").unwrap();
    let out = bin()
        .args(["thresholds", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sqdi-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
