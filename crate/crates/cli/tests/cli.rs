use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rangepoison"))
}

const CONFIG: &str = r#"
protocol = "ahead"
epsilon = 1.0
rho = 0.05
users = 5000
seeds = [1, 2]

[attack]
kind = "aot"

[defense]
enabled = true

[query]
count = 2
"#;

#[test]
fn run_writes_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "4", "--threads", "2"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(out.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 2);
    assert!(results.lines().all(|l| l.contains("\"seed\":4")));
    assert!(out.join("summary.csv").exists() && out.join("timings.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("aot"));
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("sweep");
    let o = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--rhos", "0.05,0.1", "--attacks", "mga,aot"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn detect_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG.replace("enabled = true", "enabled = false")).unwrap();
    let o = bin().args(["detect", "--alpha", "0.01", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("detection=") && !text.contains("detection=-"), "{text}");
}

#[test]
fn prism_check_prints_the_ratio() {
    let o = bin().args(["prism-check", "--epsilons", "1"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((row[1] - 1f64.exp().powi(2)).abs() < 1e-9);
    assert!((row[3] - 1f64.exp()).abs() < 1e-9);
}

#[test]
fn exit_codes_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "protocol = \"ahead\"\nepsilon = -1.0\n").unwrap();
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));

    let o = bin().args(["run", "--config", "/nonexistent/c.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));

    let csv = dir.path().join("missing.toml");
    std::fs::write(
        &csv,
        "protocol = \"ahead\"\nepsilon = 1.0\n[dataset]\nkind = \"csv\"\npath = \"/nonexistent.csv\"\ncolumns = [\"a\"]\n",
    )
    .unwrap();
    let o = bin().args(["run", "--config"]).arg(&csv).output().unwrap();
    assert_eq!(o.status.code(), Some(3));

    let o = bin().args(["sweep", "--config"]).arg(&cfg).args(["--attacks", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        rangepoison::harness::ExperimentConfig::load(&path).unwrap();
        n += 1;
    }
    assert!(n >= 2);
}
