use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
clients = 3
epsilons = [1.0, 2.0, 3.0]
synthetic_per_class = 10
hidden = [8]
local_lr = 0.02
sweep_seeds = [0]
sweep = [
    { name = "high_noise", epsilons = [1.0, 1.0, 1.0] },
    { name = "low_noise", epsilons = [5.0, 5.0, 5.0] },
]

[dataset]
kind = "blobs"
samples = 600
classes = 3
dim = 8
spread = 0.3

[fed]
rounds = 5
inner_lr = 0.05
finetune_steps = 20
finetune_lr = 0.02

[datagen]
n_teachers = 4
top_k = 4
max_rounds = 3
noise_sigma = 200.0
"#;

fn pppfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pppfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_small(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

fn stdout_lines(o: &Output) -> Vec<String> {
    String::from_utf8_lossy(&o.stdout).lines().map(str::to_owned).collect()
}

#[test]
fn missing_config_fails_with_stage_tag() {
    let o = pppfl(&["train", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error [config] /nonexistent/cfg.toml"), "{err}");
}

#[test]
fn unknown_mode_and_bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let o = pppfl(&["train", "--config", &cfg, "--mode", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[config]"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("clients = 3", "clients = 4")).unwrap();
    let o = pppfl(&["train", "--config", &bad.display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budgets"));
}

#[test]
fn train_is_deterministic_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let mut csvs = Vec::new();
    let mut runs = Vec::new();
    for rep in ["a", "b"] {
        let out = dir.path().join(rep).display().to_string();
        let o = pppfl(&["train", "--config", &cfg, "--seed", "3", "--out", &out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let run = stdout_lines(&o).last().cloned().unwrap();
        for f in [
            "config.toml",
            "summary.json",
            "rounds.csv",
            "accuracy.svg",
            "models/global.bin",
        ] {
            assert!(Path::new(&run).join(f).exists(), "{f} missing");
        }
        csvs.push(std::fs::read(Path::new(&run).join("metrics.csv")).unwrap());
        runs.push(run);
    }
    assert_eq!(csvs[0], csvs[1]);

    let local = dir.path().join("local").display().to_string();
    let o = pppfl(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--mode",
        "local_secret",
        "--out",
        &local,
    ]);
    assert!(o.status.success());
    let baseline = stdout_lines(&o).last().cloned().unwrap();

    let report = dir.path().join("report");
    let o = pppfl(&[
        "report",
        "--run",
        &runs[0],
        "--baseline",
        &baseline,
        "--out",
        &report.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(text.starts_with("run,mode,seed,bmta"));
    assert!(report.join("incentive-pppfl-3/incentive.csv").exists());
}

#[test]
fn report_on_missing_run_fails() {
    let o = pppfl(&["report", "--run", "/nonexistent/run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn datagen_writes_audits_and_sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path());
    let out = dir.path().join("dg").display().to_string();
    let o = pppfl(&["datagen", "--config", &cfg, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_lines(&o);
    let gen_dir = Path::new(lines.last().unwrap());
    for i in 0..3 {
        for ext in ["ppsd", "csv", "report.json", "accountant.json"] {
            assert!(gen_dir.join(format!("client{i}.{ext}")).exists(), "client{i}.{ext}");
        }
    }
    assert!(lines.iter().any(|l| l.contains("epsilon spent")));

    let out = dir.path().join("sweep");
    let o = pppfl(&["sweep", "--config", &cfg, "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2);
    assert!(out.join("sweep.svg").exists());
}

#[test]
fn attack_demo_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let exp = SMALL
        .replace("[dataset]", "[experiment.dataset]")
        .replace("[fed]", "[experiment.fed]")
        .replace("[datagen]", "[experiment.datagen]");
    let (top, rest) = exp.split_at(exp.find("[experiment.dataset]").unwrap());
    let text = format!("victims = 5\ntrap_trials = 3\n\n[experiment]\n{top}\n{rest}");
    let path = dir.path().join("attack.toml");
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("att").display().to_string();
    let o = pppfl(&[
        "attack",
        "--config",
        &path.display().to_string(),
        "--out",
        &out,
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["batch_one"]["victims"], 5);
    assert_eq!(summary["pppfl"]["secret_match_rate"], 0.0);
    let run = Path::new(summary["dir"].as_str().unwrap());
    for f in [
        "batch_one.csv",
        "trap.csv",
        "pppfl_leakage.csv",
        "plain_fl_leakage.csv",
        "summary.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
}
