use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ais(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ais"))
        .args(args)
        .env("AIS_ARTIFACT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = r#"
models = ["ARIMA", "LSTM-ARIMA"]
modes = ["LongShort"]
seed = 3

[[indices]]
label = "SYN"
path = "syn.csv"

[walk]
train_len = 150
valid_len = 50
test_len = 50
step = 50

[arima]
p_max = 1
q_max = 1

[tuning]
n_trials = 2

[tuning.space]
neurons = [4]
layers = [1]
seq_len = [5]

[tuning.train]
max_epochs = 2
"#;

#[test]
fn synth_ingest_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("artifacts");
    let d = dir.path();
    let syn = d.join("syn.csv");
    let o = ais(&root, &["synth", "--days", "300", "--seed", "4", "--out", syn.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let canon = d.join("canon");
    let o = ais(&root, &["ingest", "--input", &format!("SYN={}", syn.display()), "--out", canon.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = fs::read_to_string(canon.join("descriptive_stats.csv")).unwrap();
    assert!(stats.starts_with("index,count,mean,std,min,25%,50%,75%,max\nSYN,300,"));

    let cfg = d.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let o = ais(&root, &["run", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let artifact = out.lines().find_map(|l| l.strip_prefix("artifact ")).expect("artifact line").to_string();
    let run_hash = out.lines().next().unwrap().split_whitespace().nth(1).unwrap().to_string();
    let run_dir = root.join(&run_hash);
    let table = fs::read_to_string(run_dir.join("reports/SYN/metrics_long_short.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["ARIMA", "LSTM-ARIMA", "Buy&Hold"]);
    assert_eq!(fs::read_to_string(run_dir.join("reports/SYN/plot_long_short.csv")).unwrap().lines().count(), 1 + 100);

    let o = ais(&root, &["run", "--config", cfg.to_str().unwrap()]);
    assert!(stdout(&o).contains(&format!("artifact {artifact}")));
    assert!(stdout(&o).contains("0 computed"));

    let rep = d.join("rep");
    let o = ais(&root, &["report", "--config", cfg.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(rep.join("SYN/metrics_long_short.csv")).unwrap(), table);

    let eq = run_dir.join("equity/SYN");
    let ens = d.join("ens");
    let o = ais(
        &root,
        &[
            "ensemble",
            "--input",
            &format!("A={}", eq.join("arima_long_short.csv").display()),
            "--input",
            &format!("B={}", eq.join("buy_and_hold.csv").display()),
            "--out",
            ens.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(ens.join("metrics.csv")).unwrap().lines().last().unwrap().starts_with("Ensemble,"));
}

#[test]
fn missing_close_column_is_reported_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "Date,Open,High,Low,Volume\n2020-01-02,1,1,1,5\n").unwrap();
    let o = ais(dir.path(), &["ingest", "--input", &format!("X={}", bad.display()), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("missing column `Close`"), "{err}");
    assert!(err.contains("Date,Open,High,Low,Volume"), "{err}");
}

#[test]
fn overrides_outside_sensitivity_sets_need_unsafe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), CONFIG).unwrap();
    let cfg = d.join("run.toml");
    let o = ais(d, &["run", "--config", cfg.to_str().unwrap(), "--batch-size", "8"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("batch override 8"), "{}", stderr(&o));
}

#[test]
fn report_of_unfinished_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ais(dir.path(), &["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("incomplete artifact"));
}
