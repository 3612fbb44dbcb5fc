use std::path::Path;
use std::process::{Command, Output};

fn cardiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cardiff")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cardiff(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(args: &[&str], code: i32, class: &str) -> String {
    let out = cardiff(args);
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {err}");
    let line = err.lines().last().unwrap_or_default();
    assert!(line.starts_with(&format!("error[{class}]: ")), "{line}");
    err
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const PF_SMALL: &str = "[dataset]\nn_train = 80\nn_val = 20\nn_test = 20\n\
[base.train]\nepochs = 3\n[pinn.train]\nepochs = 3\n[eps.train]\nepochs = 3\n";

#[test]
fn printed_configs_reload_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        vec!["gen-data", "pf"],
        vec!["gen-data", "tabular"],
        vec!["refine"],
        vec!["attack"],
        vec!["toy"],
        vec!["bench", "--track", "toy"],
    ] {
        let mut args = cmd.clone();
        args.push("--print-config");
        let first = ok(&args);
        let path = dir.path().join("c.toml");
        std::fs::write(&path, &first).unwrap();
        let p = s(&path);
        let mut again = cmd.clone();
        again.extend(["--config", &p, "--print-config"]);
        assert_eq!(ok(&again), first, "{cmd:?}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let out = ok(&["toy", "--print-config", "--seed", "42"]);
    assert!(out.lines().any(|l| l == "seed = 42"), "{out}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dataset]\nn_trian = 5\n").unwrap();
    let err = fails_with(&["gen-data", "pf", "--config", &s(&bad), "--out", &s(&dir.path().join("o"))], 2, "config");
    assert!(err.contains("dataset.n_trian"));
    fails_with(&["gen-data", "pf"], 2, "config");
    fails_with(&["toy", "--config", &s(&dir.path().join("missing.toml")), "--out", "x"], 2, "config");
}

#[test]
fn data_errors_exit_3_and_mark_output_incomplete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    fails_with(
        &["refine", "--model", "nope.json", "--eps", "nope.json", "--data", "nowhere", "--out", &s(&out)],
        3,
        "data",
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);

    let bad_case = dir.path().join("case.txt");
    std::fs::write(&bad_case, "case broken\n[bus]\n1 slack 0 0\n").unwrap();
    fails_with(&["solve-pf", "--case", &s(&bad_case)], 3, "data");
}

#[test]
fn unsolvable_case_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("two.txt");
    std::fs::write(
        &case,
        "case two_bus\n[bus]\n1 slack 0 0 0 0 1 0 0\n2 pq 10000 0 0 0 1 0 0\n[branch]\n1 2 0 0.1 0 1 0\n[gen]\n1 0 0 1\n",
    )
    .unwrap();
    fails_with(&["solve-pf", "--case", &s(&case)], 5, "no-convergence");
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pf.toml");
    std::fs::write(&cfg, PF_SMALL).unwrap();
    let data = dir.path().join("d");
    ok(&["gen-data", "pf", "--config", &s(&cfg), "--out", &s(&data)]);
    let wild = dir.path().join("wild.toml");
    std::fs::write(&wild, "[base.train]\nepochs = 3\nlearning_rate = 1e300\n").unwrap();
    fails_with(
        &["train", "base", "--config", &s(&wild), "--data", &s(&data), "--out", &s(&dir.path().join("m.json"))],
        4,
        "numeric",
    );
}

#[test]
fn zero_step_refinement_reproduces_base_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pf.toml");
    std::fs::write(&cfg, format!("{PF_SMALL}[refine]\nsteps = 0\n")).unwrap();
    let (c, d) = (s(&cfg), s(&dir.path().join("d")));
    ok(&["gen-data", "pf", "--config", &c, "--out", &d]);
    let base = s(&dir.path().join("base.json"));
    let eps = s(&dir.path().join("eps.json"));
    ok(&["train", "base", "--config", &c, "--data", &d, "--out", &base]);
    ok(&["train", "eps", "--config", &c, "--data", &d, "--out", &eps]);
    let out = dir.path().join("r");
    ok(&["refine", "--model", &base, "--eps", &eps, "--data", &d, "--config", &c, "--out", &s(&out)]);
    let table = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    let row = |name: &str| -> Vec<String> {
        let line = table.lines().find(|l| l.starts_with(&format!("{name}\t"))).unwrap();
        line.split('\t').skip(1).map(String::from).collect()
    };
    assert_eq!(row("base"), row("cardiff"));
    assert!(Path::new(&format!("{base}.manifest.json")).is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert!(manifest["outputs"]["metrics.tsv"].is_string());
    assert!(manifest["inputs"]["data/test.csv"].is_string());
}

#[test]
fn solve_pf_reports_nominal_solution() {
    let out = ok(&["solve-pf", "--case", "ieee30"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert!(row[1].parse::<usize>().unwrap() <= 10);
    assert!(row[2].parse::<f64>().unwrap() < 1e-8);
}

#[test]
fn train_rejects_wrong_dataset_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[data]\nn_train = 200\nn_val = 50\nn_test = 50\n").unwrap();
    let data = s(&dir.path().join("tab"));
    ok(&["gen-data", "tabular", "--config", &s(&cfg), "--out", &data]);
    fails_with(&["train", "base", "--data", &data, "--out", &s(&dir.path().join("m.json"))], 3, "data");
}
