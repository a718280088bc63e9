use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
scenario = "odc"
seed = 5
k = 10

[data]
source = "synthetic"
n = 700
dim = 8
clusters = 4
spread = 0.1

[workload]
n0 = 500
events = 200
event_batch = 10
search_batch = 10

[run]
method = "hnsw"
params = { m = 8, ef_construction = 32, ef_search = 20 }

[sweep.grid.kdtree]
max_leaves = [1, 4]

[sweep.grid.rpforest]
n_trees = [2]
search_k = [20, 200]
"#;

fn dynann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynann")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn recall_column(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = dynann(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_or_flag_exits_1() {
    assert_eq!(dynann(&["frobnicate"]).status.code(), Some(1));
    let out = dynann(&["run", "--bogus", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let out = dynann(&["run", "--config", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = dynann(&["report", "--in", s(&dir.path().join("nothing")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_twice_gives_identical_recall_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("r");
    let mut columns = Vec::new();
    for _ in 0..2 {
        let res = dynann(&["run", "--config", &config, "--seed", "1", "--out", s(&out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        columns.push(recall_column(&out));
    }
    assert_eq!(columns[0].len(), 2);
    assert_eq!(columns[0], columns[1]);
}

#[test]
fn gen_gt_and_sweep_from_script() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let work = dir.path().join("work");
    assert!(dynann(&["gen", "--config", &config, "--out", s(&work)]).status.success());
    let script = work.join("odc.dynw");
    assert!(script.exists());
    let res = dynann(&["gt", "--script", s(&script), "--k", "10", "--out", s(&work)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let gt = work.join("odc.gt.json");
    assert!(gt.exists());

    let from_script = dir.path().join("a");
    let res = dynann(&[
        "sweep", "--config", &config, "--script", s(&script), "--gt", s(&gt), "--out", s(&from_script),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let generated = dir.path().join("b");
    assert!(dynann(&["sweep", "--config", &config, "--out", s(&generated)]).status.success());
    let column = recall_column(&from_script);
    assert_eq!(column.len(), 5);
    assert_eq!(column, recall_column(&generated));
}

#[test]
fn report_writes_parseable_svg() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let records = dir.path().join("r");
    assert!(dynann(&["sweep", "--config", &config, "--out", s(&records)]).status.success());
    let fig = dir.path().join("fig");
    let res = dynann(&["report", "--in", s(&records), "--out", s(&fig)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let svg = std::fs::read_to_string(fig.join("odc.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("reference")));
    assert_eq!(
        std::fs::read_to_string(fig.join("results.csv")).unwrap(),
        std::fs::read_to_string(records.join("results.csv")).unwrap()
    );

    // Idempotent.
    assert!(dynann(&["report", "--in", s(&fig), "--out", s(&fig)]).status.success());
    assert_eq!(std::fs::read_to_string(fig.join("odc.svg")).unwrap(), svg);
}
