use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bcdlab::trace::{read_trace, sidecar_path, CSV_HEADER};
use bcdlab::{emit_trace, Trace};

fn bcdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcdlab"))
        .args(args)
        .output()
        .expect("spawn bcdlab")
}

fn run_to(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bcdlab(&args)
}

#[test]
fn empty_trace_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_trace(&Trace::default(), &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    assert!(read_trace(&path).unwrap().is_empty());
}

#[test]
fn run_writes_trace_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let out = run_to(
        &path,
        &["--problem", "D", "--blocking", "greedy-forest", "--select", "gs", "--update", "tree", "--iters", "20"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_trace(&path).unwrap();
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[0].iter, 0);
    assert!(rows.windows(2).all(|w| w[1].obj <= w[0].obj));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(side["config"]["selection"], "gs");
    assert_eq!(side["config"]["update"], "tree");
    assert_eq!(side["report"]["f_star_source"], "direct");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    let bad_problem = run_to(&path, &["--problem", "Q", "--blocking", "vb", "--select", "gs", "--update", "grad-lb"]);
    assert_eq!(bad_problem.status.code(), Some(1));
    // the tree update needs a forest blocking
    let incompatible = run_to(&path, &["--problem", "D", "--blocking", "vb", "--select", "gs", "--update", "tree"]);
    assert_eq!(incompatible.status.code(), Some(1));
    assert!(!path.exists());
    let help = bcdlab(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn unwritable_output_is_an_error() {
    let out = bcdlab(&[
        "run", "--problem", "E", "--blocking", "vb", "--select", "gs", "--update", "grad-lb", "--iters", "2", "--out",
        "/nonexistent-dir/trace.csv",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_runs_compatible_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let grid = dir.path().join("grid.json");
    fs::write(
        &grid,
        serde_json::json!({
            "out_dir": out_dir,
            "problems": ["E"],
            "blockings": ["vb", "greedy-forest"],
            "selects": ["gs"],
            "updates": ["grad-lb", "tree"],
            "block_sizes": [5],
            "iters": 10,
            "seeds": [0, 1]
        })
        .to_string(),
    )
    .unwrap();
    let out = bcdlab(&["sweep", "--grid", grid.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "E-greedy-forest-gs-grad-lb-s0.csv",
            "E-greedy-forest-gs-grad-lb-s1.csv",
            "E-greedy-forest-gs-tree-s0.csv",
            "E-greedy-forest-gs-tree-s1.csv",
            "E-vb-gs-grad-lb-b5-s0.csv",
            "E-vb-gs-grad-lb-b5-s1.csv",
        ]
    );
    // vb + tree is skipped, not fatal
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped E-vb-gs-tree-b5"));
}

#[test]
fn verify_passes_on_short_runs() {
    let out = bcdlab(&["verify", "--iters", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 20);
}
