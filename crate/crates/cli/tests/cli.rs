//! End-to-end checks of the `distsim` binary: exit codes, topology output,
//! CSV trees, and byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn distsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// A one-island topology small enough for fast test runs.
const SMALL_TOPO: &str = "\
node core0 kind=core-router
node core1 kind=core-router
node seeder kind=seeder
node router0 kind=access-router
node sw0 kind=lan-switch
node sw1 kind=lan-switch
node n0 kind=client
node n1 kind=client
node n2 kind=client
node n3 kind=client
link core0 core1 bw=10mbps delay=20ms queue=50
link core1 seeder bw=2mbps delay=10ms queue=50
link core0 router0 bw=2mbps delay=10ms queue=50
link router0 sw0 bw=10mbps delay=0ms queue=50
link router0 sw1 bw=10mbps delay=0ms queue=50
link sw0 n0 bw=10mbps delay=0ms queue=50
link sw0 n1 bw=10mbps delay=0ms queue=50
link sw1 n2 bw=10mbps delay=0ms queue=50
link sw1 n3 bw=10mbps delay=0ms queue=50
lan sw0 members=n0,n1
lan sw1 members=n2,n3
island router0 lans=sw0,sw1
";

fn write_small_topo(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    fs::write(&path, SMALL_TOPO).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn print_builtin_emits_a_parseable_topology() {
    let out = distsim(&["topology", "print-builtin"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let topo = distsim_core::topology::parse_topology(&text).unwrap();
    assert_eq!(topo, distsim_core::topology::build_paper_topology());
}

#[test]
fn simulate_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    let out_dir = dir.path().join("results");
    let out = distsim(&[
        "simulate",
        "--model", "hybrid",
        "--topology", &topo,
        "--file-size", "65536",
        "--piece-size", "16384",
        "--runs", "2",
        "--seed", "9",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("run-0/links.csv").exists());
    assert!(out_dir.join("run-1/completions.csv").exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mean completion"));
}

#[test]
fn identical_invocations_produce_byte_identical_trees() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    let run = |out_dir: &Path| {
        let out = distsim(&[
            "simulate",
            "--model", "p2p",
            "--topology", &topo,
            "--file-size", "65536",
            "--piece-size", "16384",
            "--runs", "2",
            "--seed", "4",
            "--out", out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        distsim_core::experiment::hash_tree(out_dir).unwrap()
    };
    let h1 = run(&dir.path().join("a"));
    let h2 = run(&dir.path().join("b"));
    assert_eq!(h1, h2);
}

#[test]
fn config_errors_exit_with_code_one() {
    // A loss list is a sweep; simulate takes scalars only.
    let out = distsim(&["simulate", "--model", "www", "--loss", "0,1,2"]);
    assert_eq!(out.status.code(), Some(1));

    let out = distsim(&["simulate", "--model", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));

    let out = distsim(&["simulate", "--model", "www", "--runs", "0"]);
    assert_eq!(out.status.code(), Some(1));

    // Non-ascending sweep list.
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    let out = distsim(&["sweep", "--model", "hybrid", "--topology", &topo, "--loss", "2,1"]);
    assert_eq!(out.status.code(), Some(1));

    // Two swept axes at once.
    let out = distsim(&["sweep", "--model", "hybrid", "--topology", &topo, "--loss", "0,1", "--cbr", "0,1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    // Using a regular file as the output directory breaks report writing
    // after validation has already passed.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let out = distsim(&[
        "simulate",
        "--model", "www",
        "--topology", &topo,
        "--file-size", "16384",
        "--piece-size", "16384",
        "--runs", "1",
        "--out", blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_emits_one_point_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = distsim(&[
        "sweep",
        "--model", "hybrid",
        "--topology", &topo,
        "--file-size", "32768",
        "--piece-size", "16384",
        "--runs", "1",
        "--loss", "0,2",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn compare_emits_per_model_trees() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_small_topo(dir.path());
    let out_dir = dir.path().join("cmp");
    let out = distsim(&[
        "compare",
        "--topology", &topo,
        "--file-size", "32768",
        "--piece-size", "16384",
        "--runs", "1",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("compare.csv").exists());
    for model in ["www", "p2p", "hybrid"] {
        assert!(out_dir.join(model).join("summary.csv").exists());
    }
}

#[test]
fn pieces_prints_a_digest_table() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("demo.bin");
    fs::write(&file, vec![7u8; 40_000]).unwrap();
    let out = distsim(&[
        "pieces",
        "--file", file.to_str().unwrap(),
        "--piece-size", "16384",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("3 pieces"));
    assert_eq!(text.lines().count(), 2 + 3);
}
