use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bench(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bench"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("BENCH_THREADS", t),
        None => cmd.env_remove("BENCH_THREADS"),
    };
    cmd.output().unwrap()
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "scenarios", name].iter().collect();
    p.display().to_string()
}

fn digest(stdout: &[u8]) -> String {
    let text = String::from_utf8_lossy(stdout);
    text.lines()
        .find_map(|l| l.strip_prefix("dataset digest "))
        .unwrap()
        .to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn help_exits_zero() {
    let out = bench(&["--help"], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("run"));
    let out = bench(&["run", "--help"], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("--dump-trajectories"));
}

#[test]
fn example1_artifacts_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ex1");
    let out = bench(
        &[
            "run",
            "--config",
            &scenario("example1.json"),
            "--paths",
            "6",
            "--methods",
            "kf,cmhe,memhe",
            "--out",
            out_dir.to_str().unwrap(),
            "--dump-trajectories",
        ],
        Some("2"),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mse = csv_rows(&out_dir.join("mse.csv"));
    assert_eq!(mse.len(), 31);
    let header = csv::Reader::from_path(out_dir.join("mse.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["t", "e_kf", "e_cmhe", "e_memhe"]);
    assert_eq!(csv_rows(&out_dir.join("costs.csv")).len(), 31);
    assert_eq!(csv_rows(&out_dir.join("trajectories.csv")).len(), 6 * 31);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["paths"], 6);
    assert_eq!(summary["horizon"], 4);
    assert_eq!(summary["prior_mismatch"], false);
    assert!(summary.get("cmhe_vs_cfie").is_none());
}

#[test]
fn output_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    let mut files = Vec::new();
    for (i, threads) in ["1", "4"].into_iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = bench(
            &[
                "run",
                "--config",
                &scenario("example2.json"),
                "--paths",
                "8",
                "--out",
                out_dir.to_str().unwrap(),
            ],
            Some(threads),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        digests.push(digest(&out.stdout));
        files.push((
            std::fs::read(out_dir.join("mse.csv")).unwrap(),
            std::fs::read(out_dir.join("costs.csv")).unwrap(),
        ));
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(files[0], files[1]);
}

#[test]
fn failures_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = bench(&["run", "--config", missing.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("bench: "));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"model\": 3}").unwrap();
    assert!(!bench(&["run", "--config", broken.to_str().unwrap()], None)
        .status
        .success());

    let out = bench(
        &["run", "--config", &scenario("example1.json"), "--methods", "kf,ukf"],
        None,
    );
    assert!(!out.status.success());

    let out = bench(
        &[
            "run",
            "--config",
            &scenario("example3.json"),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        Some("zero"),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BENCH_THREADS"));
}
