use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

use sepba::mapgrid::GridMap;
use sepba::scan::{list_scan_files, Scan};
use sepba::trajectory::Trajectory;
use sepba_cli::config::RunConfig;

use crate::support::Criterion;

fn sepba(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_sepba")).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// simulate -> ba -> localize -> eval; returns the metrics bytes.
fn pipeline(root: &Path) -> (Vec<u8>, Vec<i32>) {
    let ds = root.join("ds");
    let ba = root.join("ba");
    let loc = root.join("loc");
    let ev = root.join("ev");
    let codes = vec![
        sepba(&["simulate", "--out", s(&ds), "--world-seed", "4", "--noise-seed", "8"]),
        sepba(&["ba", "--dataset", s(&ds), "--out", s(&ba)]),
        sepba(&[
            "localize",
            "--map",
            s(&ba.join("map.json")),
            "--scans",
            s(&ds.join("scans")),
            "--odometry",
            s(&ds.join("odometry.csv")),
            "--initial-from",
            s(&ds.join("initial.csv")),
            "--out",
            s(&loc),
        ]),
        sepba(&[
            "eval",
            "--estimate",
            s(&ba.join("trajectory.csv")),
            "--ground-truth",
            s(&ds.join("ground_truth.csv")),
            "--localized",
            s(&loc.join("trajectory.csv")),
            "--out",
            s(&ev),
        ]),
    ];
    (std::fs::read(ev.join("metrics.json")).unwrap_or_default(), codes)
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

/// Reads every artifact of a run and writes it back; all copies must match.
fn formats_round_trip(root: &Path, scratch: &Path) -> (usize, usize) {
    let (mut checked, mut bad) = (0, 0);
    let mut tally = |ok: bool| {
        checked += 1;
        if !ok {
            bad += 1;
        }
    };
    for csv in ["ds/ground_truth.csv", "ds/odometry.csv", "ds/initial.csv", "ba/trajectory.csv", "loc/trajectory.csv"] {
        let src = root.join(csv);
        let dst = scratch.join("t.csv");
        Trajectory::read(&src).unwrap().write(&dst).unwrap();
        tally(same_bytes(&src, &dst));
    }
    for stem in ["ds/world", "ba/map"] {
        let src = root.join(stem);
        let dst = scratch.join("m");
        GridMap::read(&src).unwrap().write(&dst).unwrap();
        tally(same_bytes(&src.with_extension("json"), &dst.with_extension("json")));
        tally(same_bytes(&src.with_extension("bin"), &dst.with_extension("bin")));
    }
    for f in list_scan_files(&root.join("ds/scans")).unwrap().iter().step_by(7) {
        let dst = scratch.join("s");
        Scan::read(f).unwrap().write(&dst).unwrap();
        tally(same_bytes(&f.with_extension("json"), &dst.with_extension("json")));
        tally(same_bytes(&f.with_extension("bin"), &dst.with_extension("bin")));
    }
    for cfg in ["ds/config.toml", "ba/config.toml"] {
        let src = root.join(cfg);
        let text = RunConfig::load(Some(&src)).unwrap().to_toml();
        tally(text.as_bytes() == std::fs::read(&src).unwrap().as_slice());
    }
    (checked, bad)
}

#[test]
fn ac9_pipeline_is_deterministic_and_formats_round_trip() {
    let c = Criterion::start(9, 600);
    let tmp = TempDir::new().unwrap();
    let (a, codes_a) = pipeline(&tmp.path().join("a"));
    let (b, codes_b) = pipeline(&tmp.path().join("b"));
    let scratch = tmp.path().join("scratch");
    std::fs::create_dir(&scratch).unwrap();
    let (checked, bad) = formats_round_trip(&tmp.path().join("a"), &scratch);
    let all_ok = codes_a.iter().chain(&codes_b).all(|&c| c == 0);
    let identical = !a.is_empty() && a == b;
    c.finish(
        all_ok && identical && bad == 0,
        &format!(
            "exit codes {codes_a:?} / {codes_b:?}; metric reports identical: {identical}; {checked} files round-tripped, {bad} differ"
        ),
    );
}
