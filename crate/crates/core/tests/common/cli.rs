use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A fast configuration: toy city, small lattice and net, short episodes.
pub const SMALL_CONFIG: &str = r#"{
  "seed": 5,
  "scene": { "seed": 3, "extent": [24.0, 24.0, 12.0], "building_count": 5 },
  "features": { "dims": [8, 8, 4], "levels": 3, "forward_offset": 2.0 },
  "net": { "n_blocks": 1, "units_per_block": 1, "filters_increment": 4, "hidden1": 16, "hidden2": 8,
           "input_dims": [8, 8, 4], "input_channels": 6, "max_epochs": 3, "batch_size": 32 },
  "planner": { "t_end": 6, "max_start_attempts": 200 },
  "data": { "episodes": 5 },
  "train": { "patience": 2 },
  "benchmark": { "episodes": 2, "methods": ["oracle", "learned", "frontier", "random"] }
}"#;

pub fn nbv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbv")).args(args).env("NBV_THREADS", "1").output().expect("spawn nbv")
}

/// Runs `nbv` and panics with its stderr unless it succeeds.
pub fn nbv_ok(args: &[&str]) -> String {
    let out = nbv(args);
    assert!(out.status.success(), "nbv {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

/// Every subcommand once, inside `dir`. Returns the primary output files.
pub fn pipeline(dir: &Path) -> Vec<PathBuf> {
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let c = s(&cfg);
    let scene = dir.join("scene.nbvs");
    let data = dir.join("data.nbvd");
    let model = dir.join("model.nbvn");
    let trace = dir.join("trace.csv");
    let snap = dir.join("final.nbvm");
    let bench = dir.join("bench");
    nbv_ok(&["gen-scene", "--config", c, "--out", s(&scene)]);
    nbv_ok(&["gen-data", "--config", c, "--scene", s(&scene), "--out", s(&data)]);
    nbv_ok(&["train", "--config", c, "--data", s(&data), "--out", s(&model)]);
    nbv_ok(&["explore", "--config", c, "--scene", s(&scene), "--utility", "learned", "--model", s(&model), "--noise", "0.1,0.2", "--out", s(&trace), "--snapshot", s(&snap)]);
    nbv_ok(&["compare", "--config", c, "--scene", s(&scene), "--model", s(&model), "--outdir", s(&bench)]);
    let mut files = vec![scene, data.clone(), PathBuf::from(format!("{}.stats.csv", s(&data))), model.clone(), PathBuf::from(format!("{}.loss.csv", s(&model))), trace, snap];
    for f in ["curves.csv", "summary.csv", "spearman.csv", "starts.csv"] {
        files.push(bench.join(f));
    }
    files
}

/// File bytes with the wall-clock `s_per_step` column blanked.
pub fn comparable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return bytes;
    }
    let text = String::from_utf8(bytes).expect("csv is utf8");
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let timed: Vec<usize> = header.split(',').enumerate().filter(|(_, h)| *h == "s_per_step").map(|(i, _)| i).collect();
    let mut out = String::from(header);
    out.push('\n');
    for l in lines {
        let cells: Vec<&str> = l.split(',').enumerate().map(|(i, c)| if timed.contains(&i) { "-" } else { c }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}
