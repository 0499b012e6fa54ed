mod common;

use common::cli::{comparable, nbv, nbv_ok, pipeline, s, SMALL_CONFIG};
use nbv::GroundTruthScene;

#[test]
fn help_lists_subcommands_and_defaults() {
    let top = nbv_ok(&["--help"]);
    for sub in ["gen-scene", "gen-data", "train", "explore", "compare"] {
        assert!(top.contains(sub), "{sub} missing from help");
    }
    let explore = nbv_ok(&["explore", "--help"]);
    assert!(explore.contains("--steps") && explore.contains("--noise") && explore.contains("[default: 0]"));
    assert!(nbv_ok(&["train", "--help"]).contains("<out>.loss.csv"));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.nbvs");
    let code = |args: &[&str]| nbv(args).status.code();
    // Usage and parameter errors.
    assert_eq!(code(&["explore", "--utility", "psychic", "--scene", "x", "--out", "y"]), Some(2));
    assert_eq!(code(&["gen-scene", "--extent", "1,2", "--out", s(&scene)]), Some(2));
    assert_eq!(code(&["gen-scene", "--resolution", "-1", "--out", s(&scene)]), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{ "features": { "dims": [8, 8, 4] } }"#).unwrap();
    assert_eq!(code(&["gen-scene", "--config", s(&bad), "--out", s(&scene)]), Some(2));
    // I/O and format errors.
    assert_eq!(code(&["gen-data", "--scene", s(&dir.path().join("missing.nbvs")), "--out", "z"]), Some(3));
    std::fs::write(&scene, b"NBVSjunk").unwrap();
    assert_eq!(code(&["gen-data", "--scene", s(&scene), "--out", "z"]), Some(3));
    // Runtime failure: nowhere to start.
    let grid = *common::oracles::toy_scene(0).grid();
    let solid = GroundTruthScene::from_fn(grid, |v| (0..3).all(|a| v[a] > 0 && v[a] < grid.dims[a] - 1) && v[0] % 3 == 0).unwrap();
    solid.save(&scene).unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{ "planner": { "max_start_attempts": 50 } }"#).unwrap();
    let out = nbv(&["explore", "--config", s(&cfg), "--scene", s(&scene), "--utility", "random", "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn learned_utility_requires_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.nbvs");
    nbv_ok(&["gen-scene", "--seed", "1", "--extent", "24,24,12", "--buildings", "4", "--out", s(&scene)]);
    let out = nbv(&["explore", "--scene", s(&scene), "--utility", "learned", "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let files = pipeline(dir.path());
    let cfg: nbv::config::RunConfig = serde_json::from_str(SMALL_CONFIG).unwrap();
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    for f in &files {
        assert!(f.exists(), "{} missing", f.display());
    }

    let scene = GroundTruthScene::load(dir.path().join("scene.nbvs")).unwrap();
    assert_eq!(scene.grid().dims, [60, 60, 30]);

    // One loss row per epoch run.
    let model = s(&dir.path().join("model.nbvn")).to_string();
    let data = s(&dir.path().join("data.nbvd")).to_string();
    let c = s(&dir.path().join("cfg.json")).to_string();
    let loss = dir.path().join("loss2.csv");
    let stdout = nbv_ok(&["train", "--config", &c, "--data", &data, "--out", &model, "--loss-csv", s(&loss), "--patience", "0"]);
    let epochs: usize = stdout.split_whitespace().skip_while(|w| *w != "epochs").nth(1).unwrap().parse().unwrap();
    let rows = std::fs::read_to_string(&loss).unwrap();
    assert_eq!(rows.lines().count(), epochs + 1);
    assert!(epochs >= 1 && epochs <= cfg.net.max_epochs);

    // Learned trace has t_end moves plus the start row.
    assert_eq!(read("trace.csv").lines().count(), cfg.planner.t_end + 2);

    let trace = dir.path().join("zero.csv");
    nbv_ok(&["explore", "--config", &c, "--scene", s(&dir.path().join("scene.nbvs")), "--utility", "frontier", "--steps", "0", "--out", s(&trace)]);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 2);

    let outdir = dir.path().join("cmp");
    let stdout = nbv_ok(&["compare", "--config", &c, "--scene", s(&dir.path().join("scene.nbvs")), "--methods", "oracle,random", "--episodes", "3", "--steps", "3", "--outdir", s(&outdir)]);
    assert!(stdout.starts_with("shared starts 3 skipped 0"), "{stdout}");
    let summary = std::fs::read_to_string(outdir.join("summary.csv")).unwrap();
    let names: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["oracle", "random"]);
    assert!(summary.lines().nth(1).unwrap().split(',').nth(3) == Some("1"));
    assert_eq!(std::fs::read_to_string(outdir.join("curves.csv")).unwrap().lines().count(), 1 + 2 * 3 * 4);
}

#[test]
fn masking_only_touches_timing() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("summary.csv");
    std::fs::write(&p, "method,eff_mean,s_per_step\nrandom,3.5,0.25\n").unwrap();
    assert_eq!(comparable(&p), b"method,eff_mean,s_per_step\nrandom,3.5,-\n");
}
