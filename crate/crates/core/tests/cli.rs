use std::path::Path;
use std::process::{Command, Output};

use beltpick::manifest::RunManifest;
use beltpick::store;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beltpick")).arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_flag_is_a_user_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["gen", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(d.path(), &["nonsense"])), 1);
}

#[test]
fn help_exits_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
}

#[test]
fn selftest_passes_and_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = store::read_json(&d.path().join("reports/selftest.json")).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn gen_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    assert_eq!(code(&run(&a, &["gen", "--seed", "7", "--count", "2"])), 0);
    assert_eq!(code(&run(&b, &["gen", "--seed", "7", "--count", "2"])), 0);
    for id in ["scene_0000", "scene_0001"] {
        let rel = format!("scenes/{id}/manifest.json");
        assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap());
        let m = RunManifest::load(&a.join(&rel)).unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.scenes.len(), 1);
        assert!((3..=5).contains(&m.scenes[0].instances.len()));
    }
    let c = d.path().join("c");
    assert_eq!(code(&run(&c, &["gen", "--seed", "8"])), 0);
    assert_ne!(
        std::fs::read(a.join("scenes/scene_0000/manifest.json")).unwrap(),
        std::fs::read(c.join("scenes/scene_0000/manifest.json")).unwrap()
    );
}

#[test]
fn bad_inputs_exit_one() {
    let d = tempfile::tempdir().unwrap();
    // Nothing generated yet.
    assert_eq!(code(&run(d.path(), &["fuse"])), 1);
    // Config with a foreign manifest version.
    let cfg = d.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"version": "other/9"}"#).unwrap();
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "gen"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version"));
    // Invalid override.
    assert_eq!(code(&run(d.path(), &["--timesteps", "0", "gen"])), 1);
    // A corrupted raster is rejected, not repaired.
    assert_eq!(code(&run(d.path(), &["gen"])), 0);
    assert_eq!(code(&run(d.path(), &["render"])), 0);
    let p = d.path().join("renders/scene_0000/0_0_depth.stpr");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&p, bytes).unwrap();
    let o = run(d.path(), &["fuse"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn config_file_drives_gen() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "randomization": {"object_count": [2, 2]}, "detector": {"k": 2}}"#).unwrap();
    assert_eq!(code(&run(d.path(), &["--config", cfg.to_str().unwrap(), "gen"])), 0);
    let m = RunManifest::load(&d.path().join("scenes/scene_0000/manifest.json")).unwrap();
    assert_eq!(m.seed, 5);
    assert_eq!(m.detector.k, 2);
    assert_eq!(m.scenes[0].instances.len(), 2);
    // Flags override the file.
    assert_eq!(code(&run(d.path(), &["--config", cfg.to_str().unwrap(), "--seed", "6", "--k", "4", "gen"])), 0);
    let m = RunManifest::load(&d.path().join("scenes/scene_0000/manifest.json")).unwrap();
    assert_eq!((m.seed, m.detector.k), (6, 4));
}

#[test]
fn full_pipeline_writes_the_layout() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path();
    for args in [&["gen", "--seed", "2"][..], &["render"], &["annotate", "--per-object", "5"], &["fuse"], &["detect"], &["eval"]] {
        let o = run(out, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for t in 0..5 {
        for v in 0..2 {
            for kind in ["depth", "normal", "mask", "seal"] {
                assert!(out.join(format!("renders/scene_0000/{t}_{v}_{kind}.stpr")).is_file());
            }
        }
    }
    let ann = store::read_annotations(&out.join("annotations/scene_0000.csv")).unwrap();
    assert!(!ann.is_empty());
    assert!(out.join("volumes/scene_0000.stpv").is_file());
    assert!(out.join("volumes/scene_0000.obj").is_file());
    let dets = store::read_annotations(&out.join("reports/scene_0000_detections.csv")).unwrap();
    assert!(!dets.is_empty() && dets.len() <= 5);
    let report: serde_json::Value = store::read_json(&out.join("reports/eval.json")).unwrap();
    let m = &report["scenes"]["scene_0000"];
    assert!(m["surface_tsdf_mae"].as_f64().unwrap() <= 5.0);
    let ap = m["ap_topk"][0][1].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&ap));
    let acc = m["collision_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for cmd in ["render", "annotate", "fuse", "detect", "eval", "gen"] {
        assert!(out.join(format!("reports/{cmd}.json")).is_file(), "{cmd}");
    }
}
