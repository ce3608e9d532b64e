use std::sync::Arc;

use beltpick::annotator::SuctionCupSpec;
use beltpick::belt::BeltConfig;
use beltpick::detector::{detect, DetectorConfig, GroundTruthMaps, MapProvider, RecordedMaps};
use beltpick::eval::{ap_topk, capture_window, simulate_declutter, surface_tsdf_mae, tsdf_mae, DeclutterConfig, PipelineDetector};
use beltpick::recon::{gt_tsdf, DepthProvider, GridSpec, NoiseSpec, RecordedDepth, RenderedDepth};
use beltpick::scene::{default_belt_bounds, default_stereo_rig, generate_scene, AssetLibrary, RandomizationSpec, Scene};
use beltpick::store;
use proptest::prelude::*;

fn scene(count: usize, seed: u64) -> Scene {
    let spec = RandomizationSpec { object_count: [count, count], ..RandomizationSpec::default() };
    generate_scene(&spec, Arc::new(AssetLibrary::convex_default()), default_belt_bounds(), seed).unwrap()
}

fn rig() -> Vec<(beltpick::camera::CameraIntrinsics, beltpick::camera::RigidPose)> {
    default_stereo_rig().iter().map(|m| (m.intrinsics, m.pose().unwrap())).collect()
}

#[test]
fn stored_rasters_reproduce_in_memory_detection() {
    let s = scene(4, 17);
    let geom = s.geometry().unwrap();
    let cup = SuctionCupSpec::default();
    let grid = GridSpec::default();
    let config = DetectorConfig::default();
    let maps = GroundTruthMaps::new(&geom, cup.clone());
    let mut w = capture_window(&rig(), &BeltConfig::default(), 5, 0.0).unwrap();
    let d = tempfile::tempdir().unwrap();
    for (i, v) in w.views.iter_mut().enumerate() {
        let p = |k: &str| d.path().join(format!("{i}_{k}.stpr"));
        store::save_depth(&p("depth"), &RenderedDepth { geometry: &geom }.depth(v).unwrap()).unwrap();
        store::save_seal(&p("seal"), &maps.seal(v).unwrap()).unwrap();
        store::save_normals(&p("normal"), &maps.normals(v).unwrap()).unwrap();
        store::save_mask(&p("mask"), &maps.mask(v).unwrap()).unwrap();
        v.depth = Some(store::load_depth(&p("depth")).unwrap());
        v.seal = Some(store::load_seal(&p("seal")).unwrap());
        v.normals = Some(store::load_normals(&p("normal")).unwrap());
        v.mask = Some(store::load_mask(&p("mask")).unwrap());
    }
    let stored = detect(&w, &RecordedDepth, &RecordedMaps, &grid, &cup, &config, &[]).unwrap();
    let live = detect(&w, &RenderedDepth { geometry: &geom }, &maps, &grid, &cup, &config, &[]).unwrap();
    // f32 storage moves depths by well under a micrometre.
    assert!(tsdf_mae(&stored.volume, &live.volume).unwrap() < 1e-3);
    assert_eq!(stored.poses.len(), live.poses.len());
    for (a, b) in stored.poses.iter().zip(&live.poses) {
        assert_eq!(a.instance_id, b.instance_id);
        // Near-tied candidates may swap, so compare scores rather than pixels.
        assert!((a.overall - b.overall).abs() < 1e-6, "{a:?} vs {b:?}");
    }
    let gt = gt_tsdf(&geom, &grid).unwrap();
    assert!(surface_tsdf_mae(&stored.volume, &gt).unwrap() < 5.0);
    assert!(ap_topk(&stored.poses, &geom, &cup, config.k, config.snap_epsilon) > 0.5);

    let vp = d.path().join("v.stpv");
    store::save_volume(&vp, &stored.volume).unwrap();
    assert_eq!(store::load_volume(&vp, &grid).unwrap(), stored.volume);
}

#[test]
fn attempted_instances_never_return() {
    let s = scene(5, 3);
    let geom = s.geometry().unwrap();
    let cup = SuctionCupSpec::default();
    let maps = GroundTruthMaps::new(&geom, cup.clone());
    let w = capture_window(&rig(), &BeltConfig::default(), 5, 0.0).unwrap();
    let depth = RenderedDepth { geometry: &geom };
    let config = DetectorConfig { k: 10, ..DetectorConfig::default() };
    let all = detect(&w, &depth, &maps, &GridSpec::default(), &cup, &config, &[]).unwrap();
    assert!(all.poses.len() >= 2);
    let attempted = [all.poses[0].instance_id];
    let rest = detect(&w, &depth, &maps, &GridSpec::default(), &cup, &config, &attempted).unwrap();
    assert!(rest.poses.iter().all(|p| p.instance_id != attempted[0]));
    assert_eq!(rest.poses.len(), all.poses.len() - 1);
    assert_eq!(rest.poses[..], all.poses[1..]);
}

#[test]
fn declutter_log_accounting() {
    let s = scene(3, 11);
    let cup = SuctionCupSpec::default();
    let det = PipelineDetector::new(GridSpec::default(), cup.clone(), DetectorConfig::default(), NoiseSpec::gaussian(2.0, 1));
    let log = simulate_declutter(&s, &BeltConfig::default(), &rig(), &cup, 15.0, &det, &DeclutterConfig::default()).unwrap();
    assert!(log.successes <= log.attempts);
    assert_eq!(log.successes, log.removed.len());
    assert!(log.removed.iter().all(|id| s.instance(*id).is_some()));
    let mut ids = log.removed.clone();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), log.removed.len());
    assert!((0.0..=1.0).contains(&log.success_rate()) && (0.0..=1.0).contains(&log.declutter_rate()));
    assert_eq!(log.steps.iter().filter(|st| st.attempt.is_some()).count(), log.attempts);
    // Same inputs, same episode.
    let again = simulate_declutter(&s, &BeltConfig::default(), &rig(), &cup, 15.0, &det, &DeclutterConfig::default()).unwrap();
    assert_eq!(again.removed, log.removed);
    assert_eq!(again.attempts, log.attempts);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_manifests_round_trip(seed: u64) {
        let d = tempfile::tempdir().unwrap();
        let s = scene(3, seed);
        let entry = beltpick::manifest::SceneEntry {
            id: "x".into(),
            seed,
            instances: s.instances.clone(),
            cameras: rig().into_iter().map(|(intrinsics, pose)| beltpick::manifest::CameraCalibration { intrinsics, pose }).collect(),
        };
        let m = beltpick::manifest::RunManifest { seed, scenes: vec![entry], ..Default::default() };
        let p = d.path().join("m.json");
        m.save(&p).unwrap();
        let back = beltpick::manifest::RunManifest::load(&p).unwrap();
        prop_assert_eq!(&back, &m);
        let rebuilt = back.scene(&back.scenes[0], back.library().unwrap()).unwrap();
        prop_assert_eq!(rebuilt.instances, s.instances);
    }
}
