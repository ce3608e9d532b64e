//! Command-line front end.
//!
//! Output layout under `--out`:
//! `scenes/<id>/manifest.json`, `renders/<id>/<t>_<view>_{depth,normal,mask,seal}.stpr`,
//! `annotations/<id>.csv`, `volumes/<id>.{stpv,obj}`, `reports/`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::annotator::{annotate_scene, compose_score, render_seal_map, SuctionLabel};
use crate::belt::CaptureWindow;
use crate::detector::{detect, score_volume, GroundTruthMaps, MapProvider, RecordedMaps};
use crate::error::{Error, Result};
use crate::eval::{
    ap_from_scores, ap_topk, capture_window, collision_accuracy, gt_score_volume, seal_mae, simulate_declutter, surface_tsdf_mae,
    tsdf_mae, DeclutterConfig, MetricsReport, PipelineDetector,
};
use crate::geom::Vec3;
use crate::manifest::{CameraCalibration, RunManifest, SceneEntry};
use crate::raster::Raster;
use crate::recon::{fuse, gt_tsdf, make_noisy_provider, marching_cubes, GridSpec, RecordedDepth, TsdfVolume};
use crate::rng::seed_from;
use crate::scene::{default_belt_bounds, generate_scene, jitter_rig, SceneGeometry};
use crate::store::{self, AnnotationRecord};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "BELTPICK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "beltpick", version, about = "Suction-pose detection on a simulated moving belt")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run manifest or partial config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Window length N.
    #[arg(long, global = true)]
    pub timesteps: Option<usize>,
    /// Gaussian depth noise, mm.
    #[arg(long = "noise-sigma", global = true)]
    pub noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate randomized scenes.
    Gen {
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Render depth, normal, mask and seal rasters for each window view.
    Render(SceneArgs),
    /// Sample and score suction poses on object surfaces.
    Annotate {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long = "per-object", default_value_t = 50)]
        per_object: usize,
    },
    /// Fuse rendered depth into a TSDF volume and mesh.
    Fuse(SceneArgs),
    /// Detect suction poses from rendered rasters.
    Detect(SceneArgs),
    /// Compare fused volumes and detections against ground truth.
    Eval(SceneArgs),
    /// Run closed-loop declutter episodes.
    Declutter(SceneArgs),
    /// Run built-in sanity checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Scene id; all generated scenes when omitted.
    #[arg(long)]
    pub scene: Option<String>,
}

/// Parses `argv`, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for problems with the user's input, 2 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidCamera(_)
        | Error::InvalidPose(_)
        | Error::InvalidBelt(_)
        | Error::InvalidMesh(_)
        | Error::InvalidAsset(_)
        | Error::UnknownAsset(_)
        | Error::InvalidRandomization(_)
        | Error::PlacementFailure { .. }
        | Error::OutOfRange(_)
        | Error::InvalidGrid(_)
        | Error::SpecMismatch
        | Error::RasterMismatch(..)
        | Error::DimensionMismatch { .. }
        | Error::InvalidConfig(_)
        | Error::MissingRaster(_)
        | Error::BadMagic { .. }
        | Error::TruncatedFile { .. }
        | Error::TrailingBytes(_)
        | Error::SchemaVersionMismatch { .. }
        | Error::InvariantViolation(_)
        | Error::MissingFile(_)
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::Csv(_)
        | Error::NonWatertight(_) => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a count")))?;
    if n == 0 {
        return Err(Error::InvalidConfig(format!("{THREADS_ENV} must be >= 1")));
    }
    // A pool may already exist when called twice in one process; the first setting wins.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Returns `Ok(false)` when the command ran but reported failures (selftest).
pub fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen { count } => cmd_gen(g, *count),
        Command::Render(s) => for_scenes(g, s, "render", cmd_render),
        Command::Annotate { scene, per_object } => for_scenes(g, scene, "annotate", |g, m, e| cmd_annotate(g, m, e, *per_object)),
        Command::Fuse(s) => for_scenes(g, s, "fuse", cmd_fuse),
        Command::Detect(s) => for_scenes(g, s, "detect", cmd_detect),
        Command::Eval(s) => for_scenes(g, s, "eval", cmd_eval),
        Command::Declutter(s) => for_scenes(g, s, "declutter", cmd_declutter),
        Command::Selftest => cmd_selftest(g),
    }
}

/// Applies global overrides to a manifest.
fn apply_overrides(g: &GlobalArgs, m: &mut RunManifest) -> Result<()> {
    if let Some(s) = g.seed {
        m.seed = s;
    }
    if let Some(n) = g.timesteps {
        m.timesteps = n;
    }
    if let Some(s) = g.noise_sigma {
        m.noise.sigma = s;
    }
    if let Some(k) = g.k {
        m.detector.k = k;
    }
    m.validate()
}

fn base_manifest(g: &GlobalArgs) -> Result<RunManifest> {
    let mut m = match &g.config {
        Some(p) => RunManifest::load(p)?,
        None => RunManifest::default(),
    };
    apply_overrides(g, &mut m)?;
    Ok(m)
}

fn scene_manifest_path(out: &Path, id: &str) -> PathBuf {
    out.join("scenes").join(id).join("manifest.json")
}

fn report_path(out: &Path, name: &str) -> PathBuf {
    out.join("reports").join(format!("{name}.json"))
}

fn raster_path(out: &Path, id: &str, t: usize, view: usize, kind: &str) -> PathBuf {
    out.join("renders").join(id).join(format!("{t}_{view}_{kind}.stpr"))
}

fn scene_ids(g: &GlobalArgs, s: &SceneArgs) -> Result<Vec<String>> {
    if let Some(id) = &s.scene {
        return Ok(vec![id.clone()]);
    }
    let dir = g.out.join("scenes");
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(dir)),
        Err(e) => return Err(e.into()),
    };
    let mut ids = Vec::new();
    for e in entries {
        let e = e?;
        if e.path().join("manifest.json").is_file() {
            ids.push(e.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidConfig(format!("no scenes under {}", dir.display())));
    }
    Ok(ids)
}

/// Loads each scene manifest (with global overrides) and runs `f`; writes a summary report.
fn for_scenes(
    g: &GlobalArgs,
    s: &SceneArgs,
    name: &str,
    f: impl Fn(&GlobalArgs, &RunManifest, &SceneEntry) -> Result<serde_json::Value>,
) -> Result<bool> {
    let mut results = serde_json::Map::new();
    for id in scene_ids(g, s)? {
        let mut m = RunManifest::load(&scene_manifest_path(&g.out, &id))?;
        apply_overrides(g, &mut m)?;
        let entry = m.scene_entry(&id)?.clone();
        results.insert(id, f(g, &m, &entry)?);
    }
    store::write_json(&report_path(&g.out, name), &json!({ "command": name, "scenes": results }))?;
    Ok(true)
}

fn cmd_gen(g: &GlobalArgs, count: usize) -> Result<bool> {
    let m = base_manifest(g)?;
    let library = m.library()?;
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let seed = seed_from(&[m.seed, i as u64]);
        let id = format!("scene_{i:04}");
        let scene = generate_scene(&m.randomization, library.clone(), default_belt_bounds(), seed)?;
        let cameras = jitter_rig(&m.cameras, &m.randomization, seed)?
            .into_iter()
            .map(|(intrinsics, pose)| CameraCalibration { intrinsics, pose })
            .collect();
        let entry = SceneEntry { id: id.clone(), seed, instances: scene.instances, cameras };
        let out = RunManifest { scenes: vec![entry], ..m.clone() };
        out.save(&scene_manifest_path(&g.out, &id))?;
        ids.push(id);
    }
    store::write_json(&report_path(&g.out, "gen"), &json!({ "command": "gen", "seed": m.seed, "scenes": ids }))?;
    Ok(true)
}

fn geometry(m: &RunManifest, e: &SceneEntry) -> Result<SceneGeometry> {
    m.scene(e, m.library()?)?.geometry()
}

/// Window views of a scene, reference time 0.
fn window(m: &RunManifest, e: &SceneEntry) -> Result<CaptureWindow> {
    capture_window(&e.rig(), &m.belt, m.timesteps, 0.0)
}

fn window_index(w: &CaptureWindow, i: usize) -> (usize, usize) {
    (i / 2, w.views[i].camera)
}

fn noise_for(m: &RunManifest, e: &SceneEntry) -> crate::recon::NoiseSpec {
    let mut noise = m.noise.clone();
    noise.seed = seed_from(&[m.noise.seed, e.seed]);
    noise
}

fn cmd_render(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry) -> Result<serde_json::Value> {
    let geom = geometry(m, e)?;
    let w = window(m, e)?;
    let depth = make_noisy_provider(&geom, noise_for(m, e))?;
    let maps = GroundTruthMaps::new(&geom, m.cup.clone());
    for (i, view) in w.views.iter().enumerate() {
        let (t, c) = window_index(&w, i);
        use crate::recon::DepthProvider;
        store::save_depth(&raster_path(&g.out, &e.id, t, c, "depth"), &depth.depth(view)?)?;
        store::save_normals(&raster_path(&g.out, &e.id, t, c, "normal"), &maps.normals(view)?)?;
        store::save_mask(&raster_path(&g.out, &e.id, t, c, "mask"), &maps.mask(view)?)?;
        store::save_seal(&raster_path(&g.out, &e.id, t, c, "seal"), &maps.seal(view)?)?;
    }
    Ok(json!({ "views": w.views.len(), "timesteps": m.timesteps }))
}

/// Window views carrying the rasters written by `render`.
fn recorded_window(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry, with_maps: bool) -> Result<CaptureWindow> {
    let mut w = window(m, e)?;
    for i in 0..w.views.len() {
        let (t, c) = window_index(&w, i);
        let dims = w.views[i].intrinsics.dims();
        let depth = store::load_depth(&raster_path(&g.out, &e.id, t, c, "depth"))?;
        check_dims(dims, depth.dims())?;
        w.views[i].depth = Some(depth);
        if with_maps {
            let normals = store::load_normals(&raster_path(&g.out, &e.id, t, c, "normal"))?;
            let mask = store::load_mask(&raster_path(&g.out, &e.id, t, c, "mask"))?;
            let seal = store::load_seal(&raster_path(&g.out, &e.id, t, c, "seal"))?;
            for d in [normals.dims(), mask.dims(), seal.dims()] {
                check_dims(dims, d)?;
            }
            let v = &mut w.views[i];
            (v.normals, v.mask, v.seal) = (Some(normals), Some(mask), Some(seal));
        }
    }
    Ok(w)
}

fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn cmd_annotate(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry, per_object: usize) -> Result<serde_json::Value> {
    let geom = geometry(m, e)?;
    let set = annotate_scene(&geom, &m.cup, per_object, seed_from(&[e.seed, 0xA77]));
    let records: Vec<AnnotationRecord> = set.annotations.iter().map(|a| AnnotationRecord::from_annotation(&e.id, a)).collect();
    store::write_annotations(&g.out.join("annotations").join(format!("{}.csv", e.id)), &records)?;
    let positive = records.iter().filter(|r| r.s_overall > 0.0).count();
    Ok(json!({ "annotations": records.len(), "positive": positive }))
}

fn volume_path(out: &Path, id: &str, ext: &str) -> PathBuf {
    out.join("volumes").join(format!("{id}.{ext}"))
}

fn cmd_fuse(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry) -> Result<serde_json::Value> {
    let w = recorded_window(g, m, e, false)?;
    let vol = fuse(&w, &RecordedDepth, &m.grid)?;
    store::save_volume(&volume_path(&g.out, &e.id, "stpv"), &vol)?;
    let triangles = match marching_cubes(&vol) {
        Ok(mesh) => {
            store::write_text(&volume_path(&g.out, &e.id, "obj"), &mesh.to_obj())?;
            mesh.triangles.len()
        }
        Err(Error::EmptySurface) => 0,
        Err(err) => return Err(err),
    };
    Ok(json!({ "observed_voxels": vol.observed_count(), "triangles": triangles }))
}

fn detections_path(out: &Path, id: &str) -> PathBuf {
    out.join("reports").join(format!("{id}_detections.csv"))
}

fn cmd_detect(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry) -> Result<serde_json::Value> {
    let w = recorded_window(g, m, e, true)?;
    let det = detect(&w, &RecordedDepth, &RecordedMaps, &m.grid, &m.cup, &m.detector, &[])?;
    let records = det
        .poses
        .iter()
        .map(|p| {
            let label = SuctionLabel::new(p.seal, p.wrench, p.collision)?;
            let d = p.direction.normalize();
            Ok(AnnotationRecord {
                scene_id: e.id.clone(),
                instance_id: p.instance_id,
                px: p.point.x,
                py: p.point.y,
                pz: p.point.z,
                dx: d.x,
                dy: d.y,
                dz: d.z,
                s_seal: label.seal,
                s_wrench: label.wrench,
                s_collision: label.collision,
                s_overall: label.overall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    store::write_annotations(&detections_path(&g.out, &e.id), &records)?;
    Ok(json!({ "candidates": det.candidate_count, "components": det.components, "poses": det.poses }))
}

fn cmd_eval(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry) -> Result<serde_json::Value> {
    let geom = geometry(m, e)?;
    let pred = store::load_volume(&volume_path(&g.out, &e.id, "stpv"), &m.grid)?;
    let gt = gt_tsdf(&geom, &m.grid)?;
    let pred_scores = score_volume(&pred, &m.cup, &m.detector).2;
    let gt_scores = gt_score_volume(&geom, &m.grid, &m.cup, &m.detector)?;

    // Seal maps of the newest views against per-pixel ground truth.
    let w = recorded_window(g, m, e, true)?;
    let (mut seal_sum, mut seal_views) = (0.0, 0usize);
    for (_, v) in w.newest_views() {
        let exact = render_seal_map(&geom, &v.intrinsics, &v.pose, &m.cup, 1)?;
        seal_sum += seal_mae(v.seal.as_ref().ok_or(Error::MissingRaster("seal"))?, &exact)?;
        seal_views += 1;
    }

    let records = store::read_annotations(&detections_path(&g.out, &e.id))?;
    let poses: Vec<_> = records
        .iter()
        .map(|r| crate::detector::SuctionPoseResult {
            point: Vec3::new(r.px, r.py, r.pz),
            direction: Vec3::new(r.dx, r.dy, r.dz),
            seal: r.s_seal,
            wrench: r.s_wrench,
            collision: r.s_collision,
            overall: r.s_overall,
            pixel: [0, 0],
            view: 0,
            instance_id: r.instance_id,
        })
        .collect();
    let mut ks = vec![1, m.detector.k];
    ks.dedup();
    let band = crate::eval::surface_band(&gt);
    let report = MetricsReport {
        tsdf_mae: tsdf_mae(&pred, &gt)?,
        surface_tsdf_mae: surface_tsdf_mae(&pred, &gt)?,
        seal_mae: (seal_views > 0).then(|| seal_sum / seal_views as f64),
        collision_accuracy: collision_accuracy(&pred_scores, &gt_scores)?,
        ap_topk: ks.iter().map(|&k| (k, ap_topk(&poses, &geom, &m.cup, k, m.detector.snap_epsilon))).collect(),
        observed_voxels: pred.observed_count(),
        surface_voxels: (0..gt.spec.len()).filter(|&i| band[i] && pred.weights[i] > 0.0).count(),
        poses: poses.len(),
    };
    Ok(serde_json::to_value(report)?)
}

#[derive(Serialize)]
struct DeclutterSummary {
    success_rate: f64,
    declutter_rate: f64,
    log: crate::eval::EpisodeLog,
}

fn cmd_declutter(g: &GlobalArgs, m: &RunManifest, e: &SceneEntry) -> Result<serde_json::Value> {
    let scene = m.scene(e, m.library()?)?;
    let det = PipelineDetector::new(m.grid.clone(), m.cup.clone(), m.detector.clone(), noise_for(m, e));
    let config = DeclutterConfig { timesteps: m.timesteps, ..DeclutterConfig::default() };
    let log = simulate_declutter(&scene, &m.belt, &e.rig(), &m.cup, m.detector.snap_epsilon, &det, &config)?;
    let summary = DeclutterSummary { success_rate: log.success_rate(), declutter_rate: log.declutter_rate(), log };
    store::write_json(&g.out.join("reports").join(format!("{}_episode.json", e.id)), &summary)?;
    Ok(json!({ "success_rate": summary.success_rate, "declutter_rate": summary.declutter_rate, "attempts": summary.log.attempts }))
}

/// Named pass/fail checks for `selftest`.
pub fn selftest_checks() -> Vec<(&'static str, bool)> {
    let mut checks: Vec<(&'static str, bool)> = Vec::new();
    checks.push(("ap_perfect", ap_from_scores(&[1.0; 5], 5) == 1.0));
    checks.push(("ap_hand_case", ap_from_scores(&[0.9, 0.7, 0.5, 0.3, 0.1], 5) == 0.5));
    checks.push(("ap_zero", ap_from_scores(&[0.0; 5], 5) == 0.0));
    checks.push(("score_product", compose_score(0.5, 0.5, 1.0).ok() == Some(0.25)));
    checks.push(("score_collision_annihilates", compose_score(1.0, 1.0, 0.0).ok() == Some(0.0)));
    checks.push(("score_range_checked", compose_score(1.5, 1.0, 1.0).is_err()));
    let spec = GridSpec::new(Vec3::zeros(), 10.0, [4, 4, 4], 15.0).expect("grid");
    let a = TsdfVolume::from_fn(spec.clone(), |p| p.x - 17.0);
    checks.push(("tsdf_mae_identity", tsdf_mae(&a, &a).ok() == Some(0.0)));
    let mut b = a.clone();
    for v in &mut b.values {
        *v += (5.0 / 15.0) as f32;
    }
    checks.push(("tsdf_mae_shift", tsdf_mae(&b, &a).is_ok_and(|x| (x - 5.0).abs() < 1e-5)));
    let dir = std::env::temp_dir().join(format!("beltpick-selftest-{}", std::process::id()));
    let roundtrip = (|| -> Result<bool> {
        let p = dir.join("v.stpv");
        store::save_volume(&p, &a)?;
        let back = store::load_volume(&p, &spec)?;
        let depth = Raster::from_vec(2, 1, vec![0.0, 250.5]);
        let q = dir.join("d.stpr");
        store::save_depth(&q, &depth)?;
        Ok(back == a && store::load_depth(&q)? == depth)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    checks.push(("store_round_trip", roundtrip.unwrap_or(false)));
    checks
}

fn cmd_selftest(g: &GlobalArgs) -> Result<bool> {
    let clock = Instant::now();
    let checks = selftest_checks();
    let passed = checks.iter().all(|(_, ok)| *ok);
    for (name, ok) in &checks {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    let results: serde_json::Map<String, serde_json::Value> = checks.iter().map(|(n, ok)| (n.to_string(), json!(ok))).collect();
    store::write_json(
        &report_path(&g.out, "selftest"),
        &json!({ "command": "selftest", "passed": passed, "checks": results, "elapsed_ms": clock.elapsed().as_secs_f64() * 1e3 }),
    )?;
    Ok(passed)
}
