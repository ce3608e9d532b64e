//! Run manifests: every setting a run needs, plus the scenes it produced.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::annotator::SuctionCupSpec;
use crate::belt::BeltConfig;
use crate::camera::{CameraIntrinsics, RigidPose};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::recon::{GridSpec, NoiseSpec};
use crate::scene::{default_belt_bounds, default_stereo_rig, AssetLibrary, CameraMount, ObjectAsset, ObjectInstance, RandomizationSpec, Scene};
use crate::store::write_json;

pub const MANIFEST_VERSION: &str = "beltpick-manifest/1";

/// An OBJ mesh with uniform density (g/cm³).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub id: String,
    pub path: PathBuf,
    pub density: f64,
    #[serde(default)]
    pub transparent: bool,
}

/// Calibration of one camera as used for a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-world at the newest timestep.
    pub pose: RigidPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub seed: u64,
    pub instances: Vec<ObjectInstance>,
    pub cameras: Vec<CameraCalibration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub timesteps: usize,
    pub belt: BeltConfig,
    /// Nominal rig; per-scene calibrations live in the scene entries.
    pub cameras: Vec<CameraMount>,
    pub grid: GridSpec,
    pub cup: SuctionCupSpec,
    pub detector: DetectorConfig,
    pub noise: NoiseSpec,
    pub randomization: RandomizationSpec,
    /// Empty means the built-in convex library.
    pub assets: Vec<AssetEntry>,
    pub scenes: Vec<SceneEntry>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            seed: 0,
            timesteps: crate::belt::DEFAULT_WINDOW,
            belt: BeltConfig::default(),
            cameras: default_stereo_rig().to_vec(),
            grid: GridSpec::default(),
            cup: SuctionCupSpec::default(),
            detector: DetectorConfig::default(),
            noise: NoiseSpec::default(),
            randomization: RandomizationSpec::default(),
            assets: Vec::new(),
            scenes: Vec::new(),
        }
    }
}

impl RunManifest {
    /// Parses and validates manifest text. Relative asset paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = raw.get("version") {
            let found = v.as_str().map_or_else(|| v.to_string(), str::to_string);
            if found != MANIFEST_VERSION {
                return Err(Error::SchemaVersionMismatch { expected: MANIFEST_VERSION.into(), found });
            }
        }
        let mut m: RunManifest = serde_json::from_value(raw)?;
        for a in &mut m.assets {
            if a.path.is_relative() {
                a.path = base.join(&a.path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
            Err(e) => return Err(e.into()),
        };
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::SchemaVersionMismatch { expected: MANIFEST_VERSION.into(), found: self.version.clone() });
        }
        if self.timesteps == 0 {
            return Err(Error::InvalidConfig("timesteps must be >= 1".into()));
        }
        if self.cameras.len() != 2 {
            return Err(Error::InvalidConfig(format!("expected 2 cameras, got {}", self.cameras.len())));
        }
        self.belt.validate()?;
        self.grid.validate()?;
        self.cup.validate()?;
        self.detector.validate()?;
        self.noise.validate()?;
        self.randomization.validate(&default_belt_bounds())?;
        for a in &self.assets {
            if !a.path.is_file() {
                return Err(Error::MissingFile(a.path.clone()));
            }
        }
        for s in &self.scenes {
            if s.cameras.len() != 2 {
                return Err(Error::InvalidConfig(format!("scene {} needs 2 camera calibrations", s.id)));
            }
        }
        Ok(())
    }

    pub fn library(&self) -> Result<Arc<AssetLibrary>> {
        if self.assets.is_empty() {
            return Ok(Arc::new(AssetLibrary::convex_default()));
        }
        let assets = self
            .assets
            .iter()
            .map(|a| ObjectAsset::with_density(a.id.clone(), TriMesh::load_obj(&a.path)?, a.density, a.transparent))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(AssetLibrary::new(assets)?))
    }

    pub fn scene_entry(&self, id: &str) -> Result<&SceneEntry> {
        self.scenes.iter().find(|s| s.id == id).ok_or_else(|| Error::InvalidConfig(format!("no scene {id:?} in manifest")))
    }

    pub fn scene(&self, entry: &SceneEntry, library: Arc<AssetLibrary>) -> Result<Scene> {
        Scene::new(library, entry.instances.clone(), true, default_belt_bounds())
    }
}

impl SceneEntry {
    pub fn rig(&self) -> Vec<(CameraIntrinsics, RigidPose)> {
        self.cameras.iter().map(|c| (c.intrinsics, c.pose)).collect()
    }
}
