//! On-disk formats: raw f32 rasters (`STPR`), TSDF volumes (`STPV`), annotation CSV and JSON.
//!
//! Binary files are a 4-byte magic, little-endian `u32` dimensions, then little-endian `f32`
//! payload. Rasters are row-major with channels interleaved; volumes are x-fastest, values
//! followed by weights. Readers reject short files and trailing bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::{Annotation, SuctionCandidate, SuctionLabel};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::raster::{DepthMap, InstanceMask, NormalMap, Raster, SealMap};
use crate::recon::{GridSpec, TsdfVolume};

pub const RASTER_MAGIC: [u8; 4] = *b"STPR";
pub const VOLUME_MAGIC: [u8; 4] = *b"STPV";

/// Raw contents of an `STPR` file.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterFile {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn dim_u32(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n).map(u32::to_le_bytes).map_err(|_| Error::OutOfRange(format!("dimension {n} exceeds u32")))
}

fn encode(magic: [u8; 4], dims: &[usize], payload: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + 4 * payload.len());
    out.extend_from_slice(&magic);
    for &d in dims {
        out.extend_from_slice(&dim_u32(d)?);
    }
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Checks magic and length, returning the dims and the f32 payload.
fn decode(path: &Path, bytes: &[u8], magic: [u8; 4], ndims: usize, per_cell: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::TruncatedFile { path: path.to_path_buf(), missing: header - bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: magic, found });
    }
    let dims: Vec<usize> =
        (0..ndims).map(|i| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize).collect();
    let count = dims.iter().try_fold(per_cell, |acc, &d| acc.checked_mul(d));
    let need = count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(header));
    let need = need.ok_or_else(|| Error::Parse { what: path.display().to_string(), msg: "dimensions overflow".into() })?;
    if bytes.len() < need {
        return Err(Error::TruncatedFile { path: path.to_path_buf(), missing: need - bytes.len() });
    }
    if bytes.len() > need {
        return Err(Error::TrailingBytes(path.to_path_buf()));
    }
    let payload = bytes[header..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((dims, payload))
}

pub fn write_raster(path: &Path, file: &RasterFile) -> Result<()> {
    if file.data.len() != file.width * file.height * file.channels {
        return Err(Error::InvariantViolation(format!(
            "raster payload has {} floats, dims {}x{}x{}",
            file.data.len(),
            file.width,
            file.height,
            file.channels
        )));
    }
    ensure_parent(path)?;
    fs::write(path, encode(RASTER_MAGIC, &[file.width, file.height, file.channels], &file.data)?)?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<RasterFile> {
    let bytes = read_existing(path)?;
    let (dims, data) = decode(path, &bytes, RASTER_MAGIC, 3, 1)?;
    Ok(RasterFile { width: dims[0], height: dims[1], channels: dims[2], data })
}

fn read_existing(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn expect_channels(path: &Path, f: &RasterFile, channels: usize) -> Result<()> {
    if f.channels != channels {
        return Err(Error::Parse { what: path.display().to_string(), msg: format!("expected {channels} channels, got {}", f.channels) });
    }
    Ok(())
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let (width, height) = depth.dims();
    write_raster(path, &RasterFile { width, height, channels: 1, data: depth.data.iter().map(|&d| d as f32).collect() })
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let f = read_raster(path)?;
    expect_channels(path, &f, 1)?;
    Ok(Raster::from_vec(f.width, f.height, f.data.iter().map(|&d| d as f64).collect()))
}

pub fn save_normals(path: &Path, normals: &NormalMap) -> Result<()> {
    let (width, height) = normals.dims();
    let data = normals.data.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect();
    write_raster(path, &RasterFile { width, height, channels: 3, data })
}

pub fn load_normals(path: &Path) -> Result<NormalMap> {
    let f = read_raster(path)?;
    expect_channels(path, &f, 3)?;
    let data = f.data.chunks_exact(3).map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect();
    Ok(Raster::from_vec(f.width, f.height, data))
}

/// Instance ids are stored as floats, exact below 2²⁴.
pub fn save_mask(path: &Path, mask: &InstanceMask) -> Result<()> {
    let (width, height) = mask.dims();
    if let Some(&id) = mask.data.iter().find(|&&id| id >= 1 << 24) {
        return Err(Error::OutOfRange(format!("instance id {id} does not fit an f32 raster")));
    }
    write_raster(path, &RasterFile { width, height, channels: 1, data: mask.data.iter().map(|&id| id as f32).collect() })
}

pub fn load_mask(path: &Path) -> Result<InstanceMask> {
    let f = read_raster(path)?;
    expect_channels(path, &f, 1)?;
    let mut data = Vec::with_capacity(f.data.len());
    for &v in &f.data {
        if !(v >= 0.0 && v.fract() == 0.0 && v < (1u32 << 24) as f32) {
            return Err(Error::Parse { what: path.display().to_string(), msg: format!("instance id {v} is not a non-negative integer") });
        }
        data.push(v as u32);
    }
    Ok(Raster::from_vec(f.width, f.height, data))
}

/// Two channels: score and validity (0 or 1).
pub fn save_seal(path: &Path, seal: &SealMap) -> Result<()> {
    let (width, height) = seal.dims();
    let data = seal
        .scores
        .data
        .iter()
        .zip(&seal.valid.data)
        .flat_map(|(&s, &v)| [if v { s as f32 } else { 0.0 }, if v { 1.0 } else { 0.0 }])
        .collect();
    write_raster(path, &RasterFile { width, height, channels: 2, data })
}

pub fn load_seal(path: &Path) -> Result<SealMap> {
    let f = read_raster(path)?;
    expect_channels(path, &f, 2)?;
    let mut scores = Vec::with_capacity(f.width * f.height);
    let mut valid = Vec::with_capacity(f.width * f.height);
    for c in f.data.chunks_exact(2) {
        let ok = match c[1] {
            v if v == 1.0 => true,
            v if v == 0.0 => false,
            v => return Err(Error::Parse { what: path.display().to_string(), msg: format!("validity {v} is not 0 or 1") }),
        };
        if !(0.0..=1.0).contains(&c[0]) {
            return Err(Error::InvariantViolation(format!("{}: seal score {} outside [0, 1]", path.display(), c[0])));
        }
        scores.push(c[0] as f64);
        valid.push(ok);
    }
    Ok(SealMap { scores: Raster::from_vec(f.width, f.height, scores), valid: Raster::from_vec(f.width, f.height, valid) })
}

/// The grid geometry is not stored; it comes from the run manifest.
pub fn save_volume(path: &Path, vol: &TsdfVolume) -> Result<()> {
    vol.check()?;
    let payload: Vec<f32> = vol.values.iter().chain(&vol.weights).copied().collect();
    ensure_parent(path)?;
    fs::write(path, encode(VOLUME_MAGIC, &vol.spec.dims, &payload)?)?;
    Ok(())
}

pub fn load_volume(path: &Path, spec: &GridSpec) -> Result<TsdfVolume> {
    let bytes = read_existing(path)?;
    let (dims, mut payload) = decode(path, &bytes, VOLUME_MAGIC, 3, 2)?;
    if dims != spec.dims {
        return Err(Error::SpecMismatch);
    }
    let weights = payload.split_off(spec.len());
    TsdfVolume::from_parts(spec.clone(), payload, weights)
}

pub const ANNOTATION_HEADER: [&str; 12] =
    ["scene_id", "instance_id", "px", "py", "pz", "dx", "dy", "dz", "s_seal", "s_wrench", "s_collision", "s_overall"];

/// One suction pose with its scores, in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub scene_id: String,
    pub instance_id: u32,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub s_seal: f64,
    pub s_wrench: f64,
    pub s_collision: f64,
    pub s_overall: f64,
}

impl AnnotationRecord {
    pub fn from_annotation(scene_id: &str, a: &Annotation) -> Self {
        let (p, d, l) = (a.candidate.point, a.candidate.direction, a.label);
        Self {
            scene_id: scene_id.to_string(),
            instance_id: a.candidate.instance_id,
            px: p.x,
            py: p.y,
            pz: p.z,
            dx: d.x,
            dy: d.y,
            dz: d.z,
            s_seal: l.seal,
            s_wrench: l.wrench,
            s_collision: l.collision,
            s_overall: l.overall,
        }
    }

    pub fn label(&self) -> SuctionLabel {
        SuctionLabel { seal: self.s_seal, wrench: self.s_wrench, collision: self.s_collision, overall: self.s_overall }
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            candidate: SuctionCandidate {
                point: Vec3::new(self.px, self.py, self.pz),
                direction: Vec3::new(self.dx, self.dy, self.dz),
                instance_id: self.instance_id,
            },
            label: self.label(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = Vec3::new(self.dx, self.dy, self.dz).norm();
        if !((n - 1.0).abs() <= 1e-6) {
            return Err(Error::InvariantViolation(format!("direction norm {n} is not 1")));
        }
        self.label().check()
    }
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(ANNOTATION_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates records; the header must match [`ANNOTATION_HEADER`] exactly.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(ANNOTATION_HEADER.iter().copied()) {
        return Err(Error::Parse { what: path.display().to_string(), msg: format!("unexpected header {:?}", header) });
    }
    let mut out = Vec::new();
    for (line, rec) in r.deserialize::<AnnotationRecord>().enumerate() {
        let rec = rec?;
        rec.check().map_err(|e| Error::InvariantViolation(format!("{} record {}: {e}", path.display(), line + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_existing(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}
