//! File formats, sequence manifests, and lidar-to-image conversion.
//!
//! | file            | layout                                                          |
//! |-----------------|-----------------------------------------------------------------|
//! | panoptic PNG    | RGB8, `R = class`, `G = instance >> 8`, `B = instance & 0xff`     |
//! | depth PNG       | L16, meters × 256, 0 = missing                                  |
//! | semantic PNG    | L8 class id                                                     |
//! | float raster    | `"DVPR"`, u32 width, u32 height, u32 channels (LE), f32 LE data |
//!
//! Float raster data is row-major with channels interleaved per pixel.
//! Every write goes to a temporary file that is renamed into place.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CenterHeatmap, HeadOutputs, OffsetField, SemanticMap};
use crate::stitch::PairPrediction;
use crate::types::{ClassKind, DepthMap, Frame, LabelSpec, PanopticMap, Sequence};

pub const DVPR_MAGIC: [u8; 4] = *b"DVPR";
pub const DEPTH_SCALE: f64 = 256.0;

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_png(path: &Path, img: DynamicImage) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    write_atomic(path, buf.get_ref())
}

fn decode_png(path: &Path) -> Result<DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// Dense multi-channel `f32` raster.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FloatRaster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} raster cannot hold {} values",
                data.len()
            )));
        }
        Ok(FloatRaster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(&DVPR_MAGIC);
        for v in [self.width, self.height, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 16 || bytes[..4] != DVPR_MAGIC {
            return Err(Error::format(origin, "missing DVPR magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(4), word(8), word(12));
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(origin, "header dimensions overflow"))?;
        if bytes.len() - 16 != expected {
            return Err(Error::format(
                origin,
                format!("payload is {} bytes, header implies {expected}", bytes.len() - 16),
            ));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FloatRaster::new(width, height, channels, data)
    }
}

pub fn save_float_raster(path: &Path, raster: &FloatRaster) -> Result<()> {
    write_atomic(path, &raster.to_bytes())
}

pub fn load_float_raster(path: &Path) -> Result<FloatRaster> {
    FloatRaster::from_bytes(&read_bytes(path)?, path)
}

/// `(R, G, B)` for a panoptic label: `composite = class * 65536 + instance`.
pub fn encode_panoptic_rgb(class: u16, instance: u32) -> Result<[u8; 3]> {
    if class > 255 {
        return Err(Error::OutOfRange(format!("class {class} does not fit the red channel")));
    }
    if instance > 0xffff {
        return Err(Error::OutOfRange(format!("instance {instance} exceeds 65535")));
    }
    Ok([class as u8, (instance >> 8) as u8, (instance & 0xff) as u8])
}

pub fn decode_panoptic_rgb(rgb: [u8; 3]) -> (u16, u32) {
    (rgb[0] as u16, ((rgb[1] as u32) << 8) | rgb[2] as u32)
}

pub fn save_panoptic(path: &Path, map: &PanopticMap) -> Result<()> {
    let mut buf = Vec::with_capacity(map.len() * 3);
    for i in 0..map.len() {
        let s = map.segment_at(i);
        buf.extend_from_slice(&encode_panoptic_rgb(s.class, s.instance)?);
    }
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(map.width() as u32, map.height() as u32, buf)
        .expect("buffer sized to the map");
    encode_png(path, DynamicImage::ImageRgb8(img))
}

/// Loads a panoptic PNG and validates it against `spec`.
pub fn load_panoptic(path: &Path, spec: &LabelSpec) -> Result<PanopticMap> {
    let DynamicImage::ImageRgb8(img) = decode_png(path)? else {
        return Err(Error::format(path, "panoptic PNG must be 8-bit RGB"));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (semantic, instance) = img.pixels().map(|p| decode_panoptic_rgb(p.0)).unzip();
    let map = PanopticMap::new(w, h, semantic, instance)?;
    map.validate(spec)?;
    Ok(map)
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let buf = depth
        .raw()
        .iter()
        .map(|&d| {
            if d.is_nan() {
                return Ok(0u16);
            }
            let v = (d * DEPTH_SCALE).round();
            if (1.0..=65535.0).contains(&v) {
                Ok(v as u16)
            } else {
                Err(Error::OutOfRange(format!("depth {d} m is not representable at 1/256 m")))
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, buf)
        .expect("buffer sized to the map");
    encode_png(path, DynamicImage::ImageLuma16(img))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let DynamicImage::ImageLuma16(img) = decode_png(path)? else {
        return Err(Error::format(path, "depth PNG must be 16-bit grayscale"));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img
        .pixels()
        .map(|p| if p.0[0] == 0 { f64::NAN } else { p.0[0] as f64 / DEPTH_SCALE })
        .collect();
    DepthMap::from_raw(w, h, values)
}

pub fn save_semantic(path: &Path, map: &SemanticMap) -> Result<()> {
    let buf = map
        .classes()
        .iter()
        .map(|&c| u8::try_from(c).map_err(|_| Error::OutOfRange(format!("class {c} exceeds 255"))))
        .collect::<Result<Vec<u8>>>()?;
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(map.width() as u32, map.height() as u32, buf)
        .expect("buffer sized to the map");
    encode_png(path, DynamicImage::ImageLuma8(img))
}

pub fn load_semantic(path: &Path) -> Result<SemanticMap> {
    let DynamicImage::ImageLuma8(img) = decode_png(path)? else {
        return Err(Error::format(path, "semantic PNG must be 8-bit grayscale"));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    SemanticMap::new(w, h, img.pixels().map(|p| p.0[0] as u16).collect())
}

/// Flat class-colored RGB visualisation.
pub fn save_visualization(path: &Path, map: &PanopticMap, spec: &LabelSpec) -> Result<()> {
    let mut buf = Vec::with_capacity(map.len() * 3);
    for i in 0..map.len() {
        let s = map.segment_at(i);
        let rgb = if spec.is_void(s.class) {
            [0, 0, 0]
        } else {
            let h = (s.class as u32).wrapping_mul(2654435761) ^ s.instance.wrapping_mul(40503);
            [(h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40, h as u8 | 0x40]
        };
        buf.extend_from_slice(&rgb);
    }
    let img = ImageBuffer::<Rgb<u8>, _>::from_raw(map.width() as u32, map.height() as u32, buf)
        .expect("buffer sized to the map");
    encode_png(path, DynamicImage::ImageRgb8(img))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Cityscapes,
    Semkitti,
}

impl Preset {
    /// Default window sizes for the preset.
    pub fn ks(self) -> Vec<usize> {
        match self {
            Preset::Cityscapes => crate::metrics_panoptic::CITYSCAPES_KS.to_vec(),
            Preset::Semkitti => crate::metrics_panoptic::SEMKITTI_KS.to_vec(),
        }
    }
}

/// Files belonging to one frame. Paths are relative to the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    /// Panoptic labels (ground truth, or `P_t` for predictions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panoptic: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    /// `R_t`: prediction of frame `t + 1` made jointly with frame `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_panoptic: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<PathBuf>,
    /// Offsets from frame `t + 1` pixels to frame-`t` centers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_offsets: Option<PathBuf>,
}

impl FrameRecord {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        [
            &self.image,
            &self.panoptic,
            &self.depth,
            &self.next_panoptic,
            &self.semantic,
            &self.heatmap,
            &self.offsets,
            &self.next_offsets,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSpec>,
    pub frames: Vec<FrameRecord>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: SequenceManifest,
    pub base: PathBuf,
}

fn require<'a>(field: &'a Option<PathBuf>, what: &str, index: u64, manifest: &Path) -> Result<&'a PathBuf> {
    field
        .as_ref()
        .ok_or_else(|| Error::format(manifest, format!("frame {index} has no {what}")))
}

impl LoadedManifest {
    /// Reads a manifest, checking frame order and that every path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: SequenceManifest = load_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if manifest.frames.is_empty() {
            return Err(Error::format(path, "manifest lists no frames"));
        }
        if manifest.frames.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(Error::format(path, "frame indices must be strictly increasing"));
        }
        for rec in &manifest.frames {
            for p in rec.paths() {
                let full = base.join(p);
                if !full.exists() {
                    return Err(Error::io(
                        &full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
                    ));
                }
            }
        }
        Ok(LoadedManifest { manifest, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn origin(&self) -> PathBuf {
        self.base.join(format!("<{}>", self.manifest.sequence_id))
    }

    /// Panoptic maps (and depth when `with_depth`) as a sequence.
    pub fn load_sequence(&self, spec: &LabelSpec, with_depth: bool) -> Result<Sequence> {
        let origin = self.origin();
        let frames = self
            .manifest
            .frames
            .iter()
            .map(|rec| {
                let map = load_panoptic(&self.resolve(require(&rec.panoptic, "panoptic", rec.index, &origin)?), spec)?;
                let depth = if with_depth {
                    Some(load_depth(&self.resolve(require(&rec.depth, "depth", rec.index, &origin)?))?)
                } else {
                    None
                };
                Ok(Frame::new(map, depth))
            })
            .collect::<Result<Vec<_>>>()?;
        Sequence::new(self.manifest.sequence_id.clone(), frames)
    }

    pub fn load_depths(&self) -> Result<Vec<DepthMap>> {
        let origin = self.origin();
        self.manifest
            .frames
            .iter()
            .map(|rec| load_depth(&self.resolve(require(&rec.depth, "depth", rec.index, &origin)?)))
            .collect()
    }

    /// `(P_t, R_t)` entries; `R` is required on all but the last frame.
    pub fn load_pairs(&self, spec: &LabelSpec) -> Result<Vec<PairPrediction>> {
        let origin = self.origin();
        let n = self.manifest.frames.len();
        self.manifest
            .frames
            .iter()
            .enumerate()
            .map(|(t, rec)| {
                let p = load_panoptic(&self.resolve(require(&rec.panoptic, "panoptic", rec.index, &origin)?), spec)?;
                let r = match &rec.next_panoptic {
                    Some(path) => Some(load_panoptic(&self.resolve(path), spec)?),
                    None if t + 1 < n => {
                        return Err(Error::format(&origin, format!("frame {} has no next_panoptic", rec.index)))
                    }
                    None => None,
                };
                Ok(PairPrediction { p, r })
            })
            .collect()
    }

    pub fn load_heads(&self, t: usize) -> Result<HeadOutputs> {
        let origin = self.origin();
        let rec = &self.manifest.frames[t];
        let semantic = load_semantic(&self.resolve(require(&rec.semantic, "semantic", rec.index, &origin)?))?;
        let heatmap = CenterHeatmap::try_from(load_float_raster(&self.resolve(require(
            &rec.heatmap,
            "heatmap",
            rec.index,
            &origin,
        )?))?)?;
        let offsets = OffsetField::try_from(load_float_raster(&self.resolve(require(
            &rec.offsets,
            "offsets",
            rec.index,
            &origin,
        )?))?)?;
        Ok(HeadOutputs {
            semantic,
            heatmap,
            offsets,
        })
    }

    pub fn load_next_offsets(&self, t: usize) -> Result<OffsetField> {
        let rec = &self.manifest.frames[t];
        let path = require(&rec.next_offsets, "next_offsets", rec.index, &self.origin())?;
        OffsetField::try_from(load_float_raster(&self.resolve(path))?)
    }
}

/// Pinhole camera with a rigid sensor-to-camera transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major rotation from sensor to camera frame.
    pub rotation: [[f64; 3]; 3],
    /// Translation in meters, applied after the rotation.
    pub translation: [f64; 3],
}

impl CameraModel {
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        if !(err < 1e-9) {
            return Err(Error::Validation(format!("rotation is not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    /// Sensor-frame point to camera frame.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation_matrix() * Vector3::from(p) + Vector3::from(self.translation);
        [v.x, v.y, v.z]
    }

    /// Nearest-pixel `(row, col)` of a camera-frame point, if it lies in
    /// front of the camera and inside the image.
    pub fn pixel_of(&self, c: [f64; 3]) -> Option<(usize, usize)> {
        let [x, y, z] = c;
        if !(z > 0.0) {
            return None;
        }
        let u = (self.fx * x / z + self.cx).round();
        let v = (self.fy * y / z + self.cy).round();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return None;
        }
        Some((v as usize, u as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub class: u16,
    pub instance: u32,
}

/// Reads whitespace- or comma-separated `x y z class instance` lines;
/// `#` starts a comment.
pub fn load_point_cloud(path: &Path) -> Result<Vec<LabeledPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let bad = || Error::format(path, format!("line {}: expected `x y z class instance`", n + 1));
        if fields.len() != 5 {
            return Err(bad());
        }
        let coord = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
        points.push(LabeledPoint {
            x: coord(0)?,
            y: coord(1)?,
            z: coord(2)?,
            class: fields[3].parse().map_err(|_| bad())?,
            instance: fields[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(points)
}

pub fn save_point_cloud(path: &Path, points: &[LabeledPoint]) -> Result<()> {
    let mut text = String::from("# x y z class instance\n");
    for p in points {
        text.push_str(&format!("{} {} {} {} {}\n", p.x, p.y, p.z, p.class, p.instance));
    }
    write_atomic(path, text.as_bytes())
}

/// Per-pixel boolean mask of removed points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize) -> Self {
        PixelMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set pixels as `(row, col)`, row-major.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

/// Projects labelled points into sparse depth and panoptic rasters. Points
/// behind the camera or outside the image are dropped; on a shared pixel
/// the point smallest in `(z, x, y, class, instance)` camera-frame order
/// wins, so the result does not depend on input order.
pub fn project_points(cloud: &[LabeledPoint], cam: &CameraModel, spec: &LabelSpec) -> Result<(DepthMap, PanopticMap)> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let mut best: Vec<Option<([f64; 3], u16, u32)>> = vec![None; w * h];
    for p in cloud {
        if ![p.x, p.y, p.z].iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("non-finite point {p:?}")));
        }
        match spec.kind(p.class) {
            Some(ClassKind::Thing) if p.instance >= 1 => {}
            Some(ClassKind::Stuff) if p.instance == 0 => {}
            _ => {
                return Err(Error::Validation(format!(
                    "point label {}:{} is inconsistent with the label spec",
                    p.class, p.instance
                )))
            }
        }
        let c = cam.to_camera([p.x, p.y, p.z]);
        let Some((row, col)) = cam.pixel_of(c) else { continue };
        let slot = &mut best[row * w + col];
        let wins = match slot {
            None => true,
            Some((bc, bclass, binst)) => c[2]
                .total_cmp(&bc[2])
                .then(c[0].total_cmp(&bc[0]))
                .then(c[1].total_cmp(&bc[1]))
                .then(p.class.cmp(bclass))
                .then(p.instance.cmp(binst))
                .is_lt(),
        };
        if wins {
            *slot = Some((c, p.class, p.instance));
        }
    }
    let depth = best.iter().map(|b| b.map_or(f64::NAN, |(c, _, _)| c[2])).collect();
    let semantic = best.iter().map(|b| b.map_or(spec.void_id(), |(_, c, _)| c)).collect();
    let instance = best.iter().map(|b| b.map_or(0, |(_, _, i)| i)).collect();
    Ok((DepthMap::from_raw(w, h, depth)?, PanopticMap::new(w, h, semantic, instance)?))
}

/// Removes projected depths that disagree with a reference depth by more
/// than `rel_threshold` relative error. Pixels without reference stay.
pub fn disparity_consistency_check(projected: &DepthMap, reference: &DepthMap, rel_threshold: f64) -> Result<(DepthMap, PixelMask)> {
    if !(rel_threshold > 0.0) {
        return Err(Error::Validation(format!("threshold must be > 0, got {rel_threshold}")));
    }
    if projected.width() != reference.width() || projected.height() != reference.height() {
        return Err(Error::Dimension("projected and reference depth differ in size".into()));
    }
    let mut out = projected.clone();
    let mut mask = PixelMask::new(projected.width(), projected.height());
    for i in 0..projected.len() {
        let (Some(p), Some(r)) = (projected.at(i), reference.at(i)) else { continue };
        if (p - r).abs() / r > rel_threshold {
            out.set(i, None);
            mask.bits[i] = true;
        }
    }
    Ok((out, mask))
}

/// Removes background (stuff) points that have a thing point nearer than
/// `depth - margin` within the `patch × patch` window around them. Thing
/// points are never removed.
pub fn non_foreground_suppression(
    depth: &DepthMap,
    pano: &PanopticMap,
    spec: &LabelSpec,
    patch: usize,
    margin: f64,
) -> Result<(DepthMap, PanopticMap, PixelMask)> {
    if patch == 0 || patch.is_multiple_of(2) {
        return Err(Error::Validation(format!("patch must be odd and >= 1, got {patch}")));
    }
    if !depth.matches(pano) {
        return Err(Error::Dimension("depth and panoptic maps differ in size".into()));
    }
    let (w, h) = (pano.width(), pano.height());
    let r = patch / 2;
    let fg = |i: usize| depth.at(i).filter(|_| spec.is_thing(pano.semantic()[i]));
    let mut out_depth = depth.clone();
    let mut out_pano = pano.clone();
    let mut mask = PixelMask::new(w, h);
    {
        let (sem, inst) = out_pano.parts_mut();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some(d) = depth.at(i) else { continue };
                if !spec.is_stuff(pano.semantic()[i]) {
                    continue;
                }
                let occluded = (y.saturating_sub(r)..=(y + r).min(h - 1)).any(|qy| {
                    (x.saturating_sub(r)..=(x + r).min(w - 1)).any(|qx| fg(qy * w + qx).is_some_and(|f| f < d - margin))
                });
                if occluded {
                    out_depth.set(i, None);
                    sem[i] = spec.void_id();
                    inst[i] = 0;
                    mask.bits[i] = true;
                }
            }
        }
    }
    Ok((out_depth, out_pano, mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionParams {
    pub rel_threshold: f64,
    pub patch: usize,
    pub margin: f64,
}

impl Default for ConversionParams {
    fn default() -> Self {
        ConversionParams {
            rel_threshold: 0.3,
            patch: 7,
            margin: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvertedFrame {
    pub depth: DepthMap,
    pub panoptic: PanopticMap,
    pub inconsistent: PixelMask,
    pub suppressed: PixelMask,
}

/// Projection, then the consistency check against `reference` (when
/// given), then non-foreground suppression.
pub fn convert_frame(
    cloud: &[LabeledPoint],
    cam: &CameraModel,
    reference: Option<&DepthMap>,
    spec: &LabelSpec,
    params: &ConversionParams,
) -> Result<ConvertedFrame> {
    let (depth, mut pano) = project_points(cloud, cam, spec)?;
    let (depth, inconsistent) = match reference {
        Some(r) => disparity_consistency_check(&depth, r, params.rel_threshold)?,
        None => {
            let mask = PixelMask::new(depth.width(), depth.height());
            (depth, mask)
        }
    };
    {
        let (sem, inst) = pano.parts_mut();
        for (i, removed) in inconsistent.bits.iter().enumerate() {
            if *removed {
                sem[i] = spec.void_id();
                inst[i] = 0;
            }
        }
    }
    let (depth, panoptic, suppressed) = non_foreground_suppression(&depth, &pano, spec, params.patch, params.margin)?;
    Ok(ConvertedFrame {
        depth,
        panoptic,
        inconsistent,
        suppressed,
    })
}
