//! Turns dense head outputs (semantic classes, center heatmap, center
//! offsets) into panoptic maps, for a single frame or for a frame pair
//! whose second frame regresses onto the centers of the first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::FloatRaster;
use crate::error::{Error, Result};
use crate::types::{LabelSpec, PanopticMap};

/// Argmaxed per-pixel class map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    classes: Vec<u16>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize, classes: Vec<u16>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} semantic map needs {} pixels, got {}",
                width * height,
                classes.len()
            )));
        }
        Ok(SemanticMap {
            width,
            height,
            classes,
        })
    }

    pub fn from_panoptic(map: &PanopticMap) -> Self {
        SemanticMap {
            width: map.width(),
            height: map.height(),
            classes: map.semantic().to_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.classes[y * self.width + x]
    }
}

/// Per-pixel center confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterHeatmap {
    width: usize,
    height: usize,
    scores: Vec<f32>,
}

impl CenterHeatmap {
    pub fn new(width: usize, height: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} heatmap needs {} scores, got {}",
                width * height,
                scores.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation(format!("heatmap score {s} outside [0, 1]")));
        }
        Ok(CenterHeatmap {
            width,
            height,
            scores,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        CenterHeatmap {
            width,
            height,
            scores: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.scores[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, score: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!("heatmap score {score} outside [0, 1]")));
        }
        self.scores[y * self.width + x] = score;
        Ok(())
    }

    pub fn to_raster(&self) -> FloatRaster {
        FloatRaster::new(self.width, self.height, 1, self.scores.clone())
            .expect("heatmap shape is consistent")
    }
}

impl TryFrom<FloatRaster> for CenterHeatmap {
    type Error = Error;

    fn try_from(raster: FloatRaster) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::Validation(format!(
                "heatmap raster must have 1 channel, got {}",
                raster.channels()
            )));
        }
        let (w, h) = (raster.width(), raster.height());
        CenterHeatmap::new(w, h, raster.into_data())
    }
}

/// Per-pixel `(dy, dx)` displacement toward the owning object's center.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    width: usize,
    height: usize,
    offsets: Vec<[f32; 2]>,
}

impl OffsetField {
    pub fn new(width: usize, height: usize, offsets: Vec<[f32; 2]>) -> Result<Self> {
        if offsets.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} offset field needs {} vectors, got {}",
                width * height,
                offsets.len()
            )));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("offset field has non-finite values".into()));
        }
        Ok(OffsetField {
            width,
            height,
            offsets,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        OffsetField {
            width,
            height,
            offsets: vec![[0.0; 2]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(dy, dx)` at a pixel.
    pub fn get(&self, y: usize, x: usize) -> [f32; 2] {
        self.offsets[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, dy: f32, dx: f32) {
        self.offsets[y * self.width + x] = [dy, dx];
    }

    pub fn to_raster(&self) -> FloatRaster {
        let data = self.offsets.iter().flatten().copied().collect();
        FloatRaster::new(self.width, self.height, 2, data).expect("offset shape is consistent")
    }
}

impl TryFrom<FloatRaster> for OffsetField {
    type Error = Error;

    fn try_from(raster: FloatRaster) -> Result<Self> {
        if raster.channels() != 2 {
            return Err(Error::Validation(format!(
                "offset raster must have 2 channels, got {}",
                raster.channels()
            )));
        }
        let (w, h) = (raster.width(), raster.height());
        let offsets = raster
            .into_data()
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect();
        OffsetField::new(w, h, offsets)
    }
}

/// The dense predictions of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub semantic: SemanticMap,
    pub heatmap: CenterHeatmap,
    pub offsets: OffsetField,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub y: usize,
    pub x: usize,
    pub score: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub threshold: f32,
    pub nms_window: usize,
    pub top_k: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            threshold: 0.1,
            nms_window: 7,
            top_k: 200,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.nms_window == 0 || self.nms_window.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "nms window must be odd and >= 1, got {}",
                self.nms_window
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Validation(format!(
                "center threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Validation("top_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keeps pixels scoring at least `threshold` that are maximal in their
/// `nms_window` neighbourhood. Among equal scores the earliest pixel in
/// row-major order survives. Results are ordered by descending score, then
/// row-major position, and truncated to `top_k`.
pub fn select_centers(heatmap: &CenterHeatmap, params: &FusionParams) -> Result<Vec<Center>> {
    params.validate()?;
    let (w, h) = (heatmap.width, heatmap.height);
    let r = params.nms_window / 2;
    let mut centers = Vec::new();
    for y in 0..h {
        'pixel: for x in 0..w {
            let s = heatmap.get(y, x);
            if s < params.threshold {
                continue;
            }
            let own = y * w + x;
            for qy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for qx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    let q = heatmap.get(qy, qx);
                    if q > s || (q == s && qy * w + qx < own) {
                        continue 'pixel;
                    }
                }
            }
            centers.push(Center { y, x, score: s });
        }
    }
    // stable sort keeps row-major order among equal scores
    centers.sort_by(|a, b| b.score.total_cmp(&a.score));
    centers.truncate(params.top_k);
    Ok(centers)
}

/// Assigns every thing pixel to the center nearest to its regressed
/// target. Center `i` yields instance id `i + 1`; distance ties go to the
/// lower index.
///
/// `frame_x_shift` is the column at which this frame starts on the
/// concatenated canvas the offsets were predicted on; the target of pixel
/// `(y, x)` is `(y + dy, x + frame_x_shift + dx)` while centers keep their
/// own (left-frame) coordinates. Pass 0 for single-frame grouping.
///
/// Stuff pixels keep their class with instance 0. Thing pixels become void
/// when there are no centers.
pub fn group_instances(
    semantic: &SemanticMap,
    centers: &[Center],
    offsets: &OffsetField,
    spec: &LabelSpec,
    frame_x_shift: usize,
) -> Result<PanopticMap> {
    let (w, h) = (semantic.width, semantic.height);
    if offsets.width != w || offsets.height != h {
        return Err(Error::Dimension(format!(
            "offsets {}x{} vs semantic {w}x{h}",
            offsets.width, offsets.height
        )));
    }
    if let Some(c) = semantic
        .classes
        .iter()
        .find(|&&c| !spec.is_void(c) && spec.kind(c).is_none())
    {
        return Err(Error::Validation(format!("semantic map has unknown class {c}")));
    }
    let void = spec.void_id();
    let shift = frame_x_shift as f64;

    let mut semantic_out = semantic.classes.clone();
    let mut instance_out = vec![0u32; w * h];
    semantic_out
        .par_chunks_mut(w.max(1))
        .zip(instance_out.par_chunks_mut(w.max(1)))
        .enumerate()
        .for_each(|(y, (sem_row, inst_row))| {
            for x in 0..w {
                if !spec.is_thing(sem_row[x]) {
                    continue;
                }
                if centers.is_empty() {
                    sem_row[x] = void;
                    continue;
                }
                let [dy, dx] = offsets.get(y, x);
                let ty = y as f64 + dy as f64;
                let tx = x as f64 + shift + dx as f64;
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, c) in centers.iter().enumerate() {
                    let ey = c.y as f64 - ty;
                    let ex = c.x as f64 - tx;
                    let d = ey * ey + ex * ex;
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                inst_row[x] = best as u32 + 1;
            }
        });
    PanopticMap::new(w, h, semantic_out, instance_out)
}

fn check_shape(name: &str, w: usize, h: usize, ew: usize, eh: usize) -> Result<()> {
    if w != ew || h != eh {
        return Err(Error::Dimension(format!("{name} is {w}x{h}, expected {ew}x{eh}")));
    }
    Ok(())
}

/// Single-frame fusion: centers and grouping from one frame's heads.
pub fn fuse_single(heads: &HeadOutputs, spec: &LabelSpec, params: &FusionParams) -> Result<PanopticMap> {
    let (w, h) = (heads.semantic.width, heads.semantic.height);
    check_shape("heatmap", heads.heatmap.width, heads.heatmap.height, w, h)?;
    let centers = select_centers(&heads.heatmap, params)?;
    group_instances(&heads.semantic, &centers, &heads.offsets, spec, 0)
}

/// Two-frame fusion. Centers come from frame `t` only; frame `t + 1` is
/// grouped against those same centers using offsets predicted on the
/// concatenated canvas, so shared ids in the returned `(p, r)` denote the
/// same object. Objects without a frame-`t` center are void in `r`.
pub fn fuse_pair(
    sem_t: &SemanticMap,
    sem_next: &SemanticMap,
    heatmap_t: &CenterHeatmap,
    offsets_t: &OffsetField,
    offsets_next_to_t: &OffsetField,
    spec: &LabelSpec,
    params: &FusionParams,
) -> Result<(PanopticMap, PanopticMap)> {
    let (w, h) = (sem_t.width, sem_t.height);
    check_shape("next semantic", sem_next.width, sem_next.height, w, h)?;
    check_shape("heatmap", heatmap_t.width, heatmap_t.height, w, h)?;
    check_shape("offsets", offsets_t.width, offsets_t.height, w, h)?;
    check_shape(
        "next offsets",
        offsets_next_to_t.width,
        offsets_next_to_t.height,
        w,
        h,
    )?;
    let centers = select_centers(heatmap_t, params)?;
    let p = group_instances(sem_t, &centers, offsets_t, spec, 0)?;
    let r = group_instances(sem_next, &centers, offsets_next_to_t, spec, w)?;
    Ok((p, r))
}
