//! Label specification and the raster types shared by every stage:
//! panoptic maps, depth maps, spatio-temporal tubes and sequences.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a class is countable (carries instance IDs) or amorphous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u16,
    pub name: String,
    pub kind: ClassKind,
}

#[derive(Deserialize, Serialize)]
struct LabelSpecRepr {
    classes: Vec<ClassInfo>,
    void_id: u16,
}

/// The set of semantic classes plus the reserved void label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpecRepr", into = "LabelSpecRepr")]
pub struct LabelSpec {
    classes: Vec<ClassInfo>,
    void_id: u16,
    kinds: Vec<Option<ClassKind>>,
}

impl TryFrom<LabelSpecRepr> for LabelSpec {
    type Error = Error;

    fn try_from(repr: LabelSpecRepr) -> Result<Self> {
        LabelSpec::new(repr.classes, repr.void_id)
    }
}

impl From<LabelSpec> for LabelSpecRepr {
    fn from(spec: LabelSpec) -> Self {
        LabelSpecRepr {
            classes: spec.classes,
            void_id: spec.void_id,
        }
    }
}

impl LabelSpec {
    pub fn new(classes: Vec<ClassInfo>, void_id: u16) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation("label spec has no classes".into()));
        }
        let max_id = classes.iter().map(|c| c.id).max().unwrap_or(0);
        let mut kinds = vec![None; max_id as usize + 1];
        for class in &classes {
            if class.id == void_id {
                return Err(Error::Validation(format!(
                    "class {} ({}) collides with void id",
                    class.id, class.name
                )));
            }
            let slot = &mut kinds[class.id as usize];
            if slot.is_some() {
                return Err(Error::Validation(format!("duplicate class id {}", class.id)));
            }
            *slot = Some(class.kind);
        }
        Ok(LabelSpec {
            classes,
            void_id,
            kinds,
        })
    }

    /// Convenience constructor from `(id, name, kind)` triples.
    pub fn from_triples<'a>(
        classes: impl IntoIterator<Item = (u16, &'a str, ClassKind)>,
        void_id: u16,
    ) -> Result<Self> {
        let classes = classes
            .into_iter()
            .map(|(id, name, kind)| ClassInfo {
                id,
                name: name.to_string(),
                kind,
            })
            .collect();
        LabelSpec::new(classes, void_id)
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn void_id(&self) -> u16 {
        self.void_id
    }

    /// Kind of a class id; `None` for void and for unknown ids.
    #[inline]
    pub fn kind(&self, class: u16) -> Option<ClassKind> {
        self.kinds.get(class as usize).copied().flatten()
    }

    #[inline]
    pub fn is_thing(&self, class: u16) -> bool {
        self.kind(class) == Some(ClassKind::Thing)
    }

    #[inline]
    pub fn is_stuff(&self, class: u16) -> bool {
        self.kind(class) == Some(ClassKind::Stuff)
    }

    #[inline]
    pub fn is_void(&self, class: u16) -> bool {
        class == self.void_id
    }

    pub fn name(&self, class: u16) -> Option<&str> {
        self.classes
            .iter()
            .find(|c| c.id == class)
            .map(|c| c.name.as_str())
    }
}

/// Key of a panoptic region: the `(semantic class, instance id)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentId {
    pub class: u16,
    pub instance: u32,
}

impl SegmentId {
    pub const fn new(class: u16, instance: u32) -> Self {
        SegmentId { class, instance }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.class, self.instance)
    }
}

/// Per-pixel `(semantic class, instance id)` raster, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticMap {
    width: usize,
    height: usize,
    semantic: Vec<u16>,
    instance: Vec<u32>,
}

impl PanopticMap {
    pub fn new(width: usize, height: usize, semantic: Vec<u16>, instance: Vec<u32>) -> Result<Self> {
        let n = width * height;
        if semantic.len() != n || instance.len() != n {
            return Err(Error::Dimension(format!(
                "{width}x{height} map needs {n} pixels, got {} semantic / {} instance",
                semantic.len(),
                instance.len()
            )));
        }
        Ok(PanopticMap {
            width,
            height,
            semantic,
            instance,
        })
    }

    /// A map where every pixel carries the same label.
    pub fn filled(width: usize, height: usize, class: u16, instance: u32) -> Self {
        PanopticMap {
            width,
            height,
            semantic: vec![class; width * height],
            instance: vec![instance; width * height],
        }
    }

    /// Builds a map from rows of `(class, instance)` pairs.
    pub fn from_rows(rows: &[&[(u16, u32)]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let (semantic, instance) = rows.iter().flat_map(|r| r.iter().copied()).unzip();
        PanopticMap::new(width, height, semantic, instance)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn semantic(&self) -> &[u16] {
        &self.semantic
    }

    pub fn instance(&self) -> &[u32] {
        &self.instance
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (u16, u32) {
        let i = y * self.width + x;
        (self.semantic[i], self.instance[i])
    }

    #[inline]
    pub fn segment_at(&self, i: usize) -> SegmentId {
        SegmentId::new(self.semantic[i], self.instance[i])
    }

    pub fn same_shape(&self, other: &PanopticMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn into_parts(self) -> (usize, usize, Vec<u16>, Vec<u32>) {
        (self.width, self.height, self.semantic, self.instance)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [u16], &mut [u32]) {
        (&mut self.semantic, &mut self.instance)
    }

    /// Largest instance id present (0 if none).
    pub fn max_instance(&self) -> u32 {
        self.instance.iter().copied().max().unwrap_or(0)
    }

    /// Checks every pixel against the label spec: known class or void,
    /// instance 0 on stuff and void, instance >= 1 on things.
    pub fn validate(&self, spec: &LabelSpec) -> Result<()> {
        for (i, (&class, &inst)) in self.semantic.iter().zip(&self.instance).enumerate() {
            let (y, x) = (i / self.width.max(1), i % self.width.max(1));
            if spec.is_void(class) {
                if inst != 0 {
                    return Err(Error::Validation(format!(
                        "void pixel ({y},{x}) carries instance {inst}"
                    )));
                }
                continue;
            }
            match spec.kind(class) {
                None => {
                    return Err(Error::Validation(format!(
                        "pixel ({y},{x}) has unknown class {class}"
                    )))
                }
                Some(ClassKind::Stuff) if inst != 0 => {
                    return Err(Error::Validation(format!(
                        "stuff pixel ({y},{x}) of class {class} carries instance {inst}"
                    )))
                }
                Some(ClassKind::Thing) if inst == 0 => {
                    return Err(Error::Validation(format!(
                        "thing pixel ({y},{x}) of class {class} has instance 0"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Per-pixel metric depth. Missing pixels are stored as NaN internally.
#[derive(Clone, Debug)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PartialEq for DepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

impl DepthMap {
    /// Builds a depth map from optional per-pixel values.
    pub fn new(width: usize, height: usize, values: Vec<Option<f64>>) -> Result<Self> {
        Self::from_raw(
            width,
            height,
            values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        )
    }

    /// Builds a depth map where NaN marks a missing pixel. Any other value
    /// must be finite and strictly positive.
    pub fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} depth map needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_nan() && !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Validation(format!("invalid depth value {bad}")));
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    pub fn missing(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![f64::NAN; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_raw(width, height, vec![depth; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Option<f64> {
        self.at(y * self.width + x)
    }

    #[inline]
    pub fn at(&self, i: usize) -> Option<f64> {
        let v = self.values[i];
        (!v.is_nan()).then_some(v)
    }

    /// Raw values, NaN for missing.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn present_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    pub(crate) fn set(&mut self, i: usize, value: Option<f64>) {
        self.values[i] = value.unwrap_or(f64::NAN);
    }

    /// Multiplies every present value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_raw(
            self.width,
            self.height,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn matches(&self, map: &PanopticMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }
}

/// One spatio-temporal voxel of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Voxel {
    pub frame: u32,
    pub y: u32,
    pub x: u32,
}

/// A `(class, instance)` region across the frames of a clip. Pixels are
/// kept sorted in `(frame, y, x)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tube {
    pub class: u16,
    pub instance: u32,
    pixels: Vec<Voxel>,
}

impl Tube {
    pub fn new(class: u16, instance: u32, mut pixels: Vec<Voxel>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Tube {
            class,
            instance,
            pixels,
        }
    }

    pub fn id(&self) -> SegmentId {
        SegmentId::new(self.class, self.instance)
    }

    pub fn pixels(&self) -> &[Voxel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Stacks maps side by side; pixel `(y, x)` of map `j` lands at
/// `(y, x + sum of the widths of maps before j)`.
pub fn concat_horizontal<'a, I>(maps: I) -> Result<PanopticMap>
where
    I: IntoIterator<Item = &'a PanopticMap>,
{
    let maps: Vec<&PanopticMap> = maps.into_iter().collect();
    let Some(first) = maps.first() else {
        return Err(Error::Dimension("cannot concatenate an empty list".into()));
    };
    if maps.len() == 1 {
        return Ok((*first).clone());
    }
    let height = first.height();
    if let Some(bad) = maps.iter().find(|m| m.height() != height) {
        return Err(Error::Dimension(format!(
            "height {} does not match {height}",
            bad.height()
        )));
    }
    let width: usize = maps.iter().map(|m| m.width()).sum();
    let mut semantic = Vec::with_capacity(width * height);
    let mut instance = Vec::with_capacity(width * height);
    for y in 0..height {
        for m in &maps {
            let row = y * m.width()..(y + 1) * m.width();
            semantic.extend_from_slice(&m.semantic()[row.clone()]);
            instance.extend_from_slice(&m.instance()[row]);
        }
    }
    PanopticMap::new(width, height, semantic, instance)
}

/// Groups the non-void pixels of a clip into tubes keyed by
/// `(class, instance)`. Stuff tubes have instance 0. Tubes come back sorted
/// by key.
pub fn extract_tubes(clip: &[PanopticMap], spec: &LabelSpec) -> Result<Vec<Tube>> {
    let Some(first) = clip.first() else {
        return Err(Error::Dimension("empty clip".into()));
    };
    let mut tubes: BTreeMap<SegmentId, Vec<Voxel>> = BTreeMap::new();
    for (t, map) in clip.iter().enumerate() {
        if !map.same_shape(first) {
            return Err(Error::Dimension(format!(
                "frame {t} is {}x{}, expected {}x{}",
                map.width(),
                map.height(),
                first.width(),
                first.height()
            )));
        }
        map.validate(spec)?;
        for i in 0..map.len() {
            let seg = map.segment_at(i);
            if spec.is_void(seg.class) {
                continue;
            }
            tubes.entry(seg).or_default().push(Voxel {
                frame: t as u32,
                y: (i / map.width()) as u32,
                x: (i % map.width()) as u32,
            });
        }
    }
    Ok(tubes
        .into_iter()
        .map(|(id, pixels)| Tube {
            class: id.class,
            instance: id.instance,
            pixels,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub panoptic: PanopticMap,
    pub depth: Option<DepthMap>,
}

impl Frame {
    pub fn new(panoptic: PanopticMap, depth: Option<DepthMap>) -> Self {
        Frame { panoptic, depth }
    }
}

impl From<PanopticMap> for Frame {
    fn from(panoptic: PanopticMap) -> Self {
        Frame {
            panoptic,
            depth: None,
        }
    }
}

/// An ordered, non-empty run of equally sized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    id: String,
    frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Validation("sequence has no frames".into()));
        };
        let (w, h) = (first.panoptic.width(), first.panoptic.height());
        for (t, f) in frames.iter().enumerate() {
            if f.panoptic.width() != w || f.panoptic.height() != h {
                return Err(Error::Dimension(format!(
                    "frame {t} is {}x{}, expected {w}x{h}",
                    f.panoptic.width(),
                    f.panoptic.height()
                )));
            }
            if let Some(d) = &f.depth {
                if !d.matches(&f.panoptic) {
                    return Err(Error::Dimension(format!(
                        "depth of frame {t} is {}x{}, expected {w}x{h}",
                        d.width(),
                        d.height()
                    )));
                }
            }
        }
        Ok(Sequence {
            id: id.into(),
            frames,
        })
    }

    pub fn from_maps(id: impl Into<String>, maps: Vec<PanopticMap>) -> Result<Self> {
        Sequence::new(id, maps.into_iter().map(Frame::from).collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn panoptic(&self, t: usize) -> &PanopticMap {
        &self.frames[t].panoptic
    }

    pub fn maps(&self) -> impl Iterator<Item = &PanopticMap> {
        self.frames.iter().map(|f| &f.panoptic)
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn validate(&self, spec: &LabelSpec) -> Result<()> {
        self.frames.iter().try_for_each(|f| f.panoptic.validate(spec))
    }
}
