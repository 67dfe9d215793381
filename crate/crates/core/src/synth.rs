//! Synthetic scenes with known answers.
//!
//! Objects sit on integer anchors and move by integer velocities, so every
//! mask, tube and center is exact. Ground-truth instance ids are the object
//! index plus one; nearer objects are painted over farther ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_pair, fuse_single, CenterHeatmap, FusionParams, HeadOutputs, OffsetField, SemanticMap};
use crate::stitch::PairPrediction;
use crate::types::{ClassKind, DepthMap, Frame, LabelSpec, PanopticMap, Sequence};

pub const ROAD: u16 = 0;
pub const SKY: u16 = 1;
pub const CAR: u16 = 11;
pub const PERSON: u16 = 12;
pub const VOID: u16 = 255;

/// Label set used by generated scenes.
pub fn default_labels() -> LabelSpec {
    LabelSpec::from_triples(
        [
            (ROAD, "road", ClassKind::Stuff),
            (SKY, "sky", ClassKind::Stuff),
            (CAR, "car", ClassKind::Thing),
            (PERSON, "person", ClassKind::Thing),
        ],
        VOID,
    )
    .expect("static label set is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rect { height: usize, width: usize },
    Disk { radius: usize },
}

impl Shape {
    /// Pixel offsets relative to the anchor, row-major.
    fn footprint(&self) -> Vec<(i64, i64)> {
        match *self {
            Shape::Rect { height, width } => {
                let (top, left) = ((height as i64 - 1) / 2, (width as i64 - 1) / 2);
                (0..height as i64)
                    .flat_map(|dy| (0..width as i64).map(move |dx| (dy - top, dx - left)))
                    .collect()
            }
            Shape::Disk { radius } => {
                let r = radius as i64;
                (-r..=r)
                    .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
                    .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub class: u16,
    /// Anchor `(row, col)` at frame 0.
    pub anchor: [i64; 2],
    /// Anchor displacement per frame, `(rows, cols)`.
    #[serde(default)]
    pub velocity: [i64; 2],
    pub depth: f64,
    #[serde(default)]
    pub depth_velocity: f64,
}

impl ObjectSpec {
    pub fn anchor_at(&self, t: usize) -> (i64, i64) {
        (
            self.anchor[0] + self.velocity[0] * t as i64,
            self.anchor[1] + self.velocity[1] * t as i64,
        )
    }

    pub fn depth_at(&self, t: usize) -> f64 {
        self.depth + self.depth_velocity * t as f64
    }
}

/// Stuff plane behind all objects; depth grows by `gradient` per row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub class: u16,
    pub depth: f64,
    #[serde(default)]
    pub gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub objects: Vec<ObjectSpec>,
    pub background: Background,
    #[serde(default)]
    pub seed: u64,
    /// Crop objects at the border instead of rejecting the config.
    #[serde(default)]
    pub clip: bool,
}

impl SceneConfig {
    pub fn validate(&self, spec: &LabelSpec) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Validation("scene needs a nonzero size and frame count".into()));
        }
        if !spec.is_stuff(self.background.class) {
            return Err(Error::Validation(format!(
                "background class {} is not a stuff class",
                self.background.class
            )));
        }
        let far_row = (self.height - 1) as f64;
        let bg = self.background;
        if !(bg.depth > 0.0 && bg.depth + bg.gradient * far_row > 0.0 && bg.gradient.is_finite()) {
            return Err(Error::Validation("background depth must stay positive".into()));
        }
        if self.objects.len() > u16::MAX as usize {
            return Err(Error::Validation("too many objects".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !spec.is_thing(o.class) {
                return Err(Error::Validation(format!("object {i} has non-thing class {}", o.class)));
            }
            if matches!(o.shape, Shape::Rect { height: 0, .. } | Shape::Rect { width: 0, .. }) {
                return Err(Error::Validation(format!("object {i} has an empty shape")));
            }
            let fp = o.shape.footprint();
            for t in 0..self.frames {
                let d = o.depth_at(t);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::Validation(format!("object {i} has depth {d} at frame {t}")));
                }
                if self.clip {
                    continue;
                }
                let (ay, ax) = o.anchor_at(t);
                let inside = fp.iter().all(|(dy, dx)| {
                    let (y, x) = (ay + dy, ax + dx);
                    y >= 0 && x >= 0 && y < self.height as i64 && x < self.width as i64
                });
                if !inside {
                    return Err(Error::Validation(format!("object {i} leaves the image at frame {t}")));
                }
            }
        }
        Ok(())
    }

    /// A random valid scene. Objects ride in separate horizontal bands, so
    /// they never overlap and their anchors stay farther apart than the
    /// default NMS window.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.random_range(32..=64);
        let height = rng.random_range(24..=48);
        let frames = rng.random_range(2..=6);
        let bands = rng.random_range(1..=(height / 10).min(4));
        let band_h = height / bands;
        let objects = (0..bands)
            .map(|b| {
                let shape = if rng.random_bool(0.5) {
                    Shape::Rect {
                        height: rng.random_range(2..=band_h - 2),
                        width: rng.random_range(2..=10),
                    }
                } else {
                    Shape::Disk {
                        radius: rng.random_range(1..=((band_h - 2) / 2).min(8)),
                    }
                };
                let fp = shape.footprint();
                let min_dx = fp.iter().map(|p| p.1).min().unwrap();
                let max_dx = fp.iter().map(|p| p.1).max().unwrap();
                let row = (b * band_h + band_h / 2) as i64;
                let vx: i64 = rng.random_range(-2..=2);
                let travel = vx * (frames as i64 - 1);
                let lo = -min_dx - travel.min(0);
                let hi = width as i64 - 1 - max_dx - travel.max(0);
                let col = rng.random_range(lo..=hi);
                ObjectSpec {
                    shape,
                    class: if rng.random_bool(0.5) { CAR } else { PERSON },
                    anchor: [row, col],
                    velocity: [0, vx],
                    depth: rng.random_range(5.0..40.0),
                    depth_velocity: rng.random_range(-0.5..0.5),
                }
            })
            .collect();
        SceneConfig {
            width,
            height,
            frames,
            objects,
            background: Background {
                class: if rng.random_bool(0.5) { ROAD } else { SKY },
                depth: rng.random_range(50.0..70.0),
                gradient: rng.random_range(-0.5..0.5),
            },
            seed,
            clip: false,
        }
    }
}

/// Ground truth plus the head outputs a perfect network would emit.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub gt: Sequence,
    pub heads: Vec<HeadOutputs>,
    /// Offsets from frame `t + 1` pixels to frame-`t` anchors on the
    /// concatenated canvas; one entry per consecutive pair.
    pub pair_offsets: Vec<OffsetField>,
}

struct Raster {
    panoptic: PanopticMap,
    depth: DepthMap,
    owner: Vec<Option<usize>>,
}

fn rasterize(cfg: &SceneConfig, t: usize) -> Result<Raster> {
    let (w, h) = (cfg.width, cfg.height);
    let bg = cfg.background;
    let mut semantic = vec![bg.class; w * h];
    let mut instance = vec![0u32; w * h];
    let mut depth: Vec<f64> = (0..h)
        .flat_map(|y| std::iter::repeat_n(bg.depth + bg.gradient * y as f64, w))
        .collect();
    let mut owner = vec![None; w * h];
    let mut order: Vec<usize> = (0..cfg.objects.len()).collect();
    // far to near; equal depths paint in index order
    order.sort_by(|&a, &b| cfg.objects[b].depth_at(t).total_cmp(&cfg.objects[a].depth_at(t)).then(a.cmp(&b)));
    for i in order {
        let o = &cfg.objects[i];
        let (ay, ax) = o.anchor_at(t);
        for (dy, dx) in o.shape.footprint() {
            let (y, x) = (ay + dy, ax + dx);
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                continue;
            }
            let p = y as usize * w + x as usize;
            semantic[p] = o.class;
            instance[p] = i as u32 + 1;
            depth[p] = o.depth_at(t);
            owner[p] = Some(i);
        }
    }
    Ok(Raster {
        panoptic: PanopticMap::new(w, h, semantic, instance)?,
        depth: DepthMap::from_raw(w, h, depth)?,
        owner,
    })
}

/// Offsets from each owned pixel of `r` to the anchors in `targets`, with
/// the target column shifted by `x_shift` (canvas convention).
fn offsets_to(cfg: &SceneConfig, r: &Raster, targets: &[(i64, i64)], x_shift: usize) -> Result<OffsetField> {
    let (w, h) = (cfg.width, cfg.height);
    let offsets = r
        .owner
        .iter()
        .enumerate()
        .map(|(p, o)| match o {
            Some(i) => {
                let (y, x) = ((p / w) as i64, (p % w) as i64);
                let (ay, ax) = targets[*i];
                [(ay - y) as f32, (ax - x - x_shift as i64) as f32]
            }
            None => [0.0, 0.0],
        })
        .collect();
    OffsetField::new(w, h, offsets)
}

/// Renders the scene and the matching head outputs.
pub fn generate_scene(cfg: &SceneConfig, spec: &LabelSpec) -> Result<SyntheticScene> {
    cfg.validate(spec)?;
    let (w, h) = (cfg.width, cfg.height);
    let rasters = (0..cfg.frames)
        .into_par_iter()
        .map(|t| rasterize(cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let anchors: Vec<Vec<(i64, i64)>> = (0..cfg.frames)
        .map(|t| cfg.objects.iter().map(|o| o.anchor_at(t)).collect())
        .collect();

    let mut heads = Vec::with_capacity(cfg.frames);
    for (t, r) in rasters.iter().enumerate() {
        let mut heatmap = CenterHeatmap::zeros(w, h);
        for &(ay, ax) in &anchors[t] {
            if ay >= 0 && ax >= 0 && ay < h as i64 && ax < w as i64 {
                heatmap.set(ay as usize, ax as usize, 1.0)?;
            }
        }
        heads.push(HeadOutputs {
            semantic: SemanticMap::from_panoptic(&r.panoptic),
            heatmap,
            offsets: offsets_to(cfg, r, &anchors[t], 0)?,
        });
    }
    let pair_offsets = (1..cfg.frames)
        .map(|t| offsets_to(cfg, &rasters[t], &anchors[t - 1], w))
        .collect::<Result<Vec<_>>>()?;
    let frames = rasters.into_iter().map(|r| Frame::new(r.panoptic, Some(r.depth))).collect();
    Ok(SyntheticScene {
        gt: Sequence::new(format!("synth-{}", cfg.seed), frames)?,
        heads,
        pair_offsets,
    })
}

/// Runs two-frame fusion over every consecutive pair, producing stitcher
/// input.
pub fn fuse_scene(scene: &SyntheticScene, spec: &LabelSpec, params: &FusionParams) -> Result<Vec<PairPrediction>> {
    let n = scene.heads.len();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if t + 1 < n {
            let (a, b) = (&scene.heads[t], &scene.heads[t + 1]);
            let (p, r) = fuse_pair(
                &a.semantic,
                &b.semantic,
                &a.heatmap,
                &a.offsets,
                &scene.pair_offsets[t],
                spec,
                params,
            )?;
            out.push(PairPrediction::new(p, r));
        } else {
            out.push(PairPrediction::last(fuse_single(&scene.heads[t], spec, params)?));
        }
    }
    Ok(out)
}

/// Swaps the labels of two ground-truth instances from `from_frame`
/// (0-based) onward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSwap {
    pub from_frame: usize,
    pub a: u32,
    pub b: u32,
}

/// Deterministic corruptions applied to a ground-truth sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Square structuring-element radius; eroded pixels become void.
    #[serde(default)]
    pub erosion: usize,
    #[serde(default)]
    pub id_swap: Option<IdSwap>,
    /// Instance ids whose pixels become void.
    #[serde(default)]
    pub drop: Vec<u32>,
    #[serde(default = "one")]
    pub depth_factor: f64,
    /// Each instance mask moves by a random offset in `[-j, j]²` per frame.
    #[serde(default)]
    pub center_jitter: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            erosion: 0,
            id_swap: None,
            drop: Vec::new(),
            depth_factor: 1.0,
            center_jitter: 0,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_factor > 0.0 && self.depth_factor.is_finite()) {
            return Err(Error::Validation(format!(
                "depth factor must be positive, got {}",
                self.depth_factor
            )));
        }
        Ok(())
    }
}

fn erode(map: &PanopticMap, radius: usize, spec: &LabelSpec) -> PanopticMap {
    let (w, h) = (map.width(), map.height());
    let r = radius as i64;
    let mut out = map.clone();
    let (sem, inst) = out.parts_mut();
    for y in 0..h {
        for x in 0..w {
            let s = map.segment_at(y * w + x);
            if !spec.is_thing(s.class) {
                continue;
            }
            let interior = (-r..=r).all(|dy| {
                (-r..=r).all(|dx| {
                    let (qy, qx) = (y as i64 + dy, x as i64 + dx);
                    qy >= 0
                        && qx >= 0
                        && qy < h as i64
                        && qx < w as i64
                        && map.segment_at(qy as usize * w + qx as usize) == s
                })
            });
            if !interior {
                sem[y * w + x] = spec.void_id();
                inst[y * w + x] = 0;
            }
        }
    }
    out
}

fn jitter(map: &PanopticMap, rng: &mut ChaCha8Rng, j: usize, spec: &LabelSpec) -> PanopticMap {
    let (w, h) = (map.width(), map.height());
    let mut ids: Vec<u32> = map
        .instance()
        .iter()
        .zip(map.semantic())
        .filter(|(_, c)| spec.is_thing(**c))
        .map(|(i, _)| *i)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let j = j as i64;
    let shifts: Vec<(u32, i64, i64)> = ids
        .into_iter()
        .map(|id| (id, rng.random_range(-j..=j), rng.random_range(-j..=j)))
        .collect();
    let mut out = map.clone();
    {
        let (sem, inst) = out.parts_mut();
        for p in 0..w * h {
            if spec.is_thing(map.semantic()[p]) {
                sem[p] = spec.void_id();
                inst[p] = 0;
            }
        }
        for &(id, sy, sx) in &shifts {
            for p in 0..w * h {
                if map.instance()[p] != id || !spec.is_thing(map.semantic()[p]) {
                    continue;
                }
                let (y, x) = ((p / w) as i64 + sy, (p % w) as i64 + sx);
                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                    continue;
                }
                let q = y as usize * w + x as usize;
                sem[q] = map.semantic()[p];
                inst[q] = id;
            }
        }
    }
    out
}

/// Applies drop, swap, jitter, erosion and depth scaling in that order.
pub fn perturb(gt: &Sequence, spec: &LabelSpec, knobs: &PerturbationSpec) -> Result<Sequence> {
    knobs.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(knobs.seed);
    let mut frames = Vec::with_capacity(gt.len());
    for (t, f) in gt.frames().iter().enumerate() {
        let mut map = f.panoptic.clone();
        {
            let src = f.panoptic.clone();
            let (sem, inst) = map.parts_mut();
            for p in 0..src.len() {
                let s = src.segment_at(p);
                if !spec.is_thing(s.class) {
                    continue;
                }
                if knobs.drop.contains(&s.instance) {
                    sem[p] = spec.void_id();
                    inst[p] = 0;
                    continue;
                }
                if let Some(sw) = knobs.id_swap.filter(|sw| t >= sw.from_frame) {
                    let partner = if s.instance == sw.a {
                        sw.b
                    } else if s.instance == sw.b {
                        sw.a
                    } else {
                        continue;
                    };
                    // the partner's class travels with its id
                    let partner_class = (0..src.len())
                        .map(|q| src.segment_at(q))
                        .find(|q| q.instance == partner && spec.is_thing(q.class))
                        .map_or(s.class, |q| q.class);
                    sem[p] = partner_class;
                    inst[p] = partner;
                }
            }
        }
        if knobs.center_jitter > 0 {
            map = jitter(&map, &mut rng, knobs.center_jitter, spec);
        }
        if knobs.erosion > 0 {
            map = erode(&map, knobs.erosion, spec);
        }
        let depth = match &f.depth {
            Some(d) if knobs.depth_factor != 1.0 => Some(d.scaled(knobs.depth_factor)?),
            other => other.clone(),
        };
        frames.push(Frame::new(map, depth));
    }
    Sequence::new(gt.id().to_string(), frames)
}
