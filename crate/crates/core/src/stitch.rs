//! ID propagation across overlapping two-frame predictions.
//!
//! Each frame `t` comes with `P_t` (its own prediction) and `R_t` (the
//! prediction of frame `t + 1` made jointly with frame `t`, sharing ids with
//! `P_t`). Fresh ids of `P_{t+1}` are lifted above every id used so far,
//! then ids flow from `R_t` into `P_{t+1}` wherever a same-class region pair
//! are each other's best mask-IoU partner.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::types::{LabelSpec, PanopticMap, SegmentId};

/// Prediction for frame `t` and, except for the final frame, the jointly
/// predicted frame `t + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub p: PanopticMap,
    pub r: Option<PanopticMap>,
}

impl PairPrediction {
    pub fn new(p: PanopticMap, r: PanopticMap) -> Self {
        PairPrediction { p, r: Some(r) }
    }

    pub fn last(p: PanopticMap) -> Self {
        PairPrediction { p, r: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StitchOptions {
    /// Region pairs with IoU below this never propagate. 0 keeps every
    /// overlapping pair.
    pub min_iou: f64,
}

impl Default for StitchOptions {
    fn default() -> Self {
        StitchOptions { min_iou: 0.0 }
    }
}

/// Exact IoU as `intersection / union`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    fn cmp_exact(&self, other: &Ratio) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }

    fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug)]
struct Candidate {
    r: SegmentId,
    p: SegmentId,
    iou: Ratio,
}

/// Thing-region areas and same-class pairwise overlaps between two rasters
/// of the same frame.
fn overlapping_pairs(r: &PanopticMap, p: &PanopticMap, spec: &LabelSpec) -> Vec<Candidate> {
    let mut r_area: HashMap<SegmentId, u64> = HashMap::new();
    let mut p_area: HashMap<SegmentId, u64> = HashMap::new();
    let mut inter: HashMap<(SegmentId, SegmentId), u64> = HashMap::new();
    for i in 0..r.len() {
        let rs = r.segment_at(i);
        let ps = p.segment_at(i);
        let r_thing = spec.is_thing(rs.class);
        let p_thing = spec.is_thing(ps.class);
        if r_thing {
            *r_area.entry(rs).or_default() += 1;
        }
        if p_thing {
            *p_area.entry(ps).or_default() += 1;
        }
        if r_thing && p_thing && rs.class == ps.class {
            *inter.entry((rs, ps)).or_default() += 1;
        }
    }
    inter
        .into_iter()
        .map(|((rs, ps), i)| Candidate {
            r: rs,
            p: ps,
            iou: Ratio {
                num: i,
                den: r_area[&rs] + p_area[&ps] - i,
            },
        })
        .collect()
}

/// Mutual-best matches from `r` regions to `p` regions, returned as the
/// id each matched `p` region should take.
fn propagate(r: &PanopticMap, p: &PanopticMap, spec: &LabelSpec, opts: &StitchOptions) -> BTreeMap<SegmentId, u32> {
    let mut candidates: Vec<Candidate> = overlapping_pairs(r, p, spec)
        .into_iter()
        .filter(|c| c.iou.value() >= opts.min_iou)
        .collect();
    candidates.sort_by(|a, b| a.iou.cmp_exact(&b.iou).then(a.r.cmp(&b.r)).then(a.p.cmp(&b.p)));

    // ascending IoU, so each key ends up with its largest-IoU partner
    let mut best_p: BTreeMap<SegmentId, SegmentId> = BTreeMap::new();
    let mut best_r: BTreeMap<SegmentId, SegmentId> = BTreeMap::new();
    for c in &candidates {
        best_p.insert(c.r, c.p);
        best_r.insert(c.p, c.r);
    }
    best_p
        .iter()
        .filter(|(r_id, p_id)| best_r.get(p_id) == Some(r_id))
        .map(|(r_id, p_id)| (*p_id, r_id.instance))
        .collect()
}

fn relabel(map: &mut PanopticMap, remap: &BTreeMap<SegmentId, u32>) {
    if remap.is_empty() {
        return;
    }
    let (sem, inst) = map.parts_mut();
    for (c, i) in sem.iter().zip(inst.iter_mut()) {
        if let Some(&new) = remap.get(&SegmentId::new(*c, *i)) {
            *i = new;
        }
    }
}

fn lift_ids(map: &mut PanopticMap, offset: u32) -> Result<()> {
    let (_, inst) = map.parts_mut();
    for i in inst.iter_mut().filter(|i| **i != 0) {
        *i = i
            .checked_add(offset)
            .ok_or_else(|| Error::OutOfRange("instance id overflow while stitching".into()))?;
    }
    Ok(())
}

/// Gives every class after the first that shares an instance id a fresh id
/// above the current maximum, renaming `p` and `r` with one table so the
/// pair stays consistent.
fn disambiguate(p: &mut PanopticMap, r: Option<&mut PanopticMap>, spec: &LabelSpec) {
    let mut classes: BTreeMap<u32, BTreeSet<u16>> = BTreeMap::new();
    let maps: Vec<&PanopticMap> = std::iter::once(&*p).chain(r.as_deref()).collect();
    for m in &maps {
        for (c, i) in m.semantic().iter().zip(m.instance()) {
            if *i != 0 && spec.is_thing(*c) {
                classes.entry(*i).or_default().insert(*c);
            }
        }
    }
    let mut next = maps.iter().map(|m| m.max_instance()).max().unwrap_or(0);
    let mut remap = BTreeMap::new();
    for (id, set) in &classes {
        for c in set.iter().skip(1) {
            next += 1;
            remap.insert(SegmentId::new(*c, *id), next);
        }
    }
    relabel(p, &remap);
    if let Some(r) = r {
        relabel(r, &remap);
    }
}

/// Stitches per-frame predictions into a sequence with consistent ids.
/// Returns one map per input entry. Every entry but the last must carry
/// its `r` prediction. An instance id never labels two classes in the
/// output.
pub fn stitch_sequence(preds: &[PairPrediction], spec: &LabelSpec, opts: &StitchOptions) -> Result<Vec<PanopticMap>> {
    let Some(first) = preds.first() else {
        return Err(Error::Validation("nothing to stitch".into()));
    };
    for (t, pair) in preds.iter().enumerate() {
        if !pair.p.same_shape(&first.p) {
            return Err(Error::Dimension(format!("P of frame {t} differs in size")));
        }
        pair.p.validate(spec)?;
        match &pair.r {
            Some(r) => {
                if !r.same_shape(&first.p) {
                    return Err(Error::Dimension(format!("R of frame {t} differs in size")));
                }
                r.validate(spec)?;
            }
            None if t + 1 < preds.len() => {
                return Err(Error::Validation(format!("frame {t} lacks its next-frame prediction")));
            }
            None => {}
        }
    }

    let mut work: Vec<(PanopticMap, Option<PanopticMap>)> = preds
        .iter()
        .map(|pair| {
            let (mut p, mut r) = (pair.p.clone(), pair.r.clone());
            disambiguate(&mut p, r.as_mut(), spec);
            (p, r)
        })
        .collect();
    let mut rest = work.split_off(1);
    let (first_p, first_r) = work.pop().expect("non-empty");

    let mut running_max = first_p.max_instance().max(first_r.as_ref().map_or(0, |r| r.max_instance()));
    let mut out = Vec::with_capacity(preds.len());
    out.push(first_p);
    let mut r_cur = first_r;

    for (mut p_next, mut r_next) in rest.drain(..) {
        lift_ids(&mut p_next, running_max)?;
        if let Some(r) = r_next.as_mut() {
            lift_ids(r, running_max)?;
        }
        running_max = running_max
            .max(p_next.max_instance())
            .max(r_next.as_ref().map_or(0, |r| r.max_instance()));

        let r_prev = r_cur.as_ref().expect("validated above");
        let remap = propagate(r_prev, &p_next, spec, opts);
        relabel(&mut p_next, &remap);
        if let Some(r) = r_next.as_mut() {
            relabel(r, &remap);
        }
        out.push(p_next);
        r_cur = r_next;
    }
    Ok(out)
}
