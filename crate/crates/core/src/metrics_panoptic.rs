//! Panoptic quality over images (PQ), over k-frame tubes (VPQ^k), and with
//! depth-inlier filtering of predictions (DVPQ^k_λ).
//!
//! Two evaluation routes exist for VPQ and must agree exactly:
//!
//! - the tube route sums per-frame overlap tables over each window, which
//!   is what a `(class, id)` tube spanning `k` frames amounts to;
//! - the concatenation route stitches each window into one wide image and
//!   scores the resulting image list with [`pq`].
//!
//! IoU sums are accumulated in 64.64 fixed point so that merging is exact,
//! associative and commutative; window order and thread scheduling never
//! change a digit of the report.
//!
//! Void handling: ground-truth void pixels are removed from predicted
//! segments before IoU, and an unmatched prediction lying more than half on
//! ground-truth void is not a false positive.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{concat_horizontal, ClassKind, DepthMap, Frame, LabelSpec, PanopticMap, Sequence, Tube, Voxel};

/// λ values used for DVPQ.
pub const DEFAULT_LAMBDAS: [f64; 3] = [0.1, 0.25, 0.5];
pub const CITYSCAPES_KS: [usize; 4] = [1, 2, 3, 4];
pub const SEMKITTI_KS: [usize; 4] = [1, 5, 10, 20];

const FRAC_BITS: u32 = 64;

/// Sum of IoU values in unsigned 64.64 fixed point. Each IoU `i / u` is
/// stored as `floor(i * 2^64 / u)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IouSum(u128);

impl IouSum {
    pub fn from_ratio(intersection: u64, union: u64) -> Self {
        debug_assert!(union > 0 && intersection <= union);
        IouSum(((intersection as u128) << FRAC_BITS) / union as u128)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 2f64.powi(FRAC_BITS as i32)
    }

    pub fn raw(self) -> u128 {
        self.0
    }
}

impl std::ops::Add for IouSum {
    type Output = IouSum;

    fn add(self, rhs: IouSum) -> IouSum {
        IouSum(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for IouSum {
    fn add_assign(&mut self, rhs: IouSum) {
        self.0 += rhs.0;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: IouSum,
}

impl ClassStats {
    fn merge(&mut self, other: &ClassStats) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

/// Per-class TP/FP/FN counts and IoU sums.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchStats {
    classes: BTreeMap<u16, ClassStats>,
}

impl MatchStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn class(&self, class: u16) -> ClassStats {
        self.classes.get(&class).copied().unwrap_or_default()
    }

    pub fn classes(&self) -> impl Iterator<Item = (u16, &ClassStats)> {
        self.classes.iter().map(|(c, s)| (*c, s))
    }

    fn entry(&mut self, class: u16) -> &mut ClassStats {
        self.classes.entry(class).or_default()
    }

    pub fn merge(&mut self, other: &MatchStats) {
        for (c, s) in &other.classes {
            self.entry(*c).merge(s);
        }
    }

    pub fn merged(mut self, other: &MatchStats) -> MatchStats {
        self.merge(other);
        self
    }
}

const VOID_KEY: u64 = u64::MAX;

#[inline]
fn pack(class: u16, instance: u32) -> u64 {
    ((class as u64) << 32) | instance as u64
}

#[inline]
fn class_of(key: u64) -> u16 {
    (key >> 32) as u16
}

/// Pixel overlap table between a ground-truth and a predicted labelling.
#[derive(Clone, Debug, Default)]
struct Contingency {
    gt_area: HashMap<u64, u64>,
    pred_area: HashMap<u64, u64>,
    pred_on_void: HashMap<u64, u64>,
    inter: HashMap<(u64, u64), u64>,
}

impl Contingency {
    fn from_maps(pred: &PanopticMap, gt: &PanopticMap, void: u16) -> Self {
        let mut table = Contingency::default();
        let key = |c: u16, i: u32| if c == void { VOID_KEY } else { pack(c, i) };
        let (ps, pi) = (pred.semantic(), pred.instance());
        let (gs, gi) = (gt.semantic(), gt.instance());
        let mut run: Option<(u64, u64, u64)> = None;
        for j in 0..ps.len() {
            let g = key(gs[j], gi[j]);
            let p = key(ps[j], pi[j]);
            match &mut run {
                Some((rg, rp, n)) if *rg == g && *rp == p => *n += 1,
                _ => {
                    if let Some((rg, rp, n)) = run {
                        table.add(rg, rp, n);
                    }
                    run = Some((g, p, 1));
                }
            }
        }
        if let Some((g, p, n)) = run {
            table.add(g, p, n);
        }
        table
    }

    #[inline]
    fn add(&mut self, g: u64, p: u64, n: u64) {
        if g != VOID_KEY {
            *self.gt_area.entry(g).or_default() += n;
        }
        if p != VOID_KEY {
            *self.pred_area.entry(p).or_default() += n;
            if g == VOID_KEY {
                *self.pred_on_void.entry(p).or_default() += n;
            } else if class_of(g) == class_of(p) {
                *self.inter.entry((g, p)).or_default() += n;
            }
        }
    }

    fn merge(&mut self, other: &Contingency) {
        for (k, v) in &other.gt_area {
            *self.gt_area.entry(*k).or_default() += v;
        }
        for (k, v) in &other.pred_area {
            *self.pred_area.entry(*k).or_default() += v;
        }
        for (k, v) in &other.pred_on_void {
            *self.pred_on_void.entry(*k).or_default() += v;
        }
        for (k, v) in &other.inter {
            *self.inter.entry(*k).or_default() += v;
        }
    }

    /// Matches same-class segments at IoU > 0.5 and counts TP/FP/FN.
    fn match_segments(&self) -> MatchStats {
        let mut stats = MatchStats::new();
        let mut matched_gt: BTreeSet<u64> = BTreeSet::new();
        let mut matched_pred: BTreeSet<u64> = BTreeSet::new();
        for (&(g, p), &i) in &self.inter {
            let void = self.pred_on_void.get(&p).copied().unwrap_or(0);
            let union = self.gt_area[&g] + self.pred_area[&p] - i - void;
            if 2 * i > union {
                // IoU > 0.5 admits at most one partner per segment
                assert!(matched_gt.insert(g), "ground-truth segment matched twice");
                assert!(matched_pred.insert(p), "predicted segment matched twice");
                let s = stats.entry(class_of(g));
                s.tp += 1;
                s.iou_sum += IouSum::from_ratio(i, union);
            }
        }
        for &g in self.gt_area.keys() {
            if !matched_gt.contains(&g) {
                stats.entry(class_of(g)).fn_ += 1;
            }
        }
        for (&p, &area) in &self.pred_area {
            if matched_pred.contains(&p) {
                continue;
            }
            let void = self.pred_on_void.get(&p).copied().unwrap_or(0);
            if 2 * void > area {
                continue;
            }
            stats.entry(class_of(p)).fp += 1;
        }
        stats
    }
}

/// IoU of a ground-truth tube and a predicted tube, with ground-truth void
/// voxels removed from the prediction first. Returns 0 for an empty union.
pub fn tube_iou(gt: &Tube, pred: &Tube, gt_void: &BTreeSet<Voxel>) -> f64 {
    let pred_kept: BTreeSet<Voxel> = pred
        .pixels()
        .iter()
        .filter(|v| !gt_void.contains(v))
        .copied()
        .collect();
    let gt_set: BTreeSet<Voxel> = gt.pixels().iter().copied().collect();
    let inter = gt_set.intersection(&pred_kept).count();
    let union = gt_set.union(&pred_kept).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u16,
    pub name: String,
    pub kind: ClassKind,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Number of classes averaged.
    pub n: usize,
}

impl Aggregate {
    fn mean(rows: &[&ClassMetrics]) -> Aggregate {
        if rows.is_empty() {
            return Aggregate::default();
        }
        let n = rows.len() as f64;
        Aggregate {
            pq: rows.iter().map(|r| r.pq).sum::<f64>() / n,
            sq: rows.iter().map(|r| r.sq).sum::<f64>() / n,
            rq: rows.iter().map(|r| r.rq).sum::<f64>() / n,
            n: rows.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Window size; 1 for image PQ.
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub all: Aggregate,
    pub thing: Aggregate,
    pub stuff: Aggregate,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricReport {
    /// Scores accumulated stats. Classes with no TP, FP or FN are left out
    /// of every average.
    pub fn from_stats(stats: &MatchStats, spec: &LabelSpec, k: usize, lambda: Option<f64>) -> Self {
        let per_class: Vec<ClassMetrics> = stats
            .classes
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(&class, s)| {
                let iou = s.iou_sum.to_f64();
                let denom2 = (2 * s.tp + s.fp + s.fn_) as f64;
                ClassMetrics {
                    class,
                    name: spec.name(class).unwrap_or("?").to_string(),
                    kind: spec.kind(class).unwrap_or(ClassKind::Stuff),
                    pq: 2.0 * iou / denom2,
                    sq: if s.tp > 0 { iou / s.tp as f64 } else { 0.0 },
                    rq: 2.0 * s.tp as f64 / denom2,
                    tp: s.tp,
                    fp: s.fp,
                    fn_: s.fn_,
                    iou_sum: iou,
                }
            })
            .collect();
        let all: Vec<&ClassMetrics> = per_class.iter().collect();
        let thing: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.kind == ClassKind::Thing).collect();
        let stuff: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.kind == ClassKind::Stuff).collect();
        MetricReport {
            k,
            lambda,
            all: Aggregate::mean(&all),
            thing: Aggregate::mean(&thing),
            stuff: Aggregate::mean(&stuff),
            per_class,
        }
    }

    pub fn class(&self, class: u16) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.class == class)
    }

    pub fn triple(&self) -> Triple {
        Triple {
            all: self.all.pq,
            thing: self.thing.pq,
            stuff: self.stuff.pq,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let title = match self.lambda {
            Some(l) => format!("DVPQ k={} lambda={l}", self.k),
            None => format!("VPQ k={}", self.k),
        };
        let _ = writeln!(out, "{title}: {}", self.triple().cell());
        let _ = writeln!(
            out,
            "{:>6} {:<16} {:>6} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}",
            "class", "name", "kind", "PQ", "SQ", "RQ", "TP", "FP", "FN"
        );
        for c in &self.per_class {
            let kind = match c.kind {
                ClassKind::Thing => "thing",
                ClassKind::Stuff => "stuff",
            };
            let _ = writeln!(
                out,
                "{:>6} {:<16} {:>6} {:>7.2} {:>7.2} {:>7.2} {:>6} {:>6} {:>6}",
                c.class,
                c.name,
                kind,
                100.0 * c.pq,
                100.0 * c.sq,
                100.0 * c.rq,
                c.tp,
                c.fp,
                c.fn_
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,lambda,class,name,kind,pq,sq,rq,tp,fp,fn\n");
        let lambda = self.lambda.map(|l| l.to_string()).unwrap_or_default();
        for c in &self.per_class {
            let kind = if c.kind == ClassKind::Thing { "thing" } else { "stuff" };
            let _ = writeln!(
                out,
                "{},{lambda},{},{},{kind},{},{},{},{},{},{}",
                self.k, c.class, c.name, c.pq, c.sq, c.rq, c.tp, c.fp, c.fn_
            );
        }
        for (name, a) in [("all", &self.all), ("thing", &self.thing), ("stuff", &self.stuff)] {
            let _ = writeln!(out, "{},{lambda},,{name},,{},{},{},,,", self.k, a.pq, a.sq, a.rq);
        }
        out
    }
}

/// PQ of the All / Thing / Stuff aggregates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub all: f64,
    pub thing: f64,
    pub stuff: f64,
}

impl Triple {
    fn mean<'a>(items: impl IntoIterator<Item = &'a Triple>) -> Triple {
        let items: Vec<&Triple> = items.into_iter().collect();
        if items.is_empty() {
            return Triple::default();
        }
        let n = items.len() as f64;
        Triple {
            all: items.iter().map(|t| t.all).sum::<f64>() / n,
            thing: items.iter().map(|t| t.thing).sum::<f64>() / n,
            stuff: items.iter().map(|t| t.stuff).sum::<f64>() / n,
        }
    }

    /// `All | Thing | Stuff` in percent with one decimal.
    pub fn cell(&self) -> String {
        format!(
            "{:.1} | {:.1} | {:.1}",
            100.0 * self.all,
            100.0 * self.thing,
            100.0 * self.stuff
        )
    }
}

fn check_lists(preds: &[&PanopticMap], gts: &[&PanopticMap], spec: &LabelSpec) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if !p.same_shape(g) {
            return Err(Error::Dimension(format!(
                "image {i}: prediction {}x{} vs ground truth {}x{}",
                p.width(),
                p.height(),
                g.width(),
                g.height()
            )));
        }
    }
    preds
        .par_iter()
        .chain(gts.par_iter())
        .try_for_each(|m| m.validate(spec))
}

/// Per-image matching, accumulated over the list.
pub fn pq_stats(preds: &[&PanopticMap], gts: &[&PanopticMap], spec: &LabelSpec) -> Result<MatchStats> {
    check_lists(preds, gts, spec)?;
    let void = spec.void_id();
    Ok(preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| Contingency::from_maps(p, g, void).match_segments())
        .reduce(MatchStats::new, |a, b| a.merged(&b)))
}

/// Image panoptic quality over a list of `(prediction, ground truth)`.
pub fn pq(preds: &[PanopticMap], gts: &[PanopticMap], spec: &LabelSpec) -> Result<MetricReport> {
    let p: Vec<&PanopticMap> = preds.iter().collect();
    let g: Vec<&PanopticMap> = gts.iter().collect();
    Ok(MetricReport::from_stats(&pq_stats(&p, &g, spec)?, spec, 1, None))
}

fn check_sequences(pred: &Sequence, gt: &Sequence, k: usize) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if k == 0 || k > gt.len() {
        return Err(Error::Window { k, len: gt.len() });
    }
    if !pred.panoptic(0).same_shape(gt.panoptic(0)) {
        return Err(Error::Dimension("prediction and ground-truth frames differ in size".into()));
    }
    Ok(())
}

/// VPQ^k statistics by the tube route: per-frame overlap tables summed
/// over every full window of `k` frames.
pub fn vpq_stats(pred: &Sequence, gt: &Sequence, k: usize, spec: &LabelSpec) -> Result<MatchStats> {
    vpq_stats_multi(pred, gt, &[k], spec).map(|mut v| v.remove(0))
}

/// Tube-route statistics for several window sizes, sharing the per-frame
/// overlap tables.
pub fn vpq_stats_multi(pred: &Sequence, gt: &Sequence, ks: &[usize], spec: &LabelSpec) -> Result<Vec<MatchStats>> {
    for &k in ks {
        check_sequences(pred, gt, k)?;
    }
    let p: Vec<&PanopticMap> = pred.maps().collect();
    let g: Vec<&PanopticMap> = gt.maps().collect();
    check_lists(&p, &g, spec)?;
    let void = spec.void_id();
    let tables: Vec<Contingency> = p
        .par_iter()
        .zip(g.par_iter())
        .map(|(p, g)| Contingency::from_maps(p, g, void))
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            (0..=tables.len() - k)
                .into_par_iter()
                .map(|t| {
                    let mut window = tables[t].clone();
                    for table in &tables[t + 1..t + k] {
                        window.merge(table);
                    }
                    window.match_segments()
                })
                .reduce(MatchStats::new, |a, b| a.merged(&b))
        })
        .collect())
}

pub fn vpq(pred: &Sequence, gt: &Sequence, k: usize, spec: &LabelSpec) -> Result<MetricReport> {
    Ok(MetricReport::from_stats(&vpq_stats(pred, gt, k, spec)?, spec, k, None))
}

/// VPQ^k statistics by the concatenation route: every window becomes one
/// horizontally concatenated image pair, and the list is scored as PQ.
pub fn vpq_via_concat_stats(pred: &Sequence, gt: &Sequence, k: usize, spec: &LabelSpec) -> Result<MatchStats> {
    check_sequences(pred, gt, k)?;
    let windows = 0..=gt.len() - k;
    let preds: Vec<PanopticMap> = windows
        .clone()
        .map(|t| concat_horizontal(pred.frames()[t..t + k].iter().map(|f| &f.panoptic)))
        .collect::<Result<_>>()?;
    let gts: Vec<PanopticMap> = windows
        .map(|t| concat_horizontal(gt.frames()[t..t + k].iter().map(|f| &f.panoptic)))
        .collect::<Result<_>>()?;
    let p: Vec<&PanopticMap> = preds.iter().collect();
    let g: Vec<&PanopticMap> = gts.iter().collect();
    pq_stats(&p, &g, spec)
}

pub fn vpq_via_concat(pred: &Sequence, gt: &Sequence, k: usize, spec: &LabelSpec) -> Result<MetricReport> {
    Ok(MetricReport::from_stats(
        &vpq_via_concat_stats(pred, gt, k, spec)?,
        spec,
        k,
        None,
    ))
}

/// Voids predicted pixels whose depth misses the ground truth by more than
/// `lambda` relative error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthFilter {
    pub lambda: f64,
    /// Also void pixels with ground-truth depth but no predicted depth.
    pub strict: bool,
}

impl DepthFilter {
    pub fn new(lambda: f64) -> Self {
        DepthFilter { lambda, strict: false }
    }

    pub fn apply(&self, pred: &PanopticMap, pred_depth: &DepthMap, gt_depth: &DepthMap, void_id: u16) -> Result<PanopticMap> {
        if !(self.lambda > 0.0) {
            return Err(Error::Validation(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !pred_depth.matches(pred) || !gt_depth.matches(pred) {
            return Err(Error::Dimension("depth maps do not match the panoptic map".into()));
        }
        let mut out = pred.clone();
        let (sem, inst) = out.parts_mut();
        for i in 0..sem.len() {
            let Some(g) = gt_depth.at(i) else { continue };
            let keep = match pred_depth.at(i) {
                Some(p) => (p - g).abs() <= self.lambda * g,
                None => !self.strict,
            };
            if !keep {
                sem[i] = void_id;
                inst[i] = 0;
            }
        }
        Ok(out)
    }
}

/// Voids predicted pixels with `|pred - gt| > lambda * gt`. Pixels missing
/// either depth pass through.
pub fn apply_depth_filter(pred: &PanopticMap, pred_depth: &DepthMap, gt_depth: &DepthMap, lambda: f64, spec: &LabelSpec) -> Result<PanopticMap> {
    DepthFilter::new(lambda).apply(pred, pred_depth, gt_depth, spec.void_id())
}

fn filtered_sequence(pred: &Sequence, gt: &Sequence, filter: &DepthFilter, spec: &LabelSpec) -> Result<Sequence> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let frames = pred
        .frames()
        .par_iter()
        .zip(gt.frames().par_iter())
        .enumerate()
        .map(|(t, (pf, gf))| {
            let (Some(pd), Some(gd)) = (&pf.depth, &gf.depth) else {
                return Err(Error::Validation(format!("frame {t} lacks depth")));
            };
            let map = filter.apply(&pf.panoptic, pd, gd, spec.void_id())?;
            Ok(Frame::new(map, Some(pd.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(pred.id(), frames)
}

pub fn dvpq_stats(pred: &Sequence, gt: &Sequence, k: usize, filter: &DepthFilter, spec: &LabelSpec) -> Result<MatchStats> {
    check_sequences(pred, gt, k)?;
    let filtered = filtered_sequence(pred, gt, filter, spec)?;
    vpq_via_concat_stats(&filtered, gt, k, spec)
}

pub fn dvpq(pred: &Sequence, gt: &Sequence, k: usize, lambda: f64, spec: &LabelSpec) -> Result<MetricReport> {
    let stats = dvpq_stats(pred, gt, k, &DepthFilter::new(lambda), spec)?;
    Ok(MetricReport::from_stats(&stats, spec, k, Some(lambda)))
}

/// DVPQ over a `λ × k` grid with the row, column and grand averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvpqTable {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// `cells[λ index][k index]`.
    pub cells: Vec<Vec<MetricReport>>,
    /// Per λ, averaged over k.
    pub lambda_avg: Vec<Triple>,
    /// Per k, averaged over λ.
    pub k_avg: Vec<Triple>,
    /// Mean of every cell.
    pub dvpq: Triple,
}

impl DvpqTable {
    fn from_cells(ks: &[usize], lambdas: &[f64], cells: Vec<Vec<MetricReport>>) -> Self {
        let lambda_avg = cells
            .iter()
            .map(|row| Triple::mean(&row.iter().map(|c| c.triple()).collect::<Vec<_>>()))
            .collect();
        let k_avg = (0..ks.len())
            .map(|j| Triple::mean(&cells.iter().map(|row| row[j].triple()).collect::<Vec<_>>()))
            .collect();
        let dvpq = Triple::mean(&cells.iter().flatten().map(|c| c.triple()).collect::<Vec<_>>());
        DvpqTable {
            ks: ks.to_vec(),
            lambdas: lambdas.to_vec(),
            cells,
            lambda_avg,
            k_avg,
            dvpq,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let width = 24;
        let _ = write!(out, "{:<12}", "DVPQ");
        for k in &self.ks {
            let _ = write!(out, "{:^width$}", format!("k = {k}"));
        }
        let _ = writeln!(out, "{:^width$}", "Average");
        for ((row, lambda), avg) in self.cells.iter().zip(&self.lambdas).zip(&self.lambda_avg) {
            let _ = write!(out, "{:<12}", format!("λ = {lambda:.2}"));
            for cell in row {
                let _ = write!(out, "{:^width$}", cell.triple().cell());
            }
            let _ = writeln!(out, "{:^width$}", avg.cell());
        }
        let _ = write!(out, "{:<12}", "Average");
        for a in &self.k_avg {
            let _ = write!(out, "{:^width$}", a.cell());
        }
        let _ = writeln!(out, "{:^width$}", self.dvpq.cell());
        let _ = writeln!(out, "cells: All | Thing | Stuff");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,k,all,thing,stuff\n");
        for (row, lambda) in self.cells.iter().zip(&self.lambdas) {
            for (cell, k) in row.iter().zip(&self.ks) {
                let t = cell.triple();
                let _ = writeln!(out, "{lambda},{k},{},{},{}", t.all, t.thing, t.stuff);
            }
        }
        for (a, lambda) in self.lambda_avg.iter().zip(&self.lambdas) {
            let _ = writeln!(out, "{lambda},avg,{},{},{}", a.all, a.thing, a.stuff);
        }
        for (a, k) in self.k_avg.iter().zip(&self.ks) {
            let _ = writeln!(out, "avg,{k},{},{},{}", a.all, a.thing, a.stuff);
        }
        let _ = writeln!(out, "avg,avg,{},{},{}", self.dvpq.all, self.dvpq.thing, self.dvpq.stuff);
        out
    }
}

/// DVPQ table accumulated over several `(prediction, ground truth)`
/// sequences. Each cell merges the statistics of all sequences before
/// scoring.
pub fn dvpq_table_multi(
    pairs: &[(&Sequence, &Sequence)],
    ks: &[usize],
    lambdas: &[f64],
    strict: bool,
    spec: &LabelSpec,
) -> Result<DvpqTable> {
    if ks.is_empty() || lambdas.is_empty() {
        return Err(Error::Validation("dvpq table needs at least one k and one lambda".into()));
    }
    let cells = lambdas
        .iter()
        .map(|&lambda| {
            let filter = DepthFilter { lambda, strict };
            ks.iter()
                .map(|&k| {
                    let mut stats = MatchStats::new();
                    for (p, g) in pairs {
                        stats.merge(&dvpq_stats(p, g, k, &filter, spec)?);
                    }
                    Ok(MetricReport::from_stats(&stats, spec, k, Some(lambda)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DvpqTable::from_cells(ks, lambdas, cells))
}

pub fn dvpq_table(pred: &Sequence, gt: &Sequence, ks: &[usize], lambdas: &[f64], spec: &LabelSpec) -> Result<DvpqTable> {
    dvpq_table_multi(&[(pred, gt)], ks, lambdas, false, spec)
}
