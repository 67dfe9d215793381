#![allow(dead_code)]

use std::collections::BTreeMap;

use dvps::synth::{default_labels, CAR, PERSON, ROAD, SKY, VOID};
use dvps::{DepthMap, Frame, LabelSpec, PanopticMap, Sequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn labels() -> LabelSpec {
    default_labels()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_label(rng: &mut ChaCha8Rng) -> (u16, u32) {
    match rng.random_range(0..10) {
        0 => (VOID, 0),
        1..=3 => (if rng.random_bool(0.5) { ROAD } else { SKY }, 0),
        _ => (if rng.random_bool(0.5) { CAR } else { PERSON }, rng.random_range(1..=3)),
    }
}

struct Blob {
    label: (u16, u32),
    y: i64,
    x: i64,
    h: i64,
    w: i64,
}

/// A prediction / ground-truth pair of equally sized sequences with dense
/// ground-truth depth. Objects drift between frames so tubes recur, and the
/// prediction is a noisy copy of the ground truth.
pub fn random_pair(seed: u64, max_t: usize, max_side: usize) -> (Sequence, Sequence) {
    let mut rng = rng(seed);
    let t_len = rng.random_range(1..=max_t);
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let split = rng.random_range(0..=h);
    let mut blobs: Vec<Blob> = (0..rng.random_range(0..=4))
        .map(|_| Blob {
            label: (if rng.random_bool(0.5) { CAR } else { PERSON }, rng.random_range(1..=3)),
            y: rng.random_range(0..h as i64),
            x: rng.random_range(0..w as i64),
            h: rng.random_range(1..=h as i64),
            w: rng.random_range(1..=w as i64),
        })
        .collect();
    let noise = rng.random_range(0.0..0.3);
    let mut gt_frames = Vec::new();
    let mut pred_frames = Vec::new();
    for _ in 0..t_len {
        let mut sem = vec![0u16; w * h];
        let mut inst = vec![0u32; w * h];
        for y in 0..h {
            for x in 0..w {
                sem[y * w + x] = if y < split { SKY } else { ROAD };
            }
        }
        for b in &blobs {
            for y in b.y.max(0)..(b.y + b.h).min(h as i64) {
                for x in b.x.max(0)..(b.x + b.w).min(w as i64) {
                    let p = y as usize * w + x as usize;
                    sem[p] = b.label.0;
                    inst[p] = b.label.1;
                }
            }
        }
        for p in 0..w * h {
            if rng.random_bool(0.05) {
                sem[p] = VOID;
                inst[p] = 0;
            }
        }
        let gt_map = PanopticMap::new(w, h, sem.clone(), inst.clone()).unwrap();
        for p in 0..w * h {
            if rng.random_bool(noise) {
                let (c, i) = random_label(&mut rng);
                sem[p] = c;
                inst[p] = i;
            }
        }
        let pred_map = PanopticMap::new(w, h, sem, inst).unwrap();
        let gt_depth: Vec<f64> = (0..w * h).map(|_| rng.random_range(1.0..50.0)).collect();
        let pred_depth: Vec<f64> = gt_depth
            .iter()
            .map(|g| if rng.random_bool(0.05) { f64::NAN } else { g * rng.random_range(0.6..1.5) })
            .collect();
        gt_frames.push(Frame::new(gt_map, Some(DepthMap::from_raw(w, h, gt_depth).unwrap())));
        pred_frames.push(Frame::new(pred_map, Some(DepthMap::from_raw(w, h, pred_depth).unwrap())));
        for b in &mut blobs {
            b.y += rng.random_range(-1..=1);
            b.x += rng.random_range(-1..=1);
        }
    }
    (
        Sequence::new("pred", pred_frames).unwrap(),
        Sequence::new("gt", gt_frames).unwrap(),
    )
}

/// Applies one random bijection of instance ids per thing class to every
/// frame of `seq`.
pub fn renumber(seq: &Sequence, seed: u64) -> Sequence {
    let mut rng = rng(seed);
    let mut ids: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for m in seq.maps() {
        for (c, i) in m.semantic().iter().zip(m.instance()) {
            if *i > 0 {
                ids.entry(*c).or_default().push(*i);
            }
        }
    }
    let mut table: BTreeMap<(u16, u32), u32> = BTreeMap::new();
    for (class, mut list) in ids {
        list.sort_unstable();
        list.dedup();
        let mut targets: Vec<u32> = (1..=1000).collect();
        targets.shuffle(&mut rng);
        for (old, new) in list.into_iter().zip(targets) {
            table.insert((class, old), new);
        }
    }
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let m = &f.panoptic;
            let inst = m
                .semantic()
                .iter()
                .zip(m.instance())
                .map(|(c, i)| if *i == 0 { 0 } else { table[&(*c, *i)] })
                .collect();
            let map = PanopticMap::new(m.width(), m.height(), m.semantic().to_vec(), inst).unwrap();
            Frame::new(map, f.depth.clone())
        })
        .collect();
    Sequence::new(seq.id(), frames).unwrap()
}

/// Replaces every depth map with `factor` times itself.
pub fn scale_depth(seq: &Sequence, factor: f64) -> Sequence {
    let frames = seq
        .frames()
        .iter()
        .map(|f| Frame::new(f.panoptic.clone(), f.depth.as_ref().map(|d| d.scaled(factor).unwrap())))
        .collect();
    Sequence::new(seq.id(), frames).unwrap()
}
