//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::f64::consts::E;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dvps::dataset_io::{
    convert_frame, decode_panoptic_rgb, disparity_consistency_check, encode_panoptic_rgb, load_depth,
    load_float_raster, load_panoptic, load_semantic, non_foreground_suppression, save_depth, save_float_raster,
    save_panoptic, save_semantic, CameraModel, ConversionParams, FloatRaster, LabeledPoint,
};
use dvps::fusion::{FusionParams, SemanticMap};
use dvps::metrics_depth::{depth_loss, depth_metrics};
use dvps::metrics_panoptic::{
    apply_depth_filter, dvpq, dvpq_stats, pq, pq_stats, vpq, vpq_stats, vpq_stats_multi, vpq_via_concat_stats,
    DepthFilter, MetricReport,
};
use dvps::stitch::{stitch_sequence, PairPrediction, StitchOptions};
use dvps::synth::{fuse_scene, generate_scene, SceneConfig, CAR, PERSON, ROAD, SKY, VOID};
use dvps::{DepthMap, Frame, PanopticMap, Sequence};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const CORPUS: u64 = 200;

fn strip(labels: &[(u16, u32)]) -> PanopticMap {
    PanopticMap::from_rows(&[labels]).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn dual_path_identity() -> Outcome {
    let spec = common::labels();
    let start = Instant::now();
    let (mut windows, mut tp, mut fp) = (0, 0, 0);
    for seed in 0..CORPUS {
        let (pred, gt) = common::random_pair(seed, 6, 16);
        for k in 1..=gt.len() {
            let tube = vpq_stats(&pred, &gt, k, &spec).unwrap();
            tp += tube.classes().map(|(_, c)| c.tp).sum::<u64>();
            fp += tube.classes().map(|(_, c)| c.fp).sum::<u64>();
            let concat = vpq_via_concat_stats(&pred, &gt, k, &spec).unwrap();
            ensure!(tube == concat, "seed {seed} k {k}: accumulators differ");
            let (a, b) = (
                MetricReport::from_stats(&tube, &spec, k, None),
                MetricReport::from_stats(&concat, &spec, k, None),
            );
            ensure!(close(a.all.pq, b.all.pq, 1e-12), "seed {seed} k {k}: PQ differs");
            windows += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{CORPUS} sequences, {windows} window sizes ({tp} TP, {fp} FP), bitwise equal, {secs:.2} s"))
}

fn pq_is_vpq1() -> Outcome {
    let spec = common::labels();
    for seed in 0..CORPUS {
        let (pred, gt) = common::random_pair(seed, 6, 16);
        let p: Vec<&PanopticMap> = pred.maps().collect();
        let g: Vec<&PanopticMap> = gt.maps().collect();
        ensure!(
            pq_stats(&p, &g, &spec).unwrap() == vpq_stats(&pred, &gt, 1, &spec).unwrap(),
            "seed {seed}: accumulators differ"
        );
        let pr = pq(&pred.maps().cloned().collect::<Vec<_>>(), &gt.maps().cloned().collect::<Vec<_>>(), &spec).unwrap();
        ensure!(pr == vpq(&pred, &gt, 1, &spec).unwrap(), "seed {seed}: reports differ");
    }
    Ok(format!("{CORPUS} sequences, identical reports"))
}

fn renumbering_invariance() -> Outcome {
    let spec = common::labels();
    for seed in 0..CORPUS {
        let (pred, gt) = common::random_pair(seed, 6, 16);
        let (pred2, gt2) = (common::renumber(&pred, seed ^ 0xa5a5), common::renumber(&gt, seed ^ 0x5a5a));
        let maps = |s: &Sequence| s.maps().cloned().collect::<Vec<_>>();
        ensure!(
            pq(&maps(&pred), &maps(&gt), &spec).unwrap() == pq(&maps(&pred2), &maps(&gt2), &spec).unwrap(),
            "seed {seed}: PQ changed"
        );
        for k in 1..=gt.len() {
            ensure!(
                vpq(&pred, &gt, k, &spec).unwrap() == vpq(&pred2, &gt2, k, &spec).unwrap(),
                "seed {seed} k {k}: VPQ changed"
            );
            for lambda in [0.1, 0.25, 0.5] {
                ensure!(
                    dvpq(&pred, &gt, k, lambda, &spec).unwrap() == dvpq(&pred2, &gt2, k, lambda, &spec).unwrap(),
                    "seed {seed} k {k} lambda {lambda}: DVPQ changed"
                );
            }
        }
    }
    Ok(format!("{CORPUS} sequences, PQ / VPQ / DVPQ unchanged"))
}

fn closed_loop() -> Outcome {
    let spec = common::labels();
    let seeds = 60;
    let mut windows = 0;
    for seed in 0..seeds {
        let cfg = SceneConfig::random(seed);
        let scene = generate_scene(&cfg, &spec).unwrap();
        let pairs = fuse_scene(&scene, &spec, &FusionParams::default()).unwrap();
        let stitched = stitch_sequence(&pairs, &spec, &StitchOptions::default()).unwrap();
        let pred = Sequence::from_maps("stitched", stitched).unwrap();
        for k in 1..=scene.gt.len() {
            let r = vpq(&pred, &scene.gt, k, &spec).unwrap();
            ensure!(r.all.pq == 1.0, "seed {seed} k {k}: VPQ = {}", r.all.pq);
            windows += 1;
        }
    }
    Ok(format!("{seeds} seeds, {windows} (seed, k) cells all exactly 1.0"))
}

fn dvpq_limits() -> Outcome {
    let spec = common::labels();
    let huge = DepthFilter::new(1e9);
    let mut voided = 0usize;
    for seed in 0..CORPUS {
        let (pred, gt) = common::random_pair(seed, 6, 16);
        for k in 1..=gt.len() {
            ensure!(
                dvpq_stats(&pred, &gt, k, &huge, &spec).unwrap() == vpq_stats(&pred, &gt, k, &spec).unwrap(),
                "seed {seed} k {k}: lambda 1e9 differs from VPQ"
            );
        }
        let scaled_gt = common::scale_depth(&gt, 1.3);
        for (pf, (gf, sf)) in pred.frames().iter().zip(gt.frames().iter().zip(scaled_gt.frames())) {
            let (gd, sd) = (gf.depth.as_ref().unwrap(), sf.depth.as_ref().unwrap());
            let out = apply_depth_filter(&pf.panoptic, sd, gd, 0.25, &spec).unwrap();
            ensure!(out.semantic().iter().all(|c| *c == VOID), "seed {seed}: pixel kept at factor 1.3");
            voided += out.len();

            // the voided set is exactly {p/g outside [1 - λ, 1 + λ]}
            let pd = pf.depth.as_ref().unwrap();
            let out = apply_depth_filter(&pf.panoptic, pd, gd, 0.25, &spec).unwrap();
            for i in 0..out.len() {
                let expect_void = match (pd.at(i), gd.at(i)) {
                    (Some(p), Some(g)) => !(0.75..=1.25).contains(&(p / g)),
                    _ => false,
                } || pf.panoptic.semantic()[i] == VOID;
                ensure!((out.semantic()[i] == VOID) == expect_void, "seed {seed}: pixel {i} set identity fails");
            }
        }
    }
    // full-coverage stuff scene
    let stuff = PanopticMap::filled(8, 4, ROAD, 0);
    let d = DepthMap::constant(8, 4, 12.0).unwrap();
    let gt = Sequence::new("g", vec![Frame::new(stuff.clone(), Some(d.clone()))]).unwrap();
    let pred = Sequence::new("p", vec![Frame::new(stuff, Some(d.scaled(1.3).unwrap()))]).unwrap();
    let r = dvpq(&pred, &gt, 1, 0.25, &spec).unwrap();
    ensure!(r.stuff.pq == 0.0, "DVPQ-Stuff = {}", r.stuff.pq);
    Ok(format!("lambda 1e9 equals VPQ on {CORPUS} sequences; factor 1.3 voided {voided}/{voided} pixels"))
}

fn hand_fixtures() -> Outcome {
    let spec = common::labels();
    let a = CAR;
    let v = (VOID, 0);

    let gt = strip(&[(a, 1), (a, 1), (a, 1), (a, 1), v, v]);
    let pred = strip(&[v, (a, 1), (a, 1), (a, 1), (a, 1), v]);
    let pq_a = pq(&[pred], &[gt], &spec).unwrap().class(a).unwrap().pq;
    ensure!(close(pq_a, 0.75, 1e-9), "void case PQ {pq_a}");

    let g = strip(&[(a, 1), (a, 1), (ROAD, 0), (ROAD, 0)]);
    let gt = Sequence::from_maps("g", vec![g.clone(), g]).unwrap();
    let pred = Sequence::from_maps(
        "p",
        vec![
            strip(&[(a, 9), (a, 9), (ROAD, 0), (ROAD, 0)]),
            strip(&[(ROAD, 0), (a, 9), (a, 9), (ROAD, 0)]),
        ],
    )
    .unwrap();
    let v2 = vpq(&pred, &gt, 2, &spec).unwrap().class(a).unwrap().pq;
    let v1 = vpq(&pred, &gt, 1, &spec).unwrap().class(a).unwrap().pq;
    ensure!(close(v2, 0.6, 1e-9) && close(v1, 0.5, 1e-9), "VPQ2 {v2}, VPQ1 {v1}");

    let two = |depth: [f64; 2]| {
        let d = DepthMap::from_raw(2, 1, depth.to_vec()).unwrap();
        Sequence::new("s", vec![Frame::new(strip(&[(ROAD, 0), (ROAD, 0)]), Some(d))]).unwrap()
    };
    let (gt, pred) = (two([10.0, 10.0]), two([10.0, 14.0]));
    let low = dvpq(&pred, &gt, 1, 0.25, &spec).unwrap().all.pq;
    let high = dvpq(&pred, &gt, 1, 0.5, &spec).unwrap().all.pq;
    ensure!(close(low, 0.0, 1e-9) && close(high, 1.0, 1e-9), "lambda flip {low} / {high}");

    let row = |v: &[f64]| DepthMap::from_raw(v.len(), 1, v.to_vec()).unwrap();
    let silog = depth_metrics(&row(&[E, E]), &row(&[1.0, E]), 1e-3, 80.0).unwrap().silog;
    ensure!(close(silog, 50.0, 1e-9), "SILog {silog}");

    let loss = depth_loss(&[1.0, 1.0], &[E, E]).unwrap();
    ensure!(close(loss, 1.718281828459045, 1e-9), "loss {loss}");
    Ok(format!("PQ {pq_a}, VPQ2 {v2:.12}, VPQ1 {v1}, DVPQ {low}/{high}, SILog {silog:.12}, loss {loss:.9}"))
}

fn stitch_traces() -> Outcome {
    let spec = common::labels();
    let r = (ROAD, 0);
    let square = |c: (u16, u32)| PanopticMap::from_rows(&[&[r, r, r, r], &[r, c, c, r], &[r, c, c, r], &[r, r, r, r]]).unwrap();
    let run = |pairs: Vec<PairPrediction>| stitch_sequence(&pairs, &spec, &StitchOptions::default()).unwrap();

    let out = run(vec![PairPrediction::new(square((CAR, 5)), square((CAR, 5))), PairPrediction::last(square((CAR, 8)))]);
    ensure!(out[1] == square((CAR, 5)), "identical mask did not inherit id 5");

    let out = run(vec![PairPrediction::new(square((CAR, 5)), square((CAR, 5))), PairPrediction::last(square((PERSON, 8)))]);
    ensure!(out[1] == square((PERSON, 13)), "class gate: got {:?}", out[1].get(1, 1));

    let p2 = PanopticMap::from_rows(&[&[(CAR, 1), r, r, (PERSON, 2)], &[r; 4], &[r; 4], &[r; 4]]).unwrap();
    let out = run(vec![PairPrediction::new(square((CAR, 3)), PanopticMap::filled(4, 4, ROAD, 0)), PairPrediction::last(p2)]);
    ensure!(out[1].get(0, 0) == (CAR, 4) && out[1].get(0, 3) == (PERSON, 5), "fresh ids {:?}", out[1].instance());

    // ascending IoU with last write wins: (a,q) 1/5, (a,p) 1/2, (b,q) 3/4
    let (a, b) = ((CAR, 1), (CAR, 2));
    let r1 = strip(&[a, a, a, a, b, b, b, b, b, b]);
    let p2 = strip(&[a, a, b, b, b, b, b, b, b, b]);
    let out = run(vec![PairPrediction::new(r1.clone(), r1), PairPrediction::last(p2)]);
    ensure!(out[1].instance() == [1, 1, 2, 2, 2, 2, 2, 2, 2, 2], "dictionary trace {:?}", out[1].instance());

    // ties broken by (r, p); b and p are left without a mutual partner
    let r1 = strip(&[a, a, a, a, a, a, b, b]);
    let p2 = strip(&[a, a, b, b, b, b, b, b]);
    let out = run(vec![PairPrediction::new(r1.clone(), r1), PairPrediction::last(p2)]);
    ensure!(out[1].instance() == [3, 3, 1, 1, 1, 1, 1, 1], "non-mutual trace {:?}", out[1].instance());
    Ok("5 traces reproduce the hand-assigned ids".into())
}

fn formats_and_conversion() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = common::labels();
    let mut rng = common::rng(8);

    for trial in 0..20 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..30));
        let mut sem = Vec::new();
        let mut inst = Vec::new();
        for _ in 0..w * h {
            match rng.random_range(0..4) {
                0 => (sem.push(VOID), inst.push(0)),
                1 => (sem.push(if rng.random_bool(0.5) { ROAD } else { SKY }), inst.push(0)),
                _ => (sem.push(if rng.random_bool(0.5) { CAR } else { PERSON }), inst.push(rng.random_range(1..=65535))),
            };
        }
        let map = PanopticMap::new(w, h, sem.clone(), inst).unwrap();
        let path = dir.path().join(format!("p{trial}.png"));
        save_panoptic(&path, &map).unwrap();
        ensure!(load_panoptic(&path, &spec).unwrap() == map, "panoptic round trip {trial}");

        let depth: Vec<Option<f64>> = (0..w * h)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(1..=65535u32) as f64 / 256.0))
            .collect();
        let depth = DepthMap::new(w, h, depth).unwrap();
        let path = dir.path().join(format!("d{trial}.png"));
        save_depth(&path, &depth).unwrap();
        ensure!(load_depth(&path).unwrap() == depth, "depth round trip {trial}");

        let semantic = SemanticMap::new(w, h, sem).unwrap();
        let path = dir.path().join(format!("s{trial}.png"));
        save_semantic(&path, &semantic).unwrap();
        ensure!(load_semantic(&path).unwrap() == semantic, "semantic round trip {trial}");

        let c = rng.random_range(1..4);
        let data: Vec<f32> = (0..w * h * c).map(|_| f32::from_bits(rng.random())).collect();
        let raster = FloatRaster::new(w, h, c, data).unwrap();
        let path = dir.path().join(format!("f{trial}.dvpr"));
        save_float_raster(&path, &raster).unwrap();
        let back = load_float_raster(&path).unwrap();
        ensure!(
            back.data().iter().map(|v| v.to_bits()).eq(raster.data().iter().map(|v| v.to_bits())),
            "float raster round trip {trial}"
        );
    }
    ensure!(encode_panoptic_rgb(7, 300).unwrap() == [7, 1, 44] && decode_panoptic_rgb([7, 1, 44]) == (7, 300), "rgb");

    // a wall at 20 m behind a 6x6 car at 5 m; every pixel is hit
    let (w, h) = (40usize, 30usize);
    let mut cam = CameraModel::identity(100.0, 100.0, 19.0, 14.0, w, h);
    cam.translation = [0.0, 0.0, 1.0];
    let car = |y: usize, x: usize| (10..16).contains(&y) && (8..14).contains(&x);
    let mut cloud = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let lift = |z: f64, class: u16, instance: u32| LabeledPoint {
                x: (x as f64 - cam.cx) * z / cam.fx,
                y: (y as f64 - cam.cy) * z / cam.fy,
                z: z - 1.0,
                class,
                instance,
            };
            cloud.push(lift(20.0, ROAD, 0));
            if car(y, x) {
                cloud.push(lift(5.0, CAR, 1));
            }
        }
    }
    cloud.reverse();
    let mut reference = DepthMap::new(w, h, (0..w * h).map(|i| Some(if car(i / w, i % w) { 5.0 } else { 20.0 })).collect()).unwrap();
    let corrupt = [(2usize, 30usize), (25, 35), (28, 2)];
    let missing_ref = (0usize, 0usize);
    let mut values: Vec<Option<f64>> = (0..w * h).map(|i| reference.at(i)).collect();
    for &(y, x) in &corrupt {
        values[y * w + x] = Some(40.0);
    }
    values[missing_ref.0 * w + missing_ref.1] = None;
    reference = DepthMap::new(w, h, values).unwrap();

    let (projected, _) = dvps::dataset_io::project_points(&cloud, &cam, &spec).unwrap();
    for y in 0..h {
        for x in 0..w {
            let want = if car(y, x) { 5.0 } else { 20.0 };
            ensure!(projected.get(y, x) == Some(want), "projected depth at ({y},{x}) = {:?}", projected.get(y, x));
        }
    }
    let out = convert_frame(&cloud, &cam, Some(&reference), &spec, &ConversionParams::default()).unwrap();
    ensure!(out.inconsistent.pixels() == corrupt.to_vec(), "consistency removed {:?}", out.inconsistent.pixels());
    let near_car = |y: usize, x: usize| !car(y, x) && (7..19).contains(&y) && (5..17).contains(&x);
    let expected: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).filter(|&(y, x)| near_car(y, x)).collect();
    ensure!(out.suppressed.pixels() == expected, "suppression removed {} pixels, expected {}", out.suppressed.count(), expected.len());
    for y in 0..h {
        for x in 0..w {
            let removed = near_car(y, x) || corrupt.contains(&(y, x));
            let (want_d, want_p) = if removed {
                (None, (VOID, 0))
            } else if car(y, x) {
                (Some(5.0), (CAR, 1))
            } else {
                (Some(20.0), (ROAD, 0))
            };
            ensure!(out.depth.get(y, x) == want_d && out.panoptic.get(y, x) == want_p, "pipeline output at ({y},{x})");
        }
    }

    // the standalone rules agree with the pipeline
    let (_, mask) = disparity_consistency_check(&projected, &reference, 0.3).unwrap();
    ensure!(mask.pixels() == corrupt.to_vec(), "standalone check");
    let (_, pano) = dvps::dataset_io::project_points(&cloud, &cam, &spec).unwrap();
    let (_, _, mask) = non_foreground_suppression(&projected, &pano, &spec, 7, 0.0).unwrap();
    ensure!(mask.pixels() == expected, "standalone suppression");
    Ok(format!(
        "80 lossless round trips; {} points projected exactly, {} inconsistent and {} suppressed as predicted",
        cloud.len(),
        corrupt.len(),
        expected.len()
    ))
}

fn big_sequences() -> (Sequence, Sequence) {
    let (w, h, t_len) = (512usize, 256usize, 100usize);
    let build = |t: usize, shift: usize, id_offset: u32| {
        let mut sem: Vec<u16> = (0..w * h).map(|i| if i / w < 64 { SKY } else { ROAD }).collect();
        let mut inst = vec![0u32; w * h];
        for n in 0..20usize {
            let (row, col) = (n / 5, n % 5);
            let (y0, x0) = (20 + row * 58, 10 + col * 96 + (t + shift) % 40);
            for y in y0..y0 + 40 {
                for x in x0..x0 + 44 {
                    sem[y * w + x] = if n % 2 == 0 { CAR } else { PERSON };
                    inst[y * w + x] = n as u32 + 1 + id_offset;
                }
            }
        }
        PanopticMap::new(w, h, sem, inst).unwrap()
    };
    let gt = Sequence::from_maps("gt", (0..t_len).map(|t| build(t, 0, 0)).collect()).unwrap();
    let pred = Sequence::from_maps("pred", (0..t_len).map(|t| build(t, 3, 7)).collect()).unwrap();
    (pred, gt)
}

fn performance() -> Outcome {
    let spec = common::labels();
    let (pred, gt) = big_sequences();
    let ks = [1, 2, 3, 4];
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let serial = single.install(|| vpq_stats_multi(&pred, &gt, &ks, &spec)).unwrap();
    let reports: Vec<MetricReport> = ks.iter().zip(&serial).map(|(&k, s)| MetricReport::from_stats(s, &spec, k, None)).collect();
    let secs = start.elapsed().as_secs_f64();
    let parallel = vpq_stats_multi(&pred, &gt, &ks, &spec).unwrap();
    let par_reports: Vec<MetricReport> = ks.iter().zip(&parallel).map(|(&k, s)| MetricReport::from_stats(s, &spec, k, None)).collect();
    ensure!(serial == parallel && reports == par_reports, "parallel report differs");
    ensure!(secs < 5.0, "single-threaded VPQ^1..4 took {secs:.2} s");
    let cells: Vec<String> = reports.iter().map(|r| format!("{:.4}", r.all.pq)).collect();
    Ok(format!("100 x 256x512, 20 instances: {secs:.2} s single-threaded, parallel identical, VPQ [{}]", cells.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("dual-path identity", dual_path_identity),
        ("PQ equals VPQ^1", pq_is_vpq1),
        ("renumbering invariance", renumbering_invariance),
        ("closed loop", closed_loop),
        ("DVPQ limiting behavior", dvpq_limits),
        ("hand-computed fixtures", hand_fixtures),
        ("stitching traces", stitch_traces),
        ("formats and conversion", formats_and_conversion),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
