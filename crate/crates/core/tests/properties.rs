mod common;

use std::collections::BTreeMap;

use dvps::fusion::{select_centers, CenterHeatmap, FusionParams};
use dvps::metrics_depth::{depth_loss_terms, depth_metrics};
use dvps::metrics_panoptic::{
    apply_depth_filter, pq_stats, vpq, vpq_stats, vpq_via_concat_stats, DepthFilter, IouSum, MatchStats,
};
use dvps::stitch::{stitch_sequence, PairPrediction, StitchOptions};
use dvps::synth::{generate_scene, SceneConfig, VOID};
use dvps::{DepthMap, PanopticMap};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tube_and_concat_routes_agree(seed in any::<u64>()) {
        let spec = common::labels();
        let (pred, gt) = common::random_pair(seed, 6, 16);
        for k in 1..=gt.len() {
            prop_assert_eq!(
                vpq_stats(&pred, &gt, k, &spec).unwrap(),
                vpq_via_concat_stats(&pred, &gt, k, &spec).unwrap()
            );
        }
    }

    #[test]
    fn image_pq_is_vpq_one(seed in any::<u64>()) {
        let spec = common::labels();
        let (pred, gt) = common::random_pair(seed, 6, 16);
        let p: Vec<&PanopticMap> = pred.maps().collect();
        let g: Vec<&PanopticMap> = gt.maps().collect();
        prop_assert_eq!(pq_stats(&p, &g, &spec).unwrap(), vpq_stats(&pred, &gt, 1, &spec).unwrap());
    }

    #[test]
    fn renumbering_changes_nothing(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let spec = common::labels();
        let (pred, gt) = common::random_pair(seed, 6, 16);
        let (pred2, gt2) = (common::renumber(&pred, a), common::renumber(&gt, b));
        for k in 1..=gt.len() {
            prop_assert_eq!(vpq(&pred, &gt, k, &spec).unwrap(), vpq(&pred2, &gt2, k, &spec).unwrap());
        }
    }

    #[test]
    fn merging_is_order_free(seeds in proptest::collection::vec(any::<u64>(), 1..6)) {
        let spec = common::labels();
        let parts: Vec<MatchStats> = seeds
            .iter()
            .map(|&s| {
                let (pred, gt) = common::random_pair(s, 3, 8);
                vpq_stats(&pred, &gt, 1, &spec).unwrap()
            })
            .collect();
        let forward = parts.iter().fold(MatchStats::new(), |acc, p| acc.merged(p));
        let backward = parts.iter().rev().fold(MatchStats::new(), |acc, p| acc.merged(p));
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn fixed_point_iou_is_monotone(i in 0u64..1000, j in 0u64..1000, u in 1u64..1000) {
        let (i, j) = (i.min(u), j.min(u));
        prop_assert_eq!(i.cmp(&j), IouSum::from_ratio(i, u).cmp(&IouSum::from_ratio(j, u)));
        prop_assert!((IouSum::from_ratio(i, u).to_f64() - i as f64 / u as f64).abs() < 1e-15);
    }

    #[test]
    fn silog_ignores_global_scale(
        pairs in proptest::collection::vec((0.5f64..60.0, 0.5f64..60.0), 2..40),
        scale in 0.2f64..1.2,
    ) {
        let (g, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let n = g.len();
        let gt = DepthMap::from_raw(n, 1, g.clone()).unwrap();
        let pred = DepthMap::from_raw(n, 1, p.clone()).unwrap();
        let scaled = pred.scaled(scale).unwrap();
        let a = depth_metrics(&pred, &gt, 1e-3, 80.0).unwrap();
        let b = depth_metrics(&scaled, &gt, 1e-3, 80.0).unwrap();
        prop_assert!((a.silog_variance - b.silog_variance).abs() < 1e-9);
        prop_assert!(a.delta1 <= a.delta2 && a.delta2 <= a.delta3);
        prop_assert!(a.abs_rel >= 0.0 && a.rmse >= 0.0 && a.silog >= 0.0);

        let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
        let ta = depth_loss_terms(&g, &p).unwrap();
        let tb = depth_loss_terms(&g, &ps).unwrap();
        prop_assert!((ta.log_variance - tb.log_variance).abs() < 1e-9);
        prop_assert!(ta.log_variance >= 0.0);
    }

    #[test]
    fn depth_filter_set_identity(seed in any::<u64>(), lambda in 0.01f64..1.0) {
        let spec = common::labels();
        let (pred, gt) = common::random_pair(seed, 2, 16);
        for (pf, gf) in pred.frames().iter().zip(gt.frames()) {
            let (pd, gd) = (pf.depth.as_ref().unwrap(), gf.depth.as_ref().unwrap());
            let out = apply_depth_filter(&pf.panoptic, pd, gd, lambda, &spec).unwrap();
            let wider = apply_depth_filter(&pf.panoptic, pd, gd, lambda * 2.0, &spec).unwrap();
            let strict = DepthFilter { lambda, strict: true }.apply(&pf.panoptic, pd, gd, VOID).unwrap();
            for i in 0..out.len() {
                let off = matches!((pd.at(i), gd.at(i)), (Some(p), Some(g)) if (p - g).abs() > lambda * g);
                let voided = out.semantic()[i] == VOID;
                prop_assert_eq!(voided, off || pf.panoptic.semantic()[i] == VOID);
                if off {
                    prop_assert_eq!(out.instance()[i], 0);
                } else {
                    prop_assert_eq!(out.segment_at(i), pf.panoptic.segment_at(i));
                }
                // widening λ never voids more
                prop_assert!(!(wider.semantic()[i] == VOID) || voided);
                // strict mode only adds pixels without a predicted depth
                let s = strict.semantic()[i] == VOID;
                prop_assert_eq!(s, voided || (pd.at(i).is_none() && gd.at(i).is_some()));
            }
        }
    }

    #[test]
    fn centers_are_separated_and_ordered(
        w in 1usize..24,
        h in 1usize..24,
        seed in any::<u64>(),
        window in prop_oneof![Just(1usize), Just(3), Just(7)],
        top_k in 1usize..10,
    ) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        // coarse levels make ties common
        let scores: Vec<f32> = (0..w * h).map(|_| rng.random_range(0..5) as f32 / 4.0).collect();
        let heat = CenterHeatmap::new(w, h, scores).unwrap();
        let params = FusionParams { threshold: 0.25, nms_window: window, top_k };
        let centers = select_centers(&heat, &params).unwrap();
        prop_assert!(centers.len() <= top_k);
        prop_assert!(centers.windows(2).all(|c| c[0].score >= c[1].score));
        let r = window / 2;
        for (i, a) in centers.iter().enumerate() {
            prop_assert!(a.score >= 0.25);
            for b in &centers[i + 1..] {
                prop_assert!(a.y.abs_diff(b.y) > r || a.x.abs_diff(b.x) > r);
            }
        }
    }

    #[test]
    fn stitched_ids_never_shared_across_classes(seed in any::<u64>()) {
        let spec = common::labels();
        let (pred, gt) = common::random_pair(seed, 5, 12);
        let maps: Vec<PanopticMap> = pred.maps().cloned().collect();
        let rs: Vec<PanopticMap> = gt.maps().cloned().collect();
        let pairs: Vec<PairPrediction> = (0..maps.len())
            .map(|t| if t + 1 < maps.len() {
                PairPrediction::new(maps[t].clone(), rs[t + 1].clone())
            } else {
                PairPrediction::last(maps[t].clone())
            })
            .collect();
        let out = stitch_sequence(&pairs, &spec, &StitchOptions::default()).unwrap();
        let mut owner: BTreeMap<u32, u16> = BTreeMap::new();
        for m in &out {
            m.validate(&spec).unwrap();
            for (c, i) in m.semantic().iter().zip(m.instance()) {
                if *i > 0 {
                    let prev = *owner.entry(*i).or_insert(*c);
                    prop_assert_eq!(prev, *c, "id {} used by classes {} and {}", i, prev, c);
                }
            }
        }
    }

    #[test]
    fn scenes_are_deterministic(seed in any::<u64>()) {
        let spec = common::labels();
        let cfg = SceneConfig::random(seed);
        prop_assert_eq!(generate_scene(&cfg, &spec).unwrap(), generate_scene(&cfg, &spec).unwrap());
    }
}
