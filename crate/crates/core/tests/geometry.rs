use nalgebra::{Matrix3, Rotation3, Vector3};
use palpbench_core::calibration::{fit_similarity, Correspondence, CorrespondenceSet};
use palpbench_core::scan::{build_probability_map, path_length, polyline_plan, raster_plan, resample_polyline, spoke_plan, PixelMapper, RoiPolygon, SpokeParams};
use palpbench_core::sim::TravelLimits;
use palpbench_core::{Intrinsics, SimilarityTransform};
use proptest::prelude::*;

fn transform(s: f64, roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> SimilarityTransform {
    let r: Matrix3<f64> = *Rotation3::from_euler_angles(roll, pitch, yaw).matrix();
    SimilarityTransform::new(s, r, Vector3::from(t)).unwrap()
}

fn cloud(n: usize, salt: u64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let h = |k: u64| (((i as u64 * 2654435761 + k * 40503 + salt) % 1000) as f64) / 10.0;
            [h(1), h(2), 300.0 + h(3)]
        })
        .collect()
}

proptest! {
    #[test]
    fn fit_recovers_any_similarity(s in 0.5f64..2.0, roll in -3.0f64..3.0, pitch in -1.5f64..1.5, yaw in -3.0f64..3.0,
                                   tx in -500.0f64..500.0, salt in 0u64..1000) {
        let truth = transform(s, roll, pitch, yaw, [tx, -tx / 2.0, 17.0]);
        let pairs = cloud(12, salt).into_iter().map(|c| Correspondence { camera: c, stage: truth.apply(c) }).collect();
        let fit = fit_similarity(&CorrespondenceSet { pairs, z_levels: vec![] }).unwrap();
        prop_assert!(fit.transform.max_abs_diff(&truth) < 1e-8);
        prop_assert!(fit.stats.max < 1e-8);
    }

    #[test]
    fn fit_is_equivariant_under_stage_motion(salt in 0u64..1000, yaw in -3.0f64..3.0, s in 0.5f64..2.0) {
        let truth = transform(0.98, 0.1, -0.2, 3.19, [100.0, 100.0, 450.0]);
        let g = transform(s, 0.0, 0.0, yaw, [5.0, -7.0, 2.0]);
        let pts = cloud(10, salt);
        let noisy: Vec<Correspondence> = pts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut st = truth.apply(c);
                st[i % 3] += if i % 2 == 0 { 0.3 } else { -0.3 };
                Correspondence { camera: c, stage: st }
            })
            .collect();
        let moved: Vec<Correspondence> = noisy.iter().map(|p| Correspondence { camera: p.camera, stage: g.apply(p.stage) }).collect();
        let mut rev = noisy.clone();
        rev.reverse();
        let a = fit_similarity(&CorrespondenceSet { pairs: noisy, z_levels: vec![] }).unwrap();
        let b = fit_similarity(&CorrespondenceSet { pairs: moved, z_levels: vec![] }).unwrap();
        let c = fit_similarity(&CorrespondenceSet { pairs: rev, z_levels: vec![] }).unwrap();
        prop_assert!(g.compose(&a.transform).max_abs_diff(&b.transform) < 1e-7);
        prop_assert!(a.transform.max_abs_diff(&c.transform) < 1e-9);
        prop_assert!((b.stats.mean - s * a.stats.mean).abs() < 1e-7);
    }

    #[test]
    fn serpentine_never_travels_more_than_row_major(nx in 1usize..12, ny in 1usize..12, step in 0.5f64..3.0) {
        let plan = raster_plan([10.0, 10.0], nx, ny, step, &TravelLimits::default()).unwrap();
        prop_assert_eq!(plan.points.len(), nx * ny);
        let row_major: Vec<[f64; 2]> = (0..ny)
            .flat_map(|r| (0..nx).map(move |c| [10.0 + c as f64 * step, 10.0 + r as f64 * step]))
            .collect();
        prop_assert!(plan.travel() <= path_length(&row_major) + 1e-9);
        let mut a = plan.points.clone();
        let mut b = row_major;
        let key = |p: &[f64; 2]| ((p[1] * 1e6) as i64, (p[0] * 1e6) as i64);
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn polyline_samples_are_evenly_spaced(len_a in 1.0f64..30.0, len_b in 1.0f64..30.0, spacing in 0.3f64..5.0) {
        let verts = [[0.0, 0.0], [len_a, 0.0], [len_a, len_b]];
        let (pts, delta) = resample_polyline(&verts, spacing).unwrap();
        let total = len_a + len_b;
        prop_assert!((delta - spacing).abs() <= spacing / 2.0 + 1e-9);
        prop_assert!((delta * (pts.len() - 1) as f64 - total).abs() < 1e-9);
        prop_assert_eq!(pts[0], verts[0]);
        let last = pts[pts.len() - 1];
        prop_assert!((last[0] - len_a).abs() < 1e-9 && (last[1] - len_b).abs() < 1e-9);
    }

    #[test]
    fn probability_map_is_a_convex_combination(vals in proptest::collection::vec(0.01f64..1.0, 9)) {
        let plan = raster_plan([50.0, 50.0], 3, 3, 2.0, &TravelLimits::default()).unwrap();
        let probs: Vec<Option<Vec<f64>>> = vals.iter().map(|&v| Some(vec![v, 1.0 - v])).collect();
        let map = build_probability_map(&plan, &probs, vec!["a".into(), "b".into()], 0.5).unwrap();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(0.0, f64::max);
        let mut covered = 0;
        for r in 0..map.grid.height {
            for c in 0..map.grid.width {
                if let (Some(a), Some(b)) = (map.value(0, r, c), map.value(1, r, c)) {
                    covered += 1;
                    prop_assert!((a + b - 1.0).abs() < 1e-9);
                    prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
                }
            }
        }
        prop_assert!(covered > 0);
    }
}

fn flat_mapper<'a>(t: &'a SimilarityTransform, depth: &'a dyn Fn(f64, f64) -> Option<f64>) -> PixelMapper<'a> {
    PixelMapper {
        intrinsics: Intrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 },
        transform: t,
        depth,
    }
}

#[test]
fn spoke_count_matches_radius_over_step() {
    let t = SimilarityTransform::identity();
    let depth = |_: f64, _: f64| Some(1.0);
    let mapper = flat_mapper(&t, &depth);
    let roi = RoiPolygon::new(vec![[60.0, 60.0], [140.0, 60.0], [140.0, 140.0], [60.0, 140.0]]).unwrap();
    for (n, step, r) in [(8, 1.0, 10.0), (6, 0.7, 5.0), (3, 2.5, 10.0), (1, 1.0, 1.0)] {
        let plan = spoke_plan(&roi, &mapper, SpokeParams { n_spokes: n, step, max_radius: r }, &TravelLimits::default()).unwrap();
        assert_eq!(plan.points.len(), 1 + n * (r / step + 1e-9).floor() as usize, "{n} {step} {r}");
        assert_eq!(plan.points[0], [100.0, 100.0]);
        for p in &plan.points {
            assert!(((p[0] - 100.0).hypot(p[1] - 100.0)) <= r + 1e-9);
        }
    }
}

#[test]
fn spokes_stop_one_step_past_a_small_roi() {
    let t = SimilarityTransform::identity();
    let depth = |_: f64, _: f64| Some(1.0);
    let mapper = flat_mapper(&t, &depth);
    let roi = RoiPolygon::new(vec![[97.0, 97.0], [103.0, 97.0], [103.0, 103.0], [97.0, 103.0]]).unwrap();
    let plan = spoke_plan(&roi, &mapper, SpokeParams::default(), &TravelLimits::default()).unwrap();
    let max_r = plan.points.iter().map(|p| (p[0] - 100.0).hypot(p[1] - 100.0)).fold(0.0, f64::max);
    // corner exit is 3·√2 ≈ 4.24, so the last ring is 5
    assert!((max_r - 5.0).abs() < 1e-9, "{max_r}");
}

#[test]
fn polyline_plan_maps_pixels_through_the_transform() {
    let t = transform(2.0, 0.0, 0.0, 0.0, [10.0, 20.0, 0.0]);
    let depth = |_: f64, _: f64| Some(1.0);
    let mapper = flat_mapper(&t, &depth);
    let plan = polyline_plan(&[[0.0, 0.0], [10.0, 0.0]], &mapper, 4.0, &TravelLimits::default()).unwrap();
    assert_eq!(plan.points.first(), Some(&[10.0, 20.0]));
    assert_eq!(plan.points.last(), Some(&[30.0, 20.0]));
    assert!((plan.spacing() - 4.0).abs() <= 2.0);
    assert!(polyline_plan(&[[0.0, 0.0], [200.0, 0.0]], &mapper, 4.0, &TravelLimits::default()).is_err());
}
