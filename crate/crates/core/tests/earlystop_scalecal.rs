mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recon_eval::earlystop::{
    average_series, detect_plateau, early_stop_report, interpolate_series, MetricSeries, Origin,
    PlateauConfig, PlateauStatus,
};
use recon_eval::registration::apply_transform;
use recon_eval::scalecal::{estimate_scale, fit_sphere, measure_height, SphereFit, UpAxis};
use recon_eval::{Point3, PointCloud, SimilarityTransform};

use common::*;

fn series(values: &[f64]) -> MetricSeries {
    MetricSeries::from_pairs(values.iter().enumerate().map(|(i, v)| (1000 * (i as u64 + 1), *v))).unwrap()
}

fn cfg(theta: f64, c: usize) -> PlateauConfig {
    PlateauConfig {
        theta,
        consistency_len: c,
        ..PlateauConfig::default()
    }
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.02f64..0.02, 1..80).prop_map(|steps| {
        let mut v = 1.0;
        steps.into_iter().map(|s| { v += s; v }).collect()
    })
}

proptest! {
    #[test]
    fn larger_theta_never_plateaus_later(v in values(), t1 in 1e-4f64..0.02, t2 in 1e-4f64..0.02, c in 2usize..8) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let s = series(&v);
        let a = detect_plateau(&s, &cfg(lo, c)).unwrap();
        let b = detect_plateau(&s, &cfg(hi, c)).unwrap();
        prop_assert!(b.index <= a.index);
    }

    #[test]
    fn appending_after_plateau_keeps_index(v in values(), extra in prop::collection::vec(-1.0f64..1.0, 1..20), c in 2usize..8) {
        let s = series(&v);
        let first = detect_plateau(&s, &cfg(0.01, c)).unwrap();
        prop_assume!(first.status == PlateauStatus::Plateau);
        let mut longer = v.clone();
        longer.extend(extra);
        let second = detect_plateau(&series(&longer), &cfg(0.01, c)).unwrap();
        prop_assert_eq!(second.index, first.index);
        prop_assert_eq!(second.status, PlateauStatus::Plateau);
    }

    #[test]
    fn constant_series_plateaus_at_c_minus_one(value in -5.0f64..5.0, len in 2usize..50, c in 2usize..12) {
        prop_assume!(len >= c);
        let r = detect_plateau(&series(&vec![value; len]), &cfg(0.005, c)).unwrap();
        prop_assert_eq!((r.index, r.status), (c - 1, PlateauStatus::Plateau));
    }

    #[test]
    fn interpolation_exact_on_affine(a in -1.0f64..1.0, b in -1e-4f64..1e-4, its in prop::collection::btree_set(0u64..60_000, 2..12)) {
        let its: Vec<u64> = its.into_iter().collect();
        let s = MetricSeries::from_pairs(its.iter().map(|&i| (i, a + b * i as f64))).unwrap();
        match interpolate_series(&s, 1000, 60_000) {
            Ok(grid) => {
                for x in grid.samples() {
                    prop_assert_eq!(x.iteration % 1000, 0);
                    let want = a + b * x.iteration as f64;
                    prop_assert!((x.value - want).abs() <= 1e-12, "{} vs {}", x.value, want);
                    prop_assert_eq!(x.origin == Origin::Original, its.contains(&x.iteration));
                }
            }
            Err(_) => prop_assert!(its[0].div_ceil(1000) * 1000 > *its.last().unwrap()),
        }
    }

    #[test]
    fn interpolated_values_stay_within_brackets(steps in prop::collection::vec(0.0f64..0.3, 2..10), gaps in prop::collection::vec(1u64..9000, 10)) {
        let mut it = 500u64;
        let mut v = 1.0;
        let mut pairs = Vec::new();
        for (s, g) in steps.iter().zip(gaps.iter().cycle()) {
            pairs.push((it, v));
            it += g;
            v -= s;
        }
        let raw = MetricSeries::from_pairs(pairs.clone()).unwrap();
        if let Ok(grid) = interpolate_series(&raw, 1000, 60_000) {
            for x in grid.samples() {
                let k = pairs.iter().rposition(|p| p.0 <= x.iteration).unwrap();
                let hi = pairs[k].1;
                let lo = pairs.get(k + 1).map_or(hi, |p| p.1);
                prop_assert!(x.value <= hi + 1e-15 && x.value >= lo - 1e-15);
            }
        }
    }

    #[test]
    fn report_fraction_matches_arithmetic(stop_k in 1u64..60, c in 2usize..6) {
        // Steep descent, then flat from grid point stop_k onward.
        let n = 60usize;
        let values: Vec<f64> = (1..=n as u64).map(|k| if k <= stop_k { 1.0 - 0.1 * k as f64 } else { 1.0 - 0.1 * stop_k as f64 }).collect();
        let s = series(&values);
        let r = early_stop_report(&s, &cfg(0.005, c), 60_000).unwrap();
        let plateau_k = stop_k + c as u64 - 1;
        if plateau_k <= n as u64 {
            prop_assert_eq!(r.stop_iteration, 1000 * plateau_k);
        }
        let expected = 1.0 - r.stop_iteration as f64 / 60_000.0;
        prop_assert_eq!(r.time_saved_fraction, expected);
    }

    #[test]
    fn averaging_matches_naive_sum(groups in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..20), 1..10)) {
        let checkpoints: Vec<(u64, Vec<f64>)> = groups.iter().enumerate().map(|(i, g)| (i as u64 * 100, g.clone())).collect();
        let s = average_series(&checkpoints).unwrap();
        for (sample, g) in s.samples().iter().zip(&groups) {
            let mut sum = 0.0;
            for v in g {
                sum += v;
            }
            prop_assert!((sample.value - sum / g.len() as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn worked_example_matches_trace() {
    let m = [1.00, 0.80, 0.60, 0.598, 0.597, 0.5965, 0.5962];
    let r = detect_plateau(&series(&m), &cfg(0.005, 4)).unwrap();
    // Diffs: .2 .2 .002 .001 .0005 .0003 -> the first three small ones end at index 5.
    assert_eq!((r.index, r.status), (5, PlateauStatus::Plateau));
    assert_eq!(r.iteration, 6000);
    let short = detect_plateau(&series(&m[..3]), &cfg(0.005, 6)).unwrap();
    assert_eq!((short.index, short.status), (0, PlateauStatus::Insufficient));
}

proptest! {
    #[test]
    fn sphere_fit_exact_on_clean_samples(
        c in prop::array::uniform3(-5.0f64..5.0),
        r in 0.01f64..3.0,
        off in prop::array::uniform3(-0.2f64..0.2),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let center = Point3::from(c);
        let pts = sphere_points(&mut rng, center, r, 200, 0.0);
        let seed = center + nalgebra::Vector3::from(off) * r;
        let fit = fit_sphere(&pts, seed, r * 0.8).unwrap();
        prop_assert!((fit.radius - r).abs() < 1e-9 * (1.0 + r));
        prop_assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn scale_of_scaled_radii_is_reciprocal(k in 0.01f64..100.0, radii in prop::collection::vec(0.01f64..1.0, 1..5)) {
        let fits: Vec<SphereFit> = radii.iter().map(|r| SphereFit {
            center: Point3::origin(),
            radius: k * r,
            rms_residual: 0.0,
            inlier_count: 100,
        }).collect();
        let est = estimate_scale(&fits, &radii).unwrap();
        prop_assert!((est.factor * k - 1.0).abs() < 1e-12);
        prop_assert!(est.spread >= 1.0 && est.spread < 1.0 + 1e-12);
    }

    #[test]
    fn height_ignores_horizontal_shift(dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = PointCloud::from_points(plant_points(&mut rng, 2000, 0.772)).unwrap();
        let shifted = apply_transform(
            &cloud,
            &SimilarityTransform::rigid(nalgebra::Matrix3::identity(), nalgebra::Vector3::new(dx, dy, 0.0)).unwrap(),
        );
        let a = measure_height(&cloud, UpAxis::Z, 1.0).unwrap();
        let b = measure_height(&shifted, UpAxis::Z, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn noisy_sphere_radius_within_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let center = Point3::new(0.4, -0.1, 0.069);
    let pts = sphere_points(&mut rng, center, 0.069, 2000, 1e-4);
    let fit = fit_sphere(&pts, center + nalgebra::Vector3::new(0.01, 0.0, 0.01), 0.05).unwrap();
    assert!((fit.radius - 0.069).abs() < 3e-4, "radius {}", fit.radius);
}

#[test]
fn rescaled_spheres_match_known_radii() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let known = [0.0690, 0.0686, 0.0692];
    let k = 1.7;
    let centers = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
    let clouds: Vec<Vec<Point3>> = centers
        .iter()
        .zip(known)
        .map(|(c, r)| sphere_points(&mut rng, Point3::from(c.coords * k), r * k, 800, 5e-5))
        .collect();
    let fits: Vec<SphereFit> = clouds
        .iter()
        .map(|pts| {
            let seed = Point3::from(pts.iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / pts.len() as f64);
            fit_sphere(pts, seed, 0.1).unwrap()
        })
        .collect();
    let est = estimate_scale(&fits, &known).unwrap();
    let scale = SimilarityTransform::from_scale(est.factor).unwrap();
    for ((pts, fit), r) in clouds.iter().zip(&fits).zip(known) {
        let moved: Vec<Point3> = pts.iter().map(|p| scale.apply(p)).collect();
        let refit = fit_sphere(&moved, scale.apply(&fit.center), fit.radius * est.factor).unwrap();
        let ratio = refit.radius / r;
        assert!(ratio <= est.spread && 1.0 / ratio <= est.spread, "ratio {ratio}, spread {}", est.spread);
    }
}
