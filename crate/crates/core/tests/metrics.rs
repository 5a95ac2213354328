mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recon_eval::metrics2d::{
    lpips_distance, normalize_features, psnr, pseudo_features, read_fstk, ssim, write_fstk,
    FeatureLayer, FeatureStack, ImageBuffer, SsimParams,
};
use recon_eval::metrics3d::{classify, f_score, fidelity, log_thresholds, pr_curve};
use recon_eval::registration::apply_transform;
use recon_eval::{Point3, PointCloud, Rgb, SimilarityTransform};

use common::*;

proptest! {
    #[test]
    fn f_score_between_min_and_mean(p in 0.0f64..=100.0, r in 0.0f64..=100.0) {
        let f = f_score(p, r);
        prop_assert!(f >= p.min(r) - 1e-12);
        prop_assert!(f <= (p + r) / 2.0 + 1e-12);
    }

    #[test]
    fn metrics_invariant_under_rigid_motion(seed in any::<u64>(), d in 0.005f64..0.05) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recon = random_cloud(&mut rng, 200, 0.2);
        let truth = random_cloud(&mut rng, 150, 0.2);
        let motion = SimilarityTransform::rigid(
            *random_rotation(&mut rng, 180.0).matrix(),
            random_translation(&mut rng, 5.0),
        ).unwrap();
        let before = fidelity(&recon, &truth, d).unwrap();
        let after = fidelity(&apply_transform(&recon, &motion), &apply_transform(&truth, &motion), d).unwrap();
        // Distances within rounding of d may flip; allow one point's worth.
        prop_assert!((before.precision - after.precision).abs() <= 100.0 / 200.0 + 1e-9);
        prop_assert!((before.recall - after.recall).abs() <= 100.0 / 150.0 + 1e-9);
    }
}

#[test]
fn metrics_exactly_invariant_away_from_the_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let recon = random_cloud(&mut rng, 200, 0.2);
        let truth = random_cloud(&mut rng, 150, 0.2);
        let d = rng.random_range(0.005..0.05);
        let margin = |from: &PointCloud, to: &PointCloud| {
            from.points().iter().map(|q| (brute_nn(q, to.points()) - d).abs()).fold(f64::INFINITY, f64::min)
        };
        if margin(&recon, &truth) < 1e-9 || margin(&truth, &recon) < 1e-9 {
            continue;
        }
        let motion = SimilarityTransform::rigid(
            *random_rotation(&mut rng, 180.0).matrix(),
            random_translation(&mut rng, 5.0),
        )
        .unwrap();
        let a = fidelity(&recon, &truth, d).unwrap();
        let b = fidelity(&apply_transform(&recon, &motion), &apply_transform(&truth, &motion), d).unwrap();
        assert!((a.precision - b.precision).abs() <= 1e-9);
        assert!((a.recall - b.recall).abs() <= 1e-9);
        assert!((a.f_score - b.f_score).abs() <= 1e-9);
    }
}

#[test]
fn brute_force_at_d_point_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let recon = random_cloud(&mut rng, 100, 1.0);
    let truth = random_cloud(&mut rng, 100, 1.0);
    let s = fidelity(&recon, &truth, 0.1).unwrap();
    assert_eq!(s.precision, brute_fraction(recon.points(), truth.points(), 0.1));
    assert_eq!(s.recall, brute_fraction(truth.points(), recon.points(), 0.1));
}

#[test]
fn pr_curve_matches_single_thresholds_and_csv() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let recon = random_cloud(&mut rng, 300, 0.3);
    let truth = random_cloud(&mut rng, 250, 0.3);
    let mut thresholds: Vec<f64> = (0..20).map(|_| rng.random_range(1e-3..0.1)).collect();
    thresholds.sort_by(f64::total_cmp);
    let curve = pr_curve(&recon, &truth, &thresholds).unwrap();
    for (i, &d) in thresholds.iter().enumerate() {
        let s = fidelity(&recon, &truth, d).unwrap();
        assert_eq!((curve.precisions[i], curve.recalls[i]), (s.precision, s.recall));
    }
    let mut csv = Vec::new();
    curve.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("threshold,precision,recall"));
    assert_eq!(lines.count(), 20);
    assert!(pr_curve(&recon, &truth, &[0.1, 0.05]).is_err());
    let grid = log_thresholds(1e-4, 1e-1, 100);
    assert!((grid[0] - 1e-4).abs() < 1e-18 && (grid[99] - 1e-1).abs() < 1e-15);
}

#[test]
fn single_far_point_is_the_only_outlier() {
    let mut pts: Vec<Point3> = (0..100).map(|i| Point3::new(i as f64 * 0.01, 0.0, 0.0)).collect();
    let truth = PointCloud::from_points(pts.clone()).unwrap();
    pts.push(Point3::new(0.0, 5.0, 0.0));
    let recon = PointCloud::from_points(pts).unwrap();

    // Distances: 100 zeros and one of 5.0; σ by hand.
    let mean = 5.0 / 101.0;
    let sigma = ((100.0 * mean * mean + (5.0 - mean) * (5.0 - mean)) / 101.0f64).sqrt();
    assert!(5.0 > 3.0 * sigma);

    let c = classify(&recon, &truth, 0.005).unwrap();
    assert_eq!((c.counts.correct, c.counts.missing, c.counts.outlier), (100, 0, 1));
    let colors = c.cloud.colors().unwrap();
    assert_eq!(colors[100], Rgb::BLACK);
    assert!(colors[..100].iter().all(|&x| x == Rgb::GREY));
}

fn image<R: Rng>(rng: &mut R, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::gray(w, h, (0..w * h).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn psnr_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let base = image(&mut rng, 32, 32);
    let offsets: Vec<f64> = (0..base.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for step in 1..=10 {
        let amp = 0.03 * step as f64;
        let noisy: Vec<f64> = base
            .data()
            .iter()
            .zip(&offsets)
            .map(|(v, o)| (v + amp * o).clamp(0.0, 1.0))
            .collect();
        let p = psnr(&base, &ImageBuffer::gray(32, 32, noisy).unwrap(), 1.0).unwrap();
        assert!(p < last, "psnr {p} not below {last}");
        last = p;
    }
}

#[test]
fn ssim_is_symmetric_and_one_on_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..10 {
        let a = image(&mut rng, 20, 17);
        let b = image(&mut rng, 20, 17);
        let p = SsimParams::default();
        assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() <= 1e-12);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() <= 1e-12);
    }
}

fn stack_strategy(uniform: bool) -> impl Strategy<Value = (FeatureStack, FeatureStack)> {
    let layer = (1usize..4, 1usize..4, 1usize..6).prop_flat_map(move |(h, w, c)| {
        let n = h * w * c;
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, c),
        )
            .prop_map(move |(a, b, wts)| {
                let wts = if uniform { FeatureLayer::uniform_weights(c) } else { wts };
                (
                    FeatureLayer::new(h, w, c, a, wts.clone()).unwrap(),
                    FeatureLayer::new(h, w, c, b, wts).unwrap(),
                )
            })
    });
    prop::collection::vec(layer, 1..4).prop_map(|layers| {
        let (a, b) = layers.into_iter().unzip();
        (FeatureStack { layers: a }, FeatureStack { layers: b })
    })
}

proptest! {
    #[test]
    fn lpips_symmetric_and_nonnegative((a, b) in stack_strategy(false)) {
        let (na, nb) = (normalize_features(&a), normalize_features(&b));
        let ab = lpips_distance(&na, &nb).unwrap();
        let ba = lpips_distance(&nb, &na).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(lpips_distance(&na, &na).unwrap(), 0.0);
        if na != nb {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn lpips_bounded_by_four_per_layer((a, b) in stack_strategy(true)) {
        let d = lpips_distance(&normalize_features(&a), &normalize_features(&b)).unwrap();
        prop_assert!(d <= 4.0 * a.layers.len() as f64 + 1e-12);
    }

    #[test]
    fn normalized_sites_are_unit((a, _) in stack_strategy(false)) {
        for layer in normalize_features(&a).layers {
            for site in layer.sites() {
                let n = site.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fstk_round_trip_preserves_f32_values((a, _) in stack_strategy(false)) {
        let as_f32 = FeatureStack {
            layers: a.layers.iter().map(|l| FeatureLayer {
                data: l.data.iter().map(|v| *v as f32 as f64).collect(),
                weights: l.weights.iter().map(|v| *v as f32 as f64).collect(),
                ..l.clone()
            }).collect(),
        };
        let mut bytes = Vec::new();
        write_fstk(&as_f32, &mut bytes).unwrap();
        prop_assert_eq!(read_fstk(&bytes[..]).unwrap(), as_f32);
    }
}

#[test]
fn pseudo_features_grow_with_distortion() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let base = image(&mut rng, 32, 32);
    let fa = pseudo_features(&base, 3).unwrap();
    assert_eq!(lpips_distance(&fa, &fa).unwrap(), 0.0);
    let blur = |img: &ImageBuffer, r: usize| {
        let (w, h) = (img.width(), img.height());
        let d = img.data();
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        s += d[yy * w + xx];
                        n += 1.0;
                    }
                }
                out[y * w + x] = s / n;
            }
        }
        ImageBuffer::gray(w, h, out).unwrap()
    };
    let mild = lpips_distance(&fa, &pseudo_features(&blur(&base, 1), 3).unwrap()).unwrap();
    let strong = lpips_distance(&fa, &pseudo_features(&blur(&base, 4), 3).unwrap()).unwrap();
    assert!(mild > 0.0 && strong > mild, "{mild} vs {strong}");
    assert!(pseudo_features(&image(&mut rng, 3, 3), 3).is_err());
}
