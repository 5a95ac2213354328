#![allow(dead_code)]

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use recon_eval::{Point3, PointCloud};

pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, extent: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                rng.random::<f64>() * extent,
                rng.random::<f64>() * extent,
                rng.random::<f64>() * extent,
            )
        })
        .collect();
    PointCloud::from_points(pts).unwrap()
}

/// Stem cylinder plus a handful of curved, tilted leaf blades, base at z = 0.
pub fn plant_points<R: Rng>(rng: &mut R, n: usize, height: f64) -> Vec<Point3> {
    let stem_n = n / 4;
    let leaves = 7;
    let mut pts = Vec::with_capacity(n);
    let stem_r = 0.006;
    for _ in 0..stem_n {
        let th = rng.random::<f64>() * std::f64::consts::TAU;
        let z = rng.random::<f64>() * height;
        pts.push(Point3::new(stem_r * th.cos(), stem_r * th.sin(), z));
    }
    let per_leaf = (n - stem_n) / leaves;
    for l in 0..leaves {
        let base_z = height * (0.2 + 0.75 * l as f64 / leaves as f64);
        let azimuth = l as f64 * 2.4;
        let length = 0.12 + 0.03 * (l % 3) as f64;
        let (ca, sa) = (azimuth.cos(), azimuth.sin());
        let count = if l == leaves - 1 { n - pts.len() } else { per_leaf };
        for _ in 0..count {
            let u: f64 = rng.random();
            let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let half_width = 0.025 * (std::f64::consts::PI * u).sin();
            let along = stem_r + u * length;
            let across = v * half_width;
            let droop = 0.25 * along - 0.9 * along * along + 0.01 * v * v;
            pts.push(Point3::new(
                along * ca - across * sa,
                along * sa + across * ca,
                base_z + droop,
            ));
        }
    }
    pts
}

pub fn random_rotation<R: Rng>(rng: &mut R, max_deg: f64) -> Rotation3<f64> {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random::<f64>() * max_deg.to_radians();
    Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle)
}

pub fn random_translation<R: Rng>(rng: &mut R, max_norm: f64) -> Vector3<f64> {
    let dir: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(dir) * rng.random::<f64>() * max_norm
}

/// Fibonacci-lattice samples on a sphere, with isotropic Gaussian noise.
pub fn sphere_points<R: Rng>(rng: &mut R, center: Point3, r: f64, n: usize, noise: f64) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).unwrap());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rad = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            let mut p = center + Vector3::new(rad * th.cos(), rad * th.sin(), y) * r;
            if let Some(normal) = &normal {
                p += Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
            }
            p
        })
        .collect()
}

/// Brute-force nearest distance.
pub fn brute_nn(q: &Point3, pts: &[Point3]) -> f64 {
    pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

/// Percentage of `from` points whose brute-force nearest distance to `to` is below `d`.
pub fn brute_fraction(from: &[Point3], to: &[Point3], d: f64) -> f64 {
    let hits = from.iter().filter(|q| brute_nn(q, to) < d).count();
    100.0 * hits as f64 / from.len() as f64
}
